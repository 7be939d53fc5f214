use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward_step, softmax, ModelParams, ModelState};

use super::{
    assemble_features, mask_and_renormalize, select_action, ActionKind, ActionMask, Dialog,
    DialogState, DomainHooks, EndReason, EntityMention, SelectionMode, TurnRecord,
};

/// Guard against runaway policies during exploration.
pub const DEFAULT_MAX_TURNS: usize = 20;

/// Consecutive API actions allowed before control returns to the user.
pub const MAX_API_CHAIN: usize = 4;

/// Chooses an action at each decision point.
pub trait Controller<S> {
    /// Recurrent state to start a dialog with.
    fn initial_model_state(&self) -> ModelState {
        ModelState::default()
    }

    /// Returns the masked distribution and the chosen action.
    fn decide(
        &mut self,
        features: &[f64],
        mask: &ActionMask,
        state: &mut DialogState<S>,
    ) -> Result<(Vec<f64>, usize)>;
}

/// Drives decisions with a policy network.
pub struct ModelController<'a, R> {
    pub params: &'a ModelParams,
    pub mode: SelectionMode,
    pub rng: R,
}

impl<'a, R: Rng> ModelController<'a, R> {
    pub fn new(params: &'a ModelParams, mode: SelectionMode, rng: R) -> Self {
        ModelController { params, mode, rng }
    }
}

impl<S, R: Rng> Controller<S> for ModelController<'_, R> {
    fn initial_model_state(&self) -> ModelState {
        ModelState::initial(self.params)
    }

    fn decide(
        &mut self,
        features: &[f64],
        mask: &ActionMask,
        state: &mut DialogState<S>,
    ) -> Result<(Vec<f64>, usize)> {
        let (next, logits) = forward_step(self.params, &state.model_state, features)?;
        state.model_state = next;
        let dist = mask_and_renormalize(&softmax(&logits), mask)?;
        let action = select_action(&dist, self.mode, &mut self.rng);
        Ok((dist, action))
    }
}

/// Plays back a fixed list of actions; used to replay corpus dialogs.
#[derive(Clone, Debug, Default)]
pub struct ForcedController {
    queue: VecDeque<usize>,
    n_actions: usize,
    dialog: usize,
    step: usize,
}

impl ForcedController {
    pub fn new(actions: impl IntoIterator<Item = usize>, n_actions: usize) -> Self {
        ForcedController {
            queue: actions.into_iter().collect(),
            n_actions,
            dialog: 0,
            step: 0,
        }
    }

    /// Position reported in errors: corpus dialog index and step of the first forced action.
    pub fn at(mut self, dialog: usize, step: usize) -> Self {
        self.dialog = dialog;
        self.step = step;
        self
    }

    pub fn push(&mut self, action: usize) {
        self.queue.push_back(action);
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl<S> Controller<S> for ForcedController {
    fn decide(
        &mut self,
        _features: &[f64],
        mask: &ActionMask,
        _state: &mut DialogState<S>,
    ) -> Result<(Vec<f64>, usize)> {
        let action = self
            .queue
            .pop_front()
            .ok_or_else(|| Error::InvalidArgument("forced controller ran out of actions".into()))?;
        if !mask.allowed(action) {
            return Err(Error::MaskedCorpusAction {
                dialog: self.dialog,
                step: self.step,
                action: action.to_string(),
            });
        }
        self.step += 1;
        let mut dist = vec![0.0; self.n_actions];
        dist[action] = 1.0;
        Ok((dist, action))
    }
}

/// What the engine did in response to one decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedAction {
    pub action: usize,
    pub name: String,
    pub kind: ActionKind,
    /// Rendered text; `None` for API actions.
    pub text: Option<String>,
    pub terminal: bool,
    pub distribution: Vec<f64>,
    pub mask: ActionMask,
}

/// Runs the operational loop for one domain.
pub struct Engine<D: DomainHooks> {
    domain: Arc<D>,
}

impl<D: DomainHooks> Clone for Engine<D> {
    fn clone(&self) -> Self {
        Engine {
            domain: Arc::clone(&self.domain),
        }
    }
}

impl<D: DomainHooks> Engine<D> {
    pub fn new(domain: Arc<D>) -> Self {
        Engine { domain }
    }

    pub fn domain(&self) -> &D {
        &self.domain
    }

    pub fn domain_arc(&self) -> Arc<D> {
        Arc::clone(&self.domain)
    }

    pub fn start(&self, model_state: ModelState) -> DialogState<D::Store> {
        DialogState::new(model_state, self.domain.api_feature_dim())
    }

    /// One user input: extraction, then decisions until a text or terminal
    /// action is executed.
    pub fn run_turn<C: Controller<D::Store> + ?Sized>(
        &self,
        state: &mut DialogState<D::Store>,
        controller: &mut C,
        user_text: &str,
        records: &mut Vec<TurnRecord>,
    ) -> Result<Vec<ExecutedAction>> {
        let mentions = self.domain.gazetteer().extract(user_text);
        self.run_turn_with_mentions(state, controller, user_text, &mentions, records)
    }

    /// As [`Engine::run_turn`], with mentions supplied by the caller (corpus markup).
    pub fn run_turn_with_mentions<C: Controller<D::Store> + ?Sized>(
        &self,
        state: &mut DialogState<D::Store>,
        controller: &mut C,
        user_text: &str,
        mentions: &[EntityMention],
        records: &mut Vec<TurnRecord>,
    ) -> Result<Vec<ExecutedAction>> {
        if state.closed {
            return Err(Error::SessionClosed);
        }
        let domain = &*self.domain;
        state.store = domain.entity_input(mentions, &state.store)?;
        state.turn_index += 1;
        state.step_mentions = mentions.to_vec();
        let mut user_text = Some(user_text.to_string());
        let mut executed = Vec::new();

        for chain in 0.. {
            let (features, mask) = assemble_features(&state.step_mentions, domain, state)?;
            let (distribution, action) = controller.decide(&features, &mask, state)?;
            if !mask.allowed(action) {
                return Err(Error::InvalidArgument(format!(
                    "controller chose masked action {action}"
                )));
            }
            let template = domain
                .templates()
                .get(action)
                .cloned()
                .ok_or_else(|| Error::UnknownTemplate(action.to_string()))?;
            let mut record = TurnRecord {
                user_text: user_text.take(),
                mentions: std::mem::take(&mut state.step_mentions),
                features,
                mask: mask.clone(),
                behavior_prob: distribution[action],
                distribution: distribution.clone(),
                action,
                rendered: None,
            };
            state.prev_action = Some(action);
            state.pending_api = vec![0.0; domain.api_feature_dim()];

            let mut done = template.terminal;
            let text = match template.kind {
                ActionKind::Text => {
                    let text = domain.entity_output(&template, &state.store)?;
                    record.rendered = Some(text.clone());
                    done = true;
                    Some(text)
                }
                ActionKind::Api => {
                    let (store, api_features) = domain.api_call(&template, &state.store)?;
                    if api_features.len() != domain.api_feature_dim() {
                        return Err(Error::Domain {
                            hook: "api_call",
                            msg: format!(
                                "returned {} features, expected {}",
                                api_features.len(),
                                domain.api_feature_dim()
                            ),
                        });
                    }
                    state.store = store;
                    state.pending_api = api_features;
                    if chain + 1 >= MAX_API_CHAIN {
                        done = true;
                    }
                    None
                }
            };
            records.push(record);
            executed.push(ExecutedAction {
                action,
                name: template.name.clone(),
                kind: template.kind,
                text,
                terminal: template.terminal,
                distribution,
                mask,
            });
            if template.terminal {
                state.closed = true;
            }
            if done {
                break;
            }
        }
        Ok(executed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserResponse {
    Utterance(String),
    Silent,
    HangUp,
}

/// The other side of the conversation.
pub trait UserAgent<S> {
    /// Reply to the last text action of a turn.
    fn respond(&mut self, prompt: &ExecutedAction) -> Result<UserResponse>;

    /// Task-success verdict from the final store.
    fn judge(&self, store: &S) -> bool;
}

/// Alternates engine turns and user responses until a terminal action, a
/// hang-up, or `max_turns` user inputs (the silent opening counts as one).
pub fn run_dialog<D, C, U>(
    engine: &Engine<D>,
    controller: &mut C,
    user: &mut U,
    max_turns: usize,
) -> Result<(Dialog, D::Store)>
where
    D: DomainHooks,
    C: Controller<D::Store> + ?Sized,
    U: UserAgent<D::Store> + ?Sized,
{
    let mut dialog = Dialog {
        records: Vec::new(),
        terminal: false,
        end: None,
        success: false,
        user_turns: 0,
    };
    let mut state = engine.start(controller.initial_model_state());
    if max_turns == 0 {
        return Ok((dialog, state.store));
    }
    let mut input = String::new();
    loop {
        let actions = engine.run_turn(&mut state, controller, &input, &mut dialog.records)?;
        dialog.user_turns += 1;
        if state.closed {
            dialog.terminal = true;
            dialog.end = Some(EndReason::TerminalAction);
            break;
        }
        if dialog.user_turns >= max_turns {
            dialog.end = Some(EndReason::MaxTurns);
            break;
        }
        let response = match actions.iter().rev().find(|a| a.kind == ActionKind::Text) {
            Some(prompt) => user.respond(prompt)?,
            None => UserResponse::Silent,
        };
        match response {
            UserResponse::Utterance(text) => input = text,
            UserResponse::Silent => input.clear(),
            UserResponse::HangUp => {
                dialog.end = Some(EndReason::UserHangUp);
                break;
            }
        }
    }
    dialog.success = user.judge(&state.store);
    Ok((dialog, state.store))
}

//! The operational loop: entity extraction, developer hooks, feature
//! assembly, masked action selection, entity substitution and API dispatch.

pub mod corpus;
mod engine;
mod entities;
mod select;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelState;

pub use engine::{
    run_dialog, Controller, Engine, ExecutedAction, ForcedController, ModelController, UserAgent,
    UserResponse, DEFAULT_MAX_TURNS, MAX_API_CHAIN,
};
pub use entities::{extract_entities, EntityMention, Gazetteer};
pub use select::{argmax, mask_and_renormalize, select_action, SelectionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Text,
    Api,
}

/// A system action with entity values abstracted into `<slot>` markers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub id: usize,
    /// Stable identifier used in corpus files (e.g. `ask_phonetype`, `PlaceCall`).
    pub name: String,
    pub kind: ActionKind,
    /// Text with slot markers, or the API name.
    pub pattern: String,
    /// Executing this action ends the dialog.
    pub terminal: bool,
}

impl ActionTemplate {
    /// Slot names referenced by the pattern, in order of appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.pattern.as_str();
        while let Some(open) = rest.find('<') {
            let after = &rest[open + 1..];
            match after.find('>') {
                Some(close) => {
                    out.push(&after[..close]);
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }
}

/// Per-step availability of each action template.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask(Vec<bool>);

impl ActionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        ActionMask(bits)
    }

    pub fn all(n: usize) -> Self {
        ActionMask(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn allowed(&self, action: usize) -> bool {
        self.0.get(action).copied().unwrap_or(false)
    }

    pub fn set(&mut self, action: usize, allowed: bool) {
        self.0[action] = allowed;
    }

    pub fn count_allowed(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

impl fmt::Display for ActionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Developer-provided code around the network.
///
/// The store is the domain's entity memory; the engine treats it as opaque.
pub trait DomainHooks: Send + Sync {
    type Store: Clone + Default + fmt::Debug + Send + Sync;

    fn templates(&self) -> &[ActionTemplate];

    /// Entity types the extractor can report; fixes the flag segment order.
    fn entity_types(&self) -> &[&'static str];

    fn gazetteer(&self) -> &Gazetteer;

    fn context_dim(&self) -> usize;

    fn api_feature_dim(&self) -> usize;

    fn entity_input(&self, mentions: &[EntityMention], store: &Self::Store) -> Result<Self::Store>;

    fn context_features(&self, store: &Self::Store) -> Vec<f64>;

    fn action_mask(&self, store: &Self::Store) -> ActionMask;

    /// Renders a text template with values from the store.
    fn entity_output(&self, template: &ActionTemplate, store: &Self::Store) -> Result<String>;

    /// Executes an API template; returns the new store and features for the next step.
    fn api_call(
        &self,
        template: &ActionTemplate,
        store: &Self::Store,
    ) -> Result<(Self::Store, Vec<f64>)>;

    fn n_actions(&self) -> usize {
        self.templates().len()
    }

    fn template_by_name(&self, name: &str) -> Option<&ActionTemplate> {
        self.templates().iter().find(|t| t.name == name)
    }

    fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            entity_types: self.entity_types().len(),
            context: self.context_dim(),
            actions: self.n_actions(),
            api: self.api_feature_dim(),
        }
    }
}

/// Segment sizes of the network input:
/// `[entity flags | context | previous action (A+1) | API features | mask (A)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub entity_types: usize,
    pub context: usize,
    pub actions: usize,
    pub api: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.entity_types + self.context + (self.actions + 1) + self.api + self.actions
    }

    pub fn context_offset(&self) -> usize {
        self.entity_types
    }

    pub fn prev_action_offset(&self) -> usize {
        self.entity_types + self.context
    }

    pub fn api_offset(&self) -> usize {
        self.prev_action_offset() + self.actions + 1
    }

    pub fn mask_offset(&self) -> usize {
        self.api_offset() + self.api
    }
}

/// Per-session memory of the engine.
#[derive(Clone, Debug)]
pub struct DialogState<S> {
    pub store: S,
    pub prev_action: Option<usize>,
    pub model_state: ModelState,
    /// Number of user inputs consumed so far (the opening counts).
    pub turn_index: usize,
    /// Features returned by the last API call, consumed by the next step.
    pub pending_api: Vec<f64>,
    /// Mentions not yet reflected in a feature vector.
    pub step_mentions: Vec<EntityMention>,
    pub closed: bool,
}

impl<S: Default> DialogState<S> {
    pub fn new(model_state: ModelState, api_dim: usize) -> Self {
        DialogState {
            store: S::default(),
            prev_action: None,
            model_state,
            turn_index: 0,
            pending_api: vec![0.0; api_dim],
            step_mentions: Vec::new(),
            closed: false,
        }
    }
}

/// Builds the feature vector for the next decision; also returns the mask it embeds.
pub fn assemble_features<D: DomainHooks + ?Sized>(
    mentions: &[EntityMention],
    hooks: &D,
    state: &DialogState<D::Store>,
) -> Result<(Vec<f64>, ActionMask)> {
    let layout = hooks.layout();
    let mut x = Vec::with_capacity(layout.dim());
    for ty in hooks.entity_types() {
        x.push(if mentions.iter().any(|m| m.entity_type == *ty) {
            1.0
        } else {
            0.0
        });
    }
    let ctx = hooks.context_features(&state.store);
    if ctx.len() != layout.context {
        return Err(Error::DimensionMismatch {
            what: "context features",
            expected: layout.context,
            got: ctx.len(),
        });
    }
    x.extend(ctx);
    let mut prev = vec![0.0; layout.actions + 1];
    match state.prev_action {
        Some(a) if a < layout.actions => prev[a] = 1.0,
        Some(a) => return Err(Error::UnknownTemplate(a.to_string())),
        None => prev[layout.actions] = 1.0,
    }
    x.extend(prev);
    if state.pending_api.len() != layout.api {
        return Err(Error::DimensionMismatch {
            what: "API features",
            expected: layout.api,
            got: state.pending_api.len(),
        });
    }
    x.extend_from_slice(&state.pending_api);
    let mask = hooks.action_mask(&state.store);
    if mask.len() != layout.actions {
        return Err(Error::DimensionMismatch {
            what: "action mask",
            expected: layout.actions,
            got: mask.len(),
        });
    }
    if mask.count_allowed() == 0 {
        return Err(Error::AllMasked);
    }
    x.extend(mask.iter().map(|b| if b { 1.0 } else { 0.0 }));
    debug_assert_eq!(x.len(), layout.dim());
    Ok((x, mask))
}

/// One policy decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// User input consumed by this decision: `Some("")` for a silent turn,
    /// `None` when the decision continues an API chain.
    pub user_text: Option<String>,
    pub mentions: Vec<EntityMention>,
    pub features: Vec<f64>,
    pub mask: ActionMask,
    /// Masked distribution the action was chosen from.
    pub distribution: Vec<f64>,
    pub action: usize,
    /// `distribution[action]` at the time of choice.
    pub behavior_prob: f64,
    /// Rendered text for text actions.
    pub rendered: Option<String>,
}

impl TurnRecord {
    /// User text with inline `<type>surface</type>` markup.
    pub fn annotated_text(&self) -> Option<String> {
        self.user_text
            .as_deref()
            .map(|t| annotate(t, &self.mentions))
    }
}

/// Inserts `<type>surface</type>` markup around each mention.
pub fn annotate(text: &str, mentions: &[EntityMention]) -> String {
    let mut sorted: Vec<&EntityMention> = mentions.iter().collect();
    sorted.sort_by_key(|m| m.start);
    let mut out = String::with_capacity(text.len() + 16 * mentions.len());
    let mut at = 0;
    for m in sorted {
        if m.start < at || m.start + m.surface.len() > text.len() {
            continue;
        }
        out.push_str(&text[at..m.start]);
        out.push_str(&format!("<{0}>{1}</{0}>", m.entity_type, m.surface));
        at = m.start + m.surface.len();
    }
    out.push_str(&text[at..]);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    TerminalAction,
    UserHangUp,
    MaxTurns,
}

/// A complete interaction: every decision in order plus how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub records: Vec<TurnRecord>,
    pub terminal: bool,
    pub end: Option<EndReason>,
    pub success: bool,
    pub user_turns: usize,
}

impl Dialog {
    pub fn actions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.action).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_parsed_in_order() {
        let t = ActionTemplate {
            id: 0,
            name: "announce".into(),
            kind: ActionKind::Text,
            pattern: "Calling <canonicalname>, <canonicalphonetype>".into(),
            terminal: false,
        };
        assert_eq!(t.slots(), vec!["canonicalname", "canonicalphonetype"]);
    }

    #[test]
    fn annotate_inserts_markup() {
        let m = vec![
            EntityMention {
                entity_type: "name".into(),
                surface: "Jason".into(),
                start: 5,
                resolved: None,
            },
            EntityMention {
                entity_type: "phonetype".into(),
                surface: "cell".into(),
                start: 18,
                resolved: None,
            },
        ];
        assert_eq!(
            annotate("Call Jason on his cell", &m),
            "Call <name>Jason</name> on his <phonetype>cell</phonetype>"
        );
    }

    #[test]
    fn layout_offsets() {
        let l = FeatureLayout {
            entity_types: 3,
            context: 9,
            actions: 14,
            api: 2,
        };
        assert_eq!(l.dim(), 3 + 9 + 15 + 2 + 14);
        assert_eq!(l.mask_offset(), 29);
    }
}

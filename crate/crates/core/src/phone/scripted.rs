use crate::dialog::{ActionMask, Controller, DialogState};
use crate::error::{Error, Result};

use super::actions::*;
use super::{PhoneDomain, PhoneStore};

/// Hand-written reference policy for the phone domain.
///
/// It reproduces every dialog of the bundled corpus and is used as an
/// upper reference when evaluating learned policies.
pub struct ScriptedPolicy<'a> {
    domain: &'a PhoneDomain,
    /// Last question asked other than `didnt_understand`.
    question: Option<usize>,
    unknown_names: usize,
}

impl<'a> ScriptedPolicy<'a> {
    pub fn new(domain: &'a PhoneDomain) -> Self {
        ScriptedPolicy {
            domain,
            question: None,
            unknown_names: 0,
        }
    }

    fn choose(&self, state: &DialogState<PhoneStore>) -> usize {
        let store = &state.store;
        let said = |ty: &str| state.step_mentions.iter().any(|m| m.entity_type == ty);
        match state.prev_action {
            None => return GREETING,
            Some(ANNOUNCE_CALL) => return PLACE_CALL,
            Some(SAVE_PHONETYPE) => return ANNOUNCE_CALL,
            _ => {}
        }
        if state.step_mentions.is_empty() {
            return if store.name.is_none() {
                REPROMPT
            } else {
                DIDNT_UNDERSTAND
            };
        }
        if said("yesno") && !said("name") && !said("phonetype") {
            let yes = store.yesno == Some(true);
            match self.question {
                Some(OFFER_SOLE_TYPE) => return if yes { SAVE_PHONETYPE } else { APOLOGY_GOODBYE },
                Some(CONFIRM_NAME) if !yes => return REPROMPT,
                Some(CONFIRM_NAME) if self.domain.type_count(store) == Some(1) => {
                    return SAVE_PHONETYPE
                }
                Some(CONFIRM_NAME) => return ASK_PHONETYPE,
                _ => {}
            }
        }
        if store.name.is_none() {
            return REPROMPT;
        }
        match store.matches.len() {
            0 if self.unknown_names >= 2 => GOODBYE,
            0 => UNKNOWN_NAME,
            1 => {
                let n_types = self.domain.type_count(store).unwrap_or(0);
                if store.committed.is_some() {
                    ANNOUNCE_CALL
                } else if store.requested.is_some() {
                    if n_types == 1 {
                        OFFER_SOLE_TYPE
                    } else {
                        OFFER_MULTI_TYPE
                    }
                } else if n_types == 1 {
                    if store.by_nickname {
                        CONFIRM_NAME
                    } else {
                        SAVE_PHONETYPE
                    }
                } else {
                    ASK_PHONETYPE
                }
            }
            _ => DISAMBIGUATE,
        }
    }
}

impl Controller<PhoneStore> for ScriptedPolicy<'_> {
    fn decide(
        &mut self,
        _features: &[f64],
        mask: &ActionMask,
        state: &mut DialogState<PhoneStore>,
    ) -> Result<(Vec<f64>, usize)> {
        let action = self.choose(state);
        if !mask.allowed(action) {
            return Err(Error::Domain {
                hook: "scripted policy",
                msg: format!("chose masked action {action}"),
            });
        }
        match action {
            UNKNOWN_NAME => {
                self.unknown_names += 1;
                self.question = Some(action);
            }
            DIDNT_UNDERSTAND | PLACE_CALL | SAVE_PHONETYPE => {}
            _ => self.question = Some(action),
        }
        let mut dist = vec![0.0; mask.len()];
        dist[action] = 1.0;
        Ok((dist, action))
    }
}

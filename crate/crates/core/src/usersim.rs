//! Stochastic simulated caller for the phone domain.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::{DomainHooks, ExecutedAction, UserAgent, UserResponse};
use crate::error::{Error, Result};
use crate::phone::{actions, PhoneDomain, PhoneStore, PhoneType, PlacedCall};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Refer to the contact by a nickname instead of the full name.
    pub p_use_nickname: f64,
    /// Leave the phone type out of the opening request.
    pub p_omit_phonetype: f64,
    /// Volunteer the phone type when answering a question about the name.
    pub p_extra_info: f64,
    /// Answer a question with something unrelated.
    pub p_ignore_question: f64,
    /// Hang up instead of answering, checked at every response.
    pub p_give_up_per_turn: f64,
    /// Goal names someone who is not in the address book.
    pub p_oov_name: f64,
    /// Goal asks for a phone type the contact does not have.
    pub p_unavailable_type: f64,
    /// With an unavailable type, settle for another of the contact's phones.
    pub p_accept_offer: f64,
    /// Repeat the whole request instead of answering a clarification.
    pub p_restate_goal: f64,
    /// Give the full name when asked to disambiguate.
    pub p_full_name_on_disambig: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            p_use_nickname: 0.5,
            p_omit_phonetype: 0.4,
            p_extra_info: 0.2,
            p_ignore_question: 0.15,
            p_give_up_per_turn: 0.02,
            p_oov_name: 0.1,
            p_unavailable_type: 0.25,
            p_accept_offer: 0.6,
            p_restate_goal: 0.3,
            p_full_name_on_disambig: 0.8,
        }
    }
}

impl SimParams {
    /// No hang-ups, no out-of-book names, no ignored questions, and every
    /// unavailable type has an acceptable alternative.
    pub fn benign() -> Self {
        SimParams {
            p_ignore_question: 0.0,
            p_give_up_per_turn: 0.0,
            p_oov_name: 0.0,
            p_accept_offer: 1.0,
            p_full_name_on_disambig: 1.0,
            ..Self::default()
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("p_use_nickname", self.p_use_nickname),
            ("p_omit_phonetype", self.p_omit_phonetype),
            ("p_extra_info", self.p_extra_info),
            ("p_ignore_question", self.p_ignore_question),
            ("p_give_up_per_turn", self.p_give_up_per_turn),
            ("p_oov_name", self.p_oov_name),
            ("p_unavailable_type", self.p_unavailable_type),
            ("p_accept_offer", self.p_accept_offer),
            ("p_restate_goal", self.p_restate_goal),
            ("p_full_name_on_disambig", self.p_full_name_on_disambig),
        ]
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "p_use_nickname" => &mut self.p_use_nickname,
            "p_omit_phonetype" => &mut self.p_omit_phonetype,
            "p_extra_info" => &mut self.p_extra_info,
            "p_ignore_question" => &mut self.p_ignore_question,
            "p_give_up_per_turn" => &mut self.p_give_up_per_turn,
            "p_oov_name" => &mut self.p_oov_name,
            "p_unavailable_type" => &mut self.p_unavailable_type,
            "p_accept_offer" => &mut self.p_accept_offer,
            "p_restate_goal" => &mut self.p_restate_goal,
            "p_full_name_on_disambig" => &mut self.p_full_name_on_disambig,
            other => {
                return Err(Error::Config(format!(
                    "unknown simulator parameter `{other}`"
                )))
            }
        };
        *slot = value;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.fields() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    /// Canonical name, or the out-of-book name.
    pub name: String,
    /// Address-book row; `None` for out-of-book names.
    pub contact: Option<usize>,
    pub phonetype: PhoneType,
    /// Type the user settles for when `phonetype` is unavailable.
    pub fallback: Option<PhoneType>,
}

impl UserGoal {
    pub fn satisfiable(&self) -> bool {
        self.contact.is_some()
    }
}

pub fn sample_goal<R: Rng + ?Sized>(
    domain: &PhoneDomain,
    params: &SimParams,
    rng: &mut R,
) -> UserGoal {
    let book = domain.book();
    if book.contacts.is_empty()
        || (!book.unknown_names.is_empty() && rng.gen_bool(params.p_oov_name))
    {
        let name = book
            .unknown_names
            .choose(rng)
            .cloned()
            .unwrap_or_else(|| "Nobody".to_string());
        return UserGoal {
            name,
            contact: None,
            phonetype: *PhoneType::ALL.choose(rng).unwrap(),
            fallback: None,
        };
    }
    let i = rng.gen_range(0..book.contacts.len());
    let c = &book.contacts[i];
    let have = c.types();
    let missing: Vec<PhoneType> = PhoneType::ALL
        .into_iter()
        .filter(|t| !have.contains(t))
        .collect();
    let (phonetype, fallback) = if !missing.is_empty() && rng.gen_bool(params.p_unavailable_type) {
        let t = *missing.choose(rng).unwrap();
        let fb = rng
            .gen_bool(params.p_accept_offer)
            .then(|| *have.choose(rng).unwrap());
        (t, fb)
    } else {
        (*have.choose(rng).unwrap(), None)
    };
    UserGoal {
        name: c.name.clone(),
        contact: Some(i),
        phonetype,
        fallback,
    }
}

/// Success iff a call went to the goal contact on an acceptable phone type.
pub fn judge(goal: &UserGoal, placed: Option<&PlacedCall>) -> bool {
    match (placed, goal.contact) {
        (Some(p), Some(c)) => {
            p.contact == c && (p.phonetype == goal.phonetype || Some(p.phonetype) == goal.fallback)
        }
        _ => false,
    }
}

const FILLERS: [&str; 5] = [
    "um, let me think",
    "hmm",
    "what?",
    "hello",
    "sorry, what was that",
];

/// A caller with a fixed goal. Responses are keyed on the template id of
/// the system's last text action.
pub struct SimulatedUser<'a> {
    domain: &'a PhoneDomain,
    params: SimParams,
    goal: UserGoal,
    rng: ChaCha8Rng,
    /// Name the user will keep using for the contact.
    spoken_name: String,
    /// Last prompt other than a request to repeat, and its text.
    question: Option<usize>,
    last_text: String,
}

impl<'a> SimulatedUser<'a> {
    /// Samples a goal and response stream from `seed`.
    pub fn new(domain: &'a PhoneDomain, params: SimParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = sample_goal(domain, &params, &mut rng);
        Self::with_goal(domain, params, goal, rng)
    }

    pub fn with_goal(
        domain: &'a PhoneDomain,
        params: SimParams,
        goal: UserGoal,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let spoken_name = match goal.contact {
            Some(i) => {
                let c = &domain.book().contacts[i];
                if !c.nicknames.is_empty() && rng.gen_bool(params.p_use_nickname) {
                    c.nicknames.choose(&mut rng).unwrap().clone()
                } else {
                    c.name.clone()
                }
            }
            None => goal.name.clone(),
        };
        SimulatedUser {
            domain,
            params,
            goal,
            rng,
            spoken_name,
            question: None,
            last_text: String::new(),
        }
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    fn type_word(&mut self, t: PhoneType) -> &'static str {
        t.synonyms().choose(&mut self.rng).unwrap()
    }

    fn with_type(&mut self, lead: String, t: PhoneType) -> String {
        let w = self.type_word(t);
        match self.rng.gen_range(0..3) {
            0 => format!("{lead} on the {w} phone"),
            1 => format!("{lead} at {w}"),
            _ => format!("{lead} {w}"),
        }
    }

    fn request(&mut self) -> String {
        let lead = match self.rng.gen_range(0..3) {
            0 => format!("Call {}", self.spoken_name),
            1 => format!("Please call {}", self.spoken_name),
            _ => format!("I'd like to call {}", self.spoken_name),
        };
        let unavailable = self.goal.fallback.is_some()
            || self.goal.contact.is_some_and(|i| {
                self.domain.book().contacts[i]
                    .phone(self.goal.phonetype)
                    .is_none()
            });
        if !unavailable && self.rng.gen_bool(self.params.p_omit_phonetype) {
            lead
        } else {
            self.with_type(lead, self.goal.phonetype)
        }
    }

    fn filler(&mut self) -> String {
        FILLERS.choose(&mut self.rng).unwrap().to_string()
    }

    /// Phone types mentioned in a system prompt, in order.
    fn offered(&self, text: &str) -> Vec<PhoneType> {
        self.domain
            .gazetteer()
            .extract(text)
            .iter()
            .filter(|m| m.entity_type == "phonetype")
            .filter_map(|m| m.resolved.as_deref()?.parse().ok())
            .collect()
    }

    fn wanted(&self, offered: &[PhoneType]) -> Option<PhoneType> {
        if offered.contains(&self.goal.phonetype) {
            Some(self.goal.phonetype)
        } else {
            self.goal.fallback.filter(|f| offered.contains(f))
        }
    }

    fn answer(&mut self, action: usize, text: &str) -> Result<UserResponse> {
        use actions::*;
        let p = self.params;
        let say = UserResponse::Utterance;
        Ok(match action {
            GREETING | REPROMPT => say(self.request()),
            ANNOUNCE_CALL => UserResponse::Silent,
            APOLOGY_GOODBYE | GOODBYE => UserResponse::Silent,
            _ if self.rng.gen_bool(p.p_ignore_question) => say(self.filler()),
            ASK_PHONETYPE => {
                let t = self
                    .wanted(&self.offered(text))
                    .unwrap_or(self.goal.phonetype);
                let w = self.type_word(t);
                say(if self.rng.gen_bool(0.5) {
                    w.to_string()
                } else {
                    format!("{w} please")
                })
            }
            OFFER_SOLE_TYPE => {
                // the first type in the prompt is the one that was refused
                let offered = self.offered(text);
                let yes = self.wanted(offered.get(1..).unwrap_or(&[])).is_some();
                say(if yes {
                    "yes".into()
                } else {
                    "no thanks".into()
                })
            }
            OFFER_MULTI_TYPE => {
                let offered = self.offered(text);
                match self.wanted(offered.get(1..).unwrap_or(&[])) {
                    Some(t) => {
                        let w = self.type_word(t);
                        say(format!("the {w} one"))
                    }
                    None => UserResponse::HangUp,
                }
            }
            DISAMBIGUATE => {
                let full = self.goal.name.clone();
                let lead = if self.rng.gen_bool(p.p_full_name_on_disambig) {
                    self.spoken_name = full.clone();
                    full
                } else {
                    self.spoken_name.clone()
                };
                if self.rng.gen_bool(p.p_extra_info) {
                    say(self.with_type(lead, self.goal.phonetype))
                } else {
                    say(lead)
                }
            }
            UNKNOWN_NAME => {
                if self.rng.gen_bool(p.p_restate_goal) || self.goal.satisfiable() {
                    say(self.request())
                } else {
                    UserResponse::HangUp
                }
            }
            CONFIRM_NAME => {
                let right = self
                    .goal
                    .contact
                    .is_some_and(|i| text.contains(&self.domain.book().contacts[i].name));
                match (right, self.rng.gen_bool(p.p_extra_info)) {
                    (true, true) => say(self.with_type("yes".into(), self.goal.phonetype)),
                    (true, false) => say("yes".into()),
                    (false, _) => say("no".into()),
                }
            }
            DIDNT_UNDERSTAND => match self.question {
                Some(q) if !self.rng.gen_bool(p.p_restate_goal) => {
                    let last = self.last_text.clone();
                    return self.answer(q, &last);
                }
                _ => say(self.request()),
            },
            other => return Err(Error::UnknownTemplate(other.to_string())),
        })
    }
}

impl UserAgent<PhoneStore> for SimulatedUser<'_> {
    fn respond(&mut self, prompt: &ExecutedAction) -> Result<UserResponse> {
        if prompt.action >= self.domain.templates().len() {
            return Err(Error::UnknownTemplate(prompt.action.to_string()));
        }
        if prompt.action != actions::ANNOUNCE_CALL
            && self.rng.gen_bool(self.params.p_give_up_per_turn)
        {
            return Ok(UserResponse::HangUp);
        }
        let text = prompt.text.clone().unwrap_or_default();
        let r = self.answer(prompt.action, &text)?;
        if prompt.action != actions::DIDNT_UNDERSTAND {
            self.question = Some(prompt.action);
            self.last_text = text;
        }
        Ok(r)
    }

    fn judge(&self, store: &PhoneStore) -> bool {
        judge(&self.goal, store.placed.as_ref())
    }
}

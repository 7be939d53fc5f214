//! Phone-calling domain: address book, hooks, the bundled dialog corpus and
//! a scripted reference policy.

mod book;
mod scripted;

use serde::{Deserialize, Serialize};

use crate::dialog::corpus::Corpus;
use crate::dialog::{
    ActionKind, ActionMask, ActionTemplate, DomainHooks, EntityMention, Gazetteer,
};
use crate::error::{Error, Result};

pub use book::{join_types, AddressBook, Contact, NameMatch, PhoneType};
pub use scripted::ScriptedPolicy;

const CORPUS: &str = include_str!("../../data/phone_corpus.txt");

pub const ENTITY_TYPES: [&str; 3] = ["name", "phonetype", "yesno"];
pub const CONTEXT_DIM: usize = 11;
pub const API_DIM: usize = 2;

/// Template ids, in the order of [`PhoneDomain::templates`].
pub mod actions {
    pub const GREETING: usize = 0;
    pub const ASK_PHONETYPE: usize = 1;
    pub const ANNOUNCE_CALL: usize = 2;
    pub const PLACE_CALL: usize = 3;
    pub const SAVE_PHONETYPE: usize = 4;
    pub const OFFER_SOLE_TYPE: usize = 5;
    pub const OFFER_MULTI_TYPE: usize = 6;
    pub const APOLOGY_GOODBYE: usize = 7;
    pub const DISAMBIGUATE: usize = 8;
    pub const UNKNOWN_NAME: usize = 9;
    pub const REPROMPT: usize = 10;
    pub const CONFIRM_NAME: usize = 11;
    pub const GOODBYE: usize = 12;
    pub const DIDNT_UNDERSTAND: usize = 13;
    pub const COUNT: usize = 14;
}

const TEMPLATE_TABLE: [(&str, ActionKind, &str, bool); actions::COUNT] = [
    ("greeting", ActionKind::Text, "How can I help you?", false),
    ("ask_phonetype", ActionKind::Text, "Which type of phone: <phonetypesavail>?", false),
    ("announce_call", ActionKind::Text, "Calling <canonicalname>, <canonicalphonetype>", false),
    ("PlaceCall", ActionKind::Api, "PlaceCall", true),
    ("SavePhonetypeavail", ActionKind::Api, "SavePhonetypeavail", false),
    (
        "offer_sole_type",
        ActionKind::Text,
        "Sorry, I don't have a <phonetype> number for <canonicalname>.  I only have a <phonetypesavail> phone.  Do you want to call that number?",
        false,
    ),
    (
        "offer_multi_type",
        ActionKind::Text,
        "Sorry, I don't have a <phonetype> number for <canonicalname>.  I have <phonetypesavail>.  Which would you like?",
        false,
    ),
    ("apology_goodbye", ActionKind::Text, "Oh, sorry about that.  Goodbye.", true),
    (
        "disambiguate",
        ActionKind::Text,
        "There's more than one person named <name>. Can you say their full name?",
        false,
    ),
    (
        "unknown_name",
        ActionKind::Text,
        "Sorry, I don't know of any names called <name>.  Can you try again?",
        false,
    ),
    ("reprompt", ActionKind::Text, "Who would you like to call?", false),
    ("confirm_name", ActionKind::Text, "Do you want to call <canonicalname>?", false),
    ("goodbye", ActionKind::Text, "Goodbye.", true),
    (
        "didnt_understand",
        ActionKind::Text,
        "Sorry, I didn't understand that.  Can you say it again?",
        false,
    ),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedCall {
    pub contact: usize,
    pub phonetype: PhoneType,
    pub number: String,
}

/// Entity memory for one call. Later mentions overwrite earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneStore {
    /// Name as the user said it.
    pub name: Option<String>,
    /// Contacts the name resolves to.
    pub matches: Vec<usize>,
    pub by_nickname: bool,
    /// Last phone type the user asked for, and how they said it.
    pub requested: Option<PhoneType>,
    pub requested_surface: Option<String>,
    /// Type the call will go to.
    pub committed: Option<PhoneType>,
    /// Answer given in the current turn only.
    pub yesno: Option<bool>,
    pub placed: Option<PlacedCall>,
}

impl PhoneStore {
    pub fn unique(&self) -> Option<usize> {
        match self.matches.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }
}

pub struct PhoneDomain {
    book: AddressBook,
    templates: Vec<ActionTemplate>,
    gazetteer: Gazetteer,
}

impl PhoneDomain {
    pub fn new(book: AddressBook) -> Self {
        let templates = TEMPLATE_TABLE
            .iter()
            .enumerate()
            .map(|(id, (name, kind, pattern, terminal))| ActionTemplate {
                id,
                name: name.to_string(),
                kind: *kind,
                pattern: pattern.to_string(),
                terminal: *terminal,
            })
            .collect();
        let mut gazetteer = Gazetteer::new();
        for name in &book.unknown_names {
            gazetteer.insert(name, "name", name);
        }
        for c in &book.contacts {
            for n in &c.nicknames {
                gazetteer.insert(n, "name", n);
            }
            gazetteer.insert(&c.name, "name", &c.name);
        }
        for t in PhoneType::ALL {
            for s in t.synonyms() {
                gazetteer.insert(s, "phonetype", t.as_str());
            }
        }
        for s in ["yes", "yeah", "yep"] {
            gazetteer.insert(s, "yesno", "yes");
        }
        for s in ["no", "nope"] {
            gazetteer.insert(s, "yesno", "no");
        }
        PhoneDomain {
            book,
            templates,
            gazetteer,
        }
    }

    pub fn builtin() -> Self {
        Self::new(AddressBook::builtin())
    }

    pub fn book(&self) -> &AddressBook {
        &self.book
    }

    fn contact(&self, i: usize) -> Result<&Contact> {
        self.book.contacts.get(i).ok_or_else(|| Error::Domain {
            hook: "store",
            msg: format!("contact index {i} out of range"),
        })
    }

    fn resolved<'m>(&'m self, m: &'m EntityMention) -> &'m str {
        m.resolved
            .as_deref()
            .or_else(|| self.gazetteer.lookup(&m.surface).map(|(_, canon)| canon))
            .unwrap_or(&m.surface)
    }

    fn slot_value(&self, slot: &str, store: &PhoneStore) -> Result<String> {
        let missing = || Error::Domain {
            hook: "entity_output",
            msg: format!("no value for <{slot}>"),
        };
        match slot {
            "canonicalname" => Ok(self
                .contact(store.unique().ok_or_else(missing)?)?
                .name
                .clone()),
            "phonetypesavail" => Ok(join_types(
                &self.contact(store.unique().ok_or_else(missing)?)?.types(),
            )),
            "canonicalphonetype" => store
                .committed
                .map(|t| t.as_str().to_string())
                .ok_or_else(missing),
            "phonetype" => store
                .requested_surface
                .clone()
                .or_else(|| store.requested.map(|t| t.as_str().to_string()))
                .ok_or_else(missing),
            "name" => store.name.clone().ok_or_else(missing),
            _ => Err(missing()),
        }
    }

    fn slot_fillable(&self, slot: &str, store: &PhoneStore) -> bool {
        match slot {
            "canonicalname" | "phonetypesavail" => store.unique().is_some(),
            "canonicalphonetype" => store.committed.is_some(),
            "phonetype" => store.requested.is_some(),
            "name" => store.name.is_some(),
            _ => false,
        }
    }

    fn sole_type(&self, store: &PhoneStore) -> Option<PhoneType> {
        let c = self.book.contacts.get(store.unique()?)?;
        match c.phones.as_slice() {
            [(t, _)] => Some(*t),
            _ => None,
        }
    }

    /// Number of phone types of the uniquely matched contact.
    pub fn type_count(&self, store: &PhoneStore) -> Option<usize> {
        store
            .unique()
            .and_then(|i| self.book.contacts.get(i))
            .map(|c| c.phones.len())
    }

    pub fn requested_available(&self, store: &PhoneStore) -> bool {
        match (
            store.unique().and_then(|i| self.book.contacts.get(i)),
            store.requested,
        ) {
            (Some(c), Some(t)) => c.phone(t).is_some(),
            _ => false,
        }
    }
}

fn bucket(n: usize) -> [f64; 3] {
    match n {
        0 => [1.0, 0.0, 0.0],
        1 => [0.0, 1.0, 0.0],
        _ => [0.0, 0.0, 1.0],
    }
}

impl DomainHooks for PhoneDomain {
    type Store = PhoneStore;

    fn templates(&self) -> &[ActionTemplate] {
        &self.templates
    }

    fn entity_types(&self) -> &[&'static str] {
        &ENTITY_TYPES
    }

    fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }

    fn context_dim(&self) -> usize {
        CONTEXT_DIM
    }

    fn api_feature_dim(&self) -> usize {
        API_DIM
    }

    fn entity_input(&self, mentions: &[EntityMention], store: &PhoneStore) -> Result<PhoneStore> {
        let mut s = store.clone();
        s.yesno = None;
        for m in mentions {
            match m.entity_type.as_str() {
                "name" => {
                    let found = self.book.resolve(&m.surface);
                    s.name = Some(m.surface.clone());
                    s.matches = found.contacts;
                    s.by_nickname = found.by_nickname;
                    s.committed = None;
                }
                "phonetype" => {
                    let t: PhoneType = self.resolved(m).parse().map_err(|_| Error::Domain {
                        hook: "entity_input",
                        msg: format!("`{}` is not a phone type", m.surface),
                    })?;
                    s.requested = Some(t);
                    s.requested_surface = Some(m.surface.to_lowercase());
                }
                "yesno" => {
                    s.yesno = match self.resolved(m).to_lowercase().as_str() {
                        "yes" => Some(true),
                        "no" => Some(false),
                        _ => {
                            return Err(Error::Domain {
                                hook: "entity_input",
                                msg: format!("`{}` is neither yes nor no", m.surface),
                            })
                        }
                    };
                }
                other => {
                    return Err(Error::Domain {
                        hook: "entity_input",
                        msg: format!("unknown entity type `{other}`"),
                    })
                }
            }
        }
        if s.committed.is_none() && self.requested_available(&s) {
            s.committed = s.requested;
        }
        Ok(s)
    }

    fn context_features(&self, store: &PhoneStore) -> Vec<f64> {
        let mut x = Vec::with_capacity(CONTEXT_DIM);
        if store.name.is_some() {
            x.extend(bucket(store.matches.len()));
        } else {
            x.extend([0.0; 3]);
        }
        match self.type_count(store) {
            Some(n) => x.extend(bucket(n)),
            None => x.extend([0.0; 3]),
        }
        x.push(if self.requested_available(store) {
            1.0
        } else {
            0.0
        });
        x.push(if store.committed.is_some() { 1.0 } else { 0.0 });
        x.push(if store.name.is_some() && store.by_nickname {
            1.0
        } else {
            0.0
        });
        x.push(if store.yesno == Some(true) { 1.0 } else { 0.0 });
        x.push(if store.yesno == Some(false) { 1.0 } else { 0.0 });
        x
    }

    fn action_mask(&self, store: &PhoneStore) -> ActionMask {
        let bits = self
            .templates
            .iter()
            .map(|t| match t.id {
                actions::PLACE_CALL => store.unique().is_some() && store.committed.is_some(),
                actions::SAVE_PHONETYPE => self.sole_type(store).is_some(),
                _ => t.slots().iter().all(|s| self.slot_fillable(s, store)),
            })
            .collect();
        ActionMask::new(bits)
    }

    fn entity_output(&self, template: &ActionTemplate, store: &PhoneStore) -> Result<String> {
        let mut out = String::with_capacity(template.pattern.len() + 32);
        let mut rest = template.pattern.as_str();
        while let Some(open) = rest.find('<') {
            let Some(close) = rest[open..].find('>') else {
                break;
            };
            out.push_str(&rest[..open]);
            out.push_str(&self.slot_value(&rest[open + 1..open + close], store)?);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn api_call(
        &self,
        template: &ActionTemplate,
        store: &PhoneStore,
    ) -> Result<(PhoneStore, Vec<f64>)> {
        let mut s = store.clone();
        match template.id {
            actions::PLACE_CALL => {
                let (Some(i), Some(t)) = (store.unique(), store.committed) else {
                    return Err(Error::Domain {
                        hook: "api_call",
                        msg: "PlaceCall needs one contact and a committed phone type".into(),
                    });
                };
                let number = self
                    .contact(i)?
                    .phone(t)
                    .ok_or_else(|| Error::Domain {
                        hook: "api_call",
                        msg: format!("contact {i} has no {t} number"),
                    })?
                    .to_string();
                s.placed = Some(PlacedCall {
                    contact: i,
                    phonetype: t,
                    number,
                });
                Ok((s, vec![1.0, 0.0]))
            }
            actions::SAVE_PHONETYPE => {
                let t = self.sole_type(store).ok_or_else(|| Error::Domain {
                    hook: "api_call",
                    msg: "SavePhonetypeavail needs one contact with exactly one phone".into(),
                })?;
                s.committed = Some(t);
                Ok((s, vec![0.0, 1.0]))
            }
            _ => Err(Error::Domain {
                hook: "api_call",
                msg: format!("`{}` is not an API action", template.name),
            }),
        }
    }
}

/// The bundled corpus of 21 example dialogs.
pub fn load_corpus() -> Corpus {
    Corpus::parse(CORPUS).expect("bundled corpus is valid")
}

/// Raw text of the bundled corpus.
pub fn corpus_text() -> &'static str {
    CORPUS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mention(ty: &str, surface: &str) -> EntityMention {
        EntityMention {
            entity_type: ty.into(),
            surface: surface.into(),
            start: 0,
            resolved: None,
        }
    }

    #[test]
    fn later_mentions_overwrite() {
        let d = PhoneDomain::builtin();
        let s = d
            .entity_input(
                &[mention("name", "Jason"), mention("phonetype", "home")],
                &PhoneStore::default(),
            )
            .unwrap();
        assert_eq!(s.requested, Some(PhoneType::Home));
        assert_eq!(s.committed, None);
        let s = d
            .entity_input(
                &[mention("name", "Mike"), mention("phonetype", "office")],
                &s,
            )
            .unwrap();
        assert_eq!(s.name.as_deref(), Some("Mike"));
        assert_eq!(s.committed, Some(PhoneType::Work));
    }

    #[test]
    fn renders_templates() {
        let d = PhoneDomain::builtin();
        let s = d
            .entity_input(
                &[mention("name", "Frank"), mention("phonetype", "cellphone")],
                &PhoneStore::default(),
            )
            .unwrap();
        let t = &d.templates()[actions::OFFER_SOLE_TYPE];
        assert_eq!(
            d.entity_output(t, &s).unwrap(),
            "Sorry, I don't have a cellphone number for Frank Seide.  I only have a work phone.  Do you want to call that number?"
        );
        assert!(d
            .entity_output(&d.templates()[actions::ANNOUNCE_CALL], &s)
            .is_err());
    }

    #[test]
    fn masks_follow_slots() {
        let d = PhoneDomain::builtin();
        let m = d.action_mask(&PhoneStore::default());
        let allowed: Vec<usize> = (0..actions::COUNT).filter(|a| m.allowed(*a)).collect();
        assert_eq!(
            allowed,
            vec![
                actions::GREETING,
                actions::APOLOGY_GOODBYE,
                actions::REPROMPT,
                actions::GOODBYE,
                actions::DIDNT_UNDERSTAND
            ]
        );
        let s = d
            .entity_input(&[mention("name", "Michael")], &PhoneStore::default())
            .unwrap();
        let m = d.action_mask(&s);
        assert!(m.allowed(actions::DISAMBIGUATE));
        assert!(!m.allowed(actions::ASK_PHONETYPE));
        assert!(!m.allowed(actions::PLACE_CALL));
    }

    #[test]
    fn api_calls() {
        let d = PhoneDomain::builtin();
        let s = d
            .entity_input(
                &[mention("name", "Michael Seltzer")],
                &PhoneStore::default(),
            )
            .unwrap();
        let (s, f) = d
            .api_call(&d.templates()[actions::SAVE_PHONETYPE], &s)
            .unwrap();
        assert_eq!(f, vec![0.0, 1.0]);
        let (s, f) = d.api_call(&d.templates()[actions::PLACE_CALL], &s).unwrap();
        assert_eq!(f, vec![1.0, 0.0]);
        assert_eq!(s.placed.as_ref().unwrap().phonetype, PhoneType::Work);
        let jason = d
            .entity_input(&[mention("name", "Jason")], &PhoneStore::default())
            .unwrap();
        assert!(d
            .api_call(&d.templates()[actions::SAVE_PHONETYPE], &jason)
            .is_err());
        assert!(d
            .api_call(&d.templates()[actions::PLACE_CALL], &jason)
            .is_err());
    }
}

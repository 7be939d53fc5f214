use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../../data/addressbook.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhoneType {
    Mobile,
    Work,
    Home,
}

impl PhoneType {
    pub const ALL: [PhoneType; 3] = [PhoneType::Mobile, PhoneType::Work, PhoneType::Home];

    pub fn as_str(self) -> &'static str {
        match self {
            PhoneType::Mobile => "mobile",
            PhoneType::Work => "work",
            PhoneType::Home => "home",
        }
    }

    /// Surface forms a user may say for this type.
    pub fn synonyms(self) -> &'static [&'static str] {
        match self {
            PhoneType::Mobile => &["mobile", "cell", "cellphone", "cell phone"],
            PhoneType::Work => &["work", "office"],
            PhoneType::Home => &["home", "house"],
        }
    }
}

impl fmt::Display for PhoneType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhoneType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase();
        PhoneType::ALL
            .into_iter()
            .find(|t| t.synonyms().contains(&lower.as_str()))
            .ok_or_else(|| Error::AddressBook(format!("unknown phone type `{s}`")))
    }
}

/// Joins types alphabetically: "work", "mobile or work", "home, mobile, or work".
pub fn join_types(types: &[PhoneType]) -> String {
    let mut names: Vec<&str> = types.iter().map(|t| t.as_str()).collect();
    names.sort_unstable();
    match names.as_slice() {
        [] => String::new(),
        [one] => one.to_string(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => format!("{}, or {last}", init.join(", ")),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub name: String,
    pub nicknames: Vec<String>,
    /// Sorted by phone type.
    pub phones: Vec<(PhoneType, String)>,
}

impl Contact {
    pub fn phone(&self, ty: PhoneType) -> Option<&str> {
        self.phones
            .iter()
            .find(|(t, _)| *t == ty)
            .map(|(_, n)| n.as_str())
    }

    pub fn types(&self) -> Vec<PhoneType> {
        self.phones.iter().map(|(t, _)| *t).collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BookFile {
    #[serde(default)]
    unknown_names: Vec<String>,
    #[serde(default, rename = "contact")]
    contacts: Vec<ContactFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactFile {
    name: String,
    #[serde(default)]
    nicknames: Vec<String>,
    phones: BTreeMap<String, String>,
}

/// Result of looking a spoken name up in the book.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameMatch {
    pub contacts: Vec<usize>,
    /// True when the match came from nicknames rather than a full name.
    pub by_nickname: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressBook {
    pub contacts: Vec<Contact>,
    /// Names the extractor knows that belong to nobody in the book.
    pub unknown_names: Vec<String>,
}

impl AddressBook {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled address book is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: BookFile = toml::from_str(text).map_err(|e| Error::AddressBook(e.to_string()))?;
        let mut contacts = Vec::with_capacity(file.contacts.len());
        for c in file.contacts {
            if c.name.trim().is_empty() {
                return Err(Error::AddressBook("contact with empty name".into()));
            }
            if c.phones.is_empty() {
                return Err(Error::AddressBook(format!(
                    "`{}` has no phone numbers",
                    c.name
                )));
            }
            let mut phones = Vec::new();
            for (ty, number) in c.phones {
                let ty: PhoneType = ty.parse()?;
                if phones.iter().any(|(t, _)| *t == ty) {
                    return Err(Error::AddressBook(format!("`{}` lists {ty} twice", c.name)));
                }
                phones.push((ty, number));
            }
            phones.sort();
            contacts.push(Contact {
                name: c.name,
                nicknames: c.nicknames,
                phones,
            });
        }
        Ok(AddressBook {
            contacts,
            unknown_names: file.unknown_names,
        })
    }

    /// Full-name match first; otherwise every contact with that nickname.
    pub fn resolve(&self, spoken: &str) -> NameMatch {
        let key = spoken.trim().to_lowercase();
        if let Some(i) = self
            .contacts
            .iter()
            .position(|c| c.name.to_lowercase() == key)
        {
            return NameMatch {
                contacts: vec![i],
                by_nickname: false,
            };
        }
        let contacts: Vec<usize> = self
            .contacts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.nicknames.iter().any(|n| n.to_lowercase() == key))
            .map(|(i, _)| i)
            .collect();
        let by_nickname = !contacts.is_empty();
        NameMatch {
            contacts,
            by_nickname,
        }
    }
}

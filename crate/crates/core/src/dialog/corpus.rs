//! Example-dialog corpus.
//!
//! Text format (UTF-8, version 1):
//!
//! ```text
//! dialogctl-corpus v1
//!
//! dialog <title>
//! sys <template name>
//! usr <user text with inline <type>surface</type> markup>
//! ...
//! end
//! ```
//!
//! Dialogs are separated by one blank line. A system line that directly
//! follows a text action means the user stayed silent in between; a system
//! line that follows an API action continues the same turn. Serialisation is
//! canonical, so a canonical file round-trips byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelState;

use super::{
    ActionKind, ActionMask, DomainHooks, Engine, EntityMention, ForcedController, TurnRecord,
};

pub const CORPUS_HEADER: &str = "dialogctl-corpus v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Line {
    /// Template name.
    System(String),
    /// Annotated user text.
    User(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDialog {
    pub title: String,
    pub lines: Vec<Line>,
}

impl CorpusDialog {
    /// Number of lines: system actions plus user utterances.
    pub fn turns(&self) -> usize {
        self.lines.len()
    }

    pub fn system_actions(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            Line::System(s) => Some(s.as_str()),
            Line::User(_) => None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogs: Vec<CorpusDialog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub mean_turns: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub system_actions: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::CorpusParse {
        line,
        msg: msg.into(),
    }
}

/// Splits inline markup into plain text and mentions (unresolved).
pub fn parse_markup(annotated: &str) -> std::result::Result<(String, Vec<EntityMention>), String> {
    let mut plain = String::with_capacity(annotated.len());
    let mut mentions = Vec::new();
    let mut rest = annotated;
    while let Some(open) = rest.find('<') {
        plain.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('>').ok_or("unterminated tag")?;
        let ty = &after[..close];
        if ty.is_empty()
            || ty.starts_with('/')
            || !ty.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(format!("bad tag `<{ty}>`"));
        }
        let body = &after[close + 1..];
        let end_tag = format!("</{ty}>");
        let end = body
            .find(&end_tag)
            .ok_or_else(|| format!("missing `{end_tag}`"))?;
        let surface = &body[..end];
        if surface.is_empty() || surface.contains('<') {
            return Err(format!("bad surface in `<{ty}>`"));
        }
        mentions.push(EntityMention {
            entity_type: ty.to_string(),
            surface: surface.to_string(),
            start: plain.len(),
            resolved: None,
        });
        plain.push_str(surface);
        rest = &body[end + end_tag.len()..];
    }
    if rest.contains('>') {
        return Err("stray `>`".into());
    }
    plain.push_str(rest);
    Ok((plain, mentions))
}

impl Corpus {
    pub fn new(dialogs: Vec<CorpusDialog>) -> Self {
        Corpus { dialogs }
    }

    pub fn len(&self) -> usize {
        self.dialogs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }

    pub fn parse(text: &str) -> Result<Corpus> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h == CORPUS_HEADER => {}
            Some((n, h)) => {
                return Err(parse_err(
                    n,
                    format!("expected header `{CORPUS_HEADER}`, found `{h}`"),
                ))
            }
            None => return Err(parse_err(1, "empty file")),
        }
        let mut dialogs = Vec::new();
        let mut current: Option<CorpusDialog> = None;
        for (n, line) in lines {
            match current.as_mut() {
                None => {
                    if line.is_empty() {
                        continue;
                    }
                    let title = line.strip_prefix("dialog ").ok_or_else(|| {
                        parse_err(n, format!("expected `dialog <title>`, found `{line}`"))
                    })?;
                    if title.trim().is_empty() {
                        return Err(parse_err(n, "empty dialog title"));
                    }
                    current = Some(CorpusDialog {
                        title: title.to_string(),
                        lines: Vec::new(),
                    });
                }
                Some(dialog) => {
                    if line == "end" {
                        if dialog.lines.is_empty() {
                            return Err(parse_err(n, "dialog has no lines"));
                        }
                        dialogs.push(current.take().unwrap());
                    } else if let Some(action) = line.strip_prefix("sys ") {
                        if action.is_empty() || action.contains(char::is_whitespace) {
                            return Err(parse_err(n, format!("bad action name `{action}`")));
                        }
                        dialog.lines.push(Line::System(action.to_string()));
                    } else if let Some(text) = line.strip_prefix("usr ") {
                        if text.trim().is_empty() {
                            return Err(parse_err(n, "empty user line (silence is implicit)"));
                        }
                        parse_markup(text).map_err(|m| parse_err(n, m))?;
                        if matches!(dialog.lines.last(), Some(Line::User(_))) {
                            return Err(parse_err(n, "two consecutive user lines"));
                        }
                        if dialog.lines.is_empty() {
                            return Err(parse_err(n, "dialog must open with a system action"));
                        }
                        dialog.lines.push(Line::User(text.to_string()));
                    } else {
                        return Err(parse_err(
                            n,
                            format!("expected `sys`, `usr` or `end`, found `{line}`"),
                        ));
                    }
                }
            }
        }
        if current.is_some() {
            return Err(parse_err(
                text.lines().count(),
                "unterminated dialog (missing `end`)",
            ));
        }
        Ok(Corpus { dialogs })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(CORPUS_HEADER);
        out.push('\n');
        for d in &self.dialogs {
            out.push('\n');
            let _ = writeln!(out, "dialog {}", d.title);
            for l in &d.lines {
                match l {
                    Line::System(a) => {
                        let _ = writeln!(out, "sys {a}");
                    }
                    Line::User(t) => {
                        let _ = writeln!(out, "usr {t}");
                    }
                }
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        Corpus::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn stats(&self) -> CorpusStats {
        let lens: Vec<usize> = self.dialogs.iter().map(CorpusDialog::turns).collect();
        CorpusStats {
            dialogs: lens.len(),
            mean_turns: if lens.is_empty() {
                0.0
            } else {
                lens.iter().sum::<usize>() as f64 / lens.len() as f64
            },
            min_turns: lens.iter().copied().min().unwrap_or(0),
            max_turns: lens.iter().copied().max().unwrap_or(0),
            system_actions: self
                .dialogs
                .iter()
                .map(|d| d.system_actions().count())
                .sum(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            dialogs: indices.iter().map(|&i| self.dialogs[i].clone()).collect(),
        }
    }
}

/// Network inputs and targets of one replayed dialog.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub masks: Vec<ActionMask>,
    pub targets: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn from_records(records: &[TurnRecord]) -> Self {
        Sequence {
            inputs: records.iter().map(|r| r.features.clone()).collect(),
            masks: records.iter().map(|r| r.mask.clone()).collect(),
            targets: records.iter().map(|r| r.action).collect(),
        }
    }
}

struct Segment {
    text: String,
    mentions: Vec<EntityMention>,
    actions: Vec<usize>,
}

/// Replays a corpus dialog through the domain hooks, forcing the recorded
/// actions. Fails if an action is unknown, masked at its position, or the
/// lines do not form a valid turn structure.
pub fn replay_dialog<D: DomainHooks>(
    engine: &Engine<D>,
    dialog: &CorpusDialog,
    index: usize,
) -> Result<Vec<TurnRecord>> {
    let domain = engine.domain();
    let bad = |msg: String| Error::CorpusParse {
        line: 0,
        msg: format!("dialog {index} (`{}`): {msg}", dialog.title),
    };
    let mut segments = vec![Segment {
        text: String::new(),
        mentions: Vec::new(),
        actions: Vec::new(),
    }];
    let mut last_kind: Option<ActionKind> = None;
    for line in &dialog.lines {
        match line {
            Line::User(annotated) => {
                let (text, mut mentions) = parse_markup(annotated).map_err(bad)?;
                for m in mentions.iter_mut() {
                    if !domain.entity_types().contains(&m.entity_type.as_str()) {
                        return Err(bad(format!("unknown entity type `{}`", m.entity_type)));
                    }
                    m.resolved = domain
                        .gazetteer()
                        .lookup(&m.surface)
                        .filter(|(ty, _)| *ty == m.entity_type)
                        .map(|(_, canon)| canon.to_string());
                }
                segments.push(Segment {
                    text,
                    mentions,
                    actions: Vec::new(),
                });
                last_kind = None;
            }
            Line::System(name) => {
                let t = domain
                    .template_by_name(name)
                    .ok_or_else(|| Error::UnknownTemplate(name.clone()))?;
                if last_kind == Some(ActionKind::Text) {
                    segments.push(Segment {
                        text: String::new(),
                        mentions: Vec::new(),
                        actions: Vec::new(),
                    });
                }
                segments.last_mut().unwrap().actions.push(t.id);
                last_kind = Some(t.kind);
            }
        }
    }

    let mut state = engine.start(ModelState::default());
    let mut records = Vec::new();
    let n_segments = segments.len();
    for (si, seg) in segments.into_iter().enumerate() {
        if seg.actions.is_empty() {
            return Err(bad("user line without a following system action".into()));
        }
        let before = records.len();
        let mut forced = ForcedController::new(seg.actions.iter().copied(), domain.n_actions())
            .at(index, records.len());
        let outcome = engine.run_turn_with_mentions(
            &mut state,
            &mut forced,
            &seg.text,
            &seg.mentions,
            &mut records,
        );
        // A saved correction prefix may stop in the middle of an API chain.
        if outcome.is_err()
            && si + 1 == n_segments
            && forced.remaining() == 0
            && records.len() == before + seg.actions.len()
        {
            break;
        }
        outcome.map_err(|e| match e {
            Error::MaskedCorpusAction {
                dialog,
                step,
                action,
            } => Error::MaskedCorpusAction {
                dialog,
                step,
                action: action
                    .parse::<usize>()
                    .ok()
                    .and_then(|id| domain.templates().get(id))
                    .map(|t| t.name.clone())
                    .unwrap_or(action),
            },
            other => other,
        })?;
        if forced.remaining() != 0 {
            return Err(bad(format!(
                "turn ended after {} of {} actions",
                seg.actions.len() - forced.remaining(),
                seg.actions.len()
            )));
        }
    }
    Ok(records)
}

/// Replays every dialog of a corpus into training sequences.
pub fn replay_corpus<D: DomainHooks>(engine: &Engine<D>, corpus: &Corpus) -> Result<Vec<Sequence>> {
    corpus
        .dialogs
        .iter()
        .enumerate()
        .map(|(i, d)| replay_dialog(engine, d, i).map(|r| Sequence::from_records(&r)))
        .collect()
}

//! Line-oriented text format for labelled MDPs and their vocabulary.
//!
//! ```text
//! # comment
//! [states]
//! s1 s2 s3
//! [initial]
//! s1
//! [actions]
//! go stop
//! [propositions]
//! goal
//! [transitions]
//! s1 go s2 0.5
//! s1 go s3 0.5
//! s2 stop s2 1
//! s3 stop s3 1
//! [labels]
//! s3 goal
//! [vocabulary]
//! action go "moves on"
//! prop goal "at the goal"
//! ```
//!
//! `[states]`, `[initial]` and `[transitions]` are required. Actions and
//! propositions are declared implicitly on first use when their sections are
//! missing. Names may not contain whitespace or `#`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::mdp::{ActionId, Mdp, MdpBuilder, PropId, StateId, Violation};
use crate::templates::Vocabulary;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{origin}:{line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
    #[error("{origin}: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    States,
    Initial,
    Actions,
    Propositions,
    Transitions,
    Labels,
    Vocabulary,
}

impl Section {
    fn parse(header: &str) -> Option<Section> {
        Some(match header {
            "states" => Section::States,
            "initial" => Section::Initial,
            "actions" => Section::Actions,
            "propositions" => Section::Propositions,
            "transitions" => Section::Transitions,
            "labels" => Section::Labels,
            "vocabulary" => Section::Vocabulary,
            _ => return None,
        })
    }
}

/// Splits a line into whitespace-separated words, keeping `"quoted text"`
/// as a single word (without the quotes).
fn words(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e) => s.push(e),
                        None => return Err("unterminated escape".into()),
                    },
                    Some(ch) => s.push(ch),
                    None => return Err("unterminated quoted phrase".into()),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses a model. `origin` names the source in error messages.
pub fn parse_model(text: &str, origin: &str) -> Result<(Mdp, Vocabulary), ModelFileError> {
    let syntax = |line: usize, message: String| ModelFileError::Syntax { origin: origin.to_string(), line, message };
    let mut section: Option<Section> = None;
    let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut states: Vec<String> = Vec::new();
    let mut state_index: HashMap<String, usize> = HashMap::new();
    let mut actions: Vec<String> = Vec::new();
    let mut props: Vec<String> = Vec::new();
    let mut declared_actions = false;
    let mut declared_props = false;
    let mut initial: Option<(String, usize)> = None;
    let mut transitions: Vec<(usize, String, String, String, f64)> = Vec::new();
    let mut labels: Vec<(usize, String, String)> = Vec::new();
    let mut phrases: Vec<(usize, String, String, String)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let sec = Section::parse(header.trim()).ok_or_else(|| syntax(line, format!("unknown section [{header}]")))?;
            let key = match sec {
                Section::States => "states",
                Section::Initial => "initial",
                Section::Actions => "actions",
                Section::Propositions => "propositions",
                Section::Transitions => "transitions",
                Section::Labels => "labels",
                Section::Vocabulary => "vocabulary",
            };
            if seen.insert(key, line).is_some() {
                return Err(syntax(line, format!("section [{key}] appears twice")));
            }
            match sec {
                Section::Actions => declared_actions = true,
                Section::Propositions => declared_props = true,
                _ => {}
            }
            section = Some(sec);
            continue;
        }
        let w = words(content).map_err(|e| syntax(line, e))?;
        match section {
            None => return Err(syntax(line, "content before the first section header".into())),
            Some(Section::States) => {
                for name in w {
                    if state_index.insert(name.clone(), states.len()).is_some() {
                        return Err(syntax(line, format!("state `{name}` declared twice")));
                    }
                    states.push(name);
                }
            }
            Some(Section::Actions) | Some(Section::Propositions) => {
                let list = if section == Some(Section::Actions) { &mut actions } else { &mut props };
                for name in w {
                    if list.contains(&name) {
                        return Err(syntax(line, format!("`{name}` declared twice")));
                    }
                    list.push(name);
                }
            }
            Some(Section::Initial) => {
                if w.len() != 1 || initial.is_some() {
                    return Err(syntax(line, "expected exactly one initial state".into()));
                }
                initial = Some((w[0].clone(), line));
            }
            Some(Section::Transitions) => {
                let [from, action, to, prob] = w.as_slice() else {
                    return Err(syntax(line, "expected `<state> <action> <successor> <probability>`".into()));
                };
                let p: f64 = prob
                    .parse()
                    .ok()
                    .filter(|p: &f64| p.is_finite())
                    .ok_or_else(|| syntax(line, format!("bad probability `{prob}`")))?;
                transitions.push((line, from.clone(), action.clone(), to.clone(), p));
            }
            Some(Section::Labels) => {
                let Some((state, rest)) = w.split_first() else { unreachable!() };
                if rest.is_empty() {
                    return Err(syntax(line, "expected `<state> <proposition>...`".into()));
                }
                for prop in rest {
                    labels.push((line, state.clone(), prop.clone()));
                }
            }
            Some(Section::Vocabulary) => {
                let [kind, name, phrase] = w.as_slice() else {
                    return Err(syntax(line, "expected `action|prop <name> \"<phrase>\"`".into()));
                };
                if kind != "action" && kind != "prop" {
                    return Err(syntax(line, format!("expected `action` or `prop`, found `{kind}`")));
                }
                phrases.push((line, kind.clone(), name.clone(), phrase.clone()));
            }
        }
    }

    let eof = text.lines().count() + 1;
    for required in ["states", "initial", "transitions"] {
        if !seen.contains_key(required) {
            return Err(syntax(eof, format!("missing [{required}] section")));
        }
    }
    let (init_name, init_line) = initial.ok_or_else(|| syntax(seen["initial"], "empty [initial] section".into()))?;

    let mut b = MdpBuilder::new();
    for s in &states {
        b.state(s);
    }
    for a in &actions {
        b.action(a);
    }
    for p in &props {
        b.prop(p);
    }
    let known_state = |name: &str, line: usize| {
        if state_index.contains_key(name) {
            Ok(())
        } else {
            Err(syntax(line, format!("unknown state `{name}`")))
        }
    };
    known_state(&init_name, init_line)?;
    b.initial(&init_name);
    let mut first_line: HashMap<(String, String), usize> = HashMap::new();
    for (line, from, action, to, p) in &transitions {
        known_state(from, *line)?;
        known_state(to, *line)?;
        if declared_actions && !actions.contains(action) {
            return Err(syntax(*line, format!("unknown action `{action}`")));
        }
        first_line.entry((from.clone(), action.clone())).or_insert(*line);
        b.transition(from, action, to, *p);
    }
    for (line, state, prop) in &labels {
        known_state(state, *line)?;
        if declared_props && !props.contains(prop) {
            return Err(syntax(*line, format!("unknown proposition `{prop}`")));
        }
        b.label(state, prop);
    }
    let m = b.build_unchecked();

    let report = m.validate();
    if let Some(v) = report.violations.first() {
        let line = match v {
            Violation::DistributionSum { state, action, .. }
            | Violation::BadProbability { state, action, .. }
            | Violation::DuplicateTransition { state, action, .. } => {
                first_line.get(&(state.clone(), action.clone())).copied()
            }
            _ => None,
        };
        return Err(match line {
            Some(line) => syntax(line, v.to_string()),
            None => ModelFileError::Invalid { origin: origin.to_string(), message: report.to_string() },
        });
    }

    let mut vocab = Vocabulary::new();
    for (line, kind, name, phrase) in phrases {
        if phrase.trim().is_empty() {
            return Err(syntax(line, format!("empty phrase for `{name}`")));
        }
        if kind == "action" {
            let a = m.action_by_name(&name).ok_or_else(|| syntax(line, format!("unknown action `{name}`")))?;
            vocab.set_action(a, phrase);
        } else {
            let p = m.prop_by_name(&name).ok_or_else(|| syntax(line, format!("unknown proposition `{name}`")))?;
            vocab.set_prop(p, phrase);
        }
    }
    Ok((m, vocab))
}

/// Reads and parses a model file.
pub fn read_model(path: &Path) -> Result<(Mdp, Vocabulary), ModelFileError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io { origin: origin.clone(), source })?;
    parse_model(&text, &origin)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Serialises a model; parsing the result yields an identical model.
pub fn write_model(m: &Mdp, v: &Vocabulary) -> String {
    let mut out = String::new();
    let join = |names: &[String]| names.join(" ");
    let _ = writeln!(out, "[states]\n{}", join(m.state_names()));
    let _ = writeln!(out, "\n[initial]\n{}", m.state_name(m.initial()));
    let _ = writeln!(out, "\n[actions]\n{}", join(m.action_names()));
    if m.num_props() > 0 {
        let _ = writeln!(out, "\n[propositions]\n{}", join(m.prop_names()));
    }
    out.push_str("\n[transitions]\n");
    for s in m.states() {
        for c in m.choices(s) {
            for &(t, p) in &c.successors {
                let _ = writeln!(out, "{} {} {} {}", m.state_name(s), m.action_name(c.action), m.state_name(t), p);
            }
        }
    }
    let labelled: Vec<StateId> = m.states().filter(|&s| !m.labels(s).is_empty()).collect();
    if !labelled.is_empty() {
        out.push_str("\n[labels]\n");
        for s in labelled {
            let names: Vec<&str> = m.labels(s).iter().map(|&p| m.prop_name(p)).collect();
            let _ = writeln!(out, "{} {}", m.state_name(s), names.join(" "));
        }
    }
    let actions: Vec<(ActionId, &str)> =
        (0..m.num_actions()).map(ActionId).filter_map(|a| v.action_phrase(a).map(|p| (a, p))).collect();
    let props: Vec<(PropId, &str)> =
        (0..m.num_props()).map(PropId).filter_map(|p| v.prop_phrase(p).map(|s| (p, s))).collect();
    if !actions.is_empty() || !props.is_empty() {
        out.push_str("\n[vocabulary]\n");
        for (a, phrase) in actions {
            let _ = writeln!(out, "action {} {}", m.action_name(a), quote(phrase));
        }
        for (p, phrase) in props {
            let _ = writeln!(out, "prop {} {}", m.prop_name(p), quote(phrase));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# two-step model
[states]
a b c
[initial]
a
[transitions]
a go b 0.5   # half
a go c 0.5
b stop b 1
c stop c 1
[labels]
c goal
[vocabulary]
action go \"moves on\"
prop goal \"at the goal\"
";

    #[test]
    fn parses_sections_and_phrases() {
        let (m, v) = parse_model(SMALL, "small").unwrap();
        assert_eq!(m.num_states(), 3);
        assert_eq!(m.num_transitions(), 4);
        assert_eq!(v.action_phrase(ActionId(0)), Some("moves on"));
        assert_eq!(v.prop_phrase(PropId(0)), Some("at the goal"));
    }

    #[test]
    fn writer_round_trips() {
        let (m, v) = parse_model(SMALL, "small").unwrap();
        let text = write_model(&m, &v);
        let (m2, v2) = parse_model(&text, "again").unwrap();
        assert_eq!(write_model(&m2, &v2), text);
        assert_eq!(m2.num_transitions(), m.num_transitions());
    }

    #[test]
    fn missing_transitions_section() {
        let text = "[states]\na\n[initial]\na\n";
        let e = parse_model(text, "f.mdp").unwrap_err();
        assert_eq!(e.to_string(), "f.mdp:5: missing [transitions] section");
    }

    #[test]
    fn bad_distribution_points_at_line() {
        let text = SMALL.replace("a go c 0.5", "a go c 0.45");
        let e = parse_model(&text, "f").unwrap_err();
        assert!(e.to_string().starts_with("f:7: distribution sum of (a, go)"), "{e}");
    }

    #[test]
    fn unknown_state_points_at_line() {
        let text = SMALL.replace("b stop b 1", "b stop z 1");
        let e = parse_model(&text, "f").unwrap_err();
        assert_eq!(e.to_string(), "f:9: unknown state `z`");
    }
}

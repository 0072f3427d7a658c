//! The structured-language template "The robot ⟨action⟩ when ⟨proposition⟩."
//! and enumeration of the candidate sentences it can produce.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::mdp::{ActionId, Mdp, PropId, StateId};

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("vocabulary has no phrase for action `{0}`")]
    MissingAction(String),
    #[error("vocabulary has no phrase for proposition `{0}`")]
    MissingProp(String),
    #[error("empty phrase for {0}")]
    EmptyPhrase(String),
    #[error("sentence tuple has no propositions")]
    EmptyProps,
}

/// Phrases used to fill the template slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Vocabulary {
    action_phrases: BTreeMap<ActionId, String>,
    prop_phrases: BTreeMap<PropId, String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_action(&mut self, a: ActionId, phrase: impl Into<String>) {
        self.action_phrases.insert(a, phrase.into());
    }

    pub fn set_prop(&mut self, p: PropId, phrase: impl Into<String>) {
        self.prop_phrases.insert(p, phrase.into());
    }

    pub fn action_phrase(&self, a: ActionId) -> Option<&str> {
        self.action_phrases.get(&a).map(String::as_str)
    }

    pub fn prop_phrase(&self, p: PropId) -> Option<&str> {
        self.prop_phrases.get(&p).map(String::as_str)
    }

    /// Fallback vocabulary: names with underscores turned into spaces.
    pub fn from_names(m: &Mdp) -> Self {
        let mut v = Vocabulary::new();
        for (i, n) in m.action_names().iter().enumerate() {
            v.set_action(ActionId(i), n.replace('_', " "));
        }
        for (i, n) in m.prop_names().iter().enumerate() {
            v.set_prop(PropId(i), n.replace('_', " "));
        }
        v
    }

    /// Fills gaps with [`Vocabulary::from_names`] phrases.
    pub fn completed_for(&self, m: &Mdp) -> Self {
        let mut v = Vocabulary::from_names(m);
        v.action_phrases.extend(self.action_phrases.iter().map(|(k, s)| (*k, s.clone())));
        v.prop_phrases.extend(self.prop_phrases.iter().map(|(k, s)| (*k, s.clone())));
        v
    }

    /// Checks that every action and proposition of `m` has a non-empty phrase.
    pub fn check_total(&self, m: &Mdp) -> Result<(), TemplateError> {
        for a in (0..m.num_actions()).map(ActionId) {
            match self.action_phrase(a) {
                None => return Err(TemplateError::MissingAction(m.action_name(a).into())),
                Some(p) if p.trim().is_empty() => {
                    return Err(TemplateError::EmptyPhrase(format!("action `{}`", m.action_name(a))))
                }
                _ => {}
            }
        }
        for p in (0..m.num_props()).map(PropId) {
            match self.prop_phrase(p) {
                None => return Err(TemplateError::MissingProp(m.prop_name(p).into())),
                Some(s) if s.trim().is_empty() => {
                    return Err(TemplateError::EmptyPhrase(format!("proposition `{}`", m.prop_name(p))))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// An `(α, {ι})` pair; `props` is sorted and non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SentenceTuple {
    pub action: ActionId,
    pub props: Vec<PropId>,
    pub index: usize,
}

impl SentenceTuple {
    /// Whether the sentence can describe action `a` taken in state `s`.
    pub fn describes(&self, m: &Mdp, s: StateId, a: ActionId) -> bool {
        self.action == a && self.props.iter().all(|&p| m.has_label(s, p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sentence {
    pub text: String,
    pub source: SentenceTuple,
}

/// Renders `t`. Conjunctions are joined with " and " in ascending
/// proposition id order.
pub fn instantiate(v: &Vocabulary, m: &Mdp, t: &SentenceTuple) -> Result<Sentence, TemplateError> {
    if t.props.is_empty() {
        return Err(TemplateError::EmptyProps);
    }
    let action = v
        .action_phrase(t.action)
        .ok_or_else(|| TemplateError::MissingAction(name_or_id(m.action_names(), t.action.0)))?;
    let mut props = t.props.clone();
    props.sort();
    let phrases: Vec<&str> = props
        .iter()
        .map(|&p| v.prop_phrase(p).ok_or_else(|| TemplateError::MissingProp(name_or_id(m.prop_names(), p.0))))
        .collect::<Result<_, _>>()?;
    Ok(Sentence { text: format!("The robot {} when {}.", action, phrases.join(" and ")), source: t.clone() })
}

fn name_or_id(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
}

/// All `(α, {ι})` with `1 ≤ |{ι}| ≤ max_conjunction`, ordered by action id
/// and then lexicographically by proposition set.
///
/// # Panics
/// If `max_conjunction` is zero.
pub fn enumerate_candidates(m: &Mdp, max_conjunction: usize) -> Vec<SentenceTuple> {
    assert!(max_conjunction >= 1, "max_conjunction must be at least 1");
    let k_max = max_conjunction.min(m.num_props());
    let mut sets: Vec<Vec<PropId>> = (1..=k_max)
        .flat_map(|k| (0..m.num_props()).map(PropId).combinations(k))
        .collect();
    sets.sort();
    let mut out = Vec::with_capacity(m.num_actions() * sets.len());
    for a in (0..m.num_actions()).map(ActionId) {
        for props in &sets {
            out.push(SentenceTuple { action: a, props: props.clone(), index: out.len() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpBuilder;

    fn vocab_model() -> (Mdp, Vocabulary) {
        let mut b = MdpBuilder::new();
        b.initial("s0");
        let south = b.action("move_south");
        let north = b.action("move_north");
        let stop = b.action("stop");
        let nopa = b.prop("north_of_pick_up_area");
        let soda = b.prop("south_of_delivery_area");
        let nohz = b.prop("north_of_human_zone");
        let ihz = b.prop("in_human_zone");
        b.transition("s0", "stop", "s0", 1.0);
        let m = b.build().unwrap();
        let mut v = Vocabulary::new();
        v.set_action(south, "moves south");
        v.set_action(north, "moves north");
        v.set_action(stop, "stops");
        v.set_prop(nopa, "north of pick-up area");
        v.set_prop(soda, "south of delivery area");
        v.set_prop(nohz, "north of human zone");
        v.set_prop(ihz, "in human zone");
        (m, v)
    }

    fn tuple(a: usize, props: &[usize]) -> SentenceTuple {
        SentenceTuple { action: ActionId(a), props: props.iter().map(|&p| PropId(p)).collect(), index: 0 }
    }

    #[test]
    fn renders_table_sentences() {
        let (m, v) = vocab_model();
        assert_eq!(
            instantiate(&v, &m, &tuple(0, &[0])).unwrap().text,
            "The robot moves south when north of pick-up area."
        );
        assert_eq!(
            instantiate(&v, &m, &tuple(1, &[1, 2])).unwrap().text,
            "The robot moves north when south of delivery area and north of human zone."
        );
        assert_eq!(instantiate(&v, &m, &tuple(2, &[3])).unwrap().text, "The robot stops when in human zone.");
    }

    #[test]
    fn conjunction_order_is_by_id() {
        let (m, v) = vocab_model();
        let a = instantiate(&v, &m, &tuple(1, &[2, 1])).unwrap();
        let b = instantiate(&v, &m, &tuple(1, &[1, 2])).unwrap();
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn missing_phrase_is_an_error() {
        let (m, mut v) = vocab_model();
        v.action_phrases.remove(&ActionId(2));
        assert_eq!(instantiate(&v, &m, &tuple(2, &[3])), Err(TemplateError::MissingAction("stop".into())));
        assert!(v.check_total(&m).is_err());
    }

    fn alphabet(actions: usize, props: usize) -> Mdp {
        let mut b = MdpBuilder::new();
        b.initial("s0");
        for a in 0..actions {
            b.transition("s0", &format!("a{a}"), "s0", 1.0);
        }
        for p in 0..props {
            b.label("s0", &format!("p{p}"));
        }
        b.build().unwrap()
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(enumerate_candidates(&alphabet(5, 12), 1).len(), 60);
        assert_eq!(enumerate_candidates(&alphabet(1, 1), 1).len(), 1);
        // Oracle: filter the full power set by size.
        let m = alphabet(2, 3);
        let brute: usize = (1u32..8).filter(|mask| mask.count_ones() <= 2).count() * 2;
        assert_eq!(brute, 12);
        assert_eq!(enumerate_candidates(&m, 2).len(), brute);
    }

    #[test]
    fn candidates_are_sorted_and_indexed() {
        let c = enumerate_candidates(&alphabet(2, 3), 2);
        for (i, t) in c.iter().enumerate() {
            assert_eq!(t.index, i);
        }
        let keys: Vec<_> = c.iter().map(|t| (t.action, t.props.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(keys, sorted);
        assert_eq!(c[1].props, vec![PropId(0), PropId(1)]);
    }
}

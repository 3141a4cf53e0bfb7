//! Map generated command words onto the robot's closed vocabulary with a
//! normalized edit-distance similarity.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::error::{Result, V2cError};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb { diag } else { 1 + diag.min(above).min(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// `1 - dist(a, b) / max(len a, len b)`; 1.0 for two empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Most similar candidate, lexicographically first on ties.
pub fn map_token<'a, I>(token: &str, candidates: I) -> Result<(&'a str, f64)>
where
    I: IntoIterator<Item = &'a str>,
{
    if token.is_empty() {
        return Err(V2cError::Usage("cannot map an empty token".into()));
    }
    let mut best: Option<(&'a str, f64)> = None;
    for cand in candidates {
        let s = similarity(token, cand);
        best = match best {
            Some((b, bs)) if bs > s || (bs == s && b <= cand) => Some((b, bs)),
            _ => Some((cand, s)),
        };
    }
    best.ok_or_else(|| V2cError::Usage("candidate set is empty".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Hand,
    Action,
    Object,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Hand => "hand",
            Slot::Action => "action",
            Slot::Object => "object",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotVocabulary {
    pub hands: BTreeSet<String>,
    pub actions: BTreeSet<String>,
    pub objects: BTreeSet<String>,
    pub threshold: f64,
}

impl RobotVocabulary {
    pub fn new(hands: BTreeSet<String>, actions: BTreeSet<String>, objects: BTreeSet<String>, threshold: f64) -> Result<Self> {
        let v = RobotVocabulary { hands, actions, objects, threshold };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(V2cError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        for slot in [Slot::Hand, Slot::Action, Slot::Object] {
            if self.candidates(slot).is_empty() {
                return Err(V2cError::Format(format!("robot vocabulary has no {slot} tokens")));
            }
        }
        let overlap = self
            .hands
            .intersection(&self.actions)
            .chain(self.hands.intersection(&self.objects))
            .chain(self.actions.intersection(&self.objects))
            .next();
        if let Some(t) = overlap {
            return Err(V2cError::Format(format!("token `{t}` appears in more than one slot")));
        }
        Ok(())
    }

    pub fn candidates(&self, slot: Slot) -> &BTreeSet<String> {
        match slot {
            Slot::Hand => &self.hands,
            Slot::Action => &self.actions,
            Slot::Object => &self.objects,
        }
    }

    /// Parse `slot<TAB>token` lines (`#` comments and blank lines skipped).
    pub fn parse(text: &str, threshold: f64) -> Result<Self> {
        let mut sets: [BTreeSet<String>; 3] = Default::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| V2cError::Parse { line: i + 1, message };
            let (slot, token) = line.split_once('\t').ok_or_else(|| err("expected `slot<TAB>token`".into()))?;
            let token = token.trim();
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(err(format!("invalid token `{token}`")));
            }
            let k = match slot.trim() {
                "hand" => 0,
                "action" => 1,
                "object" => 2,
                other => return Err(err(format!("unknown slot `{other}` (expected hand, action or object)"))),
            };
            sets[k].insert(token.to_lowercase());
        }
        let [hands, actions, objects] = sets;
        Self::new(hands, actions, objects, threshold)
    }

    pub fn load(path: &Path, threshold: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| V2cError::io(path, e))?;
        Self::parse(&text, threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotMatch {
    pub slot: Slot,
    pub input: String,
    pub resolved: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedCommand {
    pub hand: Option<SlotMatch>,
    pub action: Option<SlotMatch>,
    pub object: Option<SlotMatch>,
    pub accepted: bool,
    /// Set whenever `accepted` is false.
    pub reason: Option<String>,
}

impl MappedCommand {
    fn rejected(reason: String) -> Self {
        MappedCommand { hand: None, action: None, object: None, accepted: false, reason: Some(reason) }
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotMatch> {
        [&self.hand, &self.action, &self.object].into_iter().flatten()
    }

    /// Resolved robot command, e.g. `righthand grasp bottle`.
    pub fn resolved_text(&self) -> String {
        self.slots().map(|s| s.resolved.as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Map a grammar-free command positionally: three tokens are hand, action,
/// object; two are hand, action; one is an action.
pub fn map_command<S: AsRef<str>>(tokens: &[S], vocab: &RobotVocabulary) -> MappedCommand {
    let layout: &[Slot] = match tokens.len() {
        0 => return MappedCommand::rejected("empty command".into()),
        1 => &[Slot::Action],
        2 => &[Slot::Hand, Slot::Action],
        3 => &[Slot::Hand, Slot::Action, Slot::Object],
        n => return MappedCommand::rejected(format!("command has {n} words; expected 1 to 3 (hand action object)")),
    };
    let mut out = MappedCommand { hand: None, action: None, object: None, accepted: true, reason: None };
    let mut failures = Vec::new();
    for (&slot, token) in layout.iter().zip(tokens) {
        let token = token.as_ref();
        let (resolved, sim) = match map_token(token, vocab.candidates(slot).iter().map(String::as_str)) {
            Ok(m) => m,
            Err(e) => return MappedCommand::rejected(format!("{slot}: {e}")),
        };
        if sim < vocab.threshold {
            failures.push(format!(
                "{slot} `{token}` is not close to any robot {slot} (best `{resolved}`, similarity {sim:.3} < {:.3})",
                vocab.threshold
            ));
        }
        let m = SlotMatch { slot, input: token.to_owned(), resolved: resolved.to_owned(), similarity: sim };
        match slot {
            Slot::Hand => out.hand = Some(m),
            Slot::Action => out.action = Some(m),
            Slot::Object => out.object = Some(m),
        }
    }
    if !failures.is_empty() {
        out.accepted = false;
        out.reason = Some(failures.join("; "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn robot() -> RobotVocabulary {
        RobotVocabulary::new(
            set(&["lefthand", "righthand"]),
            set(&["carry", "grasp", "pour", "reach"]),
            set(&["bottle", "cup", "spatula"]),
            DEFAULT_THRESHOLD,
        )
        .unwrap()
    }

    #[test]
    fn token_examples() {
        let r = robot();
        assert_eq!(map_token("grasp", r.actions.iter().map(String::as_str)).unwrap(), ("grasp", 1.0));
        let (best, sim) = map_token("gras", r.actions.iter().map(String::as_str)).unwrap();
        assert_eq!(best, "grasp");
        assert!((sim - 0.8).abs() < 1e-12);
        assert!(map_token("", ["a"]).is_err());
        assert!(map_token("a", std::iter::empty::<&str>()).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        assert_eq!(map_token("ab", ["ac", "aa"]).unwrap().0, "aa");
        assert_eq!(map_token("ab", ["aa", "ac"]).unwrap().0, "aa");
    }

    #[test]
    fn distance_basics() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(similarity("abc", "abd"), similarity("abd", "abc"));
    }

    #[test]
    fn command_examples() {
        let r = robot();
        let m = map_command(&["righthand", "grasp", "bottle"], &r);
        assert!(m.accepted);
        assert_eq!(m.slots().map(|s| s.similarity).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);

        let m = map_command(&["righthand", "carry", "spatul"], &r);
        assert!(m.accepted);
        let obj = m.object.as_ref().unwrap();
        assert_eq!(obj.resolved, "spatula");
        assert!((obj.similarity - (1.0 - 1.0 / 7.0)).abs() < 1e-12);
        assert_eq!(m.resolved_text(), "righthand carry spatula");

        let m = map_command(&["righthand", "xylophone", "bottle"], &r);
        assert!(!m.accepted);
        assert!(m.reason.as_ref().unwrap().starts_with("action"));
        assert!(m.action.as_ref().unwrap().similarity < 0.8);
    }

    #[test]
    fn command_shapes() {
        let r = robot();
        let m = map_command(&["lefthand", "reach"], &r);
        assert!(m.accepted && m.object.is_none());
        let m = map_command(&["pour"], &r);
        assert!(m.accepted && m.hand.is_none());
        let m = map_command::<&str>(&[], &r);
        assert!(!m.accepted && m.reason.is_some());
        assert!(!map_command(&["a", "b", "c", "d"], &r).accepted);
    }

    #[test]
    fn vocabulary_file() {
        let v = RobotVocabulary::parse("# robot\nhand\trighthand\naction\tgrasp\nobject\tcup\n", 0.8).unwrap();
        assert_eq!(v.objects, set(&["cup"]));
        match RobotVocabulary::parse("hand\trighthand\nlimb\tleg\n", 0.8) {
            Err(V2cError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RobotVocabulary::parse("hand righthand\n", 0.8), Err(V2cError::Parse { line: 1, .. })));
        assert!(RobotVocabulary::parse("hand\tx\naction\tx\nobject\ty\n", 0.8).is_err());
        assert!(RobotVocabulary::parse("hand\tx\naction\ty\n", 0.8).is_err());
    }
}

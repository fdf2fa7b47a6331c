//! Slot-template rules that label questions with the operations they call for.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Token};
use crate::error::{Error, Result};

/// The bundled rule file.
pub const DEFAULT_RULES: &str = include_str!("../rules/default.rules");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operation {
    Addition,
    Diff,
    Max,
    Min,
    Argmax,
    Argmin,
    Argmore,
    Argless,
    Count,
    KeyValue,
    Span,
}

impl Operation {
    pub const COUNT: usize = 11;

    pub const ALL: [Operation; 11] = [
        Operation::Addition,
        Operation::Diff,
        Operation::Max,
        Operation::Min,
        Operation::Argmax,
        Operation::Argmin,
        Operation::Argmore,
        Operation::Argless,
        Operation::Count,
        Operation::KeyValue,
        Operation::Span,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Operation> {
        Self::ALL.get(index).copied()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Operation::Addition => "ADDITION",
            Operation::Diff => "DIFF",
            Operation::Max => "MAX",
            Operation::Min => "MIN",
            Operation::Argmax => "ARGMAX",
            Operation::Argmin => "ARGMIN",
            Operation::Argmore => "ARGMORE",
            Operation::Argless => "ARGLESS",
            Operation::Count => "COUNT",
            Operation::KeyValue => "KEY_VALUE",
            Operation::Span => "SPAN",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Operation::ALL
            .into_iter()
            .find(|op| op.tag() == s.trim())
            .ok_or_else(|| format!("unknown operation tag {s:?}"))
    }
}

/// A set of operations, ordered by index.
pub type OperationSet = std::collections::BTreeSet<Operation>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternItem {
    /// Zero or more tokens.
    Slot,
    /// One literal position; each alternative is a token sequence.
    Literal(Vec<Vec<String>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub pattern: Vec<PatternItem>,
    pub operations: Vec<Operation>,
    /// Index into `pattern` of the literal whose alternatives select the operation.
    selector: Option<usize>,
    pub source: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub templates: Vec<Template>,
    pub version: String,
}

fn words_of(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !t.is_punctuation())
        .map(|t| t.text.to_lowercase())
        .collect()
}

impl Template {
    pub fn parse(line: &str, line_no: usize) -> Result<Template> {
        let err = |message: String| Error::Rule {
            line: line_no,
            message,
        };
        let (ops, pattern) = line
            .split_once("::=")
            .ok_or_else(|| err("expected `OPERATION ::= pattern`".into()))?;
        let operations = ops
            .split('/')
            .map(|t| t.parse::<Operation>().map_err(&err))
            .collect::<Result<Vec<_>>>()?;

        let mut items = Vec::new();
        for chunk in pattern.split_whitespace() {
            let bare = chunk.trim_matches(|c: char| !c.is_alphanumeric() && c != '[' && c != ']');
            if bare.eq_ignore_ascii_case("[slot]") {
                if items.last() != Some(&PatternItem::Slot) {
                    items.push(PatternItem::Slot);
                }
                continue;
            }
            if chunk.contains('[') || chunk.contains(']') {
                return Err(err(format!("unrecognized placeholder {chunk:?}")));
            }
            let alternatives: Vec<Vec<String>> = chunk
                .split('/')
                .map(words_of)
                .filter(|w| !w.is_empty())
                .collect();
            match alternatives.len() {
                0 => continue,
                1 => {
                    // plain words: one literal item per word
                    for w in alternatives.into_iter().flatten() {
                        items.push(PatternItem::Literal(vec![vec![w]]));
                    }
                }
                _ => items.push(PatternItem::Literal(alternatives)),
            }
        }
        if !items.iter().any(|i| matches!(i, PatternItem::Literal(_))) {
            return Err(err("pattern needs at least one literal word".into()));
        }
        let groups: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, i)| matches!(i, PatternItem::Literal(a) if a.len() > 1))
            .map(|(k, _)| k)
            .collect();
        let selector = if operations.len() > 1 {
            match groups.as_slice() {
                [g] => {
                    let PatternItem::Literal(alts) = &items[*g] else { unreachable!() };
                    if alts.len() != operations.len() {
                        return Err(err(format!(
                            "{} operations but {} alternatives",
                            operations.len(),
                            alts.len()
                        )));
                    }
                    Some(*g)
                }
                _ => {
                    return Err(err(format!(
                        "{} operations need exactly one alternation group, found {}",
                        operations.len(),
                        groups.len()
                    )))
                }
            }
        } else {
            None
        };
        Ok(Template {
            pattern: items,
            operations,
            selector,
            source: line.trim().to_string(),
        })
    }

    /// Operations emitted when the whole question matches.
    pub fn matches(&self, words: &[String]) -> Vec<Operation> {
        match self.selector {
            None => {
                if full_match(&self.pattern, words, None) {
                    self.operations.clone()
                } else {
                    Vec::new()
                }
            }
            Some(g) => self
                .operations
                .iter()
                .enumerate()
                .filter(|(k, _)| full_match(&self.pattern, words, Some((g, *k))))
                .map(|(_, op)| *op)
                .collect(),
        }
    }
}

/// Whole-sequence match of `pattern` against `words`. `forced` pins the
/// literal at pattern index `.0` to alternative `.1`.
fn full_match(pattern: &[PatternItem], words: &[String], forced: Option<(usize, usize)>) -> bool {
    // reachable[j]: the pattern prefix processed so far can end at word j
    let n = words.len();
    let mut reachable = vec![false; n + 1];
    reachable[0] = true;
    for (pi, item) in pattern.iter().enumerate() {
        let mut next = vec![false; n + 1];
        match item {
            PatternItem::Slot => {
                let mut on = false;
                for j in 0..=n {
                    on |= reachable[j];
                    next[j] = on;
                }
            }
            PatternItem::Literal(alts) => {
                let candidates: Vec<&Vec<String>> = match forced {
                    Some((g, k)) if g == pi => vec![&alts[k]],
                    _ => alts.iter().collect(),
                };
                for j in (0..=n).filter(|&j| reachable[j]) {
                    for alt in &candidates {
                        let end = j + alt.len();
                        if end <= n && words[j..end] == alt[..] {
                            next[end] = true;
                        }
                    }
                }
            }
        }
        reachable = next;
        if !reachable.iter().any(|&r| r) {
            return false;
        }
    }
    reachable[n]
}

pub fn compile_ruleset(text: &str) -> Result<RuleSet> {
    let mut templates = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        templates.push(Template::parse(line, i + 1)?);
    }
    Ok(RuleSet {
        version: format!("{} templates", templates.len()),
        templates,
    })
}

pub fn load_ruleset(path: impl AsRef<Path>) -> Result<RuleSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    compile_ruleset(&text)
}

impl RuleSet {
    pub fn bundled() -> RuleSet {
        compile_ruleset(DEFAULT_RULES).expect("bundled rule file compiles")
    }

    pub fn match_tokens(&self, question: &[Token]) -> OperationSet {
        let words: Vec<String> = question
            .iter()
            .filter(|t| !t.is_punctuation())
            .map(|t| t.text.to_lowercase())
            .collect();
        self.templates
            .iter()
            .flat_map(|t| t.matches(&words))
            .collect()
    }

    pub fn match_question(&self, question: &str) -> OperationSet {
        self.match_tokens(&tokenize(question))
    }
}

pub fn match_operations(question: &[Token], rules: &RuleSet) -> OperationSet {
    rules.match_tokens(question)
}

/// Share of each operation among all emitted labels.
#[derive(Clone, Debug, PartialEq)]
pub struct OperationDistribution {
    pub fractions: BTreeMap<Operation, f64>,
    pub counts: BTreeMap<Operation, usize>,
    /// Set when no instance carried any label.
    pub empty: bool,
}

pub fn operation_distribution<'a>(labels: impl IntoIterator<Item = &'a OperationSet>) -> OperationDistribution {
    let mut counts: BTreeMap<Operation, usize> = Operation::ALL.iter().map(|&op| (op, 0)).collect();
    for set in labels {
        for op in set {
            *counts.get_mut(op).unwrap() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let fractions = counts
        .iter()
        .map(|(&op, &c)| (op, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect();
    OperationDistribution {
        fractions,
        counts,
        empty: total == 0,
    }
}

impl OperationDistribution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("operation,fraction\n");
        for (op, f) in &self.fractions {
            out.push_str(&format!("{op},{f}\n"));
        }
        out
    }
}

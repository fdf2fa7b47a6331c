use serde::{Deserialize, Serialize};

use super::decimal::Decimal;
use super::tokenize::Token;

/// Which half of the question/passage pair a token or span belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Question,
    Passage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberMention {
    pub value: Decimal,
    /// Index into the owning segment's token list.
    pub token_index: usize,
    pub source: Segment,
}

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Value of a single token under the number grammar, if it has one.
pub fn token_value(text: &str) -> Option<Decimal> {
    let first = text.chars().next()?;
    if first.is_ascii_digit() {
        if text.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') {
            if let Some(d) = Decimal::parse(text) {
                return Some(d);
            }
        }
        // ordinals and suffixed forms ("3rd", "1990s") contribute their digit prefix
        let prefix: String = text.chars().take_while(char::is_ascii_digit).collect();
        return Decimal::parse(&prefix);
    }
    let lower = text.to_lowercase();
    NUMBER_WORDS
        .iter()
        .position(|w| *w == lower)
        .map(|v| Decimal::from_int(v as i64))
}

pub fn extract_numbers(tokens: &[Token], source: Segment) -> Vec<NumberMention> {
    tokens
        .iter()
        .enumerate()
        .filter_map(|(token_index, t)| {
            token_value(&t.text).map(|value| NumberMention {
                value,
                token_index,
                source,
            })
        })
        .collect()
}

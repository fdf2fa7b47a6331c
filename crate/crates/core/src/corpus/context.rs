use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::decimal::Decimal;
use super::numbers::Segment;
use super::tokenize::{tokenize, Token};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Lowercased token vocabulary with the four reserved entries at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const CLS_ID: u32 = 2;
    pub const SEP_ID: u32 = 3;

    /// Keeps every lowercased token seen at least `min_count` times. Ids are
    /// assigned by descending frequency, ties broken lexicographically.
    /// Numeric tokens are left out and encode as UNK: their values reach the
    /// model through number mentions, and per-value embeddings only invite
    /// memorizing training numbers.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a Token>, min_count: usize) -> Vocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in tokens.into_iter().filter(|t| Decimal::parse(&t.text).is_none()) {
            *counts.entry(t.text.to_lowercase()).or_default() += 1;
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        words.extend(kept.into_iter().map(|(w, _)| w));
        Vocab::from_tokens(words).expect("reserved entries present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        for (i, special) in [PAD, UNK, CLS, SEP].iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Context(format!("vocab slot {i} must hold {special}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Context(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(Self::UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Source text together with its tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub text: String,
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        TokenizedText { text, tokens }
    }
}

/// The joint `[CLS] question [SEP] passage [SEP]` sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub question: TokenizedText,
    /// Passage tokens after truncation.
    pub passage: TokenizedText,
    pub joint_ids: Vec<u32>,
    pub q_range: Range<usize>,
    pub p_range: Range<usize>,
    /// Passage tokens dropped from the tail to fit `max_seq_len`.
    pub truncated: usize,
}

pub const SEPARATORS: usize = 3;

pub fn build_context(
    question: TokenizedText,
    mut passage: TokenizedText,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<Context> {
    let l_q = question.tokens.len();
    if l_q + SEPARATORS > max_seq_len {
        return Err(Error::Context(format!(
            "question has {l_q} tokens, which exceeds max_seq_len {max_seq_len}"
        )));
    }
    let budget = max_seq_len - l_q - SEPARATORS;
    let truncated = passage.tokens.len().saturating_sub(budget);
    passage.tokens.truncate(passage.tokens.len() - truncated);
    let l_p = passage.tokens.len();

    let mut joint_ids = Vec::with_capacity(l_q + l_p + SEPARATORS);
    joint_ids.push(Vocab::CLS_ID);
    joint_ids.extend(question.tokens.iter().map(|t| vocab.id(&t.text)));
    joint_ids.push(Vocab::SEP_ID);
    joint_ids.extend(passage.tokens.iter().map(|t| vocab.id(&t.text)));
    joint_ids.push(Vocab::SEP_ID);

    Ok(Context {
        q_range: 1..1 + l_q,
        p_range: l_q + 2..l_q + 2 + l_p,
        question,
        passage,
        joint_ids,
        truncated,
    })
}

impl Context {
    pub fn len(&self) -> usize {
        self.joint_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_ids.is_empty()
    }

    pub fn range(&self, segment: Segment) -> Range<usize> {
        match segment {
            Segment::Question => self.q_range.clone(),
            Segment::Passage => self.p_range.clone(),
        }
    }

    pub fn segment(&self, segment: Segment) -> &TokenizedText {
        match segment {
            Segment::Question => &self.question,
            Segment::Passage => &self.passage,
        }
    }

    /// Segment and in-segment token index of a joint position; `None` for separators.
    pub fn locate(&self, pos: usize) -> Option<(Segment, usize)> {
        if self.q_range.contains(&pos) {
            Some((Segment::Question, pos - self.q_range.start))
        } else if self.p_range.contains(&pos) {
            Some((Segment::Passage, pos - self.p_range.start))
        } else {
            None
        }
    }

    pub fn joint_index(&self, segment: Segment, token_index: usize) -> Option<usize> {
        let range = self.range(segment);
        let pos = range.start + token_index;
        range.contains(&pos).then_some(pos)
    }

    /// Source text covered by joint positions `start..=end`, which must lie in one segment.
    pub fn span_text(&self, start: usize, end: usize) -> Result<&str> {
        let (seg_s, s) = self
            .locate(start)
            .ok_or_else(|| Error::Context(format!("span start {start} is a separator")))?;
        let (seg_e, e) = self
            .locate(end)
            .ok_or_else(|| Error::Context(format!("span end {end} is a separator")))?;
        if seg_s != seg_e || s > e {
            return Err(Error::Context(format!("invalid span {start}..={end}")));
        }
        let seg = self.segment(seg_s);
        Ok(&seg.text[seg.tokens[s].char_start..seg.tokens[e].char_end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn vocab() -> Vocab {
        Vocab::build(std::iter::empty(), 2)
    }

    #[test]
    fn no_truncation_when_it_fits() {
        let ctx = build_context(TokenizedText::new(words(6)), TokenizedText::new(words(100)), &vocab(), 512).unwrap();
        assert_eq!(ctx.len(), 109);
        assert_eq!(ctx.truncated, 0);
        assert_eq!(ctx.q_range, 1..7);
        assert_eq!(ctx.p_range, 8..108);
    }

    #[test]
    fn passage_tail_truncated() {
        let ctx = build_context(TokenizedText::new(words(6)), TokenizedText::new(words(600)), &vocab(), 512).unwrap();
        assert_eq!(ctx.passage.tokens.len(), 503);
        assert_eq!(ctx.len(), 512);
        assert_eq!(ctx.question.tokens.len(), 6);
        assert_eq!(ctx.passage.tokens[502].text, "w502");
    }

    #[test]
    fn empty_passage() {
        let ctx = build_context(TokenizedText::new(words(6)), TokenizedText::new(""), &vocab(), 512).unwrap();
        assert_eq!(ctx.len(), 9);
        assert!(ctx.p_range.is_empty());
    }

    #[test]
    fn oversized_question_is_an_error() {
        let err = build_context(TokenizedText::new(words(20)), TokenizedText::new(""), &vocab(), 16);
        assert!(err.is_err());
    }

    #[test]
    fn vocab_frequency_cutoff() {
        let toks = crate::corpus::tokenize("the The cat sat the mat mat");
        let v = Vocab::build(&toks, 2);
        assert_eq!(v.tokens()[4..], ["the".to_string(), "mat".to_string()]);
        assert_eq!(v.id("THE"), 4);
        assert_eq!(v.id("cat"), Vocab::UNK_ID);
    }

    #[test]
    fn numbers_stay_out_of_vocab() {
        let toks = crate::corpus::tokenize("a 29 - yard kick , 29 - yard kick , 3.5 3.5");
        let v = Vocab::build(&toks, 2);
        assert_eq!(v.id("29"), Vocab::UNK_ID);
        assert_eq!(v.id("3.5"), Vocab::UNK_ID);
        assert_ne!(v.id("yard"), Vocab::UNK_ID);
    }

    #[test]
    fn span_text_uses_source_offsets() {
        let ctx = build_context(
            TokenizedText::new("Which period?"),
            TokenizedText::new("Raiders (1963-1974, 1979-1989)"),
            &vocab(),
            64,
        )
        .unwrap();
        let p = ctx.p_range.start;
        assert_eq!(ctx.span_text(p + 2, p + 4).unwrap(), "1963-1974");
        assert!(ctx.span_text(0, 1).is_err());
        assert!(ctx.span_text(1, p).is_err());
    }
}

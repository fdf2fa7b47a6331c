//! Labeled training instances: context, numbers, rule-derived operations and
//! the derivation set searched from the gold answer.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_context, extract_numbers, AnswerKind, Context, GoldAnswer, NumberMention, RawInstance, Segment,
    TokenizedText, Vocab,
};
use crate::derivations::{search_all, Derivation, DerivationSet};
use crate::error::Result;
use crate::rules::{Operation, OperationSet, RuleSet};

pub const DEFAULT_MIN_COUNT: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub context: Context,
    /// Question mentions first, then passage mentions, in token order.
    pub numbers: Vec<NumberMention>,
    /// Primary answer followed by alternates.
    pub answers: Vec<GoldAnswer>,
    pub operations: OperationSet,
    pub derivations: DerivationSet,
}

impl Instance {
    pub fn usable(&self) -> bool {
        !self.derivations.is_empty()
    }

    pub fn kind(&self) -> AnswerKind {
        self.answers[0].kind()
    }

    pub fn gold_alternates(&self) -> Vec<Vec<String>> {
        self.answers.iter().map(GoldAnswer::texts).collect()
    }
}

/// Vocabulary over every question and passage token.
pub fn build_vocab(raws: &[RawInstance], min_count: usize) -> Vocab {
    let texts: Vec<TokenizedText> = raws
        .iter()
        .flat_map(|r| [TokenizedText::new(&r.question_text), TokenizedText::new(&r.passage_text)])
        .collect();
    Vocab::build(texts.iter().flat_map(|t| t.tokens.iter()), min_count)
}

pub fn context_numbers(ctx: &Context) -> Vec<NumberMention> {
    let mut numbers = extract_numbers(&ctx.question.tokens, Segment::Question);
    numbers.extend(extract_numbers(&ctx.passage.tokens, Segment::Passage));
    numbers
}

pub fn label_instance(raw: &RawInstance, vocab: &Vocab, rules: &RuleSet, max_seq_len: usize) -> Result<Instance> {
    let context = build_context(
        TokenizedText::new(&raw.question_text),
        TokenizedText::new(&raw.passage_text),
        vocab,
        max_seq_len,
    )?;
    let numbers = context_numbers(&context);
    let operations = rules.match_tokens(&context.question.tokens);
    let derivations = search_all(&context, &numbers, raw.primary_answer());
    Ok(Instance {
        id: raw.id.clone(),
        context,
        numbers,
        answers: raw.answers.clone(),
        operations,
        derivations,
    })
}

pub fn label_all(raws: &[RawInstance], vocab: &Vocab, rules: &RuleSet, max_seq_len: usize) -> Result<Vec<Instance>> {
    raws.iter().map(|r| label_instance(r, vocab, rules, max_seq_len)).collect()
}

/// One line of the labeled-instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub question: String,
    pub answer: GoldAnswer,
    pub operations: Vec<Operation>,
    pub derivations: Vec<Derivation>,
    /// Candidates rejected by the execution check.
    pub dropped: usize,
    pub usable: bool,
}

impl LabelRecord {
    pub fn from_instance(inst: &Instance) -> Self {
        LabelRecord {
            id: inst.id.clone(),
            question: inst.context.question.text.clone(),
            answer: inst.answers[0].clone(),
            operations: inst.operations.iter().copied().collect(),
            derivations: inst.derivations.derivations.clone(),
            dropped: inst.derivations.dropped,
            usable: inst.usable(),
        }
    }
}

pub fn write_labels<W: Write>(instances: &[Instance], mut out: W) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, &LabelRecord::from_instance(inst))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivations::AnswerType;

    #[test]
    fn labels_a_max_question() {
        let raw = RawInstance {
            id: "q".into(),
            passage_text: "Smith kicked a 29-yard field goal and Jones kicked an 80-yard field goal.".into(),
            question_text: "How many yards was the longest field goal?".into(),
            answers: vec![GoldAnswer::number("80")],
        };
        let vocab = build_vocab(std::slice::from_ref(&raw), 1);
        let inst = label_instance(&raw, &vocab, &RuleSet::bundled(), 128).unwrap();
        assert!(inst.usable());
        assert_eq!(inst.operations.iter().copied().collect::<Vec<_>>(), vec![Operation::Max]);
        let types: Vec<AnswerType> = inst.derivations.derivations.iter().map(|d| d.answer_type).collect();
        assert!(types.contains(&AnswerType::PassageSpan));
        assert!(types.contains(&AnswerType::ArithmeticExpression));
        let mut buf = Vec::new();
        write_labels(&[inst], &mut buf).unwrap();
        let rec: LabelRecord = serde_json::from_slice(&buf).unwrap();
        assert!(rec.usable);
        assert_eq!(rec.operations, vec![Operation::Max]);
    }
}

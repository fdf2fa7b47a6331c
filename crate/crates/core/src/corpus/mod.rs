//! Ingestion of DROP-format data: tokenization, number mentions and the joint
//! question/passage sequence.

mod context;
mod decimal;
mod numbers;
mod tokenize;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use context::{build_context, Context, TokenizedText, Vocab, CLS, PAD, SEP, SEPARATORS, UNK};
pub use decimal::Decimal;
pub use numbers::{extract_numbers, token_value, NumberMention, Segment};
pub use tokenize::{tokenize, Token};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GoldAnswer {
    Number { number_text: String },
    Spans { spans: Vec<String> },
    Date { day: String, month: String, year: String },
}

impl GoldAnswer {
    pub fn number(text: impl Into<String>) -> Self {
        GoldAnswer::Number {
            number_text: text.into(),
        }
    }

    pub fn spans<S: Into<String>>(spans: impl IntoIterator<Item = S>) -> Self {
        GoldAnswer::Spans {
            spans: spans.into_iter().map(Into::into).collect(),
        }
    }

    pub fn kind(&self) -> AnswerKind {
        match self {
            GoldAnswer::Number { .. } => AnswerKind::Number,
            GoldAnswer::Spans { .. } => AnswerKind::Spans,
            GoldAnswer::Date { .. } => AnswerKind::Date,
        }
    }

    /// Answer strings as scored; dates are flattened to one span of their
    /// non-empty day, month and year fields.
    pub fn texts(&self) -> Vec<String> {
        match self {
            GoldAnswer::Number { number_text } => vec![number_text.clone()],
            GoldAnswer::Spans { spans } => spans.clone(),
            GoldAnswer::Date { day, month, year } => {
                let parts: Vec<&str> = [day, month, year]
                    .into_iter()
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .collect();
                vec![parts.join(" ")]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Number,
    Spans,
    Date,
}

impl AnswerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerKind::Number => "number",
            AnswerKind::Spans => "spans",
            AnswerKind::Date => "date",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstance {
    pub id: String,
    pub passage_text: String,
    pub question_text: String,
    /// The first answer is primary; the rest are validation alternates.
    pub answers: Vec<GoldAnswer>,
}

impl RawInstance {
    pub fn primary_answer(&self) -> &GoldAnswer {
        &self.answers[0]
    }
}

/// Instances loaded from a DROP file plus the qa pairs that were skipped.
#[derive(Clone, Debug, Default)]
pub struct DropDataset {
    pub instances: Vec<RawInstance>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct DropPassage {
    passage: String,
    qa_pairs: Vec<DropQa>,
}

#[derive(Deserialize)]
struct DropQa {
    query_id: String,
    question: String,
    answer: DropAnswer,
    #[serde(default)]
    validated_answers: Vec<DropAnswer>,
}

#[derive(Deserialize, Default)]
struct DropAnswer {
    #[serde(default)]
    number: NumberField,
    #[serde(default)]
    spans: Vec<String>,
    #[serde(default)]
    date: DropDate,
}

#[derive(Deserialize, Default)]
#[serde(untagged)]
enum NumberField {
    Text(String),
    Float(f64),
    #[default]
    Missing,
}

#[derive(Deserialize, Default)]
struct DropDate {
    #[serde(default)]
    day: String,
    #[serde(default)]
    month: String,
    #[serde(default)]
    year: String,
}

impl DropAnswer {
    /// Resolves the answer kind with precedence number > spans > date.
    fn resolve(self) -> Option<GoldAnswer> {
        let number = match self.number {
            NumberField::Text(s) => s.trim().to_string(),
            NumberField::Float(f) => Decimal::parse(&f.to_string()).map_or_else(|| f.to_string(), |d| d.to_string()),
            NumberField::Missing => String::new(),
        };
        if !number.is_empty() {
            return Some(GoldAnswer::Number {
                number_text: number,
            });
        }
        let spans: Vec<String> = self
            .spans
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if !spans.is_empty() {
            return Some(GoldAnswer::Spans { spans });
        }
        let DropDate { day, month, year } = self.date;
        if [&day, &month, &year].iter().any(|s| !s.trim().is_empty()) {
            return Some(GoldAnswer::Date { day, month, year });
        }
        None
    }
}

pub fn load_drop_json(path: impl AsRef<Path>) -> Result<DropDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    parse_drop_json(&text)
}

pub fn parse_drop_json(text: &str) -> Result<DropDataset> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::DropJson {
        passage_id: None,
        message: e.to_string(),
    })?;
    let Value::Object(passages) = root else {
        return Err(Error::DropJson {
            passage_id: None,
            message: "top level must be an object keyed by passage id".into(),
        });
    };
    let mut out = DropDataset::default();
    let mut seen = std::collections::HashSet::new();
    for (passage_id, body) in passages {
        let passage: DropPassage = serde_json::from_value(body).map_err(|e| Error::DropJson {
            passage_id: Some(passage_id.clone()),
            message: e.to_string(),
        })?;
        for qa in passage.qa_pairs {
            if !seen.insert(qa.query_id.clone()) {
                return Err(Error::DropJson {
                    passage_id: Some(passage_id.clone()),
                    message: format!("duplicate query_id {}", qa.query_id),
                });
            }
            let Some(primary) = qa.answer.resolve() else {
                out.warnings.push(format!(
                    "{passage_id}/{}: every answer field is empty, skipped",
                    qa.query_id
                ));
                continue;
            };
            let mut answers = vec![primary];
            answers.extend(qa.validated_answers.into_iter().filter_map(DropAnswer::resolve));
            out.instances.push(RawInstance {
                id: qa.query_id,
                passage_text: passage.passage.clone(),
                question_text: qa.question,
                answers,
            });
        }
    }
    Ok(out)
}

/// Serializes instances back into the DROP layout. Consecutive instances that
/// share a passage text are grouped under one passage id.
pub fn to_drop_json(instances: &[RawInstance]) -> Value {
    let mut root = serde_json::Map::new();
    let mut current: Option<(String, String, Vec<Value>)> = None;
    let flush = |cur: Option<(String, String, Vec<Value>)>, root: &mut serde_json::Map<String, Value>| {
        if let Some((pid, passage, qas)) = cur {
            root.insert(pid, serde_json::json!({ "passage": passage, "qa_pairs": qas }));
        }
    };
    for inst in instances {
        let qa = serde_json::json!({
            "query_id": inst.id,
            "question": inst.question_text,
            "answer": answer_json(&inst.answers[0]),
            "validated_answers": inst.answers[1..].iter().map(answer_json).collect::<Vec<_>>(),
        });
        match &mut current {
            Some((_, passage, qas)) if *passage == inst.passage_text => qas.push(qa),
            _ => {
                flush(current.take(), &mut root);
                let pid = format!("passage_{}", root.len());
                current = Some((pid, inst.passage_text.clone(), vec![qa]));
            }
        }
    }
    flush(current, &mut root);
    Value::Object(root)
}

fn answer_json(answer: &GoldAnswer) -> Value {
    let empty_date = serde_json::json!({ "day": "", "month": "", "year": "" });
    match answer {
        GoldAnswer::Number { number_text } => {
            serde_json::json!({ "number": number_text, "spans": [], "date": empty_date })
        }
        GoldAnswer::Spans { spans } => serde_json::json!({ "number": "", "spans": spans, "date": empty_date }),
        GoldAnswer::Date { day, month, year } => serde_json::json!({
            "number": "", "spans": [], "date": { "day": day, "month": month, "year": year }
        }),
    }
}

/// One line of the inspection dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpRecord {
    pub id: String,
    pub question: String,
    pub passage: String,
    pub answer: GoldAnswer,
    pub numbers: Vec<NumberMention>,
}

impl DumpRecord {
    pub fn from_raw(raw: &RawInstance) -> Self {
        let mut numbers = extract_numbers(&tokenize(&raw.question_text), Segment::Question);
        numbers.extend(extract_numbers(&tokenize(&raw.passage_text), Segment::Passage));
        DumpRecord {
            id: raw.id.clone(),
            question: raw.question_text.clone(),
            passage: raw.passage_text.clone(),
            answer: raw.answers[0].clone(),
            numbers,
        }
    }
}

pub fn write_dump<W: Write>(instances: &[RawInstance], mut out: W) -> std::io::Result<()> {
    for raw in instances {
        serde_json::to_writer(&mut out, &DumpRecord::from_raw(raw))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#![no_main]

use libfuzzer_sys::fuzz_target;
use opreason::corpus::{build_context, tokenize, TokenizedText, Vocab};
use opreason::dataset::context_numbers;
use opreason::eval::{decode, DecodeOptions};
use opreason::model::ForwardOutput;

/// Log-softmax over logits drawn from the input bytes.
fn log_dist(bytes: &mut impl Iterator<Item = u8>, n: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..n).map(|_| f64::from(bytes.next().unwrap_or(0)) / 16.0).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn triples(bytes: &mut impl Iterator<Item = u8>, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let r = log_dist(bytes, 3);
            [r[0], r[1], r[2]]
        })
        .collect()
}

fuzz_target!(|data: &[u8]| {
    let Some((&split, rest)) = data.split_first() else { return };
    let (text, scores) = rest.split_at((split as usize).min(rest.len()));
    let passage = String::from_utf8_lossy(text);
    let question = "Who scored more, the Bears or the Lions?";
    let vocab = Vocab::build(&tokenize(question), 1);
    let Ok(ctx) = build_context(TokenizedText::new(question), TokenizedText::new(passage.as_ref()), &vocab, 128) else {
        return;
    };
    let numbers = context_numbers(&ctx);
    let mut bytes = scores.iter().copied().cycle().take(scores.len().max(1) * 64);
    let log_p_type = log_dist(&mut bytes, 5);
    let out = ForwardOutput {
        p_op: log_dist(&mut bytes, 11).iter().map(|v| v.exp()).collect(),
        p_type: log_p_type.iter().map(|v| v.exp()).collect(),
        log_p_type,
        question_start: log_dist(&mut bytes, ctx.q_range.len()),
        question_end: log_dist(&mut bytes, ctx.q_range.len()),
        passage_start: log_dist(&mut bytes, ctx.p_range.len()),
        passage_end: log_dist(&mut bytes, ctx.p_range.len()),
        count: log_dist(&mut bytes, 10),
        signs: triples(&mut bytes, numbers.len()),
        bio: triples(&mut bytes, ctx.len()),
        h_op: Vec::new(),
        q_range: ctx.q_range.clone(),
        p_range: ctx.p_range.clone(),
    };
    let pred = decode("fuzz", &out, &ctx, &numbers, &DecodeOptions::default());
    assert!(!pred.answers.is_empty());
});

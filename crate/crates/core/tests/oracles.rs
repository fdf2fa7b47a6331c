//! Independent reference computations checked against the library.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opreason::corpus::GoldAnswer;
use opreason::derivations::{
    execute, matches_gold, search_all, search_arithmetic, AnswerType, Label, DEFAULT_MAX_TERMS, DEFAULT_TOLERANCE,
};
use opreason::model::{Model, ModelConfig};
use opreason::rules::Operation;
use opreason::tensor::{Graph, Tensor};

mod common;

use common::{arith_case, enumerate_signs, setup, ArithCase};

#[test]
fn arithmetic_search_equals_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut nonempty = 0;
    for case in 0..200 {
        let ArithCase {
            values,
            target,
            ctx,
            numbers,
            gold,
        } = arith_case(&mut rng);
        let found: BTreeSet<Vec<i8>> = search_arithmetic(&numbers, &gold, DEFAULT_MAX_TERMS, DEFAULT_TOLERANCE)
            .into_iter()
            .map(|d| match d.label {
                Label::Signs(s) => s,
                other => panic!("unexpected label {other:?}"),
            })
            .collect();
        let oracle = enumerate_signs(&values, target, DEFAULT_MAX_TERMS);
        assert_eq!(found, oracle, "case {case}: values {values:?} target {target}");
        nonempty += usize::from(!oracle.is_empty());

        for d in &search_all(&ctx, &numbers, &gold).derivations {
            let texts = execute(d, &ctx, &numbers).unwrap();
            assert!(matches_gold(&texts, &gold), "case {case}: {d:?} -> {texts:?}");
        }
    }
    assert!(nonempty >= 80, "only {nonempty} reachable targets");
}

#[test]
fn longest_field_goal_instance_has_exactly_two_derivations() {
    let passage = "Oakland would take the lead in the third quarter with wide receiver Johnnie Lee Higgins \
                   catching a 29-yard touchdown pass from Russell, followed up by an 80-yard punt return for a touchdown.";
    let (ctx, numbers) = setup("How many yards was the longest field goals", passage);
    let values: Vec<String> = numbers.iter().map(|m| m.value.to_string()).collect();
    assert_eq!(values, ["29", "80"]);
    let set = search_all(&ctx, &numbers, &GoldAnswer::number("80"));
    assert_eq!(set.derivations.len(), 2);
    let span = set.derivations.iter().find(|d| d.answer_type == AnswerType::PassageSpan).unwrap();
    assert_eq!(execute(span, &ctx, &numbers).unwrap(), ["80"]);
    let ae = set.derivations.iter().find(|d| d.answer_type == AnswerType::ArithmeticExpression).unwrap();
    assert_eq!(ae.label, Label::Signs(vec![0, 1]));
}

#[test]
fn three_touchdown_passes_add_to_seventy_three() {
    let (ctx, numbers) = setup(
        "How many yards of touchdown passes did Matt Ryan throw?",
        "Johnny Knox on a 23-yard touchdown pass. Matt Ryan completed a 40-yard touchdown pass and a 10-yard touchdown pass.",
    );
    let d = opreason::derivations::Derivation {
        answer_type: AnswerType::ArithmeticExpression,
        label: Label::Signs(vec![1, 1, 1]),
    };
    let texts = execute(&d, &ctx, &numbers).unwrap();
    assert_eq!(texts, ["73"]);
    assert_eq!(opreason::eval::em_f1(&texts, &["73".to_string()]), (1.0, 1.0));
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Row-major `a (m x k) * b (k x n)` with plain loops.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

#[test]
fn executor_matches_hand_computed_attention() {
    let config = ModelConfig {
        d_h: 8,
        n_h: 2,
        vocab_size: 10,
        encoder_layers: 1,
        ..ModelConfig::default()
    };
    let model = Model::new(config).unwrap();
    let (d, heads, rows) = (8, 2, 5);
    let dk = d / heads;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hidden: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let value = |name: &str| model.params.get(model.params.id(name).unwrap()).value.data().to_vec();

    for op in [Operation::Addition, Operation::Count, Operation::Span] {
        let tag = op.tag().to_lowercase();
        let table = value("operations.embedding");
        let e = &table[op.index() * d..(op.index() + 1) * d];
        let q = matmul(e, &value(&format!("operations.{tag}.wq")), 1, d, d);
        let keys = matmul(&hidden, &value(&format!("operations.{tag}.wk")), rows, d, d);
        let vals = matmul(&hidden, &value(&format!("operations.{tag}.wv")), rows, d, d);
        let mut expected = vec![0.0; d];
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            let scores: Vec<f64> = (0..rows)
                .map(|r| cols.clone().map(|c| q[c] * keys[r * d + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let alpha = softmax(&scores);
            for c in cols {
                expected[c] = (0..rows).map(|r| alpha[r] * vals[r * d + c]).sum();
            }
        }

        let mut g = Graph::new(&model.params);
        let h = g.constant(Tensor::new(vec![rows, d], hidden.clone()).unwrap());
        let out = model.execute_operation(&mut g, op, h).unwrap();
        assert_eq!(g.value(out).shape(), [1, d]);
        for (a, b) in g.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{op}: {a} vs {b}");
        }
    }
}

use proptest::prelude::*;

use opreason::derivations::{AnswerType, Label};
use opreason::eval::{decode, em_f1, normalize, operation_p_at_n, top_operations, DecodeOptions};
use opreason::model::{mix, ForwardOutput};
use opreason::rules::{compile_ruleset, Operation, OperationSet, DEFAULT_RULES};
use opreason::tensor::{Graph, Tensor};
use opreason::training::lr_at;

mod common;

use common::{log_row_ok, small_model as model, sums_to_one, word_context as context};

fn arb_dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut v| {
        v[0] += 1e-6;
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    })
}

fn triples(rows: Vec<Vec<f64>>) -> Vec<[f64; 3]> {
    rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_distributions_are_normalized(
        seed in any::<u64>(),
        ablate in any::<bool>(),
        q in prop::collection::vec(0usize..16, 1..8),
        p in prop::collection::vec(0usize..16, 0..20),
        nums in prop::collection::vec(0u16..200, 0..4),
    ) {
        let (ctx, numbers) = context(&q, &p, &nums);
        let m = model(seed, ablate);
        let out = m.predict_output(&ctx, &numbers).unwrap();
        prop_assert!(sums_to_one(&out.p_op));
        prop_assert!(sums_to_one(&out.p_type));
        prop_assert!(log_row_ok(&out.question_start) && log_row_ok(&out.question_end));
        if !ctx.p_range.is_empty() {
            prop_assert!(log_row_ok(&out.passage_start) && log_row_ok(&out.passage_end));
        }
        prop_assert!(log_row_ok(&out.count));
        prop_assert_eq!(out.signs.len(), numbers.len());
        prop_assert!(out.signs.iter().all(|r| log_row_ok(r)));
        prop_assert_eq!(out.bio.len(), ctx.len());
        prop_assert!(out.bio.iter().all(|r| log_row_ok(r)));
        if ablate {
            prop_assert!(out.h_op.iter().all(|&v| v == 0.0));
            prop_assert!(out.p_op.iter().all(|&v| v == 1.0 / 11.0));
        }
    }

    #[test]
    fn one_hot_mixture_selects_one_execution(
        op in 0usize..11,
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 11),
    ) {
        let m = model(1, false);
        let mut g = Graph::new(&m.params);
        let mut onehot = vec![0.0; 11];
        onehot[op] = 1.0;
        let p = g.constant(Tensor::row(onehot));
        let ex = g.constant(Tensor::from_rows(&rows).unwrap());
        let h = mix(&mut g, p, ex).unwrap();
        prop_assert_eq!(g.value(h).data(), rows[op].as_slice());
    }

    #[test]
    fn decode_never_fails_on_valid_outputs(
        q in prop::collection::vec(0usize..16, 1..8),
        p in prop::collection::vec(0usize..16, 0..20),
        nums in prop::collection::vec(0u16..200, 0..4),
        p_op in arb_dist(11),
        p_type in arb_dist(5),
        count in arb_dist(10),
        spans in prop::collection::vec(arb_dist(64), 4),
        sign_rows in prop::collection::vec(arb_dist(3), 4),
        bio_rows in prop::collection::vec(arb_dist(3), 64),
    ) {
        let (ctx, numbers) = context(&q, &p, &nums);
        let ln = |v: &f64| v.max(1e-300).ln();
        // Renormalized prefix of a wide random distribution, as log-probabilities.
        let table = |i: usize, n: usize| -> Vec<f64> {
            let s: f64 = spans[i][..n].iter().sum();
            spans[i][..n].iter().map(|v| ln(&(v / s))).collect()
        };
        let rows = |src: &[Vec<f64>], n: usize| triples(src[..n].iter().map(|r| r.iter().map(ln).collect()).collect());
        let out = ForwardOutput {
            p_op,
            log_p_type: p_type.iter().map(ln).collect(),
            p_type,
            question_start: table(0, ctx.q_range.len()),
            question_end: table(1, ctx.q_range.len()),
            passage_start: table(2, ctx.p_range.len()),
            passage_end: table(3, ctx.p_range.len()),
            count: count.iter().map(ln).collect(),
            signs: rows(&sign_rows, numbers.len()),
            bio: rows(&bio_rows, ctx.len()),
            h_op: vec![0.0; 8],
            q_range: ctx.q_range.clone(),
            p_range: ctx.p_range.clone(),
        };
        let pred = decode("x", &out, &ctx, &numbers, &DecodeOptions::default());
        prop_assert!(!pred.answers.is_empty());
        prop_assert!(sums_to_one(&pred.p_op) && sums_to_one(&pred.p_type));
        match (&pred.label, pred.answer_type) {
            (Some(Label::Span { start, end }), AnswerType::QuestionSpan | AnswerType::PassageSpan) => {
                prop_assert!(start <= end && *end < ctx.len());
            }
            (Some(Label::Signs(s)), AnswerType::ArithmeticExpression) => prop_assert_eq!(s.len(), numbers.len()),
            (Some(Label::Count(k)), AnswerType::Count) => prop_assert!(*k < 10),
            (Some(Label::Bio(t)), AnswerType::MultiSpans) => prop_assert_eq!(t.len(), ctx.len()),
            (None, _) => prop_assert!(pred.degenerate),
            (l, t) => prop_assert!(false, "label {:?} under type {:?}", l, t),
        }
    }

    #[test]
    fn em_f1_bounds_and_permutation_symmetry(
        pred in prop::collection::vec("[a-c ]{0,6}", 1..4),
        gold in prop::collection::vec("[a-c ]{0,6}", 1..4),
    ) {
        let (em, f1) = em_f1(&pred, &gold);
        prop_assert!((0.0..=1.0).contains(&em) && (0.0..=1.0).contains(&f1));
        prop_assert!(em <= f1 + 1e-12);
        let mut rp = pred.clone();
        rp.reverse();
        let mut rg = gold.clone();
        rg.rotate_left(1);
        let (em2, f12) = em_f1(&rp, &rg);
        prop_assert_eq!(em, em2);
        prop_assert!((f1 - f12).abs() < 1e-12);
        let (em_self, f1_self) = em_f1(&gold, &gold);
        prop_assert_eq!((em_self, f1_self), (1.0, 1.0));
    }

    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,24}") {
        let once = normalize(&s).text;
        prop_assert_eq!(normalize(&once).text, once);
    }

    #[test]
    fn p_at_n_is_monotone(
        dists in prop::collection::vec(arb_dist(11), 1..12),
        golds in prop::collection::vec(prop::collection::btree_set(0usize..11, 1..3), 12),
    ) {
        let ps: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
        let gold: Vec<OperationSet> = golds
            .iter()
            .take(ps.len())
            .map(|g| g.iter().filter_map(|&i| Operation::from_index(i)).collect())
            .collect();
        let refs: Vec<&OperationSet> = gold.iter().collect();
        let mut last = 0.0;
        for n in 1..=11 {
            let v = operation_p_at_n(&ps, &refs, n).unwrap();
            prop_assert!(v >= last);
            last = v;
        }
        prop_assert_eq!(last, 1.0);
        prop_assert_eq!(top_operations(ps[0], 11).len(), 11);
    }

    #[test]
    fn rule_matching_ignores_case_and_grows_with_templates(
        words in prop::collection::vec(prop::sample::select(vec![
            "how", "many", "yards", "was", "the", "longest", "shortest", "field", "goals", "who", "more",
            "less", "or", "which", "team", "player", "percent", "of", "total", "over",
        ]), 1..10),
    ) {
        let q = words.join(" ");
        let base = compile_ruleset(DEFAULT_RULES).unwrap();
        let ops = base.match_question(&q);
        prop_assert_eq!(&ops, &base.match_question(&q.to_uppercase()));
        let extended = compile_ruleset(&format!("{DEFAULT_RULES}\nCOUNT ::= [Slot] the [Slot]\n")).unwrap();
        prop_assert!(ops.is_subset(&extended.match_question(&q)));
    }

    #[test]
    fn schedule_stays_within_base_rate(step in 0usize..500, total in 1usize..500, frac in 0.0f64..1.0) {
        let lr = lr_at(step.min(total), total, 1e-3, frac);
        prop_assert!((0.0..=1e-3 + 1e-15).contains(&lr));
    }
}

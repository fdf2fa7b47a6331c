//! Answer normalization and DROP-style exact match / F1.

use std::collections::BTreeSet;

use crate::corpus::Decimal;

/// Normalized form of an answer string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub tokens: Vec<String>,
    pub text: String,
}

fn numeric_token(token: &str) -> Option<Decimal> {
    if token.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.' || c == '-') {
        Decimal::parse(token)
    } else {
        None
    }
}

fn normalize_token(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
    if let Some(d) = numeric_token(trimmed) {
        return Some(d.to_string());
    }
    // keep hyphens only between alphanumerics ("1963-1974", "state-of-the-art")
    let chars: Vec<char> = trimmed.chars().collect();
    let mut out = String::with_capacity(trimmed.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c == '-'
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            out.push(c);
        }
    }
    if out.is_empty() || matches!(out.as_str(), "a" | "an" | "the") {
        None
    } else if let Some(d) = numeric_token(&out) {
        // stripping can expose a number ("0*0" -> "00")
        Some(d.to_string())
    } else {
        Some(out)
    }
}

/// Lowercases, strips punctuation and articles, collapses whitespace and
/// canonicalizes numbers (`73.0` and `73` normalize alike).
pub fn normalize(answer: &str) -> Normalized {
    let tokens: Vec<String> = answer.split_whitespace().filter_map(normalize_token).collect();
    let text = tokens.join(" ");
    Normalized { tokens, text }
}

fn is_number(token: &str) -> bool {
    numeric_token(token).is_some()
}

/// Reduces a unit-bearing numeric answer ("80 yards") to its number when the
/// other side is a bare number.
fn numeric_view(span: &Normalized, other: &Normalized) -> Normalized {
    if other.tokens.len() == 1 && is_number(&other.tokens[0]) && span.tokens.len() > 1 {
        let nums: Vec<&String> = span.tokens.iter().filter(|t| is_number(t)).collect();
        if nums.len() == 1 {
            return Normalized {
                tokens: vec![nums[0].clone()],
                text: nums[0].clone(),
            };
        }
    }
    span.clone()
}

fn bag_f1(pred: &Normalized, gold: &Normalized) -> f64 {
    let p: BTreeSet<&String> = pred.tokens.iter().collect();
    let g: BTreeSet<&String> = gold.tokens.iter().collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let gold_numbers: BTreeSet<&&String> = g.iter().filter(|t| is_number(t)).collect();
    if !gold_numbers.is_empty() && !p.iter().any(|t| gold_numbers.contains(t)) {
        return 0.0;
    }
    let common = p.intersection(&g).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / p.len() as f64;
    let recall = common / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Maximum total score over one-to-one assignments of rows to columns.
fn best_assignment(scores: &[Vec<f64>]) -> f64 {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| scores[r][c]).collect()).collect();
        return best_assignment(&transposed);
    }
    if cols > 20 {
        // greedy fallback; never reached by realistic answers
        let mut used = vec![false; cols];
        let mut total = 0.0;
        for row in scores {
            if let Some((c, s)) = row
                .iter()
                .enumerate()
                .filter(|(c, _)| !used[*c])
                .max_by(|a, b| a.1.total_cmp(b.1))
            {
                used[c] = true;
                total += s;
            }
        }
        return total;
    }
    // dp over subsets of used columns, rows assigned in order
    let mut dp = vec![f64::NEG_INFINITY; 1 << cols];
    dp[0] = 0.0;
    let mut best = 0.0f64;
    for mask in 0..(1usize << cols) {
        let row = mask.count_ones() as usize;
        if dp[mask] == f64::NEG_INFINITY {
            continue;
        }
        if row == rows {
            best = best.max(dp[mask]);
            continue;
        }
        for c in 0..cols {
            if mask & (1 << c) == 0 {
                let next = mask | (1 << c);
                dp[next] = dp[next].max(dp[mask] + scores[row][c]);
            }
        }
    }
    best
}

/// Exact match and F1 of a predicted span list against one gold span list.
pub fn em_f1<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> (f64, f64) {
    let mut p: Vec<Normalized> = pred.iter().map(|s| normalize(s.as_ref())).collect();
    let mut g: Vec<Normalized> = gold.iter().map(|s| normalize(s.as_ref())).collect();
    if p.len() == 1 && g.len() == 1 {
        let (p0, g0) = (numeric_view(&p[0], &g[0]), numeric_view(&g[0], &p[0]));
        p[0] = p0;
        g[0] = g0;
    }
    let mut pt: Vec<&str> = p.iter().map(|n| n.text.as_str()).collect();
    let mut gt: Vec<&str> = g.iter().map(|n| n.text.as_str()).collect();
    pt.sort_unstable();
    gt.sort_unstable();
    let em = if pt == gt { 1.0 } else { 0.0 };
    if p.is_empty() || g.is_empty() {
        let f1 = if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
        return (em, f1);
    }
    let scores: Vec<Vec<f64>> = p.iter().map(|pi| g.iter().map(|gi| bag_f1(pi, gi)).collect()).collect();
    let f1 = best_assignment(&scores) / p.len().max(g.len()) as f64;
    // a multiset match is a perfect assignment; keep em <= f1 under float rounding
    (em, if em == 1.0 { 1.0 } else { f1 })
}

/// Best exact match and best F1 over several gold alternates.
pub fn em_f1_max<P: AsRef<str>>(pred: &[P], alternates: &[Vec<String>]) -> (f64, f64) {
    alternates
        .iter()
        .map(|g| em_f1(pred, g))
        .fold((0.0, 0.0), |acc, (em, f1)| (acc.0.max(em), acc.1.max(f1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize("The Raiders").text, "raiders");
        assert_eq!(normalize("73.0").text, normalize("73").text);
        assert_eq!(normalize("1963-1974").text, "1963-1974");
        assert_eq!(normalize("  An  apple, a DAY. ").text, "apple day");
        assert_eq!(normalize("1,000").text, "1000");
        assert_eq!(normalize("U.S.").text, "us");
        assert_eq!(normalize("--").text, "");
        assert_eq!(normalize("0*0").text, normalize(&normalize("0*0").text).text);
    }

    #[test]
    fn exact_and_partial_scores() {
        assert_eq!(em_f1(&["Russell"], &["Russell"]), (1.0, 1.0));
        assert_eq!(em_f1(&["1979-1989"], &["1963-1974"]), (0.0, 0.0));
        assert_eq!(em_f1(&["73"], &["73"]), (1.0, 1.0));
        let (em, f1) = em_f1(&["Kris Brown"], &["Kris Brown", "John Potter"]);
        assert_eq!(em, 0.0);
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn units_on_numeric_answers() {
        assert_eq!(em_f1(&["80 yards"], &["80"]), (1.0, 1.0));
        assert_eq!(em_f1(&["80"], &["80 yards"]), (1.0, 1.0));
        assert_eq!(em_f1(&["81 yards"], &["80"]).0, 0.0);
    }

    #[test]
    fn number_mismatch_zeroes_f1() {
        assert_eq!(em_f1(&["12 yards"], &["13 yards"]), (0.0, 0.0));
        let (_, f1) = em_f1(&["the 12 yard line"], &["12 yard"]);
        assert!(f1 > 0.0);
    }

    #[test]
    fn optimal_assignment_beats_greedy() {
        // greedy on row 0 would take column 0 (0.67) and leave row 1 with 0
        let s = vec![vec![0.67, 0.6], vec![0.5, 0.0]];
        assert!((best_assignment(&s) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn alternates_take_the_max() {
        let alts = vec![vec!["Oakland".to_string()], vec!["Oakland Raiders".to_string()]];
        assert_eq!(em_f1_max(&["Oakland Raiders"], &alts), (1.0, 1.0));
    }
}

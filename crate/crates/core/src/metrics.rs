//! Scoring: class accuracy, micro-F1, word error rate, and SLU-F1 for
//! slot filling.
//!
//! SLU-F1 follows the SLURP scoring convention: hypothesis and reference
//! entities with matching labels are greedily paired by character
//! similarity, and each pair earns partial word- and character-level
//! credit from edit distances; precision/recall are corpus-level.

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

/// Per-task metric aggregation serialized by the score stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: Task,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slu_f1: Option<SluF1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SluF1 {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub word_f1: f64,
    pub char_f1: f64,
}

/// Fraction of exact (ref, hyp) matches.
pub fn accuracy(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("accuracy of an empty pair list".into()));
    }
    let correct = pairs.iter().filter(|(r, h)| r == h).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Micro-averaged F1 over class labels. For single-label classification
/// this equals accuracy; both are reported.
pub fn micro_f1(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("micro-F1 of an empty pair list".into()));
    }
    // Micro counts: every pair contributes one prediction and one reference.
    let tp = pairs.iter().filter(|(r, h)| r == h).count() as f64;
    let fp = pairs.len() as f64 - tp;
    let fn_ = pairs.len() as f64 - tp;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Corpus-level word error rate: total word-level edit distance over total
/// reference words (floored at one word per utterance).
pub fn word_error_rate(pairs: &[(String, String)]) -> f64 {
    let mut errors = 0usize;
    let mut words = 0usize;
    for (r, h) in pairs {
        let rw: Vec<&str> = r.split_whitespace().collect();
        let hw: Vec<&str> = h.split_whitespace().collect();
        errors += edit_distance(&rw, &hw);
        words += rw.len().max(1);
    }
    if pairs.is_empty() {
        return 0.0;
    }
    errors as f64 / words as f64
}

fn normalize_filler(f: &str) -> String {
    f.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn word_credit(reference: &str, hypothesis: &str) -> f64 {
    let rw: Vec<&str> = reference.split_whitespace().collect();
    let hw: Vec<&str> = hypothesis.split_whitespace().collect();
    let denom = rw.len().max(hw.len()).max(1) as f64;
    1.0 - edit_distance(&rw, &hw) as f64 / denom
}

fn char_credit(reference: &str, hypothesis: &str) -> f64 {
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hc: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let denom = rc.len().max(hc.len()).max(1) as f64;
    1.0 - edit_distance(&rc, &hc) as f64 / denom
}

/// SLU-F1 over (label, filler) entity lists, one pair of lists per
/// utterance. Label-matched entities are paired greedily by descending
/// character credit (ties by reference then hypothesis order); unpaired
/// entities contribute zero credit.
pub fn slu_f1(pairs: &[(Vec<(String, String)>, Vec<(String, String)>)]) -> SluF1 {
    let mut word_sum = 0.0;
    let mut char_sum = 0.0;
    let mut n_ref = 0usize;
    let mut n_hyp = 0usize;
    for (refs, hyps) in pairs {
        let refs: Vec<(String, String)> = refs
            .iter()
            .map(|(l, f)| (l.clone(), normalize_filler(f)))
            .collect();
        let hyps: Vec<(String, String)> = hyps
            .iter()
            .map(|(l, f)| (l.clone(), normalize_filler(f)))
            .collect();
        n_ref += refs.len();
        n_hyp += hyps.len();

        let mut ref_used = vec![false; refs.len()];
        let mut hyp_used = vec![false; hyps.len()];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, r) in refs.iter().enumerate() {
                if ref_used[i] {
                    continue;
                }
                for (j, h) in hyps.iter().enumerate() {
                    if hyp_used[j] || r.0 != h.0 {
                        continue;
                    }
                    let c = char_credit(&r.1, &h.1);
                    let better = match best {
                        None => true,
                        Some((bc, bi, bj)) => c > bc || (c == bc && (i, j) < (bi, bj)),
                    };
                    if better {
                        best = Some((c, i, j));
                    }
                }
            }
            let Some((c, i, j)) = best else { break };
            ref_used[i] = true;
            hyp_used[j] = true;
            word_sum += word_credit(&refs[i].1, &hyps[j].1);
            char_sum += c;
        }
    }

    // Perfect-empty convention: no references and no hypotheses anywhere
    // scores 1.0; otherwise 0/0 ratios collapse to 0.
    if n_ref == 0 && n_hyp == 0 {
        return SluF1 {
            p: 1.0,
            r: 1.0,
            f1: 1.0,
            word_f1: 1.0,
            char_f1: 1.0,
        };
    }
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let p_w = ratio(word_sum, n_hyp);
    let r_w = ratio(word_sum, n_ref);
    let p_c = ratio(char_sum, n_hyp);
    let r_c = ratio(char_sum, n_ref);
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let p = (p_w + p_c) / 2.0;
    let r = (r_w + r_c) / 2.0;
    SluF1 {
        p,
        r,
        f1: f1(p, r),
        word_f1: f1(p_w, r_w),
        char_f1: f1(p_c, r_c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn accuracy_hand_cases() {
        assert_eq!(accuracy(&[(s("a"), s("a")), (s("b"), s("c"))]).unwrap(), 0.5);
        assert_eq!(accuracy(&[(s("a"), s("a"))]).unwrap(), 1.0);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn micro_f1_hand_cases() {
        let perfect = vec![(s("a"), s("a")), (s("b"), s("b"))];
        assert_eq!(micro_f1(&perfect).unwrap(), 1.0);
        let all_wrong = vec![(s("a"), s("z")), (s("b"), s("z")), (s("c"), s("z"))];
        assert_eq!(micro_f1(&all_wrong).unwrap(), 0.0);
        // Confusion {a->a, a->b, b->b, c->b}: TP=2 of 4.
        let mixed = vec![
            (s("a"), s("a")),
            (s("a"), s("b")),
            (s("b"), s("b")),
            (s("c"), s("b")),
        ];
        assert!((micro_f1(&mixed).unwrap() - 0.5).abs() < 1e-9);
        assert!((accuracy(&mixed).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn wer_hand_cases() {
        assert!((word_error_rate(&[(s("a b c"), s("a x c"))]) - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(word_error_rate(&[(s("same here"), s("same here"))]), 0.0);
        // Empty reference uses the max(1, .) convention.
        assert!((word_error_rate(&[(s(""), s("a b"))]) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn wer_ignores_surrounding_whitespace() {
        let a = word_error_rate(&[(s("  a b  "), s("a b"))]);
        assert_eq!(a, 0.0);
    }

    fn ents(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(l, f)| (s(l), s(f))).collect()
    }

    #[test]
    fn slu_f1_exact_match() {
        let pairs = vec![(
            ents(&[("date", "march first")]),
            ents(&[("date", "march first")]),
        )];
        let out = slu_f1(&pairs);
        assert!((out.p - 1.0).abs() < 1e-9);
        assert!((out.r - 1.0).abs() < 1e-9);
        assert!((out.f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slu_f1_total_miss() {
        let pairs = vec![(ents(&[("date", "march first")]), ents(&[]))];
        let out = slu_f1(&pairs);
        assert_eq!(out.r, 0.0);
        assert_eq!(out.f1, 0.0);
    }

    #[test]
    fn slu_f1_partial_credit_half() {
        // ref (date, "march first") vs hyp (date, "march"):
        // words: 1 - 1/2 = 0.5; chars "marchfirst" vs "march": 1 - 5/10 = 0.5.
        let pairs = vec![(
            ents(&[("date", "march first")]),
            ents(&[("date", "march")]),
        )];
        let out = slu_f1(&pairs);
        assert!((out.p - 0.5).abs() < 1e-9);
        assert!((out.r - 0.5).abs() < 1e-9);
        assert!((out.f1 - 0.5).abs() < 1e-9);
        assert!((out.word_f1 - 0.5).abs() < 1e-9);
        assert!((out.char_f1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn slu_f1_label_mismatch_earns_nothing() {
        let pairs = vec![(
            ents(&[("date", "march")]),
            ents(&[("time", "march")]),
        )];
        let out = slu_f1(&pairs);
        assert_eq!(out.f1, 0.0);
    }

    #[test]
    fn slu_f1_perfect_empty_convention() {
        let pairs = vec![(ents(&[]), ents(&[]))];
        let out = slu_f1(&pairs);
        assert_eq!(out.f1, 1.0);
    }

    #[test]
    fn slu_f1_filler_normalization() {
        let pairs = vec![(
            ents(&[("date", "March  First")]),
            ents(&[("date", "march first")]),
        )];
        assert!((slu_f1(&pairs).f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slu_f1_one_iff_exact_multisets() {
        let exact = vec![(
            ents(&[("a", "x"), ("b", "y")]),
            ents(&[("b", "y"), ("a", "x")]),
        )];
        assert!((slu_f1(&exact).f1 - 1.0).abs() < 1e-12);
        let extra_hyp = vec![(
            ents(&[("a", "x")]),
            ents(&[("a", "x"), ("a", "x")]),
        )];
        assert!(slu_f1(&extra_hyp).f1 < 1.0);
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            use rand::seq::SliceRandom;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let classes = ["a", "b", "c"];
            let mut pairs: Vec<(String, String)> = (0..12)
                .map(|_| {
                    (
                        s(classes[rng.random_range(0..3)]),
                        s(classes[rng.random_range(0..3)]),
                    )
                })
                .collect();
            let acc1 = accuracy(&pairs).unwrap();
            let f1_1 = micro_f1(&pairs).unwrap();
            let wer1 = word_error_rate(&pairs);
            pairs.shuffle(&mut rng);
            prop_assert!((acc1 - accuracy(&pairs).unwrap()).abs() < 1e-12);
            prop_assert!((f1_1 - micro_f1(&pairs).unwrap()).abs() < 1e-12);
            prop_assert!((wer1 - word_error_rate(&pairs)).abs() < 1e-12);
        }

        #[test]
        fn accuracy_equals_micro_f1(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let classes = ["x", "y", "z", "w"];
            let pairs: Vec<(String, String)> = (1..=rng.random_range(1..20))
                .map(|_| {
                    (
                        s(classes[rng.random_range(0..4)]),
                        s(classes[rng.random_range(0..4)]),
                    )
                })
                .collect();
            prop_assert!((accuracy(&pairs).unwrap() - micro_f1(&pairs).unwrap()).abs() < 1e-12);
        }
    }
}

//! CTC dynamic programs: log-domain forward loss, its gradient, and
//! prefix scoring for joint decoding.
//!
//! The blank symbol is token id 0 throughout. Repeated labels require a
//! separating blank, so a label needs `len + repeats` frames to be
//! feasible.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tokenizer::BLANK;

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse2(a: f64, b: f64) -> f64 {
    if a == NEG_INF && b == NEG_INF {
        return NEG_INF;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

/// Minimum number of frames needed to emit `label` under CTC rules.
pub fn min_frames(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtcOutcome {
    Finite(f64),
    /// The label cannot be aligned within the available frames.
    Infeasible,
}

fn check_label(log_probs: &Array2<f64>, label: &[usize]) -> Result<()> {
    let vocab = log_probs.ncols();
    for &l in label {
        if l == BLANK {
            return Err(Error::Train("CTC label contains the blank symbol".into()));
        }
        if l >= vocab {
            return Err(Error::Train(format!(
                "CTC label id {l} out of range for vocab {vocab}"
            )));
        }
    }
    Ok(())
}

fn extended_label(label: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(BLANK);
    for &l in label {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn forward_alphas(log_probs: &Array2<f64>, ext: &[usize]) -> Array2<f64> {
    let t_len = log_probs.nrows();
    let s_len = ext.len();
    let mut alpha = Array2::from_elem((t_len, s_len), NEG_INF);
    alpha[(0, 0)] = log_probs[(0, ext[0])];
    if s_len > 1 {
        alpha[(0, 1)] = log_probs[(0, ext[1])];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let stay = alpha[(t - 1, s)];
            let step = if s >= 1 { alpha[(t - 1, s - 1)] } else { NEG_INF };
            let skip = if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                alpha[(t - 1, s - 2)]
            } else {
                NEG_INF
            };
            let acc = lse3(stay, step, skip);
            if acc != NEG_INF {
                alpha[(t, s)] = log_probs[(t, ext[s])] + acc;
            }
        }
    }
    alpha
}

/// Negative log-likelihood of `label` under CTC: the log-domain forward
/// recursion over the blank-interleaved label.
pub fn ctc_loss(log_probs: &Array2<f64>, label: &[usize]) -> Result<CtcOutcome> {
    check_label(log_probs, label)?;
    let t_len = log_probs.nrows();
    if t_len == 0 || t_len < min_frames(label) {
        return Ok(CtcOutcome::Infeasible);
    }
    let ext = extended_label(label);
    let alpha = forward_alphas(log_probs, &ext);
    let s_len = ext.len();
    let mut log_z = alpha[(t_len - 1, s_len - 1)];
    if s_len >= 2 {
        log_z = lse2(log_z, alpha[(t_len - 1, s_len - 2)]);
    }
    if log_z == NEG_INF {
        return Ok(CtcOutcome::Infeasible);
    }
    Ok(CtcOutcome::Finite(-log_z))
}

/// CTC loss and its gradient with respect to the per-frame log-probabilities.
/// Returns `None` when the label is infeasible for the frame count.
pub fn ctc_loss_with_grad(
    log_probs: &Array2<f64>,
    label: &[usize],
) -> Result<Option<(f64, Array2<f64>)>> {
    check_label(log_probs, label)?;
    let t_len = log_probs.nrows();
    if t_len == 0 || t_len < min_frames(label) {
        return Ok(None);
    }
    let ext = extended_label(label);
    let s_len = ext.len();
    let alpha = forward_alphas(log_probs, &ext);
    let mut log_z = alpha[(t_len - 1, s_len - 1)];
    if s_len >= 2 {
        log_z = lse2(log_z, alpha[(t_len - 1, s_len - 2)]);
    }
    if log_z == NEG_INF {
        return Ok(None);
    }

    // Backward pass; beta excludes the current frame's emission so that
    // alpha + beta is the total path mass through (t, s).
    let mut beta = Array2::from_elem((t_len, s_len), NEG_INF);
    beta[(t_len - 1, s_len - 1)] = 0.0;
    if s_len >= 2 {
        beta[(t_len - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let stay = log_probs[(t + 1, ext[s])] + beta[(t + 1, s)];
            let step = if s + 1 < s_len {
                log_probs[(t + 1, ext[s + 1])] + beta[(t + 1, s + 1)]
            } else {
                NEG_INF
            };
            let skip = if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                log_probs[(t + 1, ext[s + 2])] + beta[(t + 1, s + 2)]
            } else {
                NEG_INF
            };
            beta[(t, s)] = lse3(stay, step, skip);
        }
    }

    // d(-logZ)/d logp[t][k] = -sum_{s: ext[s]=k} exp(alpha + beta - logZ).
    let vocab = log_probs.ncols();
    let mut grad = Array2::zeros((t_len, vocab));
    for t in 0..t_len {
        let mut acc = vec![NEG_INF; vocab];
        for s in 0..s_len {
            let m = alpha[(t, s)] + beta[(t, s)];
            if m != NEG_INF {
                acc[ext[s]] = lse2(acc[ext[s]], m);
            }
        }
        for k in 0..vocab {
            if acc[k] != NEG_INF {
                grad[(t, k)] = -(acc[k] - log_z).exp();
            }
        }
    }
    Ok(Some((-log_z, grad)))
}

/// Incremental CTC prefix scoring: the probability mass of all complete
/// sequences that begin with a given prefix, maintained per hypothesis.
pub struct CtcPrefixScorer<'a> {
    log_probs: &'a Array2<f64>,
}

/// Per-hypothesis scoring state. `r_nonblank[t]` / `r_blank[t]` hold the
/// log-probability that frames 0..=t collapse to exactly the prefix with a
/// non-blank / blank final frame.
#[derive(Debug, Clone)]
pub struct PrefixState {
    r_nonblank: Vec<f64>,
    r_blank: Vec<f64>,
    last: Option<usize>,
    log_psi: f64,
}

impl PrefixState {
    /// Cumulative prefix score log Psi; 0 for the empty prefix by definition.
    pub fn prefix_score(&self) -> f64 {
        self.log_psi
    }
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_probs: &'a Array2<f64>) -> Self {
        CtcPrefixScorer { log_probs }
    }

    pub fn frames(&self) -> usize {
        self.log_probs.nrows()
    }

    /// State for the empty prefix.
    pub fn initial(&self) -> PrefixState {
        let t_len = self.frames();
        let mut r_blank = vec![NEG_INF; t_len];
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += self.log_probs[(t, BLANK)];
            r_blank[t] = acc;
        }
        PrefixState {
            r_nonblank: vec![NEG_INF; t_len],
            r_blank,
            last: None,
            log_psi: 0.0,
        }
    }

    /// Extends a prefix by one non-blank token, returning the new state.
    pub fn extend(&self, state: &PrefixState, token: usize) -> PrefixState {
        debug_assert_ne!(token, BLANK);
        let t_len = self.frames();
        let mut r_nonblank = vec![NEG_INF; t_len];
        let mut r_blank = vec![NEG_INF; t_len];
        let mut psi = NEG_INF;
        for t in 0..t_len {
            // Mass of the old prefix ending just before frame t, eligible to
            // start emitting `token` at t.
            let phi = if t == 0 {
                if state.last.is_none() {
                    0.0
                } else {
                    NEG_INF
                }
            } else {
                let from_nonblank = if state.last == Some(token) {
                    NEG_INF
                } else {
                    state.r_nonblank[t - 1]
                };
                lse2(state.r_blank[t - 1], from_nonblank)
            };
            let lp_tok = self.log_probs[(t, token)];
            let prev_n = if t > 0 { r_nonblank[t - 1] } else { NEG_INF };
            r_nonblank[t] = lp_tok + lse2(prev_n, phi);
            let prev_b = if t > 0 { r_blank[t - 1] } else { NEG_INF };
            let prev_n_for_b = if t > 0 { r_nonblank[t - 1] } else { NEG_INF };
            r_blank[t] = self.log_probs[(t, BLANK)] + lse2(prev_b, prev_n_for_b);
            psi = lse2(psi, phi + lp_tok);
        }
        PrefixState {
            r_nonblank,
            r_blank,
            last: Some(token),
            log_psi: psi,
        }
    }

    /// Log-probability of the prefix as a complete sequence at end of input;
    /// equals -ctc_loss of the sequence.
    pub fn final_score(&self, state: &PrefixState) -> f64 {
        let t_len = self.frames();
        if t_len == 0 {
            return NEG_INF;
        }
        lse2(state.r_nonblank[t_len - 1], state.r_blank[t_len - 1])
    }
}

/// Scores `prefix` as a CTC prefix over the whole input: log of the summed
/// probability of all alignments whose collapse begins with `prefix`.
pub fn ctc_prefix_score(log_probs: &Array2<f64>, prefix: &[usize]) -> f64 {
    let scorer = CtcPrefixScorer::new(log_probs);
    let mut state = scorer.initial();
    for &tok in prefix {
        state = scorer.extend(&state, tok);
    }
    state.prefix_score()
}

//! Inference: greedy decoding and beam search with joint CTC/attention
//! scoring.
//!
//! The joint score of a finished hypothesis y is
//! `alpha * log P_ctc(y) + (1 - alpha) * log P_att(y) + length_penalty * |y|`,
//! where the attention term includes the eos prediction and the CTC term
//! is the complete-sequence probability. During search, alive prefixes
//! carry the CTC prefix score instead. Ties are broken toward ascending
//! token ids so decoding is deterministic.

use serde::{Deserialize, Serialize};

use crate::ctc::CtcPrefixScorer;
use crate::error::{Error, Result};
use crate::model::{EncodedUtt, SluModel};
use crate::tokenizer::BLANK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// CTC weight alpha in the joint score.
    pub ctc_decode_weight: f64,
    /// Maximum output length as a fraction of the encoder length.
    pub max_len_ratio: f64,
    /// Absolute lower bound on the maximum output length.
    pub max_len_floor: usize,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 10,
            ctc_decode_weight: 0.3,
            max_len_ratio: 1.0,
            max_len_floor: 8,
            length_penalty: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_decode_weight) {
            return Err(Error::Config("ctc_decode_weight must be in [0, 1]".into()));
        }
        if self.max_len_ratio < 0.0 {
            return Err(Error::Config("max_len_ratio must be non-negative".into()));
        }
        Ok(())
    }

    pub fn max_len(&self, enc_valid: usize) -> usize {
        let by_ratio = (self.max_len_ratio * enc_valid as f64).ceil() as usize;
        by_ratio.max(self.max_len_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output tokens without sos/eos.
    pub tokens: Vec<usize>,
    pub score: f64,
}

/// Argmax decoding from sos until eos or the length cap; blank is never
/// emitted. Returns the tokens without sos/eos.
pub fn greedy_decode(model: &SluModel, encoded: &EncodedUtt, max_len: usize) -> Result<Vec<usize>> {
    let eos = model.sos_eos();
    let mut prefix = vec![eos];
    let mut out = Vec::new();
    for _ in 0..max_len {
        let lp = model.next_token_log_probs(encoded, &prefix)?;
        let mut best = None;
        for (tok, &score) in lp.iter().enumerate() {
            if tok == BLANK {
                continue;
            }
            if best.map(|(_, s)| score > s).unwrap_or(true) {
                best = Some((tok, score));
            }
        }
        let (tok, _) = best.expect("vocabulary has non-blank tokens");
        if tok == eos {
            return Ok(out);
        }
        out.push(tok);
        prefix.push(tok);
    }
    Ok(out)
}

struct Alive {
    tokens: Vec<usize>,
    att: f64,
    ctc: Option<crate::ctc::PrefixState>,
    joint: f64,
}

fn rank_hyps<T, F: Fn(&T) -> (f64, &Vec<usize>)>(hyps: &mut Vec<T>, key: F) {
    hyps.sort_by(|a, b| {
        let (sa, ta) = key(a);
        let (sb, tb) = key(b);
        sb.partial_cmp(&sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ta.cmp(tb))
    });
}

/// Beam search over the joint CTC/attention score. Hypotheses end on eos;
/// the ranked n-best list is returned with non-increasing scores.
pub fn beam_search(
    model: &SluModel,
    encoded: &EncodedUtt,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let eos = model.sos_eos();
    let alpha = cfg.ctc_decode_weight;
    let max_len = cfg.max_len(encoded.valid);
    let scorer = (alpha > 0.0).then(|| CtcPrefixScorer::new(&encoded.ctc_log_probs));

    let mut alive = vec![Alive {
        tokens: Vec::new(),
        att: 0.0,
        ctc: scorer.as_ref().map(|s| s.initial()),
        joint: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..=max_len {
        if alive.is_empty() {
            break;
        }
        let mut next: Vec<Alive> = Vec::new();
        for hyp in &alive {
            let mut prefix = Vec::with_capacity(hyp.tokens.len() + 1);
            prefix.push(eos);
            prefix.extend_from_slice(&hyp.tokens);
            let lp = model.next_token_log_probs(encoded, &prefix)?;

            // Terminate on eos: attention includes the eos step, CTC switches
            // to the complete-sequence score.
            let att_final = hyp.att + lp[eos];
            let ctc_final = match (&scorer, &hyp.ctc) {
                (Some(s), Some(state)) => s.final_score(state),
                _ => 0.0,
            };
            let score = (1.0 - alpha) * att_final
                + alpha * ctc_final
                + cfg.length_penalty * hyp.tokens.len() as f64;
            finished.push(Hypothesis {
                tokens: hyp.tokens.clone(),
                score,
            });

            if step == max_len {
                continue;
            }
            for (tok, &tok_lp) in lp.iter().enumerate() {
                if tok == BLANK || tok == eos {
                    continue;
                }
                let att = hyp.att + tok_lp;
                let (ctc_state, ctc_score) = match (&scorer, &hyp.ctc) {
                    (Some(s), Some(state)) => {
                        let new_state = s.extend(state, tok);
                        let score = new_state.prefix_score();
                        (Some(new_state), score)
                    }
                    _ => (None, 0.0),
                };
                let joint = (1.0 - alpha) * att + alpha * ctc_score;
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                next.push(Alive {
                    tokens,
                    att,
                    ctc: ctc_state,
                    joint,
                });
            }
        }
        rank_hyps(&mut next, |h| (h.joint, &h.tokens));
        next.truncate(cfg.beam_size);
        alive = next;
    }

    rank_hyps(&mut finished, |h| (h.score, &h.tokens));
    finished.truncate(cfg.beam_size);
    Ok(finished)
}

//! Graph builders for the hybrid CTC/attention network, plus thin
//! eval-mode forward helpers used by decoding and scoring.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, VarId};
use crate::error::{Error, Result};
use crate::model::{subsampled_len, EncoderType, ModelConfig, Parameters};

const LN_EPS: f64 = 1e-5;

/// Absolute sinusoidal positional encoding, rows × d_model.
pub fn sinusoidal_positional_encoding(len: usize, d_model: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d_model));
    for pos in 0..len {
        for i in 0..d_model {
            let exponent = (2 * (i / 2)) as f64 / d_model as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[(pos, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn neg_inf_mask_cols(rows: usize, cols: usize, valid: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(_, j)| {
        if j < valid {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

fn causal_mask(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, j)| {
        if j <= i {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

pub struct EncodeOut {
    /// Hidden sequence consumed by the decoder and the CTC head.
    pub hidden: VarId,
    /// Valid (unpadded) positions in the hidden sequence.
    pub valid: usize,
}

/// Builds network forward passes on an autodiff graph.
pub struct NetBuilder<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a Parameters,
    pub train: bool,
}

impl<'a> NetBuilder<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a Parameters, train: bool) -> Self {
        NetBuilder { cfg, params, train }
    }

    fn p(&self, g: &mut Graph, name: &str) -> VarId {
        g.leaf(name, self.params.get(name).clone())
    }

    fn linear(&self, g: &mut Graph, x: VarId, prefix: &str) -> VarId {
        let w = self.p(g, &format!("{prefix}.w"));
        let b = self.p(g, &format!("{prefix}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn layer_norm(&self, g: &mut Graph, x: VarId, prefix: &str) -> VarId {
        let gamma = self.p(g, &format!("{prefix}.g"));
        let beta = self.p(g, &format!("{prefix}.b"));
        g.layer_norm(x, gamma, beta, LN_EPS)
    }

    fn dropout(&self, g: &mut Graph, x: VarId, rng: &mut ChaCha8Rng) -> VarId {
        let p = self.cfg.dropout;
        if !self.train || p == 0.0 {
            return x;
        }
        let dim = g.value(x).dim();
        let keep = 1.0 / (1.0 - p);
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.random_range(0.0..1.0) < p {
                0.0
            } else {
                keep
            }
        });
        g.dropout(x, mask)
    }

    /// Multi-head scaled dot-product attention; `mask` is an additive
    /// (rows(q) × rows(kv)) matrix with -inf at disallowed key positions.
    fn attention(
        &self,
        g: &mut Graph,
        q_in: VarId,
        kv_in: VarId,
        prefix: &str,
        mask: Option<&Array2<f64>>,
        dim: usize,
    ) -> VarId {
        let q = {
            let w = self.p(g, &format!("{prefix}.wq"));
            let b = self.p(g, &format!("{prefix}.bq"));
            let y = g.matmul(q_in, w);
            g.add_row(y, b)
        };
        let k = {
            let w = self.p(g, &format!("{prefix}.wk"));
            let b = self.p(g, &format!("{prefix}.bk"));
            let y = g.matmul(kv_in, w);
            g.add_row(y, b)
        };
        let v = {
            let w = self.p(g, &format!("{prefix}.wv"));
            let b = self.p(g, &format!("{prefix}.bv"));
            let y = g.matmul(kv_in, w);
            g.add_row(y, b)
        };
        let heads = self.cfg.heads;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let scores = match mask {
                Some(m) => g.add_const(scores, m),
                None => scores,
            };
            let weights = g.softmax_rows_op(scores);
            contexts.push(g.matmul(weights, vh));
        }
        let cat = g.concat_cols(&contexts);
        let wo = self.p(g, &format!("{prefix}.wo"));
        let bo = self.p(g, &format!("{prefix}.bo"));
        let y = g.matmul(cat, wo);
        g.add_row(y, bo)
    }

    fn feed_forward(&self, g: &mut Graph, x: VarId, prefix: &str) -> VarId {
        let w1 = self.p(g, &format!("{prefix}.w1"));
        let b1 = self.p(g, &format!("{prefix}.b1"));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.swish(h);
        let w2 = self.p(g, &format!("{prefix}.w2"));
        let b2 = self.p(g, &format!("{prefix}.b2"));
        let y = g.matmul(h, w2);
        g.add_row(y, b2)
    }

    /// Two stride-2 kernel-3 valid convolutions over time (about 4x
    /// reduction). Input frames × input_dim, output T' × d_model.
    pub fn subsample(&self, g: &mut Graph, features: &Array2<f64>) -> Result<VarId> {
        let frames = features.nrows();
        if subsampled_len(frames).is_none() {
            return Err(Error::Model(format!(
                "subsampling needs at least 7 frames, got {frames}"
            )));
        }
        if features.ncols() != self.cfg.input_dim {
            return Err(Error::Model(format!(
                "feature dim {} does not match configured input_dim {}",
                features.ncols(),
                self.cfg.input_dim
            )));
        }
        let x = g.input(features.clone());
        let u1 = g.unfold_rows(x, 3, 2);
        let c1 = self.linear(g, u1, "sub.conv1");
        let c1 = g.swish(c1);
        let u2 = g.unfold_rows(c1, 3, 2);
        let c2 = self.linear(g, u2, "sub.conv2");
        Ok(g.swish(c2))
    }

    fn transformer_block(
        &self,
        g: &mut Graph,
        x: VarId,
        prefix: &str,
        mask: Option<&Array2<f64>>,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> VarId {
        let a_in = self.layer_norm(g, x, &format!("{prefix}.ln1"));
        let a = self.attention(g, a_in, a_in, &format!("{prefix}.attn"), mask, dim);
        let a = self.dropout(g, a, rng);
        let x = g.add(x, a);
        let f_in = self.layer_norm(g, x, &format!("{prefix}.ln2"));
        let f = self.feed_forward(g, f_in, &format!("{prefix}.ff"));
        let f = self.dropout(g, f, rng);
        g.add(x, f)
    }

    fn conformer_block(
        &self,
        g: &mut Graph,
        x: VarId,
        prefix: &str,
        mask: Option<&Array2<f64>>,
        row_mask: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> VarId {
        let d = self.cfg.d_model;
        // Macaron feed-forward, half scale.
        let f_in = self.layer_norm(g, x, &format!("{prefix}.ff1.ln"));
        let f = self.feed_forward(g, f_in, &format!("{prefix}.ff1"));
        let f = self.dropout(g, f, rng);
        let f = g.scale(f, 0.5);
        let x = g.add(x, f);
        // Self-attention.
        let a_in = self.layer_norm(g, x, &format!("{prefix}.mha.ln"));
        let a = self.attention(g, a_in, a_in, &format!("{prefix}.attn"), mask, d);
        let a = self.dropout(g, a, rng);
        let x = g.add(x, a);
        // Convolution module: pointwise -> GLU -> depthwise -> norm -> swish
        // -> pointwise. Padded rows are zeroed before the depthwise mix so
        // padding cannot leak into valid positions.
        let c = self.layer_norm(g, x, &format!("{prefix}.conv.ln"));
        let c = self.linear(g, c, &format!("{prefix}.conv.pw1"));
        let c = g.glu(c);
        let c = g.row_mask(c, row_mask);
        let kernel = self.p(g, &format!("{prefix}.conv.dw.w"));
        let c = g.depthwise_conv(c, kernel, (self.cfg.conv_kernel - 1) / 2);
        let db = self.p(g, &format!("{prefix}.conv.dw.b"));
        let c = g.add_row(c, db);
        let c = self.layer_norm(g, c, &format!("{prefix}.conv.norm"));
        let c = g.swish(c);
        let c = self.linear(g, c, &format!("{prefix}.conv.pw2"));
        let c = self.dropout(g, c, rng);
        let x = g.add(x, c);
        // Second half-scale feed-forward, then the block's final norm.
        let f_in = self.layer_norm(g, x, &format!("{prefix}.ff2.ln"));
        let f = self.feed_forward(g, f_in, &format!("{prefix}.ff2"));
        let f = self.dropout(g, f, rng);
        let f = g.scale(f, 0.5);
        let x = g.add(x, f);
        self.layer_norm(g, x, &format!("{prefix}.final_ln"))
    }

    /// Encoder stack over a subsampled hidden sequence. `valid` counts the
    /// unpadded positions; padded positions are masked out of attention.
    pub fn encoder_forward(
        &self,
        g: &mut Graph,
        subsampled: VarId,
        valid: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        let t_len = g.value(subsampled).nrows();
        if valid == 0 || valid > t_len {
            return Err(Error::Model(format!(
                "valid length {valid} out of range for {t_len} frames"
            )));
        }
        let d = self.cfg.d_model;
        let pe = sinusoidal_positional_encoding(t_len, d);
        let x = g.scale(subsampled, (d as f64).sqrt());
        let x = g.add_const(x, &pe);
        let mut x = self.dropout(g, x, rng);
        let mask = (valid < t_len).then(|| neg_inf_mask_cols(t_len, t_len, valid));
        let row_mask: Vec<f64> = (0..t_len).map(|t| if t < valid { 1.0 } else { 0.0 }).collect();
        for i in 0..self.cfg.encoder_blocks {
            let prefix = format!("enc.{i}");
            x = match self.cfg.encoder_type {
                EncoderType::Transformer => {
                    self.transformer_block(g, x, &prefix, mask.as_ref(), d, rng)
                }
                EncoderType::Conformer => {
                    self.conformer_block(g, x, &prefix, mask.as_ref(), &row_mask, rng)
                }
            };
        }
        if self.cfg.encoder_blocks > 0 {
            x = self.layer_norm(g, x, "enc.final_ln");
        }
        Ok(x)
    }

    /// Post-encoder NLU stack: projection into nlu_dim, M self-attention
    /// blocks, projection back. Identity when disabled.
    pub fn post_encoder_forward(
        &self,
        g: &mut Graph,
        hidden: VarId,
        valid: usize,
        rng: &mut ChaCha8Rng,
    ) -> VarId {
        if !self.cfg.post_encoder.enabled {
            return hidden;
        }
        let nd = self.cfg.post_encoder.nlu_dim;
        let t_len = g.value(hidden).nrows();
        let mask = (valid < t_len).then(|| neg_inf_mask_cols(t_len, t_len, valid));
        let mut x = self.linear(g, hidden, "post.down");
        for i in 0..self.cfg.post_encoder.blocks {
            x = self.transformer_block(g, x, &format!("post.{i}"), mask.as_ref(), nd, rng);
        }
        if self.cfg.post_encoder.blocks > 0 {
            x = self.layer_norm(g, x, "post.final_ln");
        }
        self.linear(g, x, "post.up")
    }

    /// Full encoder path: subsample, encoder blocks, post-encoder.
    pub fn encode(
        &self,
        g: &mut Graph,
        features: &Array2<f64>,
        valid_frames: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncodeOut> {
        if valid_frames > features.nrows() {
            return Err(Error::Model("valid_frames exceeds feature rows".into()));
        }
        let valid = subsampled_len(valid_frames).ok_or_else(|| {
            Error::Model(format!(
                "utterance too short: {valid_frames} valid frames, need 7"
            ))
        })?;
        let sub = self.subsample(g, features)?;
        let enc = self.encoder_forward(g, sub, valid, rng)?;
        let hidden = self.post_encoder_forward(g, enc, valid, rng);
        Ok(EncodeOut { hidden, valid })
    }

    /// Autoregressive decoder: causal self-attention plus cross-attention
    /// into the encoder hiddens. Returns len × vocab logits.
    pub fn decoder_forward(
        &self,
        g: &mut Graph,
        hidden: VarId,
        hidden_valid: usize,
        prefix: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        if prefix.is_empty() {
            return Err(Error::Model("decoder prefix is empty".into()));
        }
        let sos = self.cfg.vocab_size - 1;
        if prefix[0] != sos {
            return Err(Error::Model("decoder prefix must begin with sos".into()));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Model(format!("prefix token {bad} out of range")));
        }
        let d = self.cfg.d_model;
        let len = prefix.len();
        let embed = self.p(g, "dec.embed");
        let x = g.gather_rows(embed, prefix);
        let x = g.scale(x, (d as f64).sqrt());
        let pe = sinusoidal_positional_encoding(len, d);
        let x = g.add_const(x, &pe);
        let mut x = self.dropout(g, x, rng);
        let self_mask = causal_mask(len);
        let t_enc = g.value(hidden).nrows();
        let cross_mask = (hidden_valid < t_enc).then(|| neg_inf_mask_cols(len, t_enc, hidden_valid));
        for i in 0..self.cfg.decoder_blocks {
            let a_in = self.layer_norm(g, x, &format!("dec.{i}.ln1"));
            let a = self.attention(
                g,
                a_in,
                a_in,
                &format!("dec.{i}.self_attn"),
                Some(&self_mask),
                d,
            );
            let a = self.dropout(g, a, rng);
            x = g.add(x, a);
            let c_in = self.layer_norm(g, x, &format!("dec.{i}.ln2"));
            let c = self.attention(
                g,
                c_in,
                hidden,
                &format!("dec.{i}.cross_attn"),
                cross_mask.as_ref(),
                d,
            );
            let c = self.dropout(g, c, rng);
            x = g.add(x, c);
            let f_in = self.layer_norm(g, x, &format!("dec.{i}.ln3"));
            let f = self.feed_forward(g, f_in, &format!("dec.{i}.ff"));
            let f = self.dropout(g, f, rng);
            x = g.add(x, f);
        }
        if self.cfg.decoder_blocks > 0 {
            x = self.layer_norm(g, x, "dec.final_ln");
        }
        Ok(self.linear(g, x, "dec.out"))
    }

    /// CTC branch: linear head plus per-frame log-softmax.
    pub fn ctc_log_probs(&self, g: &mut Graph, hidden: VarId) -> VarId {
        let logits = self.linear(g, hidden, "ctc");
        g.log_softmax_rows_op(logits)
    }
}

/// Read-only model handle for eval-mode forwards (decoding, validation).
pub struct SluModel<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a Parameters,
}

/// Eval-mode encoder output for one utterance.
pub struct EncodedUtt {
    pub hidden: Array2<f64>,
    pub valid: usize,
    pub ctc_log_probs: Array2<f64>,
}

impl<'a> SluModel<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a Parameters) -> Self {
        SluModel { cfg, params }
    }

    pub fn sos_eos(&self) -> usize {
        self.cfg.vocab_size - 1
    }

    pub fn encode_eval(&self, features: &Array2<f64>) -> Result<EncodedUtt> {
        let builder = NetBuilder::new(self.cfg, self.params, false);
        let mut g = Graph::new();
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let out = builder.encode(&mut g, features, features.nrows(), &mut rng)?;
        let lp = builder.ctc_log_probs(&mut g, out.hidden);
        Ok(EncodedUtt {
            hidden: g.value(out.hidden).clone(),
            valid: out.valid,
            ctc_log_probs: g.value(lp).clone(),
        })
    }

    /// Logits over the vocabulary for each position of `prefix`.
    pub fn decoder_logits_eval(
        &self,
        encoded: &EncodedUtt,
        prefix: &[usize],
    ) -> Result<Array2<f64>> {
        let builder = NetBuilder::new(self.cfg, self.params, false);
        let mut g = Graph::new();
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let hidden = g.input(encoded.hidden.clone());
        let logits = builder.decoder_forward(&mut g, hidden, encoded.valid, prefix, &mut rng)?;
        Ok(g.value(logits).clone())
    }

    /// Log-probabilities of the next token given `prefix` (last-row softmax).
    pub fn next_token_log_probs(
        &self,
        encoded: &EncodedUtt,
        prefix: &[usize],
    ) -> Result<Vec<f64>> {
        let logits = self.decoder_logits_eval(encoded, prefix)?;
        let last = logits.row(logits.nrows() - 1);
        let m = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = last.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        Ok(last.iter().map(|v| v - z).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, EncoderType, ModelConfig, PostEncoderConfig};
    use rand::SeedableRng;

    fn toy_config(encoder_type: EncoderType) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_blocks: 2,
            decoder_blocks: 1,
            encoder_type,
            ff_dim: 16,
            conv_kernel: 3,
            dropout: 0.0,
            post_encoder: PostEncoderConfig {
                enabled: false,
                ..PostEncoderConfig::default()
            },
            vocab_size: 9,
            input_dim: 5,
        }
    }

    fn rand_features(frames: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((frames, dim), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn subsample_shapes_and_bounds() {
        let cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 1).unwrap();
        let builder = NetBuilder::new(&cfg, &params, false);
        let mut g = Graph::new();
        let sub = builder.subsample(&mut g, &rand_features(98, 5, 2)).unwrap();
        assert_eq!(g.value(sub).dim(), (23, 8));
        let mut g = Graph::new();
        let sub = builder.subsample(&mut g, &rand_features(7, 5, 2)).unwrap();
        assert_eq!(g.value(sub).dim(), (1, 8));
        let mut g = Graph::new();
        assert!(builder.subsample(&mut g, &rand_features(6, 5, 2)).is_err());
    }

    #[test]
    fn zero_blocks_encoder_is_embedding_plus_pe() {
        let mut cfg = toy_config(EncoderType::Transformer);
        cfg.encoder_blocks = 0;
        let params = init_model(&cfg, 3).unwrap();
        let builder = NetBuilder::new(&cfg, &params, false);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feats = rand_features(20, 5, 4);
        let sub = builder.subsample(&mut g, &feats).unwrap();
        let sub_val = g.value(sub).clone();
        let enc = builder.encoder_forward(&mut g, sub, 4, &mut rng).unwrap();
        let pe = sinusoidal_positional_encoding(sub_val.nrows(), 8);
        let expected = sub_val.mapv(|v| v * (8f64).sqrt()) + &pe;
        let got = g.value(enc);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn encoder_padding_invariance(encoder_type: EncoderType) {
        let cfg = toy_config(encoder_type);
        let params = init_model(&cfg, 9).unwrap();
        let builder = NetBuilder::new(&cfg, &params, false);
        let feats = rand_features(30, 5, 10);
        let mut padded = Array2::zeros((35, 5));
        padded.slice_mut(ndarray::s![..30, ..]).assign(&feats);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g1 = Graph::new();
        let out1 = builder.encode(&mut g1, &feats, 30, &mut rng).unwrap();
        let mut g2 = Graph::new();
        let out2 = builder.encode(&mut g2, &padded, 30, &mut rng).unwrap();
        assert_eq!(out1.valid, out2.valid);
        let h1 = g1.value(out1.hidden);
        let h2 = g2.value(out2.hidden);
        for t in 0..out1.valid {
            for d in 0..cfg.d_model {
                assert!(
                    (h1[(t, d)] - h2[(t, d)]).abs() < 1e-5,
                    "{encoder_type:?} mismatch at ({t},{d})"
                );
            }
        }
    }

    #[test]
    fn padding_invariance_transformer() {
        encoder_padding_invariance(EncoderType::Transformer);
    }

    #[test]
    fn padding_invariance_conformer() {
        encoder_padding_invariance(EncoderType::Conformer);
    }

    #[test]
    fn encoder_types_share_shapes() {
        for ty in [EncoderType::Transformer, EncoderType::Conformer] {
            let cfg = toy_config(ty);
            let params = init_model(&cfg, 5).unwrap();
            let builder = NetBuilder::new(&cfg, &params, false);
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = builder
                .encode(&mut g, &rand_features(30, 5, 6), 30, &mut rng)
                .unwrap();
            assert_eq!(g.value(out.hidden).dim(), (6, 8));
        }
    }

    #[test]
    fn decoder_causality() {
        let cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 11).unwrap();
        let model = SluModel::new(&cfg, &params);
        let encoded = model.encode_eval(&rand_features(20, 5, 12)).unwrap();
        let sos = model.sos_eos();
        let logits_a = model
            .decoder_logits_eval(&encoded, &[sos, 1, 2, 3])
            .unwrap();
        let logits_b = model
            .decoder_logits_eval(&encoded, &[sos, 1, 2, 7])
            .unwrap();
        // Editing prefix token 3 leaves logits at earlier positions unchanged.
        for i in 0..3 {
            for v in 0..cfg.vocab_size {
                assert!((logits_a[(i, v)] - logits_b[(i, v)]).abs() < 1e-6);
            }
        }
        assert_eq!(logits_a.dim(), (4, 9));
    }

    #[test]
    fn decoder_softmax_rows_normalize() {
        let cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 13).unwrap();
        let model = SluModel::new(&cfg, &params);
        let encoded = model.encode_eval(&rand_features(16, 5, 14)).unwrap();
        let lp = model.next_token_log_probs(&encoded, &[model.sos_eos(), 2]).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decoder_rejects_bad_prefix() {
        let cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 15).unwrap();
        let model = SluModel::new(&cfg, &params);
        let encoded = model.encode_eval(&rand_features(16, 5, 16)).unwrap();
        assert!(model.decoder_logits_eval(&encoded, &[]).is_err());
        assert!(model.decoder_logits_eval(&encoded, &[1, 2]).is_err());
    }

    #[test]
    fn ctc_rows_are_log_probs() {
        let cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 17).unwrap();
        let model = SluModel::new(&cfg, &params);
        let encoded = model.encode_eval(&rand_features(20, 5, 18)).unwrap();
        for row in encoded.ctc_log_probs.rows() {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_eq!(encoded.ctc_log_probs.dim(), (4, 9));
    }

    #[test]
    fn zero_ctc_head_is_uniform() {
        let cfg = toy_config(EncoderType::Transformer);
        let mut params = init_model(&cfg, 19).unwrap();
        params.set("ctc.w", Array2::zeros((8, 9)));
        params.set("ctc.b", Array2::zeros((1, 9)));
        let model = SluModel::new(&cfg, &params);
        let encoded = model.encode_eval(&rand_features(20, 5, 20)).unwrap();
        let expect = -(9f64).ln();
        for &v in encoded.ctc_log_probs.iter() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn post_encoder_identity_when_disabled_and_projection_when_zero_blocks() {
        let mut cfg = toy_config(EncoderType::Transformer);
        let params = init_model(&cfg, 21).unwrap();
        let builder = NetBuilder::new(&cfg, &params, false);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.input(rand_features(4, 8, 22));
        let y = builder.post_encoder_forward(&mut g, x, 4, &mut rng);
        assert_eq!(x, y); // identity passthrough

        cfg.post_encoder = PostEncoderConfig {
            enabled: true,
            blocks: 0,
            nlu_dim: 6,
            weights_path: None,
        };
        let params = init_model(&cfg, 23).unwrap();
        let builder = NetBuilder::new(&cfg, &params, false);
        let mut g = Graph::new();
        let input = rand_features(4, 8, 24);
        let x = g.input(input.clone());
        let y = builder.post_encoder_forward(&mut g, x, 4, &mut rng);
        // Down-up projection of the input, shape preserved.
        let down = input.dot(params.get("post.down.w")) + params.get("post.down.b");
        let up = down.dot(params.get("post.up.w")) + params.get("post.up.b");
        let got = g.value(y);
        assert_eq!(got.dim(), (4, 8));
        for (a, b) in got.iter().zip(up.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_deterministic() {
        let cfg = toy_config(EncoderType::Conformer);
        let params = init_model(&cfg, 25).unwrap();
        let model = SluModel::new(&cfg, &params);
        let feats = rand_features(25, 5, 26);
        let a = model.encode_eval(&feats).unwrap();
        let b = model.encode_eval(&feats).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.ctc_log_probs, b.ctc_log_probs);
    }
}

//! Imp2Head: an encoder-decoder transformer from impedance windows
//! `(B, r·L_out, 8)` to joint-angle sequences `(B, L_out, 9)`.
//!
//! The encoder embeds each impedance frame with a linear projection plus a
//! sinusoidal position code and runs unmasked post-norm self-attention
//! blocks. The decoder starts from `L_out` learned queries (with learned
//! position embeddings), applies causally masked self-attention, cross
//! attention to the encoder memory and a feed-forward block per layer, and a
//! linear head maps every step to nine axis-angle values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var, LAYER_NORM_EPS, MASK_VALUE};
use crate::biomech::{bio_penalty, JointLimits};
use crate::error::{Error, Result};
use crate::pose::POSE_DIM;

pub const INPUT_DIM: usize = 8;
pub const OUTPUT_DIM: usize = POSE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// All queries in one pass under a causal mask.
    #[default]
    Parallel,
    /// One decoder pass per output step over the growing query prefix.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    pub l_out: usize,
    pub rate_ratio: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub decode_mode: DecodeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ffn_multiplier: 4,
            dropout: 0.1,
            l_out: 10,
            rate_ratio: 9,
            input_dim: INPUT_DIM,
            output_dim: OUTPUT_DIM,
            decode_mode: DecodeMode::Parallel,
        }
    }
}

impl ModelConfig {
    pub fn l_in(&self) -> usize {
        self.rate_ratio * self.l_out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.l_out == 0 || self.rate_ratio == 0 || self.ffn_multiplier == 0 {
            return fail("l_out, rate_ratio and ffn_multiplier must be positive".into());
        }
        if self.input_dim != INPUT_DIM || self.output_dim != OUTPUT_DIM {
            return fail(format!(
                "input_dim/output_dim are fixed at {INPUT_DIM}/{OUTPUT_DIM}, got {}/{}",
                self.input_dim, self.output_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross_attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

/// Dropout state for a training forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Per-call forward options. The default runs without dropout.
#[derive(Default)]
pub struct ForwardCtx<'a> {
    pub dropout: Option<Dropout<'a>>,
}

/// Model parameters plus the layout needed to run them.
#[derive(Debug, Clone)]
pub struct Imp2Head {
    config: ModelConfig,
    params: ParamStore,
    input_proj: Linear,
    encoder: Vec<EncoderLayer>,
    queries: ParamId,
    query_pos: ParamId,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::uniform(&[fan_in, fan_out], bound, self.rng);
        Linear {
            w: self.store.add(format!("{name}.weight"), w),
            b: self.store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, mult: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, d * mult),
            down: self.linear(&format!("{name}.down"), d * mult, d),
        }
    }
}

/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for p in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("consistent shape")
}

/// `(L, L)` additive mask blocking attention from step `t` to steps `> t`.
pub fn causal_mask(len: usize) -> Tensor {
    let data = (0..len * len)
        .map(|k| if k % len > k / len { MASK_VALUE } else { 0.0 })
        .collect();
    Tensor::new(vec![len, len], data).expect("consistent shape")
}

impl Imp2Head {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let input_proj = b.linear("input_proj", INPUT_DIM, d);
        let encoder = (0..config.n_encoder_layers)
            .map(|i| EncoderLayer {
                attn: b.attention(&format!("encoder.{i}.attn"), d),
                norm1: b.norm(&format!("encoder.{i}.norm1"), d),
                ffn: b.ffn(&format!("encoder.{i}.ffn"), d, config.ffn_multiplier),
                norm2: b.norm(&format!("encoder.{i}.norm2"), d),
            })
            .collect();
        let queries = Tensor::randn(&[config.l_out, d], 0.1, b.rng);
        let queries = b.store.add("decoder.queries", queries);
        let query_pos = Tensor::randn(&[config.l_out, d], 0.1, b.rng);
        let query_pos = b.store.add("decoder.query_pos", query_pos);
        let decoder = (0..config.n_decoder_layers)
            .map(|i| DecoderLayer {
                self_attn: b.attention(&format!("decoder.{i}.self_attn"), d),
                norm1: b.norm(&format!("decoder.{i}.norm1"), d),
                cross_attn: b.attention(&format!("decoder.{i}.cross_attn"), d),
                norm2: b.norm(&format!("decoder.{i}.norm2"), d),
                ffn: b.ffn(&format!("decoder.{i}.ffn"), d, config.ffn_multiplier),
                norm3: b.norm(&format!("decoder.{i}.norm3"), d),
            })
            .collect();
        let head = b.linear("head", d, OUTPUT_DIM);
        Ok(Imp2Head {
            config,
            params: b.store,
            input_proj,
            encoder,
            queries,
            query_pos,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn linear(&self, g: &mut Graph, p: &Bound, l: Linear, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(l.w))?;
        g.add(y, p.var(l.b))
    }

    fn norm(&self, g: &mut Graph, p: &Bound, n: Norm, x: Var) -> Result<Var> {
        let y = g.layer_norm(x, LAYER_NORM_EPS)?;
        let y = g.mul(y, p.var(n.gamma))?;
        g.add(y, p.var(n.beta))
    }

    fn dropout(&self, g: &mut Graph, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let Some(d) = ctx.dropout.as_mut() else {
            return Ok(x);
        };
        if d.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - d.rate;
        let shape = g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }

    fn attention(
        &self,
        g: &mut Graph,
        p: &Bound,
        a: Attention,
        q_in: Var,
        kv_in: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let q = self.linear(g, p, a.q, q_in)?;
        let k = self.linear(g, p, a.k, kv_in)?;
        let v = self.linear(g, p, a.v, kv_in)?;
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let out = if heads == 1 {
            g.scaled_dot_product_attention(q, k, v, mask)?
        } else {
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice(q, 2, h * dh, dh)?;
                let kh = g.slice(k, 2, h * dh, dh)?;
                let vh = g.slice(v, 2, h * dh, dh)?;
                outs.push(g.scaled_dot_product_attention(qh, kh, vh, mask)?);
            }
            g.concat(&outs, 2)?
        };
        self.linear(g, p, a.o, out)
    }

    fn feed_forward(&self, g: &mut Graph, p: &Bound, f: FeedForward, x: Var) -> Result<Var> {
        let h = self.linear(g, p, f.up, x)?;
        let h = g.gelu(h);
        self.linear(g, p, f.down, h)
    }

    /// Residual add of a dropped-out branch followed by layer norm.
    fn add_norm(&self, g: &mut Graph, p: &Bound, ctx: &mut ForwardCtx, n: Norm, x: Var, branch: Var) -> Result<Var> {
        let branch = self.dropout(g, ctx, branch)?;
        let y = g.add(x, branch)?;
        self.norm(g, p, n, y)
    }

    /// `(B, L_in, 8)` → `(B, L_in, d_model)`.
    pub fn embed_input(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != INPUT_DIM {
            return Err(Error::shape(
                "embed_input",
                format!("expected (B, L_in, {INPUT_DIM}), got {s:?}"),
            ));
        }
        let h = self.linear(g, p, self.input_proj, x)?;
        let pe = g.constant(sinusoidal_encoding(s[1], self.config.d_model));
        g.add(h, pe)
    }

    /// Unmasked encoder stack; output has the input's shape.
    pub fn encode(&self, g: &mut Graph, p: &Bound, ctx: &mut ForwardCtx, embedded: Var) -> Result<Var> {
        let mut x = self.dropout(g, ctx, embedded)?;
        for layer in &self.encoder {
            let a = self.attention(g, p, layer.attn, x, x, None)?;
            x = self.add_norm(g, p, ctx, layer.norm1, x, a)?;
            let f = self.feed_forward(g, p, layer.ffn, x)?;
            x = self.add_norm(g, p, ctx, layer.norm2, x, f)?;
        }
        Ok(x)
    }

    fn decode_steps(&self, g: &mut Graph, p: &Bound, ctx: &mut ForwardCtx, memory: Var, steps: usize) -> Result<Var> {
        let batch = g.shape(memory)[0];
        let d = self.config.d_model;
        let idx: Vec<usize> = (0..steps).collect();
        let q = g.embedding_lookup(p.var(self.queries), &idx)?;
        let pos = g.embedding_lookup(p.var(self.query_pos), &idx)?;
        let q = g.add(q, pos)?;
        let zeros = g.constant(Tensor::zeros(&[batch, steps, d]));
        let mut y = g.add(zeros, q)?;
        let mask = g.constant(causal_mask(steps));
        for layer in &self.decoder {
            let s = self.attention(g, p, layer.self_attn, y, y, Some(mask))?;
            y = self.add_norm(g, p, ctx, layer.norm1, y, s)?;
            let c = self.attention(g, p, layer.cross_attn, y, memory, None)?;
            y = self.add_norm(g, p, ctx, layer.norm2, y, c)?;
            let f = self.feed_forward(g, p, layer.ffn, y)?;
            y = self.add_norm(g, p, ctx, layer.norm3, y, f)?;
        }
        Ok(y)
    }

    /// Encoder memory `(B, L_in, d)` → decoder states `(B, L_out, d)`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, ctx: &mut ForwardCtx, memory: Var) -> Result<Var> {
        let l_out = self.config.l_out;
        match self.config.decode_mode {
            DecodeMode::Parallel => self.decode_steps(g, p, ctx, memory, l_out),
            DecodeMode::Sequential => {
                let mut steps = Vec::with_capacity(l_out);
                for t in 0..l_out {
                    let y = self.decode_steps(g, p, ctx, memory, t + 1)?;
                    steps.push(g.slice(y, 1, t, 1)?);
                }
                g.concat(&steps, 1)
            }
        }
    }

    /// `(B, r·L_out, 8)` → `(B, L_out, 9)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.config.l_in() || s[2] != INPUT_DIM {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected (B, {}, {INPUT_DIM}) for L_out = {}, got {s:?}",
                    self.config.l_in(),
                    self.config.l_out
                ),
            ));
        }
        let e = self.embed_input(g, p, x)?;
        let m = self.encode(g, p, ctx, e)?;
        let y = self.decode(g, p, ctx, m)?;
        self.linear(g, p, self.head, y)
    }

    /// Inference on a batch without recording gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, &mut ForwardCtx::default(), xv)?;
        if let Some(e) = g.first_non_finite() {
            return Err(e);
        }
        Ok(g.value(y).clone())
    }
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub bio: Var,
}

/// `L_total = L_MSE + λ·L_bio`, with `L_MSE` the mean squared error over
/// all `B·L_out·9` entries.
pub fn loss(g: &mut Graph, pred: Var, target: Var, limits: &JointLimits, lambda: f64) -> Result<LossVars> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape(
            "loss",
            format!("prediction {:?} vs target {:?}", g.shape(pred), g.shape(target)),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let bio = bio_penalty(g, pred, limits)?;
    let weighted = g.scale(bio, lambda);
    let total = g.add(mse, weighted)?;
    Ok(LossVars { total, mse, bio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_multiplier: 2,
            dropout: 0.0,
            l_out: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d_model: 10,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            input_dim: 6,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn causal_mask_layout() {
        let m = causal_mask(3);
        assert_eq!(
            m.data(),
            &[0.0, MASK_VALUE, MASK_VALUE, 0.0, 0.0, MASK_VALUE, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn sinusoid_first_rows() {
        let pe = sinusoidal_encoding(2, 4);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.data()[6] - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_length_rejected() {
        let m = Imp2Head::new(small(), 0).unwrap();
        let x = Tensor::zeros(&[1, 26, 8]);
        assert!(matches!(m.predict(&x), Err(Error::Shape { op: "forward", .. })));
    }

    #[test]
    fn sequential_decoding_matches_parallel() {
        let par = Imp2Head::new(small(), 3).unwrap();
        let mut cfg = small();
        cfg.decode_mode = DecodeMode::Sequential;
        let mut seq = Imp2Head::new(cfg, 3).unwrap();
        seq.params_mut().load_from(par.params().entries()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[2, 27, 8], 1.0, &mut rng);
        let a = par.predict(&x).unwrap();
        let b = seq.predict(&x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_arithmetic() {
        let mut g = Graph::new();
        let limits = JointLimits::default();
        let mid = limits.midpoint().0;
        let pred = g.constant(Tensor::new(vec![1, 1, 9], mid.to_vec()).unwrap());
        let target = g.constant(Tensor::new(vec![1, 1, 9], mid.to_vec()).unwrap());
        let l = loss(&mut g, pred, target, &limits, 0.1).unwrap();
        assert_eq!(g.value(l.total).item().unwrap(), 0.0);
    }
}

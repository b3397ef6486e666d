//! Decoder-only transformer with fixed sinusoidal positions.
//!
//! Pre-norm blocks (`x + attn(ln1(x))`, then `x + mlp(ln2(x))`), a final
//! layer norm and an untied output projection. The graph is fixed, so the
//! backward pass is written out by hand against the cached activations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::kernels::{self, LayerNormCache};
use crate::nncore::params::truncated_normal;
use crate::nncore::{Dtype, ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub pos_time_constant: f64,
    pub vocab: usize,
    pub max_seq: usize,
    pub precision: Dtype,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Multiplier on token embeddings before positions are added.
    #[serde(default = "default_embed_scale")]
    pub embed_scale: f64,
}

fn default_embed_scale() -> f64 {
    1.0
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// 8 layers, width 128, 8 heads, MLP 512, time constant 120.
    pub fn standard(vocab: usize, pairs: usize) -> Self {
        ModelConfig {
            layers: 8,
            d_model: 128,
            heads: 8,
            mlp_hidden: 512,
            pos_time_constant: 120.0,
            vocab,
            max_seq: 2 * pairs,
            precision: Dtype::F32,
            init_std: default_init_std(),
            embed_scale: default_embed_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: &str| Err(Error::config(format!("model.{field}"), reason));
        if self.layers == 0 {
            return err("layers", "must be positive");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return err("heads", "d_model must be divisible by heads");
        }
        if self.d_model % 2 != 0 {
            return err("d_model", "must be even for sinusoidal positions");
        }
        if self.mlp_hidden == 0 || self.vocab < 2 || self.max_seq == 0 {
            return err("mlp_hidden", "mlp_hidden, vocab and max_seq must be positive");
        }
        if !(self.pos_time_constant > 1.0) {
            return err("pos_time_constant", "must exceed 1");
        }
        if !(self.init_std > 0.0) {
            return err("init_std", "must be positive");
        }
        if !(self.embed_scale > 0.0 && self.embed_scale.is_finite()) {
            return err("embed_scale", "must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let h = self.mlp_hidden;
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
        self.vocab * d + self.layers * block + 2 * d + d * self.vocab + self.vocab
    }
}

/// `PE[t, 2i] = sin(t / tc^(2i/d))`, `PE[t, 2i+1] = cos(t / tc^(2i/d))`.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize, time_constant: f64) -> Tensor<T> {
    assert!(dim % 2 == 0, "positional dimension must be even");
    let mut pe = Tensor::zeros(&[len, dim]);
    for t in 0..len {
        for i in 0..dim / 2 {
            let freq = time_constant.powf(-((2 * i) as f64) / dim as f64);
            let angle = t as f64 * freq;
            pe.data_mut()[t * dim + 2 * i] = T::from_f64(angle.sin());
            pe.data_mut()[t * dim + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    pe
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Parameter layout of a [`ModelConfig`] bound to a store.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    tok_emb: ParamId,
    blocks: Vec<BlockIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Name and shape of every parameter, in store order.
pub fn param_manifest(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.d_model;
    let h = c.mlp_hidden;
    let mut out = vec![("tok_emb".to_string(), vec![c.vocab, d])];
    for l in 0..c.layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("ln1.g"), vec![d]),
            (p("ln1.b"), vec![d]),
            (p("attn.w_qkv"), vec![d, 3 * d]),
            (p("attn.b_qkv"), vec![3 * d]),
            (p("attn.w_o"), vec![d, d]),
            (p("attn.b_o"), vec![d]),
            (p("ln2.g"), vec![d]),
            (p("ln2.b"), vec![d]),
            (p("mlp.w1"), vec![d, h]),
            (p("mlp.b1"), vec![h]),
            (p("mlp.w2"), vec![h, d]),
            (p("mlp.b2"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.g".to_string(), vec![d]),
        ("ln_f.b".to_string(), vec![d]),
        ("head.w".to_string(), vec![d, c.vocab]),
        ("head.b".to_string(), vec![c.vocab]),
    ]);
    out
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".g")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.contains(".b_") || name.ends_with(".b1") || name.ends_with(".b2")
}

impl Transformer {
    /// Fresh parameters: truncated normal with `init_std` for matrices and
    /// embeddings, unit gains, zero biases.
    pub fn init<T: Real>(config: ModelConfig, seed: u64) -> Result<(Transformer, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in param_manifest(&config) {
            let value = if is_gain(&name) {
                Tensor::from_fn(&shape, |_| T::ONE)
            } else if is_bias(&name) {
                Tensor::zeros(&shape)
            } else {
                truncated_normal(&mut rng, &shape, config.init_std)
            };
            store.insert(name, value)?;
        }
        let model = Transformer::bind(config, &store)?;
        Ok((model, store))
    }

    /// Resolves parameter handles, checking names and shapes.
    pub fn bind<T: Real>(config: ModelConfig, store: &ParamStore<T>) -> Result<Transformer> {
        config.validate()?;
        let manifest = param_manifest(&config);
        if manifest.len() != store.len() {
            return Err(Error::shape("bind", format!("expected {} parameters, store has {}", manifest.len(), store.len())));
        }
        let get = |name: &str| -> Result<ParamId> {
            let id = store.id(name).ok_or_else(|| Error::shape("bind", format!("missing `{name}`")))?;
            let want = &manifest.iter().find(|(n, _)| n == name).expect("name from manifest").1;
            if store.value(id).shape() != want.as_slice() {
                return Err(Error::shape(
                    "bind",
                    format!("`{name}` has shape {:?}, config needs {want:?}", store.value(id).shape()),
                ));
            }
            Ok(id)
        };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockIds {
                ln1_g: get(&p("ln1.g"))?,
                ln1_b: get(&p("ln1.b"))?,
                w_qkv: get(&p("attn.w_qkv"))?,
                b_qkv: get(&p("attn.b_qkv"))?,
                w_o: get(&p("attn.w_o"))?,
                b_o: get(&p("attn.b_o"))?,
                ln2_g: get(&p("ln2.g"))?,
                ln2_b: get(&p("ln2.b"))?,
                w1: get(&p("mlp.w1"))?,
                b1: get(&p("mlp.b1"))?,
                w2: get(&p("mlp.w2"))?,
                b2: get(&p("mlp.b2"))?,
            });
        }
        Ok(Transformer {
            config,
            tok_emb: get("tok_emb")?,
            blocks,
            lnf_g: get("ln_f.g")?,
            lnf_b: get("ln_f.b")?,
            head_w: get("head.w")?,
            head_b: get("head.b")?,
        })
    }

    /// Runs `batch` sequences of equal length packed back to back in
    /// `tokens`, keeping everything the backward pass needs.
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tokens: &[u32],
        batch: usize,
    ) -> Result<Activations<T>> {
        let c = &self.config;
        if batch == 0 || tokens.len() % batch != 0 {
            return Err(Error::shape("forward", format!("{} tokens for batch {batch}", tokens.len())));
        }
        let seq = tokens.len() / batch;
        if seq > c.max_seq {
            return Err(Error::SequenceTooLong { len: seq, max: c.max_seq });
        }
        let d = c.d_model;
        let mut x = kernels::embed_lookup(store.value(self.tok_emb), tokens)?;
        if c.embed_scale != 1.0 {
            let s = T::from_f64(c.embed_scale);
            x.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        let pe: Tensor<T> = sinusoidal_positions(seq, d, c.pos_time_constant);
        for (r, row) in x.data_mut().chunks_exact_mut(d).enumerate() {
            for (v, p) in row.iter_mut().zip(pe.row(r % seq)) {
                *v += *p;
            }
        }
        let embed = x.clone();
        let mut blocks = Vec::with_capacity(c.layers);
        for ids in &self.blocks {
            let (ln1, ln1_cache) = kernels::layer_norm(&x, store.value(ids.ln1_g), store.value(ids.ln1_b))?;
            let qkv = kernels::linear(&ln1, store.value(ids.w_qkv), store.value(ids.b_qkv))?;
            let (attn, probs) = kernels::causal_attention(&qkv, batch, seq, c.heads)?;
            let proj = kernels::linear(&attn, store.value(ids.w_o), store.value(ids.b_o))?;
            let mid = kernels::add(&x, &proj)?;
            let (ln2, ln2_cache) = kernels::layer_norm(&mid, store.value(ids.ln2_g), store.value(ids.ln2_b))?;
            let pre = kernels::linear(&ln2, store.value(ids.w1), store.value(ids.b1))?;
            let act = kernels::gelu(&pre)?;
            let out = kernels::linear(&act, store.value(ids.w2), store.value(ids.b2))?;
            let next = kernels::add(&mid, &out)?;
            blocks.push(BlockActs { ln1, ln1_cache, qkv, attn, probs, ln2, ln2_cache, pre, act, out: next.clone() });
            x = next;
        }
        let (lnf, lnf_cache) = kernels::layer_norm(&x, store.value(self.lnf_g), store.value(self.lnf_b))?;
        let logits = kernels::linear(&lnf, store.value(self.head_w), store.value(self.head_b))?;
        Ok(Activations { batch, seq, tokens: tokens.to_vec(), embed, blocks, lnf, lnf_cache, logits })
    }

    /// Accumulates parameter gradients of a scalar loss given its gradient
    /// with respect to the logits.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        acts: &Activations<T>,
        dlogits: &Tensor<T>,
    ) -> Result<()> {
        let c = &self.config;
        if dlogits.shape() != acts.logits.shape() {
            return Err(Error::shape("backward", format!("dlogits {:?}", dlogits.shape())));
        }
        let (batch, seq) = (acts.batch, acts.seq);
        let (vals, mut grads) = store.split_mut();
        let last = acts.blocks.last().map_or(&acts.embed, |b| &b.out);

        let mut dlnf = Tensor::zeros(acts.lnf.shape());
        {
            let (gw, gb) = two_mut(&mut grads, self.head_w, self.head_b);
            kernels::linear_backward(&acts.lnf, vals[self.head_w.0], dlogits, Some(&mut dlnf), gw, gb);
        }
        let mut dx = Tensor::zeros(last.shape());
        {
            let (gg, gb) = two_mut(&mut grads, self.lnf_g, self.lnf_b);
            kernels::layer_norm_backward(&acts.lnf_cache, vals[self.lnf_g.0], &dlnf, &mut dx, gg, gb);
        }

        for (l, ids) in self.blocks.iter().enumerate().rev() {
            let a = &acts.blocks[l];
            // out = mid + w2 * gelu(w1 * ln2(mid))
            let mut dact = Tensor::zeros(a.act.shape());
            {
                let (gw, gb) = two_mut(&mut grads, ids.w2, ids.b2);
                kernels::linear_backward(&a.act, vals[ids.w2.0], &dx, Some(&mut dact), gw, gb);
            }
            let mut dpre = Tensor::zeros(a.pre.shape());
            kernels::gelu_backward(&a.pre, &dact, &mut dpre);
            let mut dln2 = Tensor::zeros(a.ln2.shape());
            {
                let (gw, gb) = two_mut(&mut grads, ids.w1, ids.b1);
                kernels::linear_backward(&a.ln2, vals[ids.w1.0], &dpre, Some(&mut dln2), gw, gb);
            }
            // dmid starts as the residual pass-through of dx.
            let mut dmid = dx;
            {
                let (gg, gb) = two_mut(&mut grads, ids.ln2_g, ids.ln2_b);
                kernels::layer_norm_backward(&a.ln2_cache, vals[ids.ln2_g.0], &dln2, &mut dmid, gg, gb);
            }
            // mid = x + w_o * attn(w_qkv * ln1(x_in))
            let mut dattn = Tensor::zeros(a.attn.shape());
            {
                let (gw, gb) = two_mut(&mut grads, ids.w_o, ids.b_o);
                kernels::linear_backward(&a.attn, vals[ids.w_o.0], &dmid, Some(&mut dattn), gw, gb);
            }
            let mut dqkv = Tensor::zeros(a.qkv.shape());
            kernels::causal_attention_backward(&a.qkv, &a.probs, &dattn, &mut dqkv, batch, seq, c.heads);
            let mut dln1 = Tensor::zeros(a.ln1.shape());
            {
                let (gw, gb) = two_mut(&mut grads, ids.w_qkv, ids.b_qkv);
                kernels::linear_backward(&a.ln1, vals[ids.w_qkv.0], &dqkv, Some(&mut dln1), gw, gb);
            }
            let mut dxin = dmid;
            {
                let (gg, gb) = two_mut(&mut grads, ids.ln1_g, ids.ln1_b);
                kernels::layer_norm_backward(&a.ln1_cache, vals[ids.ln1_g.0], &dln1, &mut dxin, gg, gb);
            }
            dx = dxin;
        }
        if c.embed_scale != 1.0 {
            let s = T::from_f64(c.embed_scale);
            dx.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        kernels::embed_backward(&acts.tokens, &dx, grads[self.tok_emb.0]);
        Ok(())
    }

    /// Forward pass reduced to what analysis needs.
    pub fn trace<T: Real>(&self, store: &ParamStore<T>, tokens: &[u32], batch: usize) -> Result<ForwardTrace<T>> {
        let acts = self.forward(store, tokens, batch)?;
        Ok(acts.into_trace(self.config.heads))
    }
}

fn two_mut<'a, T>(
    grads: &'a mut [&mut Tensor<T>],
    a: ParamId,
    b: ParamId,
) -> (&'a mut Tensor<T>, &'a mut Tensor<T>) {
    assert!(a.0 != b.0);
    if a.0 < b.0 {
        let (lo, hi) = grads.split_at_mut(b.0);
        (&mut *lo[a.0], &mut *hi[0])
    } else {
        let (lo, hi) = grads.split_at_mut(a.0);
        (&mut *hi[0], &mut *lo[b.0])
    }
}

#[derive(Debug, Clone)]
struct BlockActs<T> {
    ln1: Tensor<T>,
    ln1_cache: LayerNormCache<T>,
    qkv: Tensor<T>,
    attn: Tensor<T>,
    probs: Tensor<T>,
    ln2: Tensor<T>,
    ln2_cache: LayerNormCache<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    out: Tensor<T>,
}

/// Cached forward state of one batch.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub batch: usize,
    pub seq: usize,
    tokens: Vec<u32>,
    embed: Tensor<T>,
    blocks: Vec<BlockActs<T>>,
    lnf: Tensor<T>,
    lnf_cache: LayerNormCache<T>,
    pub logits: Tensor<T>,
}

impl<T: Real> Activations<T> {
    pub fn into_trace(self, heads: usize) -> ForwardTrace<T> {
        let mut hidden = Vec::with_capacity(self.blocks.len());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            hidden.push(b.out);
            attention.push(b.probs);
        }
        ForwardTrace {
            batch: self.batch,
            seq: self.seq,
            heads,
            logits: self.logits,
            embed: self.embed,
            hidden,
            attention,
        }
    }
}

/// Logits, residual stream after every block and attention maps.
///
/// Row `b * seq + t` of `logits`, `embed` and each `hidden[l]` belongs to
/// sequence `b`, position `t`. `attention[l]` is `[batch, heads, seq, seq]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub logits: Tensor<T>,
    /// Token plus positional embedding (the optional layer-0 stream).
    pub embed: Tensor<T>,
    pub hidden: Vec<Tensor<T>>,
    pub attention: Vec<Tensor<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn logits_at(&self, b: usize, t: usize) -> &[T] {
        self.logits.row(b * self.seq + t)
    }

    /// Residual stream at `layer` (0 = embeddings, 1..=L = after block).
    pub fn residual(&self, layer: usize, b: usize, t: usize) -> Result<&[T]> {
        let tensor = match layer {
            0 => &self.embed,
            l if l <= self.hidden.len() => &self.hidden[l - 1],
            _ => return Err(Error::LayerRange { layer, layers: self.hidden.len() }),
        };
        Ok(tensor.row(b * self.seq + t))
    }

    /// Attention row of query `t` in sequence `b`.
    pub fn attention_row(&self, layer: usize, head: usize, b: usize, t: usize) -> &[T] {
        let s = self.seq;
        let base = ((b * self.heads + head) * s + t) * s;
        &self.attention[layer].data()[base..base + s]
    }

    pub fn argmax_at(&self, b: usize, t: usize) -> usize {
        let row = self.logits_at(b, t);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            mlp_hidden: 64,
            pos_time_constant: 120.0,
            vocab,
            max_seq: 24,
            precision: Dtype::F64,
            init_std: 0.02,
            embed_scale: 1.0,
        }
    }

    #[test]
    fn positions_examples() {
        let pe: Tensor<f64> = sinusoidal_positions(48, 128, 120.0);
        for i in 0..64 {
            assert_eq!(pe.data()[2 * i], 0.0);
            assert_eq!(pe.data()[2 * i + 1], 1.0);
        }
        assert!((pe.data()[128] - 1f64.sin()).abs() < 1e-15);
        // Column frequencies strictly decrease, so wavelengths grow with i.
        let freqs: Vec<f64> = (0..64).map(|i| 120f64.powf(-((2 * i) as f64) / 128.0)).collect();
        assert!(freqs.windows(2).all(|w| w[1] < w[0]));
        let t = 5usize;
        let want = (t as f64 * freqs[10]).sin();
        assert!((pe.data()[t * 128 + 20] - want).abs() < 1e-15);
    }

    #[test]
    fn param_count_matches_store() {
        let c = ModelConfig::standard(59, 24);
        let (_, store) = Transformer::init::<f32>(c, 0).unwrap();
        assert_eq!(store.numel(), c.param_count());
        let (_, other) = Transformer::init::<f32>(c, 1).unwrap();
        assert_eq!(other.numel(), store.numel());
        assert_ne!(other.iter().next().unwrap().value, store.iter().next().unwrap().value);
    }

    #[test]
    fn trace_shapes_default_config() {
        let c = ModelConfig::standard(59, 24);
        let (m, store) = Transformer::init::<f32>(c, 0).unwrap();
        let tokens: Vec<u32> = (0..48).map(|i| (i * 7 % 59) as u32).collect();
        let tr = m.trace(&store, &tokens, 1).unwrap();
        assert_eq!(tr.logits.shape(), &[48, 59]);
        assert_eq!(tr.hidden.len(), 8);
        assert!(tr.hidden.iter().all(|h| h.shape() == [48, 128]));
        assert_eq!(tr.attention.len(), 8);
        assert!(tr.attention.iter().all(|a| a.shape() == [1, 8, 48, 48]));
        for l in 0..8 {
            for h in 0..8 {
                for t in 0..48 {
                    let row = tr.attention_row(l, h, 0, t);
                    let s: f32 = row[..=t].iter().sum();
                    assert!((s - 1.0).abs() < 1e-5);
                    assert!(row[t + 1..].iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn fresh_model_loss_near_uniform() {
        let c = ModelConfig::standard(59, 24);
        let (m, store) = Transformer::init::<f32>(c, 3).unwrap();
        let tokens: Vec<u32> = (0..96).map(|i| (i * 13 % 59) as u32).collect();
        let acts = m.forward(&store, &tokens, 2).unwrap();
        let targets: Vec<u32> = tokens.iter().map(|t| (t + 1) % 59).collect();
        let ce = kernels::weighted_cross_entropy(&acts.logits, &targets, &vec![1.0; 96]).unwrap();
        assert!((ce.loss - 59f64.ln()).abs() < 0.1, "loss {}", ce.loss);
    }

    #[test]
    fn causality_under_token_substitution() {
        let c = tiny(13);
        let (m, store) = Transformer::init::<f64>(c, 0).unwrap();
        let base: Vec<u32> = (0..24).map(|i| (i * 5 % 13) as u32).collect();
        let tr0 = m.trace(&store, &base, 1).unwrap();
        for t in [0usize, 7, 23] {
            let mut changed = base.clone();
            changed[t] = (changed[t] + 1) % 13;
            let tr1 = m.trace(&store, &changed, 1).unwrap();
            for s in 0..t {
                assert_eq!(tr0.logits_at(0, s), tr1.logits_at(0, s));
            }
            assert_ne!(tr0.logits_at(0, t), tr1.logits_at(0, t));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = tiny(13);
        let (m, store) = Transformer::init::<f64>(c, 0).unwrap();
        assert!(matches!(m.forward(&store, &[0; 25], 1), Err(Error::SequenceTooLong { .. })));
        assert!(matches!(m.forward(&store, &[13; 4], 1), Err(Error::TokenRange { .. })));
        let mut bad = c;
        bad.heads = 3;
        assert!(bad.validate().is_err());
        let wider = ModelConfig { d_model: 32, ..c };
        assert!(Transformer::bind(wider, &store).is_err());
    }
}

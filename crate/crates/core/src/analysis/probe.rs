//! Linear probes on the residual stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::errors::EVAL_CHUNK;
use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::nncore::{ParamStore, Real};
use crate::taskgen::{ProbeTarget, SequencePack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Y,
    /// `a^x mod (p - 1)`.
    Inner,
    BaseB,
    TaskAOutput,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [TargetKind::Y, TargetKind::Inner, TargetKind::BaseB, TargetKind::TaskAOutput];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Y => "y",
            TargetKind::Inner => "inner",
            TargetKind::BaseB => "base_b",
            TargetKind::TaskAOutput => "task_a_output",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn value(self, t: &ProbeTarget) -> u32 {
        (match self {
            TargetKind::Y => t.y,
            TargetKind::Inner => t.inner,
            TargetKind::BaseB => t.base_b,
            TargetKind::TaskAOutput => t.task_a_output,
        }) as u32
    }
}

/// Residual-stream vectors at the `x` token of each probed pair.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    pub layers: Vec<usize>,
    pub shots: Vec<usize>,
    pub dim: usize,
    pub rows: usize,
    /// Cell `li * shots.len() + si` holds a `[rows, dim]` matrix.
    features: Vec<Vec<f64>>,
    /// `targets[si][row]`.
    targets: Vec<Vec<ProbeTarget>>,
}

impl ActivationSet {
    pub fn features(&self, li: usize, si: usize) -> &[f64] {
        &self.features[li * self.shots.len() + si]
    }

    pub fn labels(&self, si: usize, kind: TargetKind) -> Vec<u32> {
        self.targets[si].iter().map(|t| kind.value(t)).collect()
    }
}

/// Gathers features for `layers` (0 = embeddings) at pairs `shots`.
pub fn collect_activations<T: Real>(
    model: &Transformer,
    params: &ParamStore<T>,
    seqs: &[SequencePack],
    layers: &[usize],
    shots: &[usize],
) -> Result<ActivationSet> {
    let depth = model.config.layers;
    if let Some(&l) = layers.iter().find(|&&l| l > depth) {
        return Err(Error::LayerRange { layer: l, layers: depth });
    }
    let first = seqs.first().ok_or(Error::EmptyEval)?;
    if let Some(&k) = shots.iter().find(|&&k| k >= first.pairs()) {
        return Err(Error::config("probe.shots", format!("shot {k} outside {} pairs", first.pairs())));
    }
    let dim = model.config.d_model;
    let mut features = vec![Vec::with_capacity(seqs.len() * dim); layers.len() * shots.len()];
    let mut targets = vec![Vec::with_capacity(seqs.len()); shots.len()];
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let tokens: Vec<u32> = chunk.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        let trace = model.trace(params, &tokens, chunk.len())?;
        for (b, s) in chunk.iter().enumerate() {
            for (si, &k) in shots.iter().enumerate() {
                targets[si].push(s.probe_targets[k]);
                for (li, &l) in layers.iter().enumerate() {
                    let row = trace.residual(l, b, SequencePack::x_pos(k))?;
                    features[li * shots.len() + si].extend(row.iter().map(|v| v.to_f64()));
                }
            }
        }
    }
    Ok(ActivationSet { layers: layers.to_vec(), shots: shots.to_vec(), dim, rows: seqs.len(), features, targets })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { train_fraction: 0.8, iterations: 2000, l2: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub accuracy: f64,
    /// Test accuracy of always answering the most frequent training label.
    pub majority: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Multinomial logistic regression on `[n, dim]` features, fit on a
/// random `train_fraction` of rows and scored on the rest.
///
/// Features are standardized with training statistics and the weights
/// are found by full-batch Nesterov-accelerated gradient descent with a
/// step of one over the curvature bound.
pub fn fit_linear_probe(features: &[f64], dim: usize, labels: &[u32], cfg: &ProbeConfig) -> Result<ProbeCell> {
    let n = labels.len();
    if features.len() != n * dim || dim == 0 {
        return Err(Error::shape("fit_linear_probe", format!("{} values for {n} rows of {dim}", features.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateProbe);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((cfg.train_fraction * n as f64) as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for &i in train_idx {
        for (m, x) in mean.iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    for &i in train_idx {
        for ((s, m), x) in sd.iter_mut().zip(&mean).zip(&features[i * dim..(i + 1) * dim]) {
            *s += (x - m) * (x - m);
        }
    }
    sd.iter_mut().for_each(|s| *s = (*s / n_train as f64).sqrt().max(1e-8));
    let standardize = |idx: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            for j in 0..dim {
                out.push((features[i * dim + j] - mean[j]) / sd[j]);
            }
        }
        out
    };
    let xtr = standardize(train_idx);
    let xte = standardize(test_idx);
    let ytr: Vec<usize> = train_idx.iter().map(|&i| labels[i] as usize).collect();
    let yte: Vec<usize> = test_idx.iter().map(|&i| labels[i] as usize).collect();

    let step = 1.0 / (0.5 * (top_eigenvalue(&xtr, n_train, dim) + 1.0) + cfg.l2);
    let (w, b) = nesterov_softmax(&xtr, &ytr, dim, classes, cfg.l2, step, cfg.iterations);

    let mut logits = vec![0.0; yte.len() * classes];
    f64::gemm(yte.len(), dim, classes, 1.0, &xte, false, &w, false, 0.0, &mut logits);
    let mut correct = 0;
    for (r, &y) in yte.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let mut best = 0;
        for c in 1..classes {
            if row[c] + b[c] > row[best] + b[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    let mut freq = vec![0usize; classes];
    ytr.iter().for_each(|&y| freq[y] += 1);
    let top = (0..classes).max_by_key(|&c| (freq[c], std::cmp::Reverse(c))).unwrap_or(0);
    let majority = yte.iter().filter(|&&y| y == top).count() as f64 / yte.len() as f64;
    Ok(ProbeCell { accuracy: correct as f64 / yte.len() as f64, majority, train_size: n_train, test_size: yte.len() })
}

/// Largest eigenvalue of `XᵀX / n` by power iteration.
fn top_eigenvalue(x: &[f64], n: usize, dim: usize) -> f64 {
    let mut gram = vec![0.0; dim * dim];
    f64::gemm(dim, n, dim, 1.0 / n as f64, x, true, x, false, 0.0, &mut gram);
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; dim];
        for i in 0..dim {
            next[i] = (0..dim).map(|j| gram[i * dim + j] * v[j]).sum();
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

fn nesterov_softmax(
    x: &[f64],
    y: &[usize],
    dim: usize,
    classes: usize,
    l2: f64,
    step: f64,
    iterations: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut w = vec![0.0; dim * classes];
    let mut b = vec![0.0; classes];
    let mut w_prev = w.clone();
    let mut b_prev = b.clone();
    let mut probs = vec![0.0; n * classes];
    let mut gw = vec![0.0; dim * classes];
    for it in 0..iterations {
        let mom = it as f64 / (it as f64 + 3.0);
        let wl: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + mom * (a - p)).collect();
        let bl: Vec<f64> = b.iter().zip(&b_prev).map(|(a, p)| a + mom * (a - p)).collect();
        f64::gemm(n, dim, classes, 1.0, x, false, &wl, false, 0.0, &mut probs);
        let mut gb = vec![0.0; classes];
        for (r, &yr) in y.iter().enumerate() {
            let row = &mut probs[r * classes..(r + 1) * classes];
            let mut max = f64::NEG_INFINITY;
            for (v, bias) in row.iter_mut().zip(&bl) {
                *v += bias;
                max = max.max(*v);
            }
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v / sum - if c == yr { 1.0 } else { 0.0 }) / n as f64;
                gb[c] += *v;
            }
        }
        f64::gemm(dim, n, classes, 1.0, x, true, &probs, false, 0.0, &mut gw);
        w_prev.copy_from_slice(&w);
        b_prev.copy_from_slice(&b);
        for ((wi, g), l) in w.iter_mut().zip(&gw).zip(&wl) {
            *wi = l - step * (g + l2 * l);
        }
        for ((bi, g), l) in b.iter_mut().zip(&gb).zip(&bl) {
            *bi = l - step * g;
        }
    }
    (w, b)
}

/// Layers × shots grid of decoding accuracy for one target, with a
/// shuffled-label control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub target: TargetKind,
    pub layers: Vec<usize>,
    pub shots: Vec<usize>,
    pub accuracy: Vec<Vec<f64>>,
    pub control: Vec<Vec<f64>>,
    /// Majority-label baseline on each cell's test split.
    pub majority: Vec<Vec<f64>>,
    pub train_size: usize,
    pub test_size: usize,
}

impl ProbeReport {
    /// Mean accuracy of layer row `li` over the given shot indices.
    pub fn mean_over_shots(&self, li: usize, shots: &[usize]) -> f64 {
        let cols: Vec<usize> = shots.iter().filter_map(|k| self.shots.iter().position(|s| s == k)).collect();
        cols.iter().map(|&c| self.accuracy[li][c]).sum::<f64>() / cols.len().max(1) as f64
    }
}

pub fn probe_grid(acts: &ActivationSet, target: TargetKind, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (nl, ns) = (acts.layers.len(), acts.shots.len());
    let mut report = ProbeReport {
        target,
        layers: acts.layers.clone(),
        shots: acts.shots.clone(),
        accuracy: vec![vec![0.0; ns]; nl],
        control: vec![vec![0.0; ns]; nl],
        majority: vec![vec![0.0; ns]; nl],
        train_size: 0,
        test_size: 0,
    };
    for si in 0..ns {
        let labels = acts.labels(si, target);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed ^ si as u64));
        for li in 0..nl {
            let x = acts.features(li, si);
            let (cell, control) = if labels.iter().all(|&l| l == labels[0]) {
                // One class only: every classifier is trivially right.
                let n_test = acts.rows - ((cfg.train_fraction * acts.rows as f64) as usize).clamp(1, acts.rows - 1);
                let c = ProbeCell { accuracy: 1.0, majority: 1.0, train_size: acts.rows - n_test, test_size: n_test };
                (c, c)
            } else {
                (fit_linear_probe(x, acts.dim, &labels, cfg)?, fit_linear_probe(x, acts.dim, &shuffled, cfg)?)
            };
            report.accuracy[li][si] = cell.accuracy;
            report.control[li][si] = control.accuracy;
            report.majority[li][si] = control.majority;
            report.train_size = cell.train_size;
            report.test_size = cell.test_size;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_two_class_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let c = (i % 2) as u32;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            feats.push(sign * (1.0 + rng.random_range(0.0..1.0)));
            feats.push(rng.random_range(-3.0..3.0));
            labels.push(c);
        }
        let cell = fit_linear_probe(&feats, 2, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(cell.accuracy, 1.0);
        assert_eq!((cell.train_size, cell.test_size), (160, 40));
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1000;
        let feats: Vec<f64> = (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..13)).collect();
        let cell = fit_linear_probe(&feats, 16, &labels, &ProbeConfig::default()).unwrap();
        let chance = 1.0 / 13.0;
        let sigma = (chance * (1.0 - chance) / 200.0).sqrt();
        assert!(cell.accuracy <= chance + 3.0 * sigma, "{}", cell.accuracy);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            fit_linear_probe(&[0.0; 20], 2, &[3; 10], &ProbeConfig::default()),
            Err(Error::DegenerateProbe)
        ));
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<f64> = (0..300 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u32> = (0..300).map(|i| (feats[i * 4] > 0.0) as u32 * 2 + (i % 2) as u32).collect();
        let cfg = ProbeConfig { seed: 9, ..ProbeConfig::default() };
        let a = fit_linear_probe(&feats, 4, &labels, &cfg).unwrap();
        let b = fit_linear_probe(&feats, 4, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.accuracy > 0.4);
    }

    #[test]
    fn target_kinds_round_trip() {
        for k in TargetKind::ALL {
            assert_eq!(TargetKind::parse(k.as_str()), Some(k));
        }
    }
}

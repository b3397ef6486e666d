use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Coordinates sampled per tensor (all of them if the tensor is smaller).
    pub samples_per_tensor: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so that two vanishing gradients are not compared
    /// relatively.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { samples_per_tensor: 200, step: 1e-5, tolerance: 1e-4, floor: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub checked: usize,
    pub max_rel: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel: f64,
}

/// Compares analytic gradients with central differences.
///
/// `loss_and_grad` must return the scalar loss and accumulate its gradient
/// into the store's gradient slots. Fails with [`Error::GradCheck`] when the
/// worst relative error `|a - n| / max(|a|, |n|, floor)` exceeds the
/// tolerance.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    mut loss_and_grad: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore<f64>) -> Result<f64>,
{
    params.zero_grad();
    loss_and_grad(params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    let mut eval = |params: &mut ParamStore<f64>| -> Result<f64> {
        params.zero_grad();
        loss_and_grad(params)
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        let n = grads.len();
        let coords: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, cfg.samples_per_tensor).into_vec()
        };
        let mut entry = GradCheckEntry {
            param: params.get(id).name.clone(),
            checked: coords.len(),
            max_rel: 0.0,
            worst_index: 0,
        };
        for &i in &coords {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + cfg.step;
            let up = eval(params)?;
            params.value_mut(id).data_mut()[i] = orig - cfg.step;
            let down = eval(params)?;
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grads[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if rel > entry.max_rel {
                entry.max_rel = rel;
                entry.worst_index = i;
            }
        }
        entries.push(entry);
    }
    params.zero_grad();
    let worst = entries
        .iter()
        .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
        .cloned();
    let max_rel = worst.as_ref().map_or(0.0, |w| w.max_rel);
    if let Some(w) = worst {
        if w.max_rel > cfg.tolerance {
            return Err(Error::GradCheck {
                param: w.param,
                index: w.worst_index,
                max_rel: w.max_rel,
                tolerance: cfg.tolerance,
            });
        }
    }
    Ok(GradCheckReport { entries, max_rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::tensor::Tensor;

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_fn(&[60], |i| 1.0 + 0.5 * (i as f64 * 0.1).sin())).unwrap();
        s.insert("y", Tensor::from_fn(&[400], |i| 0.1 * (i as f64).cos())).unwrap();
        s
    }

    /// L = sum_i c_i x_i^2 + sum_j (y_j - 1)^2 with c_i = 1 + i / 100.
    fn quadratic(s: &mut ParamStore<f64>, corrupt: bool) -> Result<f64> {
        let id = s.id("x").unwrap();
        let x = s.value(id).data().to_vec();
        let mut loss = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let c = 1.0 + i as f64 / 100.0;
            loss += c * xi * xi;
            let g = if corrupt { 2.1 * c * xi } else { 2.0 * c * xi };
            s.grad_mut(id).data_mut()[i] += g;
        }
        let id = s.id("y").unwrap();
        let y = s.value(id).data().to_vec();
        for (j, yj) in y.iter().enumerate() {
            loss += (yj - 1.0) * (yj - 1.0);
            s.grad_mut(id).data_mut()[j] += 2.0 * (yj - 1.0);
        }
        Ok(loss)
    }

    #[test]
    fn quadratic_passes_tightly() {
        let mut s = quadratic_store();
        let cfg = GradCheckConfig { tolerance: 1e-8, ..Default::default() };
        let r = grad_check(&mut s, |s| quadratic(s, false), cfg).unwrap();
        assert!(r.max_rel < 1e-8);
        assert_eq!(r.entries[0].checked, 60);
        assert_eq!(r.entries[1].checked, 200);
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut s = quadratic_store();
        let r = grad_check(&mut s, |s| quadratic(s, true), GradCheckConfig::default());
        assert!(matches!(r, Err(Error::GradCheck { .. })));
    }
}

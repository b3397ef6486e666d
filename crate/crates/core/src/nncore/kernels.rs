//! Forward and backward kernels.
//!
//! Backward kernels accumulate into their gradient outputs (`+=`), so a
//! caller can route several upstream gradients into one buffer. Forward
//! kernels reject non-finite results.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `a [m x k] * b [k x n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 || b.shape().len() != 2 {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut c = Tensor::zeros(&[m, n]);
    T::gemm(m, k, n, T::ONE, a.data(), false, b.data(), false, T::ZERO, c.data_mut());
    c.check_finite("matmul")?;
    Ok(c)
}

/// `da += dc * b^T`, `db += a^T * dc`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
    da: Option<&mut Tensor<T>>,
    db: Option<&mut Tensor<T>>,
) {
    let (m, k) = a.dims2();
    let (_, n) = b.dims2();
    if let Some(da) = da {
        T::gemm(m, n, k, T::ONE, dc.data(), false, b.data(), true, T::ONE, da.data_mut());
    }
    if let Some(db) = db {
        T::gemm(k, m, n, T::ONE, a.data(), true, dc.data(), false, T::ONE, db.data_mut());
    }
}

/// `x [rows x in] * w [in x out] + bias [out]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, din) = x.dims2();
    let (win, dout) = w.dims2();
    if din != win || bias.len() != dout {
        return Err(Error::shape(
            "linear",
            format!("x {:?}, w {:?}, bias {:?}", x.shape(), w.shape(), bias.shape()),
        ));
    }
    let mut y = Tensor::zeros(&[rows, dout]);
    for r in 0..rows {
        y.data_mut()[r * dout..(r + 1) * dout].copy_from_slice(bias.data());
    }
    T::gemm(rows, din, dout, T::ONE, x.data(), false, w.data(), false, T::ONE, y.data_mut());
    y.check_finite("linear")?;
    Ok(y)
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dx: Option<&mut Tensor<T>>,
    dw: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) {
    matmul_backward(x, w, dy, dx, Some(dw));
    let (_, dout) = dy.dims2();
    let db = dbias.data_mut();
    for row in dy.data().chunks_exact(dout) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    let c = Tensor::from_vec(a.shape(), data)?;
    c.check_finite("add")?;
    Ok(c)
}

/// Gradient of `add` with respect to either operand.
pub fn add_backward<T: Real>(dc: &Tensor<T>, d_operand: &mut Tensor<T>) {
    for (g, v) in d_operand.data_mut().iter_mut().zip(dc.data()) {
        *g += *v;
    }
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    let c = Tensor::from_vec(a.shape(), a.data().iter().map(|x| *x * s).collect())?;
    c.check_finite("scale")?;
    Ok(c)
}

pub fn scale_backward<T: Real>(dc: &Tensor<T>, s: T, da: &mut Tensor<T>) {
    for (g, v) in da.data_mut().iter_mut().zip(dc.data()) {
        *g += *v * s;
    }
}

/// Softmax of one row in place.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(row[0], T::max);
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `dx += y * (dy - <dy, y>)` for one softmax row.
pub(crate) fn softmax_row_backward<T: Real>(y: &[T], dy: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(dy).map(|(a, b)| *a * *b).sum();
    for ((g, yi), dyi) in dx.iter_mut().zip(y).zip(dy) {
        *g += *yi * (*dyi - dot);
    }
}

pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = x.clone();
    let (_, c) = y.dims2();
    for row in y.data_mut().chunks_exact_mut(c) {
        softmax_in_place(row);
    }
    y.check_finite("softmax_rows")?;
    Ok(y)
}

pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, dx: &mut Tensor<T>) {
    let (_, c) = y.dims2();
    for ((yr, dyr), dxr) in y
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        softmax_row_backward(yr, dyr, dxr);
    }
}

/// Saved normalized input and inverse standard deviation per row.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

/// Layer norm over the last axis with learnable gain and bias.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (rows, d) = x.dims2();
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape("layer_norm", format!("x {:?}, gain {:?}", x.shape(), gain.shape())));
    }
    let eps = T::from_f64(LN_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x.data()[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
        let rs = T::ONE / (var + eps).sqrt();
        rstd.push(rs);
        let xh = &mut xhat.data_mut()[r * d..(r + 1) * d];
        for (h, v) in xh.iter_mut().zip(xr) {
            *h = (*v - mean) * rs;
        }
        let yr = &mut y.data_mut()[r * d..(r + 1) * d];
        for i in 0..d {
            yr[i] = xh[i] * gain.data()[i] + bias.data()[i];
        }
    }
    y.check_finite("layer_norm")?;
    Ok((y, LayerNormCache { xhat, rstd }))
}

pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &Tensor<T>,
    dx: &mut Tensor<T>,
    dgain: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) {
    let (rows, d) = dy.dims2();
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dxhat = vec![T::ZERO; d];
    for r in 0..rows {
        let xh = &cache.xhat.data()[r * d..(r + 1) * d];
        let dyr = &dy.data()[r * d..(r + 1) * d];
        for i in 0..d {
            dgain.data_mut()[i] += dyr[i] * xh[i];
            dbias.data_mut()[i] += dyr[i];
            dxhat[i] = dyr[i] * gain.data()[i];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() * inv_d;
        let rs = cache.rstd[r];
        let dxr = &mut dx.data_mut()[r * d..(r + 1) * d];
        for i in 0..d {
            dxr[i] += rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let y = Tensor::from_vec(
        x.shape(),
        x.data()
            .iter()
            .map(|&v| half * v * (T::ONE + (c * (v + a * v * v * v)).tanh()))
            .collect(),
    )?;
    y.check_finite("gelu")?;
    Ok(y)
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, dx: &mut Tensor<T>) {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three_a = T::from_f64(3.0 * GELU_A);
    for ((g, &v), &d) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
        let t = (c * (v + a * v * v * v)).tanh();
        let dt = (T::ONE - t * t) * c * (T::ONE + three_a * v * v);
        *g += d * (half * (T::ONE + t) + half * v * dt);
    }
}

/// Rows of `table [vocab x d]` selected by `ids`.
pub fn embed_lookup<T: Real>(table: &Tensor<T>, ids: &[u32]) -> Result<Tensor<T>> {
    let (vocab, d) = table.dims2();
    let mut out = Tensor::zeros(&[ids.len(), d]);
    for (r, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::TokenRange { token: id, vocab });
        }
        out.data_mut()[r * d..(r + 1) * d].copy_from_slice(table.row(id));
    }
    Ok(out)
}

pub fn embed_backward<T: Real>(ids: &[u32], dy: &Tensor<T>, dtable: &mut Tensor<T>) {
    let (_, d) = dy.dims2();
    for (r, &id) in ids.iter().enumerate() {
        let id = id as usize;
        let src = &dy.data()[r * d..(r + 1) * d];
        let dst = &mut dtable.data_mut()[id * d..(id + 1) * d];
        for (g, v) in dst.iter_mut().zip(src) {
            *g += *v;
        }
    }
}

/// Output of [`weighted_cross_entropy`].
#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    /// `sum_i w_i * ce_i / sum_i w_i`.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits.
    pub dlogits: Tensor<T>,
    /// Unweighted `-log softmax(logits_i)[target_i]` per row.
    pub per_row: Vec<f64>,
}

/// Weighted mean token cross-entropy. Rows with zero weight contribute
/// neither value nor gradient; their `per_row` entry is still reported.
pub fn weighted_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[u32],
    weights: &[f64],
) -> Result<CrossEntropy<T>> {
    let (rows, vocab) = logits.dims2();
    if targets.len() != rows || weights.len() != rows {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!("{rows} rows, {} targets, {} weights", targets.len(), weights.len()),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::config("weights", "loss weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut per_row = Vec::with_capacity(rows);
    let mut loss = 0.0;
    let mut probs = vec![T::ZERO; vocab];
    for r in 0..rows {
        let t = targets[r] as usize;
        if t >= vocab {
            return Err(Error::TokenRange { token: t, vocab });
        }
        probs.copy_from_slice(logits.row(r));
        softmax_in_place(&mut probs);
        let lr = logits.row(r);
        let max = lr.iter().copied().fold(lr[0], T::max).to_f64();
        let lse = max + lr.iter().map(|v| (v.to_f64() - max).exp()).sum::<f64>().ln();
        let ce = lse - lr[t].to_f64();
        per_row.push(ce);
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        loss += w * ce;
        let scale = T::from_f64(w / total);
        let dr = &mut dlogits.data_mut()[r * vocab..(r + 1) * vocab];
        for (j, g) in dr.iter_mut().enumerate() {
            let onehot = if j == t { T::ONE } else { T::ZERO };
            *g = scale * (probs[j] - onehot);
        }
    }
    let loss = loss / total;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "weighted_cross_entropy" });
    }
    Ok(CrossEntropy { loss, dlogits, per_row })
}

/// Causal multi-head self-attention over a packed `[batch * seq, 3 * d]`
/// projection laid out as `[q | k | v]`, heads contiguous within each part.
///
/// Returns the concatenated head outputs `[batch * seq, d]` and the
/// attention probabilities `[batch, heads, seq, seq]`, zero above the
/// diagonal.
pub fn causal_attention<T: Real>(
    qkv: &Tensor<T>,
    batch: usize,
    seq: usize,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (rows, three_d) = qkv.dims2();
    if rows != batch * seq || three_d % (3 * heads) != 0 {
        return Err(Error::shape("causal_attention", format!("qkv {:?}", qkv.shape())));
    }
    let d = three_d / 3;
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = Tensor::zeros(&[rows, d]);
    let mut probs = Tensor::zeros(&[batch, heads, seq, seq]);
    let q = qkv.data();
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for t in 0..seq {
                let qrow = &q[(b * seq + t) * three_d + h * dh..][..dh];
                let prow = &mut probs.data_mut()[pbase + t * seq..pbase + t * seq + t + 1];
                for (s, pv) in prow.iter_mut().enumerate() {
                    let krow = &q[(b * seq + s) * three_d + d + h * dh..][..dh];
                    *pv = qrow.iter().zip(krow).map(|(x, y)| *x * *y).sum::<T>() * scale;
                }
                softmax_in_place(prow);
                let prow = &probs.data()[pbase + t * seq..pbase + t * seq + t + 1];
                let orow = &mut out.data_mut()[(b * seq + t) * d + h * dh..][..dh];
                for (s, &pv) in prow.iter().enumerate() {
                    let vrow = &q[(b * seq + s) * three_d + 2 * d + h * dh..][..dh];
                    for (o, v) in orow.iter_mut().zip(vrow) {
                        *o += pv * *v;
                    }
                }
            }
        }
    }
    out.check_finite("causal_attention")?;
    Ok((out, probs))
}

pub fn causal_attention_backward<T: Real>(
    qkv: &Tensor<T>,
    probs: &Tensor<T>,
    dout: &Tensor<T>,
    dqkv: &mut Tensor<T>,
    batch: usize,
    seq: usize,
    heads: usize,
) {
    let (_, three_d) = qkv.dims2();
    let d = three_d / 3;
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let q = qkv.data();
    let mut dp = vec![T::ZERO; seq];
    let mut ds = vec![T::ZERO; seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for t in 0..seq {
                let prow = &probs.data()[pbase + t * seq..pbase + t * seq + t + 1];
                let dorow = &dout.data()[(b * seq + t) * d + h * dh..][..dh];
                // dV and dP
                for s in 0..=t {
                    let vrow = &q[(b * seq + s) * three_d + 2 * d + h * dh..][..dh];
                    dp[s] = dorow.iter().zip(vrow).map(|(x, y)| *x * *y).sum();
                    let dv = &mut dqkv.data_mut()[(b * seq + s) * three_d + 2 * d + h * dh..][..dh];
                    for (g, o) in dv.iter_mut().zip(dorow) {
                        *g += prow[s] * *o;
                    }
                }
                ds[..=t].iter_mut().for_each(|v| *v = T::ZERO);
                softmax_row_backward(prow, &dp[..=t], &mut ds[..=t]);
                // dQ and dK
                for s in 0..=t {
                    let g = ds[s] * scale;
                    if g == T::ZERO {
                        continue;
                    }
                    for i in 0..dh {
                        let kv = q[(b * seq + s) * three_d + d + h * dh + i];
                        let qv = q[(b * seq + t) * three_d + h * dh + i];
                        dqkv.data_mut()[(b * seq + t) * three_d + h * dh + i] += g * kv;
                        dqkv.data_mut()[(b * seq + s) * three_d + d + h * dh + i] += g * qv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn seq(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn matmul_identity() {
        let m = seq(&[3, 4], 0.7);
        assert_eq!(matmul(&Tensor::identity(3), &m).unwrap(), m);
        assert!(matmul(&m, &m).is_err());
    }

    #[test]
    fn softmax_constant_row() {
        let y = softmax_rows(&t(&[1, 4], &[2.0; 4])).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let y = softmax_rows(&seq(&[5, 7], 3.1)).unwrap();
        for r in 0..5 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardized_row_unchanged() {
        let x = t(&[1, 4], &[1.0, -1.0, 1.0, -1.0]);
        let (y, _) = layer_norm(&x, &t(&[4], &[1.0; 4]), &t(&[4], &[0.0; 4])).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn non_finite_is_rejected() {
        let x = t(&[1, 2], &[f64::MAX, f64::MAX]);
        assert!(matches!(add(&x, &x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 59;
        let uniform = Tensor::<f64>::zeros(&[3, v]);
        let ce = weighted_cross_entropy(&uniform, &[0, 5, 58], &[1.0, 2.0, 0.5]).unwrap();
        assert!((ce.loss - (59f64).ln()).abs() < 1e-12);

        let mut sharp = Tensor::<f64>::zeros(&[1, v]);
        sharp.data_mut()[7] = 60.0;
        let ce = weighted_cross_entropy(&sharp, &[7], &[1.0]).unwrap();
        assert!(ce.loss < 1e-20);

        let logits = seq(&[4, 6], 1.3);
        let a = weighted_cross_entropy(&logits, &[1, 2, 3, 4], &[0.5, 1.0, 0.0, 2.0]).unwrap();
        let b = weighted_cross_entropy(&logits, &[1, 2, 3, 4], &[1.0, 2.0, 0.0, 4.0]).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss);
        assert!(a.dlogits.row(2).iter().all(|g| *g == 0.0));

        assert!(matches!(
            weighted_cross_entropy(&logits, &[1, 2, 3, 4], &[0.0; 4]),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let (batch, seqlen, heads, d) = (2, 5, 2, 4);
        let qkv = seq(&[batch * seqlen, 3 * d], 0.91);
        let (_, probs) = causal_attention(&qkv, batch, seqlen, heads).unwrap();
        for row in probs.data().chunks_exact(seqlen).enumerate() {
            let (i, r) = row;
            let t = i % seqlen;
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r[t + 1..].iter().all(|v| *v == 0.0));
            assert!(r.iter().all(|v| *v >= 0.0));
        }
    }

    /// Central-difference check of each backward kernel on a random
    /// projection `L = sum(c * f(x))`.
    fn fd_check(
        x: &Tensor<f64>,
        f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
        back: &dyn Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
    ) {
        let y = f(x);
        let c = seq(y.shape(), 2.3);
        let dx = back(x, &c);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let lp: f64 = f(&xp).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            let lm: f64 = f(&xm).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            let num = (lp - lm) / (2.0 * h);
            let ana = dx.data()[i];
            assert!(
                (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                "index {i}: numeric {num}, analytic {ana}"
            );
        }
    }

    #[test]
    fn backward_kernels_match_finite_differences() {
        let x = seq(&[3, 5], 0.77);
        fd_check(&x, &|x| gelu(x).unwrap(), &|x, dy| {
            let mut dx = Tensor::zeros(x.shape());
            gelu_backward(x, dy, &mut dx);
            dx
        });
        fd_check(&x, &|x| softmax_rows(x).unwrap(), &|x, dy| {
            let mut dx = Tensor::zeros(x.shape());
            softmax_rows_backward(&softmax_rows(x).unwrap(), dy, &mut dx);
            dx
        });
        let g = seq(&[5], 0.3);
        let bias = seq(&[5], 0.9);
        fd_check(&x, &|x| layer_norm(x, &g, &bias).unwrap().0, &|x, dy| {
            let (_, cache) = layer_norm(x, &g, &bias).unwrap();
            let mut dx = Tensor::zeros(x.shape());
            let mut dg = Tensor::zeros(&[5]);
            let mut db = Tensor::zeros(&[5]);
            layer_norm_backward(&cache, &g, dy, &mut dx, &mut dg, &mut db);
            dx
        });
        let w = seq(&[5, 2], 1.7);
        fd_check(&x, &|x| matmul(x, &w).unwrap(), &|x, dy| {
            let mut dx = Tensor::zeros(x.shape());
            matmul_backward(x, &w, dy, Some(&mut dx), None);
            dx
        });
        fd_check(&w, &|w| matmul(&x, w).unwrap(), &|w, dy| {
            let mut dw = Tensor::zeros(w.shape());
            matmul_backward(&x, w, dy, None, Some(&mut dw));
            dw
        });
        fd_check(&x, &|x| scale(x, 1.5).unwrap(), &|_, dy| {
            let mut dx = Tensor::zeros(dy.shape());
            scale_backward(dy, 1.5, &mut dx);
            dx
        });
        let (batch, seqlen, heads) = (2, 4, 2);
        let qkv = seq(&[batch * seqlen, 12], 0.53);
        fd_check(&qkv, &|q| causal_attention(q, batch, seqlen, heads).unwrap().0, &|q, dy| {
            let (_, probs) = causal_attention(q, batch, seqlen, heads).unwrap();
            let mut dq = Tensor::zeros(q.shape());
            causal_attention_backward(q, &probs, dy, &mut dq, batch, seqlen, heads);
            dq
        });
        let table = seq(&[4, 3], 0.4);
        let ids = [3u32, 0, 3];
        fd_check(&table, &|tb| embed_lookup(tb, &ids).unwrap(), &|tb, dy| {
            let mut dt = Tensor::zeros(tb.shape());
            embed_backward(&ids, dy, &mut dt);
            dt
        });
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = seq(&[3, 5], 1.9);
        let targets = [4u32, 0, 2];
        let weights = [0.3, 0.0, 1.2];
        let ce = weighted_cross_entropy(&logits, &targets, &weights).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let num = (weighted_cross_entropy(&p, &targets, &weights).unwrap().loss
                - weighted_cross_entropy(&m, &targets, &weights).unwrap().loss)
                / (2.0 * h);
            assert!((num - ce.dlogits.data()[i]).abs() < 1e-8);
        }
    }
}

//! Single-head temporal attention over a root's most recent neighbors.
//!
//! ```text
//! q = W_q {x_v ‖ Φ(0)} + b_q
//! K = W_k {X_w ‖ E_vw ‖ Φ(Δt)} + b_k
//! V = W_v {X_w ‖ E_vw ‖ Φ(Δt)} + b_v
//! h = softmax(q Kᵀ / √|N|) V
//! ```
//!
//! A root without neighbors embeds to the zero vector.

use crate::error::{Error, Result};
use crate::nn::tensor::{affine, affine_backward_input, affine_backward_params, dot, Tensor};
use crate::nn::time_enc::{time_encode_backward, time_encode_into};

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
}

impl AttnParams {
    /// `d_x` is the node input width (dynamic memory plus static memory).
    pub fn zeros(d_x: usize, d_e: usize, d_t: usize, d_out: usize) -> Self {
        Self {
            w_q: Tensor::zeros(&[d_out, d_x + d_t]),
            b_q: Tensor::zeros(&[d_out]),
            w_k: Tensor::zeros(&[d_out, d_x + d_e + d_t]),
            b_k: Tensor::zeros(&[d_out]),
            w_v: Tensor::zeros(&[d_out, d_x + d_e + d_t]),
            b_v: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_out(&self) -> usize {
        self.b_q.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NeighborInput<'a> {
    pub x: &'a [f64],
    pub edge: &'a [f64],
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    d_x: usize,
    d_e: usize,
    query_in: Vec<f64>,
    q: Vec<f64>,
    kv_in: Vec<Vec<f64>>,
    dts: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl AttnCache {
    pub fn weights(&self) -> &[f64] {
        &self.alpha
    }
}

/// Gradients with respect to the node inputs of one attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnInputGrads {
    pub root: Vec<f64>,
    pub neighbors: Vec<Vec<f64>>,
}

pub fn attention_forward(
    p: &AttnParams,
    omega: &[f64],
    root: &[f64],
    neighbors: &[NeighborInput<'_>],
) -> Result<(Vec<f64>, AttnCache)> {
    let d_t = omega.len();
    let d_x = root.len();
    let d_out = p.d_out();
    if p.w_q.cols() != d_x + d_t {
        return Err(Error::Shape(format!("query input width {} != {}", d_x + d_t, p.w_q.cols())));
    }
    let d_e = p.w_k.cols().checked_sub(d_x + d_t).ok_or_else(|| Error::Shape("key width".into()))?;

    let mut query_in = Vec::with_capacity(d_x + d_t);
    query_in.extend_from_slice(root);
    query_in.extend(std::iter::repeat_n(1.0, d_t));
    let mut q = vec![0.0; d_out];
    affine(&p.w_q, p.b_q.data(), &query_in, &mut q);

    let n = neighbors.len();
    let mut kv_in = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut dts = Vec::with_capacity(n);
    for nb in neighbors {
        if nb.x.len() != d_x || nb.edge.len() != d_e {
            return Err(Error::Shape(format!(
                "neighbor input {}+{} does not match {d_x}+{d_e}",
                nb.x.len(),
                nb.edge.len()
            )));
        }
        let mut row = Vec::with_capacity(d_x + d_e + d_t);
        row.extend_from_slice(nb.x);
        row.extend_from_slice(nb.edge);
        row.resize(d_x + d_e + d_t, 0.0);
        time_encode_into(nb.dt, omega, &mut row[d_x + d_e..])?;
        let mut k = vec![0.0; d_out];
        let mut v = vec![0.0; d_out];
        affine(&p.w_k, p.b_k.data(), &row, &mut k);
        affine(&p.w_v, p.b_v.data(), &row, &mut v);
        kv_in.push(row);
        keys.push(k);
        values.push(v);
        dts.push(nb.dt);
    }

    let mut h = vec![0.0; d_out];
    let mut alpha = Vec::with_capacity(n);
    if n > 0 {
        let scale = 1.0 / (n as f64).sqrt();
        alpha.extend(keys.iter().map(|k| dot(&q, k) * scale));
        softmax_in_place(&mut alpha);
        for (a, v) in alpha.iter().zip(&values) {
            for (o, x) in h.iter_mut().zip(v) {
                *o += a * x;
            }
        }
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("attention output".into()));
    }
    Ok((h, AttnCache { d_x, d_e, query_in, q, kv_in, dts, keys, values, alpha }))
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Accumulates parameter and frequency gradients; returns the gradients of
/// the root and neighbor node inputs.
pub fn attention_backward(
    p: &AttnParams,
    omega: &[f64],
    cache: &AttnCache,
    d_h: &[f64],
    grads: &mut AttnParams,
    grad_omega: &mut [f64],
) -> Result<AttnInputGrads> {
    let d_out = p.d_out();
    if d_h.len() != d_out || cache.q.len() != d_out {
        return Err(Error::Shape(format!("upstream gradient {} != {d_out}", d_h.len())));
    }
    let (d_x, d_e) = (cache.d_x, cache.d_e);
    let n = cache.alpha.len();
    let mut root = vec![0.0; d_x];
    let mut neighbors = Vec::with_capacity(n);
    if n == 0 {
        return Ok(AttnInputGrads { root, neighbors });
    }
    let scale = 1.0 / (n as f64).sqrt();

    let d_alpha: Vec<f64> = cache.values.iter().map(|v| dot(d_h, v)).collect();
    let weighted: f64 = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_score: Vec<f64> = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * (d - weighted)).collect();

    let mut d_q = vec![0.0; d_out];
    for (idx, &dsc) in d_score.iter().enumerate() {
        let ds = dsc * scale;
        for (dq, k) in d_q.iter_mut().zip(&cache.keys[idx]) {
            *dq += ds * k;
        }
        let d_k: Vec<f64> = cache.q.iter().map(|q| ds * q).collect();
        let d_v: Vec<f64> = d_h.iter().map(|g| cache.alpha[idx] * g).collect();
        let row = &cache.kv_in[idx];
        affine_backward_params(&mut grads.w_k, grads.b_k.data_mut(), &d_k, row);
        affine_backward_params(&mut grads.w_v, grads.b_v.data_mut(), &d_v, row);
        let mut d_row = vec![0.0; row.len()];
        affine_backward_input(&p.w_k, &d_k, &mut d_row);
        affine_backward_input(&p.w_v, &d_v, &mut d_row);
        time_encode_backward(cache.dts[idx], omega, &d_row[d_x + d_e..], grad_omega);
        d_row.truncate(d_x);
        neighbors.push(d_row);
    }

    affine_backward_params(&mut grads.w_q, grads.b_q.data_mut(), &d_q, &cache.query_in);
    let mut d_query_in = vec![0.0; cache.query_in.len()];
    affine_backward_input(&p.w_q, &d_q, &mut d_query_in);
    // Φ(0) does not depend on ω.
    root.copy_from_slice(&d_query_in[..d_x]);
    Ok(AttnInputGrads { root, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d_x: usize, d_e: usize, d_t: usize, d_out: usize) -> AttnParams {
        let mut p = AttnParams::zeros(d_x, d_e, d_t, d_out);
        for (i, x) in p.w_q.data_mut().iter_mut().enumerate() {
            *x = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        for (i, x) in p.w_k.data_mut().iter_mut().enumerate() {
            *x = ((i * 5 % 13) as f64 - 6.0) * 0.1;
        }
        for (i, x) in p.w_v.data_mut().iter_mut().enumerate() {
            *x = ((i * 3 % 7) as f64 - 3.0) * 0.2;
        }
        p
    }

    #[test]
    fn single_neighbor_returns_its_value_row() {
        let p = params(3, 1, 2, 4);
        let omega = [0.5, 0.1];
        let x = [0.3, -0.2, 0.8];
        let nb = [NeighborInput { x: &x, edge: &[0.4], dt: 2.0 }];
        let (h, cache) = attention_forward(&p, &omega, &[1.0, 0.0, -1.0], &nb).unwrap();
        assert_eq!(cache.weights(), &[1.0]);
        assert_eq!(h, cache.values[0]);
    }

    #[test]
    fn identical_neighbors_split_evenly() {
        let p = params(3, 0, 2, 4);
        let x = [0.3, -0.2, 0.8];
        let nb = [NeighborInput { x: &x, edge: &[], dt: 1.0 }; 2];
        let (_, cache) = attention_forward(&p, &[0.2, 0.9], &[0.1, 0.2, 0.3], &nb).unwrap();
        assert_eq!(cache.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn no_neighbors_gives_zero_embedding() {
        let p = params(3, 0, 2, 4);
        let (h, cache) = attention_forward(&p, &[0.2, 0.9], &[0.1, 0.2, 0.3], &[]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        let mut g = AttnParams::zeros(3, 0, 2, 4);
        let mut go = [0.0; 2];
        let d = attention_backward(&p, &[0.2, 0.9], &cache, &[1.0; 4], &mut g, &mut go).unwrap();
        assert_eq!(d.root, vec![0.0; 3]);
        assert_eq!(g, AttnParams::zeros(3, 0, 2, 4));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = params(3, 1, 2, 4);
        let omega = [0.5, 0.1];
        let xs = [[0.3, -0.2, 0.8], [0.1, 0.1, -0.5]];
        let nb: Vec<_> = xs.iter().map(|x| NeighborInput { x, edge: &[0.4], dt: 1.5 }).collect();
        let (_, cache) = attention_forward(&p, &omega, &[1.0, 0.0, -1.0], &nb).unwrap();
        let mut g = AttnParams::zeros(3, 1, 2, 4);
        let mut go = [0.0; 2];
        attention_backward(&p, &omega, &cache, &[0.0; 4], &mut g, &mut go).unwrap();
        assert_eq!(g, AttnParams::zeros(3, 1, 2, 4));
        assert_eq!(go, [0.0; 2]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut xs = [1000.0, -3.0, 2.5, 999.0];
        softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upstream_shape_mismatch() {
        let p = params(3, 0, 2, 4);
        let x = [0.3, -0.2, 0.8];
        let nb = [NeighborInput { x: &x, edge: &[], dt: 1.0 }];
        let (_, cache) = attention_forward(&p, &[0.2, 0.9], &x, &nb).unwrap();
        let mut g = AttnParams::zeros(3, 0, 2, 4);
        let mut go = [0.0; 2];
        assert!(attention_backward(&p, &[0.2, 0.9], &cache, &[1.0; 3], &mut g, &mut go).is_err());
    }
}

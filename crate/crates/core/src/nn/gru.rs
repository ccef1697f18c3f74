//! GRU memory updater.
//!
//! ```text
//! z  = σ(W_z {m ‖ s} + b_z)
//! r  = σ(W_r {m ‖ s} + b_r)
//! h̃  = tanh(W_h {m ‖ (r ⊙ s)} + b_h)
//! s' = (1 − z) ⊙ s + z ⊙ h̃
//! ```
//!
//! The previous memory `s` is a constant: gradients stop at the cell input and
//! never reach earlier updates.

use crate::error::{Error, Result};
use crate::nn::tensor::{affine, affine_backward_input, affine_backward_params, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(d_mail: usize, d_mem: usize) -> Self {
        let w = || Tensor::zeros(&[d_mem, d_mail + d_mem]);
        let b = || Tensor::zeros(&[d_mem]);
        Self { w_z: w(), w_r: w(), w_h: w(), b_z: b(), b_r: b(), b_h: b() }
    }

    pub fn d_mem(&self) -> usize {
        self.b_z.len()
    }

    pub fn d_mail(&self) -> usize {
        self.w_z.cols() - self.d_mem()
    }
}

/// Saved activations of one cell application.
#[derive(Debug, Clone)]
pub struct GruCache {
    input: Vec<f64>,
    gated_input: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
}

pub fn gru_forward(p: &GruParams, mail: &[f64], s: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    let (d_mail, d_mem) = (p.d_mail(), p.d_mem());
    if mail.len() != d_mail || s.len() != d_mem {
        return Err(Error::Shape(format!(
            "gru expects mail {d_mail} and memory {d_mem}, got {} and {}",
            mail.len(),
            s.len()
        )));
    }
    let mut input = Vec::with_capacity(d_mail + d_mem);
    input.extend_from_slice(mail);
    input.extend_from_slice(s);

    let mut z = vec![0.0; d_mem];
    let mut r = vec![0.0; d_mem];
    affine(&p.w_z, p.b_z.data(), &input, &mut z);
    affine(&p.w_r, p.b_r.data(), &input, &mut r);
    z.iter_mut().for_each(|x| *x = sigmoid(*x));
    r.iter_mut().for_each(|x| *x = sigmoid(*x));

    let mut gated_input = Vec::with_capacity(d_mail + d_mem);
    gated_input.extend_from_slice(mail);
    gated_input.extend(r.iter().zip(s).map(|(a, b)| a * b));
    let mut candidate = vec![0.0; d_mem];
    affine(&p.w_h, p.b_h.data(), &gated_input, &mut candidate);
    candidate.iter_mut().for_each(|x| *x = x.tanh());

    let out: Vec<f64> = (0..d_mem).map(|i| (1.0 - z[i]) * s[i] + z[i] * candidate[i]).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("gru output".into()));
    }
    Ok((out, GruCache { input, gated_input, z, r, candidate }))
}

/// Accumulates parameter gradients and returns `∂L/∂mail`.
pub fn gru_backward(p: &GruParams, cache: &GruCache, d_out: &[f64], grads: &mut GruParams) -> Vec<f64> {
    let (d_mail, d_mem) = (p.d_mail(), p.d_mem());
    let s = &cache.input[d_mail..];
    let mut d_input = vec![0.0; d_mail + d_mem];

    let mut da_h = vec![0.0; d_mem];
    let mut da_z = vec![0.0; d_mem];
    for i in 0..d_mem {
        let (z, h) = (cache.z[i], cache.candidate[i]);
        da_h[i] = d_out[i] * z * (1.0 - h * h);
        da_z[i] = d_out[i] * (h - s[i]) * z * (1.0 - z);
    }
    affine_backward_params(&mut grads.w_h, grads.b_h.data_mut(), &da_h, &cache.gated_input);
    let mut d_gated = vec![0.0; d_mail + d_mem];
    affine_backward_input(&p.w_h, &da_h, &mut d_gated);

    let mut da_r = vec![0.0; d_mem];
    for i in 0..d_mem {
        let r = cache.r[i];
        da_r[i] = d_gated[d_mail + i] * s[i] * r * (1.0 - r);
    }
    affine_backward_params(&mut grads.w_z, grads.b_z.data_mut(), &da_z, &cache.input);
    affine_backward_params(&mut grads.w_r, grads.b_r.data_mut(), &da_r, &cache.input);
    affine_backward_input(&p.w_z, &da_z, &mut d_input);
    affine_backward_input(&p.w_r, &da_r, &mut d_input);

    d_input.truncate(d_mail);
    for (d, g) in d_input.iter_mut().zip(&d_gated[..d_mail]) {
        *d += g;
    }
    d_input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_keep_zero_memory() {
        let p = GruParams::zeros(5, 3);
        let (out, cache) = gru_forward(&p, &[0.7; 5], &[0.0; 3]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert!(cache.z.iter().all(|&z| z == 0.5));
        assert!(cache.candidate.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn closed_update_gate_is_identity() {
        let mut p = GruParams::zeros(2, 3);
        p.b_z.fill(-60.0);
        p.w_h.fill(0.3);
        let s = [0.2, -0.4, 0.9];
        let (out, _) = gru_forward(&p, &[1.0, -1.0], &s).unwrap();
        for (a, b) in out.iter().zip(&s) {
            assert!((a - b).abs() < 1e-20);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(gru_forward(&p, &[1.0], &[0.0; 3]), Err(Error::Shape(_))));
    }
}

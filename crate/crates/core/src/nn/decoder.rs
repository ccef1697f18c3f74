//! Two-layer link decoder: `w2 · relu(W1 {h_u ‖ h_v} + b1) + b2`.

use crate::error::{Error, Result};
use crate::nn::tensor::{affine, affine_backward_input, affine_backward_params, dot, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl DecoderParams {
    pub fn zeros(d_in: usize, d_hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[d_hidden, 2 * d_in]),
            b1: Tensor::zeros(&[d_hidden]),
            w2: Tensor::zeros(&[1, d_hidden]),
            b2: Tensor::zeros(&[1]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

pub fn decode_link(p: &DecoderParams, h_u: &[f64], h_v: &[f64]) -> Result<(f64, DecoderCache)> {
    if h_u.len() + h_v.len() != p.w1.cols() || h_u.len() != h_v.len() {
        return Err(Error::Shape(format!(
            "decoder expects 2x{}, got {}+{}",
            p.w1.cols() / 2,
            h_u.len(),
            h_v.len()
        )));
    }
    let mut input = Vec::with_capacity(p.w1.cols());
    input.extend_from_slice(h_u);
    input.extend_from_slice(h_v);
    let mut hidden = vec![0.0; p.w1.rows()];
    affine(&p.w1, p.b1.data(), &input, &mut hidden);
    hidden.iter_mut().for_each(|x| *x = x.max(0.0));
    let logit = dot(p.w2.data(), &hidden) + p.b2.data()[0];
    Ok((logit, DecoderCache { input, hidden }))
}

/// Accumulates parameter gradients; returns `(∂L/∂h_u, ∂L/∂h_v)`.
pub fn decode_link_backward(
    p: &DecoderParams,
    cache: &DecoderCache,
    d_logit: f64,
    grads: &mut DecoderParams,
) -> (Vec<f64>, Vec<f64>) {
    grads.b2.data_mut()[0] += d_logit;
    let d_hidden: Vec<f64> = cache
        .hidden
        .iter()
        .zip(p.w2.data())
        .map(|(&h, &w)| if h > 0.0 { d_logit * w } else { 0.0 })
        .collect();
    for (g, &h) in grads.w2.data_mut().iter_mut().zip(&cache.hidden) {
        *g += d_logit * h;
    }
    affine_backward_params(&mut grads.w1, grads.b1.data_mut(), &d_hidden, &cache.input);
    let mut d_input = vec![0.0; cache.input.len()];
    affine_backward_input(&p.w1, &d_hidden, &mut d_input);
    let d_v = d_input.split_off(d_input.len() / 2);
    (d_input, d_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_logit() {
        let p = DecoderParams::zeros(3, 4);
        let (logit, _) = decode_link(&p, &[1.0, 2.0, 3.0], &[-4.0, 0.5, 9.0]).unwrap();
        assert_eq!(logit, 0.0);
    }

    #[test]
    fn concatenation_is_ordered() {
        let mut p = DecoderParams::zeros(2, 2);
        p.w1.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        p.w2.data_mut().copy_from_slice(&[1.0, -1.0]);
        let (ab, _) = decode_link(&p, &[1.0, 0.0], &[0.2, 0.0]).unwrap();
        let (ba, _) = decode_link(&p, &[0.2, 0.0], &[1.0, 0.0]).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = DecoderParams::zeros(3, 4);
        assert!(decode_link(&p, &[1.0; 3], &[1.0; 2]).is_err());
    }
}

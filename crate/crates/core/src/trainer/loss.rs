use crate::error::{Error, Result};
use crate::nn::tensor::sigmoid;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// Mean of `softplus(-x)` over positives plus mean of `softplus(x)` over
/// negatives, with gradients for every logit.
pub fn bce_loss(pos: &[f64], neg: &[f64]) -> Result<BceOutput> {
    if pos.is_empty() {
        return Err(Error::Contract("bce_loss needs at least one positive".into()));
    }
    let np = pos.len() as f64;
    let mut loss = pos.iter().map(|&x| softplus(-x)).sum::<f64>() / np;
    let d_pos = pos.iter().map(|&x| -sigmoid(-x) / np).collect();
    let d_neg = if neg.is_empty() {
        Vec::new()
    } else {
        let nn = neg.len() as f64;
        loss += neg.iter().map(|&x| softplus(x)).sum::<f64>() / nn;
        neg.iter().map(|&x| sigmoid(x) / nn).collect()
    };
    if !loss.is_finite() {
        return Err(Error::Numeric("loss".into()));
    }
    Ok(BceOutput { loss, d_pos, d_neg })
}

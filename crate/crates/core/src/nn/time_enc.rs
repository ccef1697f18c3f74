//! Cosine time encoding `Φ(Δt)_i = cos(Δt · ω_i)` with learnable frequencies.

use crate::error::{Error, Result};

pub fn time_encode(dt: f64, omega: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; omega.len()];
    time_encode_into(dt, omega, &mut out)?;
    Ok(out)
}

pub fn time_encode_into(dt: f64, omega: &[f64], out: &mut [f64]) -> Result<()> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("time encoding needs a finite Δt >= 0, got {dt}")));
    }
    for (o, &w) in out.iter_mut().zip(omega) {
        *o = (dt * w).cos();
    }
    Ok(())
}

/// Accumulates `∂L/∂ω` into `grad_omega` and returns `∂L/∂Δt`.
pub fn time_encode_backward(dt: f64, omega: &[f64], upstream: &[f64], grad_omega: &mut [f64]) -> f64 {
    let mut d_dt = 0.0;
    for ((&w, &g), gw) in omega.iter().zip(upstream).zip(grad_omega.iter_mut()) {
        let s = (dt * w).sin();
        *gw -= g * dt * s;
        d_dt -= g * w * s;
    }
    d_dt
}

/// Frequencies log-spaced over `[1e-5, 1]`, divided by the largest timestamp.
pub fn init_frequencies(d_t: usize, max_t: f64) -> Vec<f64> {
    let scale = if max_t > 0.0 { 1.0 / max_t } else { 1.0 };
    (0..d_t)
        .map(|i| {
            let frac = if d_t > 1 { i as f64 / (d_t - 1) as f64 } else { 1.0 };
            10f64.powf(-5.0 * (1.0 - frac)) * scale
        })
        .collect()
}

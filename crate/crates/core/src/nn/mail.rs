//! Mail construction and static-memory combination.
//!
//! A stored mail keeps only `{s_self ‖ s_other ‖ e}` plus its timestamp; the
//! time encoding block is inserted when the mail is consumed, because the
//! frequencies are learnable.

use crate::error::{Error, Result};
use crate::nn::time_enc::time_encode_into;

/// `{s_self ‖ s_other ‖ Φ(Δt) ‖ e}`.
pub fn make_mail(s_self: &[f64], s_other: &[f64], dt: f64, edge: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
    if s_self.len() != s_other.len() {
        return Err(Error::Shape(format!("memory widths differ: {} vs {}", s_self.len(), s_other.len())));
    }
    let d_mem = s_self.len();
    let d_t = omega.len();
    let mut mail = Vec::with_capacity(2 * d_mem + d_t + edge.len());
    mail.extend_from_slice(s_self);
    mail.extend_from_slice(s_other);
    mail.resize(2 * d_mem + d_t, 0.0);
    time_encode_into(dt, omega, &mut mail[2 * d_mem..])?;
    mail.extend_from_slice(edge);
    Ok(mail)
}

/// Stored form `{s_self ‖ s_other ‖ e}`.
pub fn make_raw_mail(s_self: &[f64], s_other: &[f64], edge: &[f64]) -> Vec<f64> {
    let mut raw = Vec::with_capacity(s_self.len() + s_other.len() + edge.len());
    raw.extend_from_slice(s_self);
    raw.extend_from_slice(s_other);
    raw.extend_from_slice(edge);
    raw
}

/// Inserts `Φ(Δt)` into a stored mail.
pub fn expand_mail(raw: &[f64], d_mem: usize, dt: f64, omega: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 * d_mem {
        return Err(Error::Shape(format!("stored mail of width {} is shorter than 2x{d_mem}", raw.len())));
    }
    make_mail(&raw[..d_mem], &raw[d_mem..2 * d_mem], dt, &raw[2 * d_mem..], omega)
}

/// Model input of a node: `{s_v ‖ static_v}`.
pub fn combine_static(memory: &[f64], static_row: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(memory.len() + static_row.len());
    x.extend_from_slice(memory);
    x.extend_from_slice(static_row);
    x
}

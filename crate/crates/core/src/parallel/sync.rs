use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Averages the gradients of the trainers that were active this iteration,
/// summing in trainer order so the result is reproducible. `None` when no
/// trainer was active.
pub fn average_gradients(grads: &[Option<&ModelParams>]) -> Result<Option<ModelParams>> {
    let mut active = grads.iter().flatten();
    let Some(first) = active.next() else { return Ok(None) };
    let mut sum = (*first).clone();
    let mut count = 1usize;
    for g in active {
        if g.dims != sum.dims {
            return Err(Error::Shape("gradient replicas have different model dimensions".into()));
        }
        sum.add_assign(g);
        count += 1;
    }
    sum.scale(1.0 / count as f64);
    Ok(Some(sum))
}

/// True when every replica carries the same parameter fingerprint.
pub fn replicas_identical(fingerprints: &[u64]) -> bool {
    fingerprints.windows(2).all(|w| w[0] == w[1])
}

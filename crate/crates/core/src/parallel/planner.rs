use crate::error::{Error, Result};

/// Parallelism degrees and the emulated topology they run on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Mini-batch parallelism.
    pub i: usize,
    /// Epoch parallelism.
    pub j: usize,
    /// Memory parallelism.
    pub k: usize,
    /// Machines.
    pub p: usize,
    /// Trainers per machine.
    pub q: usize,
    pub local_batch: usize,
    pub lr_base: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { i: 1, j: 1, k: 1, p: 1, q: 1, local_batch: 600, lr_base: 1e-4, epochs: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn trainers(&self) -> usize {
        self.i * self.j * self.k
    }

    pub fn global_batch(&self) -> usize {
        self.i * self.local_batch
    }

    /// Learning rate scaled linearly with the number of trainers.
    pub fn effective_lr(&self) -> f64 {
        self.lr_base * self.trainers() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 || self.k == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::Config("i, j, k, p and q must all be >= 1".into()));
        }
        if self.trainers() != self.p * self.q {
            return Err(Error::Config(format!(
                "i*j*k = {}*{}*{} = {} does not equal p*q = {}*{} = {}",
                self.i,
                self.j,
                self.k,
                self.trainers(),
                self.p,
                self.q,
                self.p * self.q
            )));
        }
        if self.k < self.p {
            return Err(Error::Config(format!("k = {} must be at least the machine count p = {}", self.k, self.p)));
        }
        if self.local_batch == 0 {
            return Err(Error::Config("local_batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_base >= 0.0 && self.lr_base.is_finite()) {
            return Err(Error::Config(format!("lr_base must be finite and >= 0, got {}", self.lr_base)));
        }
        Ok(())
    }
}

/// Chooses `(i, j, k)` for `p` machines with `q` trainers each.
///
/// `i` is the number of saturated local batches that fit under the largest
/// safe global batch, rounded down to a divisor of `q`. `k` takes as many
/// memory copies as the machines hold (at most `p·q/i`), lowered until it is
/// a multiple of `p` that divides `p·q/i`. `j` fills the rest.
pub fn plan_config(
    p: usize,
    q: usize,
    max_safe_batch: usize,
    saturation_batch: usize,
    mem_copies_per_machine: usize,
) -> Result<(usize, usize, usize)> {
    if p == 0 || q == 0 {
        return Err(Error::Planner("p and q must be >= 1".into()));
    }
    if max_safe_batch == 0 || saturation_batch == 0 {
        return Err(Error::Planner("batch capacities must be positive".into()));
    }
    if mem_copies_per_machine == 0 {
        return Err(Error::Planner(
            "at least one memory copy per machine is needed to satisfy k >= p".into(),
        ));
    }
    let wanted_i = max_safe_batch.div_ceil(saturation_batch);
    let i = (1..=wanted_i.min(q)).rev().find(|&d| q.is_multiple_of(d)).unwrap_or(1);
    let total = p * q;
    let mut k = (p * mem_copies_per_machine).min(total / i);
    while k >= p && !(k.is_multiple_of(p) && total.is_multiple_of(i * k)) {
        k -= 1;
    }
    if k < p {
        return Err(Error::Planner(format!(
            "no k >= p = {p} divides p*q/i = {}/{i} with whole memory copies per machine",
            total
        )));
    }
    Ok((i, total / (i * k), k))
}

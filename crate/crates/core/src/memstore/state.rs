use crate::error::{Error, Result};

/// Marks "no cached mail" in `mail_ts`.
pub const NO_MAIL: f64 = f64::NEG_INFINITY;

/// Dynamic node memory plus one cached mail per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMemoryState {
    num_nodes: usize,
    d_mem: usize,
    mail_dim: usize,
    memory: Vec<f64>,
    last_update: Vec<f64>,
    mail: Vec<f64>,
    mail_ts: Vec<f64>,
}

impl NodeMemoryState {
    /// `mail_dim` is the stored mail width.
    pub fn new(num_nodes: usize, d_mem: usize, mail_dim: usize) -> Result<Self> {
        if num_nodes == 0 || d_mem == 0 || mail_dim == 0 {
            return Err(Error::Config("memory dimensions must be positive".into()));
        }
        Ok(Self {
            num_nodes,
            d_mem,
            mail_dim,
            memory: vec![0.0; num_nodes * d_mem],
            last_update: vec![0.0; num_nodes],
            mail: vec![0.0; num_nodes * mail_dim],
            mail_ts: vec![NO_MAIL; num_nodes],
        })
    }

    pub fn reset(&mut self) {
        self.memory.fill(0.0);
        self.last_update.fill(0.0);
        self.mail.fill(0.0);
        self.mail_ts.fill(NO_MAIL);
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d_mem(&self) -> usize {
        self.d_mem
    }

    pub fn mail_dim(&self) -> usize {
        self.mail_dim
    }

    pub fn memory(&self, v: usize) -> &[f64] {
        &self.memory[v * self.d_mem..(v + 1) * self.d_mem]
    }

    pub fn mail(&self, v: usize) -> &[f64] {
        &self.mail[v * self.mail_dim..(v + 1) * self.mail_dim]
    }

    pub fn last_update(&self, v: usize) -> f64 {
        self.last_update[v]
    }

    pub fn mail_ts(&self, v: usize) -> f64 {
        self.mail_ts[v]
    }

    pub fn memory_norm(&self) -> f64 {
        self.memory.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.memory.iter().chain(&self.mail).all(|&x| x == 0.0)
            && self.last_update.iter().all(|&x| x == 0.0)
            && self.mail_ts.iter().all(|&x| x == NO_MAIL)
    }

    /// Copies the rows of `nodes` out of the store.
    pub fn read(&self, nodes: &[usize]) -> MemoryRows {
        let mut rows = MemoryRows::with_capacity(self.d_mem, self.mail_dim, nodes.len());
        for &v in nodes {
            rows.push(v, self.memory(v), self.last_update[v], self.mail(v), self.mail_ts[v]);
        }
        rows
    }

    /// Overwrites every row listed in `rows`.
    pub fn write(&mut self, rows: &MemoryRows) -> Result<()> {
        self.write_filtered(rows, |_| true)
    }

    pub(crate) fn write_filtered(&mut self, rows: &MemoryRows, mut keep: impl FnMut(usize) -> bool) -> Result<()> {
        if rows.d_mem != self.d_mem || rows.mail_dim != self.mail_dim {
            return Err(Error::Shape(format!(
                "write rows {}x{} do not match store {}x{}",
                rows.d_mem, rows.mail_dim, self.d_mem, self.mail_dim
            )));
        }
        for k in 0..rows.len() {
            let v = rows.nodes[k];
            if v >= self.num_nodes {
                return Err(Error::Shape(format!("node {v} outside memory of {} nodes", self.num_nodes)));
            }
            if !keep(v) {
                continue;
            }
            self.memory[v * self.d_mem..(v + 1) * self.d_mem].copy_from_slice(rows.memory(k));
            self.mail[v * self.mail_dim..(v + 1) * self.mail_dim].copy_from_slice(rows.mail(k));
            self.last_update[v] = rows.last_update[k];
            self.mail_ts[v] = rows.mail_ts[k];
        }
        Ok(())
    }
}

/// A set of node rows in transit between the store and a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRows {
    pub d_mem: usize,
    pub mail_dim: usize,
    pub nodes: Vec<usize>,
    pub memory: Vec<f64>,
    pub last_update: Vec<f64>,
    pub mail: Vec<f64>,
    pub mail_ts: Vec<f64>,
}

impl MemoryRows {
    pub fn with_capacity(d_mem: usize, mail_dim: usize, n: usize) -> Self {
        Self {
            d_mem,
            mail_dim,
            nodes: Vec::with_capacity(n),
            memory: Vec::with_capacity(n * d_mem),
            last_update: Vec::with_capacity(n),
            mail: Vec::with_capacity(n * mail_dim),
            mail_ts: Vec::with_capacity(n),
        }
    }

    /// Rows for `nodes` as they are right after a reset.
    pub fn zeroed(d_mem: usize, mail_dim: usize, nodes: &[usize]) -> Self {
        Self {
            d_mem,
            mail_dim,
            nodes: nodes.to_vec(),
            memory: vec![0.0; nodes.len() * d_mem],
            last_update: vec![0.0; nodes.len()],
            mail: vec![0.0; nodes.len() * mail_dim],
            mail_ts: vec![NO_MAIL; nodes.len()],
        }
    }

    pub fn push(&mut self, node: usize, memory: &[f64], last_update: f64, mail: &[f64], mail_ts: f64) {
        debug_assert_eq!(memory.len(), self.d_mem);
        debug_assert_eq!(mail.len(), self.mail_dim);
        self.nodes.push(node);
        self.memory.extend_from_slice(memory);
        self.last_update.push(last_update);
        self.mail.extend_from_slice(mail);
        self.mail_ts.push(mail_ts);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn memory(&self, k: usize) -> &[f64] {
        &self.memory[k * self.d_mem..(k + 1) * self.d_mem]
    }

    pub fn mail(&self, k: usize) -> &[f64] {
        &self.mail[k * self.mail_dim..(k + 1) * self.mail_dim]
    }

    pub fn has_mail(&self, k: usize) -> bool {
        self.mail_ts[k] != NO_MAIL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_all_zero() {
        let s = NodeMemoryState::new(7, 4, 9).unwrap();
        assert_eq!(s.memory_norm(), 0.0);
        assert!(s.is_zero());
        assert!(NodeMemoryState::new(0, 4, 9).is_err());
    }

    #[test]
    fn write_then_read_returns_row_and_reset_clears() {
        let mut s = NodeMemoryState::new(4, 2, 3).unwrap();
        let mut rows = MemoryRows::with_capacity(2, 3, 1);
        rows.push(2, &[1.0, -1.0], 3.0, &[0.1, 0.2, 0.3], 5.0);
        s.write(&rows).unwrap();
        let back = s.read(&[2]);
        assert_eq!(back, rows);
        assert_eq!(s.read(&[1]).memory, vec![0.0, 0.0]);
        s.reset();
        assert!(s.is_zero());
    }

    #[test]
    fn write_shape_checked() {
        let mut s = NodeMemoryState::new(4, 2, 3).unwrap();
        let rows = MemoryRows::zeroed(3, 3, &[0]);
        assert!(s.write(&rows).is_err());
        let rows = MemoryRows::zeroed(2, 3, &[9]);
        assert!(s.write(&rows).is_err());
    }
}

//! The memory daemon: sole owner of one group's [`NodeMemoryState`].
//!
//! Each position `p` of the group's schedule is served by sub-group
//! `p mod j`, i.e. ranks `[(p mod j)·i, (p mod j)·i + i)`. For every position
//! the daemon runs one read bracket followed by one write bracket over those
//! ranks, so the executed sequence is `((R…)(W…))*` with the rank window
//! advancing by `i` modulo `i·j`. Requests inside a bracket are served in
//! arrival order.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::memstore::buffers::SharedBufferSet;
use crate::memstore::oplog::{OpKind, OpRecord};
use crate::memstore::state::{MemoryRows, NodeMemoryState};

/// What the daemon needs to know about its group's schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DaemonPlan {
    pub i: usize,
    pub j: usize,
    /// Sweep (epoch) number of each position.
    pub epoch_of: Vec<usize>,
    /// Positions at which memory and mails are reset before the read bracket.
    pub epoch_start: Vec<bool>,
    /// Positions after whose write bracket the state is snapshotted.
    pub snapshot_after: BTreeSet<usize>,
}

impl DaemonPlan {
    pub fn positions(&self) -> usize {
        self.epoch_of.len()
    }

    pub fn bracket(&self, position: usize) -> std::ops::Range<usize> {
        let first = (position % self.j) * self.i;
        first..first + self.i
    }
}

/// Resolves write collisions inside one bracket: a row is applied unless a
/// higher rank has already written the same node, so the final state equals
/// ascending-rank application for every arrival order.
#[derive(Debug, Default)]
pub struct WriteBracket {
    owner: HashMap<usize, usize>,
}

impl WriteBracket {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, state: &mut NodeMemoryState, rank: usize, rows: &MemoryRows) -> Result<()> {
        let owner = &mut self.owner;
        state.write_filtered(rows, |v| match owner.get(&v) {
            Some(&o) if o > rank => false,
            _ => {
                owner.insert(v, rank);
                true
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySnapshot {
    pub position: usize,
    pub state: NodeMemoryState,
}

#[derive(Debug, Clone)]
pub struct DaemonReport {
    pub oplog: Vec<OpRecord>,
    pub snapshots: Vec<MemorySnapshot>,
    pub state: NodeMemoryState,
}

/// Runs the daemon until every position of `plan` has been served. At an
/// epoch start the clients do not issue reads (the rows are known to be
/// zero); the daemon logs those reads with length 0.
pub fn daemon_run(buffers: &SharedBufferSet, mut state: NodeMemoryState, plan: &DaemonPlan) -> Result<DaemonReport> {
    let shape = buffers.shape();
    if shape.i != plan.i || shape.j != plan.j || plan.epoch_start.len() != plan.positions() {
        return Err(Error::Config("daemon plan does not match buffer shape".into()));
    }
    let mut oplog = Vec::with_capacity(plan.positions() * 2 * plan.i);
    let mut snapshots = Vec::new();
    let outcome = (|| -> Result<()> {
        for p in 0..plan.positions() {
            let epoch = plan.epoch_of[p];
            let ranks = plan.bracket(p);
            if plan.epoch_start[p] {
                state.reset();
                for r in ranks.clone() {
                    oplog.push(OpRecord { epoch, iter: p, kind: OpKind::Read, rank: r, first_idx: 0, len: 0 });
                }
            } else {
                serve_bracket(buffers, ranks.clone(), OpKind::Read, |r| {
                    let (first_idx, len) = buffers.serve_read(r, &state)?;
                    oplog.push(OpRecord { epoch, iter: p, kind: OpKind::Read, rank: r, first_idx, len });
                    Ok(())
                })?;
            }
            let mut bracket = WriteBracket::new();
            serve_bracket(buffers, ranks, OpKind::Write, |r| {
                let rows = buffers.take_write(r)?;
                bracket.apply(&mut state, r, &rows)?;
                let first_idx = rows.nodes.first().copied().unwrap_or(0);
                oplog.push(OpRecord { epoch, iter: p, kind: OpKind::Write, rank: r, first_idx, len: rows.len() });
                Ok(())
            })?;
            if plan.snapshot_after.contains(&p) {
                snapshots.push(MemorySnapshot { position: p, state: state.clone() });
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        buffers.abort();
        return Err(match e {
            Error::Disconnected(msg) => {
                Error::Disconnected(format!("memory daemon stopped after {} ops: {msg}", oplog.len()))
            }
            other => other,
        });
    }
    Ok(DaemonReport { oplog, snapshots, state })
}

/// Serves each rank of `ranks` exactly once, in whatever order their
/// requests arrive.
fn serve_bracket(
    buffers: &SharedBufferSet,
    ranks: std::ops::Range<usize>,
    kind: OpKind,
    mut serve: impl FnMut(usize) -> Result<()>,
) -> Result<()> {
    let mut pending: Vec<usize> = ranks.collect();
    while !pending.is_empty() {
        let ready = |r: usize| match kind {
            OpKind::Read => buffers.read_status(r) == 1,
            OpKind::Write => buffers.write_status(r) == 1,
        };
        buffers.wait_until("a bracket request", || pending.iter().any(|&r| ready(r)))?;
        let mut k = 0;
        while k < pending.len() {
            if ready(pending[k]) {
                serve(pending.remove(k))?;
            } else {
                k += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memstore::buffers::BufferShape;

    fn rows(node: usize, value: f64) -> MemoryRows {
        let mut r = MemoryRows::with_capacity(1, 1, 1);
        r.push(node, &[value], value, &[value], value);
        r
    }

    #[test]
    fn higher_rank_wins_regardless_of_order() {
        let a = rows(0, 1.0);
        let b = rows(0, 2.0);
        for order in [[(0, &a), (1, &b)], [(1, &b), (0, &a)]] {
            let mut s = NodeMemoryState::new(1, 1, 1).unwrap();
            let mut br = WriteBracket::new();
            for (r, rw) in order {
                br.apply(&mut s, r, rw).unwrap();
            }
            assert_eq!(s.memory(0), &[2.0]);
        }
    }

    #[test]
    fn single_trainer_alternation() {
        let shape = BufferShape { i: 1, j: 1, read_cap: 2, write_cap: 2, d_mem: 1, mail_dim: 1 };
        let buffers = SharedBufferSet::new(shape).unwrap().with_timeout(std::time::Duration::from_secs(20));
        let plan = DaemonPlan {
            i: 1,
            j: 1,
            epoch_of: vec![0, 0, 0],
            epoch_start: vec![true, false, false],
            snapshot_after: BTreeSet::new(),
        };
        let state = NodeMemoryState::new(2, 1, 1).unwrap();
        let report = std::thread::scope(|s| {
            let daemon = s.spawn(|| daemon_run(&buffers, state, &plan));
            for p in 0..3 {
                if p > 0 {
                    let got = buffers.read(0, &[vec![1]]).unwrap();
                    assert_eq!(got[0].memory(0), &[p as f64]);
                }
                buffers.wait_write_consumed(0).unwrap();
                buffers.post_write(0, &rows(1, p as f64 + 1.0)).unwrap();
            }
            daemon.join().unwrap()
        })
        .unwrap();
        let kinds: String = report.oplog.iter().map(|o| o.kind.symbol()).collect();
        assert_eq!(kinds, "RWRWRW");
        assert_eq!(report.oplog[0].len, 0);
        assert_eq!(report.state.memory(1), &[3.0]);
    }

    #[test]
    fn disconnect_is_reported() {
        let shape = BufferShape { i: 1, j: 1, read_cap: 1, write_cap: 1, d_mem: 1, mail_dim: 1 };
        let buffers = SharedBufferSet::new(shape).unwrap().with_timeout(std::time::Duration::from_millis(50));
        let plan = DaemonPlan {
            i: 1,
            j: 1,
            epoch_of: vec![0],
            epoch_start: vec![true],
            snapshot_after: BTreeSet::new(),
        };
        let err = daemon_run(&buffers, NodeMemoryState::new(1, 1, 1).unwrap(), &plan).unwrap_err();
        assert!(matches!(err, Error::Disconnected(_)));
        assert!(buffers.is_aborted());
    }
}

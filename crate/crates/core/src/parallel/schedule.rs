//! Batch schedules for the three parallelism strategies.
//!
//! Terminology used throughout:
//! - a *group* owns one memory copy (there are `k`);
//! - a group walks a sequence of *positions*, each being one global batch;
//! - a *sub-group* of `i` trainers handles every position `p` with
//!   `p mod j == s`, running `j` *passes* over it in iterations `p..p+j`;
//! - pass 0 writes memory back, the remaining passes only read.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel::planner::TrainConfig;
use crate::rng::mix_seed;

/// Chronological split of `range` into `i` contiguous parts whose sizes
/// differ by at most one (earlier parts are the larger ones).
pub fn schedule_minibatch(range: Range<usize>, i: usize) -> Result<Vec<Range<usize>>> {
    if i == 0 {
        return Err(Error::Config("mini-batch parallelism i must be >= 1".into()));
    }
    Ok(balanced(range, i))
}

fn balanced(range: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    let n = range.len();
    let (base, extra) = (n / parts, n % parts);
    let mut start = range.start;
    (0..parts)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let part = start..start + len;
            start += len;
            part
        })
        .collect()
}

/// Splits `n_batches` batch indices into `k` contiguous segments.
pub fn segments(n_batches: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 {
        return Err(Error::Config("memory parallelism k must be >= 1".into()));
    }
    if n_batches < k {
        return Err(Error::Config(format!("{n_batches} training batches cannot fill {k} memory segments")));
    }
    Ok(balanced(0..n_batches, k))
}

/// Positions each trainer walks when the total traversal (in global batches)
/// is kept at `epochs · n_batches`: `ceil(epochs · n_batches / trainers)`.
pub fn traversal_budget(epochs: usize, n_batches: usize, trainers: usize) -> Result<usize> {
    if trainers == 0 {
        return Err(Error::Config("trainer count must be >= 1".into()));
    }
    Ok((epochs * n_batches).div_ceil(trainers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub batch: usize,
    pub segment: usize,
    /// Sweep number of this group; memory is reset whenever a sweep begins.
    pub epoch: usize,
    pub epoch_start: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSchedule {
    pub group: usize,
    pub positions: Vec<Position>,
}

/// Memory parallelism: group `g` starts at the first batch of segment `g`
/// and sweeps all batches in order, wrapping around with a memory reset.
pub fn schedule_memory(n_batches: usize, k: usize, positions: usize) -> Result<Vec<GroupSchedule>> {
    let segs = segments(n_batches, k)?;
    if n_batches == 0 {
        return Err(Error::Config("no training batches to schedule".into()));
    }
    let segment_of: Vec<usize> =
        (0..n_batches).map(|b| segs.iter().position(|s| s.contains(&b)).unwrap_or(0)).collect();
    Ok(segs
        .iter()
        .enumerate()
        .map(|(g, seg)| {
            let start = seg.start;
            let positions = (0..positions)
                .map(|p| {
                    let abs = start + p;
                    let batch = abs % n_batches;
                    Position { batch, segment: segment_of[batch], epoch: abs / n_batches, epoch_start: p == 0 || batch == 0 }
                })
                .collect();
            GroupSchedule { group: g, positions }
        })
        .collect())
}

/// What sub-group `s` does at iteration `t`: `(position, pass)`, or `None`
/// while idle.
pub fn work_at(t: usize, s: usize, j: usize, positions: usize) -> Option<(usize, usize)> {
    if t < s {
        return None;
    }
    let pass = (t - s) % j;
    let p = t - pass;
    (p < positions).then_some((p, pass))
}

/// Iterations needed for every group to finish its positions.
pub fn total_iterations(positions: usize, j: usize) -> usize {
    if positions == 0 {
        0
    } else {
        positions + j - 1
    }
}

/// Negative group used by `pass` of a position: passes draw distinct groups
/// from a seeded permutation of the `num_groups` prepared ones.
pub fn negative_group(seed: u64, group: usize, position: usize, pass: usize, num_groups: usize) -> usize {
    let key = mix_seed(mix_seed(seed ^ 0x6E65_6761_7469_7665, group as u64), position as u64);
    let mut perm: Vec<usize> = (0..num_groups).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    perm[pass % num_groups]
}

/// Epoch parallelism for one group: for each position, the `j` passes with
/// their iteration and negative group. Pass 0 is the writer.
pub fn schedule_epoch(
    positions: usize,
    j: usize,
    seed: u64,
    group: usize,
    num_groups: usize,
) -> Result<Vec<Vec<(usize, usize)>>> {
    if j == 0 || num_groups == 0 {
        return Err(Error::Config("j and the number of negative groups must be >= 1".into()));
    }
    Ok((0..positions)
        .map(|p| (0..j).map(|m| (p + m, negative_group(seed, group, p, m, num_groups))).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Writer,
    Reader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentEntry {
    pub trainer: usize,
    pub iter: usize,
    pub epoch: usize,
    pub segment: usize,
    pub batch: usize,
    /// Local batch index within the global batch (`0..i`).
    pub local: usize,
    pub neg_group: usize,
    pub role: Role,
}

impl std::fmt::Display for AssignmentEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.trainer,
            self.iter,
            self.epoch,
            self.segment,
            self.batch,
            self.neg_group,
            match self.role {
                Role::Writer => "writer",
                Role::Reader => "reader",
            }
        )
    }
}

/// Global trainer index of sub-rank `r` in sub-group `s` of group `g`.
pub fn trainer_index(cfg: &TrainConfig, g: usize, s: usize, r: usize) -> usize {
    g * cfg.i * cfg.j + s * cfg.i + r
}

/// Full assignment of every active (trainer, iteration) pair, ordered by
/// iteration then trainer.
pub fn build_assignment(cfg: &TrainConfig, n_batches: usize, num_groups: usize) -> Result<Vec<AssignmentEntry>> {
    let positions = traversal_budget(cfg.epochs, n_batches, cfg.j * cfg.k)?;
    let groups = schedule_memory(n_batches, cfg.k, positions)?;
    let mut out = Vec::new();
    for t in 0..total_iterations(positions, cfg.j) {
        for sched in &groups {
            for s in 0..cfg.j {
                let Some((p, pass)) = work_at(t, s, cfg.j, positions) else { continue };
                let pos = sched.positions[p];
                for r in 0..cfg.i {
                    out.push(AssignmentEntry {
                        trainer: trainer_index(cfg, sched.group, s, r),
                        iter: t,
                        epoch: pos.epoch,
                        segment: pos.segment,
                        batch: pos.batch,
                        local: r,
                        neg_group: negative_group(cfg.seed, sched.group, p, pass, num_groups),
                        role: if pass == 0 { Role::Writer } else { Role::Reader },
                    });
                }
            }
        }
    }
    out.sort_by_key(|e| (e.iter, e.trainer));
    Ok(out)
}

/// Header plus one line per entry.
pub fn format_assignment(entries: &[AssignmentEntry]) -> String {
    let mut s = String::from("trainer,iter,epoch,segment,batch,neg_group,role\n");
    for e in entries {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

//! Buffers shared between one memory daemon and its `i × j` trainers.
//!
//! Layout per rank `r` (one slot per trainer):
//!
//! | buffer            | shape                      |
//! |-------------------|----------------------------|
//! | `read_1idx_buf`   | `[j, read_cap + 1]`        |
//! | `mem_read_buf`    | `[j, read_cap, d_mem]`     |
//! | `mail_read_buf`   | `[j, read_cap, mail_dim]`  |
//! | `write_1idx_buf`  | `[write_cap + 1]`          |
//! | `mem_write_buf`   | `[write_cap, d_mem]`       |
//! | `mail_write_buf`  | `[write_cap, mail_dim]`    |
//!
//! Slot 0 of an index buffer holds the request length. Memory and mail
//! timestamps travel in per-row side buffers next to their rows. The
//! `read_status` / `write_status` flags are the only synchronization: a
//! trainer sets its flag to 1 after filling a request, the daemon clears it
//! after serving. The per-slot mutexes are never contended when the flag
//! protocol is followed.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::memstore::state::{MemoryRows, NodeMemoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferShape {
    pub i: usize,
    pub j: usize,
    pub read_cap: usize,
    pub write_cap: usize,
    pub d_mem: usize,
    pub mail_dim: usize,
}

impl BufferShape {
    pub fn ranks(&self) -> usize {
        self.i * self.j
    }
}

#[derive(Debug)]
struct ReadSlot {
    idx: Vec<usize>,
    mem: Vec<f64>,
    mem_ts: Vec<f64>,
    mail: Vec<f64>,
    mail_ts: Vec<f64>,
}

#[derive(Debug)]
struct WriteSlot {
    idx: Vec<usize>,
    mem: Vec<f64>,
    mem_ts: Vec<f64>,
    mail: Vec<f64>,
    mail_ts: Vec<f64>,
}

#[derive(Debug)]
pub struct SharedBufferSet {
    shape: BufferShape,
    read: Vec<Mutex<ReadSlot>>,
    write: Vec<Mutex<WriteSlot>>,
    read_status: Vec<AtomicU8>,
    write_status: Vec<AtomicU8>,
    abort: AtomicBool,
    timeout: Option<Duration>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl SharedBufferSet {
    pub fn new(shape: BufferShape) -> Result<Self> {
        if shape.i == 0 || shape.j == 0 || shape.d_mem == 0 {
            return Err(Error::Config(format!("invalid buffer shape {shape:?}")));
        }
        let (j, rc, wc) = (shape.j, shape.read_cap, shape.write_cap);
        let read = (0..shape.ranks())
            .map(|_| {
                Mutex::new(ReadSlot {
                    idx: vec![0; j * (rc + 1)],
                    mem: vec![0.0; j * rc * shape.d_mem],
                    mem_ts: vec![0.0; j * rc],
                    mail: vec![0.0; j * rc * shape.mail_dim],
                    mail_ts: vec![0.0; j * rc],
                })
            })
            .collect();
        let write = (0..shape.ranks())
            .map(|_| {
                Mutex::new(WriteSlot {
                    idx: vec![0; wc + 1],
                    mem: vec![0.0; wc * shape.d_mem],
                    mem_ts: vec![0.0; wc],
                    mail: vec![0.0; wc * shape.mail_dim],
                    mail_ts: vec![0.0; wc],
                })
            })
            .collect();
        Ok(Self {
            shape,
            read,
            write,
            read_status: (0..shape.ranks()).map(|_| AtomicU8::new(0)).collect(),
            write_status: (0..shape.ranks()).map(|_| AtomicU8::new(0)).collect(),
            abort: AtomicBool::new(false),
            timeout: None,
        })
    }

    /// Waits longer than `timeout` are reported as a disconnected peer.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn shape(&self) -> BufferShape {
        self.shape
    }

    pub fn abort(&self) {
        self.abort.store(true, Ordering::SeqCst);
    }

    pub fn is_aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }

    pub fn read_status(&self, rank: usize) -> u8 {
        self.read_status[rank].load(Ordering::Acquire)
    }

    pub fn write_status(&self, rank: usize) -> u8 {
        self.write_status[rank].load(Ordering::Acquire)
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.shape.ranks() {
            return Err(Error::Protocol(format!("rank {rank} outside group of {}", self.shape.ranks())));
        }
        Ok(())
    }

    /// Spins with backoff until `ready` holds.
    pub fn wait_until(&self, what: &str, ready: impl Fn() -> bool) -> Result<()> {
        let start = Instant::now();
        let mut spins = 0u32;
        loop {
            if ready() {
                return Ok(());
            }
            if self.is_aborted() {
                return Err(Error::Disconnected(format!("aborted while waiting for {what}")));
            }
            if let Some(limit) = self.timeout {
                if start.elapsed() > limit {
                    self.abort();
                    return Err(Error::Disconnected(format!("timed out waiting for {what}")));
                }
            }
            if spins < 32 {
                std::hint::spin_loop();
            } else if spins < 64 {
                std::thread::yield_now();
            } else {
                let exp = (spins - 64).min(4);
                std::thread::sleep(Duration::from_micros(10 << exp));
            }
            spins = spins.saturating_add(1);
        }
    }

    // ---- trainer side ----

    /// Copies `lists` (one node list per epoch-parallel consumer) into the
    /// rank's read index buffer and raises its read flag.
    pub fn post_read(&self, rank: usize, lists: &[Vec<usize>]) -> Result<()> {
        self.check_rank(rank)?;
        if self.read_status(rank) != 0 {
            return Err(Error::Protocol(format!("rank {rank} posted a read while its previous read is pending")));
        }
        if lists.len() != self.shape.j {
            return Err(Error::Shape(format!("read needs {} index lists, got {}", self.shape.j, lists.len())));
        }
        let cap = self.shape.read_cap;
        {
            let mut slot = lock(&self.read[rank]);
            for (jj, list) in lists.iter().enumerate() {
                if list.len() > cap {
                    return Err(Error::Shape(format!("read of {} rows exceeds capacity {cap}", list.len())));
                }
                let base = jj * (cap + 1);
                slot.idx[base] = list.len();
                slot.idx[base + 1..base + 1 + list.len()].copy_from_slice(list);
            }
        }
        self.read_status[rank].store(1, Ordering::Release);
        Ok(())
    }

    /// Blocks until the daemon served this rank's read, then copies the `j`
    /// result slices out.
    pub fn wait_read(&self, rank: usize) -> Result<Vec<MemoryRows>> {
        self.check_rank(rank)?;
        self.wait_until("read results", || self.read_status(rank) == 0)?;
        let s = self.shape;
        let slot = lock(&self.read[rank]);
        let out = (0..s.j)
            .map(|jj| {
                let base = jj * (s.read_cap + 1);
                let n = slot.idx[base];
                let mut rows = MemoryRows::with_capacity(s.d_mem, s.mail_dim, n);
                for k in 0..n {
                    let row = jj * s.read_cap + k;
                    rows.push(
                        slot.idx[base + 1 + k],
                        &slot.mem[row * s.d_mem..(row + 1) * s.d_mem],
                        slot.mem_ts[row],
                        &slot.mail[row * s.mail_dim..(row + 1) * s.mail_dim],
                        slot.mail_ts[row],
                    );
                }
                rows
            })
            .collect();
        Ok(out)
    }

    pub fn read(&self, rank: usize, lists: &[Vec<usize>]) -> Result<Vec<MemoryRows>> {
        self.post_read(rank, lists)?;
        self.wait_read(rank)
    }

    /// Copies root-node rows into the rank's write buffer and raises its
    /// write flag. Does not wait for the daemon.
    pub fn post_write(&self, rank: usize, rows: &MemoryRows) -> Result<()> {
        self.check_rank(rank)?;
        if self.write_status(rank) != 0 {
            return Err(Error::Protocol(format!("rank {rank} posted a write while its previous write is pending")));
        }
        let s = self.shape;
        if rows.len() > s.write_cap {
            return Err(Error::Shape(format!("write of {} rows exceeds capacity {}", rows.len(), s.write_cap)));
        }
        if rows.d_mem != s.d_mem || rows.mail_dim != s.mail_dim {
            return Err(Error::Shape("write rows do not match buffer widths".into()));
        }
        {
            let mut slot = lock(&self.write[rank]);
            slot.idx[0] = rows.len();
            slot.idx[1..1 + rows.len()].copy_from_slice(&rows.nodes);
            slot.mem[..rows.memory.len()].copy_from_slice(&rows.memory);
            slot.mem_ts[..rows.len()].copy_from_slice(&rows.last_update);
            slot.mail[..rows.mail.len()].copy_from_slice(&rows.mail);
            slot.mail_ts[..rows.len()].copy_from_slice(&rows.mail_ts);
        }
        self.write_status[rank].store(1, Ordering::Release);
        Ok(())
    }

    pub fn wait_write_consumed(&self, rank: usize) -> Result<()> {
        self.check_rank(rank)?;
        self.wait_until("write consumption", || self.write_status(rank) == 0)
    }

    // ---- daemon side ----

    /// Serves a pending read from `state`; returns `(first_idx, len)` of the
    /// request for the op-log.
    pub(crate) fn serve_read(&self, rank: usize, state: &NodeMemoryState) -> Result<(usize, usize)> {
        if self.read_status(rank) != 1 {
            return Err(Error::Protocol(format!("daemon served rank {rank} without a pending read")));
        }
        let s = self.shape;
        let mut total = 0;
        let mut first = None;
        {
            let mut guard = lock(&self.read[rank]);
            let slot = &mut *guard;
            for jj in 0..s.j {
                let base = jj * (s.read_cap + 1);
                let n = slot.idx[base];
                for k in 0..n {
                    let v = slot.idx[base + 1 + k];
                    if v >= state.num_nodes() {
                        return Err(Error::Protocol(format!("rank {rank} requested node {v} out of range")));
                    }
                    first.get_or_insert(v);
                    let row = jj * s.read_cap + k;
                    slot.mem[row * s.d_mem..(row + 1) * s.d_mem].copy_from_slice(state.memory(v));
                    slot.mail[row * s.mail_dim..(row + 1) * s.mail_dim].copy_from_slice(state.mail(v));
                    slot.mem_ts[row] = state.last_update(v);
                    slot.mail_ts[row] = state.mail_ts(v);
                }
                total += n;
            }
        }
        self.read_status[rank].store(0, Ordering::Release);
        Ok((first.unwrap_or(0), total))
    }

    /// Takes the pending write of `rank` out of its buffer and clears the flag.
    pub(crate) fn take_write(&self, rank: usize) -> Result<MemoryRows> {
        if self.write_status(rank) != 1 {
            return Err(Error::Protocol(format!("daemon consumed rank {rank} without a pending write")));
        }
        let s = self.shape;
        let rows = {
            let slot = lock(&self.write[rank]);
            let n = slot.idx[0];
            let mut rows = MemoryRows::with_capacity(s.d_mem, s.mail_dim, n);
            for k in 0..n {
                rows.push(
                    slot.idx[1 + k],
                    &slot.mem[k * s.d_mem..(k + 1) * s.d_mem],
                    slot.mem_ts[k],
                    &slot.mail[k * s.mail_dim..(k + 1) * s.mail_dim],
                    slot.mail_ts[k],
                );
            }
            rows
        };
        self.write_status[rank].store(0, Ordering::Release);
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> BufferShape {
        BufferShape { i: 1, j: 2, read_cap: 4, write_cap: 2, d_mem: 2, mail_dim: 3 }
    }

    #[test]
    fn double_post_is_a_protocol_error() {
        let b = SharedBufferSet::new(shape()).unwrap();
        b.post_read(0, &[vec![1], vec![2]]).unwrap();
        assert!(matches!(b.post_read(0, &[vec![1], vec![2]]), Err(Error::Protocol(_))));
        let rows = MemoryRows::zeroed(2, 3, &[1]);
        b.post_write(1, &rows).unwrap();
        assert!(matches!(b.post_write(1, &rows), Err(Error::Protocol(_))));
    }

    #[test]
    fn capacity_and_list_count_checked() {
        let b = SharedBufferSet::new(shape()).unwrap();
        assert!(matches!(b.post_read(0, &[vec![1]]), Err(Error::Shape(_))));
        assert!(matches!(b.post_read(0, &[vec![0; 5], vec![]]), Err(Error::Shape(_))));
        assert!(b.post_write(0, &MemoryRows::zeroed(2, 3, &[0, 1, 2])).is_err());
    }

    #[test]
    fn serve_fills_every_slice() {
        let b = SharedBufferSet::new(shape()).unwrap();
        let mut state = NodeMemoryState::new(4, 2, 3).unwrap();
        let mut rows = MemoryRows::with_capacity(2, 3, 1);
        rows.push(3, &[1.0, 2.0], 0.5, &[1.0, 1.0, 1.0], 4.0);
        state.write(&rows).unwrap();
        b.post_read(1, &[vec![3, 0], vec![3]]).unwrap();
        assert_eq!(b.serve_read(1, &state).unwrap(), (3, 3));
        let got = b.wait_read(1).unwrap();
        assert_eq!(got[0].memory(0), got[1].memory(0));
        assert_eq!(got[0].memory(1), &[0.0, 0.0]);
        assert_eq!(got[1].mail_ts[0], 4.0);
    }

    #[test]
    fn abort_unblocks_waiters() {
        let b = SharedBufferSet::new(shape()).unwrap();
        b.post_read(0, &[vec![], vec![]]).unwrap();
        b.abort();
        assert!(matches!(b.wait_read(0), Err(Error::Disconnected(_))));
    }
}

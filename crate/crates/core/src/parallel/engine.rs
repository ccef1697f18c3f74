//! Multi-threaded execution of a training run: `k` memory daemons, `i·j·k`
//! trainers, and a gradient all-reduce barrier every iteration.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::memstore::buffers::{BufferShape, SharedBufferSet};
use crate::memstore::daemon::{daemon_run, DaemonPlan, DaemonReport};
use crate::memstore::state::{MemoryRows, NodeMemoryState};
use crate::nn::{Adam, ModelParams};
use crate::parallel::schedule::{
    negative_group, schedule_memory, schedule_minibatch, segments, total_iterations, trainer_index,
    traversal_budget, work_at, GroupSchedule,
};
use crate::parallel::sync::{average_gradients, replicas_identical};
use crate::tgraph::{chronological_split, make_batches, sample_negatives, NegativeGroups, Split, TemporalGraph};
use crate::trainer::config::RunConfig;
use crate::trainer::eval::{evaluate_mrr, EvalOptions};
use crate::trainer::metrics::{IterationRecord, MetricsRow};
use crate::trainer::step::{batch_nodes, train_step, IterationResult};

/// Everything a run needs that does not change while it executes.
pub struct Prepared<'a> {
    pub cfg: &'a RunConfig,
    pub g: &'a TemporalGraph,
    pub split: Split,
    /// Global batches over the training range.
    pub batches: Vec<Range<usize>>,
    pub negatives: Vec<NegativeGroups>,
    pub positions: usize,
    pub groups: Vec<GroupSchedule>,
}

impl<'a> Prepared<'a> {
    pub fn new(cfg: &'a RunConfig, g: &'a TemporalGraph) -> Result<Self> {
        cfg.validate()?;
        let split = chronological_split(g, cfg.train_frac, cfg.val_frac)?;
        if split.train.is_empty() {
            return Err(Error::Config("training range is empty".into()));
        }
        let specs = make_batches(split.train.clone(), cfg.train.global_batch())?;
        let negatives = specs
            .iter()
            .map(|b| sample_negatives(b, g, cfg.num_neg_groups, cfg.train.seed))
            .collect::<Result<Vec<_>>>()?;
        let batches: Vec<Range<usize>> = specs.into_iter().map(|b| b.range).collect();
        let positions = traversal_budget(cfg.train.epochs, batches.len(), cfg.train.j * cfg.train.k)?;
        let groups = schedule_memory(batches.len(), cfg.train.k, positions)?;
        Ok(Self { cfg, g, split, batches, negatives, positions, groups })
    }

    pub fn iterations(&self) -> usize {
        total_iterations(self.positions, self.cfg.train.j)
    }

    /// Local batch `r` of the batch at `position` together with its
    /// negatives for `pass`.
    pub fn local_work(&self, group: usize, position: usize, pass: usize, r: usize) -> Result<(Range<usize>, Vec<usize>)> {
        let pos = self.groups[group].positions[position];
        let global = self.batches[pos.batch].clone();
        let local = schedule_minibatch(global.clone(), self.cfg.train.i)?[r].clone();
        let ng = negative_group(self.cfg.train.seed, group, position, pass, self.cfg.num_neg_groups);
        let negs = self.negatives[pos.batch].groups[ng][local.start - global.start..local.end - global.start].to_vec();
        Ok((local, negs))
    }

    pub fn daemon_plan(&self, group: usize) -> Result<DaemonPlan> {
        let segs = segments(self.batches.len(), self.cfg.train.k)?;
        let seg_ends: BTreeSet<usize> = segs.iter().filter(|s| !s.is_empty()).map(|s| s.end - 1).collect();
        let sched = &self.groups[group];
        Ok(DaemonPlan {
            i: self.cfg.train.i,
            j: self.cfg.train.j,
            epoch_of: sched.positions.iter().map(|p| p.epoch).collect(),
            epoch_start: sched.positions.iter().map(|p| p.epoch_start).collect(),
            snapshot_after: if self.cfg.record_snapshots {
                sched.positions.iter().enumerate().filter(|(_, p)| seg_ends.contains(&p.batch)).map(|(k, _)| k).collect()
            } else {
                BTreeSet::new()
            },
        })
    }

    pub fn buffer_shape(&self) -> BufferShape {
        let local = self.cfg.train.local_batch;
        BufferShape {
            i: self.cfg.train.i,
            j: self.cfg.train.j,
            read_cap: 3 * local * (self.cfg.n_neighbors + 1),
            write_cap: 2 * local,
            d_mem: self.cfg.d_mem,
            mail_dim: 2 * self.cfg.d_mem + self.g.d_e(),
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            num_negatives: self.cfg.eval_negatives,
            seed: self.cfg.eval_seed(),
            batch_size: self.cfg.train.local_batch,
            n_neighbors: self.cfg.n_neighbors,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub iterations: Vec<IterationRecord>,
    pub metrics: Vec<MetricsRow>,
    pub params: ModelParams,
    /// One report per memory group; empty op-logs for daemon-free runs.
    pub groups: Vec<DaemonReport>,
    /// Parameter fingerprints matched across replicas after every iteration.
    pub replicas_consistent: bool,
    /// Parameters at the evaluation with the highest validation MRR.
    pub best: Option<(f64, ModelParams)>,
}

/// Bookkeeping shared by all trainers, owned by trainer 0's aggregation.
struct Tracker<'a> {
    prep: &'a Prepared<'a>,
    start: Instant,
    traversed: usize,
    epochs_done: usize,
    pending_losses: Vec<f64>,
    iterations: Vec<IterationRecord>,
    metrics: Vec<MetricsRow>,
    /// Iteration after which trainer 0 must evaluate.
    eval_due: Option<usize>,
    best: Option<(f64, ModelParams)>,
}

impl<'a> Tracker<'a> {
    fn new(prep: &'a Prepared<'a>) -> Self {
        Self {
            prep,
            start: Instant::now(),
            traversed: 0,
            epochs_done: 0,
            pending_losses: Vec::new(),
            iterations: Vec::new(),
            metrics: Vec::new(),
            eval_due: None,
            best: None,
        }
    }

    /// Records an iteration; returns true when an evaluation is due.
    fn record(&mut self, iter: usize, results: &[&IterationResult]) -> bool {
        let events: usize = results.iter().map(|r| r.events).sum();
        let loss = if results.is_empty() {
            f64::NAN
        } else {
            results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64
        };
        self.traversed += events;
        if !results.is_empty() {
            self.pending_losses.push(loss);
        }
        self.iterations.push(IterationRecord { iter, traversed: self.traversed, loss, active: results.len(), events });
        let epochs = self.traversed / self.prep.split.train.len();
        let last = iter + 1 == self.prep.iterations();
        let due = epochs > self.epochs_done || last;
        self.epochs_done = epochs;
        due
    }

    fn evaluate(&mut self, iter: usize, params: &ModelParams) -> Result<()> {
        let val_mrr = if self.prep.cfg.evaluate && !self.prep.split.val.is_empty() {
            let opts = self.prep.eval_options();
            Some(evaluate_mrr(params, self.prep.g, self.prep.split.train.clone(), self.prep.split.val.clone(), &opts)?.mrr)
        } else {
            None
        };
        let loss = if self.pending_losses.is_empty() {
            f64::NAN
        } else {
            self.pending_losses.iter().sum::<f64>() / self.pending_losses.len() as f64
        };
        self.pending_losses.clear();
        if let Some(m) = val_mrr {
            if self.best.as_ref().is_none_or(|(b, _)| m > *b) {
                self.best = Some((m, params.clone()));
            }
        }
        self.metrics.push(MetricsRow {
            iter: iter + 1,
            traversed: self.traversed,
            loss,
            val_mrr,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// What one trainer keeps between the passes of its current position.
struct Cursor {
    position: usize,
    rows: Vec<MemoryRows>,
}

struct Shared<'a> {
    prep: &'a Prepared<'a>,
    buffers: Vec<SharedBufferSet>,
    barrier: Barrier,
    slots: Vec<Mutex<Option<(IterationResult, ModelParams)>>>,
    averaged: Mutex<Option<Arc<ModelParams>>>,
    fingerprints: Vec<AtomicU64>,
    failed: AtomicBool,
    stop: AtomicBool,
    errors: Mutex<Vec<Error>>,
    consistent: AtomicBool,
    tracker: Mutex<Tracker<'a>>,
}

impl Shared<'_> {
    fn fail(&self, e: Error) {
        self.errors.lock().unwrap_or_else(|p| p.into_inner()).push(e);
        self.failed.store(true, Ordering::SeqCst);
        for b in &self.buffers {
            b.abort();
        }
    }
}

/// Runs the configured parallel training from `init` parameters.
pub fn run_parallel(prep: &Prepared<'_>, init: &ModelParams) -> Result<RunOutput> {
    let cfg = prep.cfg;
    let t = cfg.train;
    let trainers = t.trainers();
    let timeout = Duration::from_secs_f64(cfg.timeout_s);
    let buffers = (0..t.k)
        .map(|_| SharedBufferSet::new(prep.buffer_shape()).map(|b| b.with_timeout(timeout)))
        .collect::<Result<Vec<_>>>()?;
    let plans = (0..t.k).map(|g| prep.daemon_plan(g)).collect::<Result<Vec<_>>>()?;
    let shared = Shared {
        prep,
        buffers,
        barrier: Barrier::new(trainers),
        slots: (0..trainers).map(|_| Mutex::new(None)).collect(),
        averaged: Mutex::new(None),
        fingerprints: (0..trainers).map(|_| AtomicU64::new(0)).collect(),
        failed: AtomicBool::new(false),
        stop: AtomicBool::new(false),
        errors: Mutex::new(Vec::new()),
        consistent: AtomicBool::new(true),
        tracker: Mutex::new(Tracker::new(prep)),
    };
    let mail_dim = prep.buffer_shape().mail_dim;

    let (daemon_results, final_params) = std::thread::scope(|scope| {
        let daemons: Vec<_> = (0..t.k)
            .map(|g| {
                let shared = &shared;
                let plan = &plans[g];
                scope.spawn(move || -> Result<DaemonReport> {
                    let state = NodeMemoryState::new(prep.g.num_nodes(), cfg.d_mem, mail_dim)?;
                    match daemon_run(&shared.buffers[g], state, plan) {
                        Err(e) if !matches!(e, Error::Disconnected(_)) => {
                            shared.fail(e.context(&format!("memory group {g}")));
                            Err(Error::Disconnected(format!("memory group {g} stopped")))
                        }
                        other => other,
                    }
                })
            })
            .collect();
        let mut handles = Vec::with_capacity(trainers);
        for g in 0..t.k {
            for s in 0..t.j {
                for r in 0..t.i {
                    let shared = &shared;
                    handles.push(scope.spawn(move || trainer_loop(shared, init, g, s, r)));
                }
            }
        }
        let mut final_params = None;
        for h in handles {
            if let Some(p) = h.join().expect("trainer thread panicked") {
                final_params = Some(p);
            }
        }
        let reports: Vec<Result<DaemonReport>> = daemons.into_iter().map(|d| d.join().expect("daemon thread panicked")).collect();
        (reports, final_params)
    });

    let mut errors = shared.errors.into_inner().unwrap_or_else(|p| p.into_inner());
    let mut reports = Vec::with_capacity(t.k);
    for r in daemon_results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let pos = errors.iter().position(|e| !matches!(e, Error::Disconnected(_))).unwrap_or(0);
        return Err(errors.swap_remove(pos));
    }
    let tracker = shared.tracker.into_inner().unwrap_or_else(|p| p.into_inner());
    Ok(RunOutput {
        iterations: tracker.iterations,
        metrics: tracker.metrics,
        params: final_params.ok_or_else(|| Error::Contract("trainer 0 returned no parameters".into()))?,
        groups: reports,
        replicas_consistent: shared.consistent.load(Ordering::SeqCst),
        best: tracker.best,
    })
}

/// Performs this trainer's part of iteration `t`.
fn trainer_work(
    shared: &Shared<'_>,
    params: &ModelParams,
    cursor: &mut Option<Cursor>,
    iter: usize,
    (g, s, r): (usize, usize, usize),
) -> Result<Option<(IterationResult, ModelParams)>> {
    let prep = shared.prep;
    let cfg = prep.cfg;
    let (i, j) = (cfg.train.i, cfg.train.j);
    let Some((p, pass)) = work_at(iter, s, j, prep.positions) else { return Ok(None) };
    let rank = s * i + r;
    let buffers = &shared.buffers[g];
    if pass == 0 {
        let mut lists = Vec::with_capacity(j);
        for m in 0..j {
            let (local, negs) = prep.local_work(g, p, m, r)?;
            lists.push(batch_nodes(prep.g, local, &negs, cfg.n_neighbors));
        }
        let rows = if prep.groups[g].positions[p].epoch_start {
            let shape = buffers.shape();
            lists.iter().map(|l| MemoryRows::zeroed(shape.d_mem, shape.mail_dim, l)).collect()
        } else {
            buffers.read(rank, &lists)?
        };
        *cursor = Some(Cursor { position: p, rows });
    }
    let cur = cursor.as_ref().filter(|c| c.position == p).ok_or_else(|| {
        Error::Contract(format!("trainer {}: no memory read for position {p}", trainer_index(&cfg.train, g, s, r)))
    })?;
    let (local, negs) = prep.local_work(g, p, pass, r)?;
    let out = if local.is_empty() {
        None
    } else {
        Some(train_step(params, prep.g, local, &negs, &cur.rows[pass], cfg.n_neighbors)?)
    };
    if pass == 0 {
        buffers.wait_write_consumed(rank)?;
        let shape = buffers.shape();
        let empty = MemoryRows::with_capacity(shape.d_mem, shape.mail_dim, 0);
        buffers.post_write(rank, out.as_ref().map_or(&empty, |o| &o.write))?;
    }
    Ok(out.map(|o| (o.result, o.grads)))
}

fn trainer_loop(shared: &Shared<'_>, init: &ModelParams, g: usize, s: usize, r: usize) -> Option<ModelParams> {
    let prep = shared.prep;
    let cfg = prep.cfg;
    let me = trainer_index(&cfg.train, g, s, r);
    let lr = cfg.train.effective_lr();
    let mut params = init.clone();
    let mut adam = Adam::new(&params);
    let mut cursor = None;
    for iter in 0..prep.iterations() {
        if !shared.failed.load(Ordering::SeqCst) {
            match trainer_work(shared, &params, &mut cursor, iter, (g, s, r)) {
                Ok(out) => *shared.slots[me].lock().unwrap_or_else(|p| p.into_inner()) = out,
                Err(e) => shared.fail(e.context(&format!("trainer {me} at iteration {iter}"))),
            }
        }
        shared.barrier.wait();
        if me == 0 {
            aggregate(shared, iter);
        }
        shared.barrier.wait();
        if shared.stop.load(Ordering::SeqCst) {
            return None;
        }
        let avg = shared.averaged.lock().unwrap_or_else(|p| p.into_inner()).clone();
        if let Some(avg) = avg {
            adam.step(&mut params, &avg, lr);
        }
        shared.fingerprints[me].store(params.fingerprint(), Ordering::SeqCst);
        if me == 0 {
            let mut tracker = shared.tracker.lock().unwrap_or_else(|p| p.into_inner());
            if tracker.eval_due == Some(iter) {
                if let Err(e) = tracker.evaluate(iter, &params) {
                    drop(tracker);
                    shared.fail(e);
                }
            }
        }
    }
    shared.barrier.wait();
    if me == 0 {
        let fps: Vec<u64> = shared.fingerprints.iter().map(|f| f.load(Ordering::SeqCst)).collect();
        if !replicas_identical(&fps) {
            shared.consistent.store(false, Ordering::SeqCst);
        }
        Some(params)
    } else {
        None
    }
}

/// Trainer 0, between the two barriers: checks replica fingerprints from the
/// previous iteration, averages this iteration's gradients, updates metrics.
fn aggregate(shared: &Shared<'_>, iter: usize) {
    if shared.failed.load(Ordering::SeqCst) {
        shared.stop.store(true, Ordering::SeqCst);
        for b in &shared.buffers {
            b.abort();
        }
        return;
    }
    if iter > 0 {
        let fps: Vec<u64> = shared.fingerprints.iter().map(|f| f.load(Ordering::SeqCst)).collect();
        if !replicas_identical(&fps) {
            shared.consistent.store(false, Ordering::SeqCst);
        }
    }
    let taken: Vec<Option<(IterationResult, ModelParams)>> =
        shared.slots.iter().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()).take()).collect();
    let grads: Vec<Option<&ModelParams>> = taken.iter().map(|o| o.as_ref().map(|x| &x.1)).collect();
    let results: Vec<&IterationResult> = taken.iter().flatten().map(|x| &x.0).collect();
    match average_gradients(&grads) {
        Ok(avg) => *shared.averaged.lock().unwrap_or_else(|p| p.into_inner()) = avg.map(Arc::new),
        Err(e) => {
            shared.fail(e);
            shared.stop.store(true, Ordering::SeqCst);
            return;
        }
    }
    let mut tracker = shared.tracker.lock().unwrap_or_else(|p| p.into_inner());
    let due = tracker.record(iter, &results);
    tracker.eval_due = due.then_some(iter);
}

/// Daemon-free, single-threaded run of a `(1, 1, 1)` configuration with the
/// same batches, negatives, evaluation points and optimizer as
/// [`run_parallel`].
pub fn run_sequential(prep: &Prepared<'_>, init: &ModelParams) -> Result<RunOutput> {
    let cfg = prep.cfg;
    if cfg.train.trainers() != 1 {
        return Err(Error::Config("the sequential reference only runs (i, j, k) = (1, 1, 1)".into()));
    }
    let plan = prep.daemon_plan(0)?;
    let mut params = init.clone();
    let mut adam = Adam::new(&params);
    let mut state = NodeMemoryState::new(prep.g.num_nodes(), cfg.d_mem, prep.buffer_shape().mail_dim)?;
    let mut tracker = Tracker::new(prep);
    let mut snapshots = Vec::new();
    for p in 0..prep.positions {
        if prep.groups[0].positions[p].epoch_start {
            state.reset();
        }
        let (local, negs) = prep.local_work(0, p, 0, 0)?;
        let read = state.read(&batch_nodes(prep.g, local.clone(), &negs, cfg.n_neighbors));
        let out = train_step(&params, prep.g, local, &negs, &read, cfg.n_neighbors)?;
        state.write(&out.write)?;
        if let Some(avg) = average_gradients(&[Some(&out.grads)])? {
            adam.step(&mut params, &avg, cfg.train.effective_lr());
        }
        if tracker.record(p, &[&out.result]) {
            tracker.evaluate(p, &params)?;
        }
        if plan.snapshot_after.contains(&p) {
            snapshots.push(crate::memstore::MemorySnapshot { position: p, state: state.clone() });
        }
    }
    Ok(RunOutput {
        iterations: tracker.iterations,
        metrics: tracker.metrics,
        params,
        groups: vec![DaemonReport { oplog: Vec::new(), snapshots, state }],
        replicas_consistent: true,
        best: tracker.best,
    })
}

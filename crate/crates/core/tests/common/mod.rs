#![allow(dead_code)]

use mtgnn::memstore::NodeMemoryState;
use mtgnn::parallel::{run_parallel, Prepared, RunOutput};
use mtgnn::synth::{generate, SynthConfig};
use mtgnn::tgraph::TemporalGraph;
use mtgnn::trainer::{batch_nodes, init_params, memory_step, RunConfig};
use mtgnn::Result;

pub fn small_graph(events: usize, seed: u64) -> TemporalGraph {
    generate(&SynthConfig { users: 60, items: 30, events, communities: 5, seed, ..SynthConfig::default() })
        .expect("valid synthetic config")
}

/// Small model widths that keep a full run well under a second.
pub fn small_config(local_batch: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig {
        d_mem: 8,
        d_time: 4,
        d_static: 4,
        evaluate: false,
        timeout_s: 60.0,
        ..RunConfig::default()
    };
    cfg.train.local_batch = local_batch;
    cfg.train.epochs = epochs;
    cfg.train.lr_base = 1e-3;
    cfg.train.seed = 11;
    cfg
}

/// Bitwise comparison of every float in two runs' losses, parameters and
/// final memory.
pub fn runs_identical(a: &RunOutput, b: &RunOutput) -> std::result::Result<(), String> {
    if a.iterations.len() != b.iterations.len() {
        return Err(format!("{} vs {} iterations", a.iterations.len(), b.iterations.len()));
    }
    for (x, y) in a.iterations.iter().zip(&b.iterations) {
        if x.loss.to_bits() != y.loss.to_bits() || x.traversed != y.traversed {
            return Err(format!("iteration {}: loss {} vs {}", x.iter, x.loss, y.loss));
        }
    }
    for ((name, x), (_, y)) in a.params.named_tensors().into_iter().zip(b.params.named_tensors()) {
        if x.data().iter().zip(y.data()).any(|(p, q)| p.to_bits() != q.to_bits()) {
            return Err(format!("parameter {name} differs"));
        }
    }
    if a.groups[0].state != b.groups[0].state {
        return Err("final memory differs".into());
    }
    Ok(())
}

/// Runs `cfg` (which must have `i = j = 1` and frozen weights) with
/// snapshots and replays each group's schedule through a sequential
/// memory-only oracle. Returns (snapshots compared, mismatches).
pub fn frozen_memory_oracle(cfg: &RunConfig, g: &TemporalGraph) -> Result<(usize, usize)> {
    let prep = Prepared::new(cfg, g)?;
    let params = init_params(cfg, g);
    let out = run_parallel(&prep, &params)?;
    assert_eq!(out.params.fingerprint(), params.fingerprint(), "weights must stay frozen");
    let mut compared = 0;
    let mut mismatched = 0;
    for (group, report) in out.groups.iter().enumerate() {
        let plan = prep.daemon_plan(group)?;
        let mut state = NodeMemoryState::new(g.num_nodes(), cfg.d_mem, prep.buffer_shape().mail_dim)?;
        let mut snaps = report.snapshots.iter();
        for (p, pos) in prep.groups[group].positions.iter().enumerate() {
            if pos.epoch_start {
                state.reset();
            }
            let range = prep.batches[pos.batch].clone();
            let read = state.read(&batch_nodes(g, range.clone(), &[], cfg.n_neighbors));
            state.write(&memory_step(&params, g, range, &read)?)?;
            if plan.snapshot_after.contains(&p) {
                let snap = snaps.next().expect("daemon recorded every planned snapshot");
                assert_eq!(snap.position, p);
                compared += 1;
                mismatched += usize::from(snap.state != state);
            }
        }
        compared += 1;
        mismatched += usize::from(report.state != state);
    }
    Ok((compared, mismatched))
}

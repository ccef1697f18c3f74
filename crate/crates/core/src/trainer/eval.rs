//! Link-prediction evaluation by mean reciprocal rank.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memstore::state::NodeMemoryState;
use crate::nn::{decode_link, ModelParams};
use crate::rng::mix_seed;
use crate::tgraph::TemporalGraph;
use crate::trainer::step::{batch_nodes, embed_root, memory_step, Usable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mrr: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub num_negatives: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub n_neighbors: usize,
}

/// `1 / rank` of the true candidate; negatives scoring equal to it rank above it.
pub fn reciprocal_rank(pos: f64, negatives: &[f64]) -> f64 {
    let above = negatives.iter().filter(|&&s| s >= pos).count();
    1.0 / (1 + above) as f64
}

/// `(1/n) Σ_{r=1..n} 1/r`: expected reciprocal rank of a uniformly random
/// ranking among `n` candidates.
pub fn random_mrr(candidates: usize) -> f64 {
    (1..=candidates).map(|r| 1.0 / r as f64).sum::<f64>() / candidates as f64
}

/// `count` destinations drawn uniformly with replacement, never `exclude`.
pub fn eval_negatives(g: &TemporalGraph, event: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    let dest = g.destination_range()?;
    let exclude = g.dst(event);
    if dest.len() < 2 && dest.contains(&exclude) {
        return Err(Error::Config("destination partition has no node besides the true destination".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, event as u64));
    Ok((0..count)
        .map(|_| loop {
            let v = rng.gen_range(dest.clone());
            if v != exclude {
                break v;
            }
        })
        .collect())
}

/// Replays `range` in batches through the memory updater only.
pub fn replay_memory(
    params: &ModelParams,
    g: &TemporalGraph,
    range: Range<usize>,
    batch_size: usize,
    state: &mut NodeMemoryState,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut start = range.start;
    while start < range.end {
        let end = (start + batch_size).min(range.end);
        let roots: Vec<usize> = (start..end).flat_map(|e| [g.src(e), g.dst(e)]).collect();
        let read = state.read(&roots);
        let write = memory_step(params, g, start..end, &read)?;
        state.write(&write)?;
        start = end;
    }
    Ok(())
}

/// Replays `warm` into a fresh memory, then scores every event of `eval`
/// against `num_negatives` sampled destinations. Each evaluation batch is
/// embedded from the memory as it was before that batch, then written back.
pub fn evaluate_mrr(
    params: &ModelParams,
    g: &TemporalGraph,
    warm: Range<usize>,
    eval: Range<usize>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let dims = params.dims;
    let mut state = NodeMemoryState::new(g.num_nodes(), dims.d_mem, dims.raw_mail_dim())?;
    replay_memory(params, g, warm, opts.batch_size, &mut state)?;
    let mut total = 0.0;
    let mut queries = 0;
    let mut start = eval.start;
    while start < eval.end {
        let end = (start + opts.batch_size).min(eval.end);
        let negatives: Vec<Vec<usize>> =
            (start..end).map(|e| eval_negatives(g, e, opts.num_negatives, opts.seed)).collect::<Result<_>>()?;
        let mut nodes = batch_nodes(g, start..end, &[], opts.n_neighbors);
        for (k, e) in (start..end).enumerate() {
            let t = g.t(e);
            for &v in &negatives[k] {
                nodes.push(v);
                nodes.extend(g.sample_recent_neighbors(v, t, opts.n_neighbors).iter().map(|nb| nb.node));
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        let read = state.read(&nodes);
        let usable = Usable::compute(params, &read, true)?;
        for (k, e) in (start..end).enumerate() {
            let t = g.t(e);
            let hu = embed_root(params, g, &usable, g.src(e), t, opts.n_neighbors)?.h;
            let score = |v: usize| -> Result<f64> {
                let hv = embed_root(params, g, &usable, v, t, opts.n_neighbors)?.h;
                Ok(decode_link(&params.decoder, &hu, &hv)?.0)
            };
            let pos = score(g.dst(e))?;
            let negs: Vec<f64> = negatives[k].iter().map(|&v| score(v)).collect::<Result<_>>()?;
            total += reciprocal_rank(pos, &negs);
            queries += 1;
        }
        let write = usable.write_rows(g, start..end, &read)?;
        state.write(&write)?;
        start = end;
    }
    let mrr = if queries == 0 { 0.0 } else { total / queries as f64 };
    Ok(EvalResult { mrr, queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tgraph::{Event, GraphMeta};

    #[test]
    fn ranks_are_tie_pessimistic() {
        assert_eq!(reciprocal_rank(1.0, &[0.0, -1.0]), 1.0);
        assert_eq!(reciprocal_rank(1.0, &[2.0, 0.0]), 0.5);
        assert_eq!(reciprocal_rank(0.0, &[0.0; 49]), 1.0 / 50.0);
    }

    #[test]
    fn random_baseline_value() {
        assert!((random_mrr(50) - 0.0899).abs() < 5e-4);
        assert_eq!(random_mrr(1), 1.0);
    }

    #[test]
    fn negatives_exclude_truth_and_stay_in_partition() {
        let ev = (0..20).map(|k| Event { src: k % 4, dst: 4 + k % 3, t: k as f64, feat: vec![] }).collect();
        let g = TemporalGraph::from_events(ev, &GraphMeta::new(7, Some(4), 0)).unwrap();
        for e in 0..20 {
            let negs = eval_negatives(&g, e, 49, 3).unwrap();
            assert_eq!(negs.len(), 49);
            assert!(negs.iter().all(|&v| (4..7).contains(&v) && v != g.dst(e)));
            assert_eq!(negs, eval_negatives(&g, e, 49, 3).unwrap());
        }
    }
}

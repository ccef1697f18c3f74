//! One training step in reversed order: usable memory from the cached mails,
//! embeddings, decoding, loss, backward, and the memory write for the roots.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::memstore::mail::generate_mails;
use crate::memstore::state::MemoryRows;
use crate::nn::{
    attention_backward, attention_forward, combine_static, decode_link, decode_link_backward, expand_mail,
    gru_backward, gru_forward, time_encode_backward, AttnCache, GruCache, ModelParams, NeighborInput,
};
use crate::tgraph::TemporalGraph;
use crate::trainer::loss::bce_loss;

/// Every node whose memory a batch touches: the roots (sources,
/// destinations, negatives) and their recent neighbors, sorted and unique.
pub fn batch_nodes(g: &TemporalGraph, range: Range<usize>, negatives: &[usize], n_neighbors: usize) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for (k, idx) in range.enumerate() {
        let t = g.t(idx);
        let roots = [Some(g.src(idx)), Some(g.dst(idx)), negatives.get(k).copied()];
        for v in roots.into_iter().flatten() {
            set.insert(v);
            set.extend(g.sample_recent_neighbors(v, t, n_neighbors).iter().map(|nb| nb.node));
        }
    }
    set.into_iter().collect()
}

/// Memory after consuming each node's cached mail, plus the model inputs.
pub(crate) struct Usable {
    index: HashMap<usize, usize>,
    pub(crate) s: Vec<Vec<f64>>,
    pub(crate) x: Vec<Vec<f64>>,
    gru: Vec<Option<(GruCache, f64)>>,
}

impl Usable {
    pub(crate) fn compute(params: &ModelParams, rows: &MemoryRows, with_inputs: bool) -> Result<Self> {
        let d_mem = params.dims.d_mem;
        let omega = params.omega.data();
        let mut index = HashMap::with_capacity(rows.len());
        let mut s = Vec::with_capacity(rows.len());
        let mut gru = Vec::with_capacity(rows.len());
        for k in 0..rows.len() {
            index.insert(rows.nodes[k], k);
            if rows.has_mail(k) {
                let dt = rows.mail_ts[k] - rows.last_update[k];
                let mail = expand_mail(rows.mail(k), d_mem, dt, omega)?;
                let (next, cache) = gru_forward(&params.gru, &mail, rows.memory(k))?;
                s.push(next);
                gru.push(Some((cache, dt)));
            } else {
                s.push(rows.memory(k).to_vec());
                gru.push(None);
            }
        }
        let x = if with_inputs {
            rows.nodes.iter().zip(&s).map(|(&v, sv)| combine_static(sv, params.static_row(v))).collect()
        } else {
            Vec::new()
        };
        Ok(Self { index, s, x, gru })
    }

    pub(crate) fn row(&self, v: usize) -> Result<usize> {
        self.index
            .get(&v)
            .copied()
            .ok_or_else(|| Error::Contract(format!("node {v} was not part of the memory read")))
    }

    /// Rows to write back for the positive roots of `range`.
    pub(crate) fn write_rows(&self, g: &TemporalGraph, range: Range<usize>, read: &MemoryRows) -> Result<MemoryRows> {
        for idx in range.clone() {
            self.row(g.src(idx))?;
            self.row(g.dst(idx))?;
        }
        let mails = generate_mails(g, range, |v| &self.s[self.index[&v]])?;
        let mut out = MemoryRows::with_capacity(read.d_mem, read.mail_dim, mails.per_node.len());
        for (&v, mail) in &mails.per_node {
            let k = self.index[&v];
            let last_update = if read.has_mail(k) { read.mail_ts[k] } else { read.last_update[k] };
            if mail.raw.len() != read.mail_dim {
                return Err(Error::Shape(format!("mail width {} != stored width {}", mail.raw.len(), read.mail_dim)));
            }
            out.push(v, &self.s[k], last_update, &mail.raw, mail.ts);
        }
        Ok(out)
    }
}

pub(crate) struct RootEmbedding {
    pub(crate) h: Vec<f64>,
    cache: AttnCache,
    root: usize,
    neighbors: Vec<usize>,
}

pub(crate) fn embed_root(
    params: &ModelParams,
    g: &TemporalGraph,
    usable: &Usable,
    v: usize,
    t: f64,
    n_neighbors: usize,
) -> Result<RootEmbedding> {
    let root = usable.row(v)?;
    let sampled = g.sample_recent_neighbors(v, t, n_neighbors);
    let mut neighbors = Vec::with_capacity(sampled.len());
    let mut inputs = Vec::with_capacity(sampled.len());
    for nb in &sampled {
        let k = usable.row(nb.node)?;
        neighbors.push(k);
        inputs.push(NeighborInput { x: &usable.x[k], edge: g.edge_feat(nb.event), dt: nb.dt });
    }
    let (h, cache) = attention_forward(&params.attn, params.omega.data(), &usable.x[root], &inputs)?;
    Ok(RootEmbedding { h, cache, root, neighbors })
}

/// Memory-only update for a batch: the rows a trainer would write back,
/// without computing embeddings.
pub fn memory_step(params: &ModelParams, g: &TemporalGraph, range: Range<usize>, read: &MemoryRows) -> Result<MemoryRows> {
    let usable = Usable::compute(params, read, false)?;
    usable.write_rows(g, range, read)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub loss: f64,
    pub pos_score_mean: f64,
    pub neg_score_mean: f64,
    pub grad_norm: f64,
    pub events: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub result: IterationResult,
    pub grads: ModelParams,
    /// Root-node rows to write back.
    pub write: MemoryRows,
}

/// Runs one step on the events of `range` with one negative destination per
/// event. `read` must hold the rows of [`batch_nodes`] for this batch.
pub fn train_step(
    params: &ModelParams,
    g: &TemporalGraph,
    range: Range<usize>,
    negatives: &[usize],
    read: &MemoryRows,
    n_neighbors: usize,
) -> Result<StepOutput> {
    let start = Instant::now();
    if range.is_empty() {
        return Err(Error::Contract("train_step needs a non-empty batch".into()));
    }
    if negatives.len() != range.len() {
        return Err(Error::Shape(format!("{} negatives for {} events", negatives.len(), range.len())));
    }
    let usable = Usable::compute(params, read, true)?;
    let mut pos_logits = Vec::with_capacity(range.len());
    let mut neg_logits = Vec::with_capacity(range.len());
    let mut forward = Vec::with_capacity(range.len());
    for (k, idx) in range.clone().enumerate() {
        let t = g.t(idx);
        let eu = embed_root(params, g, &usable, g.src(idx), t, n_neighbors)?;
        let ev = embed_root(params, g, &usable, g.dst(idx), t, n_neighbors)?;
        let en = embed_root(params, g, &usable, negatives[k], t, n_neighbors)?;
        let (pos, pos_cache) = decode_link(&params.decoder, &eu.h, &ev.h)?;
        let (neg, neg_cache) = decode_link(&params.decoder, &eu.h, &en.h)?;
        pos_logits.push(pos);
        neg_logits.push(neg);
        forward.push((eu, ev, en, pos_cache, neg_cache));
    }
    let bce = bce_loss(&pos_logits, &neg_logits)?;

    let mut grads = params.zeros_like();
    let d_x = params.dims.node_input_dim();
    let mut d_inputs = vec![vec![0.0; d_x]; read.len()];
    let omega = params.omega.data();
    let mut grad_omega = vec![0.0; omega.len()];
    let mut backprop = |emb: &RootEmbedding, d_h: &[f64], grads: &mut ModelParams, grad_omega: &mut [f64]| -> Result<()> {
        let g_in = attention_backward(&params.attn, omega, &emb.cache, d_h, &mut grads.attn, grad_omega)?;
        add_into(&mut d_inputs[emb.root], &g_in.root);
        for (&k, d) in emb.neighbors.iter().zip(&g_in.neighbors) {
            add_into(&mut d_inputs[k], d);
        }
        Ok(())
    };
    for (k, (eu, ev, en, pos_cache, neg_cache)) in forward.iter().enumerate() {
        let (d_u1, d_v) = decode_link_backward(&params.decoder, pos_cache, bce.d_pos[k], &mut grads.decoder);
        let (d_u2, d_n) = decode_link_backward(&params.decoder, neg_cache, bce.d_neg[k], &mut grads.decoder);
        let d_u: Vec<f64> = d_u1.iter().zip(&d_u2).map(|(a, b)| a + b).collect();
        backprop(eu, &d_u, &mut grads, &mut grad_omega)?;
        backprop(ev, &d_v, &mut grads, &mut grad_omega)?;
        backprop(en, &d_n, &mut grads, &mut grad_omega)?;
    }

    let d_mem = params.dims.d_mem;
    let d_t = params.dims.d_time;
    for (k, d) in d_inputs.iter().enumerate() {
        if params.dims.d_static > 0 {
            add_into(grads.static_table.row_mut(read.nodes[k]), &d[d_mem..]);
        }
        if let Some((cache, dt)) = &usable.gru[k] {
            let d_mail = gru_backward(&params.gru, cache, &d[..d_mem], &mut grads.gru);
            time_encode_backward(*dt, omega, &d_mail[2 * d_mem..2 * d_mem + d_t], &mut grad_omega);
        }
    }
    grads.omega.data_mut().copy_from_slice(&grad_omega);
    if !grads.is_finite() {
        return Err(Error::Numeric("gradients".into()));
    }

    let write = usable.write_rows(g, range.clone(), read)?;
    let n = range.len() as f64;
    let result = IterationResult {
        loss: bce.loss,
        pos_score_mean: pos_logits.iter().sum::<f64>() / n,
        neg_score_mean: neg_logits.iter().sum::<f64>() / n,
        grad_norm: grads.sq_norm().sqrt(),
        events: range.len(),
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok(StepOutput { result, grads, write })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

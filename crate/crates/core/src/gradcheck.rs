//! Central finite-difference checks of every analytic backward pass.
//!
//! Each check draws random small instances (widths ≤ 16, ≤ 5 neighbors),
//! contracts the op's output with a random vector to get a scalar, and
//! compares the analytic gradient of every input and parameter entry with
//! `(f(x+ε) − f(x−ε)) / 2ε`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::memstore::state::{MemoryRows, NO_MAIL};
use crate::nn::tensor::Tensor;
use crate::nn::{
    attention_backward, attention_forward, decode_link, decode_link_backward, gru_backward, gru_forward,
    time_encode, time_encode_backward, AttnParams, DecoderParams, GruParams, ModelDims, ModelParams, NeighborInput,
};
use crate::rng::mix_seed;
use crate::tgraph::{Event, GraphMeta, TemporalGraph};
use crate::trainer::{bce_loss, batch_nodes, train_step};

pub const FD_EPS: f64 = 1e-5;

/// Entries whose gradient magnitude is below this are compared on an
/// absolute scale, where the finite difference itself is only accurate to
/// about `1e-11`.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub trials: usize,
    pub entries: usize,
    pub max_rel_err: f64,
}

/// Compares analytic gradients of flat value blocks against central
/// differences of `f`. `select` limits the checked entries per block.
fn fd_compare(
    values: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    select: &mut dyn FnMut(usize) -> Vec<usize>,
    f: &dyn Fn(&[Vec<f64>]) -> f64,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for b in 0..values.len() {
        for idx in select(values[b].len()) {
            let orig = values[b][idx];
            values[b][idx] = orig + FD_EPS;
            let up = f(values);
            values[b][idx] = orig - FD_EPS;
            let down = f(values);
            values[b][idx] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[b][idx], numeric));
            count += 1;
        }
    }
    (worst, count)
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).expect("shape matches data")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn check_time_encode(trials: usize, seed: u64) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let d_t = rng.gen_range(1..=16);
        let omega: Vec<f64> = (0..d_t).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dt = rng.gen_range(0.0..10.0);
        let c = uniform(&mut rng, d_t, 1.0);
        let mut g_omega = vec![0.0; d_t];
        let g_dt = time_encode_backward(dt, &omega, &c, &mut g_omega);
        let f = |v: &[Vec<f64>]| dot(&time_encode(v[1][0], &v[0]).expect("dt stays non-negative"), &c);
        let mut values = vec![omega, vec![dt]];
        let (w, n) = fd_compare(&mut values, &[g_omega, vec![g_dt]], &mut all, &f);
        worst = worst.max(w);
        entries += n;
    }
    GradCheckReport { op: "time_encode", trials, entries, max_rel_err: worst }
}

pub fn check_gru(trials: usize, seed: u64) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let d_mem = rng.gen_range(1..=8);
        let d_mail = rng.gen_range(1..=16);
        let cols = d_mail + d_mem;
        let shapes = [[d_mem, cols], [d_mem, cols], [d_mem, cols], [d_mem, 1], [d_mem, 1], [d_mem, 1]];
        let build = |v: &[Vec<f64>]| GruParams {
            w_z: tensor(&[d_mem, cols], &v[0]),
            w_r: tensor(&[d_mem, cols], &v[1]),
            w_h: tensor(&[d_mem, cols], &v[2]),
            b_z: tensor(&[d_mem], &v[3]),
            b_r: tensor(&[d_mem], &v[4]),
            b_h: tensor(&[d_mem], &v[5]),
        };
        let mut values: Vec<Vec<f64>> = shapes.iter().map(|s| uniform(&mut rng, s[0] * s[1], 0.8)).collect();
        values.push(uniform(&mut rng, d_mail, 1.0));
        let s = uniform(&mut rng, d_mem, 1.0);
        let c = uniform(&mut rng, d_mem, 1.0);
        let p = build(&values);
        let (_, cache) = gru_forward(&p, &values[6], &s).expect("finite");
        let mut grads = GruParams::zeros(d_mail, d_mem);
        let d_mail_grad = gru_backward(&p, &cache, &c, &mut grads);
        let analytic = vec![
            grads.w_z.data().to_vec(),
            grads.w_r.data().to_vec(),
            grads.w_h.data().to_vec(),
            grads.b_z.data().to_vec(),
            grads.b_r.data().to_vec(),
            grads.b_h.data().to_vec(),
            d_mail_grad,
        ];
        let f = |v: &[Vec<f64>]| dot(&gru_forward(&build(v), &v[6], &s).expect("finite").0, &c);
        let (w, n) = fd_compare(&mut values, &analytic, &mut all, &f);
        worst = worst.max(w);
        entries += n;
    }
    GradCheckReport { op: "gru_update", trials, entries, max_rel_err: worst }
}

pub fn check_attention(trials: usize, seed: u64) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let d_x = rng.gen_range(1..=8);
        let d_e = rng.gen_range(0..=4);
        let d_t = rng.gen_range(1..=4);
        let d_out = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=5);
        let (qc, kc) = (d_x + d_t, d_x + d_e + d_t);
        let build = |v: &[Vec<f64>]| AttnParams {
            w_q: tensor(&[d_out, qc], &v[0]),
            b_q: tensor(&[d_out], &v[1]),
            w_k: tensor(&[d_out, kc], &v[2]),
            b_k: tensor(&[d_out], &v[3]),
            w_v: tensor(&[d_out, kc], &v[4]),
            b_v: tensor(&[d_out], &v[5]),
        };
        let mut values = vec![
            uniform(&mut rng, d_out * qc, 0.8),
            uniform(&mut rng, d_out, 0.5),
            uniform(&mut rng, d_out * kc, 0.8),
            uniform(&mut rng, d_out, 0.5),
            uniform(&mut rng, d_out * kc, 0.8),
            uniform(&mut rng, d_out, 0.5),
            (0..d_t).map(|_| rng.gen_range(0.0..1.0)).collect(),
            uniform(&mut rng, d_x, 1.0),
        ];
        for _ in 0..n {
            values.push(uniform(&mut rng, d_x, 1.0));
        }
        let edges: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut rng, d_e, 1.0)).collect();
        let dts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let c = uniform(&mut rng, d_out, 1.0);
        let forward = |v: &[Vec<f64>]| {
            let nbs: Vec<NeighborInput<'_>> =
                (0..n).map(|m| NeighborInput { x: &v[8 + m], edge: &edges[m], dt: dts[m] }).collect();
            attention_forward(&build(v), &v[6], &v[7], &nbs).expect("finite")
        };
        let p = build(&values);
        let (_, cache) = forward(&values);
        let mut grads = AttnParams::zeros(d_x, d_e, d_t, d_out);
        let mut g_omega = vec![0.0; d_t];
        let g_in = attention_backward(&p, &values[6], &cache, &c, &mut grads, &mut g_omega).expect("shapes");
        let mut analytic = vec![
            grads.w_q.data().to_vec(),
            grads.b_q.data().to_vec(),
            grads.w_k.data().to_vec(),
            grads.b_k.data().to_vec(),
            grads.w_v.data().to_vec(),
            grads.b_v.data().to_vec(),
            g_omega,
            g_in.root,
        ];
        analytic.extend(g_in.neighbors);
        let f = |v: &[Vec<f64>]| dot(&forward(v).0, &c);
        let (w, cnt) = fd_compare(&mut values, &analytic, &mut all, &f);
        worst = worst.max(w);
        entries += cnt;
    }
    GradCheckReport { op: "attention", trials, entries, max_rel_err: worst }
}

pub fn check_decoder(trials: usize, seed: u64) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let d_in = rng.gen_range(1..=8);
        let d_hidden = rng.gen_range(1..=16);
        let build = |v: &[Vec<f64>]| DecoderParams {
            w1: tensor(&[d_hidden, 2 * d_in], &v[0]),
            b1: tensor(&[d_hidden], &v[1]),
            w2: tensor(&[1, d_hidden], &v[2]),
            b2: tensor(&[1], &v[3]),
        };
        let mut values = vec![
            uniform(&mut rng, d_hidden * 2 * d_in, 0.8),
            uniform(&mut rng, d_hidden, 0.5),
            uniform(&mut rng, d_hidden, 0.8),
            uniform(&mut rng, 1, 0.5),
            uniform(&mut rng, d_in, 1.0),
            uniform(&mut rng, d_in, 1.0),
        ];
        let c = rng.gen_range(-1.0..1.0);
        let p = build(&values);
        let (_, cache) = decode_link(&p, &values[4], &values[5]).expect("shapes");
        let mut grads = DecoderParams::zeros(d_in, d_hidden);
        let (d_u, d_v) = decode_link_backward(&p, &cache, c, &mut grads);
        let analytic = vec![
            grads.w1.data().to_vec(),
            grads.b1.data().to_vec(),
            grads.w2.data().to_vec(),
            grads.b2.data().to_vec(),
            d_u,
            d_v,
        ];
        let f = |v: &[Vec<f64>]| c * decode_link(&build(v), &v[4], &v[5]).expect("shapes").0;
        let (w, n) = fd_compare(&mut values, &analytic, &mut all, &f);
        worst = worst.max(w);
        entries += n;
    }
    GradCheckReport { op: "decoder", trials, entries, max_rel_err: worst }
}

pub fn check_bce(trials: usize, seed: u64) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let np = rng.gen_range(1..=16);
        let nn = rng.gen_range(0..=16);
        let mut values = vec![uniform(&mut rng, np, 4.0), uniform(&mut rng, nn, 4.0)];
        let out = bce_loss(&values[0], &values[1]).expect("finite");
        let f = |v: &[Vec<f64>]| bce_loss(&v[0], &v[1]).expect("finite").loss;
        let (w, n) = fd_compare(&mut values, &[out.d_pos, out.d_neg], &mut all, &f);
        worst = worst.max(w);
        entries += n;
    }
    GradCheckReport { op: "bce_loss", trials, entries, max_rel_err: worst }
}

/// A small random graph plus memory rows with cached mails for every node.
fn model_instance(rng: &mut ChaCha8Rng) -> (TemporalGraph, ModelParams, MemoryRows, Range<usize>, Vec<usize>) {
    let num_nodes = rng.gen_range(4..=8);
    let d_e = rng.gen_range(0..=3);
    let dims = ModelDims {
        num_nodes,
        d_mem: rng.gen_range(1..=6),
        d_time: rng.gen_range(1..=4),
        d_edge: d_e,
        d_static: rng.gen_range(0..=4),
    };
    let n_events = rng.gen_range(6..=16);
    let mut t = 0.0;
    let events = (0..n_events)
        .map(|_| {
            t += rng.gen_range(0.1..2.0);
            let src = rng.gen_range(0..num_nodes);
            let dst = (src + rng.gen_range(1..num_nodes)) % num_nodes;
            Event { src, dst, t, feat: uniform(rng, d_e, 1.0) }
        })
        .collect();
    let g = TemporalGraph::from_events(events, &GraphMeta::new(num_nodes, None, d_e)).expect("valid graph");
    let mut params = ModelParams::init(dims, g.max_t(), rng.gen());
    // Zero-initialized biases would put ReLU inputs exactly on the kink for
    // roots without neighbors.
    for (name, t) in params.named_tensors_mut() {
        if name != "time.omega" {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let range = n_events - 4..n_events;
    let negatives: Vec<usize> = range.clone().map(|_| rng.gen_range(0..num_nodes)).collect();
    let nodes = batch_nodes(&g, range.clone(), &negatives, 5);
    let mut rows = MemoryRows::with_capacity(dims.d_mem, dims.raw_mail_dim(), nodes.len());
    for &v in &nodes {
        let last = rng.gen_range(0.0..1.0);
        let (mail_ts, mail) = if rng.gen_bool(0.8) {
            (last + rng.gen_range(0.0..3.0), uniform(rng, dims.raw_mail_dim(), 1.0))
        } else {
            (NO_MAIL, vec![0.0; dims.raw_mail_dim()])
        };
        rows.push(v, &uniform(rng, dims.d_mem, 1.0), last, &mail, mail_ts);
    }
    (g, params, rows, range, negatives)
}

/// Gradient of the whole training step with the read memory held fixed,
/// checked on a random subset of entries of every parameter tensor.
pub fn check_full_model(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let (g, params, rows, range, negatives) = model_instance(&mut rng);
        let out = train_step(&params, &g, range.clone(), &negatives, &rows, 5)?;
        let analytic: Vec<Vec<f64>> = out.grads.tensor_list().iter().map(|t| t.data().to_vec()).collect();
        let mut values: Vec<Vec<f64>> = params.tensor_list().iter().map(|t| t.data().to_vec()).collect();
        let shapes: Vec<Vec<usize>> = params.tensor_list().iter().map(|t| t.shape().to_vec()).collect();
        let rebuild = |v: &[Vec<f64>]| {
            let mut p = params.clone();
            for ((_, t), (data, shape)) in p.named_tensors_mut().into_iter().zip(v.iter().zip(&shapes)) {
                *t = tensor(shape, data);
            }
            p
        };
        let f = |v: &[Vec<f64>]| {
            train_step(&rebuild(v), &g, range.clone(), &negatives, &rows, 5).expect("finite step").result.loss
        };
        let mut pick_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xf00d, trial as u64));
        let mut select = |n: usize| -> Vec<usize> {
            if n <= 6 {
                (0..n).collect()
            } else {
                (0..6).map(|_| pick_rng.gen_range(0..n)).collect()
            }
        };
        let (w, n) = fd_compare(&mut values, &analytic, &mut select, &f);
        worst = worst.max(w);
        entries += n;
    }
    Ok(GradCheckReport { op: "full_step", trials, entries, max_rel_err: worst })
}

/// The five op-level checks.
pub fn check_ops(trials: usize, seed: u64) -> Vec<GradCheckReport> {
    vec![
        check_time_encode(trials, seed),
        check_gru(trials, seed),
        check_attention(trials, seed),
        check_decoder(trials, seed),
        check_bce(trials, seed),
    ]
}

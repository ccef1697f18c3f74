use std::collections::BTreeSet;
use std::time::Duration;

use mtgnn::memstore::{
    daemon_run, validate_oplog, BufferShape, DaemonPlan, MemoryRows, NodeMemoryState, SharedBufferSet, WriteBracket,
    NO_MAIL,
};
use mtgnn::nn::{ModelDims, ModelParams};
use mtgnn::synth::{generate, SynthConfig};
use mtgnn::tgraph::make_batches;
use mtgnn::trainer::{batch_nodes, memory_step};
use mtgnn::Error;

fn row(node: usize, value: f64, ts: f64) -> MemoryRows {
    let mut r = MemoryRows::with_capacity(2, 3, 1);
    r.push(node, &[value, -value], ts, &[value, value, value], ts + 1.0);
    r
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Four ranks write overlapping rows of a 3-node store; every arrival order
/// of the bracket must leave the same state as applying them by rank.
#[test]
fn write_bracket_is_order_independent() {
    let writes: Vec<MemoryRows> = vec![
        {
            let mut r = row(0, 1.0, 1.0);
            r.push(1, &[1.5, 0.0], 1.0, &[0.0; 3], 2.0);
            r
        },
        row(1, 2.0, 2.0),
        {
            let mut r = row(2, 3.0, 3.0);
            r.push(0, &[3.5, 3.5], 3.0, &[1.0; 3], 4.0);
            r
        },
        row(2, 4.0, 0.5),
    ];
    let mut reference = NodeMemoryState::new(3, 2, 3).unwrap();
    let mut br = WriteBracket::new();
    for (r, w) in writes.iter().enumerate() {
        br.apply(&mut reference, r, w).unwrap();
    }
    assert_eq!(reference.memory(0), &[3.5, 3.5]);
    assert_eq!(reference.memory(1), &[2.0, -2.0]);
    assert_eq!(reference.memory(2), &[4.0, -4.0]);

    let orders = permutations(&[0, 1, 2, 3]);
    assert_eq!(orders.len(), 24);
    for order in orders {
        let mut state = NodeMemoryState::new(3, 2, 3).unwrap();
        let mut br = WriteBracket::new();
        for r in &order {
            br.apply(&mut state, *r, &writes[*r]).unwrap();
        }
        assert_eq!(state, reference, "arrival order {order:?}");
    }
}

fn seeded_state() -> NodeMemoryState {
    let mut state = NodeMemoryState::new(6, 2, 3).unwrap();
    let mut rows = MemoryRows::with_capacity(2, 3, 6);
    for v in 0..6 {
        let x = v as f64 + 0.25;
        rows.push(v, &[x, 2.0 * x], x, &[x; 3], x + 0.5);
    }
    state.write(&rows).unwrap();
    state
}

#[test]
fn epoch_parallel_slices_agree_on_shared_nodes() {
    let shape = BufferShape { i: 1, j: 3, read_cap: 8, write_cap: 4, d_mem: 2, mail_dim: 3 };
    let buffers = SharedBufferSet::new(shape).unwrap().with_timeout(Duration::from_secs(20));
    let plan = DaemonPlan { i: 1, j: 3, epoch_of: vec![0], epoch_start: vec![false], snapshot_after: BTreeSet::new() };
    let state = seeded_state();
    let expected = state.read(&[1, 3, 4]);
    let lists = vec![vec![1, 3, 4], vec![1, 3, 4], vec![0, 3, 4, 5]];
    std::thread::scope(|s| {
        let daemon = s.spawn(|| daemon_run(&buffers, state, &plan));
        let got = buffers.read(0, &lists).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], got[1]);
        assert_eq!(got[0], expected);
        // The third consumer shares nodes 3 and 4 with the others.
        for v in [3, 4] {
            let a = got[0].nodes.iter().position(|&n| n == v).unwrap();
            let b = got[2].nodes.iter().position(|&n| n == v).unwrap();
            assert_eq!(got[0].memory(a), got[2].memory(b));
            assert_eq!(got[0].mail(a), got[2].mail(b));
        }
        buffers.post_write(0, &MemoryRows::with_capacity(2, 3, 0)).unwrap();
        let report = daemon.join().unwrap().unwrap();
        validate_oplog(&report.oplog, 1, 3).unwrap();
    });
}

#[test]
fn write_then_read_round_trips() {
    let mut state = NodeMemoryState::new(4, 2, 3).unwrap();
    let w = row(2, 7.0, 3.0);
    state.write(&w).unwrap();
    assert_eq!(state.read(&[2]), w);
    let untouched = state.read(&[0, 1, 3]);
    assert!(untouched.memory.iter().all(|&x| x == 0.0));
    assert!(untouched.mail_ts.iter().all(|&t| t == NO_MAIL));
}

#[test]
fn double_post_is_a_protocol_error() {
    let shape = BufferShape { i: 1, j: 1, read_cap: 4, write_cap: 4, d_mem: 2, mail_dim: 3 };
    let buffers = SharedBufferSet::new(shape).unwrap();
    buffers.post_read(0, &[vec![1]]).unwrap();
    assert!(matches!(buffers.post_read(0, &[vec![2]]), Err(Error::Protocol(_))));
    buffers.post_write(0, &row(0, 1.0, 1.0)).unwrap();
    assert!(matches!(buffers.post_write(0, &row(0, 1.0, 1.0)), Err(Error::Protocol(_))));
    assert!(matches!(buffers.post_read(0, &[vec![1], vec![2]]), Err(Error::Shape(_)) | Err(Error::Protocol(_))));
}

/// Replays a synthetic stream batch by batch and checks the store-level
/// invariants: only positive roots are written, supporting rows are left
/// alone, `last_update` never goes backwards and mail timestamps stay inside
/// the batch that produced them.
#[test]
fn replay_respects_store_invariants() {
    let g = generate(&SynthConfig { users: 40, items: 20, events: 600, communities: 4, ..SynthConfig::default() }).unwrap();
    let dims = ModelDims { num_nodes: g.num_nodes(), d_mem: 4, d_time: 3, d_edge: 0, d_static: 2 };
    let params = ModelParams::init(dims, g.max_t(), 5);
    let mut state = NodeMemoryState::new(g.num_nodes(), dims.d_mem, dims.raw_mail_dim()).unwrap();
    assert!(state.is_zero());
    for b in make_batches(0..g.len(), 50).unwrap() {
        let nodes = batch_nodes(&g, b.range.clone(), &[], 10);
        let before = state.clone();
        let write = memory_step(&params, &g, b.range.clone(), &state.read(&nodes)).unwrap();
        let roots: BTreeSet<usize> = b.range.clone().flat_map(|e| [g.src(e), g.dst(e)]).collect();
        assert_eq!(write.nodes.iter().copied().collect::<BTreeSet<_>>(), roots);
        state.write(&write).unwrap();
        let batch_end = g.t(b.range.end - 1);
        for v in 0..g.num_nodes() {
            assert!(state.last_update(v) >= before.last_update(v));
            if !roots.contains(&v) {
                assert_eq!(state.memory(v), before.memory(v));
                assert_eq!(state.mail(v), before.mail(v));
            } else {
                assert!(state.mail_ts(v) <= batch_end && state.mail_ts(v) >= g.t(b.range.start));
            }
        }
    }
    assert!(!state.is_zero());
    state.reset();
    assert!(state.is_zero());
}

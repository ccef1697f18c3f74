//! Continuous-time dynamic graph of edge events.
//!
//! Events are kept sorted by timestamp (stable on ties, so file order breaks
//! ties) and every node carries an append-only, chronologically ordered list
//! of its incident events. The graph is immutable once built.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// One edge-appearance event.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    pub feat: Vec<f64>,
}

/// Sidecar metadata declared next to a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMeta {
    pub num_nodes: usize,
    /// Node ids below the boundary form the source partition.
    pub bipartite_boundary: Option<usize>,
    pub d_e: usize,
}

impl GraphMeta {
    pub fn new(num_nodes: usize, bipartite_boundary: Option<usize>, d_e: usize) -> Self {
        Self { num_nodes, bipartite_boundary, d_e }
    }

    /// Path of the sidecar for a dataset file: `<file>.meta`.
    pub fn sidecar_path(data: &Path) -> PathBuf {
        let mut s = data.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut num_nodes = None;
        let mut boundary = None;
        let mut d_e = 0;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let value = value.trim();
            let bad = |what: &str| Error::Parse { line: n + 1, msg: format!("bad {what}: {value:?}") };
            match key.trim() {
                "num_nodes" => num_nodes = Some(value.parse().map_err(|_| bad("num_nodes"))?),
                "bipartite_boundary" => {
                    boundary = if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad("bipartite_boundary"))?)
                    }
                }
                "d_e" => d_e = value.parse().map_err(|_| bad("d_e"))?,
                other => {
                    return Err(Error::Parse { line: n + 1, msg: format!("unknown key {other:?}") })
                }
            }
        }
        let num_nodes = num_nodes.ok_or_else(|| Error::Parse { line: 0, msg: "missing num_nodes".into() })?;
        Ok(Self { num_nodes, bipartite_boundary: boundary, d_e })
    }

    pub fn to_text(&self) -> String {
        let boundary = match self.bipartite_boundary {
            Some(b) => b.to_string(),
            None => "none".to_string(),
        };
        format!("num_nodes={}\nbipartite_boundary={}\nd_e={}\n", self.num_nodes, boundary, self.d_e)
    }
}

/// An entry of a node's neighbor index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incident {
    pub neighbor: usize,
    pub event: usize,
    pub t: f64,
}

/// A sampled supporting neighbor of a root node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    pub event: usize,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    src: Vec<usize>,
    dst: Vec<usize>,
    ts: Vec<f64>,
    feats: Vec<f64>,
    d_e: usize,
    num_nodes: usize,
    bipartite_boundary: Option<usize>,
    adj: Vec<Vec<Incident>>,
}

impl TemporalGraph {
    /// Builds a graph from events in arbitrary order. Events are stably sorted
    /// by timestamp.
    pub fn from_events(mut events: Vec<Event>, meta: &GraphMeta) -> Result<Self> {
        for (n, e) in events.iter().enumerate() {
            validate_event(e, meta, n + 1)?;
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut g = TemporalGraph {
            src: Vec::with_capacity(events.len()),
            dst: Vec::with_capacity(events.len()),
            ts: Vec::with_capacity(events.len()),
            feats: Vec::with_capacity(events.len() * meta.d_e),
            d_e: meta.d_e,
            num_nodes: meta.num_nodes,
            bipartite_boundary: meta.bipartite_boundary,
            adj: vec![Vec::new(); meta.num_nodes],
        };
        for e in events {
            g.src.push(e.src);
            g.dst.push(e.dst);
            g.ts.push(e.t);
            g.feats.extend_from_slice(&e.feat);
        }
        for idx in 0..g.len() {
            let (u, v, t) = (g.src[idx], g.dst[idx], g.ts[idx]);
            g.adj[u].push(Incident { neighbor: v, event: idx, t });
            if u != v {
                g.adj[v].push(Incident { neighbor: u, event: idx, t });
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn bipartite_boundary(&self) -> Option<usize> {
        self.bipartite_boundary
    }

    pub fn meta(&self) -> GraphMeta {
        GraphMeta::new(self.num_nodes, self.bipartite_boundary, self.d_e)
    }

    pub fn src(&self, idx: usize) -> usize {
        self.src[idx]
    }

    pub fn dst(&self, idx: usize) -> usize {
        self.dst[idx]
    }

    pub fn t(&self, idx: usize) -> f64 {
        self.ts[idx]
    }

    pub fn edge_feat(&self, idx: usize) -> &[f64] {
        &self.feats[idx * self.d_e..(idx + 1) * self.d_e]
    }

    pub fn event(&self, idx: usize) -> Event {
        Event { src: self.src[idx], dst: self.dst[idx], t: self.ts[idx], feat: self.edge_feat(idx).to_vec() }
    }

    pub fn max_t(&self) -> f64 {
        self.ts.last().copied().unwrap_or(0.0)
    }

    pub fn incident(&self, v: usize) -> &[Incident] {
        &self.adj[v]
    }

    /// Number of events incident to each node (a self-loop counts once).
    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    /// The range negatives are drawn from: the destination partition for
    /// bipartite graphs, all nodes otherwise.
    pub fn destination_range(&self) -> Result<Range<usize>> {
        let range = match self.bipartite_boundary {
            Some(b) => b..self.num_nodes,
            None => 0..self.num_nodes,
        };
        if range.is_empty() {
            return Err(Error::Config("destination partition is empty".into()));
        }
        Ok(range)
    }

    /// Up to `n` events incident to `v` strictly before `t`, most recent first.
    pub fn sample_recent_neighbors(&self, v: usize, t: f64, n: usize) -> Vec<Neighbor> {
        let list = &self.adj[v];
        let end = list.partition_point(|inc| inc.t < t);
        list[end.saturating_sub(n)..end]
            .iter()
            .rev()
            .map(|inc| Neighbor { node: inc.neighbor, event: inc.event, dt: t - inc.t })
            .collect()
    }

    /// Timestamp of the latest event incident to `v` strictly before `t`.
    pub fn last_event_before(&self, v: usize, t: f64) -> Option<f64> {
        let list = &self.adj[v];
        let end = list.partition_point(|inc| inc.t < t);
        end.checked_sub(1).map(|i| list[i].t)
    }
}

fn validate_event(e: &Event, meta: &GraphMeta, line: usize) -> Result<()> {
    for id in [e.src, e.dst] {
        if id >= meta.num_nodes {
            return Err(Error::NodeRange { id, num_nodes: meta.num_nodes, line });
        }
    }
    if !(e.t.is_finite() && e.t >= 0.0) {
        return Err(Error::Parse { line, msg: format!("timestamp must be finite and >= 0, got {}", e.t) });
    }
    if e.feat.len() != meta.d_e {
        return Err(Error::Parse {
            line,
            msg: format!("expected {} edge features, got {}", meta.d_e, e.feat.len()),
        });
    }
    if let Some(b) = meta.bipartite_boundary {
        if (e.src < b) == (e.dst < b) {
            return Err(Error::Parse {
                line,
                msg: format!("event ({}, {}) does not cross bipartite boundary {b}", e.src, e.dst),
            });
        }
    }
    Ok(())
}

/// Reads a `src,dst,t[,f0,...]` CSV file. Line numbers in errors are 1-based
/// file lines (the header is line 1).
pub fn load_events(path: &Path, meta: &GraphMeta) -> Result<TemporalGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let events = parse_events(&text, meta)?;
    TemporalGraph::from_events(events, meta)
}

/// Loads a dataset together with its `<file>.meta` sidecar.
pub fn load_dataset(path: &Path) -> Result<TemporalGraph> {
    let meta_path = GraphMeta::sidecar_path(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = GraphMeta::parse(&text)?;
    load_events(path, &meta)
}

fn parse_events(text: &str, meta: &GraphMeta) -> Result<Vec<Event>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[..3] != ["src", "dst", "t"] {
        return Err(Error::Parse { line: 1, msg: format!("header must start with src,dst,t; got {names:?}") });
    }
    if names.len() - 3 != meta.d_e {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {} edge features, metadata says d_e={}", names.len() - 3, meta.d_e),
        });
    }
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let node = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| Error::Parse { line, msg: format!("bad node id {:?}", field(i)) })
        };
        let float = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Parse { line, msg: format!("bad number {:?}", field(i)) })
        };
        let feat = (3..3 + meta.d_e).map(float).collect::<Result<Vec<_>>>()?;
        let event = Event { src: node(0)?, dst: node(1)?, t: float(2)?, feat };
        validate_event(&event, meta, line)?;
        events.push(event);
    }
    Ok(events)
}

/// Writes events and the sidecar metadata next to them.
pub fn write_dataset(path: &Path, graph: &TemporalGraph) -> Result<()> {
    let mut out = String::from("src,dst,t");
    for f in 0..graph.d_e() {
        out.push_str(&format!(",f{f}"));
    }
    out.push('\n');
    for idx in 0..graph.len() {
        out.push_str(&format!("{},{},{}", graph.src(idx), graph.dst(idx), graph.t(idx)));
        for x in graph.edge_feat(idx) {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta_path = GraphMeta::sidecar_path(path);
    fs::write(&meta_path, graph.meta().to_text()).map_err(|e| Error::io(&meta_path, e))
}

/// Chronological train/val/test ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits the event sequence by event count at the given quantiles.
pub fn chronological_split(g: &TemporalGraph, train_frac: f64, val_frac: f64) -> Result<Split> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(train_frac) || !ok(val_frac) || train_frac + val_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions must lie in (0,1) with sum < 1, got {train_frac}/{val_frac}"
        )));
    }
    let n = g.len();
    let train_end = ((n as f64) * train_frac).round() as usize;
    let val_end = (((n as f64) * (train_frac + val_frac)).round() as usize).clamp(train_end, n);
    Ok(Split { train: 0..train_end, val: train_end..val_end, test: val_end..n })
}

/// A contiguous chronological batch of events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchSpec {
    pub index: usize,
    pub range: Range<usize>,
}

impl MiniBatchSpec {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Positive roots as (src, dst, t) triples.
    pub fn positive_roots(&self, g: &TemporalGraph) -> Vec<(usize, usize, f64)> {
        self.range.clone().map(|e| (g.src(e), g.dst(e), g.t(e))).collect()
    }
}

pub fn make_batches(range: Range<usize>, batch_size: usize) -> Result<Vec<MiniBatchSpec>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + batch_size).min(range.end);
        out.push(MiniBatchSpec { index: out.len(), range: start..end });
        start = end;
    }
    Ok(out)
}

/// `groups[g][e]` is the negative destination for the `e`-th event of the
/// batch in negative group `g`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeGroups {
    pub groups: Vec<Vec<usize>>,
}

/// Draws `num_groups` independent uniform negative destinations per event.
/// The draw depends only on `seed` and the batch's first event index.
pub fn sample_negatives(
    batch: &MiniBatchSpec,
    g: &TemporalGraph,
    num_groups: usize,
    seed: u64,
) -> Result<NegativeGroups> {
    if num_groups == 0 {
        return Err(Error::Config("num_groups must be >= 1".into()));
    }
    let dest = g.destination_range()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, batch.range.start as u64));
    let groups = (0..num_groups)
        .map(|_| batch.range.clone().map(|_| rng.gen_range(dest.clone())).collect())
        .collect();
    Ok(NegativeGroups { groups })
}

/// For every node, how many of its events survive COMB (i.e. are the node's
/// last mail within their batch) when the whole stream is cut into batches of
/// `batch_size`.
pub fn captured_events_analysis(g: &TemporalGraph, batch_size: usize) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut captured = vec![0usize; g.num_nodes()];
    let mut last_batch = vec![usize::MAX; g.num_nodes()];
    for idx in 0..g.len() {
        let b = idx / batch_size;
        for v in [g.src(idx), g.dst(idx)] {
            if last_batch[v] != b {
                last_batch[v] = b;
                captured[v] += 1;
            }
        }
    }
    Ok(captured)
}

/// Aggregate captured-event summary for one batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedSummary {
    pub batch_size: usize,
    pub total_events: usize,
    pub total_captured: usize,
    /// Fraction of generated mails dropped by COMB across the stream.
    pub info_loss: f64,
}

pub fn captured_summary(g: &TemporalGraph, batch_size: usize) -> Result<CapturedSummary> {
    let captured = captured_events_analysis(g, batch_size)?;
    let total_captured: usize = captured.iter().sum();
    let mails = 2 * g.len();
    let info_loss = if mails == 0 { 0.0 } else { 1.0 - total_captured as f64 / mails as f64 };
    Ok(CapturedSummary { batch_size, total_events: g.len(), total_captured, info_loss })
}

//! Mail generation, COMB reduction and the staleness/information-loss report.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::memstore::state::{MemoryRows, NO_MAIL};
use crate::nn::make_raw_mail;
use crate::tgraph::TemporalGraph;

/// One directed mail in stored form.
#[derive(Debug, Clone, PartialEq)]
pub struct MailCandidate {
    pub node: usize,
    pub raw: Vec<f64>,
    pub ts: f64,
    pub event: usize,
}

/// Keeps the most recent mail; equal timestamps resolve to the larger event index.
pub fn comb(mails: &[MailCandidate]) -> Result<&MailCandidate> {
    mails
        .iter()
        .max_by(|a, b| a.ts.total_cmp(&b.ts).then(a.event.cmp(&b.event)))
        .ok_or_else(|| Error::Contract("COMB needs at least one mail".into()))
}

/// Mails of one batch after COMB, keyed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMails {
    pub per_node: BTreeMap<usize, MailCandidate>,
    /// Mails generated before COMB (two per event).
    pub generated: usize,
}

/// Builds both directed mails for every event in `range` from the pre-batch
/// memory supplied by `memory_of`, then reduces each node's mails with COMB.
pub fn generate_mails<'a>(
    g: &TemporalGraph,
    range: Range<usize>,
    memory_of: impl Fn(usize) -> &'a [f64],
) -> Result<BatchMails> {
    let mut grouped: BTreeMap<usize, Vec<MailCandidate>> = BTreeMap::new();
    let mut generated = 0;
    for idx in range {
        let (u, v, t) = (g.src(idx), g.dst(idx), g.t(idx));
        let (s_u, s_v) = (memory_of(u), memory_of(v));
        let edge = g.edge_feat(idx);
        grouped.entry(u).or_default().push(MailCandidate { node: u, raw: make_raw_mail(s_u, s_v, edge), ts: t, event: idx });
        grouped.entry(v).or_default().push(MailCandidate { node: v, raw: make_raw_mail(s_v, s_u, edge), ts: t, event: idx });
        generated += 2;
    }
    let per_node = grouped
        .into_iter()
        .map(|(node, mails)| comb(&mails).map(|m| (node, m.clone())))
        .collect::<Result<_>>()?;
    Ok(BatchMails { per_node, generated })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessMetrics {
    /// Mean gap between a root's latest true prior event and the latest event
    /// its usable memory reflects.
    pub staleness: f64,
    /// Fraction of the batch's mails dropped by COMB.
    pub info_loss: f64,
    pub roots: usize,
    pub mails: usize,
}

/// `rows` must contain every positive root node of the batch as read before
/// the batch was processed.
pub fn staleness_report(g: &TemporalGraph, range: Range<usize>, rows: &MemoryRows) -> Result<StalenessMetrics> {
    let position: BTreeMap<usize, usize> = rows.nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut gap_sum = 0.0;
    let mut roots = 0;
    let mut distinct = std::collections::BTreeSet::new();
    for idx in range.clone() {
        let t = g.t(idx);
        for v in [g.src(idx), g.dst(idx)] {
            let k = *position
                .get(&v)
                .ok_or_else(|| Error::Contract(format!("staleness report is missing root node {v}")))?;
            let reflected = if rows.mail_ts[k] != NO_MAIL { rows.mail_ts[k] } else { rows.last_update[k] };
            if let Some(last_true) = g.last_event_before(v, t) {
                gap_sum += (last_true - reflected).max(0.0);
            }
            roots += 1;
        }
        distinct.insert(g.src(idx));
        distinct.insert(g.dst(idx));
    }
    let mails = 2 * range.len();
    Ok(StalenessMetrics {
        staleness: if roots == 0 { 0.0 } else { gap_sum / roots as f64 },
        info_loss: if mails == 0 { 0.0 } else { 1.0 - distinct.len() as f64 / mails as f64 },
        roots,
        mails,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tgraph::{Event, GraphMeta};

    fn cand(ts: f64, event: usize) -> MailCandidate {
        MailCandidate { node: 0, raw: vec![ts], ts, event }
    }

    #[test]
    fn comb_picks_most_recent() {
        let one = [cand(2.0, 0)];
        assert_eq!(comb(&one).unwrap(), &one[0]);
        let three = [cand(1.0, 0), cand(5.0, 1), cand(3.0, 2)];
        assert_eq!(comb(&three).unwrap().ts, 5.0);
        let tie = [cand(4.0, 7), cand(4.0, 9), cand(4.0, 8)];
        assert_eq!(comb(&tie).unwrap().event, 9);
        assert!(comb(&[]).is_err());
    }

    fn star() -> TemporalGraph {
        let ev = (0..5).map(|k| Event { src: 0, dst: 1 + k % 2, t: k as f64 + 1.0, feat: vec![] }).collect();
        TemporalGraph::from_events(ev, &GraphMeta::new(3, None, 0)).unwrap()
    }

    #[test]
    fn mails_use_the_same_stale_memory() {
        let g = star();
        let mem = [vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let mails = generate_mails(&g, 0..5, |v| &mem[v]).unwrap();
        assert_eq!(mails.generated, 10);
        assert_eq!(mails.per_node.len(), 3);
        let m0 = &mails.per_node[&0];
        assert_eq!(m0.event, 4);
        assert_eq!(&m0.raw[..2], &[1.0, 1.0]);
        assert_eq!(&m0.raw[2..], &[2.0, 2.0]);
    }

    #[test]
    fn info_loss_per_batch() {
        let g = star();
        let rows = MemoryRows::zeroed(2, 4, &[0, 1, 2]);
        let single = staleness_report(&g, 0..1, &rows).unwrap();
        assert_eq!(single.info_loss, 0.0);
        let all = staleness_report(&g, 0..5, &rows).unwrap();
        // 10 mails, 3 survivors
        assert!((all.info_loss - 0.7).abs() < 1e-12);
        assert!(all.staleness > 0.0);
    }
}

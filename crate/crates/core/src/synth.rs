//! Synthetic bipartite interaction streams with planted preferences and
//! bursty users.
//!
//! Users are nodes `0..users`, items are `users..users + items`. User
//! activity and item popularity follow a Zipf-like law. Users and items are
//! spread over communities; every user has a few favorite items inside its
//! community. Each event picks a user by activity (or, with `burst_prob`,
//! repeats the previous user almost immediately), then an item: a favorite
//! with probability `p_favorite`, some item of the user's community with
//! probability `p_community`, otherwise any item by popularity.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tgraph::{Event, GraphMeta, TemporalGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub communities: usize,
    pub favorites: usize,
    pub p_favorite: f64,
    pub p_community: f64,
    pub burst_prob: f64,
    /// Exponent of the activity / popularity power law.
    pub zipf: f64,
    pub mean_gap: f64,
    pub d_e: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 800,
            items: 200,
            events: 5_000,
            communities: 10,
            favorites: 3,
            p_favorite: 0.7,
            p_community: 0.2,
            burst_prob: 0.1,
            zipf: 1.0,
            mean_gap: 10.0,
            d_e: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 {
            return Err(Error::Config("users and items must be >= 1".into()));
        }
        if self.communities == 0 || self.communities > self.items {
            return Err(Error::Config(format!(
                "communities must be in 1..={} (one item per community at least)",
                self.items
            )));
        }
        let probs = [self.p_favorite, self.p_community, self.burst_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.p_favorite + self.p_community > 1.0 {
            return Err(Error::Config("probabilities must lie in [0,1] and p_favorite + p_community <= 1".into()));
        }
        if !(self.mean_gap > 0.0) || !(self.zipf >= 0.0) {
            return Err(Error::Config("mean_gap must be > 0 and zipf >= 0".into()));
        }
        Ok(())
    }
}

fn zipf_weights(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Ranks are shuffled so popularity is not tied to the node id.
    let mut ranks: Vec<usize> = (0..n).collect();
    for a in (1..n).rev() {
        let b = rng.gen_range(0..=a);
        ranks.swap(a, b);
    }
    ranks.into_iter().map(|r| 1.0 / ((r + 1) as f64).powf(s)).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<TemporalGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let activity = zipf_weights(cfg.users, cfg.zipf, &mut rng);
    let popularity = zipf_weights(cfg.items, cfg.zipf, &mut rng);
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::Config(format!("weights: {e}")));
    let pick_user = weighted(&activity)?;
    let pick_item = weighted(&popularity)?;

    let community_items: Vec<Vec<usize>> =
        (0..cfg.communities).map(|c| (0..cfg.items).filter(|it| it % cfg.communities == c).collect()).collect();
    let community_pickers = community_items
        .iter()
        .map(|items| weighted(&items.iter().map(|&it| popularity[it]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let favorites: Vec<Vec<usize>> = (0..cfg.users)
        .map(|u| {
            let c = u % cfg.communities;
            (0..cfg.favorites.max(1)).map(|_| community_items[c][community_pickers[c].sample(&mut rng)]).collect()
        })
        .collect();

    let mut events = Vec::with_capacity(cfg.events);
    let mut t = 0.0;
    let mut prev_user = None;
    for _ in 0..cfg.events {
        let burst = prev_user.is_some() && rng.gen::<f64>() < cfg.burst_prob;
        let gap_mean = if burst { cfg.mean_gap * 0.01 } else { cfg.mean_gap };
        t += -gap_mean * (1.0 - rng.gen::<f64>()).ln();
        let u = match prev_user {
            Some(u) if burst => u,
            _ => pick_user.sample(&mut rng),
        };
        let c = u % cfg.communities;
        let roll = rng.gen::<f64>();
        let item = if roll < cfg.p_favorite {
            favorites[u][rng.gen_range(0..favorites[u].len())]
        } else if roll < cfg.p_favorite + cfg.p_community {
            community_items[c][community_pickers[c].sample(&mut rng)]
        } else {
            pick_item.sample(&mut rng)
        };
        let mut feat: Vec<f64> = (0..cfg.d_e).map(|_| 0.1 * (rng.gen::<f64>() - 0.5)).collect();
        if cfg.d_e > 0 {
            feat[item % cfg.communities % cfg.d_e] += 1.0;
        }
        events.push(Event { src: u, dst: cfg.users + item, t, feat });
        prev_user = Some(u);
    }
    TemporalGraph::from_events(events, &GraphMeta::new(cfg.users + cfg.items, Some(cfg.users), cfg.d_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bipartite() {
        let cfg = SynthConfig { events: 500, d_e: 4, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a.d_e(), 4);
        for e in 0..a.len() {
            assert_eq!(a.event(e), b.event(e));
            assert!(a.src(e) < 800 && a.dst(e) >= 800);
        }
    }

    #[test]
    fn bursts_repeat_users() {
        let quiet = generate(&SynthConfig { burst_prob: 0.0, events: 2000, ..SynthConfig::default() }).unwrap();
        let bursty = generate(&SynthConfig { burst_prob: 0.5, events: 2000, ..SynthConfig::default() }).unwrap();
        let repeats = |g: &TemporalGraph| (1..g.len()).filter(|&e| g.src(e) == g.src(e - 1)).count();
        assert!(repeats(&bursty) > 3 * repeats(&quiet));
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(generate(&SynthConfig { p_favorite: 0.9, p_community: 0.2, ..SynthConfig::default() }).is_err());
        assert!(generate(&SynthConfig { communities: 0, ..SynthConfig::default() }).is_err());
    }
}

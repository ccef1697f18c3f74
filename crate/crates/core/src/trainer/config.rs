//! Run configuration and its flat `key=value` text form.

use crate::error::{Error, Result};
use crate::nn::ModelDims;
use crate::parallel::planner::{plan_config, TrainConfig};
use crate::tgraph::TemporalGraph;

/// Inputs for choosing `(i, j, k)` automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerInputs {
    pub max_safe_batch: usize,
    pub saturation_batch: usize,
    pub mem_copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub d_mem: usize,
    pub d_time: usize,
    /// Width of the co-trained static node embedding; 0 disables it.
    pub d_static: usize,
    pub n_neighbors: usize,
    /// Prepared negative groups per batch.
    pub num_neg_groups: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub eval_negatives: usize,
    pub evaluate: bool,
    /// Snapshot each group's memory at every segment end.
    pub record_snapshots: bool,
    /// Longest a trainer or daemon waits on its peer before giving up.
    pub timeout_s: f64,
    pub planner: Option<PlannerInputs>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            d_mem: 100,
            d_time: 100,
            d_static: 100,
            n_neighbors: 10,
            num_neg_groups: 10,
            train_frac: 0.7,
            val_frac: 0.15,
            eval_negatives: 49,
            evaluate: true,
            record_snapshots: false,
            timeout_s: 600.0,
            planner: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "i",
    "j",
    "k",
    "p",
    "q",
    "local_batch",
    "lr_base",
    "epochs",
    "seed",
    "d_mem",
    "d_time",
    "d_static",
    "n_neighbors",
    "num_neg_groups",
    "train_frac",
    "val_frac",
    "eval_negatives",
    "evaluate",
    "timeout_s",
    "max_safe_batch",
    "saturation_batch",
    "mem_copies",
];

impl RunConfig {
    pub fn dims(&self, g: &TemporalGraph) -> ModelDims {
        ModelDims {
            num_nodes: g.num_nodes(),
            d_mem: self.d_mem,
            d_time: self.d_time,
            d_edge: g.d_e(),
            d_static: self.d_static,
        }
    }

    /// Evaluation seed, fixed per run seed.
    pub fn eval_seed(&self) -> u64 {
        crate::rng::mix_seed(self.train.seed, 0x6576_616c)
    }

    /// Sets one key. Planner keys only record inputs; see [`RunConfig::apply_planner`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::Config(format!("{key} = {v:?}: expected {what}"));
        let int = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let float = || v.parse::<f64>().map_err(|_| bad("a number"));
        let t = &mut self.train;
        match key {
            "i" => t.i = int()?,
            "j" => t.j = int()?,
            "k" => t.k = int()?,
            "p" => t.p = int()?,
            "q" => t.q = int()?,
            "local_batch" => t.local_batch = int()?,
            "lr_base" => t.lr_base = float()?,
            "epochs" => t.epochs = int()?,
            "seed" => t.seed = v.parse::<u64>().map_err(|_| bad("an unsigned integer"))?,
            "d_mem" => self.d_mem = int()?,
            "d_time" => self.d_time = int()?,
            "d_static" => self.d_static = int()?,
            "n_neighbors" => self.n_neighbors = int()?,
            "num_neg_groups" => self.num_neg_groups = int()?,
            "train_frac" => self.train_frac = float()?,
            "val_frac" => self.val_frac = float()?,
            "eval_negatives" => self.eval_negatives = int()?,
            "evaluate" => {
                self.evaluate = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(bad("true or false")),
                }
            }
            "timeout_s" => self.timeout_s = float()?,
            "max_safe_batch" | "saturation_batch" | "mem_copies" => {
                let n = int()?;
                let p = self.planner.get_or_insert(PlannerInputs { max_safe_batch: 0, saturation_batch: 0, mem_copies: 0 });
                match key {
                    "max_safe_batch" => p.max_safe_batch = n,
                    "saturation_batch" => p.saturation_batch = n,
                    _ => p.mem_copies = n,
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(cfg)
    }

    /// Replaces `(i, j, k)` by the planner's choice when planner inputs are set.
    pub fn apply_planner(&mut self) -> Result<()> {
        if let Some(pl) = self.planner {
            let (i, j, k) = plan_config(self.train.p, self.train.q, pl.max_safe_batch, pl.saturation_batch, pl.mem_copies)?;
            self.train.i = i;
            self.train.j = j;
            self.train.k = k;
        }
        Ok(())
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.d_mem == 0 || self.d_time == 0 {
            return Err(Error::Config("d_mem and d_time must be >= 1".into()));
        }
        if self.num_neg_groups == 0 {
            return Err(Error::Config("num_neg_groups must be >= 1".into()));
        }
        if self.train.j > self.num_neg_groups {
            return Err(Error::Config(format!(
                "epoch parallelism j = {} needs at least as many negative groups (have {})",
                self.train.j, self.num_neg_groups
            )));
        }
        if self.evaluate && self.eval_negatives == 0 {
            return Err(Error::Config("eval_negatives must be >= 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config("timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = format!(
            "i={}\nj={}\nk={}\np={}\nq={}\nlocal_batch={}\nlr_base={}\nepochs={}\nseed={}\n",
            t.i, t.j, t.k, t.p, t.q, t.local_batch, t.lr_base, t.epochs, t.seed
        );
        s += &format!(
            "d_mem={}\nd_time={}\nd_static={}\nn_neighbors={}\nnum_neg_groups={}\ntrain_frac={}\nval_frac={}\neval_negatives={}\nevaluate={}\ntimeout_s={}\n",
            self.d_mem,
            self.d_time,
            self.d_static,
            self.n_neighbors,
            self.num_neg_groups,
            self.train_frac,
            self.val_frac,
            self.eval_negatives,
            self.evaluate,
            self.timeout_s
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let cfg = RunConfig::parse("# comment\ni = 2\nq=2 # trailing\nlocal_batch=50\nevaluate=false\n").unwrap();
        assert_eq!(cfg.train.i, 2);
        assert_eq!(cfg.train.q, 2);
        assert!(!cfg.evaluate);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("i=1\nbogus=3\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
        assert!(RunConfig::parse("epochs=x").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn planner_inputs_drive_ijk() {
        let mut cfg =
            RunConfig::parse("p=4\nq=8\nmax_safe_batch=3200\nsaturation_batch=1600\nmem_copies=2\n").unwrap();
        cfg.apply_planner().unwrap();
        assert_eq!((cfg.train.i, cfg.train.j, cfg.train.k), (2, 2, 8));
        cfg.validate().unwrap();
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use mtgnn::memstore::{load_oplog, staleness_report, write_oplog, NodeMemoryState};
use mtgnn::nn::checkpoint::save_checkpoint;
use mtgnn::nn::ModelParams;
use mtgnn::parallel::{build_assignment, format_assignment, plan_config};
use mtgnn::synth::{generate, SynthConfig};
use mtgnn::tgraph::{
    captured_events_analysis, captured_summary, chronological_split, load_dataset, make_batches, write_dataset,
    TemporalGraph,
};
use mtgnn::trainer::{batch_nodes, memory_step, metrics_csv, run_training, RunConfig};
use mtgnn::Error;

#[derive(Parser)]
#[command(name = "mtgnn", version, about = "Train memory-based temporal GNNs with parallel node-memory schedules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints and optional audit files.
    Train(TrainArgs),
    /// Captured-event and information-loss analysis over batch sizes.
    Analyze(AnalyzeArgs),
    /// Check a memory op-log against the serialization grammar.
    ValidateOplog(ValidateArgs),
    /// Generate a synthetic bipartite interaction stream.
    Gen(GenArgs),
    /// Choose (i, j, k) from device counts and batch capacities.
    Plan(PlanArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV; its `.meta` sidecar must sit next to it.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the chosen (i, j, k) and schedule size, then exit.
    #[arg(long)]
    plan_only: bool,
    /// Write the trainer assignment to `assignment.txt`.
    #[arg(long)]
    dump_schedule: bool,
    /// Write each memory group's op-log to `oplog_g<group>.txt`.
    #[arg(long)]
    oplog: bool,
    /// Write per-batch staleness and information loss to `staleness.csv`.
    #[arg(long)]
    staleness: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 60, 600, 6000])]
    batch_sizes: Vec<usize>,
    /// Per-node CSV (nodes by degree, high to low); stdout gets the aggregate.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    oplog: PathBuf,
    #[arg(long)]
    i: usize,
    #[arg(long)]
    j: usize,
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset CSV; the sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Total nodes; 80% become users, the rest items.
    #[arg(long, default_value_t = 1000)]
    nodes: usize,
    #[arg(long, default_value_t = 5000)]
    events: usize,
    #[arg(long, default_value_t = 0.1)]
    burst_prob: f64,
    #[arg(long, default_value_t = 0.7)]
    p_favorite: f64,
    #[arg(long, default_value_t = 0.2)]
    p_community: f64,
    #[arg(long, default_value_t = 0)]
    d_e: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlanArgs {
    /// Machines.
    #[arg(long)]
    p: usize,
    /// Devices per machine.
    #[arg(long)]
    q: usize,
    #[arg(long)]
    max_safe_batch: usize,
    #[arg(long)]
    saturation_batch: usize,
    #[arg(long)]
    mem_copies: usize,
}

/// Errors that should exit with the configuration status.
fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config(_) | Error::Planner(_))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Analyze(a) => analyze(a),
        Command::ValidateOplog(a) => validate(a),
        Command::Gen(a) => gen(a),
        Command::Plan(a) => plan(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(args: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (key, value) =
            kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(key.trim(), value)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.apply_planner()?;
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&args)?;
    let g = load_dataset(&args.data)?;
    let split = chronological_split(&g, cfg.train_frac, cfg.val_frac)?;
    let t = &cfg.train;
    let n_batches = split.train.len().div_ceil(t.global_batch());
    println!(
        "(i, j, k) = ({}, {}, {}); {} trainers, global batch {}, lr {}, {} training batches",
        t.i,
        t.j,
        t.k,
        t.trainers(),
        t.global_batch(),
        t.effective_lr(),
        n_batches
    );
    if args.plan_only {
        return Ok(ExitCode::SUCCESS);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("config.txt"), cfg.to_text())?;
    if args.dump_schedule {
        let entries = build_assignment(t, n_batches, cfg.num_neg_groups)?;
        write(&args.out.join("assignment.txt"), format_assignment(&entries))?;
    }

    let out = run_training(&cfg, &g)?;
    write(&args.out.join("metrics.csv"), metrics_csv(&out.metrics))?;
    save_checkpoint(&args.out.join("model.ckpt"), &out.params)?;
    if let Some((mrr, params)) = &out.best {
        save_checkpoint(&args.out.join("best.ckpt"), params)?;
        println!("best val MRR {mrr:.4}");
    }
    if args.oplog {
        for (group, report) in out.groups.iter().enumerate() {
            write_oplog(&args.out.join(format!("oplog_g{group}.txt")), &report.oplog)?;
        }
    }
    if args.staleness {
        write(&args.out.join("staleness.csv"), staleness_csv(&cfg, &g, &out.params)?)?;
    }
    if !out.replicas_consistent {
        return Err(anyhow!("parameter replicas diverged during training"));
    }
    if let Some(last) = out.metrics.last() {
        let mrr = last.val_mrr.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        println!("{} iterations, {} events traversed, final loss {:.4}, val MRR {mrr}", last.iter, last.traversed, last.loss);
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Replays the training range in local-batch steps with the trained weights
/// and reports, per batch, how stale the roots' memory is and how many mails
/// COMB drops.
fn staleness_csv(cfg: &RunConfig, g: &TemporalGraph, params: &ModelParams) -> anyhow::Result<String> {
    let split = chronological_split(g, cfg.train_frac, cfg.val_frac)?;
    let mut state = NodeMemoryState::new(g.num_nodes(), cfg.d_mem, 2 * cfg.d_mem + g.d_e())?;
    let mut csv = String::from("batch,first_event,events,staleness,info_loss\n");
    for b in make_batches(split.train, cfg.train.local_batch)? {
        let read = state.read(&batch_nodes(g, b.range.clone(), &[], cfg.n_neighbors));
        let m = staleness_report(g, b.range.clone(), &read)?;
        csv.push_str(&format!("{},{},{},{},{}\n", b.index, b.range.start, b.len(), m.staleness, m.info_loss));
        state.write(&memory_step(params, g, b.range, &read)?)?;
    }
    Ok(csv)
}

fn analyze(args: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let g = load_dataset(&args.data)?;
    println!("batch_size,total_events,total_captured,info_loss");
    let mut per_size = Vec::new();
    for &bs in &args.batch_sizes {
        let s = captured_summary(&g, bs)?;
        println!("{},{},{},{}", s.batch_size, s.total_events, s.total_captured, s.info_loss);
        per_size.push(captured_events_analysis(&g, bs)?);
    }
    if let Some(path) = &args.out {
        let degrees = g.degrees();
        let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
        nodes.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
        let mut csv = String::from("node,degree");
        for bs in &args.batch_sizes {
            csv.push_str(&format!(",captured_{bs}"));
        }
        csv.push('\n');
        for v in nodes {
            csv.push_str(&format!("{v},{}", degrees[v]));
            for counts in &per_size {
                csv.push_str(&format!(",{}", counts[v]));
            }
            csv.push('\n');
        }
        write(path, csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let records = load_oplog(&args.oplog)?;
    match mtgnn::memstore::validate_oplog(&records, args.i, args.j) {
        Ok(()) => {
            println!("ok: {} ops follow the (i={}, j={}) grammar", records.len(), args.i, args.j);
            Ok(ExitCode::SUCCESS)
        }
        Err(v) => {
            println!("violation at line {}: {}", v.line, v.message);
            Ok(ExitCode::from(1))
        }
    }
}

fn gen(args: GenArgs) -> anyhow::Result<ExitCode> {
    if args.nodes < 2 {
        return Err(Error::Config("gen needs at least 2 nodes".into()).into());
    }
    let items = (args.nodes / 5).max(1);
    let cfg = SynthConfig {
        users: args.nodes - items,
        items,
        events: args.events,
        communities: items.min(10),
        p_favorite: args.p_favorite,
        p_community: args.p_community,
        burst_prob: args.burst_prob,
        d_e: args.d_e,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let g = generate(&cfg)?;
    write_dataset(&args.out, &g)?;
    println!("wrote {} events over {} nodes to {}", g.len(), g.num_nodes(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn plan(args: PlanArgs) -> anyhow::Result<ExitCode> {
    let (i, j, k) = plan_config(args.p, args.q, args.max_safe_batch, args.saturation_batch, args.mem_copies)?;
    println!("i={i} j={j} k={k}");
    Ok(ExitCode::SUCCESS)
}

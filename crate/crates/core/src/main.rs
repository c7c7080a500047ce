use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rejoin_lab::bench::{self, Method, PlanTimeConfig};
use rejoin_lab::catalog::{generate_catalog, load_catalog, Catalog, CatalogSpec};
use rejoin_lab::env::{EnvConfig, RewardMode, DEFAULT_N_MAX};
use rejoin_lab::jointree::cost;
use rejoin_lab::nn::{Checkpoint, DenseNet, DEFAULT_HIDDEN};
use rejoin_lab::query::{generate_mixed_workload, parse_query, parse_workload, workload_to_text, JoinQuery, Shape};
use rejoin_lab::rl::{self, MetricRecord, TrainConfig};
use rejoin_lab::{Error, Result};

const SUBCOMMANDS: [&str; 7] = [
    "gen-catalog",
    "gen-workload",
    "train",
    "eval",
    "plan",
    "bench-plan-time",
    "convergence",
];

#[derive(Parser, Debug)]
#[command(name = "rejoin-lab", version, about = "Learned join-order enumeration lab")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML file of flag values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic catalog as JSON.
    #[command(args_override_self = true)]
    GenCatalog(GenCatalogArgs),
    /// Generate a workload of connected join queries.
    #[command(args_override_self = true)]
    GenWorkload(GenWorkloadArgs),
    /// Train a policy; writes metrics.jsonl, model.ckpt and the workload split.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Compare a trained policy with the classical enumerators.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Plan one query and print the tree with its cost breakdown.
    #[command(args_override_self = true)]
    Plan(PlanArgs),
    /// Mean planning time per method grouped by query size.
    #[command(args_override_self = true)]
    BenchPlanTime(BenchArgs),
    /// Sliding-window mean cost ratio from a metrics stream.
    #[command(args_override_self = true)]
    Convergence(ConvergenceArgs),
}

#[derive(Args, Debug)]
struct GenCatalogArgs {
    #[arg(long, default_value_t = 10)]
    relations: usize,
    #[arg(long, default_value_t = 500)]
    min_rows: u64,
    #[arg(long, default_value_t = 10_000)]
    max_rows: u64,
    #[arg(long, default_value_t = 2)]
    min_attrs: usize,
    #[arg(long, default_value_t = 4)]
    max_attrs: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenWorkloadArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "chain,star,random")]
    shapes: Vec<Shape>,
    #[arg(long, default_value_t = 4)]
    min_q: usize,
    #[arg(long, default_value_t = 8)]
    max_q: usize,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, default_value_t = 5000)]
    episodes: usize,
    /// Fraction of the workload held out from training.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    n_max: usize,
    #[arg(long, default_value_t = RewardMode::Normalized)]
    reward_mode: RewardMode,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().clip_eps)]
    clip_eps: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs_per_update)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().episodes_per_batch)]
    batch_episodes: usize,
    /// Steps per gradient step; 0 for whole-batch steps.
    #[arg(long, default_value_t = TrainConfig::default().minibatch_size)]
    minibatch: usize,
    #[arg(long, default_value_t = TrainConfig::default().entropy_coef)]
    entropy_coef: f64,
    #[arg(long, default_value_t = TrainConfig::default().value_coef)]
    value_coef: f64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN)]
    hidden: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    quickpick_k: usize,
    /// Directory for report.json, report.csv and timing.csv; summary to
    /// stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Trained model; an untrained network seeded by --seed when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    n_max: usize,
    /// The SQL text, or `-` to read it from stdin.
    query: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    n_max: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    quickpick_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value_t = 500)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Finds the `--config` path in raw arguments.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn toml_to_arg(value: &toml::Value) -> Result<Option<String>> {
    Ok(Some(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(true) => return Ok(None),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| toml_to_arg(v)?.ok_or_else(|| Error::Config("nested flag value".into())))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        other => return Err(Error::Config(format!("unsupported config value {other}"))),
    }))
}

/// Splices config-file values in as flags right after the subcommand name,
/// so that flags given on the command line (which come later) win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("config {path}: {e}")))?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    let mut push = |key: &str, value: &toml::Value| -> Result<()> {
        if key == "config" {
            return Ok(());
        }
        if value == &toml::Value::Boolean(false) {
            return Ok(());
        }
        injected.push(format!("--{}", key.replace('_', "-")));
        if let Some(v) = toml_to_arg(value)? {
            injected.push(v);
        }
        Ok(())
    };
    for (key, value) in &table {
        if !value.is_table() {
            push(key, value)?;
        }
    }
    if let Some(toml::Value::Table(section)) = table.get(&args[pos]) {
        for (key, value) in section {
            push(key, value)?;
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn read_catalog(path: &Path) -> Result<Catalog> {
    load_catalog(&read(path)?)
}

fn read_workload(path: &Path, catalog: &Catalog) -> Result<Vec<JoinQuery>> {
    parse_workload(&read(path)?, catalog)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_net(path: &Path, catalog: &Catalog) -> Result<(DenseNet, EnvConfig)> {
    let ck = Checkpoint::load(path)?;
    let env = EnvConfig {
        n_max: ck.n_max,
        ..EnvConfig::default()
    };
    env.validate()?;
    ck.check_compatible(&catalog.fingerprint(), env.state_dim(catalog), ck.n_max)?;
    Ok((ck.net, env))
}

fn net_or_untrained(
    checkpoint: Option<&Path>,
    catalog: &Catalog,
    n_max: usize,
    seed: u64,
) -> Result<(DenseNet, EnvConfig)> {
    match checkpoint {
        Some(p) => load_net(p, catalog),
        None => {
            let env = EnvConfig {
                n_max,
                ..EnvConfig::default()
            };
            env.validate()?;
            let net = DenseNet::new(env.state_dim(catalog), &DEFAULT_HIDDEN, env.num_action_slots(), seed);
            Ok((net, env))
        }
    }
}

fn gen_catalog(a: &GenCatalogArgs, seed: u64) -> Result<()> {
    let spec = CatalogSpec {
        n_relations: a.relations,
        row_range: (a.min_rows, a.max_rows),
        attrs_per_relation: (a.min_attrs, a.max_attrs),
    };
    let catalog = generate_catalog(seed, spec)?;
    emit(a.out.as_deref(), &format!("{}\n", catalog.to_json()))
}

fn gen_workload(a: &GenWorkloadArgs, seed: u64) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let w = generate_mixed_workload(&catalog, seed, &a.shapes, (a.min_q, a.max_q), a.count)?;
    emit(a.out.as_deref(), &workload_to_text(&w))
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let workload = read_workload(&a.workload, &catalog)?;
    let env = EnvConfig {
        n_max: a.n_max,
        reward_mode: a.reward_mode,
    };
    let config = TrainConfig {
        clip_eps: a.clip_eps,
        lr: a.lr,
        epochs_per_update: a.epochs,
        episodes_per_batch: a.batch_episodes,
        minibatch_size: a.minibatch,
        entropy_coef: a.entropy_coef,
        value_coef: a.value_coef,
        total_episodes: a.episodes,
        hidden: a.hidden.clone(),
        seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    env.validate()?;
    let (train_set, held_out) = bench::split_workload(&workload, a.holdout, seed)?;
    for q in &workload {
        env.check_fits(q)?;
    }
    if train_set.is_empty() {
        return Err(Error::Empty("training workload"));
    }

    fs::create_dir_all(&a.out)?;
    let mut metrics = BufWriter::new(fs::File::create(a.out.join("metrics.jsonl"))?);
    let mut sink = |r: &MetricRecord| -> Result<()> {
        serde_json::to_writer(&mut metrics, r)?;
        metrics.write_all(b"\n")?;
        Ok(())
    };
    let outcome = rl::train(&catalog, &train_set, &env, &config, &mut sink)?;
    metrics.flush()?;

    let mut timing = String::new();
    for (i, ms) in outcome.metrics.update_wall_ms.iter().enumerate() {
        timing.push_str(&format!("{{\"update\":{},\"wall_ms\":{ms}}}\n", i + 1));
    }
    fs::write(a.out.join("timing.jsonl"), timing)?;
    Checkpoint::new(&outcome.net, &outcome.optimizer, env.n_max, &catalog.fingerprint())
        .save(&a.out.join("model.ckpt"))?;
    fs::write(a.out.join("train.sql"), workload_to_text(&train_set))?;
    fs::write(a.out.join("heldout.sql"), workload_to_text(&held_out))?;

    let ratios: Vec<f64> = outcome.metrics.episodes.iter().map(|e| e.ratio_vs_greedy).collect();
    if !ratios.is_empty() {
        let tail = &ratios[ratios.len().saturating_sub(500)..];
        println!(
            "trained {} episodes ({} updates); mean cost ratio vs greedy over the last {}: {}",
            ratios.len(),
            outcome.metrics.updates.len(),
            tail.len(),
            bench::mean(tail)
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let workload = read_workload(&a.workload, &catalog)?;
    let (net, env) = load_net(&a.checkpoint, &catalog)?;
    let (report, timings) = bench::evaluate(&catalog, &workload, &net, &env, a.quickpick_k, seed)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), report.to_json())?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        fs::write(dir.join("timing.csv"), timings.to_csv())?;
    }
    println!("method,median_vs_greedy,mean_vs_greedy,median_vs_dp,mean_vs_dp");
    for m in Method::ALL {
        let s = report.summary_for(m);
        println!(
            "{m},{},{},{},{}",
            s.median_vs_greedy, s.mean_vs_greedy, s.median_vs_dp, s.mean_vs_dp
        );
    }
    Ok(())
}

fn plan(a: &PlanArgs, seed: u64) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let sql = if a.query == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        a.query.clone()
    };
    let query = parse_query(&sql, &catalog)?;
    let (net, env) = net_or_untrained(a.checkpoint.as_deref(), &catalog, a.n_max, seed)?;
    let traj = rl::infer_plan(&catalog, &query, env.n_max, &net)?;
    let report = cost(&traj.final_tree, &query, &catalog)?;
    println!("{}", traj.final_tree);
    println!("total_cost {}", report.total_cost);
    for (node, card) in &report.per_node_cardinality {
        println!("  {node} rows {card}");
    }
    Ok(())
}

fn bench_plan_time(a: &BenchArgs, seed: u64) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let workload = read_workload(&a.workload, &catalog)?;
    let (net, env) = net_or_untrained(a.checkpoint.as_deref(), &catalog, a.n_max, seed)?;
    let config = PlanTimeConfig {
        repetitions: a.reps,
        quickpick_samples: a.quickpick_k,
        seed,
    };
    let rows = bench::bench_plan_time(&catalog, &workload, &net, &env, &config)?;
    emit(a.out.as_deref(), &bench::plan_time_csv(&rows))
}

fn convergence(a: &ConvergenceArgs) -> Result<()> {
    let ratios = bench::episode_ratios(&read(&a.metrics)?)?;
    let rows = bench::convergence_report(&ratios, a.window)?;
    emit(a.out.as_deref(), &bench::convergence_csv(&rows))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCatalog(a) => gen_catalog(a, cli.seed),
        Command::GenWorkload(a) => gen_workload(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Plan(a) => plan(a, cli.seed),
        Command::BenchPlanTime(a) => bench_plan_time(a, cli.seed),
        Command::Convergence(a) => convergence(a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse { .. } | Error::Syntax { .. } | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

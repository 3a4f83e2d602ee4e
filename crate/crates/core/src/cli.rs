//! Command-line front end. `run` returns the process exit code:
//! 0 success, 1 usage error, 2 data error, 3 check failure, 4 divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_off, load_xyz};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, normalize, PointCloud, StartRule};
use crate::harness::bench::{run_bench, BenchConfig, MachineInfo};
use crate::harness::check::{run_checks, CheckOptions};
use crate::harness::runs::{ablate_pe, robustness, DataConfig, ExperimentConfig, NoiseConfig, RunCache};
use crate::harness::MetricsSink;
use crate::nn::{checkpoint, evaluate, prepare_dataset, train, Model, ModelConfig, TrainConfig, TrainReport};
use crate::perturb::{ApplyTo, PerturbKind, PerturbSpec};
use crate::serialize::{adjacent_distances, CandidateRule, OrderingKind, ProximityThreshold};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pointseq", version, about = "Point-cloud serialization for selective state-space models")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write line-delimited JSON metrics here.
    #[arg(long, global = true, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
    /// TOML config; explicit flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the processing order of the FPS centers of one cloud.
    Reorder(ReorderArgs),
    /// Train a classifier and report test accuracy.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on the test split.
    Eval(EvalArgs),
    /// Positional-embedding ablation over two orderings.
    AblatePe(ExperimentArgs),
    /// Accuracy under noise applied to train, test or both.
    Robustness(ExperimentArgs),
    /// Time S6 and attention across sequence lengths.
    Bench(BenchArgs),
    /// Run the invariant suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    Nimba,
    AxisTriple,
    Ysort,
    Identity,
}

impl From<OrderingArg> for OrderingKind {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Nimba => OrderingKind::Nimba,
            OrderingArg::AxisTriple => OrderingKind::AxisTriple,
            OrderingArg::Ysort => OrderingKind::Ysort,
            OrderingArg::Identity => OrderingKind::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbArg {
    Rotation,
    Rhf,
    Jitter,
    Rid,
    All,
}

impl From<PerturbArg> for PerturbKind {
    fn from(p: PerturbArg) -> Self {
        match p {
            PerturbArg::Rotation => PerturbKind::Rotation,
            PerturbArg::Rhf => PerturbKind::Rhf,
            PerturbArg::Jitter => PerturbKind::Jitter,
            PerturbArg::Rid => PerturbKind::Rid,
            PerturbArg::All => PerturbKind::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApplyArg {
    Train,
    Test,
    Both,
}

impl From<ApplyArg> for ApplyTo {
    fn from(a: ApplyArg) -> Self {
        match a {
            ApplyArg::Train => ApplyTo::Train,
            ApplyArg::Test => ApplyTo::Test,
            ApplyArg::Both => ApplyTo::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    First,
    Nearest,
}

#[derive(Debug, Args)]
pub struct ReorderArgs {
    /// Input cloud (.xyz, or .off sampled to --points).
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "nimba")]
    pub ordering: OrderingArg,
    /// Proximity threshold.
    #[arg(long, short = 'r', default_value_t = crate::serialize::DEFAULT_PROXIMITY)]
    pub r: f64,
    #[arg(long, value_enum, default_value = "first")]
    pub rule: RuleArg,
    /// Number of FPS centers.
    #[arg(long, default_value_t = 32)]
    pub n_c: usize,
    /// Points sampled from an OFF mesh.
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Skip centering and unit-sphere scaling.
    #[arg(long)]
    pub raw: bool,
    /// JSON output path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub ordering: Option<OrderingArg>,
    #[arg(long, value_enum)]
    pub pe: Option<Switch>,
    /// Model preset: desk, modelnet40, scanobjectnn, toy.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dataset root laid out as <class>/<split>/<item>.{off,xyz}.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct NoiseFlags {
    #[arg(long, value_enum)]
    pub perturb: Option<PerturbArg>,
    #[arg(long, value_enum)]
    pub apply_to: Option<ApplyArg>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Point dropout probability.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Save the trained model here.
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Comma-separated seeds; defaults to three consecutive seeds from --seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub n_c: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Flip the sign of the S6 decay rates used by the suite (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt_a_log: bool,
}

/// Contents of a `--config` file. Every table is optional; missing fields
/// keep their defaults and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub metrics_out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub bench: Option<BenchConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            data: self.data.clone(),
            noise: self.noise,
            ..ExperimentConfig::default()
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        cfg
    }
}

/// Entry point used by the binary; never panics on bad input.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Diverged { .. } | Error::NumericalOverflow { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

struct Ctx {
    seed: u64,
    file: FileConfig,
    sink: MetricsSink,
}

#[derive(Serialize)]
struct ConfigRecord<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    config: &'a T,
}

fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let metrics = cli.metrics_out.clone().or_else(|| file.metrics_out.clone());
    let sink = MetricsSink::to_path(metrics.as_deref())?;
    let mut ctx = Ctx { seed, file, sink };
    match cli.command {
        Command::Reorder(a) => cmd_reorder(&mut ctx, &a),
        Command::Train(a) => cmd_train(&mut ctx, &a),
        Command::Eval(a) => cmd_eval(&mut ctx, &a),
        Command::AblatePe(a) => cmd_ablate(&mut ctx, &a),
        Command::Robustness(a) => cmd_robustness(&mut ctx, &a),
        Command::Bench(a) => cmd_bench(&mut ctx, &a),
        Command::Check(a) => cmd_check(&mut ctx, &a),
    }
}

fn load_cloud(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("off") => load_off(path, points, seed),
        _ => load_xyz(path),
    }
}

#[derive(Debug, Serialize)]
struct ReorderOutput {
    ordering: OrderingKind,
    r: f64,
    n_c: usize,
    /// Positions into `centers`, in processing order.
    order: Vec<usize>,
    /// Indices of the processed centers in the input cloud.
    point_indices: Vec<usize>,
    centers: Vec<[f64; 3]>,
    adjacent_distances: Vec<f64>,
    fraction_below_r: f64,
}

fn cmd_reorder(ctx: &mut Ctx, a: &ReorderArgs) -> Result<i32> {
    let r = ProximityThreshold::new(a.r)?;
    let mut cloud = load_cloud(&a.input, a.points, ctx.seed)?;
    if !a.raw {
        cloud = normalize(&cloud)?;
    }
    let (centers, idx) = farthest_point_sampling(&cloud, a.n_c, StartRule::Index(0))?;
    let rule = match a.rule {
        RuleArg::First => CandidateRule::First,
        RuleArg::Nearest => CandidateRule::Nearest,
    };
    let ordering = OrderingKind::from(a.ordering);
    let s = ordering.serialize(&centers, r, rule)?;
    let dists = adjacent_distances(&centers, &s);
    let below = dists.iter().filter(|&&d| d < a.r).count();
    let out = ReorderOutput {
        ordering,
        r: a.r,
        n_c: a.n_c,
        point_indices: s.order.iter().map(|&i| idx[i]).collect(),
        order: s.order,
        centers: centers.iter().map(|c| c.to_array()).collect(),
        fraction_below_r: if dists.is_empty() { 1.0 } else { below as f64 / dists.len() as f64 },
        adjacent_distances: dists,
    };
    let json = serde_json::to_string_pretty(&out).expect("serializable");
    match &a.output {
        Some(p) => fs::write(p, json + "\n").map_err(|e| Error::io(p, e))?,
        None => println!("{json}"),
    }
    ctx.sink.emit("reorder", &out)?;
    Ok(EXIT_OK)
}

/// Flag → config file → built-in default, field by field.
fn experiment_config(ctx: &Ctx, m: &ModelFlags, n: &NoiseFlags) -> Result<ExperimentConfig> {
    let mut cfg = ctx.file.experiment();
    if let Some(p) = &m.preset {
        cfg.model = ModelConfig::preset(p)?;
        cfg.train = TrainConfig::preset(p).unwrap_or(cfg.train);
    }
    if let Some(o) = m.ordering {
        cfg.model.ordering = o.into();
    }
    if let Some(pe) = m.pe {
        cfg.model.use_positional_embedding = pe == Switch::On;
    }
    if let Some(e) = m.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = m.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = m.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(d) = &m.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(v) = n.sigma {
        cfg.noise.sigma = v;
    }
    if let Some(v) = n.clip {
        cfg.noise.clip = v;
    }
    if let Some(v) = n.p {
        cfg.noise.p = v;
    }
    cfg.train.seed = ctx.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn noise_spec(cfg: &ExperimentConfig, n: &NoiseFlags, seed: u64) -> Result<Option<PerturbSpec>> {
    let Some(kind) = n.perturb else {
        if n.apply_to.is_some() {
            return Err(Error::invalid("--apply-to needs --perturb"));
        }
        return Ok(None);
    };
    let apply_to = n.apply_to.map_or(ApplyTo::Both, ApplyTo::from);
    let spec = cfg.noise.spec(kind.into(), apply_to, seed);
    spec.validate()?;
    Ok(Some(spec))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    ordering: OrderingKind,
    pe: bool,
    seq_len: usize,
    train_items: usize,
    test_items: usize,
    initial_test_acc: Option<f64>,
    initial_test_loss: Option<f64>,
    test_acc: Option<f64>,
    test_loss: Option<f64>,
    perturb: Option<&'a PerturbSpec>,
}

fn summary<'a>(
    model: &Model,
    report: &TrainReport,
    train_n: usize,
    test_n: usize,
    perturb: Option<&'a PerturbSpec>,
) -> TrainSummary<'a> {
    TrainSummary {
        ordering: model.config.ordering,
        pe: model.config.use_positional_embedding,
        seq_len: model.config.seq_len(),
        train_items: train_n,
        test_items: test_n,
        initial_test_acc: report.initial_test.map(|e| e.accuracy),
        initial_test_loss: report.initial_test.map(|e| e.loss),
        test_acc: report.final_test.map(|e| e.accuracy),
        test_loss: report.final_test.map(|e| e.loss),
        perturb,
    }
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<i32> {
    let cfg = experiment_config(ctx, &a.model, &a.noise)?;
    let spec = noise_spec(&cfg, &a.noise, ctx.seed)?;
    ctx.sink.emit("config", &ConfigRecord { command: "train", seed: ctx.seed, config: &cfg })?;
    let data = cfg.load_data(ctx.seed)?;
    let train_noise = spec.filter(|s| s.apply_to.touches_train());
    let test_noise = spec.filter(|s| s.apply_to.touches_test());
    let train_set = prepare_dataset(&data.train, &cfg.model, train_noise.as_ref())?;
    let test_set = prepare_dataset(&data.test, &cfg.model, test_noise.as_ref())?;
    let mut model = Model::new(cfg.model.clone(), ctx.seed)?;
    let sink = &mut ctx.sink;
    let report = train(&mut model, &train_set, &test_set, &cfg.train, |rec| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.3}{}",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.train_acc,
            rec.test.map_or(String::new(), |t| format!("  test {:.3}", t.accuracy))
        );
        sink.emit("epoch", rec)
    })?;
    let s = summary(&model, &report, train_set.len(), test_set.len(), spec.as_ref());
    if let Some(acc) = s.test_acc {
        println!(
            "test accuracy {acc:.4} ({} ordering, PE {}, length {})",
            s.ordering,
            if s.pe { "on" } else { "off" },
            s.seq_len
        );
    }
    ctx.sink.emit("train", &s)?;
    if let Some(p) = &a.checkpoint_out {
        checkpoint::save(&model, p)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    checkpoint: &'a Path,
    ordering: OrderingKind,
    pe: bool,
    seq_len: usize,
    items: usize,
    accuracy: f64,
    loss: f64,
    perturb: Option<&'a PerturbSpec>,
}

fn cmd_eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<i32> {
    let model = checkpoint::load(&a.checkpoint)?;
    let mut cfg = ctx.file.experiment();
    cfg.model = model.config.clone();
    if let Some(d) = &a.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    let spec = noise_spec(&cfg, &a.noise, ctx.seed)?.filter(|s| s.apply_to.touches_test());
    ctx.sink.emit("config", &ConfigRecord { command: "eval", seed: ctx.seed, config: &cfg })?;
    let data = cfg.load_data(ctx.seed)?;
    let test = prepare_dataset(&data.test, &model.config, spec.as_ref())?;
    let e = evaluate(&model, &test, 64)?;
    println!("accuracy {:.4}  loss {:.4}  ({} items)", e.accuracy, e.loss, test.len());
    ctx.sink.emit(
        "eval",
        &EvalRecord {
            checkpoint: &a.checkpoint,
            ordering: model.config.ordering,
            pe: model.config.use_positional_embedding,
            seq_len: model.config.seq_len(),
            items: test.len(),
            accuracy: e.accuracy,
            loss: e.loss,
            perturb: spec.as_ref(),
        },
    )?;
    Ok(EXIT_OK)
}

fn experiment_cache(ctx: &mut Ctx, a: &ExperimentArgs, command: &str) -> Result<RunCache> {
    let mut cfg = experiment_config(ctx, &a.model, &a.noise)?;
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    } else if ctx.file.seeds.is_none() {
        cfg.seeds = (0..3).map(|i| ctx.seed + i).collect();
    }
    ctx.sink.emit("config", &ConfigRecord { command, seed: ctx.seed, config: &cfg })?;
    RunCache::new(cfg)
}

fn cmd_ablate(ctx: &mut Ctx, a: &ExperimentArgs) -> Result<i32> {
    let mut cache = experiment_cache(ctx, a, "ablate-pe")?;
    let rows = ablate_pe(&mut cache, &mut ctx.sink)?;
    println!("{:<12} {:<4} {:>8} {:>8} {:>8}", "ordering", "pe", "acc", "std", "gap");
    for r in &rows {
        println!(
            "{:<12} {:<4} {:>8.4} {:>8.4} {:>8.4}",
            r.ordering.name(),
            if r.pe { "on" } else { "off" },
            r.acc,
            r.acc_std,
            r.gap
        );
    }
    Ok(EXIT_OK)
}

fn cmd_robustness(ctx: &mut Ctx, a: &ExperimentArgs) -> Result<i32> {
    let mut cache = experiment_cache(ctx, a, "robustness")?;
    let kinds: Vec<PerturbKind> = match a.noise.perturb {
        Some(k) => vec![k.into()],
        None => PerturbKind::ALL.to_vec(),
    };
    let orderings = match a.model.ordering {
        Some(o) => vec![o.into()],
        None => vec![OrderingKind::Nimba, OrderingKind::AxisTriple],
    };
    let m = robustness(&mut cache, &kinds, &orderings, &mut ctx.sink)?;
    for b in &m.baselines {
        println!("baseline {:<12} acc {:.4}", b.ordering.name(), b.acc);
    }
    println!("{:<9} {:<6} {:<12} {:>8} {:>8}", "noise", "split", "ordering", "acc", "drop");
    for c in &m.cells {
        println!(
            "{:<9} {:<6} {:<12} {:>8.4} {:>8.4}",
            c.noise.name(),
            c.apply_to.name(),
            c.ordering.name(),
            c.acc,
            c.drop
        );
    }
    Ok(EXIT_OK)
}

fn cmd_bench(ctx: &mut Ctx, a: &BenchArgs) -> Result<i32> {
    let mut cfg = ctx.file.bench.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(v) = &a.widths {
        cfg.widths = v.clone();
    }
    if let Some(v) = &a.lengths {
        cfg.lengths = v.clone();
    }
    if let Some(v) = a.n_c {
        cfg.n_c = v;
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    ctx.sink.emit("config", &ConfigRecord { command: "bench", seed: ctx.seed, config: &cfg })?;
    ctx.sink.emit("machine", &MachineInfo::current())?;
    let sink = &mut ctx.sink;
    run_bench(&cfg, |t| {
        println!(
            "{:<9} width {:>4} length {:>5}  median {:>10.3} us  iqr {:>8.3} us",
            format!("{:?}", t.mixer).to_lowercase(),
            t.width,
            t.length,
            t.median_s * 1e6,
            t.iqr_s * 1e6
        );
        sink.emit("bench", t)
    })?;
    Ok(EXIT_OK)
}

fn cmd_check(ctx: &mut Ctx, a: &CheckArgs) -> Result<i32> {
    let opts = CheckOptions { seed: ctx.seed, corrupt_a_log: a.corrupt_a_log };
    let mut failed = 0;
    let sink = &mut ctx.sink;
    let mut write_err = None;
    run_checks(&opts, |o| {
        println!("{} {:<38} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        if let Some(w) = o.witness.as_ref().filter(|w| !w.is_empty()) {
            println!("     witness: {w}");
        }
        failed += usize::from(!o.passed);
        if let Err(e) = sink.emit("check", o) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK })
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use rnn_depth::experiments::{
    run_detailed, sweep, verify_campaign, write_plot_data, write_sweep_csv, CampaignOptions, Grid, RunConfig,
    SweepConfig, PLOT_AXES,
};
use rnn_depth::models::{Activation, ActivationKind, Family, ModelConfig, ModelParams, Placement};
use rnn_depth::tasks::{generate, write_csv, TaskKind, TaskSpec};
use rnn_depth::theory;

#[derive(Parser)]
#[command(name = "rnn-depth", version, about = "Depth and width experiments for linear, second-order and CP recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits of a synthetic task as CSV.
    Generate(GenerateArgs),
    /// Emit weights of an explicit construction as JSON.
    Construct(ConstructArgs),
    /// Run the construction/oracle verification campaign.
    Verify(VerifyArgs),
    /// Train one configuration over its seeds.
    Train(TrainArgs),
    /// Train every cell of a depth/width/family/placement grid.
    Sweep(SweepArgs),
    /// Parameter count of a model (closed form for scalar-input linear RNNs).
    CountParams(CountArgs),
    /// Deep vs shallow copier parameter table.
    Crossover(CrossoverArgs),
}

#[derive(Args, Clone, Default)]
struct TaskOverrides {
    /// copy, sinus, copy_sinus or parity.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl TaskOverrides {
    fn apply(&self, mut spec: TaskSpec) -> Result<TaskSpec> {
        if let Some(kind) = &self.task {
            let kind: TaskKind = parse_enum(kind)?;
            let base = match kind {
                TaskKind::Copy => TaskSpec::copy(),
                TaskKind::Sinus => TaskSpec::sinus(),
                TaskKind::CopySinus => TaskSpec::copy_sinus(),
                TaskKind::Parity => TaskSpec::parity(),
            };
            spec = TaskSpec { train: spec.train, val: spec.val, test: spec.test, seed: spec.seed, ..base };
        }
        if let Some(d) = self.d {
            spec.d = d;
        }
        if let Some(t) = self.steps {
            spec.steps = t;
        }
        if let Some(p) = self.lag {
            spec.lag = p;
        }
        if let Some(w) = self.omega {
            spec.omega = w;
        }
        if let Some(n) = self.train_size {
            spec.train = n;
        }
        if let Some(n) = self.val_size {
            spec.val = n;
        }
        if let Some(n) = self.test_size {
            spec.test = n;
        }
        if let Some(s) = self.data_seed {
            spec.seed = s;
        }
        Ok(spec)
    }
}

#[derive(Args, Clone, Default)]
struct TrainOverrides {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    freeze_initial: bool,
    #[arg(long)]
    masked_loss: bool,
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long)]
    max_restarts: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// 10000/2000/2000 sequences, patience 400, five seeds.
    #[arg(long)]
    paper_scale: bool,
}

impl TrainOverrides {
    fn apply(&self, t: &mut rnn_depth::experiments::TrainConfig) {
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if self.clip.is_some() {
            t.clip = self.clip;
        }
        if let Some(v) = &self.seeds {
            t.seeds = v.clone();
        }
        t.freeze_initial |= self.freeze_initial;
        t.masked_loss |= self.masked_loss;
        if self.target_loss.is_some() {
            t.target_loss = self.target_loss;
        }
        if let Some(v) = self.max_restarts {
            t.max_restarts = v;
        }
        if self.init_scale.is_some() {
            t.init_scale = self.init_scale;
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// TaskSpec JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    task: TaskOverrides,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConstructArgs {
    /// copier, flattened, diag-power, parity or cp-witness.
    kind: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Deep linear RNN to flatten (JSON params).
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the copier before checking it; its verdict should turn red.
    #[arg(long)]
    mutate_copier: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ModelOverrides {
    /// rnn, 2rnn, birnn, cprnn or cpbirnn.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// identity, tanh or relu.
    #[arg(long)]
    activation: Option<String>,
    /// recurrent or depth_only.
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    no_readout: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// RunConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    task: TaskOverrides,
    #[command(flatten)]
    model: ModelOverrides,
    #[command(flatten)]
    train: TrainOverrides,
    /// Start from the copier for the task lag instead of a random draw.
    #[arg(long)]
    copier_init: bool,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Also save the restored best parameters of every seed.
    #[arg(long)]
    save_params: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// SweepConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    task: TaskOverrides,
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
    /// Activation specs such as `identity`, `tanh:recurrent`, `tanh:depth_only`.
    #[arg(long, value_delimiter = ',')]
    activations: Option<Vec<String>>,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
    /// Skip the per-series x,y,y_err plot-data files.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Args)]
struct CountArgs {
    /// ModelConfig JSON; without it, a scalar-input linear RNN from flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long)]
    include_initial: bool,
}

#[derive(Args)]
struct CrossoverArgs {
    #[arg(long, default_value_t = 12)]
    n_max: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .with_context(|| format!("unrecognized value {s:?}"))
}

fn parse_family(s: &str) -> Result<Family> {
    let all = [Family::Rnn, Family::SecondOrder, Family::Bilinear, Family::Cp, Family::CpBilinear];
    match all.into_iter().find(|f| f.name() == s) {
        Some(f) => Ok(f),
        None => parse_enum(s),
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    let (kind, placement) = s.split_once(':').unwrap_or((s, "recurrent"));
    Ok(Activation { kind: parse_enum::<ActivationKind>(kind)?, placement: parse_enum::<Placement>(placement)? })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => read_json(p)?,
        None => TaskSpec::copy(),
    };
    let mut spec = args.task.apply(base)?;
    if args.paper_scale {
        spec = spec.with_sizes(10_000, 2_000, 2_000);
    }
    let splits = generate(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    for (name, batch) in splits.named() {
        let path = args.out_dir.join(format!("{name}.csv"));
        write_csv(create(&path)?, &spec, name, batch)?;
        println!("{} ({} sequences)", path.display(), batch.batch());
    }
    write_text(&args.out_dir.join("task.json"), &serde_json::to_string_pretty(&spec)?)?;
    Ok(())
}

fn cmd_construct(args: ConstructArgs) -> Result<()> {
    let params: ModelParams = match args.kind.as_str() {
        "copier" => theory::copier_model(args.n, args.p)?,
        "flattened" => {
            let Some(path) = &args.from else { bail!("flattened needs --from <deep params JSON>") };
            let deep = ModelParams::from_json(&fs::read_to_string(path)?)?;
            theory::build_flattened(&deep)?
        }
        "diag-power" => theory::build_diag_power(args.n, args.d, args.depth)?,
        "parity" => theory::build_parity(args.d)?,
        "cp-witness" => theory::build_cp_witness(args.n, args.d, args.rank, args.depth)?,
        other => bail!("unknown construction {other:?}; expected copier, flattened, diag-power, parity or cp-witness"),
    };
    let json = params.to_json()?;
    match &args.out {
        Some(p) => {
            write_text(p, &json)?;
            eprintln!("wrote {} (hash {})", p.display(), params.content_hash());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let report = verify_campaign(&CampaignOptions { mutate_copier: args.mutate_copier, seed: args.seed })?;
    for v in &report.verdicts {
        let worst = v.residuals.iter().map(|(k, r)| format!("{k}={r:.3e}")).collect::<Vec<_>>().join(" ");
        println!("{} {:<46} {}", if v.passed { "PASS" } else { "FAIL" }, v.claim, worst);
    }
    if let Some(p) = &args.out {
        write_text(p, &report.to_json()?)?;
    }
    Ok(report.all_passed)
}

fn default_run_config() -> RunConfig {
    let task = TaskSpec::copy();
    let model = ModelConfig::linear_rnn(1, 9, task.d).with_readout(task.d);
    RunConfig::new(task, model)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => default_run_config(),
    };
    cfg.task = args.task.apply(cfg.task)?;
    let m = &args.model;
    if let Some(f) = &m.family {
        cfg.model.family = parse_family(f)?;
    }
    if let Some(v) = m.depth {
        cfg.model.depth = v;
    }
    if let Some(v) = m.hidden {
        cfg.model.hidden = v;
    }
    if let Some(v) = m.rank {
        cfg.model.rank = v;
    }
    if let Some(a) = &m.activation {
        cfg.model.activation.kind = parse_enum(a)?;
    }
    if let Some(p) = &m.placement {
        cfg.model.activation.placement = parse_enum(p)?;
    }
    cfg.model.input_dim = cfg.task.d;
    if m.no_readout {
        cfg.model.readout = None;
    } else if cfg.model.readout.is_some() {
        cfg.model.readout = Some(cfg.task.d);
    }
    args.train.apply(&mut cfg.train);
    if args.copier_init {
        cfg.train.init = rnn_depth::experiments::InitKind::Copier;
    }
    if args.train.paper_scale {
        cfg = cfg.paper_scale();
    }
    let out = run_detailed(&cfg)?;
    let rec = &out.record;
    for s in &rec.seeds {
        println!(
            "seed {:>3}  {:<10} best epoch {:>5}/{:<5} val {:.4e}  test {:.4e}",
            s.seed,
            if s.completed() { "ok" } else { "diverged" },
            s.best_epoch,
            s.epochs_run,
            s.best_val_loss,
            s.test_loss
        );
    }
    let a = &rec.aggregate;
    println!(
        "test MSE {:.4e} ± {:.4e} over {} seeds ({} failed); success < {:.0e}, failure > {:.4}",
        a.test_mean, a.test_std, a.completed, a.failed, rec.success_mse, rec.failure_mse
    );
    let dir = args.out_dir.join(&rec.config_hash);
    write_text(&dir.join("record.json"), &rec.to_json()?)?;
    write_text(&dir.join("timing.json"), &serde_json::to_string_pretty(&out.timing)?)?;
    let mut curves = csv_writer(&dir.join("curves.csv"))?;
    curves.write_record(["seed", "epoch", "train_loss", "val_loss"])?;
    for s in &rec.seeds {
        for (e, (tr, va)) in s.train_curve.iter().zip(&s.val_curve).enumerate() {
            curves.write_record([s.seed.to_string(), e.to_string(), format!("{tr:?}"), format!("{va:?}")])?;
        }
    }
    curves.flush()?;
    if args.save_params {
        for (s, model) in rec.seeds.iter().zip(&out.models) {
            if let Some(model) = model {
                write_text(&dir.join(format!("params_seed{}.json", s.seed)), &model.to_json()?)?;
            }
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn default_sweep_config() -> SweepConfig {
    let task = TaskSpec::copy().with_dims(1, 16);
    let grid = Grid {
        depths: vec![1, 2, 4],
        widths: (2..=10).collect(),
        widths_by_depth: Default::default(),
        families: vec![Family::Rnn],
        activations: vec![Activation::LINEAR],
    };
    SweepConfig::new(task, grid)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => default_sweep_config(),
    };
    cfg.task = args.task.apply(cfg.task)?;
    args.train.apply(&mut cfg.train);
    if let Some(v) = &args.depths {
        cfg.grid.depths = v.clone();
    }
    if let Some(v) = &args.widths {
        cfg.grid.widths = v.clone();
        cfg.grid.widths_by_depth.clear();
    }
    if let Some(v) = &args.families {
        cfg.grid.families = v.iter().map(|s| parse_family(s)).collect::<Result<_>>()?;
    }
    if let Some(v) = &args.activations {
        cfg.grid.activations = v.iter().map(|s| parse_activation(s)).collect::<Result<_>>()?;
    }
    if args.train.paper_scale {
        cfg = cfg.paper_scale();
    }
    eprintln!("running {} cells", cfg.grid.len());
    let res = sweep(&cfg)?;
    fs::create_dir_all(&args.out_dir)?;
    write_text(&args.out_dir.join("sweep.json"), &serde_json::to_string_pretty(&cfg)?)?;
    write_sweep_csv(create(&args.out_dir.join("cells.csv"))?, &res.cells)?;
    write_text(&args.out_dir.join("records.json"), &serde_json::to_string_pretty(&res.records)?)?;
    if !args.no_plot {
        let plot_dir = args.out_dir.join("plot");
        fs::create_dir_all(&plot_dir)?;
        for axis in PLOT_AXES {
            write_plot_data(&res.cells, axis, |name| {
                Ok(BufWriter::new(File::create(plot_dir.join(format!("{name}.csv")))?))
            })?;
        }
    }
    for c in &res.cells {
        println!(
            "{:<8} {:<10} L={} n={:<3} params={:<6} test {:.3e} ± {:.1e}{}{}",
            c.family,
            c.placement,
            c.depth,
            c.n,
            c.params,
            c.metric_mean,
            c.metric_std,
            if c.solved { "  solved" } else { "" },
            if c.failed > 0 { format!("  ({} failed seeds)", c.failed) } else { String::new() }
        );
    }
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn cmd_count(args: CountArgs) -> Result<()> {
    match &args.config {
        Some(p) => {
            let cfg: ModelConfig = read_json(p)?;
            let model = ModelParams::zeros(cfg)?;
            println!("{}", model.count_parameters(args.include_initial));
        }
        None => {
            let model = ModelParams::zeros(ModelConfig::linear_rnn(args.depth, args.n, 1))?;
            let formula = if args.include_initial {
                theory::param_count_with_initial(args.n, args.depth)
            } else {
                theory::param_count(args.n, args.depth)
            };
            let counted = model.count_parameters(args.include_initial);
            println!("n={} L={} formula={formula} counted={counted}", args.n, args.depth);
            if formula != counted {
                bail!("closed form and structural count disagree");
            }
        }
    }
    Ok(())
}

fn cmd_crossover(args: CrossoverArgs) -> Result<bool> {
    let rows = theory::crossover_table(args.n_max, args.max_depth)?;
    match &args.out {
        Some(p) => theory::write_crossover_csv(create(p)?, &rows)?,
        None => {
            let stdout = std::io::stdout();
            theory::write_crossover_csv(stdout.lock(), &rows)?;
        }
    }
    let violations = theory::crossover_violations(&rows);
    let (l, lt, v) = theory::critical_n_max(args.max_depth)?;
    eprintln!("rows: {}, violations with n >= 4: {}", rows.len(), violations.len());
    eprintln!("largest critical width {v:.6} at L={l}, Lt={lt}");
    for r in &violations {
        eprintln!("  violation n={} L={} Lt={} delta={}", r.n, r.depth, r.shallow_depth, r.delta);
    }
    Ok(violations.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Construct(a) => cmd_construct(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::CountParams(a) => cmd_count(a).map(|_| true),
        Command::Crossover(a) => cmd_crossover(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let _ = std::io::stderr().flush();
            ExitCode::from(2)
        }
    }
}

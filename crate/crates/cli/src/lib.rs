//! Command-line driver: data generation, distillation, baselines, evaluation,
//! ablation and redundancy analysis, each configured by a JSON file whose
//! values can be overridden by flags.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vdistill::baselines::{self, CoresetMethod};
use vdistill::dataio::{self, VideoSet};
use vdistill::evalkit::{self, AblationVariant, EvalResult, Report, ReportFormat, SummaryRow};
use vdistill::idtd;
use vdistill::student::StudentConfig;

pub use config::{Method, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "vdistill", version, about = "Video set distillation toolkit")]
struct Cli {
    /// Worker threads for module parallelism (1 is the reference schedule).
    #[arg(long, global = true, env = "VDS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the moving-shapes train and test sets into OUT/train and OUT/test.
    GenData(GenDataArgs),
    /// Distill a synthetic set (idtd or pixel-space dm) into OUT/synset.
    Distill(DistillArgs),
    /// Build a baseline synthetic set (random, herding, kcenter or dm).
    Baseline(BaselineArgs),
    /// Train fresh students on a synthetic set and report test accuracy.
    Eval(EvalArgs),
    /// Distill and evaluate a list of ablation variants.
    Ablate(AblateArgs),
    /// Per-class redundancy scores and their rank correlation with accuracy gain.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory written by `gen-data` (holds train/ and test/).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for in-memory data generation when no --data is given.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct HyperArgs {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic videos per class.
    #[arg(long)]
    ipc: Option<usize>,
    /// Segments per synthetic video.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Step size of the synthetic pixels (pool or free segments).
    #[arg(long)]
    lr: Option<f64>,
    /// Step size of the selectors and fusor (defaults to --lr).
    #[arg(long)]
    module_lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    t_syn: Option<usize>,
    #[arg(long)]
    t_real: Option<usize>,
}

#[derive(Args, Debug)]
struct SeedsArg {
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Data generation seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// idtd or dm.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// IDTD variant (full, no-pool, no-fusor, fusor-loss-only, ...).
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// random, herding, kcenter or dm.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Feature extractor epochs for herding and kcenter.
    #[arg(long)]
    feature_epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    seeds: SeedsArg,
    /// Synthetic set container directory.
    #[arg(long)]
    syn: PathBuf,
    /// Test set directory; defaults to the configured data's test split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Row label in summary.csv.
    #[arg(long, default_value = "synthetic")]
    label: String,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    seeds: SeedsArg,
    /// Comma-separated variants, e.g. full,compress-and-stitch,no-pool,t-syn=4.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// eval.json of the method under study.
    #[arg(long)]
    method_eval: PathBuf,
    /// eval.json of the reference the gain is measured against.
    #[arg(long)]
    baseline_eval: PathBuf,
    #[arg(long)]
    feature_epochs: Option<usize>,
    #[arg(long)]
    feature_seed: Option<u64>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Errors are reported on standard error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building thread pool")?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Distill(a) => distill(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(s) = a.data_seed {
        cfg.data_seed = s;
    }
}

fn apply_hyper(cfg: &mut RunConfig, a: &HyperArgs) {
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = a.$f { cfg.$f = v; })*};
    }
    set!(seed, ipc, k, alpha1, alpha2, lr, iterations, t_syn, t_real);
    if a.module_lr.is_some() {
        cfg.module_lr = a.module_lr;
    }
}

fn apply_seeds(cfg: &mut RunConfig, a: &SeedsArg) {
    if let Some(s) = &a.seeds {
        cfg.eval_seeds = s.clone();
    }
}

fn load(common: &Common, edit: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_ref())?;
    edit(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Train and test splits of the configured data.
fn load_data(cfg: &RunConfig) -> Result<(VideoSet, VideoSet)> {
    match &cfg.data {
        Some(dir) => Ok((read_set(&dir.join("train"))?, read_set(&dir.join("test"))?)),
        None => Ok(dataio::generate_moving_shapes(&cfg.spec, cfg.data_seed)?),
    }
}

fn read_set(dir: &Path) -> Result<VideoSet> {
    dataio::read_set(dir).with_context(|| format!("reading video set {}", dir.display()))
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Serialize)]
struct Versions {
    vdistill: &'static str,
    container_format: u32,
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'static str,
    config: &'a RunConfig,
    /// SHA-256 of the merged configuration.
    fingerprint: String,
    seeds: Seeds<'a>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<&'a Path>,
    versions: Versions,
}

#[derive(Serialize)]
struct Seeds<'a> {
    master: u64,
    data: u64,
    eval: &'a [u64],
}

fn write_provenance(out: &Path, command: &'static str, cfg: &RunConfig, inputs: Vec<&Path>) -> Result<()> {
    let record = Provenance {
        command,
        config: cfg,
        fingerprint: evalkit::fingerprint(cfg)?,
        seeds: Seeds { master: cfg.seed, data: cfg.data_seed, eval: &cfg.eval_seeds },
        inputs,
        versions: Versions { vdistill: env!("CARGO_PKG_VERSION"), container_format: dataio::FORMAT_VERSION },
    };
    write_json(&out.join("run.json"), &record)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        if let Some(s) = a.seed {
            c.data_seed = s;
        }
        Ok(())
    })?;
    let (train, test) = dataio::generate_moving_shapes(&cfg.spec, cfg.data_seed)?;
    let out = &a.common.out;
    prepare_out(out)?;
    dataio::write_set(out.join("train"), &train)?;
    dataio::write_set(out.join("test"), &test)?;
    write_provenance(out, "gen-data", &cfg, vec![])
}

fn distill(a: DistillArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        apply_data(c, &a.data);
        apply_hyper(c, &a.hyper);
        if let Some(m) = a.method {
            c.method = m;
        }
        if let Some(v) = &a.variant {
            c.variant =
                serde_json::from_value(serde_json::Value::String(v.clone())).map_err(|_| vdistill::Error::UnknownVariant(v.clone()))?;
        }
        ensure!(matches!(c.method, Method::Idtd | Method::Dm), "distill supports --method idtd or dm; use `baseline` for coresets");
        Ok(())
    })?;
    let (train, _) = load_data(&cfg)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let synthetic = match cfg.method {
        Method::Idtd => {
            let run = idtd::distill(&train, &cfg.idtd(), cfg.seed)?;
            idtd::write_loss_log(out.join("loss.csv"), &run.log)?;
            run.synthetic
        }
        _ => {
            let run = baselines::distill_dm_pixels(&train, &cfg.dm(), cfg.seed)?;
            baselines::write_dm_log(out.join("loss.csv"), &run.log)?;
            run.synthetic
        }
    };
    dataio::write_set(out.join("synset"), &synthetic)?;
    write_provenance(out, "distill", &cfg, cfg.data.iter().map(PathBuf::as_path).collect())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        apply_data(c, &a.data);
        apply_hyper(c, &a.hyper);
        c.method = a.method.unwrap_or(match c.method {
            // a config written for `distill` defaults to the random coreset
            Method::Idtd => Method::Random,
            m => m,
        });
        if let Some(e) = a.feature_epochs {
            c.feature_epochs = e;
        }
        ensure!(c.method != Method::Idtd, "baseline does not run idtd; use `distill`");
        Ok(())
    })?;
    let (train, _) = load_data(&cfg)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let synthetic = match cfg.method {
        Method::Dm => {
            let run = baselines::distill_dm_pixels(&train, &cfg.dm(), cfg.seed)?;
            baselines::write_dm_log(out.join("loss.csv"), &run.log)?;
            run.synthetic
        }
        m => {
            let method = match m {
                Method::Random => CoresetMethod::Random,
                Method::Herding => CoresetMethod::Herding,
                _ => CoresetMethod::KCenter,
            };
            let tc = cfg.eval_config().train;
            let result = baselines::run_coreset(method, &train, cfg.ipc, &tc, cfg.feature_epochs, cfg.seed)?;
            write_json(&out.join("coreset.json"), &result)?;
            result.subset(&train)
        }
    };
    dataio::write_set(out.join("synset"), &synthetic)?;
    write_provenance(out, "baseline", &cfg, cfg.data.iter().map(PathBuf::as_path).collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        apply_data(c, &a.data);
        apply_seeds(c, &a.seeds);
        ensure!(!c.eval_seeds.is_empty(), "at least one evaluation seed is required");
        Ok(())
    })?;
    let syn = read_set(&a.syn)?;
    let test = match &a.test {
        Some(dir) => read_set(dir)?,
        None => load_data(&cfg)?.1,
    };
    let result = evalkit::evaluate_synthetic(&syn, &test, &cfg.eval_config(), &cfg.eval_seeds)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write_eval(out, &a.label, &result)?;
    let mut inputs = vec![a.syn.as_path()];
    inputs.extend(a.test.as_deref().or(cfg.data.as_deref()));
    write_provenance(out, "eval", &cfg, inputs)
}

fn write_eval(out: &Path, label: &str, result: &EvalResult) -> Result<()> {
    write_text(&out.join("eval.csv"), &evalkit::render_report(&Report::Eval(result), ReportFormat::Csv)?)?;
    write_json(&out.join("eval.json"), result)?;
    let summary = [SummaryRow { variant: label.to_owned(), mean: result.mean, std: result.std, n_seeds: result.seeds.len() }];
    write_text(&out.join("summary.csv"), &evalkit::render_report(&Report::Summary(&summary), ReportFormat::Csv)?)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        apply_data(c, &a.data);
        apply_hyper(c, &a.hyper);
        apply_seeds(c, &a.seeds);
        if let Some(v) = &a.variants {
            c.variants = v.clone();
        }
        ensure!(!c.variants.is_empty(), "at least one ablation variant is required");
        ensure!(!c.eval_seeds.is_empty(), "at least one evaluation seed is required");
        Ok(())
    })?;
    let variants = cfg.variants.iter().map(|v| v.parse::<AblationVariant>()).collect::<vdistill::Result<Vec<_>>>()?;
    let (train, test) = load_data(&cfg)?;
    let rows = evalkit::run_ablation(&train, &test, &cfg.idtd(), &variants, &cfg.eval_config(), cfg.seed, &cfg.eval_seeds)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let summary: Vec<SummaryRow> = rows.iter().map(|r| r.summary()).collect();
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let ext = if format == ReportFormat::Csv { "csv" } else { "json" };
        evalkit::emit_report(&Report::Summary(&summary), out.join(format!("summary.{ext}")), format)?;
    }
    write_json(&out.join("ablation.json"), &rows)?;
    write_provenance(out, "ablate", &cfg, cfg.data.iter().map(PathBuf::as_path).collect())
}

#[derive(Serialize)]
struct Analysis<'a> {
    redundancy: &'a evalkit::RedundancyScore,
    /// Spearman correlation of `R_t + R_IC` with the per-class gain; null
    /// when either is constant.
    spearman: Option<f64>,
    method_mean: f64,
    baseline_mean: f64,
}

fn read_eval(path: &Path) -> Result<EvalResult> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let cfg = load(&a.common, |c| {
        apply_data(c, &a.data);
        if let Some(e) = a.feature_epochs {
            c.feature_epochs = e;
        }
        if let Some(s) = a.feature_seed {
            c.feature_seed = s;
        }
        Ok(())
    })?;
    let method = read_eval(&a.method_eval)?;
    let reference = read_eval(&a.baseline_eval)?;
    let (train, _) = load_data(&cfg)?;
    let channels = train.frame_shape().context("training set is empty")?[0];
    let tc = cfg.eval_config().train;
    let model =
        baselines::feature_extractor(&train, &StudentConfig::new(channels, train.num_classes), &tc, cfg.feature_epochs, cfg.feature_seed)?;
    let scores = evalkit::class_redundancy(&model, &train, cfg.redundancy_batch, cfg.t_real, cfg.ic_normalization)?;
    let rows = evalkit::per_class_gain(&method.per_class, &reference.per_class, &scores)?;
    let out = &a.common.out;
    prepare_out(out)?;
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let ext = if format == ReportFormat::Csv { "csv" } else { "json" };
        evalkit::emit_report(&Report::Gain(&rows), out.join(format!("gain.{ext}")), format)?;
    }
    let analysis = Analysis {
        redundancy: &scores,
        spearman: evalkit::gain_correlation(&rows),
        method_mean: method.mean,
        baseline_mean: reference.mean,
    };
    write_json(&out.join("analysis.json"), &analysis)?;
    let mut inputs = vec![a.method_eval.as_path(), a.baseline_eval.as_path()];
    inputs.extend(cfg.data.as_deref());
    write_provenance(out, "analyze", &cfg, inputs)
}

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sepkit::datagen::{
    build_manifest, index_corpus, load_split, read_exclusion_list, render_dataset, write_synthetic_corpus, ClipParams,
    DrawPolicy, MixtureExample, Split, SplitCounts, SyntheticProfile, DEFAULT_RMS_WINDOW_S,
};
use sepkit::harness::{
    evaluate_example, evaluate_model_stages, grad_check_suite, oracle_eval, run_sweep, write_sweep_csv, EvalReport,
    ExperimentConfig, HarnessError, WINDOWS_MS,
};
use sepkit::nets::{load_model, save_model, separate, train, SeparationModel, TrainExample};
use sepkit::signal::{derive_seed, read_wav, write_wav, WavEncoding, Waveform};
use sepkit::transforms::FrameSpec;

#[derive(Parser)]
#[command(name = "sepkit", version, about = "Mask-based audio source separation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mixture manifest and render its WAV tree.
    Mixgen(MixgenArgs),
    /// Train a model described by an experiment config.
    Train(TrainArgs),
    /// Write the estimated sources of one file or a dataset split.
    Separate(SeparateArgs),
    /// Score a model or precomputed estimates on a dataset split.
    Evaluate(EvaluateArgs),
    /// Score oracle binary masking on a dataset split.
    OracleEval(OracleArgs),
    /// Mean SI-SDR improvement as a function of window size.
    Sweep(SweepArgs),
    /// Finite-difference check of every operator and the full loss.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    DisjointBands,
    Tonal,
    Mixed,
}

impl From<ProfileArg> for SyntheticProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::DisjointBands => SyntheticProfile::DisjointBands,
            ProfileArg::Tonal => SyntheticProfile::Tonal,
            ProfileArg::Mixed => SyntheticProfile::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Uniform,
    OnePerClass,
}

impl From<PolicyArg> for DrawPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Uniform => DrawPolicy::Uniform,
            PolicyArg::OnePerClass => DrawPolicy::OnePerClass,
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: sepkit::datagen::DataError| e.to_string())
}

#[derive(Args)]
struct MixgenArgs {
    /// Corpus directory: one subdirectory per class holding WAV files.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    /// Generate a synthetic stand-in corpus under `<out>/corpus` instead.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, value_enum, default_value = "disjoint-bands")]
    profile: ProfileArg,
    #[arg(long, default_value_t = 20)]
    files_per_class: usize,
    /// Sources per mixture.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    n_train: usize,
    /// Defaults to the 20:70 validation-to-train ratio of the file split.
    #[arg(long)]
    n_val: Option<usize>,
    /// Defaults to the 10:70 test-to-train ratio of the file split.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, value_enum, default_value = "uniform")]
    policy: PolicyArg,
    /// File of corpus ids to leave out, one per line.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RMS_WINDOW_S)]
    rms_window_s: f64,
    /// Attenuate each source by a uniform draw in [-max_gain_db, 0] dB.
    #[arg(long, default_value_t = 0.0)]
    max_gain_db: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `training.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    model: PathBuf,
    /// A single mixture WAV.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    input: Option<PathBuf>,
    /// A rendered dataset; every mixture of `--split` is separated.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, required_unless_present = "estimates", conflicts_with = "estimates")]
    model: Option<PathBuf>,
    /// Directory of `<mixture_id>/estimate<k>.wav` files, as written by `separate`.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Experiment config the model must match.
    #[arg(long, requires = "model")]
    config: Option<PathBuf>,
    /// Also write a report for every stage of a two-stage model.
    #[arg(long)]
    all_stages: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 10.0)]
    window_ms: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, value_delimiter = ',', default_values_t = WINDOWS_MS)]
    windows: Vec<f64>,
    /// Train one model per window from this template; without it the sweep
    /// uses oracle binary masks.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    /// CSV output path.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV copy of the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Mixgen(a) => mixgen(a),
        Command::Train(a) => train_cmd(a),
        Command::Separate(a) => separate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::OracleEval(a) => oracle_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn ratio_count(n_train: usize, part: f64) -> usize {
    (n_train as f64 * part / 70.0).round() as usize
}

fn mixgen(a: MixgenArgs) -> Result<()> {
    let corpus = match &a.corpus {
        Some(dir) => dir.clone(),
        None => {
            let dir = a.out.join("corpus");
            let ids = write_synthetic_corpus(
                &dir,
                a.profile.into(),
                a.files_per_class,
                derive_seed(a.seed, &[7]),
                a.sample_rate,
            )?;
            log::info!("wrote {} synthetic files to {}", ids.len(), dir.display());
            dir
        }
    };
    let exclude = match &a.exclude {
        Some(p) => read_exclusion_list(p)?,
        None => Vec::new(),
    };
    let index = index_corpus(&corpus, &exclude, a.rms_window_s)?;
    let counts = SplitCounts {
        train: a.n_train,
        validation: a.n_val.unwrap_or_else(|| ratio_count(a.n_train, 20.0)),
        test: a.n_test.unwrap_or_else(|| ratio_count(a.n_train, 10.0)),
    };
    let manifest = build_manifest(
        &index,
        a.k,
        counts,
        ClipParams {
            max_gain_db: a.max_gain_db,
            ..ClipParams::default()
        },
        a.policy.into(),
        a.seed,
    )?;
    render_dataset(&manifest, &index, &a.out)?;
    println!(
        "{} mixtures (train {}, validation {}, test {}) from {} files; manifest sha256 {}",
        manifest.recipes.len(),
        counts.train,
        counts.validation,
        counts.test,
        index.files.len(),
        manifest.checksum()
    );
    Ok(())
}

fn train_examples(examples: Vec<MixtureExample>) -> Vec<TrainExample> {
    examples
        .into_iter()
        .map(|e| TrainExample {
            mixture: e.mixture,
            references: e.references,
        })
        .collect()
}

fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    report.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
    report.write_summary_csv(create(&dir.join(format!("{stem}_summary.csv")))?)?;
    Ok(())
}

fn settings(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Trains `cfg` on the train split of its dataset and writes the checkpoint,
/// the loss log and, when the dataset has one, a validation report.
fn run_training(cfg: &ExperimentConfig) -> Result<SeparationModel> {
    let model_cfg = cfg.model_config()?;
    let data = train_examples(load_split(cfg.dataset_dir(), Split::Train)?);
    let out = &cfg.experiment.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(&out.join("config.toml"))?;
    log::info!("training {} on {} mixtures", cfg.experiment.task, data.len());
    let outcome = train(&model_cfg, &cfg.training, &data)?;
    outcome.write_log_csv(create(&out.join("train_log.csv"))?)?;
    save_model(&out.join("model.skpt"), &outcome.model)?;
    let val = load_split(cfg.dataset_dir(), Split::Validation)?;
    if !val.is_empty() {
        let reports = evaluate_model_stages(&outcome.model, &val, experiment_settings(cfg))?;
        let last = reports.last().expect("at least one stage");
        println!("validation mean SI-SDRi {:.2} dB", last.mean_si_sdri);
        write_report(last, out, "validation_report")?;
    }
    Ok(outcome.model)
}

fn experiment_settings(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    settings(&[
        ("task", cfg.experiment.task.clone()),
        ("basis", format!("{:?}", cfg.basis.kind).to_lowercase()),
        ("window_ms", cfg.basis.window_ms.to_string()),
        ("iterative", cfg.network.iterative.to_string()),
        ("steps", cfg.training.steps.to_string()),
        ("seed", cfg.training.seed.to_string()),
    ])
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(steps) = a.steps {
        cfg.training.steps = steps;
    }
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    run_training(&cfg)?;
    println!("wrote {}", cfg.experiment.output_dir.join("model.skpt").display());
    Ok(())
}

fn write_estimates(estimates: &[Waveform], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (k, e) in estimates.iter().enumerate() {
        write_wav(e, dir.join(format!("estimate{k}.wav")), WavEncoding::Float32)?;
    }
    Ok(())
}

fn separate_cmd(a: SeparateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    match (&a.input, &a.dataset) {
        (Some(input), _) => {
            let mixture = read_wav(input)?;
            write_estimates(&separate(&model, &mixture)?, &a.out)?;
        }
        (None, Some(dataset)) => {
            let examples = load_split(dataset, a.split)?;
            for ex in &examples {
                write_estimates(&separate(&model, &ex.mixture)?, &a.out.join(&ex.id))?;
            }
            println!("separated {} mixtures", examples.len());
        }
        (None, None) => bail!("either --input or --dataset is required"),
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let examples = load_split(&a.dataset, a.split)?;
    let base = settings(&[("split", a.split.to_string())]);
    let reports = match (&a.model, &a.estimates) {
        (Some(path), _) => {
            let model = load_model(path)?;
            if let Some(cfg_path) = &a.config {
                let expected = ExperimentConfig::load(cfg_path)?.model_config()?;
                if expected != model.config {
                    bail!("checkpoint {} does not match config {}", path.display(), cfg_path.display());
                }
            }
            evaluate_model_stages(&model, &examples, base)?
        }
        (None, Some(dir)) => {
            let rows = examples
                .iter()
                .map(|ex| {
                    let est = (0..ex.references.len())
                        .map(|k| read_wav(dir.join(&ex.id).join(format!("estimate{k}.wav"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(evaluate_example(&ex.id, &ex.mixture, &ex.references, &est)?)
                })
                .collect::<Result<Vec<_>>>()?;
            vec![EvalReport::from_rows(rows, base)]
        }
        (None, None) => bail!("either --model or --estimates is required"),
    };
    let last = reports.last().expect("at least one report");
    write_report(last, &a.out, "report")?;
    if a.all_stages {
        for (s, r) in reports.iter().enumerate() {
            write_report(r, &a.out, &format!("report_stage{}", s + 1))?;
        }
    }
    println!(
        "mean SI-SDRi {:.3} dB, median {:.3} dB over {} mixtures ({} excluded)",
        last.mean_si_sdri,
        last.median_si_sdri,
        last.rows.len() - last.n_excluded,
        last.n_excluded
    );
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> Result<()> {
    let examples = load_split(&a.dataset, a.split)?;
    let sr = examples.first().map_or(16_000, |e| e.mixture.sample_rate_hz());
    let report = oracle_eval(&examples, &FrameSpec::from_window_ms(a.window_ms, sr)?)?;
    write_report(&report, &a.out, "oracle_report")?;
    println!(
        "oracle mean SI-SDRi {:.3} dB over {} mixtures at {} ms",
        report.mean_si_sdri,
        report.rows.len(),
        a.window_ms
    );
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let examples = load_split(&a.dataset, a.split)?;
    let template = a.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let cells = run_sweep(&a.windows, |w| match &template {
        None => oracle_eval(&examples, &FrameSpec::from_window_ms(w, a.sample_rate)?),
        Some(t) => {
            let mut cfg = t.with_window(w)?;
            cfg.experiment.output_dir = t.experiment.output_dir.join(format!("window_{w}ms"));
            let model = run_training(&cfg).map_err(|e| HarnessError::Config(format!("{e:#}")))?;
            let mut reports = evaluate_model_stages(&model, &examples, experiment_settings(&cfg))?;
            let report = reports.pop().expect("at least one stage");
            let csv = cfg.experiment.output_dir.join(format!("{}_report.csv", a.split));
            report.write_csv(create(&csv).map_err(|e| HarnessError::Config(format!("{e:#}")))?)?;
            Ok(report)
        }
    });
    write_sweep_csv(&cells, create(&a.out)?)?;
    for c in &cells {
        match c.mean_si_sdri() {
            Some(m) => println!("{:>5} ms  {m:.3} dB", c.window_ms),
            None => println!("{:>5} ms  failed", c.window_ms),
        }
    }
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} sweep cells failed", cells.len());
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<()> {
    let report = grad_check_suite(a.threshold, a.seed)?;
    println!("{:<28} {:>12} {:>7} {:>9}", "component", "max_rel_err", "probes", "excluded");
    for e in &report.entries {
        println!("{:<28} {:>12.3e} {:>7} {:>9}", e.component, e.max_rel_err, e.probes, e.excluded);
    }
    if let Some(path) = &a.out {
        report.write_csv(create(path)?)?;
    }
    if !report.passed() {
        let worst = report.worst().expect("non-empty report");
        bail!(
            "gradient check failed: {} has relative error {:.3e} (threshold {:.1e})",
            worst.component,
            worst.max_rel_err,
            a.threshold
        );
    }
    println!("all {} components under {:.1e}", report.entries.len(), a.threshold);
    Ok(())
}

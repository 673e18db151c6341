//! Command implementations behind the `galnet` binary.
//!
//! Exit codes: 0 success, 1 a check or evaluation failed, 2 usage error.
//! Every report and log starts with a `#` header line that records the
//! seed and the other flags that shape the run.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use galnet::data::{encode_pgm, load_samples, synth_generate, write_manifest, ManifestEntry, Modality, SegSample, SynthConfig};
use galnet::gradcheck::{run_suite, SuiteConfig, SUITE_TOLERANCE};
use galnet::kfold::{evaluate, kfold_run, FoldSpec, Oracle, Predictor, REFERENCE_FOLD_SIZES};
use galnet::metrics::{metrics_from_counts, MetricReport};
use galnet::net::{export_activation_map, infer, load_checkpoint, predict, save_checkpoint, NetConfig, NetParams};
use galnet::train::{train, NetTrainer, TrainConfig};
use galnet::OpKind;

/// Epoch budget used by `--desk`.
pub const DESK_EPOCHS: usize = 30;

#[derive(Parser, Debug)]
#[command(name = "galnet", version, about = "Graph attention layer: synthesis, training, evaluation, checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Train one network on a manifest and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or the label oracle) on a manifest.
    Eval(EvalArgs),
    /// Paired with/without attention k-fold runs over several seeds.
    Bench(BenchArgs),
    /// Finite-difference check of every op and the attention layer.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub modality: Modality,
    /// Number of samples, at least 1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Frame size as HxW; both sides divisible by 4.
    #[arg(long, default_value = "32x32")]
    pub hw: Dims2,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags shared by `train` and `bench`.
#[derive(Args, Debug, Clone)]
pub struct Schedule {
    /// Epochs; defaults to 150 for rgb and 100 otherwise.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    /// Desk-scale budget of 30 epochs unless --epochs is given.
    #[arg(long)]
    pub desk: bool,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_LR)]
    pub lr: f32,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_MOMENTUM)]
    pub momentum: f32,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_BATCH)]
    pub batch: usize,
    /// Train on the samples as given, without flips, rotations or shifts.
    #[arg(long)]
    pub no_augment: bool,
}

impl Schedule {
    pub fn epochs_for(&self, modality: Modality) -> usize {
        match (self.epochs, self.desk) {
            (Some(e), _) => e as usize,
            (None, true) => DESK_EPOCHS,
            (None, false) if modality == Modality::Rgb => 150,
            (None, false) => 100,
        }
    }

    fn config(&self, modality: Modality, seed: u64) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.epochs_for(modality),
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            augment: !self.no_augment,
            seed,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn header(&self, cfg: &TrainConfig) -> String {
        format!(
            "epochs={} lr={} momentum={} batch={} augment={}",
            cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.augment
        )
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, conflicts_with = "no_gal")]
    pub with_gal: bool,
    #[arg(long)]
    pub no_gal: bool,
    #[command(flatten)]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint directory; also receives `loss.log`.
    #[arg(long)]
    pub out_checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use the labels as predictions (harness self-test).
    #[arg(long)]
    pub oracle: bool,
    /// Number of consecutive folds the samples are split into.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub folds: u64,
    /// Split 53 samples into the twelve reference folds instead.
    #[arg(long, conflicts_with = "folds")]
    pub reference_folds: bool,
    /// Directory for predicted masks and encoder activation maps.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of paired runs; seeds are consecutive from --seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    #[command(flatten)]
    pub schedule: Schedule,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Feature map size as HxWxC, C even.
    #[arg(long, default_value = "4x5x6")]
    pub size: Dims3,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one op's backward rule (test fixture).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims2(pub usize, pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims3(pub usize, pub usize, pub usize);

fn parse_dims(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let parts: Result<Vec<usize>, _> = s.split(['x', 'X']).map(str::parse).collect();
    match parts {
        Ok(p) if p.len() == n && p.iter().all(|&d| d > 0) => Ok(p),
        _ => Err(format!("expected {n} positive integers joined by 'x', got `{s}`")),
    }
}

impl FromStr for Dims2 {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let p = parse_dims(s, 2)?;
        Ok(Dims2(p[0], p[1]))
    }
}

impl FromStr for Dims3 {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let p = parse_dims(s, 3)?;
        Ok(Dims3(p[0], p[1], p[2]))
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination or value; exit code 2.
    Usage(String),
    /// A check or evaluation did not pass; exit code 1.
    Failed(String),
    /// Anything else (I/O, malformed inputs); exit code 1.
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) | CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(m) => f.write_str(m),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<galnet::Error> for CliError {
    fn from(e: galnet::Error) -> Self {
        CliError::Other(e.into())
    }
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let text = match cli.command {
        Command::Synth(a) => cmd_synth(&a)?,
        Command::Train(a) => cmd_train(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
        Command::Bench(a) => cmd_bench(&a)?,
        Command::Gradcheck(a) => {
            let (text, failed) = cmd_gradcheck(&a)?;
            out.write_all(text.as_bytes()).context("writing report")?;
            if !failed.is_empty() {
                return Err(CliError::Failed(format!("gradient check failed for: {}", failed.join(", "))));
            }
            return Ok(());
        }
    };
    out.write_all(text.as_bytes()).context("writing report")?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn label_bytes(data: &[u8]) -> Vec<u8> {
    data.iter().map(|&v| v * 255).collect()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, CliError> {
    let Dims2(h, w) = a.hw;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(CliError::Usage(format!("--hw {h}x{w}: both sides must be divisible by 4")));
    }
    let cfg = SynthConfig::new(a.modality, a.n as usize, h, w, a.seed);
    let samples = synth_generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut positives = 0;
    for s in &samples {
        let image = format!("{}.galt", s.id);
        let label = format!("{}.label.pgm", s.id);
        write_file(&a.out.join(&image), &galnet::data::encode_galt(&s.image))?;
        write_file(&a.out.join(&label), &encode_pgm(h, w, &label_bytes(s.label.data())))?;
        positives += s.label.count_positive();
        entries.push(ManifestEntry { id: s.id.clone(), modality: s.modality, image: image.into(), label: label.into() });
    }
    let manifest = a.out.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    Ok(format!(
        "# galnet synth modality={} n={} hw={h}x{w} seed={}\nwrote {} samples to {}\npothole pixels: {positives} of {}\n",
        a.modality,
        a.n,
        a.seed,
        samples.len(),
        manifest.display(),
        samples.len() * h * w
    ))
}

/// Loads a manifest whose samples all share one modality.
fn load_uniform(path: &Path) -> Result<(Vec<SegSample>, Modality), CliError> {
    let samples = load_samples(path).with_context(|| format!("loading {}", path.display()))?;
    let modality = samples[0].modality;
    if let Some(s) = samples.iter().find(|s| s.modality != modality) {
        return Err(CliError::Other(anyhow::anyhow!(
            "manifest mixes modalities: {} is {}, {} is {}",
            samples[0].id,
            modality,
            s.id,
            s.modality
        )));
    }
    Ok((samples, modality))
}

pub fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    if a.with_gal == a.no_gal {
        return Err(CliError::Usage("pass exactly one of --with-gal and --no-gal".into()));
    }
    let (samples, modality) = load_uniform(&a.manifest)?;
    let cfg = a.schedule.config(modality, a.seed)?;
    let net = NetConfig::new(modality.channels(), a.with_gal, a.seed);
    let mut log = format!(
        "# galnet train seed={} with_gal={} modality={} samples={} {}\nepoch\tloss\n",
        a.seed,
        a.with_gal,
        modality,
        samples.len(),
        a.schedule.header(&cfg)
    );
    let refs: Vec<&SegSample> = samples.iter().collect();
    let params = train(net, &cfg, &refs, |epoch, loss| {
        writeln!(log, "{epoch}\t{loss:.6}").unwrap();
    })?;
    save_checkpoint(&params, &a.out_checkpoint)?;
    write_file(&a.out_checkpoint.join("loss.log"), log.as_bytes())?;
    let header = log.lines().next().unwrap_or_default();
    let last = log.lines().last().unwrap_or_default().replace('\t', " loss ");
    Ok(format!(
        "{header}\nparameters: {}\nfinal: epoch {last}\ncheckpoint: {}\n",
        params.parameter_count(),
        a.out_checkpoint.display()
    ))
}

/// Checks a checkpoint against the manifest's input channel count, naming
/// the first-layer tensor on mismatch.
fn check_compatible(params: &NetParams<f32>, modality: Modality) -> Result<(), CliError> {
    let cin = params.config().in_channels;
    if cin != modality.channels() {
        return Err(CliError::Other(anyhow::anyhow!(
            "checkpoint mismatch for tensor `enc1.kernel`: built for {cin} input channel(s), manifest is {} ({} channel(s))",
            modality,
            modality.channels()
        )));
    }
    Ok(())
}

fn score(model: &dyn Predictor, samples: &[SegSample], folds: &FoldSpec) -> Result<MetricReport, CliError> {
    let mut rows = Vec::with_capacity(folds.len());
    for fold in folds.folds() {
        let held: Vec<&SegSample> = fold.iter().map(|&i| &samples[i]).collect();
        rows.push(metrics_from_counts(&evaluate(model, &held)?)?);
    }
    Ok(MetricReport::from_rows(rows)?)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    let (samples, modality) = load_uniform(&a.manifest)?;
    let folds = if a.reference_folds {
        FoldSpec::from_sizes(&REFERENCE_FOLD_SIZES)?
    } else {
        FoldSpec::even(samples.len(), a.folds as usize).map_err(|e| CliError::Usage(e.to_string()))?
    };
    folds.check_partition(samples.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    let (source, report) = match &a.checkpoint {
        Some(dir) => {
            let params = load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
            check_compatible(&params, modality)?;
            if let Some(out) = &a.out {
                write_maps(&params, &samples, out)?;
            }
            (format!("checkpoint={}", dir.display()), score(&params, &samples, &folds)?)
        }
        None => ("oracle".to_string(), kfold_run(&samples, &folds, &Oracle)?),
    };
    Ok(format!(
        "# galnet eval {source} modality={modality} samples={} folds={}\n{}",
        samples.len(),
        folds.len(),
        report.to_document()
    ))
}

/// Writes `<id>.pred.pgm` and `<id>.act.pgm` (mean encoder activation) per
/// sample.
fn write_maps(params: &NetParams<f32>, samples: &[SegSample], out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for s in samples {
        let (features, logits) = infer(params, &s.image)?;
        let mask = predict(&logits)?;
        write_file(&out.join(format!("{}.pred.pgm", s.id)), &encode_pgm(s.height(), s.width(), &label_bytes(mask.data())))?;
        let fs_ = features.shape();
        write_file(&out.join(format!("{}.act.pgm", s.id)), &encode_pgm(fs_[0], fs_[1], &export_activation_map(&features)?))?;
    }
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<String, CliError> {
    let (samples, modality) = load_uniform(&a.manifest)?;
    let folds = FoldSpec::even(samples.len(), a.folds as usize).map_err(|e| CliError::Usage(e.to_string()))?;
    let probe = a.schedule.config(modality, a.seed)?;
    let mut text = format!(
        "# galnet bench seeds={}..={} modality={modality} samples={} folds={} {}\n",
        a.seed,
        a.seed + a.seeds - 1,
        samples.len(),
        a.folds,
        a.schedule.header(&probe)
    );
    text.push_str("seed\tmIoU_gal\tmIoU_base\tdIoU\tmFsc_gal\tmFsc_base\tdFsc\n");
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let cfg = a.schedule.config(modality, seed)?;
        let run = |with_gal| {
            let trainer = NetTrainer { net: NetConfig::new(modality.channels(), with_gal, seed), train: cfg };
            kfold_run(&samples, &folds, &trainer)
        };
        let (g, b) = (run(true)?.mean, run(false)?.mean);
        let row = [g.iou, b.iou, g.iou - b.iou, g.fsc, b.fsc, g.fsc - b.fsc];
        writeln!(text, "{seed}\t{}", format_bench_row(&row)).unwrap();
        rows.push(row);
    }
    let k = rows.len() as f64;
    let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k).collect();
    writeln!(text, "mean\t{}", format_bench_row(&mean)).unwrap();
    let wins = rows.iter().filter(|r| r[2] > 0.0).count();
    writeln!(text, "# attention wins {wins} of {} pairs on mIoU", rows.len()).unwrap();
    Ok(text)
}

/// `mIoU_gal mIoU_base dIoU mFsc_gal mFsc_base dFsc`, deltas signed.
fn format_bench_row(r: &[f64]) -> String {
    format!("{:.4}\t{:.4}\t{:+.4}\t{:.4}\t{:.4}\t{:+.4}", r[0], r[1], r[2], r[3], r[4], r[5])
}

fn parse_fault(name: &str) -> Result<OpKind, CliError> {
    OpKind::ALL
        .iter()
        .copied()
        .find(|k| k.name() == name)
        .ok_or_else(|| CliError::Usage(format!("unknown op `{name}`")))
}

/// Returns the report and the names of failing checks.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(String, Vec<String>), CliError> {
    let Dims3(h, w, c) = a.size;
    if c % 2 != 0 {
        return Err(CliError::Usage(format!("--size {h}x{w}x{c}: channel count must be even")));
    }
    if h < 2 || w < 2 {
        return Err(CliError::Usage(format!("--size {h}x{w}x{c}: the lattice needs at least 2x2")));
    }
    let fault = a.inject_fault.as_deref().map(parse_fault).transpose()?;
    let cfg = SuiteConfig { fault, ..SuiteConfig::new(h, w, c, a.seed) };
    let entries = run_suite(&cfg)?;
    let mut text = format!("# galnet gradcheck size={h}x{w}x{c} seed={} tolerance={SUITE_TOLERANCE:e}\n", a.seed);
    if let Some(f) = fault {
        writeln!(text, "# injected fault in {}", f.name()).unwrap();
    }
    text.push_str("op\tmax_rel_error\tstatus\n");
    let mut failed = Vec::new();
    for e in &entries {
        let status = if e.passed() { "ok" } else { "FAIL" };
        writeln!(text, "{}\t{:.3e}\t{status}", e.name, e.report.max_rel_error).unwrap();
        if !e.passed() {
            failed.push(e.name.to_string());
        }
    }
    Ok((text, failed))
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Reports go to stdout, diagnostics to stderr.
pub fn main_with<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => {
            let _ = lock.flush();
            0
        }
        Err(e) => {
            let _ = lock.flush();
            eprintln!("galnet: {e}");
            e.exit_code()
        }
    }
}

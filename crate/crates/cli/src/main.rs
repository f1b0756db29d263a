//! Command-line driver for collaborative convolutional training
//! experiments: dataset generation, training, evaluation, cross-validation,
//! gradient checking, mode comparison, and the sign-test statistics.
//!
//! Exit codes: 0 success, 1 check failure, 2 I/O or configuration error,
//! 3 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cocokit_core::data::{
    binomial_sign_test, bonferroni, load_dataset, save_dataset, synth_class_sizes,
    synth_finegrained, LoadedData, SynthConfig,
};
use cocokit_core::gradcheck::{collab_suite, featnet_suite, PASS_TOLERANCE};
use cocokit_core::trainer::{compare_modes, crossval, evaluate, train, TrainMode};
use cocokit_core::{EvalReport, LabeledImageSet, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(name = "cocokit", version, about = "Collaborative convolutional training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fine-grained dataset on disk
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and loss log
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation for one mode
    Crossval(CrossvalArgs),
    /// Finite-difference verification of all analytic gradients
    Gradcheck(GradcheckArgs),
    /// Cross-validate several modes and print an ordered table
    Compare(CompareArgs),
    /// Exact one-tail binomial sign test with Bonferroni adjustment
    Sigtest(SigtestArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long = "per-class", default_value_t = 100)]
    per_class: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Glyph blend strength in [0,1]; 0 makes classes indistinguishable
    #[arg(long, default_value_t = 0.35)]
    contrast: f64,
    #[arg(long, default_value_t = 6)]
    backgrounds: usize,
    /// Maximum glyph position jitter in pixels
    #[arg(long, default_value_t = 3)]
    jitter: usize,
    /// Geometrically decaying class sizes
    #[arg(long = "long-tail", default_value_t = false)]
    long_tail: bool,
    /// Class-size decay ratio used with --long-tail
    #[arg(long, default_value_t = 0.7)]
    decay: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run manifest (key=value lines); flags override its settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Training mode (softmax_baseline | cascade_crc | cascade_procrc | coconet)
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_manifest_text(&text)?;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .with_context(|| format!("--set '{pair}' is not KEY=VALUE"))?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        if let Some(mode) = &self.mode {
            cfg.mode = mode.parse::<TrainMode>()?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset manifest or its directory
    #[arg(long)]
    data: PathBuf,
    /// Model checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV path (default: <out>.loss.csv)
    #[arg(long = "loss-log")]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Where to write the JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum instance sizes d,m,n for the collaborative suite
    #[arg(long, default_value = "6,8,7", value_name = "D,M,N")]
    sizes: String,
    /// Deliberately corrupt the analytic gradients (negative control)
    #[arg(long = "corrupt-gradient", default_value_t = false)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated list of modes to compare
    #[arg(
        long,
        default_value = "softmax_baseline,cascade_crc,cascade_procrc,coconet"
    )]
    modes: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Args)]
struct SigtestArgs {
    #[arg(long)]
    wins: usize,
    #[arg(long)]
    trials: usize,
    #[arg(long = "null-p", default_value_t = 0.5)]
    null_p: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 9)]
    comparisons: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_exit(&err))
        }
    }
}

fn classify_exit(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cocokit_core::Error>() {
        Some(cocokit_core::Error::Diverged { .. }) | Some(cocokit_core::Error::NonFinite(_)) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sigtest(args) => cmd_sigtest(args),
    }
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<u8> {
    let cfg = SynthConfig {
        classes: args.classes,
        per_class: args.per_class,
        image_size: args.size,
        backgrounds: args.backgrounds,
        glyph_contrast: args.contrast,
        jitter: args.jitter,
        long_tail: args.long_tail,
        decay: args.decay,
        seed: args.seed,
    };
    let set = synth_finegrained(&cfg)?;
    let manifest = save_dataset(&set, &args.out)?;
    let sizes = synth_class_sizes(&cfg);
    println!("class  name      size");
    for (i, (name, size)) in set.class_names.iter().zip(&sizes).enumerate() {
        println!("{i:<6} {name:<9} {size}");
    }
    println!(
        "wrote {} images ({} classes) to {}",
        set.len(),
        set.num_classes(),
        manifest.display()
    );
    Ok(0)
}

/// Accept either the manifest file itself or the dataset directory.
fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn load_images(data: &Path) -> anyhow::Result<LabeledImageSet> {
    match load_dataset(&manifest_path(data))? {
        LoadedData::Images(set) => Ok(set),
        LoadedData::Features(_) => {
            bail!("{} holds a feature table; this command needs images", data.display())
        }
    }
}

fn ingest_for(cfg_size: usize, set: LabeledImageSet) -> LabeledImageSet {
    let img = &set.images[0];
    if img.h == cfg_size && img.w == cfg_size {
        set
    } else {
        println!("resizing {}x{} images to {cfg_size}x{cfg_size}", img.h, img.w);
        set.resized(cfg_size)
    }
}

fn echo_config(cfg: &TrainConfig) {
    println!("resolved configuration:");
    for line in cfg.to_manifest_text().lines() {
        println!("  {line}");
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<u8> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);
    let set = ingest_for(cfg.image_size, load_images(&args.data)?);
    let (model, log) = train(&cfg, &set)?;
    model.save(&args.out)?;
    let loss_path = args
        .loss_log
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    log.save(&loss_path)?;
    let last = log.rows.last();
    println!(
        "training complete: {} epochs logged, final cost {}",
        log.rows.len(),
        last.map_or(f64::NAN, |r| r.cost)
    );
    println!("checkpoint: {}", args.out.display());
    println!("loss log:   {}", loss_path.display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<u8> {
    let model = TrainedModel::load(&args.model)?;
    let (h, _, _) = model.net.input_shape();
    let set = ingest_for(h, load_images(&args.data)?);
    let accuracy = evaluate(&model, &set)?;
    println!(
        "accuracy: {accuracy:.2}% ({} samples, {} head)",
        set.len(),
        model.head.name()
    );
    Ok(0)
}

fn report_row(mode: &str, report: &EvalReport) -> String {
    format!("{mode:<18} {:>6.2} ± {:.2}", report.mean, report.std)
}

fn cmd_crossval(args: CrossvalArgs) -> anyhow::Result<u8> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);
    let set = ingest_for(cfg.image_size, load_images(&args.data)?);
    let report = crossval(&cfg, &set, args.k)?;
    println!("mode               mean ± std (%)");
    println!("{}", report_row(&cfg.mode.to_string(), &report));
    let folds: Vec<String> = report.folds.iter().map(|a| format!("{a:.2}")).collect();
    println!("folds: [{}]", folds.join(", "));
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json())
            .with_context(|| format!("writing {}", out.display()))?;
        println!("report: {}", out.display());
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<u8> {
    let dims: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--sizes '{}' is not D,M,N", args.sizes))?;
    let [d, m, n] = dims.as_slice() else {
        bail!("--sizes needs exactly three values, got '{}'", args.sizes);
    };
    let mut reports = collab_suite(args.seed, *d, *m, *n, 50, args.corrupt_gradient)?;
    reports.push(featnet_suite(args.seed, 10, args.corrupt_gradient)?);
    let mut all_passed = true;
    for r in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{:<8} max relative error {:.3e}  {verdict}", r.name, r.max_rel_err);
        if !r.passed() {
            all_passed = false;
            eprintln!(
                "{} exceeds tolerance {PASS_TOLERANCE:.0e} (got {:.3e})",
                r.name, r.max_rel_err
            );
        }
    }
    Ok(if all_passed { 0 } else { 1 })
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<u8> {
    let cfg = args.config.resolve()?;
    echo_config(&cfg);
    let modes: Vec<TrainMode> = args
        .modes
        .split(',')
        .map(|m| m.trim().parse::<TrainMode>())
        .collect::<cocokit_core::Result<_>>()?;
    let set = ingest_for(cfg.image_size, load_images(&args.data)?);
    let results = compare_modes(&cfg, &set, &modes, args.k)?;
    println!("mode               mean ± std (%)");
    for (mode, report) in &results {
        println!("{}", report_row(&mode.to_string(), report));
    }
    Ok(0)
}

fn cmd_sigtest(args: SigtestArgs) -> anyhow::Result<u8> {
    let p = binomial_sign_test(args.wins, args.trials, args.null_p)?;
    let adjusted = bonferroni(args.alpha, args.comparisons)?;
    println!(
        "wins {} of {} trials against null p = {}",
        args.wins, args.trials, args.null_p
    );
    println!("one-tail p-value: {p:.4}");
    println!(
        "adjusted alpha ({} / {}): {adjusted:.4}",
        args.alpha, args.comparisons
    );
    let verdict = if p < adjusted { "significant" } else { "not significant" };
    println!("verdict: {verdict}");
    Ok(0)
}

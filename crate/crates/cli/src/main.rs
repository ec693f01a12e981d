use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tce_core::config::{parse_config, TrainConfig};
use tce_core::dataforge::{
    bayes_oracle_accuracy, generate_synthetic, load_feature_dataset, synthetic_word_vectors, write_feature_dataset,
    Dataset, Encoding, Split, SynthSpec,
};
use tce_core::embedspace::{format_word_vectors, load_word_vectors, WordVecTable};
use tce_core::eval::{MetricsReport, SmaxMode, SweepOptions};
use tce_core::model::{read_checkpoint, write_checkpoint};
use tce_core::trainer::{ablation_csv, ablation_matrix, evaluate, evaluate_with_curve, train, TrainOptions};
use tce_core::{Result, TceError};

#[derive(Parser)]
#[command(
    name = "tce",
    version,
    about = "Translational concept embeddings for compositional zero-shot learning"
)]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic compositional dataset and matching word vectors.
    GenData(GenDataArgs),
    /// Train a model (or the loss ablation) and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Merge metric CSVs of several runs into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 16)]
    attrs: usize,
    #[arg(long, default_value_t = 12)]
    objs: usize,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.6)]
    seen_frac: f64,
    /// Samples per concept in each split.
    #[arg(long, default_value_t = 50)]
    per_concept: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.8)]
    context: f64,
    /// Width of the generated word vectors.
    #[arg(long, default_value_t = 300)]
    word_dim: usize,
    /// Falls back to TCE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "text")]
    encoding: String,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Word-vector file; defaults to words.txt next to the manifest if present.
    #[arg(long)]
    words: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Falls back to the config file, then TCE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run a loss ablation instead of a single model (`table3`).
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, default_value = "global")]
    smax_mode: String,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for metrics.csv and curve.csv; metrics go to stdout
    /// regardless.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Runs as `name=path/to/metrics.csv`, or just the path.
    #[arg(required = true)]
    runs: Vec<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TceError + '_ {
    move |e| TceError::io(path.display().to_string(), e)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("TCE_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| TceError::Config(format!("TCE_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    if !(args.seen_frac > 0.0 && args.seen_frac < 1.0) {
        return Err(TceError::Config(format!(
            "--seen-frac must lie in (0, 1), got {}",
            args.seen_frac
        )));
    }
    if !(0.0..=1.0).contains(&args.context) {
        return Err(TceError::Config(format!(
            "--context must lie in [0, 1], got {}",
            args.context
        )));
    }
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(TceError::Config(format!(
            "--noise must be nonnegative, got {}",
            args.noise
        )));
    }
    let encoding: Encoding = args
        .encoding
        .parse()
        .map_err(|_| TceError::Config(format!("--encoding must be text or bin, got {:?}", args.encoding)))?;
    let seed = args.seed.or(env_seed()?).unwrap_or(0);
    let spec = SynthSpec {
        num_attrs: args.attrs,
        num_objs: args.objs,
        feature_dim: args.feature_dim,
        seen_fraction: args.seen_frac,
        samples_per_concept: args.per_concept,
        noise_sigma: args.noise,
        context_strength: args.context,
        seed,
    };
    let dataset = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    write_feature_dataset(&dataset, &args.out.join("data.txt"), encoding)?;
    let truth = dataset.truth().expect("generated data keeps its truth");
    let parsed = synthetic_word_vectors(dataset.space(), truth, args.word_dim, seed)?;
    let space = dataset.space();
    let tokens = space.attributes().iter().chain(space.objects());
    let words = format_word_vectors(tokens.map(|t| (t.as_str(), parsed.vectors[t].as_slice())));
    write_file(&args.out.join("words.txt"), words)?;
    let oracle = bayes_oracle_accuracy(&dataset, Split::Test, &SweepOptions::default())?;
    println!(
        "attrs {} objs {} seen {} unseen {}",
        space.num_attrs(),
        space.num_objs(),
        space.seen().len(),
        space.unseen().len()
    );
    for split in Split::ALL {
        println!("{split} {}", dataset.split_len(split));
    }
    println!(
        "oracle test closed_unseen {:.2} open_unseen {:.2} open_seen {:.2}",
        oracle.closed_unseen, oracle.open_unseen, oracle.open_seen
    );
    Ok(())
}

fn load_words(dataset: &Dataset, explicit: Option<&Path>, data: &Path, config: &TrainConfig) -> Result<WordVecTable> {
    let space = dataset.space();
    let mut required = space.attributes().to_vec();
    required.extend(space.objects().iter().cloned());
    let default = data.parent().unwrap_or(Path::new(".")).join("words.txt");
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None if default.is_file() => Some(default),
        None => None,
    };
    let table = match &path {
        Some(p) => load_word_vectors(p, &required, config.word_dim, config.seed)?,
        None => {
            log::warn!(
                "no word vectors given, using random vectors of width {}",
                config.word_dim
            );
            WordVecTable::random(&required, config.word_dim, config.seed)?
        }
    };
    if !table.fallback_tokens().is_empty() {
        log::warn!("{} tokens use random fallback vectors", table.fallback_tokens().len());
    }
    Ok(table)
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut file_has_seed = false;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let entries = parse_config(&text)?;
        file_has_seed = entries.contains_key("seed");
        config.apply(&entries)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| TceError::Config(format!("--set expects key=value, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(m) = &args.model {
        config.set("model", m)?;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.lr_main = v;
    }
    if let Some(v) = args.threads {
        config.threads = v;
    }
    match (args.seed, file_has_seed, env_seed()?) {
        (Some(s), _, _) => config.seed = s,
        (None, false, Some(s)) => config.seed = s,
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run_manifest(args: &TrainArgs, config: &TrainConfig) -> String {
    let opt = |p: &Option<PathBuf>| {
        p.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "-".into())
    };
    format!(
        "# tool: tce {}\n# data: {}\n# words: {}\n# config_file: {}\n# out: {}\n# ablation: {}\n{}",
        env!("CARGO_PKG_VERSION"),
        args.data.display(),
        opt(&args.words),
        opt(&args.config),
        args.out.display(),
        args.ablation.as_deref().unwrap_or("-"),
        config.render()
    )
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let config = resolve_config(args)?;
    if let Some(a) = &args.ablation {
        if a != "table3" {
            return Err(TceError::Config(format!("--ablation supports only table3, got {a:?}")));
        }
    }
    create_dir(&args.out)?;
    write_file(&args.out.join("run_manifest.txt"), run_manifest(args, &config))?;
    let dataset = load_feature_dataset(&args.data)?;
    let words = load_words(&dataset, args.words.as_deref(), &args.data, &config)?;
    if args.ablation.is_some() {
        let rows = ablation_matrix(&dataset, &words, &config)?;
        let csv = ablation_csv(&rows);
        write_file(&args.out.join("ablation.csv"), &csv)?;
        print!("{csv}");
        return Ok(());
    }
    let outcome = train(&dataset, &words, &config, TrainOptions::default())?;
    write_checkpoint(&args.out.join("model.ckpt"), &outcome.best)?;
    write_file(&args.out.join("train_log.csv"), outcome.log.to_csv())?;
    if let Some(r) = outcome.log.best_val {
        write_file(&args.out.join("val_metrics.csv"), r.to_csv())?;
    }
    println!(
        "trained {} for {} epochs, kept epoch {}",
        config.model,
        config.epochs,
        outcome.log.best_epoch.unwrap_or(config.epochs)
    );
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    if args.bins == 0 {
        return Err(TceError::Config("--bins must be positive".into()));
    }
    if args.threads == 0 {
        return Err(TceError::Config("--threads must be positive".into()));
    }
    let options = SweepOptions {
        bins: args.bins,
        smax_mode: args.smax_mode.parse::<SmaxMode>()?,
    };
    let model = read_checkpoint(&args.checkpoint)?;
    let dataset = load_feature_dataset(&args.data)?;
    if model.num_attrs() != dataset.space().num_attrs()
        || model.num_objs() != dataset.space().num_objs()
        || model.feature_dim() != dataset.feature_dim()
    {
        return Err(TceError::Compat(format!(
            "checkpoint expects {} attributes, {} objects and {}-dim features; data has {}, {} and {}",
            model.num_attrs(),
            model.num_objs(),
            model.feature_dim(),
            dataset.space().num_attrs(),
            dataset.space().num_objs(),
            dataset.feature_dim()
        )));
    }
    let (report, curve) = match evaluate_with_curve(&model, &dataset, split, &options, args.threads) {
        Ok(r) => (r.0, Some(r.1)),
        Err(TceError::Precondition(msg)) => {
            log::warn!("{msg}; skipping the bias sweep");
            (evaluate(&model, &dataset, split, &options, args.threads)?, None)
        }
        Err(e) => return Err(e),
    };
    let csv = report.to_csv();
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("metrics.csv"), &csv)?;
        if let Some(c) = &curve {
            write_file(&out.join("curve.csv"), c.to_csv())?;
        }
    }
    print!("{csv}");
    Ok(())
}

fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut values = std::collections::HashMap::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let (name, v) = line
            .split_once(',')
            .ok_or_else(|| TceError::Format(format!("{}: line {}: expected metric,value", path.display(), k + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| TceError::Format(format!("{}: line {}: bad value {v:?}", path.display(), k + 1)))?;
        values.insert(name.trim().to_string(), v);
    }
    let get = |n: &str| {
        values
            .get(n)
            .copied()
            .ok_or_else(|| TceError::Format(format!("{}: missing metric {n}", path.display())))
    };
    Ok(MetricsReport {
        closed_unseen: get("closed_unseen")?,
        open_unseen: get("open_unseen")?,
        open_seen: get("open_seen")?,
        unseen_hm: get("unseen_hm")?,
        all_hm: get("all_hm")?,
        auc: get("auc")?,
        attr_acc: get("attr_acc")?,
        obj_acc: get("obj_acc")?,
    })
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let mut out = String::from("run");
    for n in MetricsReport::NAMES {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for run in &args.runs {
        let (name, path) = match run.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(run);
                let name = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| run.clone());
                (name, p)
            }
        };
        let r = read_metrics(&path)?;
        out.push_str(&name);
        for v in r.values() {
            out.push_str(&format!(",{v:.2}"));
        }
        out.push('\n');
    }
    match &args.out {
        Some(p) => write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

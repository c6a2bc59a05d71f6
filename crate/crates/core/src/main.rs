//! Batch front-end: ingest corpora, train chains, evaluate heldout
//! perplexity, extract feature matrices, and render diagnostics.

use clap::{Args, Parser, Subcommand};
use nbfa::corpus::{
    format_bow, load_bow, prune_vocabulary, split_heldout, write_vocabulary, BowFormat,
    SparseCountMatrix, Vocabulary,
};
use nbfa::error::Error;
use nbfa::eval::{diagnostics, extract_features, svg_line_chart, PerplexityCollector};
use nbfa::model::{ModelKind, TruncationMode};
use nbfa::samplers::{
    ChainCheckpoint, ChainConfig, ChainTrace, Collector, EtaMode, SamplerKind, CHECKPOINT_VERSION,
};
use nbfa::RngStream;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "nbfa", version, about = "Negative binomial factor analysis and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a bag-of-words file, prune rare covariates, and write the
    /// canonical uci-bow corpus plus vocabulary sidecar.
    Ingest(IngestArgs),
    /// Run one or more Gibbs chains and report heldout perplexity.
    Train(TrainArgs),
    /// Extract per-sample feature vectors from a trained checkpoint.
    Features(FeaturesArgs),
    /// Merge chain traces and render K+ trace plots.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "uci-bow")]
    format: String,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Keep covariates occurring in at least this many samples.
    #[arg(long, default_value_t = 5)]
    min_doc_freq: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "uci-bow")]
    format: String,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: String,
    #[arg(long)]
    sampler: String,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 2500)]
    burnin: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long = "K-init", default_value_t = 400)]
    k_init: usize,
    #[arg(long = "K-star", default_value_t = 20)]
    k_star: usize,
    /// Dirichlet smoothing parameter: a positive value or "sample".
    #[arg(long, default_value = "0.05")]
    eta: String,
    #[arg(long, default_value = "adaptive")]
    truncation: String,
    /// Fraction of each sample's tokens used for training; < 1 triggers a
    /// heldout split and perplexity evaluation.
    #[arg(long, default_value_t = 1.0)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    a0: f64,
    #[arg(long, default_value_t = 0.01)]
    b0: f64,
    #[arg(long, default_value_t = 1.0)]
    e0: f64,
    #[arg(long, default_value_t = 1.0)]
    f0: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "uci-bow")]
    format: String,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    post_iters: usize,
    #[arg(long, default_value_t = 500)]
    post_collect: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Trace CSV files, one per chain.
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also render an SVG plot of K+ vs iteration.
    #[arg(long, default_value_t = true)]
    plot: bool,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Parameter(_) | Error::EmptyVocabulary => 2,
        Error::Config(_) => 3,
        Error::Capability(_) => 4,
        Error::Schema(_) => 5,
        _ => 1,
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Features(args) => cmd_features(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn sha256_hex(path: &Path) -> nbfa::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn load_corpus(
    path: &Path,
    format: &str,
    vocab: Option<&PathBuf>,
) -> nbfa::Result<(Vocabulary, SparseCountMatrix)> {
    let format: BowFormat = format.parse()?;
    load_bow(path, format, vocab.map(|p| p.as_path()))
}

fn cmd_ingest(args: IngestArgs) -> nbfa::Result<()> {
    let (vocab, matrix) = load_corpus(&args.input, &args.format, args.vocab.as_ref())?;
    let (vocab, matrix) = prune_vocabulary(&vocab, &matrix, args.min_doc_freq)?;
    std::fs::create_dir_all(&args.out)?;
    let corpus_path = args.out.join("corpus.uci.txt");
    let vocab_path = args.out.join("corpus.vocab.txt");
    std::fs::write(&corpus_path, format_bow(&matrix))?;
    write_vocabulary(&vocab_path, &vocab)?;
    println!(
        "ingested: V={} J={} tokens={} nnz={}",
        matrix.num_covariates(),
        matrix.num_samples(),
        matrix.total_count(),
        matrix.nnz()
    );
    println!("wrote {}", corpus_path.display());
    println!("wrote {}", vocab_path.display());
    Ok(())
}

#[derive(Serialize)]
struct RunManifest {
    software: String,
    version: String,
    command: String,
    config: ChainConfig,
    chains: usize,
    train_fraction: f64,
    corpus_path: String,
    corpus_sha256: String,
    seed: u64,
    timestamp_unix: u64,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct ChainReport {
    model: String,
    sampler: String,
    eta: f64,
    train_fraction: f64,
    seed: u64,
    #[serde(rename = "S")]
    s: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    perplexity: Option<f64>,
    #[serde(rename = "K_active_mean")]
    k_active_mean: f64,
    wall_minutes: f64,
}

#[derive(Serialize)]
struct TrainReport {
    chains: Vec<ChainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perplexity_mean: Option<f64>,
}

/// Collector used when no heldout split is requested.
struct NullCollector {
    events: usize,
}

impl Collector for NullCollector {
    fn collect(
        &mut self,
        _state: &nbfa::model::ModelState,
        _rng: &mut RngStream,
    ) -> nbfa::Result<()> {
        self.events += 1;
        Ok(())
    }
}

fn cmd_train(args: TrainArgs) -> nbfa::Result<()> {
    let (_vocab, matrix) = load_corpus(&args.corpus, &args.format, args.vocab.as_ref())?;
    let eta: EtaMode = args.eta.parse()?;
    let truncation = match args.truncation.as_str() {
        "adaptive" => TruncationMode::Adaptive,
        "fixed" => TruncationMode::Fixed,
        other => return Err(Error::Config(format!("unknown truncation mode {other:?}"))),
    };
    let model: ModelKind = args.model.parse()?;
    let sampler: SamplerKind = args.sampler.parse()?;
    let config = ChainConfig {
        model,
        sampler,
        iterations: args.iters,
        burn_in: args.burnin,
        collect_every: args.thin,
        k_init: args.k_init,
        k_star: args.k_star,
        truncation,
        seed: args.seed,
        eta,
        hyper: nbfa::model::Hyperparams { a0: args.a0, b0: args.b0, e0: args.e0, f0: args.f0 },
    };
    config.validate()?;
    if !(args.train_fraction > 0.0 && args.train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "--train-fraction must lie in (0, 1], got {}",
            args.train_fraction
        )));
    }
    if args.chains == 0 {
        return Err(Error::Config("--chains must be >= 1".into()));
    }
    std::fs::create_dir_all(&args.out)?;

    let split = if args.train_fraction < 1.0 {
        Some(split_heldout(&matrix, args.train_fraction, &RngStream::new(args.seed))?)
    } else {
        None
    };
    let train_matrix = split.as_ref().map(|s| s.train.clone()).unwrap_or_else(|| matrix.clone());

    let max_workers = std::env::var("NBFA_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));

    let mut reports: Vec<ChainReport> = Vec::with_capacity(args.chains);
    let mut chain_ids: Vec<usize> = (0..args.chains).collect();
    while !chain_ids.is_empty() {
        let batch: Vec<usize> = chain_ids.drain(..chain_ids.len().min(max_workers)).collect();
        let mut handles = Vec::new();
        for chain_id in batch {
            let config = ChainConfig { seed: args.seed.wrapping_add(chain_id as u64), ..config };
            let train_matrix = train_matrix.clone();
            let split = split.clone();
            let out_dir = if args.chains == 1 {
                args.out.clone()
            } else {
                args.out.join(format!("chain{chain_id}"))
            };
            let resume = args.resume.clone();
            let train_fraction = args.train_fraction;
            let checkpoint_every = args.checkpoint_every;
            handles.push(std::thread::spawn(move || {
                run_one_chain(
                    config,
                    &train_matrix,
                    split.as_ref(),
                    &out_dir,
                    resume.as_deref(),
                    train_fraction,
                    checkpoint_every,
                )
            }));
        }
        for h in handles {
            let report = h.join().map_err(|_| Error::Numeric("chain thread panicked".into()))??;
            reports.push(report);
        }
    }
    reports.sort_by_key(|r| r.seed);

    let perplexity_mean = if reports.iter().all(|r| r.perplexity.is_some()) && !reports.is_empty()
    {
        Some(reports.iter().map(|r| r.perplexity.unwrap()).sum::<f64>() / reports.len() as f64)
    } else {
        None
    };
    let report = TrainReport { chains: reports, perplexity_mean };
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let manifest = RunManifest {
        software: "nbfa".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "train".into(),
        config,
        chains: args.chains,
        train_fraction: args.train_fraction,
        corpus_path: args.corpus.display().to_string(),
        corpus_sha256: sha256_hex(&args.corpus)?,
        seed: args.seed,
        timestamp_unix: unix_now(),
        outputs: vec![report_path.display().to_string()],
    };
    std::fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_one_chain(
    config: ChainConfig,
    train: &SparseCountMatrix,
    split: Option<&nbfa::corpus::HeldoutSplit>,
    out_dir: &Path,
    resume: Option<&Path>,
    train_fraction: f64,
    checkpoint_every: usize,
) -> nbfa::Result<ChainReport> {
    std::fs::create_dir_all(out_dir)?;
    let t0 = Instant::now();

    enum AnyCollector {
        Perplexity(PerplexityCollector),
        Null(NullCollector),
    }
    impl Collector for AnyCollector {
        fn collect(
            &mut self,
            state: &nbfa::model::ModelState,
            rng: &mut RngStream,
        ) -> nbfa::Result<()> {
            match self {
                AnyCollector::Perplexity(c) => c.collect(state, rng),
                AnyCollector::Null(c) => c.collect(state, rng),
            }
        }
    }

    let mut collector = match split {
        Some(split) => {
            AnyCollector::Perplexity(PerplexityCollector::new(config.model, config.k_star, split))
        }
        None => AnyCollector::Null(NullCollector { events: 0 }),
    };

    // run in checkpoint_every-sized segments so long schedules are resumable
    let (mut state, mut rng, mut done_iter, mut trace) = match resume {
        Some(path) => {
            let ck = ChainCheckpoint::load(path)?;
            (ck.state, RngStream::restore(&ck.rng), ck.iteration, ChainTrace::default())
        }
        None => {
            let mut rng = RngStream::new(config.seed);
            let state = nbfa::model::init_state(
                config.model,
                config.sampler.representation(),
                config.truncation,
                config.k_init,
                &config.hyper,
                config.eta.initial_value(),
                train,
                &mut rng,
            )?;
            (state, rng, 0, ChainTrace::default())
        }
    };
    while done_iter < config.iterations {
        let next = if checkpoint_every == 0 {
            config.iterations
        } else {
            (done_iter + checkpoint_every).min(config.iterations)
        };
        let segment = ChainConfig { iterations: next, ..config };
        let (seg_trace, new_state) = nbfa::samplers::resume_chain(
            &segment,
            train,
            &mut state,
            &mut rng,
            done_iter,
            &mut collector,
        )?;
        state = new_state;
        trace.rows.extend(seg_trace.rows);
        done_iter = next;
        let ck = ChainCheckpoint {
            version: CHECKPOINT_VERSION,
            iteration: done_iter,
            config,
            state: state.clone(),
            rng: rng.snapshot(),
        };
        let name = if done_iter == config.iterations {
            "checkpoint_final.json".to_string()
        } else {
            format!("checkpoint_{done_iter:06}.json")
        };
        ck.save(&out_dir.join(name))?;
    }

    std::fs::write(out_dir.join("trace.csv"), trace.to_csv())?;

    let (s, perplexity) = match &collector {
        AnyCollector::Perplexity(c) => {
            (c.acc.samples_collected, Some(c.acc.perplexity()?))
        }
        AnyCollector::Null(c) => (c.events, None),
    };
    Ok(ChainReport {
        model: config.model.to_string(),
        sampler: config.sampler.to_string(),
        eta: state.eta,
        train_fraction,
        seed: config.seed,
        s,
        perplexity,
        k_active_mean: trace.mean_k_active(config.burn_in),
        wall_minutes: t0.elapsed().as_secs_f64() / 60.0,
    })
}

fn cmd_features(args: FeaturesArgs) -> nbfa::Result<()> {
    let (_vocab, matrix) = load_corpus(&args.corpus, &args.format, args.vocab.as_ref())?;
    let ck = ChainCheckpoint::load(&args.checkpoint)?;
    if ck.state.kind == ModelKind::Dcmlda {
        return Err(Error::Capability(
            "DCMLDA does not provide sample-specific feature vectors; train pfa or nbfa".into(),
        ));
    }
    if matrix.num_covariates() != ck.state.v_total {
        return Err(Error::Schema(format!(
            "corpus has V={} but the checkpoint was trained with V={}",
            matrix.num_covariates(),
            ck.state.v_total
        )));
    }
    let rng = RngStream::new(args.seed);
    let features =
        extract_features(&ck.state, &matrix, args.post_iters, args.post_collect, &rng)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&args.out, features.to_csv())?;
    println!("wrote {} ({} samples x {} factors)", args.out.display(), features.columns.len(), features.k);
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> nbfa::Result<()> {
    if args.traces.is_empty() {
        return Err(Error::Config("diagnose needs at least one trace file".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let mut merged = String::from("series,iteration,k_active,k_active_moving_avg,assign_ops,wall_ms\n");
    let mut series = Vec::new();
    for path in &args.traces {
        let text = std::fs::read_to_string(path)?;
        let trace = ChainTrace::from_csv(&text)?;
        let report = diagnostics(&trace);
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "trace".into());
        for i in 0..report.iterations.len() {
            merged.push_str(&format!(
                "{},{},{},{},{},{}\n",
                label,
                report.iterations[i],
                report.k_active[i],
                report.k_active_moving_avg[i],
                report.assign_ops[i],
                report.wall_ms[i]
            ));
        }
        series.push((
            label,
            report
                .iterations
                .iter()
                .zip(&report.k_active)
                .map(|(&i, &k)| (i as f64, k as f64))
                .collect::<Vec<_>>(),
        ));
    }
    let csv_path = args.out.join("diagnostics.csv");
    std::fs::write(&csv_path, merged)?;
    println!("wrote {}", csv_path.display());
    if args.plot {
        let svg = svg_line_chart("active factors by iteration", &series);
        let svg_path = args.out.join("k_active.svg");
        std::fs::write(&svg_path, svg)?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

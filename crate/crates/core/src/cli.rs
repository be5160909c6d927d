//! `pairforge` command-line driver.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::contrastive::{
    batch_loss, examples_from_pairs, train_head, ContrastiveParams, PairExample, ProjectionHead,
    ScoreMode,
};
use crate::corpus::{
    read_embedding_corpus, read_pairs, read_qa_records, write_jsonl, write_pairs, Corpus,
};
use crate::embed::{embed_corpus_file, HttpProvider, OfflineProvider, ProviderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_from_files, DEFAULT_K_VALUES};
use crate::knn::{BruteForceIndex, KnnIndex, NeighborSearch};
use crate::mining::{
    blend_datasets, mine_corpus, MiningConfig, DEFAULT_MAX_SIZE, DEFAULT_MINED_FRACTION,
};
use crate::rag::{build_pairs, NegativeSource, OverlapConfig, PairAssemblyConfig};
use crate::stats::{
    compute_thresholds, sample_pairwise_distances, DistributionSummary, DEFAULT_SAMPLE_COUNT,
};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (record format v1)");

#[derive(Debug, Parser)]
#[command(name = "pairforge", version = VERSION, about = "Embedding pair mining, RAG pair building, contrastive scoring and recall@k evaluation")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the summary as a JSON object.
    #[arg(long, global = true)]
    json: bool,

    /// Suppress the summary line.
    #[arg(long, global = true)]
    quiet: bool,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Cosine,
    Euclidean,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cosine => ScoreMode::Cosine,
            ModeArg::Euclidean => ScoreMode::Euclidean,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed `{"id","text"}` lines into a corpus file (resumable).
    Embed(EmbedArgs),
    /// Pairwise-distance distribution summary of a corpus.
    Stats(StatsArgs),
    /// Mine hard positive/negative pairs from a corpus.
    Mine(MineArgs),
    /// Build validated context/question pairs from QA records.
    BuildRagPairs(RagArgs),
    /// Mix mined pairs into a synthetic pair set.
    Blend(BlendArgs),
    /// Score pairs with the contrastive loss.
    ScorePairs(ScoreArgs),
    /// Train a linear projection head on pairs.
    TrainToy(TrainArgs),
    /// Recall@k of a query set against a document corpus.
    EvalRecall(EvalArgs),
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "offline")]
    endpoint: Option<String>,
    #[arg(long, default_value = "text-embedding-ada-002")]
    model: String,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Use the deterministic hash-seeded provider instead of HTTP.
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    sample_count: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 50.0, 95.0])]
    percentiles: Vec<f64>,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    lower_pct: f64,
    #[arg(long, default_value_t = 95.0)]
    upper_pct: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SIZE)]
    max_size: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    sample_count: usize,
    /// Linear scan instead of the KD-tree.
    #[arg(long)]
    brute_force: bool,
    /// Allow an anchor to be its own positive.
    #[arg(long)]
    keep_self: bool,
}

#[derive(Debug, Args)]
struct RagArgs {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    overlap_threshold: f64,
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    /// Cap on positives per query (default: every accepted question).
    #[arg(long)]
    positives: Option<usize>,
    /// Draw negatives from questions only.
    #[arg(long)]
    questions_only: bool,
    /// Write rejected QA items with their overlap scores here.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BlendArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    mined: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MINED_FRACTION)]
    fraction: f64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Cosine)]
    mode: ModeArg,
    /// Project vectors through a trained head first.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Write the score lines here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Cosine)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Output dimension of the head (default: input dimension).
    #[arg(long)]
    out_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    query_corpus: PathBuf,
    #[arg(long)]
    doc_corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_VALUES.to_vec())]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Cosine)]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_ranks: Option<PathBuf>,
    /// Project query and document vectors through a trained head first.
    #[arg(long)]
    head: Option<PathBuf>,
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let summary = pool.install(|| dispatch(cli))?;
    if let Some(summary) = summary {
        emit(cli, &summary);
    }
    Ok(())
}

/// Summary with a human-readable line and a JSON form.
struct Summary {
    line: String,
    json: serde_json::Value,
}

fn emit(cli: &Cli, summary: &Summary) {
    if cli.json {
        println!("{}", summary.json);
    } else if !cli.quiet {
        println!("{}", summary.line);
    }
}

fn dispatch(cli: &Cli) -> Result<Option<Summary>> {
    match &cli.command {
        Command::Embed(a) => cmd_embed(a, cli.seed).map(Some),
        Command::Stats(a) => cmd_stats(a, cli.seed).map(|()| None),
        Command::Mine(a) => cmd_mine(a, cli.seed).map(Some),
        Command::BuildRagPairs(a) => cmd_rag(a, cli.seed).map(Some),
        Command::Blend(a) => cmd_blend(a, cli.seed).map(Some),
        Command::ScorePairs(a) => cmd_score(a).map(Some),
        Command::TrainToy(a) => cmd_train(a, cli.seed).map(Some),
        Command::EvalRecall(a) => cmd_eval(a).map(Some),
    }
}

fn cmd_embed(a: &EmbedArgs, seed: u64) -> Result<Summary> {
    let embedded = if a.offline {
        let provider = OfflineProvider::new(a.dim, seed)?;
        embed_corpus_file(&provider, &a.input, &a.out)?
    } else {
        let endpoint = a.endpoint.clone().expect("clap enforces --endpoint");
        let mut config = ProviderConfig::from_env(endpoint, a.model.clone());
        config.batch_size = a.batch_size;
        config.concurrency = a.concurrency;
        config.max_retries = a.max_retries;
        config.timeout = Duration::from_secs(a.timeout);
        let provider = HttpProvider::new(config)?;
        embed_corpus_file(&provider, &a.input, &a.out)?
    };
    Ok(Summary {
        line: format!("embedded {embedded} records into {}", a.out.display()),
        json: json!({ "embedded": embedded, "out": a.out }),
    })
}

fn corpus_distribution(
    corpus: &Corpus,
    sample_count: usize,
    seed: u64,
) -> Result<crate::stats::DistanceDistribution> {
    let vectors: Vec<&[f64]> = corpus.vectors().collect();
    sample_pairwise_distances(&vectors, sample_count, seed)
}

fn cmd_stats(a: &StatsArgs, seed: u64) -> Result<()> {
    let corpus = read_embedding_corpus(&a.corpus)?;
    let dist = corpus_distribution(&corpus, a.sample_count, seed)?;
    let summary = DistributionSummary::from_distribution(&dist, &a.percentiles)?;
    println!("{}", summary.to_json());
    Ok(())
}

fn cmd_mine(a: &MineArgs, seed: u64) -> Result<Summary> {
    let corpus = read_embedding_corpus(&a.corpus)?;
    let dist = corpus_distribution(&corpus, a.sample_count, seed)?;
    let thresholds = compute_thresholds(&dist, a.lower_pct, a.upper_pct)?;
    let config = MiningConfig {
        thresholds,
        max_size: a.max_size,
        seed,
        exclude_self: !a.keep_self,
    };
    let index: Box<dyn NeighborSearch> = if a.brute_force {
        Box::new(BruteForceIndex::from_corpus(&corpus)?)
    } else {
        Box::new(KnnIndex::from_corpus(&corpus)?)
    };
    let outcome = mine_corpus(&corpus, index.as_ref(), &config)?;
    write_pairs(&a.out, &outcome.pairs)?;
    Ok(Summary {
        line: format!(
            "anchors={} dropped={} pairs={} lower_bound={} upper_bound={}",
            outcome.anchors_processed,
            outcome.dropped,
            outcome.pairs.len(),
            thresholds.lower_bound,
            thresholds.upper_bound
        ),
        json: json!({
            "anchors": outcome.anchors_processed,
            "dropped": outcome.dropped,
            "pairs": outcome.pairs.len(),
            "thresholds": thresholds,
        }),
    })
}

fn cmd_rag(a: &RagArgs, seed: u64) -> Result<Summary> {
    let records = read_qa_records(&a.qa)?;
    let overlap = OverlapConfig::new(a.overlap_threshold)?;
    let assembly = PairAssemblyConfig {
        positives_per_query: a.positives,
        negatives_per_query: a.negatives,
        seed,
        negative_source: if a.questions_only {
            NegativeSource::QuestionsOnly
        } else {
            NegativeSource::QuestionsAndAnswers
        },
    };
    let outcome = build_pairs(&records, &assembly, &overlap)?;
    write_pairs(&a.out, &outcome.training_pairs())?;
    if let Some(audit) = &a.audit {
        write_jsonl(audit, &outcome.rejected)?;
    }
    Ok(Summary {
        line: format!(
            "records={} pairs={} skipped={} accepted_items={} rejected_items={}",
            records.len(),
            outcome.pairs.len(),
            outcome.skipped_records,
            outcome.accepted_items,
            outcome.rejected.len()
        ),
        json: json!({
            "records": records.len(),
            "pairs": outcome.pairs.len(),
            "skipped": outcome.skipped_records,
            "accepted_items": outcome.accepted_items,
            "rejected_items": outcome.rejected.len(),
        }),
    })
}

fn cmd_blend(a: &BlendArgs, seed: u64) -> Result<Summary> {
    let synthetic = read_pairs(&a.synthetic)?;
    let mined = read_pairs(&a.mined)?;
    let blended = blend_datasets(&synthetic, &mined, a.fraction, seed)?;
    write_pairs(&a.out, &blended)?;
    let from_mined = (a.fraction * synthetic.len() as f64).round() as usize;
    Ok(Summary {
        line: format!(
            "pairs={} from_mined={} from_synthetic={}",
            blended.len(),
            from_mined,
            blended.len() - from_mined
        ),
        json: json!({
            "pairs": blended.len(),
            "from_mined": from_mined,
            "from_synthetic": blended.len() - from_mined,
        }),
    })
}

fn load_examples(pairs: &Path, corpus: &Path, head: Option<&Path>) -> Result<Vec<PairExample>> {
    let pairs = read_pairs(pairs)?;
    let corpus = read_embedding_corpus(corpus)?;
    let mut examples = examples_from_pairs(&pairs, &corpus)?;
    if let Some(path) = head {
        let head = ProjectionHead::load(path)?;
        for e in &mut examples {
            e.anchor = head.project(&e.anchor)?;
            e.other = head.project(&e.other)?;
        }
    }
    Ok(examples)
}

fn cmd_score(a: &ScoreArgs) -> Result<Summary> {
    let examples = load_examples(&a.pairs, &a.corpus, a.head.as_deref())?;
    let params = ContrastiveParams {
        alpha: a.alpha,
        score_mode: a.mode.into(),
        ..Default::default()
    };
    let batch = batch_loss(&examples, &params)?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        for s in &batch.scores {
            serde_json::to_writer(&mut *w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    };
    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w)
                .and_then(|()| w.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(Summary {
        line: format!("pairs={} mean_loss={}", batch.scores.len(), batch.mean_loss),
        json: json!({ "pairs": batch.scores.len(), "mean_loss": batch.mean_loss }),
    })
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<Summary> {
    let examples = load_examples(&a.pairs, &a.corpus, None)?;
    let input_dim = examples
        .first()
        .map(|e| e.anchor.len())
        .ok_or_else(|| Error::InvalidArgument("no training pairs".into()))?;
    let params = ContrastiveParams {
        alpha: a.alpha,
        score_mode: a.mode.into(),
        learning_rate: a.lr,
        epochs: a.epochs,
    };
    let outcome = train_head(&examples, &params, a.out_dim.unwrap_or(input_dim), seed)?;
    outcome.head.save(&a.out)?;
    let initial = outcome.loss_trace[0];
    let final_loss = outcome.final_loss();
    Ok(Summary {
        line: format!(
            "pairs={} epochs={} initial_loss={initial} final_loss={final_loss}",
            examples.len(),
            a.epochs
        ),
        json: json!({
            "pairs": examples.len(),
            "epochs": a.epochs,
            "initial_loss": initial,
            "final_loss": final_loss,
        }),
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<Summary> {
    let query_corpus = read_embedding_corpus(&a.query_corpus)?;
    let doc_corpus = read_embedding_corpus(&a.doc_corpus)?;
    let head = a.head.as_deref().map(ProjectionHead::load).transpose()?;
    let evaluation = evaluate_from_files(
        &a.queries,
        &query_corpus,
        &doc_corpus,
        &a.k,
        a.mode.into(),
        head.as_ref(),
    )?;
    let report_json = evaluation.report.to_json_pretty();
    match &a.out {
        Some(path) => {
            std::fs::write(path, format!("{report_json}\n")).map_err(|e| Error::io(path, e))?
        }
        None => println!("{report_json}"),
    }
    if let Some(path) = &a.dump_ranks {
        write_jsonl(path, &evaluation.ranks)?;
    }
    let line = evaluation
        .report
        .recall_at
        .iter()
        .map(|(k, v)| format!("recall@{k}={v:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Summary {
        line,
        json: serde_json::to_value(&evaluation.report).expect("report always serializes"),
    })
}

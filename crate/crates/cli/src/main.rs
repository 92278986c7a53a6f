//! `aspect-tagger`: ingest, train, evaluate and run k-fold experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use aspect_tagger::Execution;
use commands::{GradcheckFailed, InputArgs};
use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "aspect-tagger", version, about = "BiLSTM-CRF aspect term extraction")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the model and training seeds
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    paths: PathOverrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct PathOverrides {
    #[arg(long, global = true)]
    train_xml: Option<PathBuf>,
    #[arg(long, global = true)]
    train_conllu: Option<PathBuf>,
    #[arg(long, global = true)]
    dev_xml: Option<PathBuf>,
    #[arg(long, global = true)]
    dev_conllu: Option<PathBuf>,
    #[arg(long, global = true)]
    test_xml: Option<PathBuf>,
    #[arg(long, global = true)]
    test_conllu: Option<PathBuf>,
    #[arg(long, global = true)]
    vectors: Option<PathBuf>,
    #[arg(long, global = true)]
    contextual: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct Inputs {
    /// SemEval-style review XML
    #[arg(long)]
    xml: Option<PathBuf>,
    /// CoNLL-U parse of the input sentences
    #[arg(long)]
    conllu: Option<PathBuf>,
    /// JSON-lines dataset written by `ingest`
    #[arg(long, conflicts_with = "xml")]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse XML (and optional CoNLL-U) into a JSON-lines dataset
    Ingest {
        #[arg(long)]
        xml: Option<PathBuf>,
        #[arg(long)]
        conllu: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint
    Train,
    /// Token and span metrics for a checkpoint
    Eval {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Review-level k-fold cross validation
    Kfold {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Label sentences and list extracted aspect terms
    Predict {
        #[command(flatten)]
        inputs: Inputs,
        /// Plain text, one sentence per line
        #[arg(long, conflicts_with_all = ["xml", "dataset"])]
        text: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences
    Gradcheck {
        /// Index of the training sentence to check
        #[arg(long, default_value_t = 0)]
        sentence: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Sample this many coordinates per tensor instead of all
        #[arg(long)]
        per_block: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.apply_seed();
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    let o = &cli.paths;
    let p = &mut cfg.paths;
    for (dst, src) in [
        (&mut p.train_xml, &o.train_xml),
        (&mut p.train_conllu, &o.train_conllu),
        (&mut p.dev_xml, &o.dev_xml),
        (&mut p.dev_conllu, &o.dev_conllu),
        (&mut p.test_xml, &o.test_xml),
        (&mut p.test_conllu, &o.test_conllu),
        (&mut p.vectors, &o.vectors),
        (&mut p.contextual, &o.contextual),
        (&mut p.checkpoint, &o.checkpoint),
        (&mut p.out_dir, &cli.out),
    ] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    Ok(cfg)
}

fn execution(jobs: usize) -> anyhow::Result<Execution> {
    if jobs == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    Ok(Execution::default())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = build_config(&cli)?;
    let exec = execution(cfg.jobs)?;
    match cli.command {
        Command::Ingest { xml, conllu } => commands::ingest(&cfg, xml, conllu),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval { inputs } => commands::eval_cmd(&cfg, &input_args(inputs, None), exec),
        Command::Kfold { k } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            commands::kfold_cmd(&cfg, exec)
        }
        Command::Predict { inputs, text } => commands::predict_cmd(&cfg, &input_args(inputs, text), exec),
        Command::Gradcheck {
            sentence,
            eps,
            per_block,
            tolerance,
        } => commands::gradcheck_cmd(&cfg, sentence, eps, per_block, tolerance, exec),
    }
}

fn input_args(i: Inputs, text: Option<PathBuf>) -> InputArgs {
    InputArgs {
        xml: i.xml,
        conllu: i.conllu,
        dataset: i.dataset,
        text,
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<aspect_tagger::Error>() {
            return e.kind();
        }
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<GradcheckFailed>() {
            return "gradcheck";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "other"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

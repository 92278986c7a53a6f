use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aspect_tagger::corpus::{extract_spans, kfold_split, parse_semeval_xml, repair_bio, write_jsonl, read_jsonl};
use aspect_tagger::dataset::{attach_contextual, build_instances, DatasetRecord, IngestReport, Instance};
use aspect_tagger::deptree::parse_conllu;
use aspect_tagger::encoding::{load_contextual_vectors, load_word_vectors, EmbeddingTable};
use aspect_tagger::trainer::{
    evaluate, full_gradient_check, load_checkpoint, sampled_gradient_check, save_checkpoint, train,
    word_vocabulary, EmbeddingInit, GradCheckReport, ModelConfig, TaggerModel, TrainHistory, WordFeatures,
};
use aspect_tagger::{Corpus, Execution, Label, LabelReport, Review, Sentence, SpanReport, SplitTag};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{must_exist, require_out, ConfigError, Needs, RunConfig};

/// Where evaluation or prediction inputs come from.
#[derive(Clone, Debug, Default)]
pub struct InputArgs {
    pub xml: Option<PathBuf>,
    pub conllu: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub text: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_corpus(xml: &Path, split: SplitTag) -> Result<Corpus> {
    let bytes = fs::read(xml).with_context(|| format!("reading {}", xml.display()))?;
    parse_semeval_xml(&bytes, split).with_context(|| format!("parsing {}", xml.display()))
}

/// Parses, labels and joins a corpus with its optional parse.
fn load_instances(xml: &Path, conllu: Option<&Path>, split: SplitTag) -> Result<(Vec<Instance>, IngestReport)> {
    let corpus = load_corpus(xml, split)?;
    instances_from(&corpus, conllu, xml)
}

fn instances_from(corpus: &Corpus, conllu: Option<&Path>, source: &Path) -> Result<(Vec<Instance>, IngestReport)> {
    let trees = match conllu {
        Some(p) => Some(parse_conllu(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    build_instances(corpus, trees.as_deref(), false).with_context(|| format!("building instances from {}", source.display()))
}

fn load_contextual(cfg: &RunConfig) -> Result<Option<HashMap<String, Array2<f64>>>> {
    match (&cfg.paths.contextual, cfg.model.words) {
        (Some(p), WordFeatures::Contextual) => Ok(Some(
            load_contextual_vectors(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        )),
        _ => Ok(None),
    }
}

fn load_pretrained(cfg: &RunConfig) -> Result<Option<EmbeddingTable>> {
    match (cfg.model.words, cfg.model.embedding_init, &cfg.paths.vectors) {
        (WordFeatures::Embedding, EmbeddingInit::Pretrained, Some(p)) => Ok(Some(
            load_word_vectors(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        )),
        _ => Ok(None),
    }
}

fn fresh_model(config: &ModelConfig, data: &[Instance], pretrained: Option<EmbeddingTable>) -> Result<TaggerModel> {
    let vocab = word_vocabulary(data, config.uncased);
    Ok(TaggerModel::new(config.clone(), &vocab, pretrained)?)
}

// ------------------------------------------------------------------ ingest

pub fn ingest(cfg: &RunConfig, xml: Option<PathBuf>, conllu: Option<PathBuf>) -> Result<()> {
    cfg.validate(Needs::Corpus)?;
    let xml = xml.or_else(|| cfg.paths.train_xml.clone());
    let conllu = conllu.or_else(|| cfg.paths.train_conllu.clone());
    let Some(xml) = xml else {
        return Err(ConfigError("ingest needs --xml or paths.train_xml".into()).into());
    };
    must_exist("xml", &xml)?;
    if let Some(c) = &conllu {
        must_exist("conllu", c)?;
    }
    let out = require_out(&cfg.paths.out_dir)?;

    let (instances, report) = load_instances(&xml, conllu.as_deref(), SplitTag::Unsplit)?;
    for w in &report.dropped_opinions {
        log::warn!("sentence {}: kept {:?}, dropped overlapping {:?}", w.sentence_id, w.kept, w.dropped);
    }
    create_dir(&out)?;
    let records: Vec<DatasetRecord> = instances.iter().map(DatasetRecord::from).collect();
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf)?;
    fs::write(out.join("dataset.jsonl"), buf)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

// ------------------------------------------------------------------ train

fn training_data(cfg: &RunConfig) -> Result<Vec<Instance>> {
    let xml = cfg.paths.train_xml.as_ref().expect("validated");
    let conllu = cfg.paths.train_conllu.as_deref().filter(|_| RunConfig::needs_parse(&cfg.model));
    let (mut data, _) = load_instances(xml, conllu, SplitTag::Train)?;
    if let Some(ctx) = load_contextual(cfg)? {
        attach_contextual(&mut data, &ctx)?;
    }
    Ok(data)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs::Training)?;
    let out = require_out(&cfg.paths.out_dir)?;
    let data = training_data(cfg)?;
    let dev = match &cfg.paths.dev_xml {
        Some(xml) => {
            let conllu = cfg.paths.dev_conllu.as_deref().filter(|_| RunConfig::needs_parse(&cfg.model));
            let (mut d, _) = load_instances(xml, conllu, SplitTag::Test)?;
            if let Some(ctx) = load_contextual(cfg)? {
                attach_contextual(&mut d, &ctx)?;
            }
            Some(d)
        }
        None => None,
    };
    let model = fresh_model(&cfg.model, &data, load_pretrained(cfg)?)?;
    log::info!("training {} parameters on {} sentences", model.parameter_count(), data.len());
    let (model, history) = train(&data, dev.as_deref(), model, &cfg.train)?;

    create_dir(&out)?;
    let ckpt = cfg.paths.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt"));
    save_checkpoint(&model, &ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    write_json(&out.join("history.json"), &history)?;
    println!("{}", serde_json::to_string(&history)?);
    Ok(())
}

// ------------------------------------------------------------------ eval / predict

fn checkpoint_path(cfg: &RunConfig) -> Result<PathBuf> {
    let Some(p) = cfg.paths.checkpoint.clone() else {
        return Err(ConfigError("a checkpoint is required (--checkpoint or paths.checkpoint)".into()).into());
    };
    must_exist("checkpoint", &p)?;
    Ok(p)
}

/// Resolves evaluation inputs; defaults to the configured test split.
fn eval_inputs(cfg: &RunConfig, args: &InputArgs) -> Result<InputArgs> {
    let mut a = args.clone();
    if a.xml.is_none() && a.dataset.is_none() && a.text.is_none() {
        a.xml = cfg.paths.test_xml.clone();
        if a.conllu.is_none() {
            a.conllu = cfg.paths.test_conllu.clone();
        }
    }
    let sources = [&a.xml, &a.dataset, &a.text].iter().filter(|s| s.is_some()).count();
    if sources != 1 {
        return Err(ConfigError("give exactly one of --xml, --dataset or --text".into()).into());
    }
    for (name, p) in [("xml", &a.xml), ("conllu", &a.conllu), ("dataset", &a.dataset), ("text", &a.text)] {
        if let Some(p) = p {
            must_exist(name, p)?;
        }
    }
    if a.dataset.is_some() && a.conllu.is_some() {
        return Err(ConfigError("--conllu applies to --xml or --text input, not --dataset".into()).into());
    }
    Ok(a)
}

fn check_model_inputs(model: &TaggerModel, args: &InputArgs, cfg: &RunConfig) -> Result<()> {
    if RunConfig::needs_parse(&model.config) && args.dataset.is_none() && args.conllu.is_none() {
        return Err(ConfigError(
            "this checkpoint uses POS tags or tree positions; supply --conllu for the input".into(),
        )
        .into());
    }
    if model.config.words == WordFeatures::Contextual && cfg.paths.contextual.is_none() {
        return Err(ConfigError("this checkpoint uses contextual vectors; set paths.contextual".into()).into());
    }
    Ok(())
}

fn raw_text_corpus(path: &Path) -> Result<Corpus> {
    let sentences = read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Sentence::new(format!("line-{}", i + 1), l.trim_end(), Vec::new()))
        .collect::<aspect_tagger::Result<Vec<_>>>()?;
    if sentences.is_empty() {
        bail!("{} contains no sentences", path.display());
    }
    Ok(Corpus::new(
        vec![Review {
            id: "text".into(),
            sentences,
        }],
        SplitTag::Unsplit,
    )?)
}

fn read_inputs(args: &InputArgs, model: &TaggerModel, cfg: &RunConfig) -> Result<Vec<Instance>> {
    let conllu = args.conllu.as_deref().filter(|_| RunConfig::needs_parse(&model.config));
    let mut data = if let Some(ds) = &args.dataset {
        read_jsonl::<DatasetRecord>(&read_text(ds)?)
            .with_context(|| format!("parsing {}", ds.display()))?
            .into_iter()
            .map(Instance::try_from)
            .collect::<aspect_tagger::Result<Vec<_>>>()?
    } else if let Some(xml) = &args.xml {
        load_instances(xml, conllu, SplitTag::Test)?.0
    } else {
        let text = args.text.as_ref().expect("one source");
        instances_from(&raw_text_corpus(text)?, conllu, text)?.0
    };
    if model.config.words == WordFeatures::Contextual {
        let p = cfg.paths.contextual.as_ref().expect("checked");
        let ctx = load_contextual_vectors(&read_text(p)?)?;
        attach_contextual(&mut data, &ctx)?;
    }
    Ok(data)
}

#[derive(Serialize)]
struct EvalReport {
    sentences: usize,
    token: LabelReport,
    spans: SpanReport,
}

pub fn eval_cmd(cfg: &RunConfig, args: &InputArgs, exec: Execution) -> Result<()> {
    cfg.validate(Needs::Corpus)?;
    let ckpt = checkpoint_path(cfg)?;
    let args = eval_inputs(cfg, args)?;
    let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    check_model_inputs(&model, &args, cfg)?;
    let data = read_inputs(&args, &model, cfg)?;
    let (token, spans) = evaluate(&model, &data, exec)?;
    log::info!("\n{}", token.to_table());
    let report = EvalReport {
        sentences: data.len(),
        token,
        spans,
    };
    if let Some(out) = &cfg.paths.out_dir {
        create_dir(out)?;
        write_json(&out.join("eval.json"), &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct AspectSpan {
    start: usize,
    end: usize,
    text: String,
}

#[derive(Serialize)]
struct Prediction<'a> {
    sentence_id: &'a str,
    tokens: &'a [String],
    labels: Vec<Label>,
    aspects: Vec<AspectSpan>,
}

pub fn predict_cmd(cfg: &RunConfig, args: &InputArgs, exec: Execution) -> Result<()> {
    cfg.validate(Needs::Corpus)?;
    let ckpt = checkpoint_path(cfg)?;
    let args = eval_inputs(cfg, args)?;
    let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    check_model_inputs(&model, &args, cfg)?;
    let data = read_inputs(&args, &model, cfg)?;
    let features: Vec<_> = data.iter().map(|i| i.features.clone()).collect();
    let predicted = model.predict_batch(&features, exec)?;

    let records: Vec<Prediction> = data
        .iter()
        .zip(predicted)
        .map(|(inst, labels)| {
            let tokens = &inst.features.tokens;
            let aspects = extract_spans(&repair_bio(&labels))
                .into_iter()
                .map(|(start, end)| AspectSpan {
                    start,
                    end,
                    text: tokens[start..end].join(" "),
                })
                .collect();
            Prediction {
                sentence_id: inst.sentence_id(),
                tokens,
                labels,
                aspects,
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf)?;
    match &cfg.paths.out_dir {
        Some(out) => {
            create_dir(out)?;
            fs::write(out.join("predictions.jsonl"), &buf)?;
        }
        None => print!("{}", String::from_utf8(buf)?),
    }
    Ok(())
}

// ------------------------------------------------------------------ kfold

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    train_reviews: usize,
    test_reviews: usize,
    train_sentences: usize,
    test_sentences: usize,
    token: LabelReport,
    spans: SpanReport,
    history: TrainHistory,
}

#[derive(Serialize, Default)]
struct Aggregate {
    weighted_f1: f64,
    macro_f1_all: f64,
    macro_f1_bi: f64,
    span_f1: f64,
}

#[derive(Serialize)]
struct KFoldSummary {
    k: usize,
    seed: u64,
    /// Folds partition reviews, never splitting one across folds.
    split_level: &'static str,
    folds: Vec<FoldSummary>,
    mean: Aggregate,
    /// Population standard deviation over folds.
    stddev: Aggregate,
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    weighted_f1: f64,
    macro_f1_all: f64,
    macro_f1_bi: f64,
    span_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_fold(
    fold: usize,
    train_ids: &BTreeSet<String>,
    data: &[Instance],
    cfg: &RunConfig,
    pretrained: Option<EmbeddingTable>,
) -> Result<FoldReport> {
    let (train_set, test_set): (Vec<Instance>, Vec<Instance>) =
        data.iter().cloned().partition(|i| train_ids.contains(&i.review_id));
    let model = fresh_model(&cfg.model, &train_set, pretrained)?;
    let (model, history) = train(&train_set, None, model, &cfg.train).with_context(|| format!("fold {fold}"))?;
    let (token, spans) = evaluate(&model, &test_set, Execution::Sequential)?;
    let count = |set: &[Instance]| set.iter().map(|i| &i.review_id).collect::<BTreeSet<_>>().len();
    Ok(FoldReport {
        fold,
        train_reviews: count(&train_set),
        test_reviews: count(&test_set),
        train_sentences: train_set.len(),
        test_sentences: test_set.len(),
        token,
        spans,
        history,
    })
}

pub fn kfold_cmd(cfg: &RunConfig, exec: Execution) -> Result<()> {
    cfg.validate(Needs::Training)?;
    let k = cfg.k_checked()?;
    let out = require_out(&cfg.paths.out_dir)?;
    let xml = cfg.paths.train_xml.as_ref().expect("validated");
    let corpus = load_corpus(xml, SplitTag::Train)?;
    let conllu = cfg.paths.train_conllu.as_deref().filter(|_| RunConfig::needs_parse(&cfg.model));
    let (mut data, _) = instances_from(&corpus, conllu, xml)?;
    if let Some(ctx) = load_contextual(cfg)? {
        attach_contextual(&mut data, &ctx)?;
    }
    let pretrained = load_pretrained(cfg)?;
    let folds: Vec<BTreeSet<String>> = kfold_split(&corpus, k, cfg.train.seed)?
        .into_iter()
        .map(|(train, _)| train.reviews.into_iter().map(|r| r.id).collect())
        .collect();

    let run = |fold: usize| run_fold(fold + 1, &folds[fold], &data, cfg, pretrained.clone());
    let reports: Vec<FoldReport> = exec
        .map_indexed(folds.len(), run)
        .into_iter()
        .collect::<Result<_>>()?;

    create_dir(&out)?;
    for r in &reports {
        let dir = out.join(format!("fold-{}", r.fold));
        create_dir(&dir)?;
        write_json(&dir.join("report.json"), r)?;
    }
    let column = |f: fn(&FoldReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let w = column(|r| r.token.weighted_f1);
    let ma = column(|r| r.token.macro_f1_all);
    let mb = column(|r| r.token.macro_f1_bi);
    let sp = column(|r| r.spans.f1);
    let summary = KFoldSummary {
        k,
        seed: cfg.train.seed,
        split_level: "review",
        folds: reports
            .iter()
            .map(|r| FoldSummary {
                fold: r.fold,
                weighted_f1: r.token.weighted_f1,
                macro_f1_all: r.token.macro_f1_all,
                macro_f1_bi: r.token.macro_f1_bi,
                span_f1: r.spans.f1,
            })
            .collect(),
        mean: Aggregate {
            weighted_f1: w.0,
            macro_f1_all: ma.0,
            macro_f1_bi: mb.0,
            span_f1: sp.0,
        },
        stddev: Aggregate {
            weighted_f1: w.1,
            macro_f1_all: ma.1,
            macro_f1_bi: mb.1,
            span_f1: sp.1,
        },
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

// ------------------------------------------------------------------ gradcheck

pub fn gradcheck_cmd(
    cfg: &RunConfig,
    sentence: usize,
    eps: f64,
    per_block: Option<usize>,
    tolerance: f64,
    exec: Execution,
) -> Result<()> {
    cfg.validate(Needs::Training)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(ConfigError(format!("eps must be positive, got {eps}")).into());
    }
    let data = training_data(cfg)?;
    let Some(inst) = data.get(sentence) else {
        return Err(ConfigError(format!("sentence index {sentence} out of range ({} sentences)", data.len())).into());
    };
    let model = fresh_model(&cfg.model, &data, load_pretrained(cfg)?)?;
    let report: GradCheckReport = match per_block {
        Some(n) => sampled_gradient_check(&model, &inst.features, &inst.labels, eps, n, cfg.model.seed, exec)?,
        None => full_gradient_check(&model, &inst.features, &inst.labels, eps, exec)?,
    };
    if let Some(out) = &cfg.paths.out_dir {
        create_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    if report.max_rel_error > tolerance {
        return Err(GradcheckFailed(report.max_rel_error, tolerance).into());
    }
    Ok(())
}

#[derive(Debug)]
pub struct GradcheckFailed(f64, f64);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "max relative error {:.3e} exceeds tolerance {:.3e}", self.0, self.1)
    }
}

impl std::error::Error for GradcheckFailed {}

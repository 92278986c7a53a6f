use std::fmt;
use std::path::{Path, PathBuf};

use aspect_tagger::trainer::{EmbeddingInit, ModelConfig, TrainConfig, WordFeatures};
use aspect_tagger::PositionMode;
use serde::{Deserialize, Serialize};

/// Rejected configuration; reported with kind `config`.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn fail<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_xml: Option<PathBuf>,
    pub train_conllu: Option<PathBuf>,
    pub dev_xml: Option<PathBuf>,
    pub dev_conllu: Option<PathBuf>,
    pub test_xml: Option<PathBuf>,
    pub test_conllu: Option<PathBuf>,
    /// word2vec text format
    pub vectors: Option<PathBuf>,
    /// JSON-lines of frozen per-token vectors keyed by sentence id
    pub contextual: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.train_xml,
            &mut self.train_conllu,
            &mut self.dev_xml,
            &mut self.dev_conllu,
            &mut self.test_xml,
            &mut self.test_conllu,
            &mut self.vectors,
            &mut self.contextual,
            &mut self.checkpoint,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides both `model.seed` and `train.seed` when set.
    pub seed: Option<u64>,
    pub k: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            k: 5,
            jobs: 0,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Which inputs a command reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Needs {
    /// Training data plus whatever the model config requires.
    Training,
    /// Only model-independent inputs.
    Corpus,
}

impl RunConfig {
    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.model.seed = seed;
            self.train.seed = seed;
        }
    }

    /// Model inputs that only a dependency parse provides.
    pub fn needs_parse(model: &ModelConfig) -> bool {
        model.use_pos || model.position.mode == PositionMode::Tree
    }

    pub fn validate(&self, needs: Needs) -> anyhow::Result<()> {
        if needs == Needs::Training {
            self.model.validate().map_err(|e| ConfigError(e.to_string()))?;
            self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
            let Some(train_xml) = &self.paths.train_xml else {
                return fail("paths.train_xml is required");
            };
            if self.model.position.mode == PositionMode::Tree && self.paths.train_conllu.is_none() {
                return fail("position mode \"tree\" requires CoNLL-U input (paths.train_conllu)");
            }
            if self.model.use_pos && self.paths.train_conllu.is_none() {
                return fail("POS embeddings require CoNLL-U input (paths.train_conllu)");
            }
            if self.paths.dev_xml.is_some() && Self::needs_parse(&self.model) && self.paths.dev_conllu.is_none() {
                return fail("paths.dev_xml needs paths.dev_conllu for this model");
            }
            match (self.model.words, self.model.embedding_init) {
                (WordFeatures::Embedding, EmbeddingInit::Pretrained) if self.paths.vectors.is_none() => {
                    return fail("pretrained embeddings require paths.vectors");
                }
                (WordFeatures::Contextual, _) if self.paths.contextual.is_none() => {
                    return fail("contextual word features require paths.contextual");
                }
                _ => {}
            }
            must_exist("paths.train_xml", train_xml)?;
        }
        for (name, p) in [
            ("paths.train_conllu", &self.paths.train_conllu),
            ("paths.dev_xml", &self.paths.dev_xml),
            ("paths.dev_conllu", &self.paths.dev_conllu),
            ("paths.test_xml", &self.paths.test_xml),
            ("paths.test_conllu", &self.paths.test_conllu),
            ("paths.vectors", &self.paths.vectors),
            ("paths.contextual", &self.paths.contextual),
        ] {
            if let Some(p) = p {
                must_exist(name, p)?;
            }
        }
        Ok(())
    }

    pub fn k_checked(&self) -> anyhow::Result<usize> {
        if self.k < 2 {
            return fail(format!("k must be at least 2, got {}", self.k));
        }
        Ok(self.k)
    }
}

pub fn must_exist(name: &str, path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return fail(format!("{name}: {} does not exist", path.display()));
    }
    Ok(())
}

pub fn require_out(out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match out {
        Some(p) => Ok(p.clone()),
        None => fail("an output directory is required (--out or paths.out_dir)"),
    }
}

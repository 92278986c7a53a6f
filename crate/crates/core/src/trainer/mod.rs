//! End-to-end tagger: encoder, BiLSTM and CRF trained jointly with
//! per-sentence gradient steps.

mod checkpoint;
mod gradcheck;
mod optim;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array1, ArrayViewD, ArrayViewMutD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bilstm::{BiLstm, BiLstmGrads, LstmParams};
use crate::corpus::{is_well_formed, Label, LabeledSequence};
use crate::crf::{nll_loss, project_backward, project_emissions, viterbi_decode, CrfParams};
use crate::dataset::Instance;
use crate::encoding::{
    init_random_table, upos_vocab, EmbeddingTable, Encoder, PositionalConfig, SentenceFeatures, WordInput,
};
use crate::error::{Error, Result};
use crate::metrics::{span_exact_match, token_counts, LabelReport, SpanReport};
use crate::parallel::Execution;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
pub use gradcheck::{full_gradient_check, sampled_gradient_check, BlockError, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordFeatures {
    Off,
    /// Looked up in a word table.
    Embedding,
    /// Frozen per-token vectors attached to each sentence.
    Contextual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingInit {
    Random,
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub words: WordFeatures,
    pub embedding_init: EmbeddingInit,
    /// Width of the word segment (the contextual width in contextual mode).
    pub word_dim: usize,
    pub freeze_words: bool,
    pub use_pos: bool,
    pub pos_dim: usize,
    pub position: PositionalConfig,
    pub hidden: usize,
    pub uncased: bool,
    pub forbid_oi: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            words: WordFeatures::Embedding,
            embedding_init: EmbeddingInit::Random,
            word_dim: 300,
            freeze_words: false,
            use_pos: true,
            pos_dim: 100,
            position: PositionalConfig::default(),
            hidden: 128,
            uncased: true,
            forbid_oi: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.position.validate()?;
        if self.hidden == 0 {
            return Err(Error::argument("hidden size must be positive"));
        }
        if self.words != WordFeatures::Off && self.word_dim == 0 {
            return Err(Error::argument("word dimension must be positive"));
        }
        if self.use_pos && self.pos_dim == 0 {
            return Err(Error::argument("POS dimension must be positive"));
        }
        if self.input_dim() == 0 {
            return Err(Error::argument("every input feature is disabled"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        let w = if self.words == WordFeatures::Off { 0 } else { self.word_dim };
        let p = if self.use_pos { self.pos_dim } else { 0 };
        w + p + self.position.active_dim()
    }
}

/// Sorted distinct training tokens, lowercased when `uncased`.
pub fn word_vocabulary(data: &[Instance], uncased: bool) -> Vec<String> {
    let set: BTreeSet<String> = data
        .iter()
        .flat_map(|inst| inst.features.tokens.iter())
        .map(|t| if uncased { t.to_lowercase() } else { t.clone() })
        .collect();
    set.into_iter().collect()
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel {
    pub config: ModelConfig,
    pub words: Option<EmbeddingTable>,
    pub pos: Option<EmbeddingTable>,
    pub lstm: BiLstm,
    pub crf: CrfParams,
}

/// Sparse gradient over embedding rows, keyed by row id.
pub type RowGrads = BTreeMap<usize, Array1<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    /// `None` when the table is absent or frozen.
    pub words: Option<RowGrads>,
    pub pos: Option<RowGrads>,
    pub lstm: BiLstmGrads,
    /// Same shapes as the model's CRF; `forbid_oi` is meaningless here.
    pub crf: CrfParams,
}

pub(crate) const DENSE_NAMES: [&str; 11] = [
    "lstm.fwd.w",
    "lstm.fwd.u",
    "lstm.fwd.b",
    "lstm.bwd.w",
    "lstm.bwd.u",
    "lstm.bwd.b",
    "crf.emission_w",
    "crf.emission_b",
    "crf.transitions",
    "crf.start",
    "crf.end",
];

fn dense_views<'a>(fwd: &'a LstmParams, bwd: &'a LstmParams, crf: &'a CrfParams) -> Vec<ArrayViewD<'a, f64>> {
    vec![
        fwd.w.view().into_dyn(),
        fwd.u.view().into_dyn(),
        fwd.b.view().into_dyn(),
        bwd.w.view().into_dyn(),
        bwd.u.view().into_dyn(),
        bwd.b.view().into_dyn(),
        crf.emission_w.view().into_dyn(),
        crf.emission_b.view().into_dyn(),
        crf.transitions.view().into_dyn(),
        crf.start.view().into_dyn(),
        crf.end.view().into_dyn(),
    ]
}

fn dense_views_mut<'a>(
    fwd: &'a mut LstmParams,
    bwd: &'a mut LstmParams,
    crf: &'a mut CrfParams,
) -> Vec<ArrayViewMutD<'a, f64>> {
    vec![
        fwd.w.view_mut().into_dyn(),
        fwd.u.view_mut().into_dyn(),
        fwd.b.view_mut().into_dyn(),
        bwd.w.view_mut().into_dyn(),
        bwd.u.view_mut().into_dyn(),
        bwd.b.view_mut().into_dyn(),
        crf.emission_w.view_mut().into_dyn(),
        crf.emission_b.view_mut().into_dyn(),
        crf.transitions.view_mut().into_dyn(),
        crf.start.view_mut().into_dyn(),
        crf.end.view_mut().into_dyn(),
    ]
}

impl ModelGrads {
    /// Dense blocks in the order of `DENSE_NAMES`.
    pub fn dense(&self) -> Vec<ArrayViewD<'_, f64>> {
        dense_views(&self.lstm.fwd, &self.lstm.bwd, &self.crf)
    }

    pub(crate) fn dense_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        dense_views_mut(&mut self.lstm.fwd, &mut self.lstm.bwd, &mut self.crf)
    }

    pub fn squared_norm(&self) -> f64 {
        let dense: f64 = self.dense().iter().flat_map(|v| v.iter()).map(|g| g * g).sum();
        let sparse: f64 = [&self.words, &self.pos]
            .into_iter()
            .flatten()
            .flat_map(|rows| rows.values())
            .flat_map(|r| r.iter())
            .map(|g| g * g)
            .sum();
        dense + sparse
    }

    pub fn scale(&mut self, factor: f64) {
        for mut v in self.dense_mut() {
            v.mapv_inplace(|g| g * factor);
        }
        for rows in [&mut self.words, &mut self.pos].into_iter().flatten() {
            for r in rows.values_mut() {
                r.mapv_inplace(|g| g * factor);
            }
        }
    }
}

impl TaggerModel {
    /// Builds a freshly initialized model. `pretrained` is required exactly
    /// when the config asks for pretrained word vectors; `vocab` supplies
    /// the word table otherwise.
    pub fn new(config: ModelConfig, vocab: &[String], pretrained: Option<EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let words = match (config.words, config.embedding_init, pretrained) {
            (WordFeatures::Embedding, EmbeddingInit::Random, None) => {
                let mut t = init_random_table(vocab, config.word_dim, config.seed)?;
                t.trainable = !config.freeze_words;
                Some(t)
            }
            (WordFeatures::Embedding, EmbeddingInit::Pretrained, Some(mut t)) => {
                if t.dim() != config.word_dim {
                    return Err(Error::argument(format!(
                        "pretrained vectors have dimension {}, config says {}",
                        t.dim(),
                        config.word_dim
                    )));
                }
                t.trainable = !config.freeze_words;
                Some(t)
            }
            (WordFeatures::Embedding, EmbeddingInit::Pretrained, None) => {
                return Err(Error::argument("pretrained initialization needs a vectors file"));
            }
            (_, _, Some(_)) => {
                return Err(Error::argument("pretrained vectors given but not used by this config"));
            }
            (_, _, None) => None,
        };
        let pos = if config.use_pos {
            Some(init_random_table(&upos_vocab(), config.pos_dim, config.seed.wrapping_add(1))?)
        } else {
            None
        };
        let lstm = BiLstm::random(config.input_dim(), config.hidden, &mut sub_rng(config.seed, 2));
        let mut crf = CrfParams::random(2 * config.hidden, &mut sub_rng(config.seed, 3));
        crf.forbid_oi = config.forbid_oi;
        let model = TaggerModel {
            config,
            words,
            pos,
            lstm,
            crf,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let bad = |what: &str| Err(Error::Incompatible(format!("model {what} inconsistent with its config")));
        if (c.words == WordFeatures::Embedding) != self.words.is_some() {
            return bad("word table");
        }
        if let Some(w) = &self.words {
            if w.dim() != c.word_dim {
                return bad("word dimension");
            }
        }
        match &self.pos {
            Some(p) if !c.use_pos || p.dim() != c.pos_dim => return bad("POS table"),
            None if c.use_pos => return bad("POS table"),
            _ => {}
        }
        let h = c.hidden;
        for p in [&self.lstm.fwd, &self.lstm.bwd] {
            if p.w.dim() != (4 * h, c.input_dim()) || p.u.dim() != (4 * h, h) || p.b.len() != 4 * h {
                return bad("LSTM shapes");
            }
        }
        let l = Label::COUNT;
        if self.crf.emission_w.dim() != (l, 2 * h)
            || self.crf.emission_b.len() != l
            || self.crf.transitions.dim() != (l, l)
            || self.crf.start.len() != l
            || self.crf.end.len() != l
        {
            return bad("CRF shapes");
        }
        if self.crf.forbid_oi != c.forbid_oi {
            return bad("O->I mask");
        }
        Ok(())
    }

    pub fn encoder(&self) -> Encoder<'_> {
        let words = match (self.config.words, &self.words) {
            (WordFeatures::Embedding, Some(t)) => WordInput::Table(t),
            (WordFeatures::Contextual, _) => WordInput::Contextual(self.config.word_dim),
            _ => WordInput::Disabled,
        };
        Encoder {
            words,
            pos: self.pos.as_ref(),
            positional: &self.config.position,
            uncased: self.config.uncased,
        }
    }

    pub fn dense(&self) -> Vec<ArrayViewD<'_, f64>> {
        dense_views(&self.lstm.fwd, &self.lstm.bwd, &self.crf)
    }

    pub fn dense_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        dense_views_mut(&mut self.lstm.fwd, &mut self.lstm.bwd, &mut self.crf)
    }

    pub fn parameter_count(&self) -> usize {
        let tables: usize = [&self.words, &self.pos]
            .into_iter()
            .flatten()
            .filter(|t| t.trainable)
            .map(|t| t.vectors.len())
            .sum();
        tables + self.dense().iter().map(|v| v.len()).sum::<usize>()
    }

    /// Negative log-likelihood of `gold` only.
    pub fn loss(&self, features: &SentenceFeatures, gold: &[Label]) -> Result<f64> {
        let enc = self.encoder().encode(features)?;
        let h = self.lstm.forward(enc.matrix.view())?;
        let emissions = project_emissions(h.view(), &self.crf)?;
        check_gold(features, gold)?;
        Ok(nll_loss(emissions.view(), gold, &self.crf)?.0)
    }

    /// Loss and exact gradients for every trainable tensor.
    pub fn loss_and_grads(&self, features: &SentenceFeatures, gold: &[Label]) -> Result<(f64, ModelGrads)> {
        check_gold(features, gold)?;
        let enc = self.encoder().encode(features)?;
        let (h, trace) = self.lstm.forward_trace(enc.matrix.view())?;
        let emissions = project_emissions(h.view(), &self.crf)?;
        let (loss, cg) = nll_loss(emissions.view(), gold, &self.crf)?;
        let (grad_h, grad_w, grad_b) = project_backward(h.view(), cg.emissions.view(), &self.crf);
        let (grad_x, lstm) = self.lstm.backward(enc.matrix.view(), &trace, grad_h.view())?;

        let gather = |table: &Option<EmbeddingTable>, ids: &[usize], offset: usize, width: usize| {
            table.as_ref().filter(|t| t.trainable && !ids.is_empty()).map(|_| {
                let mut rows = RowGrads::new();
                for (t, &id) in ids.iter().enumerate() {
                    let g = grad_x.slice(s![t, offset..offset + width]);
                    rows.entry(id)
                        .and_modify(|acc: &mut Array1<f64>| *acc += &g)
                        .or_insert_with(|| g.to_owned());
                }
                rows
            })
        };
        let words = gather(&self.words, &enc.word_ids, 0, enc.word_dim);
        let pos = gather(&self.pos, &enc.pos_ids, enc.word_dim, enc.pos_dim);

        let crf = CrfParams {
            emission_w: grad_w,
            emission_b: grad_b,
            transitions: cg.transitions,
            start: cg.start,
            end: cg.end,
            forbid_oi: self.crf.forbid_oi,
        };
        Ok((loss, ModelGrads { words, pos, lstm, crf }))
    }

    pub fn predict(&self, features: &SentenceFeatures) -> Result<Vec<Label>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let enc = self.encoder().encode(features)?;
        let h = self.lstm.forward(enc.matrix.view())?;
        let emissions = project_emissions(h.view(), &self.crf)?;
        Ok(viterbi_decode(emissions.view(), &self.crf)?.0)
    }

    /// Decodes every sentence; output order follows input order.
    pub fn predict_batch(&self, batch: &[SentenceFeatures], exec: Execution) -> Result<Vec<Vec<Label>>> {
        exec.map(batch, |f| self.predict(f)).into_iter().collect()
    }
}

fn check_gold(features: &SentenceFeatures, gold: &[Label]) -> Result<()> {
    if gold.len() != features.len() {
        return Err(Error::argument(format!(
            "sentence {}: {} labels for {} tokens",
            features.sentence_id,
            gold.len(),
            features.len()
        )));
    }
    if !is_well_formed(gold) {
        return Err(Error::Validation {
            sentence_id: features.sentence_id.clone(),
            message: "gold labels are not well-formed BIO".into(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip: 5.0,
            seed: 0,
            patience: 10,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::argument(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.clip.is_nan() || self.clip < 0.0 {
            return Err(Error::argument(format!("clip norm must be non-negative, got {}", self.clip)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_weighted_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Stateful loop over epochs, exposed so callers can inspect the model
/// between epochs.
pub struct Trainer {
    pub model: TaggerModel,
    optimizer: Optimizer,
    config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: TaggerModel, config: TrainConfig, data_len: usize) -> Result<Self> {
        config.validate()?;
        if data_len == 0 {
            return Err(Error::argument("training data is empty"));
        }
        let optimizer = Optimizer::new(&model, config.optimizer, config.lr);
        Ok(Trainer {
            model,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            order: (0..data_len).collect(),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass with a gradient step per sentence; returns the mean loss.
    pub fn run_epoch(&mut self, data: &[Instance]) -> Result<f64> {
        if data.len() != self.order.len() {
            return Err(Error::argument("training data changed size between epochs"));
        }
        self.epoch += 1;
        if self.config.shuffle {
            self.order.shuffle(&mut self.rng);
        }
        let mut total = 0.0;
        for &i in &self.order {
            let inst = &data[i];
            let (loss, mut grads) = self.model.loss_and_grads(&inst.features, &inst.labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    sentence_id: inst.sentence_id().to_string(),
                    loss,
                });
            }
            total += loss;
            if self.config.clip > 0.0 {
                let norm = grads.squared_norm().sqrt();
                if norm > self.config.clip {
                    grads.scale(self.config.clip / norm);
                }
            }
            self.optimizer.step(&mut self.model, &grads);
        }
        Ok(total / data.len() as f64)
    }
}

fn check_training_data(data: &[Instance]) -> Result<()> {
    for inst in data {
        if inst.features.is_empty() {
            return Err(Error::Validation {
                sentence_id: inst.sentence_id().to_string(),
                message: "sentence has no tokens".into(),
            });
        }
        check_gold(&inst.features, &inst.labels)?;
    }
    Ok(())
}

/// Trains `model` on `train`. With a dev set the best-dev parameters are
/// returned and training stops after `patience` epochs without improvement.
pub fn train(
    train: &[Instance],
    dev: Option<&[Instance]>,
    model: TaggerModel,
    config: &TrainConfig,
) -> Result<(TaggerModel, TrainHistory)> {
    check_training_data(train)?;
    let mut trainer = Trainer::new(model, config.clone(), train.len())?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, TaggerModel)> = None;
    let mut since_best = 0;
    for _ in 0..config.epochs {
        let mean_loss = trainer.run_epoch(train)?;
        let dev_f1 = match dev {
            Some(d) if !d.is_empty() => Some(evaluate(&trainer.model, d, Execution::default())?.0.weighted_f1),
            _ => None,
        };
        let epoch = trainer.epoch();
        log::info!("epoch {epoch}: loss {mean_loss:.6}{}", dev_f1.map_or(String::new(), |f| format!(", dev weighted F1 {f:.4}")));
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            dev_weighted_f1: dev_f1,
        });
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, trainer.model.clone()));
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => trainer.model,
    };
    Ok((model, history))
}

/// Token-level and span-level scores of `model` on `data`.
pub fn evaluate(model: &TaggerModel, data: &[Instance], exec: Execution) -> Result<(LabelReport, SpanReport)> {
    let features: Vec<SentenceFeatures> = data.iter().map(|i| i.features.clone()).collect();
    let predicted = model.predict_batch(&features, exec)?;
    let gold: Vec<LabeledSequence> = data.iter().map(Instance::gold).collect();
    let pred: Vec<LabeledSequence> = data
        .iter()
        .zip(predicted)
        .map(|(inst, labels)| LabeledSequence {
            sentence_id: inst.sentence_id().to_string(),
            tokens: inst.features.tokens.clone(),
            labels,
        })
        .collect();
    let counts = token_counts(&gold, &pred, exec)?;
    Ok((LabelReport::from_counts(&counts), span_exact_match(&gold, &pred)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::PositionMode;

    pub(crate) fn tiny_config(mode: PositionMode, use_pos: bool, seed: u64) -> ModelConfig {
        ModelConfig {
            word_dim: 5,
            pos_dim: 2,
            position: PositionalConfig {
                mode,
                dim: 4,
                base: 10_000.0,
            },
            hidden: 3,
            use_pos,
            seed,
            ..ModelConfig::default()
        }
    }

    fn instance(id: &str, tokens: &[&str], labels: &[Label], pos: &[&str], levels: &[usize]) -> Instance {
        Instance {
            review_id: "r".into(),
            labels: labels.to_vec(),
            features: SentenceFeatures {
                sentence_id: id.into(),
                tokens: tokens.iter().map(|t| t.to_string()).collect(),
                pos_tags: Some(pos.iter().map(|t| t.to_string()).collect()),
                levels: Some(levels.to_vec()),
                contextual: None,
            },
        }
    }

    fn lokumu() -> Instance {
        use Label::*;
        instance(
            "s1",
            &["lokumu", "tavsiye", "ederim."],
            &[B, O, O],
            &["NOUN", "NOUN", "VERB"],
            &[1, 1, 2],
        )
    }

    #[test]
    fn shapes_follow_config() {
        let data = [lokumu()];
        let vocab = word_vocabulary(&data, true);
        let m = TaggerModel::new(tiny_config(PositionMode::Tree, true, 1), &vocab, None).unwrap();
        assert_eq!(m.lstm.input_dim(), 5 + 2 + 4);
        assert_eq!(m.crf.emission_w.dim(), (3, 6));
        assert_eq!(m.words.as_ref().unwrap().len(), 3 + 2);
        let mut off = tiny_config(PositionMode::None, false, 1);
        off.words = WordFeatures::Off;
        assert!(TaggerModel::new(off, &vocab, None).is_err());
    }

    #[test]
    fn one_sentence_overfits() {
        let data = [lokumu()];
        let vocab = word_vocabulary(&data, true);
        let model = TaggerModel::new(tiny_config(PositionMode::Sequential, true, 3), &vocab, None).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let (model, history) = train(&data, None, model, &cfg).unwrap();
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.mean_loss).collect();
        for w in losses[10..].windows(2) {
            assert!(w[1] <= w[0], "loss rose: {} -> {}", w[0], w[1]);
        }
        assert_eq!(model.predict(&data[0].features).unwrap(), data[0].labels);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let data = [lokumu()];
        let vocab = word_vocabulary(&data, true);
        let model = TaggerModel::new(tiny_config(PositionMode::Tree, true, 4), &vocab, None).unwrap();
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let cfg = TrainConfig {
                epochs: 3,
                lr: 0.0,
                optimizer,
                ..TrainConfig::default()
            };
            let (after, _) = train(&data, None, model.clone(), &cfg).unwrap();
            for (a, b) in after.dense().iter().zip(model.dense()) {
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(after, model);
        }
    }

    #[test]
    fn same_seed_same_history() {
        use Label::*;
        let data = [
            lokumu(),
            instance("s2", &["servis", "yavaş"], &[B, O], &["NOUN", "ADJ"], &[1, 0]),
        ];
        let vocab = word_vocabulary(&data, true);
        let run = || {
            let model = TaggerModel::new(tiny_config(PositionMode::Sequential, true, 5), &vocab, None).unwrap();
            let cfg = TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            };
            train(&data, Some(&data), model, &cfg).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_steps_descend() {
        use rand::{Rng, SeedableRng};
        let mut violations = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = rng.random_range(1..6);
            let tokens: Vec<String> = (0..t_len).map(|i| format!("w{}", rng.random_range(0..4) + i)).collect();
            let labels: Vec<Label> = crate::corpus::repair_bio(
                &(0..t_len).map(|_| Label::from_index(rng.random_range(0..3))).collect::<Vec<_>>(),
            );
            let inst = Instance {
                review_id: "r".into(),
                labels,
                features: SentenceFeatures {
                    sentence_id: format!("s{seed}"),
                    pos_tags: Some(vec!["NOUN".into(); t_len]),
                    levels: Some((0..t_len).collect()),
                    tokens,
                    contextual: None,
                },
            };
            let data = [inst];
            let vocab = word_vocabulary(&data, true);
            let model = TaggerModel::new(tiny_config(PositionMode::Tree, true, seed), &vocab, None).unwrap();
            let before = model.loss(&data[0].features, &data[0].labels).unwrap();
            let cfg = TrainConfig {
                epochs: 1,
                lr: 1e-4,
                optimizer: OptimizerKind::Sgd,
                ..TrainConfig::default()
            };
            let (after_model, _) = train(&data, None, model, &cfg).unwrap();
            let after = after_model.loss(&data[0].features, &data[0].labels).unwrap();
            if after > before {
                violations += 1;
            }
        }
        assert!(violations <= 1, "{violations} ascent steps");
    }

    #[test]
    fn training_does_not_mutate_input() {
        let data = vec![lokumu()];
        let copy = data.clone();
        let vocab = word_vocabulary(&data, true);
        let model = TaggerModel::new(tiny_config(PositionMode::None, true, 6), &vocab, None).unwrap();
        train(&data, None, model, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        assert_eq!(data, copy);
    }

    #[test]
    fn malformed_gold_and_bad_config_are_rejected() {
        let mut bad = lokumu();
        bad.labels = vec![Label::I, Label::O, Label::O];
        let vocab = word_vocabulary(&[bad.clone()], true);
        let model = TaggerModel::new(tiny_config(PositionMode::None, true, 7), &vocab, None).unwrap();
        assert!(train(&[bad], None, model.clone(), &TrainConfig::default()).is_err());
        let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&[lokumu()], None, model.clone(), &zero).is_err());
        assert!(train(&[], None, model, &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_names_the_sentence() {
        let data = [lokumu()];
        let vocab = word_vocabulary(&data, true);
        let mut model = TaggerModel::new(tiny_config(PositionMode::None, true, 8), &vocab, None).unwrap();
        model.crf.start[0] = f64::NAN;
        match train(&data, None, model, &TrainConfig::default()) {
            Err(Error::NonFiniteLoss { epoch, sentence_id, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(sentence_id, "s1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_tables_get_no_gradient() {
        let data = [lokumu()];
        let vocab = word_vocabulary(&data, true);
        let mut cfg = tiny_config(PositionMode::None, true, 9);
        cfg.freeze_words = true;
        let model = TaggerModel::new(cfg, &vocab, None).unwrap();
        let (_, g) = model.loss_and_grads(&data[0].features, &data[0].labels).unwrap();
        assert!(g.words.is_none());
        assert_eq!(g.pos.as_ref().unwrap().len(), 2);
    }
}

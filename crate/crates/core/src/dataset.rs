//! Joins review corpora with dependency parses into model-ready instances.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_overlaps, to_bio, whitespace_tokenize, Corpus, Label, LabeledSequence, OverlapWarning};
use crate::deptree::{align_tokens, level_indices, project_features, DepTree};
use crate::encoding::SentenceFeatures;
use crate::error::{Error, Result};

/// One sentence with its features and gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub review_id: String,
    pub features: SentenceFeatures,
    pub labels: Vec<Label>,
}

impl Instance {
    pub fn sentence_id(&self) -> &str {
        &self.features.sentence_id
    }

    pub fn gold(&self) -> LabeledSequence {
        LabeledSequence {
            sentence_id: self.features.sentence_id.clone(),
            tokens: self.features.tokens.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Line format of an ingested dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sentence_id: String,
    pub review_id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
}

impl From<&Instance> for DatasetRecord {
    fn from(inst: &Instance) -> Self {
        DatasetRecord {
            sentence_id: inst.features.sentence_id.clone(),
            review_id: inst.review_id.clone(),
            tokens: inst.features.tokens.clone(),
            labels: inst.labels.clone(),
            pos_tags: inst.features.pos_tags.clone(),
            levels: inst.features.levels.clone(),
        }
    }
}

impl TryFrom<DatasetRecord> for Instance {
    type Error = Error;

    fn try_from(r: DatasetRecord) -> Result<Self> {
        let n = r.tokens.len();
        let bad = |what: &str, m: usize| {
            Error::argument(format!("sentence {}: {m} {what} for {n} tokens", r.sentence_id))
        };
        if r.labels.len() != n {
            return Err(bad("labels", r.labels.len()));
        }
        if let Some(p) = &r.pos_tags {
            if p.len() != n {
                return Err(bad("POS tags", p.len()));
            }
        }
        if let Some(l) = &r.levels {
            if l.len() != n {
                return Err(bad("levels", l.len()));
            }
        }
        Ok(Instance {
            review_id: r.review_id,
            labels: r.labels,
            features: SentenceFeatures {
                sentence_id: r.sentence_id,
                tokens: r.tokens,
                pos_tags: r.pos_tags,
                levels: r.levels,
                contextual: None,
            },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub reviews: usize,
    pub sentences: usize,
    pub opinions: usize,
    pub null_opinions: usize,
    pub aspect_spans: usize,
    pub tokens: usize,
    pub with_trees: bool,
    /// Sentences whose whitespace tokens were split further by the parser.
    pub split_tokens: usize,
    pub dropped_opinions: Vec<OverlapWarning>,
}

/// Matches trees to sentences by `# sent_id` when every tree has one,
/// otherwise by document order.
fn join_trees<'a>(corpus: &Corpus, trees: &'a [DepTree]) -> Result<Vec<&'a DepTree>> {
    let sentences: Vec<_> = corpus.sentences().collect();
    if trees.iter().all(|t| t.sentence_id.is_some()) && !trees.is_empty() {
        let by_id: HashMap<&str, &DepTree> = trees
            .iter()
            .map(|t| (t.sentence_id.as_deref().expect("checked"), t))
            .collect();
        let joined = sentences
            .iter()
            .map(|s| {
                by_id.get(s.id.as_str()).copied().ok_or_else(|| Error::Alignment {
                    sentence_id: s.id.clone(),
                    message: "no dependency tree with this sent_id".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if trees.len() != sentences.len() {
            return Err(Error::argument(format!(
                "{} trees for {} sentences",
                trees.len(),
                sentences.len()
            )));
        }
        Ok(joined)
    } else if trees.len() != sentences.len() {
        let first_missing = sentences
            .get(trees.len())
            .map(|s| s.id.clone())
            .unwrap_or_else(|| "<none>".into());
        Err(Error::Alignment {
            sentence_id: first_missing,
            message: format!("{} trees for {} sentences (joined by order)", trees.len(), sentences.len()),
        })
    } else {
        Ok(trees.iter().collect())
    }
}

/// Tokenizes, labels and (when trees are given) attaches UPOS tags and
/// level indices to every sentence of `corpus`.
pub fn build_instances(corpus: &Corpus, trees: Option<&[DepTree]>, uncased: bool) -> Result<(Vec<Instance>, IngestReport)> {
    let joined = trees.map(|t| join_trees(corpus, t)).transpose()?;
    let mut report = IngestReport {
        reviews: corpus.reviews.len(),
        with_trees: trees.is_some(),
        ..Default::default()
    };
    let mut instances = Vec::with_capacity(corpus.sentence_count());
    let mut k = 0;
    for review in &corpus.reviews {
        for sentence in &review.sentences {
            let (tokens, spans) = whitespace_tokenize(&sentence.text);
            let (resolved, warnings) = resolve_overlaps(sentence, &spans);
            report.dropped_opinions.extend(warnings);
            let seq = to_bio(&resolved, &tokens, &spans)?;

            let (pos_tags, levels) = match &joined {
                Some(j) => {
                    let tree = j[k];
                    let mapping = align_tokens(&sentence.id, &tokens, tree)?;
                    if mapping.iter().any(|run| run.len() > 1) {
                        report.split_tokens += 1;
                    }
                    let (pos, lv) = project_features(&mapping, tree, &level_indices(tree));
                    (Some(pos), Some(lv))
                }
                None => (None, None),
            };
            k += 1;

            report.sentences += 1;
            report.opinions += sentence.opinions.len();
            report.null_opinions += sentence.opinions.iter().filter(|o| o.is_null()).count();
            report.aspect_spans += seq.labels.iter().filter(|&&l| l == Label::B).count();
            report.tokens += tokens.len();

            let tokens = if uncased {
                seq.tokens.iter().map(|t| t.to_lowercase()).collect()
            } else {
                seq.tokens
            };
            instances.push(Instance {
                review_id: review.id.clone(),
                labels: seq.labels,
                features: SentenceFeatures {
                    sentence_id: sentence.id.clone(),
                    tokens,
                    pos_tags,
                    levels,
                    contextual: None,
                },
            });
        }
    }
    Ok((instances, report))
}

/// Attaches frozen per-token vectors keyed by sentence id.
pub fn attach_contextual(instances: &mut [Instance], vectors: &HashMap<String, Array2<f64>>) -> Result<()> {
    for inst in instances {
        let v = vectors.get(inst.sentence_id()).ok_or_else(|| Error::Alignment {
            sentence_id: inst.sentence_id().to_string(),
            message: "no contextual vectors for this sentence".into(),
        })?;
        if v.nrows() != inst.features.len() {
            return Err(Error::Alignment {
                sentence_id: inst.sentence_id().to_string(),
                message: format!("{} contextual vectors for {} tokens", v.nrows(), inst.features.len()),
            });
        }
        inst.features.contextual = Some(v.clone());
    }
    Ok(())
}

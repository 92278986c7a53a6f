//! SemEval ABSA review corpora and their token-level BIO view.
//!
//! Offsets in the XML are character (code point) offsets into the sentence
//! text, end-exclusive. Everything here works in characters, never bytes.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NULL_TARGET: &str = "NULL";

/// Sequence labels, in the fixed order used for every label-indexed tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    B,
    I,
    O,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::B, Label::I, Label::O];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::B => "B",
            Label::I => "I",
            Label::O => "O",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label order string stored in checkpoints.
pub fn label_order() -> String {
    Label::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opinion {
    pub target: String,
    pub category: String,
    pub polarity: String,
    pub from: usize,
    pub to: usize,
}

impl Opinion {
    /// `NULL` targets are implicit aspects with no text span.
    pub fn is_null(&self) -> bool {
        self.target == NULL_TARGET
    }

    fn describe(&self) -> String {
        format!("{:?}[{},{})", self.target, self.from, self.to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub opinions: Vec<Opinion>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>, opinions: Vec<Opinion>) -> Result<Self> {
        let sentence = Sentence {
            id: id.into(),
            text: text.into(),
            opinions,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            sentence_id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(Error::Validation {
                sentence_id: "<missing>".into(),
                message: "sentence id is empty".into(),
            });
        }
        if self.text.trim().is_empty() {
            return Err(fail("sentence text is empty".into()));
        }
        let len = self.text.chars().count();
        for op in self.opinions.iter().filter(|o| !o.is_null()) {
            if op.from >= op.to || op.to > len {
                return Err(fail(format!(
                    "opinion {:?} span [{},{}) out of bounds for text of length {}",
                    op.target, op.from, op.to, len
                )));
            }
            let surface = char_slice(&self.text, op.from, op.to);
            if surface != op.target {
                return Err(fail(format!(
                    "opinion target {:?} does not match text {:?} at [{},{})",
                    op.target, surface, op.from, op.to
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Review {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Unsplit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub split: SplitTag,
}

impl Corpus {
    pub fn new(reviews: Vec<Review>, split: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for review in &reviews {
            if !seen.insert(review.id.as_str()) {
                return Err(Error::argument(format!("duplicate review id {:?}", review.id)));
            }
        }
        Ok(Corpus { reviews, split })
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.reviews.iter().flat_map(|r| r.sentences.iter())
    }

    pub fn sentence_count(&self) -> usize {
        self.reviews.iter().map(|r| r.sentences.len()).sum()
    }

    pub fn opinion_count(&self) -> usize {
        self.sentences().map(|s| s.opinions.len()).sum()
    }

    /// Serializes back to the SemEval layout.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n<Reviews>\n");
        for review in &self.reviews {
            out.push_str(&format!("  <Review rid=\"{}\">\n    <sentences>\n", escape(&review.id)));
            for s in &review.sentences {
                out.push_str(&format!("      <sentence id=\"{}\">\n", escape(&s.id)));
                out.push_str(&format!("        <text>{}</text>\n", escape(&s.text)));
                if !s.opinions.is_empty() {
                    out.push_str("        <Opinions>\n");
                    for o in &s.opinions {
                        out.push_str(&format!(
                            "          <Opinion target=\"{}\" category=\"{}\" polarity=\"{}\" from=\"{}\" to=\"{}\"/>\n",
                            escape(&o.target),
                            escape(&o.category),
                            escape(&o.polarity),
                            o.from,
                            o.to
                        ));
                    }
                    out.push_str("        </Opinions>\n");
                }
                out.push_str("      </sentence>\n");
            }
            out.push_str("    </sentences>\n  </Review>\n");
        }
        out.push_str("</Reviews>\n");
        out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn char_slice(text: &str, from: usize, to: usize) -> String {
    text.chars().skip(from).take(to.saturating_sub(from)).collect()
}

/// Parses a SemEval ABSA review document.
pub fn parse_semeval_xml(bytes: &[u8], split: SplitTag) -> Result<Corpus> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() as u32 + 1;
        Error::Xml {
            line,
            message: format!("invalid UTF-8: {e}"),
        }
    })?;
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Xml {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "Reviews" {
        return Err(Error::Xml {
            line: doc.text_pos_at(root.range().start).row,
            message: format!("expected <Reviews> root, found <{}>", root.tag_name().name()),
        });
    }

    let mut reviews = Vec::new();
    for review_node in root.children().filter(|n| n.has_tag_name("Review")) {
        let line = doc.text_pos_at(review_node.range().start).row;
        let rid = review_node.attribute("rid").ok_or_else(|| Error::Xml {
            line,
            message: "<Review> without rid attribute".into(),
        })?;
        let mut sentences = Vec::new();
        for sentences_node in review_node.children().filter(|n| n.has_tag_name("sentences")) {
            for sentence_node in sentences_node.children().filter(|n| n.has_tag_name("sentence")) {
                sentences.push(parse_sentence(&doc, sentence_node)?);
            }
        }
        if sentences.is_empty() {
            return Err(Error::Xml {
                line,
                message: format!("review {rid:?} has no sentences"),
            });
        }
        reviews.push(Review {
            id: rid.to_string(),
            sentences,
        });
    }
    Corpus::new(reviews, split)
}

fn parse_sentence(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> Result<Sentence> {
    let line = doc.text_pos_at(node.range().start).row;
    let id = node.attribute("id").ok_or_else(|| Error::Xml {
        line,
        message: "<sentence> without id attribute".into(),
    })?;
    let text = node
        .children()
        .find(|n| n.has_tag_name("text"))
        .map(|n| n.text().unwrap_or("").to_string())
        .ok_or_else(|| Error::Xml {
            line,
            message: format!("sentence {id:?} has no <text>"),
        })?;

    let mut opinions = Vec::new();
    for opinion_node in node
        .children()
        .filter(|n| n.has_tag_name("Opinions"))
        .flat_map(|n| n.children().filter(|c| c.has_tag_name("Opinion")))
    {
        let attr = |name: &str| opinion_node.attribute(name).unwrap_or("").to_string();
        let offset = |name: &str| -> Result<usize> {
            let raw = opinion_node.attribute(name).unwrap_or("0");
            raw.trim().parse::<usize>().map_err(|_| Error::Validation {
                sentence_id: id.to_string(),
                message: format!("opinion attribute {name}={raw:?} is not a non-negative integer"),
            })
        };
        opinions.push(Opinion {
            target: attr("target"),
            category: attr("category"),
            polarity: attr("polarity"),
            from: offset("from")?,
            to: offset("to")?,
        });
    }
    Sentence::new(id, text, opinions)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
}

impl LabeledSequence {
    pub fn new(sentence_id: impl Into<String>, tokens: Vec<String>, labels: Vec<Label>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::argument(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(LabeledSequence {
            sentence_id: sentence_id.into(),
            tokens,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_well_formed(&self) -> bool {
        is_well_formed(&self.labels)
    }
}

/// True when no `I` starts a run.
pub fn is_well_formed(labels: &[Label]) -> bool {
    labels
        .iter()
        .enumerate()
        .all(|(t, &l)| l != Label::I || (t > 0 && labels[t - 1] != Label::O))
}

/// Promotes every `I` that opens a run to `B`.
pub fn repair_bio(labels: &[Label]) -> Vec<Label> {
    let mut out = labels.to_vec();
    for t in 0..out.len() {
        if out[t] == Label::I && (t == 0 || out[t - 1] == Label::O) {
            out[t] = Label::B;
        }
    }
    out
}

/// Maximal `B I*` runs as `(start, end)` token ranges, end exclusive.
/// Input is expected to be well-formed; stray `I`s are ignored.
pub fn extract_spans(labels: &[Label]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &l) in labels.iter().enumerate() {
        match l {
            Label::B => {
                if let Some(s) = open.take() {
                    spans.push((s, t));
                }
                open = Some(t);
            }
            Label::I => {}
            Label::O => {
                if let Some(s) = open.take() {
                    spans.push((s, t));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, labels.len()));
    }
    spans
}

/// Splits on Unicode whitespace. Spans are character offsets.
pub fn whitespace_tokenize(text: &str) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut count = 0;
    for (pos, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
                spans.push((start, pos));
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(c);
        }
        count = pos + 1;
    }
    if !current.is_empty() {
        tokens.push(current);
        spans.push((start, count));
    }
    (tokens, spans)
}

/// An opinion dropped while resolving overlapping annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OverlapWarning {
    pub sentence_id: String,
    pub kept: String,
    pub dropped: String,
}

fn token_range(spans: &[(usize, usize)], from: usize, to: usize) -> Option<(usize, usize)> {
    let hits: Vec<usize> = spans
        .iter()
        .enumerate()
        .filter(|(_, &(a, b))| a < to && from < b)
        .map(|(i, _)| i)
        .collect();
    Some((*hits.first()?, *hits.last()? + 1))
}

/// Drops opinions whose tokens collide with a longer opinion's tokens.
///
/// Opinions with identical spans are not in conflict (SemEval repeats a
/// target once per category) and are all kept. Among conflicting spans the
/// longer one wins; equal lengths keep the one appearing first.
pub fn resolve_overlaps(sentence: &Sentence, token_spans: &[(usize, usize)]) -> (Sentence, Vec<OverlapWarning>) {
    let spanful: Vec<(usize, (usize, usize))> = sentence
        .opinions
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_null())
        .filter_map(|(i, o)| token_range(token_spans, o.from, o.to).map(|r| (i, r)))
        .collect();

    let mut order: Vec<usize> = (0..spanful.len()).collect();
    order.sort_by_key(|&k| {
        let (i, _) = spanful[k];
        let o = &sentence.opinions[i];
        (std::cmp::Reverse(o.to - o.from), i)
    });

    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = HashSet::new();
    let mut warnings = Vec::new();
    for k in order {
        let (i, (s, e)) = spanful[k];
        let op = &sentence.opinions[i];
        let clash = kept.iter().copied().find(|&j| {
            let other = &sentence.opinions[spanful[j].0];
            let (os, oe) = spanful[j].1;
            (other.from, other.to) != (op.from, op.to) && s < oe && os < e
        });
        match clash {
            Some(j) => {
                dropped.insert(i);
                warnings.push(OverlapWarning {
                    sentence_id: sentence.id.clone(),
                    kept: sentence.opinions[spanful[j].0].describe(),
                    dropped: op.describe(),
                });
            }
            None => kept.push(k),
        }
    }

    let opinions = sentence
        .opinions
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, o)| o.clone())
        .collect();
    (
        Sentence {
            id: sentence.id.clone(),
            text: sentence.text.clone(),
            opinions,
        },
        warnings,
    )
}

/// Projects character-span opinions onto tokens.
///
/// Every token overlapping an opinion span is labeled, so a boundary that
/// cuts through a token labels the whole token. `NULL` targets are skipped.
pub fn to_bio(sentence: &Sentence, tokens: &[String], token_spans: &[(usize, usize)]) -> Result<LabeledSequence> {
    if tokens.len() != token_spans.len() {
        return Err(Error::argument(format!(
            "{} tokens but {} token spans",
            tokens.len(),
            token_spans.len()
        )));
    }
    let mut labels = vec![Label::O; tokens.len()];
    let mut owner: Vec<Option<&Opinion>> = vec![None; tokens.len()];
    let mut done: Vec<(usize, usize)> = Vec::new();

    for op in sentence.opinions.iter().filter(|o| !o.is_null()) {
        if done.contains(&(op.from, op.to)) {
            continue;
        }
        let (start, end) = token_range(token_spans, op.from, op.to).ok_or_else(|| Error::Alignment {
            sentence_id: sentence.id.clone(),
            message: format!("opinion {} covers no token", op.describe()),
        })?;
        for t in start..end {
            if let Some(prev) = owner[t] {
                return Err(Error::OpinionOverlap {
                    sentence_id: sentence.id.clone(),
                    first: prev.describe(),
                    second: op.describe(),
                });
            }
            owner[t] = Some(op);
            labels[t] = if t == start { Label::B } else { Label::I };
        }
        done.push((op.from, op.to));
    }
    LabeledSequence::new(sentence.id.clone(), tokens.to_vec(), labels)
}

/// Deterministic review-level k-fold partition.
///
/// The first `n % k` folds receive one extra review.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>> {
    let n = corpus.reviews.len();
    if k < 2 {
        return Err(Error::argument(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::argument(format!("{n} reviews cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        bounds.push(bounds[fold] + size);
    }

    let pick = |idx: &[usize], split| Corpus {
        reviews: idx.iter().map(|&i| corpus.reviews[i].clone()).collect(),
        split,
    };
    Ok((0..k)
        .map(|fold| {
            let test_idx = &order[bounds[fold]..bounds[fold + 1]];
            let train_idx: Vec<usize> = order[..bounds[fold]]
                .iter()
                .chain(&order[bounds[fold + 1]..])
                .copied()
                .collect();
            (pick(&train_idx, SplitTag::Train), pick(test_idx, SplitTag::Test))
        })
        .collect())
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

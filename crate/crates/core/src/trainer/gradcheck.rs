use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{TaggerModel, DENSE_NAMES};
use crate::corpus::Label;
use crate::encoding::SentenceFeatures;
use crate::error::Result;
use crate::parallel::Execution;

/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub max_rel_error: f64,
    /// One entry per trainable tensor; frozen tables are absent.
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn block(&self, name: &str) -> Option<&BlockError> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Dense(usize, usize),
    Word(usize, usize),
    Pos(usize, usize),
}

fn entry(model: &mut TaggerModel, slot: Slot) -> &mut f64 {
    match slot {
        Slot::Dense(block, flat) => {
            let view = model.dense_mut().swap_remove(block);
            &mut view.into_slice().expect("owned tensors are contiguous")[flat]
        }
        Slot::Word(row, col) => &mut model.words.as_mut().expect("word table").vectors[[row, col]],
        Slot::Pos(row, col) => &mut model.pos.as_mut().expect("POS table").vectors[[row, col]],
    }
}

/// Compares every analytic gradient entry against a central difference.
/// Embedding tables are checked on the rows the sentence looks up.
pub fn full_gradient_check(
    model: &TaggerModel,
    features: &SentenceFeatures,
    gold: &[Label],
    eps: f64,
    exec: Execution,
) -> Result<GradCheckReport> {
    check(model, features, gold, eps, None, exec)
}

/// Like [`full_gradient_check`] but examines at most `per_block` randomly
/// chosen entries of each tensor.
pub fn sampled_gradient_check(
    model: &TaggerModel,
    features: &SentenceFeatures,
    gold: &[Label],
    eps: f64,
    per_block: usize,
    seed: u64,
    exec: Execution,
) -> Result<GradCheckReport> {
    check(model, features, gold, eps, Some((per_block, seed)), exec)
}

fn check(
    model: &TaggerModel,
    features: &SentenceFeatures,
    gold: &[Label],
    eps: f64,
    sampling: Option<(usize, u64)>,
    exec: Execution,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(features, gold)?;

    // (block name, slot, analytic value)
    let mut blocks: Vec<(String, Vec<(Slot, f64)>)> = Vec::new();
    for (b, (name, g)) in DENSE_NAMES.iter().zip(grads.dense()).enumerate() {
        let entries = g.iter().enumerate().map(|(i, &v)| (Slot::Dense(b, i), v)).collect();
        blocks.push((name.to_string(), entries));
    }
    for (name, rows, slot) in [
        ("words", &grads.words, Slot::Word as fn(usize, usize) -> Slot),
        ("pos", &grads.pos, Slot::Pos as fn(usize, usize) -> Slot),
    ] {
        if let Some(rows) = rows {
            let entries = rows
                .iter()
                .flat_map(|(&id, g)| g.iter().enumerate().map(move |(c, &v)| (slot(id, c), v)))
                .collect();
            blocks.push((name.to_string(), entries));
        }
    }

    if let Some((per_block, seed)) = sampling {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, entries) in &mut blocks {
            if entries.len() > per_block {
                let mut picked = sample(&mut rng, entries.len(), per_block).into_vec();
                picked.sort_unstable();
                *entries = picked.into_iter().map(|i| entries[i]).collect();
            }
        }
    }

    let jobs: Vec<(usize, Slot, f64)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, (_, entries))| entries.iter().map(move |&(s, a)| (b, s, a)))
        .collect();
    const CHUNK: usize = 64;
    let chunks: Vec<&[(usize, Slot, f64)]> = jobs.chunks(CHUNK).collect();
    let errors: Vec<Result<Vec<f64>>> = exec.map(&chunks, |chunk| {
        let mut probe = model.clone();
        chunk
            .iter()
            .map(|&(_, slot, analytic)| {
                let orig = *entry(&mut probe, slot);
                *entry(&mut probe, slot) = orig + eps;
                let up = probe.loss(features, gold)?;
                *entry(&mut probe, slot) = orig - eps;
                let down = probe.loss(features, gold)?;
                *entry(&mut probe, slot) = orig;
                Ok(rel_error(analytic, (up - down) / (2.0 * eps)))
            })
            .collect()
    });

    let mut report = GradCheckReport {
        eps,
        max_rel_error: 0.0,
        blocks: blocks
            .iter()
            .map(|(name, entries)| BlockError {
                name: name.clone(),
                checked: entries.len(),
                max_rel_error: 0.0,
            })
            .collect(),
    };
    let flat: Vec<f64> = errors.into_iter().collect::<Result<Vec<_>>>()?.concat();
    for (&(b, _, _), err) in jobs.iter().zip(flat) {
        let block = &mut report.blocks[b];
        block.max_rel_error = block.max_rel_error.max(err);
        report.max_rel_error = report.max_rel_error.max(err);
    }
    Ok(report)
}

use ndarray::{Array2, ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::{ModelGrads, RowGrads, TaggerModel};
use crate::encoding::EmbeddingTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Moments<T> {
    m: T,
    v: T,
}

/// SGD or Adam. Embedding rows are updated lazily: only rows that received
/// a gradient in the current step move, and their moments are untouched
/// otherwise.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    dense: Vec<Moments<ArrayD<f64>>>,
    words: Option<Moments<Array2<f64>>>,
    pos: Option<Moments<Array2<f64>>>,
}

fn table_moments(table: &Option<EmbeddingTable>) -> Option<Moments<Array2<f64>>> {
    table.as_ref().filter(|t| t.trainable).map(|t| Moments {
        m: Array2::zeros(t.vectors.dim()),
        v: Array2::zeros(t.vectors.dim()),
    })
}

impl Optimizer {
    pub fn new(model: &TaggerModel, kind: OptimizerKind, lr: f64) -> Self {
        let (dense, words, pos) = match kind {
            OptimizerKind::Sgd => (Vec::new(), None, None),
            OptimizerKind::Adam => (
                model
                    .dense()
                    .iter()
                    .map(|v| Moments {
                        m: ArrayD::zeros(v.raw_dim()),
                        v: ArrayD::zeros(v.raw_dim()),
                    })
                    .collect(),
                table_moments(&model.words),
                table_moments(&model.pos),
            ),
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            dense,
            words,
            pos,
        }
    }

    pub fn step(&mut self, model: &mut TaggerModel, grads: &ModelGrads) {
        self.step = self.step.saturating_add(1);
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (mut p, g) in model.dense_mut().into_iter().zip(grads.dense()) {
                    p.scaled_add(-lr, &g);
                }
                sgd_rows(&mut model.words, &grads.words, lr);
                sgd_rows(&mut model.pos, &grads.pos, lr);
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                for ((p, g), mom) in model.dense_mut().into_iter().zip(grads.dense()).zip(&mut self.dense) {
                    Zip::from(p)
                        .and(&g)
                        .and(&mut mom.m)
                        .and(&mut mom.v)
                        .for_each(|p, &g, m, v| adam_update(p, g, m, v, lr, c1, c2));
                }
                adam_rows(&mut model.words, &grads.words, &mut self.words, lr, c1, c2);
                adam_rows(&mut model.pos, &grads.pos, &mut self.pos, lr, c1, c2);
            }
        }
    }
}

#[inline]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
}

fn sgd_rows(table: &mut Option<EmbeddingTable>, grads: &Option<RowGrads>, lr: f64) {
    if let (Some(t), Some(rows)) = (table, grads) {
        for (&id, g) in rows {
            t.vectors.row_mut(id).scaled_add(-lr, g);
        }
    }
}

fn adam_rows(
    table: &mut Option<EmbeddingTable>,
    grads: &Option<RowGrads>,
    moments: &mut Option<Moments<Array2<f64>>>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    if let (Some(t), Some(rows), Some(mom)) = (table, grads, moments) {
        for (&id, g) in rows {
            Zip::from(t.vectors.row_mut(id))
                .and(g)
                .and(mom.m.row_mut(id))
                .and(mom.v.row_mut(id))
                .for_each(|p, &g, m, v| adam_update(p, g, m, v, lr, c1, c2));
        }
    }
}

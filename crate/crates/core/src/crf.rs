//! Linear-chain CRF over the B/I/O labels.
//!
//! Scores are unnormalized log-potentials. The score of a labeling is
//! `start[y_1] + sum_t emit[t, y_t] + sum_t trans[y_t, y_{t+1}] + end[y_T]`
//! and the likelihood is normalized over all `3^T` labelings.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::corpus::Label;
use crate::error::{Error, Result};

const L: usize = Label::COUNT;

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// `L x F` projection from BiLSTM features to label scores.
    pub emission_w: Array2<f64>,
    pub emission_b: Array1<f64>,
    /// `transitions[[from, to]]`.
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
    /// Masks the O -> I transition with `-inf`.
    pub forbid_oi: bool,
}

/// Gradients of the CRF negative log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGrads {
    /// `T x L`
    pub emissions: Array2<f64>,
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfParams {
    pub fn zeros(feature_dim: usize) -> Self {
        CrfParams {
            emission_w: Array2::zeros((L, feature_dim)),
            emission_b: Array1::zeros(L),
            transitions: Array2::zeros((L, L)),
            start: Array1::zeros(L),
            end: Array1::zeros(L),
            forbid_oi: false,
        }
    }

    /// Projection weights uniform in `+-1/sqrt(F)`, transitions in `+-0.1`,
    /// zero biases and boundary scores.
    pub fn random<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / (feature_dim.max(1) as f64).sqrt();
        let w = Uniform::new_inclusive(-k, k).expect("valid range");
        let t = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
        CrfParams {
            emission_w: Array2::from_shape_simple_fn((L, feature_dim), || w.sample(rng)),
            emission_b: Array1::zeros(L),
            transitions: Array2::from_shape_simple_fn((L, L), || t.sample(rng)),
            start: Array1::zeros(L),
            end: Array1::zeros(L),
            forbid_oi: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.emission_w.ncols()
    }

    /// Transition scores with the optional mask applied.
    pub fn effective_transitions(&self) -> Array2<f64> {
        let mut a = self.transitions.clone();
        if self.forbid_oi {
            a[[Label::O.index(), Label::I.index()]] = f64::NEG_INFINITY;
        }
        a
    }
}

fn check_emissions(emissions: ArrayView2<'_, f64>) -> Result<()> {
    if emissions.ncols() != L {
        return Err(Error::argument(format!("emissions have {} columns, expected {L}", emissions.ncols())));
    }
    if emissions.nrows() == 0 {
        return Err(Error::argument("emissions for an empty sentence"));
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `emissions[t] = W_e . features[t] + b_e`.
pub fn project_emissions(features: ArrayView2<'_, f64>, params: &CrfParams) -> Result<Array2<f64>> {
    if features.ncols() != params.feature_dim() {
        return Err(Error::argument(format!(
            "features have width {}, projection expects {}",
            features.ncols(),
            params.feature_dim()
        )));
    }
    Ok(features.dot(&params.emission_w.t()) + &params.emission_b)
}

/// Backpropagates an emission gradient through the projection.
/// Returns `(grad_features, grad_w, grad_b)`.
pub fn project_backward(
    features: ArrayView2<'_, f64>,
    grad_emissions: ArrayView2<'_, f64>,
    params: &CrfParams,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (
        grad_emissions.dot(&params.emission_w),
        grad_emissions.t().dot(&features),
        grad_emissions.sum_axis(Axis(0)),
    )
}

pub fn sequence_score(emissions: ArrayView2<'_, f64>, labels: &[Label], params: &CrfParams) -> Result<f64> {
    check_emissions(emissions)?;
    if labels.len() != emissions.nrows() {
        return Err(Error::argument(format!(
            "{} labels for {} emission rows",
            labels.len(),
            emissions.nrows()
        )));
    }
    let a = params.effective_transitions();
    // Summed in path order, the same order the Viterbi recursion uses.
    let mut score = params.start[labels[0].index()] + emissions[[0, labels[0].index()]];
    for t in 1..labels.len() {
        score += a[[labels[t - 1].index(), labels[t].index()]];
        score += emissions[[t, labels[t].index()]];
    }
    Ok(score + params.end[labels[labels.len() - 1].index()])
}

/// Forward log-messages, `alpha[t][y]` = log-sum of all prefixes ending in y.
fn forward_messages(emissions: ArrayView2<'_, f64>, params: &CrfParams, a: &Array2<f64>) -> Array2<f64> {
    let t_len = emissions.nrows();
    let mut alpha = Array2::zeros((t_len, L));
    for y in 0..L {
        alpha[[0, y]] = params.start[y] + emissions[[0, y]];
    }
    let mut buf = [0.0; L];
    for t in 1..t_len {
        for y in 0..L {
            for (prev, slot) in buf.iter_mut().enumerate() {
                *slot = alpha[[t - 1, prev]] + a[[prev, y]];
            }
            alpha[[t, y]] = log_sum_exp(&buf) + emissions[[t, y]];
        }
    }
    alpha
}

fn backward_messages(emissions: ArrayView2<'_, f64>, params: &CrfParams, a: &Array2<f64>) -> Array2<f64> {
    let t_len = emissions.nrows();
    let mut beta = Array2::zeros((t_len, L));
    for y in 0..L {
        beta[[t_len - 1, y]] = params.end[y];
    }
    let mut buf = [0.0; L];
    for t in (0..t_len - 1).rev() {
        for y in 0..L {
            for (next, slot) in buf.iter_mut().enumerate() {
                *slot = a[[y, next]] + emissions[[t + 1, next]] + beta[[t + 1, next]];
            }
            beta[[t, y]] = log_sum_exp(&buf);
        }
    }
    beta
}

fn log_z_from_alpha(alpha: &Array2<f64>, params: &CrfParams) -> f64 {
    let last = alpha.nrows() - 1;
    let terms: Vec<f64> = (0..L).map(|y| alpha[[last, y]] + params.end[y]).collect();
    log_sum_exp(&terms)
}

/// Log of the sum of exponentiated scores over all labelings.
pub fn log_partition(emissions: ArrayView2<'_, f64>, params: &CrfParams) -> Result<f64> {
    check_emissions(emissions)?;
    let a = params.effective_transitions();
    Ok(log_z_from_alpha(&forward_messages(emissions, params, &a), params))
}

/// Per-position label marginals, `T x L`; rows sum to 1.
pub fn marginals(emissions: ArrayView2<'_, f64>, params: &CrfParams) -> Result<Array2<f64>> {
    check_emissions(emissions)?;
    let a = params.effective_transitions();
    let alpha = forward_messages(emissions, params, &a);
    let beta = backward_messages(emissions, params, &a);
    let log_z = log_z_from_alpha(&alpha, params);
    Ok((alpha + beta).mapv(|v| (v - log_z).exp()))
}

/// Negative log-likelihood of `gold` and its exact gradients.
pub fn nll_loss(emissions: ArrayView2<'_, f64>, gold: &[Label], params: &CrfParams) -> Result<(f64, CrfGrads)> {
    let gold_score = sequence_score(emissions, gold, params)?;
    let a = params.effective_transitions();
    let t_len = emissions.nrows();
    let alpha = forward_messages(emissions, params, &a);
    let beta = backward_messages(emissions, params, &a);
    let log_z = log_z_from_alpha(&alpha, params);

    let mut grad_emissions = (&alpha + &beta).mapv(|v| (v - log_z).exp());
    let mut grad_trans = Array2::zeros((L, L));
    for t in 0..t_len.saturating_sub(1) {
        for y in 0..L {
            for next in 0..L {
                let lp = alpha[[t, y]] + a[[y, next]] + emissions[[t + 1, next]] + beta[[t + 1, next]] - log_z;
                grad_trans[[y, next]] += lp.exp();
            }
        }
    }
    let mut grad_start = grad_emissions.row(0).to_owned();
    let mut grad_end = grad_emissions.row(t_len - 1).to_owned();

    for (t, y) in gold.iter().enumerate() {
        grad_emissions[[t, y.index()]] -= 1.0;
        if t > 0 {
            grad_trans[[gold[t - 1].index(), y.index()]] -= 1.0;
        }
    }
    grad_start[gold[0].index()] -= 1.0;
    grad_end[gold[t_len - 1].index()] -= 1.0;
    if params.forbid_oi {
        grad_trans[[Label::O.index(), Label::I.index()]] = 0.0;
    }

    Ok((
        log_z - gold_score,
        CrfGrads {
            emissions: grad_emissions,
            transitions: grad_trans,
            start: grad_start,
            end: grad_end,
        },
    ))
}

/// Highest-scoring labeling and its score. Ties go to the lowest label
/// index (B < I < O) at every backtracking step.
pub fn viterbi_decode(emissions: ArrayView2<'_, f64>, params: &CrfParams) -> Result<(Vec<Label>, f64)> {
    check_emissions(emissions)?;
    let a = params.effective_transitions();
    let t_len = emissions.nrows();
    let mut delta = Array2::zeros((t_len, L));
    let mut back = Array2::<usize>::zeros((t_len, L));
    for y in 0..L {
        delta[[0, y]] = params.start[y] + emissions[[0, y]];
    }
    for t in 1..t_len {
        for y in 0..L {
            let mut best = 0;
            let mut best_score = delta[[t - 1, 0]] + a[[0, y]];
            for prev in 1..L {
                let s = delta[[t - 1, prev]] + a[[prev, y]];
                if s > best_score {
                    best = prev;
                    best_score = s;
                }
            }
            delta[[t, y]] = best_score + emissions[[t, y]];
            back[[t, y]] = best;
        }
    }
    let mut last = 0;
    let mut score = delta[[t_len - 1, 0]] + params.end[0];
    for y in 1..L {
        let s = delta[[t_len - 1, y]] + params.end[y];
        if s > score {
            last = y;
            score = s;
        }
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    Ok((path.into_iter().map(Label::from_index).collect(), score))
}

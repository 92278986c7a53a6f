//! Single-layer bidirectional LSTM with exact backpropagation through time.
//!
//! Gate blocks are stacked in the order input, forget, cell candidate,
//! output: rows `[0, H)` of every weight matrix and bias belong to the input
//! gate, `[H, 2H)` to the forget gate, `[2H, 3H)` to the candidate and
//! `[3H, 4H)` to the output gate.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Forward-hidden followed by backward-hidden, one row per token.
pub type FeatureSequence = Array2<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4H x D_in`
    pub w: Array2<f64>,
    /// `4H x H`
    pub u: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w: Array2::zeros((4 * hidden, input_dim)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` weights and biases, forget bias 1.
    pub fn random<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("valid range");
        let mut p = LstmParams {
            w: Array2::from_shape_simple_fn((4 * hidden, input_dim), || dist.sample(rng)),
            u: Array2::from_shape_simple_fn((4 * hidden, hidden), || dist.sample(rng)),
            b: Array1::from_shape_simple_fn(4 * hidden, || dist.sample(rng)),
        };
        p.b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        p
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.nrows() != 4 * h || self.w.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::argument(format!(
                "inconsistent LSTM shapes: W {:?}, U {:?}, b {}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies the gate nonlinearities in place to a `4H` pre-activation row
/// and returns the new `(h, c, tanh(c))`.
fn activate(a: &mut [f64], c_prev: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let h = c_prev.len();
    for v in &mut a[..2 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut a[2 * h..3 * h] {
        *v = v.tanh();
    }
    for v in &mut a[3 * h..] {
        *v = sigmoid(*v);
    }
    let mut c = Array1::zeros(h);
    let mut tc = Array1::zeros(h);
    let mut out = Array1::zeros(h);
    for j in 0..h {
        let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
        c[j] = f * c_prev[j] + i * g;
        tc[j] = f64::tanh(c[j]);
        out[j] = o * tc[j];
    }
    (out, c, tc)
}

/// One LSTM step.
pub fn lstm_cell(
    x: ArrayView1<'_, f64>,
    h: ArrayView1<'_, f64>,
    c: ArrayView1<'_, f64>,
    params: &LstmParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    params.check()?;
    let hidden = params.hidden();
    if x.len() != params.input_dim() || h.len() != hidden || c.len() != hidden {
        return Err(Error::argument(format!(
            "lstm_cell: x {}, h {}, c {} against D_in {}, H {}",
            x.len(),
            h.len(),
            c.len(),
            params.input_dim(),
            hidden
        )));
    }
    let mut a = params.w.dot(&x) + params.u.dot(&h) + &params.b;
    let (h_new, c_new, _) = activate(a.as_slice_mut().expect("contiguous"), c);
    Ok((h_new, c_new))
}

/// Intermediates of one direction, in processing order.
#[derive(Clone, Debug)]
pub struct DirectionTrace {
    /// Post-activation gates, `T x 4H`.
    gates: Array2<f64>,
    /// `(T+1) x H`, row 0 is the zero initial state.
    hs: Array2<f64>,
    cs: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn run_direction(input: ArrayView2<'_, f64>, p: &LstmParams) -> DirectionTrace {
    let (t_len, hidden) = (input.nrows(), p.hidden());
    let projected = input.dot(&p.w.t());
    let mut gates = Array2::zeros((t_len, 4 * hidden));
    let mut hs = Array2::zeros((t_len + 1, hidden));
    let mut cs = Array2::zeros((t_len + 1, hidden));
    let mut tanh_c = Array2::zeros((t_len, hidden));
    for t in 0..t_len {
        let mut a = &projected.row(t) + &p.u.dot(&hs.row(t)) + &p.b;
        let (h, c, tc) = activate(a.as_slice_mut().expect("contiguous"), cs.row(t));
        gates.row_mut(t).assign(&a);
        hs.row_mut(t + 1).assign(&h);
        cs.row_mut(t + 1).assign(&c);
        tanh_c.row_mut(t).assign(&tc);
    }
    DirectionTrace { gates, hs, cs, tanh_c }
}

/// Returns `(grad_input, grad_params)` for one direction given the loss
/// gradient on its hidden outputs (processing order).
fn backprop_direction(
    input: ArrayView2<'_, f64>,
    p: &LstmParams,
    trace: &DirectionTrace,
    grad_h: ArrayView2<'_, f64>,
) -> (Array2<f64>, LstmParams) {
    let (t_len, hidden) = (input.nrows(), p.hidden());
    let mut grad_pre = Array2::zeros((t_len, 4 * hidden));
    let mut dh_next = Array1::<f64>::zeros(hidden);
    let mut dc_next = Array1::<f64>::zeros(hidden);
    for t in (0..t_len).rev() {
        let g = trace.gates.row(t);
        let c_prev = trace.cs.row(t);
        let tc = trace.tanh_c.row(t);
        let mut da = grad_pre.row_mut(t);
        for j in 0..hidden {
            let (i, f, cand, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let dh = grad_h[[t, j]] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
            da[j] = dc * cand * i * (1.0 - i);
            da[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
            da[2 * hidden + j] = dc * i * (1.0 - cand * cand);
            da[3 * hidden + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next = p.u.t().dot(&da);
    }
    let grads = LstmParams {
        w: grad_pre.t().dot(&input),
        u: grad_pre.t().dot(&trace.hs.slice(s![..t_len, ..])),
        b: grad_pre.sum_axis(Axis(0)),
    };
    (grad_pre.dot(&p.w), grads)
}

/// Forward and backward LSTM over the same input.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    fwd: DirectionTrace,
    bwd: DirectionTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmGrads {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

fn reversed(m: ArrayView2<'_, f64>) -> ArrayView2<'_, f64> {
    m.slice_move(s![..;-1, ..])
}

impl BiLstm {
    pub fn random<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = LstmParams::random(input_dim, hidden, rng);
        let bwd = LstmParams::random(input_dim, hidden, rng);
        BiLstm { fwd, bwd }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    fn check_input(&self, input: ArrayView2<'_, f64>) -> Result<()> {
        self.fwd.check()?;
        self.bwd.check()?;
        if self.fwd.dim_pair() != self.bwd.dim_pair() {
            return Err(Error::argument("forward and backward LSTM shapes differ"));
        }
        if input.nrows() == 0 {
            return Err(Error::argument("BiLSTM input has no tokens"));
        }
        if input.ncols() != self.input_dim() {
            return Err(Error::argument(format!(
                "BiLSTM input width {} but parameters expect {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<FeatureSequence> {
        Ok(self.forward_trace(input)?.0)
    }

    pub fn forward_trace(&self, input: ArrayView2<'_, f64>) -> Result<(FeatureSequence, BiLstmTrace)> {
        self.check_input(input)?;
        let hidden = self.hidden();
        let fwd = run_direction(input, &self.fwd);
        let bwd = run_direction(reversed(input), &self.bwd);
        let t_len = input.nrows();
        let mut out = Array2::zeros((t_len, 2 * hidden));
        out.slice_mut(s![.., ..hidden]).assign(&fwd.hs.slice(s![1.., ..]));
        out.slice_mut(s![.., hidden..])
            .assign(&bwd.hs.slice(s![1..;-1, ..]));
        Ok((out, BiLstmTrace { fwd, bwd }))
    }

    /// Gradients of a scalar loss whose gradient with respect to the
    /// features is `upstream` (`T x 2H`).
    pub fn backward(
        &self,
        input: ArrayView2<'_, f64>,
        trace: &BiLstmTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, BiLstmGrads)> {
        self.check_input(input)?;
        let hidden = self.hidden();
        if upstream.dim() != (input.nrows(), 2 * hidden) || trace.fwd.gates.nrows() != input.nrows() {
            return Err(Error::argument(format!(
                "upstream gradient {:?} does not match {} tokens x {}",
                upstream.dim(),
                input.nrows(),
                2 * hidden
            )));
        }
        let (dx_f, g_f) = backprop_direction(input, &self.fwd, &trace.fwd, upstream.slice(s![.., ..hidden]));
        let (dx_b, g_b) = backprop_direction(
            reversed(input),
            &self.bwd,
            &trace.bwd,
            upstream.slice(s![..;-1, hidden..]),
        );
        let grad_input = dx_f + dx_b.slice(s![..;-1, ..]);
        Ok((grad_input, BiLstmGrads { fwd: g_f, bwd: g_b }))
    }
}

impl LstmParams {
    fn dim_pair(&self) -> (usize, usize) {
        (self.input_dim(), self.hidden())
    }
}

/// Convenience wrapper running the forward pass then backpropagating.
pub fn bilstm_backward(
    input: ArrayView2<'_, f64>,
    params: &BiLstm,
    upstream: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, BiLstmGrads)> {
    let (_, trace) = params.forward_trace(input)?;
    params.backward(input, &trace, upstream)
}

pub fn bilstm_forward(input: ArrayView2<'_, f64>, params: &BiLstm) -> Result<FeatureSequence> {
    params.forward(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Accessor = fn(&mut BiLstm) -> &mut [f64];

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        let d = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((rows, cols), || d.sample(r))
    }

    /// Plain-loop reimplementation of one direction.
    fn naive_direction(xs: &[Vec<f64>], p: &LstmParams) -> Vec<Vec<f64>> {
        let h_dim = p.hidden();
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        let mut out = Vec::new();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for x in xs {
            let pre = |row: usize| {
                let mut acc = p.b[row];
                for (k, xv) in x.iter().enumerate() {
                    acc += p.w[[row, k]] * xv;
                }
                for (k, hv) in h.iter().enumerate() {
                    acc += p.u[[row, k]] * hv;
                }
                acc
            };
            let mut nh = vec![0.0; h_dim];
            let mut nc = vec![0.0; h_dim];
            for j in 0..h_dim {
                let i = sig(pre(j));
                let f = sig(pre(h_dim + j));
                let g = pre(2 * h_dim + j).tanh();
                let o = sig(pre(3 * h_dim + j));
                nc[j] = f * c[j] + i * g;
                nh[j] = o * nc[j].tanh();
            }
            h = nh;
            c = nc;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn zero_cell() {
        let p = LstmParams::zeros(3, 2);
        let (h, c) = lstm_cell(array![1.0, -2.0, 0.5].view(), Array1::zeros(2).view(), Array1::zeros(2).view(), &p).unwrap();
        assert_eq!(h, Array1::<f64>::zeros(2));
        assert_eq!(c, Array1::<f64>::zeros(2));
    }

    #[test]
    fn zero_weights_with_unit_cell() {
        let p = LstmParams::zeros(2, 3);
        let (h, c) = lstm_cell(array![0.3, 0.7].view(), Array1::zeros(3).view(), Array1::ones(3).view(), &p).unwrap();
        // f = 0.5, i*g = 0, o = 0.5
        for j in 0..3 {
            assert_abs_diff_eq!(c[j], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(h[j], 0.5 * 0.5f64.tanh(), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(h[0], 0.23105857863000487, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_single_unit() {
        // H = 1, D_in = 1; pre-activations: i = 0.5x, f = 0.2 + 0.1h, g = x - h, o = 1
        let p = LstmParams {
            w: array![[0.5], [0.0], [1.0], [0.0]],
            u: array![[0.0], [0.1], [-1.0], [0.0]],
            b: array![0.0, 0.2, 0.0, 1.0],
        };
        let (h, c) = lstm_cell(array![2.0].view(), array![0.5].view(), array![-1.0].view(), &p).unwrap();
        let i = 1.0 / (1.0 + (-1.0f64).exp());
        let f = 1.0 / (1.0 + (-0.25f64).exp());
        let g = 1.5f64.tanh();
        let o = 1.0 / (1.0 + (-1.0f64).exp());
        let c_want = -f + i * g;
        assert_abs_diff_eq!(c[0], c_want, epsilon = 1e-15);
        assert_abs_diff_eq!(h[0], o * c_want.tanh(), epsilon = 1e-15);
        // i=0.7310585786, f=0.5621765009, g=0.9051482536, o=0.7310585786
        assert_abs_diff_eq!(c[0], 0.0995398948732491, epsilon = 1e-12);
    }

    #[test]
    fn cell_dimension_errors() {
        let p = LstmParams::zeros(3, 2);
        let z2 = Array1::zeros(2);
        assert!(lstm_cell(Array1::zeros(4).view(), z2.view(), z2.view(), &p).is_err());
        assert!(lstm_cell(Array1::zeros(3).view(), Array1::zeros(1).view(), z2.view(), &p).is_err());
    }

    #[test]
    fn matches_naive_reimplementation() {
        let mut r = rng(3);
        let net = BiLstm::random(4, 2, &mut r);
        let x = random_matrix(3, 4, &mut r);
        let out = net.forward(x.view()).unwrap();
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let fwd = naive_direction(&rows, &net.fwd);
        let mut rev = rows.clone();
        rev.reverse();
        let mut bwd = naive_direction(&rev, &net.bwd);
        bwd.reverse();
        for t in 0..3 {
            for j in 0..2 {
                assert_abs_diff_eq!(out[[t, j]], fwd[t][j], epsilon = 1e-12);
                assert_abs_diff_eq!(out[[t, 2 + j]], bwd[t][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_token_concatenates_both_directions() {
        let mut r = rng(4);
        let net = BiLstm::random(3, 2, &mut r);
        let x = random_matrix(1, 3, &mut r);
        let out = net.forward(x.view()).unwrap();
        let z = Array1::zeros(2);
        let (hf, _) = lstm_cell(x.row(0), z.view(), z.view(), &net.fwd).unwrap();
        let (hb, _) = lstm_cell(x.row(0), z.view(), z.view(), &net.bwd).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(out[[0, j]], hf[j], epsilon = 1e-15);
            assert_abs_diff_eq!(out[[0, 2 + j]], hb[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn reversal_symmetry() {
        let mut r = rng(5);
        let net = BiLstm::random(3, 4, &mut r);
        let x = random_matrix(5, 3, &mut r);
        let out = net.forward(x.view()).unwrap();
        let swapped = BiLstm {
            fwd: net.bwd.clone(),
            bwd: net.fwd.clone(),
        };
        let rev_out = swapped.forward(x.slice(s![..;-1, ..])).unwrap();
        for t in 0..5 {
            assert_eq!(rev_out.slice(s![4 - t, ..4]), out.slice(s![t, 4..]));
            assert_eq!(rev_out.slice(s![4 - t, 4..]), out.slice(s![t, ..4]));
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let net = BiLstm::random(3, 2, &mut rng(0));
        assert!(net.forward(Array2::zeros((0, 3)).view()).is_err());
        assert!(net.forward(Array2::zeros((2, 4)).view()).is_err());
        let x = Array2::zeros((2, 3));
        assert!(bilstm_backward(x.view(), &net, Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(6);
        let net = BiLstm::random(3, 2, &mut r);
        let x = random_matrix(4, 3, &mut r);
        let (gx, g) = bilstm_backward(x.view(), &net, Array2::zeros((4, 4)).view()).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        for p in [&g.fwd, &g.bwd] {
            assert!(p.w.iter().chain(p.u.iter()).chain(p.b.iter()).all(|&v| v == 0.0));
        }
    }

    /// Loss = sum(features * weights) for a fixed random weight matrix.
    fn loss(net: &BiLstm, x: &Array2<f64>, weights: &Array2<f64>) -> f64 {
        (net.forward(x.view()).unwrap() * weights).sum()
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    fn check_block(
        net: &mut BiLstm,
        x: &Array2<f64>,
        weights: &Array2<f64>,
        analytic: &[f64],
        get: Accessor,
    ) -> f64 {
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = get(net)[k];
            get(net)[k] = orig + eps;
            let up = loss(net, x, weights);
            get(net)[k] = orig - eps;
            let down = loss(net, x, weights);
            get(net)[k] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * eps)));
        }
        worst
    }

    #[test]
    fn finite_difference_agreement() {
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let mut net = BiLstm::random(5, 3, &mut r);
            let x = random_matrix(4, 5, &mut r);
            let weights = random_matrix(4, 6, &mut r);
            let (gx, g) = bilstm_backward(x.view(), &net, weights.view()).unwrap();

            let blocks: [(Vec<f64>, Accessor); 6] = [
                (g.fwd.w.iter().copied().collect(), |n| n.fwd.w.as_slice_mut().unwrap()),
                (g.fwd.u.iter().copied().collect(), |n| n.fwd.u.as_slice_mut().unwrap()),
                (g.fwd.b.to_vec(), |n| n.fwd.b.as_slice_mut().unwrap()),
                (g.bwd.w.iter().copied().collect(), |n| n.bwd.w.as_slice_mut().unwrap()),
                (g.bwd.u.iter().copied().collect(), |n| n.bwd.u.as_slice_mut().unwrap()),
                (g.bwd.b.to_vec(), |n| n.bwd.b.as_slice_mut().unwrap()),
            ];
            for (analytic, get) in blocks {
                let err = check_block(&mut net, &x, &weights, &analytic, get);
                assert!(err <= 1e-4, "seed {seed}: parameter rel err {err}");
            }

            let eps = 1e-5;
            let mut xp = x.clone();
            for t in 0..4 {
                for d in 0..5 {
                    let orig = xp[[t, d]];
                    xp[[t, d]] = orig + eps;
                    let up = loss(&net, &xp, &weights);
                    xp[[t, d]] = orig - eps;
                    let down = loss(&net, &xp, &weights);
                    xp[[t, d]] = orig;
                    let err = rel_err(gx[[t, d]], (up - down) / (2.0 * eps));
                    assert!(err <= 1e-4, "seed {seed}: input rel err {err}");
                }
            }
        }
    }

    #[test]
    fn last_token_gradient_reaches_first_input() {
        let mut r = rng(9);
        let net = BiLstm::random(3, 2, &mut r);
        let x = random_matrix(5, 3, &mut r);
        let mut up = Array2::zeros((5, 4));
        up.row_mut(4).fill(1.0);
        let (gx, _) = bilstm_backward(x.view(), &net, up.view()).unwrap();
        assert!(gx.row(0).iter().any(|&v| v.abs() > 1e-8));

        // perturbing the last input moves the first output row
        let base = net.forward(x.view()).unwrap();
        let mut x2 = x.clone();
        x2[[4, 0]] += 0.5;
        let moved = net.forward(x2.view()).unwrap();
        assert_ne!(base.row(0), moved.row(0));
        assert_eq!(base.slice(s![0, ..2]), moved.slice(s![0, ..2]));
    }

    #[test]
    fn hidden_states_bounded_and_deterministic() {
        let mut r = rng(10);
        let net = BiLstm::random(3, 4, &mut r);
        let x = random_matrix(8, 3, &mut r) * 50.0;
        let a = net.forward(x.view()).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1.0));
        let b = net.forward(x.view()).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn init_ranges() {
        let p = LstmParams::random(7, 16, &mut rng(1));
        let k = 0.25;
        assert!(p.w.iter().chain(p.u.iter()).all(|v| v.abs() <= k));
        assert!(p.b.slice(s![16..32]).iter().all(|&v| v == 1.0));
    }
}

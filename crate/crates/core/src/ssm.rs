//! Sequence mixers: the selective state-space (S6) recurrence, its
//! materialized lower-triangular mixing matrix, and reference softmax
//! attention.
//!
//! S6 is realized per channel: each of the `d` input channels drives its own
//! `n`-dimensional state, and all channels share the input-dependent `B_i`
//! and `C_i` projections. With `Δ_{i,c} = softplus((W_Δ x_i + b_Δ)_c)`:
//!
//! ```text
//! h_{i,c} = exp(-Δ_{i,c} a_c) ⊙ h_{i-1,c} + Δ_{i,c} B_i x_{i,c}
//! y_{i,c} = <C_i, h_{i,c}> + D_c x_{i,c}
//! ```

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `batch × N × d` token features.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub data: Array3<f64>,
}

impl SequenceBatch {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sequence batch contains non-finite values"));
        }
        Ok(SequenceBatch { data })
    }

    pub fn from_single(x: Array2<f64>) -> Self {
        let (n, d) = x.dim();
        SequenceBatch { data: x.into_shape_with_order((1, n, d)).expect("contiguous") }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn len(&self) -> usize {
        self.data.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn item(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    fn map_items(&self, f: impl FnMut(ArrayView2<f64>) -> Array2<f64>) -> SequenceBatch {
        let items: Vec<Array2<f64>> = self.data.outer_iter().map(f).collect();
        let views: Vec<_> = items.iter().map(|a| a.view()).collect();
        SequenceBatch { data: ndarray::stack(Axis(0), &views).expect("uniform item shapes") }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Learned S6 matrices. Linear maps are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct S6Params {
    /// `d × d`
    pub w_delta: Array2<f64>,
    pub b_delta: Array1<f64>,
    /// `d × n` decay rates, the per-channel diagonal of `W_A`. Entries must
    /// stay nonnegative so every `exp(-Δ a)` lies in `(0, 1]`.
    pub a_log: Array2<f64>,
    /// `n × d`
    pub w_b: Array2<f64>,
    /// `n × d`
    pub w_c: Array2<f64>,
    /// Per-channel skip `D`.
    pub d_skip: Array1<f64>,
    /// Input-dependent skip `D_i = W_D x_i` (`d × d`). When set it replaces
    /// `d_skip`, making the skip term quadratic in the input.
    pub w_skip: Option<Array2<f64>>,
}

impl S6Params {
    pub fn width(&self) -> usize {
        self.w_delta.nrows()
    }

    pub fn state_size(&self) -> usize {
        self.a_log.ncols()
    }

    /// Mamba-style initialization: `a_{c,s} = s + 1`, step sizes in
    /// `[1e-3, 1e-1]`, unit skip.
    pub fn init(d: usize, n: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        let w_delta = uniform(d, d);
        let w_b = uniform(n, d);
        let w_c = uniform(n, d);
        let b_delta = Array1::from_shape_fn(d, |_| {
            let dt: f64 = rng.gen_range(1e-3f64.ln()..1e-1f64.ln()).exp();
            // inverse softplus
            dt + (-(-dt).exp_m1()).ln()
        });
        let a_log = Array2::from_shape_fn((d, n), |(_, s)| (s + 1) as f64);
        S6Params { w_delta, b_delta, a_log, w_b, w_c, d_skip: Array1::ones(d), w_skip: None }
    }

    /// Fully random parameters for property checks: every entry generic,
    /// decay rates in `[0, 2)`.
    pub fn random(d: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |rows, cols, lo: f64, hi: f64| Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi));
        let w_delta = m(d, d, -1.0, 1.0);
        let b_delta = m(1, d, -1.0, 1.0).remove_axis(Axis(0));
        let a_log = m(d, n, 0.0, 2.0);
        let w_b = m(n, d, -1.0, 1.0);
        let w_c = m(n, d, -1.0, 1.0);
        let d_skip = m(1, d, -1.0, 1.0).remove_axis(Axis(0));
        S6Params { w_delta, b_delta, a_log, w_b, w_c, d_skip, w_skip: None }
    }

    /// Parameters under which S6 reduces to the identity map `y = x`.
    pub fn pointwise(d: usize, n: usize) -> Self {
        S6Params {
            w_delta: Array2::zeros((d, d)),
            b_delta: Array1::zeros(d),
            a_log: Array2::zeros((d, n)),
            w_b: Array2::zeros((n, d)),
            w_c: Array2::zeros((n, d)),
            d_skip: Array1::ones(d),
            w_skip: None,
        }
    }

    /// Shape consistency plus the stability requirement `a_log >= 0`.
    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.width(), self.state_size());
        let shapes_ok = self.w_delta.dim() == (d, d)
            && self.b_delta.len() == d
            && self.a_log.nrows() == d
            && self.w_b.dim() == (n, d)
            && self.w_c.dim() == (n, d)
            && self.d_skip.len() == d
            && self.w_skip.as_ref().is_none_or(|w| w.dim() == (d, d));
        if !shapes_ok {
            return Err(Error::ShapeMismatch("inconsistent S6 parameter shapes".into()));
        }
        if self.a_log.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid("decay rates must be finite and nonnegative"));
        }
        Ok(())
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.width() {
            return Err(Error::ShapeMismatch(format!("input width {} != model width {}", x.ncols(), self.width())));
        }
        Ok(())
    }

    /// Input-dependent quantities shared by the scan and the matrix form.
    fn selection(&self, x: &ArrayView2<f64>) -> Selection {
        let mut delta = x.dot(&self.w_delta.t());
        delta += &self.b_delta;
        delta.mapv_inplace(softplus);
        let skip = match &self.w_skip {
            Some(w) => x.dot(&w.t()),
            None => Array2::from_shape_fn(x.dim(), |(_, c)| self.d_skip[c]),
        };
        Selection { delta, b: x.dot(&self.w_b.t()), c: x.dot(&self.w_c.t()), skip }
    }
}

struct Selection {
    /// `N × d`
    delta: Array2<f64>,
    /// `N × n`
    b: Array2<f64>,
    /// `N × n`
    c: Array2<f64>,
    /// `N × d`, the skip coefficient `D_{i,c}`
    skip: Array2<f64>,
}

/// Left-to-right recurrence over one sequence (`N × d`), zero initial state.
pub fn s6_scan_seq(p: &S6Params, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    p.check_width(&x)?;
    let (len, d) = x.dim();
    let n = p.state_size();
    let sel = p.selection(&x);
    let mut state = vec![0.0; d * n];
    let mut y = Array2::zeros((len, d));
    for i in 0..len {
        let b = sel.b.row(i);
        let c = sel.c.row(i);
        for ch in 0..d {
            let dt = sel.delta[[i, ch]];
            let xv = x[[i, ch]];
            let h = &mut state[ch * n..(ch + 1) * n];
            let a = p.a_log.row(ch);
            let mut acc = 0.0;
            for s in 0..n {
                h[s] = (-dt * a[s]).exp() * h[s] + dt * b[s] * xv;
                acc += c[s] * h[s];
            }
            y[[i, ch]] = acc + sel.skip[[i, ch]] * xv;
        }
    }
    Ok(y)
}

pub fn s6_scan(p: &S6Params, x: &SequenceBatch) -> Result<SequenceBatch> {
    if x.width() != p.width() {
        return Err(Error::ShapeMismatch(format!("input width {} != model width {}", x.width(), p.width())));
    }
    Ok(x.map_items(|item| s6_scan_seq(p, item).expect("width checked")))
}

/// The `N × N` mixing matrix of channel `ch`: `y[:, ch] = M · x[:, ch]`.
///
/// Entry `(i, j)`, `j < i`, is `Σ_s C_{i,s} (∏_{k=j+1}^{i} exp(-Δ_{k,ch} a_{ch,s})) Δ_{j,ch} B_{j,s}`;
/// the diagonal is `C_i·(Δ_i B_i) + D_{i,ch}`; everything above is zero.
pub fn s6_materialize(p: &S6Params, x: ArrayView2<f64>, ch: usize) -> Result<Array2<f64>> {
    p.check_width(&x)?;
    if ch >= p.width() {
        return Err(Error::IndexOutOfRange { index: ch, len: p.width() });
    }
    let len = x.nrows();
    let n = p.state_size();
    let sel = p.selection(&x);
    let a = p.a_log.row(ch);
    let mut m = Array2::zeros((len, len));
    for i in 0..len {
        for j in 0..=i {
            let mut entry = 0.0;
            for st in 0..n {
                let mut decay = 1.0;
                for k in j + 1..=i {
                    decay *= (-sel.delta[[k, ch]] * a[st]).exp();
                }
                entry += sel.c[[i, st]] * decay * sel.delta[[j, ch]] * sel.b[[j, st]];
            }
            if i == j {
                entry += sel.skip[[i, ch]];
            }
            m[[i, j]] = entry;
        }
    }
    Ok(m)
}

/// S6 output computed channel by channel through the materialized matrices.
pub fn s6_via_matrix(p: &S6Params, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    p.check_width(&x)?;
    let mut y = Array2::zeros(x.dim());
    for ch in 0..p.width() {
        let m = s6_materialize(p, x, ch)?;
        y.column_mut(ch).assign(&m.dot(&x.column(ch)));
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl AttnParams {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mut m = || Array2::from_shape_fn((d, d), |_| rng.gen_range(-bound..bound));
        AttnParams { w_q: m(), w_k: m(), w_v: m() }
    }

    pub fn width(&self) -> usize {
        self.w_q.nrows()
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// The attention mixing matrix `softmax(QKᵀ/√d)` of one sequence. With
/// `causal`, entries above the diagonal are masked before the softmax.
pub fn attention_matrix(p: &AttnParams, x: ArrayView2<f64>, causal: bool) -> Result<Array2<f64>> {
    if x.ncols() != p.width() {
        return Err(Error::ShapeMismatch(format!("input width {} != model width {}", x.ncols(), p.width())));
    }
    let q = x.dot(&p.w_q);
    let k = x.dot(&p.w_k);
    let mut logits = q.dot(&k.t()) / (p.width() as f64).sqrt();
    if causal {
        let n = logits.nrows();
        for i in 0..n {
            logits.slice_mut(s![i, i + 1..]).fill(f64::NEG_INFINITY);
        }
    }
    softmax_rows(&mut logits);
    Ok(logits)
}

pub fn sdpa_seq(p: &AttnParams, x: ArrayView2<f64>, causal: bool) -> Result<Array2<f64>> {
    let phi = attention_matrix(p, x, causal)?;
    Ok(phi.dot(&x.dot(&p.w_v)))
}

pub fn sdpa(p: &AttnParams, x: &SequenceBatch, causal: bool) -> Result<SequenceBatch> {
    if x.width() != p.width() {
        return Err(Error::ShapeMismatch(format!("input width {} != model width {}", x.width(), p.width())));
    }
    Ok(x.map_items(|item| sdpa_seq(p, item, causal).expect("width checked")))
}

/// Result of searching for a row permutation that S6 does not commute with.
#[derive(Debug, Clone)]
pub struct PermutationWitness {
    pub trials: usize,
    pub max_discrepancy: f64,
    /// The two-token input that produced `max_discrepancy`.
    pub input: Array2<f64>,
}

/// Draws `trials` random two-token sequences, swaps the tokens, and
/// measures `max |s6(Πx) − Π s6(x)|`.
pub fn check_prop2(p: &S6Params, trials: usize, seed: u64) -> Result<PermutationWitness> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let d = p.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = PermutationWitness { trials, max_discrepancy: -1.0, input: Array2::zeros((2, d)) };
    for _ in 0..trials {
        let x = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
        let swapped = permute_rows(x.view(), &[1, 0]);
        let y = s6_scan_seq(p, x.view())?;
        let y_swapped = s6_scan_seq(p, swapped.view())?;
        let expected = permute_rows(y.view(), &[1, 0]);
        let disc = (&y_swapped - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if disc > best.max_discrepancy {
            best.max_discrepancy = disc;
            best.input = x;
        }
    }
    Ok(best)
}

/// `out[i] = x[perm[i]]`.
pub fn permute_rows(x: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((perm.len(), x.ncols()));
    for (i, &src) in perm.iter().enumerate() {
        out.row_mut(i).assign(&x.row(src));
    }
    out
}

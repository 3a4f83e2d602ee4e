//! Dense building blocks with hand-written backward passes.
//!
//! Activations are row-major `rows × features`. Linear maps store their
//! weight `out × in`, so the forward pass is `y = x Wᵀ + b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

/// A named view of one parameter tensor.
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    /// Whether decoupled weight decay applies (matrices only).
    pub decay: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub decay: bool,
}

/// Deterministic, ordered enumeration of every parameter tensor.
pub trait Params {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn param_list(&self) -> Vec<ParamRef<'_>> {
        let mut v = Vec::new();
        self.params("", &mut v);
        v
    }

    fn param_list_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v = Vec::new();
        self.params_mut("", &mut v);
        v
    }

    fn num_params(&self) -> usize {
        self.param_list().iter().map(|p| p.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for p in self.param_list_mut() {
            p.data.fill(0.0);
        }
    }

    /// `self += scale · other`; both must have the same layout.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.param_list();
        for (dst, src) in self.param_list_mut().into_iter().zip(src) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push1<'a>(out: &mut Vec<ParamRef<'a>>, prefix: &str, name: &str, a: &'a Array1<f64>) {
    out.push(ParamRef {
        name: join(prefix, name),
        shape: vec![a.len()],
        data: a.as_slice().expect("contiguous"),
        decay: false,
    });
}

pub(crate) fn push2<'a>(out: &mut Vec<ParamRef<'a>>, prefix: &str, name: &str, a: &'a Array2<f64>, decay: bool) {
    out.push(ParamRef {
        name: join(prefix, name),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
        decay,
    });
}

pub(crate) fn push1_mut<'a>(out: &mut Vec<ParamMut<'a>>, prefix: &str, name: &str, a: &'a mut Array1<f64>) {
    let shape = vec![a.len()];
    out.push(ParamMut { name: join(prefix, name), shape, data: a.as_slice_mut().expect("contiguous"), decay: false });
}

pub(crate) fn push2_mut<'a>(
    out: &mut Vec<ParamMut<'a>>,
    prefix: &str,
    name: &str,
    a: &'a mut Array2<f64>,
    decay: bool,
) {
    let shape = a.shape().to_vec();
    out.push(ParamMut { name: join(prefix, name), shape, data: a.as_slice_mut().expect("standard layout"), decay });
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Option<Array1<f64>>,
}

impl Linear {
    /// Uniform `±1/√in` initialization.
    pub fn init(inp: usize, out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = Array2::from_shape_fn((out, inp), |_| rng.gen_range(-bound..bound));
        let b = bias.then(|| Array1::from_shape_fn(out, |_| rng.gen_range(-bound..bound)));
        Linear { w, b }
    }

    pub fn zeros(inp: usize, out: usize, bias: bool) -> Self {
        Linear { w: Array2::zeros((out, inp)), b: bias.then(|| Array1::zeros(out)) }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dx` if asked.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        g: &mut Linear,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut g.w);
        if let Some(gb) = &mut g.b {
            *gb += &dy.sum_axis(Axis(0));
        }
        need_dx.then(|| dy.dot(&self.w))
    }
}

impl Params for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push2(out, prefix, "weight", &self.w, true);
        if let Some(b) = &self.b {
            push1(out, prefix, "bias", b);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push2_mut(out, prefix, "weight", &mut self.w, true);
        if let Some(b) = &mut self.b {
            push1_mut(out, prefix, "bias", b);
        }
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `dy ⊙ 1[pre > 0]`
pub fn relu_backward(pre: &Array2<f64>, mut dy: Array2<f64>) -> Array2<f64> {
    Zip::from(&mut dy).and(pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // √(2/π)

/// tanh approximation of GELU.
pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_K * (v + 0.044715 * v * v * v)).tanh())
}

pub fn gelu_grad(v: f64) -> f64 {
    let inner = GELU_K * (v + 0.044715 * v * v * v);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * v * v)
}

pub fn silu(v: f64) -> f64 {
    v * crate::ssm::sigmoid(v)
}

pub fn silu_grad(v: f64) -> f64 {
    let s = crate::ssm::sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

pub const RMS_EPS: f64 = 1e-5;

/// Per-row RMS normalization with a learned scale.
pub struct RmsCache {
    pub xhat: Array2<f64>,
    pub inv_rms: Array1<f64>,
}

pub fn rms_norm(x: ArrayView2<f64>, scale: &Array1<f64>) -> (Array2<f64>, RmsCache) {
    let d = x.ncols() as f64;
    let inv_rms = x.map_axis(Axis(1), |row| 1.0 / (row.dot(&row) / d + RMS_EPS).sqrt());
    let mut xhat = x.to_owned();
    for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_rms.iter()) {
        row *= s;
    }
    let y = &xhat * scale;
    (y, RmsCache { xhat, inv_rms })
}

/// Returns `dx`; accumulates the scale gradient into `dscale`.
pub fn rms_norm_backward(
    cache: &RmsCache,
    scale: &Array1<f64>,
    dy: ArrayView2<f64>,
    dscale: &mut Array1<f64>,
) -> Array2<f64> {
    *dscale += &(&dy * &cache.xhat).sum_axis(Axis(0));
    let dxhat = &dy * scale;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let xh = cache.xhat.row(i);
        let g = dxhat.row(i);
        let proj = g.dot(&xh) / d;
        let s = cache.inv_rms[i];
        Zip::from(&mut row).and(&g).and(&xh).for_each(|o, &gv, &xv| *o = (gv - xv * proj) * s);
    }
    dx
}

/// Column-wise max over consecutive blocks of `block` rows. Returns the
/// pooled matrix and, per output cell, the source row (first on ties).
pub fn block_max(x: ArrayView2<f64>, block: usize) -> (Array2<f64>, Array2<usize>) {
    let groups = x.nrows() / block;
    let cols = x.ncols();
    let mut out = Array2::from_elem((groups, cols), f64::NEG_INFINITY);
    let mut arg = Array2::zeros((groups, cols));
    for gi in 0..groups {
        for r in gi * block..(gi + 1) * block {
            let row = x.row(r);
            for j in 0..cols {
                if row[j] > out[[gi, j]] {
                    out[[gi, j]] = row[j];
                    arg[[gi, j]] = r;
                }
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the rows that won the max.
pub fn block_max_backward(arg: &Array2<usize>, dy: ArrayView2<f64>, rows: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((rows, dy.ncols()));
    for ((g, j), &r) in arg.indexed_iter() {
        dx[[r, j]] += dy[[g, j]];
    }
    dx
}

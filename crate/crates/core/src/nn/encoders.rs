//! Patch and center embeddings.
//!
//! The patch encoder is a shared pointwise network applied to every
//! center-relative point of a patch, in two stages: `3 → h → h`, max-pool to
//! a patch-global feature, concatenate that feature onto every point, then
//! `2h → h → d_e` and a final max-pool. Both pools make the token invariant
//! to the order of points inside the patch.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{
    block_max, block_max_backward, gelu, gelu_grad, relu, relu_backward, Linear, ParamMut, ParamRef, Params,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub point1: Linear,
    pub point2: Linear,
    pub fuse1: Linear,
    pub fuse2: Linear,
}

pub struct PatchCache {
    n_p: usize,
    x: Array2<f64>,
    a1: Array2<f64>,
    r1: Array2<f64>,
    g_arg: ndarray::Array2<usize>,
    cat: Array2<f64>,
    a3: Array2<f64>,
    r3: Array2<f64>,
    tok_arg: ndarray::Array2<usize>,
}

impl PatchEncoder {
    pub fn init(hidden: usize, d_e: usize, rng: &mut impl Rng) -> Self {
        PatchEncoder {
            point1: Linear::init(3, hidden, true, rng),
            point2: Linear::init(hidden, hidden, true, rng),
            fuse1: Linear::init(2 * hidden, hidden, true, rng),
            fuse2: Linear::init(hidden, d_e, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.point1.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.fuse2.out_dim()
    }

    /// `points`: `(patches · n_p) × 3`, patch-major. Returns one token per patch.
    pub fn forward(&self, points: ArrayView2<f64>, n_p: usize) -> (Array2<f64>, PatchCache) {
        let h = self.hidden();
        let a1 = self.point1.forward(points);
        let r1 = relu(&a1);
        let f = self.point2.forward(r1.view());
        let (g, g_arg) = block_max(f.view(), n_p);
        let mut cat = Array2::zeros((f.nrows(), 2 * h));
        for (r, mut row) in cat.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![..h]).assign(&g.row(r / n_p));
            row.slice_mut(s![h..]).assign(&f.row(r));
        }
        let a3 = self.fuse1.forward(cat.view());
        let r3 = relu(&a3);
        let o = self.fuse2.forward(r3.view());
        let (tokens, tok_arg) = block_max(o.view(), n_p);
        let cache = PatchCache { n_p, x: points.to_owned(), a1, r1, g_arg, cat, a3, r3, tok_arg };
        (tokens, cache)
    }

    pub fn backward(&self, cache: &PatchCache, dtokens: ArrayView2<f64>, g: &mut PatchEncoder) {
        let h = self.hidden();
        let rows = cache.x.nrows();
        let d_o = block_max_backward(&cache.tok_arg, dtokens, rows);
        let dr3 = self.fuse2.backward(cache.r3.view(), d_o.view(), &mut g.fuse2, true).expect("dx");
        let da3 = relu_backward(&cache.a3, dr3);
        let dcat = self.fuse1.backward(cache.cat.view(), da3.view(), &mut g.fuse1, true).expect("dx");
        let mut df = dcat.slice(s![.., h..]).to_owned();
        let patches = rows / cache.n_p;
        let mut dg = Array2::zeros((patches, h));
        for (r, row) in dcat.slice(s![.., ..h]).rows().into_iter().enumerate() {
            let mut acc = dg.row_mut(r / cache.n_p);
            acc += &row;
        }
        df += &block_max_backward(&cache.g_arg, dg.view(), rows);
        let dr1 = self.point2.backward(cache.r1.view(), df.view(), &mut g.point2, true).expect("dx");
        let da1 = relu_backward(&cache.a1, dr1);
        self.point1.backward(cache.x.view(), da1.view(), &mut g.point1, false);
    }
}

impl Params for PatchEncoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.point1.params(&super::layers::join(prefix, "point1"), out);
        self.point2.params(&super::layers::join(prefix, "point2"), out);
        self.fuse1.params(&super::layers::join(prefix, "fuse1"), out);
        self.fuse2.params(&super::layers::join(prefix, "fuse2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.point1.params_mut(&super::layers::join(prefix, "point1"), out);
        self.point2.params_mut(&super::layers::join(prefix, "point2"), out);
        self.fuse1.params_mut(&super::layers::join(prefix, "fuse1"), out);
        self.fuse2.params_mut(&super::layers::join(prefix, "fuse2"), out);
    }
}

/// `3 → h_pe → d_e` with GELU; the positional embedding of a center.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterEncoder {
    pub l1: Linear,
    pub l2: Linear,
}

pub struct CenterCache {
    x: Array2<f64>,
    a: Array2<f64>,
    h: Array2<f64>,
}

impl CenterEncoder {
    pub fn init(hidden: usize, d_e: usize, rng: &mut impl Rng) -> Self {
        CenterEncoder { l1: Linear::init(3, hidden, true, rng), l2: Linear::init(hidden, d_e, true, rng) }
    }

    pub fn forward(&self, centers: ArrayView2<f64>) -> (Array2<f64>, CenterCache) {
        let a = self.l1.forward(centers);
        let h = a.mapv(gelu);
        let e = self.l2.forward(h.view());
        (e, CenterCache { x: centers.to_owned(), a, h })
    }

    pub fn backward(&self, cache: &CenterCache, de: ArrayView2<f64>, g: &mut CenterEncoder) {
        let dh = self.l2.backward(cache.h.view(), de, &mut g.l2, true).expect("dx");
        let da = dh * &cache.a.mapv(gelu_grad);
        self.l1.backward(cache.x.view(), da.view(), &mut g.l1, false);
    }
}

impl Params for CenterEncoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.l1.params(&super::layers::join(prefix, "l1"), out);
        self.l2.params(&super::layers::join(prefix, "l2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.l1.params_mut(&super::layers::join(prefix, "l1"), out);
        self.l2.params_mut(&super::layers::join(prefix, "l2"), out);
    }
}

/// Stacks per-sample row blocks into one matrix.
pub(crate) fn stack_rows(blocks: &[ArrayView2<f64>]) -> Array2<f64> {
    concatenate(Axis(0), blocks).expect("matching widths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> PatchEncoder {
        PatchEncoder::init(6, 5, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn permutation_inside_patch_leaves_token_unchanged() {
        let enc = encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-0.3..0.3));
        let perm = [5, 2, 7, 0, 1, 6, 3, 4];
        let shuffled = Array2::from_shape_fn((8, 3), |(i, j)| pts[[perm[i], j]]);
        let (a, _) = enc.forward(pts.view(), 8);
        let (b, _) = enc.forward(shuffled.view(), 8);
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_patch_is_bias_only() {
        let enc = encoder();
        let (a, _) = enc.forward(Array2::zeros((4, 3)).view(), 4);
        let mut zeroed = enc.clone();
        zeroed.point1.w.fill(0.0);
        let (b, _) = zeroed.forward(Array2::zeros((4, 3)).view(), 4);
        assert_eq!(a, b);
    }

    /// Straight-line re-evaluation of the two-stage map for a single patch.
    #[test]
    fn matches_straight_line_evaluation() {
        let enc = encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> =
            (0..6).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
            (0..l.out_dim())
                .map(|o| l.b.as_ref().unwrap()[o] + (0..l.in_dim()).map(|i| l.w[[o, i]] * x[i]).sum::<f64>())
                .collect()
        };
        let feats: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| lin(&enc.point2, &lin(&enc.point1, p).iter().map(|v| v.max(0.0)).collect::<Vec<_>>()))
            .collect();
        let global: Vec<f64> = (0..6).map(|j| feats.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let outs: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| {
                let cat: Vec<f64> = global.iter().chain(f.iter()).copied().collect();
                lin(&enc.fuse2, &lin(&enc.fuse1, &cat).iter().map(|v| v.max(0.0)).collect::<Vec<_>>())
            })
            .collect();
        let expected: Vec<f64> = (0..5).map(|j| outs.iter().map(|o| o[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| pts[i][j]);
        let (tok, _) = enc.forward(x.view(), 6);
        for j in 0..5 {
            assert!((tok[[0, j]] - expected[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_encoder_matches_straight_line() {
        let enc = CenterEncoder::init(4, 3, &mut ChaCha8Rng::seed_from_u64(6));
        let c = ndarray::array![[0.2, -0.4, 0.9]];
        let (e, _) = enc.forward(c.view());
        for o in 0..3 {
            let mut acc = enc.l2.b.as_ref().unwrap()[o];
            for k in 0..4 {
                let a = enc.l1.b.as_ref().unwrap()[k] + (0..3).map(|i| enc.l1.w[[k, i]] * c[[0, i]]).sum::<f64>();
                acc += enc.l2.w[[o, k]] * gelu(a);
            }
            assert!((e[[0, o]] - acc).abs() < 1e-12);
        }
        let (z, _) = enc.forward(Array2::zeros((1, 3)).view());
        let bias_only = enc.l2.forward(enc.l1.b.as_ref().unwrap().mapv(gelu).insert_axis(Axis(0)).view());
        assert!((&z - &bias_only).iter().all(|v| v.abs() < 1e-15));
    }
}

//! The full classifier: patch tokens (+ optional center embedding), a
//! serialization gather, a stack of Mamba blocks, final norm, mean+max
//! pooling and a three-layer head.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, MambaBlock};
use super::encoders::{CenterCache, CenterEncoder, PatchCache, PatchEncoder};
use super::layers::{
    join, push1, push1_mut, relu, relu_backward, rms_norm, rms_norm_backward, Linear, ParamMut, ParamRef, Params,
    RmsCache,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::geometry::{build_patches, PatchSet, PointCloud, StartRule};
use crate::perturb::PerturbSpec;
use crate::serialize::{CandidateRule, OrderingKind, ProximityThreshold};
use crate::ssm::SequenceBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_e: usize,
    pub layers: usize,
    pub n_points: usize,
    pub n_c: usize,
    pub n_p: usize,
    pub use_positional_embedding: bool,
    pub ordering: OrderingKind,
    pub proximity: ProximityThreshold,
    pub candidate_rule: CandidateRule,
    pub expand: usize,
    pub conv_kernel: usize,
    pub d_state: usize,
    pub classes: usize,
    pub patch_hidden: usize,
    pub pe_hidden: usize,
    pub head_hidden: usize,
    /// Multiplier on center-relative patch coordinates. Local patches are a
    /// few hundredths across; scaling them up keeps the first layer out of
    /// its near-linear regime.
    pub patch_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Sized so that a 50-epoch run on the synthetic shapes takes CPU seconds.
    pub fn desk() -> Self {
        ModelConfig {
            d_e: 32,
            layers: 2,
            n_points: 256,
            n_c: 32,
            n_p: 32,
            use_positional_embedding: false,
            ordering: OrderingKind::Nimba,
            proximity: ProximityThreshold::default(),
            candidate_rule: CandidateRule::First,
            expand: 2,
            conv_kernel: 4,
            d_state: 8,
            classes: 4,
            patch_hidden: 32,
            pe_hidden: 32,
            head_hidden: 64,
            patch_scale: 5.0,
        }
    }

    /// 1024 points, 64 patches of 32, width 384, 12 layers, 40 classes.
    pub fn modelnet40() -> Self {
        ModelConfig {
            d_e: 384,
            layers: 12,
            n_points: 1024,
            n_c: 64,
            n_p: 32,
            d_state: 16,
            classes: 40,
            patch_hidden: 128,
            pe_hidden: 128,
            head_hidden: 256,
            patch_scale: 1.0,
            ..ModelConfig::desk()
        }
    }

    /// 2048 points, 128 patches of 32, 15 classes.
    pub fn scanobjectnn() -> Self {
        ModelConfig { n_points: 2048, n_c: 128, classes: 15, ..ModelConfig::modelnet40() }
    }

    /// Tiny model for gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            d_e: 8,
            layers: 1,
            n_points: 32,
            n_c: 6,
            n_p: 4,
            expand: 2,
            conv_kernel: 3,
            d_state: 4,
            classes: 2,
            patch_hidden: 6,
            pe_hidden: 6,
            head_hidden: 8,
            patch_scale: 1.0,
            ..ModelConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "modelnet40" => Ok(Self::modelnet40()),
            "scanobjectnn" => Ok(Self::scanobjectnn()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::invalid(format!("unknown model preset '{other}'"))),
        }
    }

    /// Tokens per sequence after serialization.
    pub fn seq_len(&self) -> usize {
        self.n_c * self.ordering.replication()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_e", self.d_e),
            ("n_points", self.n_points),
            ("n_c", self.n_c),
            ("n_p", self.n_p),
            ("expand", self.expand),
            ("conv_kernel", self.conv_kernel),
            ("d_state", self.d_state),
            ("classes", self.classes),
            ("patch_hidden", self.patch_hidden),
            ("pe_hidden", self.pe_hidden),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.patch_scale.is_finite() && self.patch_scale > 0.0) {
            return Err(Error::invalid("patch_scale must be positive and finite"));
        }
        if self.n_c > self.n_points || self.n_p > self.n_points {
            return Err(Error::invalid("n_c and n_p cannot exceed n_points"));
        }
        Ok(())
    }
}

/// One cloud turned into model input: patches, centers and the order in
/// which the center tokens are fed to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: u64,
    pub label: usize,
    /// `(n_c · n_p) × 3`, center-relative, patch-major.
    pub patches: Array2<f64>,
    /// `n_c × 3`
    pub centers: Array2<f64>,
    pub order: Vec<usize>,
}

impl PreparedSample {
    pub fn n_c(&self) -> usize {
        self.centers.nrows()
    }
}

pub fn prepare(cloud: &PointCloud, config: &ModelConfig, id: u64, label: usize) -> Result<PreparedSample> {
    let set = build_patches(cloud, config.n_c, config.n_p, StartRule::default())?;
    prepare_patches(&set, config, id, label)
}

pub fn prepare_patches(set: &PatchSet, config: &ModelConfig, id: u64, label: usize) -> Result<PreparedSample> {
    let n_p = set.n_p();
    let mut patches = Array2::zeros((set.n_c() * n_p, 3));
    for (i, p) in set.patches.iter().flatten().enumerate() {
        patches.row_mut(i).assign(&Array1::from(p.to_array().to_vec()));
    }
    patches *= config.patch_scale;
    let centers = Array2::from_shape_fn((set.n_c(), 3), |(i, j)| set.centers[i].coord(j));
    let order = config.ordering.serialize(&set.centers, config.proximity, config.candidate_rule)?.order;
    Ok(PreparedSample { id, label, patches, centers, order })
}

/// Prepares every item, applying `perturb` (per-item seeded) first.
pub fn prepare_dataset(
    ds: &LabeledDataset,
    config: &ModelConfig,
    perturb: Option<&PerturbSpec>,
) -> Result<Vec<PreparedSample>> {
    ds.items
        .iter()
        .map(|it| {
            let cloud = match perturb {
                Some(spec) => spec.apply(&it.cloud, it.id)?,
                None => it.cloud.clone(),
            };
            prepare(&cloud, config, it.id, it.label)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub patch: PatchEncoder,
    pub center: CenterEncoder,
    pub blocks: Vec<MambaBlock>,
    pub final_norm: Array1<f64>,
    pub head: [Linear; 3],
}

pub struct ForwardCache {
    batch: usize,
    seq: usize,
    n_c: usize,
    orders: Vec<Vec<usize>>,
    patch: PatchCache,
    center: Option<CenterCache>,
    blocks: Vec<BlockCache>,
    final_norm: RmsCache,
    pool_arg: Array2<usize>,
    pooled: Array2<f64>,
    h1: Array2<f64>,
    r1: Array2<f64>,
    h2: Array2<f64>,
    r2: Array2<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_e;
        let patch = PatchEncoder::init(config.patch_hidden, d, &mut rng);
        let center = CenterEncoder::init(config.pe_hidden, d, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| MambaBlock::init(d, config.expand, config.conv_kernel, config.d_state, &mut rng))
            .collect();
        let hh = config.head_hidden;
        let head = [
            Linear::init(2 * d, hh, true, &mut rng),
            Linear::init(hh, hh, true, &mut rng),
            Linear::init(hh, config.classes, true, &mut rng),
        ];
        Ok(Model { patch, center, blocks, final_norm: Array1::ones(d), head, config })
    }

    /// Same layout, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        m.fill_zero();
        m
    }

    /// Keeps every state decay rate non-negative.
    pub fn project(&mut self) {
        for b in &mut self.blocks {
            b.s6.a_log.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Patch tokens for one sample, `n_c × d_e`, before any serialization.
    pub fn embed_patches(&self, sample: &PreparedSample) -> Array2<f64> {
        self.patch.forward(sample.patches.view(), self.config.n_p).0
    }

    pub fn embed_centers(&self, sample: &PreparedSample) -> Array2<f64> {
        self.center.forward(sample.centers.view()).0
    }

    fn check_sample(&self, s: &PreparedSample) -> Result<()> {
        let c = &self.config;
        if s.centers.dim() != (c.n_c, 3) || s.patches.dim() != (c.n_c * c.n_p, 3) {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has {} centers / {} patch rows, model expects {} / {}",
                s.id,
                s.centers.nrows(),
                s.patches.nrows(),
                c.n_c,
                c.n_c * c.n_p
            )));
        }
        if s.order.len() != c.seq_len() || s.order.iter().any(|&i| i >= c.n_c) {
            return Err(Error::ShapeMismatch(format!("sample {} has an order incompatible with the model", s.id)));
        }
        if s.label >= c.classes {
            return Err(Error::IndexOutOfRange { index: s.label, len: c.classes });
        }
        Ok(())
    }

    /// Stacked `(batch · L) × d_e` encoder input.
    fn tokens(&self, batch: &[&PreparedSample]) -> (Array2<f64>, PatchCache, Option<CenterCache>) {
        let views: Vec<_> = batch.iter().map(|s| s.patches.view()).collect();
        let pts = super::encoders::stack_rows(&views);
        let (mut tok, pcache) = self.patch.forward(pts.view(), self.config.n_p);
        let ccache = if self.config.use_positional_embedding {
            let views: Vec<_> = batch.iter().map(|s| s.centers.view()).collect();
            let (pe, cc) = self.center.forward(super::encoders::stack_rows(&views).view());
            tok += &pe;
            Some(cc)
        } else {
            None
        };
        let n_c = self.config.n_c;
        let seq = self.config.seq_len();
        let mut x = Array2::zeros((batch.len() * seq, self.config.d_e));
        for (b, s) in batch.iter().enumerate() {
            for (i, &src) in s.order.iter().enumerate() {
                x.row_mut(b * seq + i).assign(&tok.row(b * n_c + src));
            }
        }
        (x, pcache, ccache)
    }

    fn run_blocks(&self, mut x: Array2<f64>, seq: usize) -> Result<(Array2<f64>, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (layer, b) in self.blocks.iter().enumerate() {
            let (y, c) = b.forward(x.view(), seq);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow { layer });
            }
            x = y;
            caches.push(c);
        }
        Ok((x, caches))
    }

    /// Blocks plus final norm on already-serialized tokens.
    pub fn encoder_forward(&self, tokens: &SequenceBatch) -> Result<SequenceBatch> {
        let (b, l, d) = tokens.data.dim();
        if d != self.config.d_e {
            return Err(Error::ShapeMismatch(format!("token width {d}, model width {}", self.config.d_e)));
        }
        let flat = tokens.data.to_shape((b * l, d)).expect("contiguous").to_owned();
        let (x, _) = self.run_blocks(flat, l)?;
        let (y, _) = rms_norm(x.view(), &self.final_norm);
        Ok(SequenceBatch { data: y.into_shape_with_order((b, l, d)).expect("same size") })
    }

    /// Pooled head logits for each encoded sequence, `batch × classes`.
    pub fn classify(&self, encoded: &SequenceBatch) -> Array2<f64> {
        let (b, l, d) = encoded.data.dim();
        let flat = encoded.data.to_shape((b * l, d)).expect("contiguous").to_owned();
        let (pooled, _) = pool(flat.view(), l);
        self.head_forward(pooled).0
    }

    fn head_forward(&self, pooled: Array2<f64>) -> (Array2<f64>, [Array2<f64>; 4]) {
        let h1 = self.head[0].forward(pooled.view());
        let r1 = relu(&h1);
        let h2 = self.head[1].forward(r1.view());
        let r2 = relu(&h2);
        let logits = self.head[2].forward(r2.view());
        (logits, [h1, r1, h2, r2])
    }

    pub fn forward(&self, batch: &[&PreparedSample]) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        for s in batch {
            self.check_sample(s)?;
        }
        let seq = self.config.seq_len();
        let (x, patch, center) = self.tokens(batch);
        let (x, blocks) = self.run_blocks(x, seq)?;
        let (y, final_norm) = rms_norm(x.view(), &self.final_norm);
        let (pooled, pool_arg) = pool(y.view(), seq);
        let (logits, [h1, r1, h2, r2]) = self.head_forward(pooled.clone());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow { layer: self.blocks.len() });
        }
        let cache = ForwardCache {
            batch: batch.len(),
            seq,
            n_c: self.config.n_c,
            orders: batch.iter().map(|s| s.order.clone()).collect(),
            patch,
            center,
            blocks,
            final_norm,
            pool_arg,
            pooled,
            h1,
            r1,
            h2,
            r2,
        };
        Ok((logits, cache))
    }

    pub fn logits(&self, batch: &[&PreparedSample]) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.0)
    }

    /// Accumulates parameter gradients for `dlogits` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>, grad: &mut Model) {
        let dr2 = self.head[2].backward(cache.r2.view(), dlogits, &mut grad.head[2], true).expect("dx");
        let dh2 = relu_backward(&cache.h2, dr2);
        let dr1 = self.head[1].backward(cache.r1.view(), dh2.view(), &mut grad.head[1], true).expect("dx");
        let dh1 = relu_backward(&cache.h1, dr1);
        let dpooled = self.head[0].backward(cache.pooled.view(), dh1.view(), &mut grad.head[0], true).expect("dx");
        let dy = pool_backward(&cache.pool_arg, dpooled.view(), cache.seq);
        let mut dx = rms_norm_backward(&cache.final_norm, &self.final_norm, dy.view(), &mut grad.final_norm);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dx = b.backward(&cache.blocks[i], dx.view(), &mut grad.blocks[i]);
        }
        let mut dtok = Array2::zeros((cache.batch * cache.n_c, self.config.d_e));
        for (b, order) in cache.orders.iter().enumerate() {
            for (i, &src) in order.iter().enumerate() {
                let mut row = dtok.row_mut(b * cache.n_c + src);
                row += &dx.row(b * cache.seq + i);
            }
        }
        if let Some(cc) = &cache.center {
            self.center.backward(cc, dtok.view(), &mut grad.center);
        }
        self.patch.backward(&cache.patch, dtok.view(), &mut grad.patch);
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[&PreparedSample]) -> Result<(f64, Model)> {
        let (logits, cache) = self.forward(batch)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let (loss, dlogits) = cross_entropy(&logits, &labels);
        let mut grad = self.zeros_like();
        self.backward(&cache, dlogits.view(), &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, batch: &[&PreparedSample]) -> Result<f64> {
        let logits = self.logits(batch)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        Ok(cross_entropy(&logits, &labels).0)
    }

    pub fn predict(&self, batch: &[&PreparedSample]) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.rows().into_iter().map(|r| argmax(r.as_slice().expect("row"))).collect())
    }
}

impl Params for Model {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.patch.params(&join(prefix, "patch"), out);
        self.center.params(&join(prefix, "center"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("blocks.{i}")), out);
        }
        push1(out, prefix, "final_norm", &self.final_norm);
        for (i, l) in self.head.iter().enumerate() {
            l.params(&join(prefix, &format!("head.{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.patch.params_mut(&join(prefix, "patch"), out);
        self.center.params_mut(&join(prefix, "center"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        push1_mut(out, prefix, "final_norm", &mut self.final_norm);
        for (i, l) in self.head.iter_mut().enumerate() {
            l.params_mut(&join(prefix, &format!("head.{i}")), out);
        }
    }
}

/// Per-sequence `[mean, max]` over `seq` consecutive rows.
fn pool(y: ArrayView2<f64>, seq: usize) -> (Array2<f64>, Array2<usize>) {
    let (rows, d) = y.dim();
    let b = rows / seq;
    let (max, arg) = super::layers::block_max(y, seq);
    let mut out = Array2::zeros((b, 2 * d));
    for i in 0..b {
        let mean = y.slice(s![i * seq..(i + 1) * seq, ..]).mean_axis(Axis(0)).expect("non-empty");
        out.slice_mut(s![i, ..d]).assign(&mean);
        out.slice_mut(s![i, d..]).assign(&max.row(i));
    }
    (out, arg)
}

fn pool_backward(arg: &Array2<usize>, dpooled: ArrayView2<f64>, seq: usize) -> Array2<f64> {
    let d = arg.ncols();
    let mut dy = super::layers::block_max_backward(arg, dpooled.slice(s![.., d..]), arg.nrows() * seq);
    for (r, mut row) in dy.rows_mut().into_iter().enumerate() {
        let dm = dpooled.slice(s![r / seq, ..d]);
        row.scaled_add(1.0 / seq as f64, &dm);
    }
    dy
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let e = row.mapv(|v| (v - m).exp());
        let z = e.sum();
        loss += m + z.ln() - row[y];
        let mut g = grad.row_mut(i);
        g.assign(&(e / z));
        g[y] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stacks a list of `L × d` sequences into a batch.
pub fn sequence_batch(items: &[Array2<f64>]) -> Result<SequenceBatch> {
    let first = items.first().ok_or(Error::EmptyInput)?;
    let (l, d) = first.dim();
    let mut data = Array3::zeros((items.len(), l, d));
    for (i, it) in items.iter().enumerate() {
        if it.dim() != (l, d) {
            return Err(Error::ShapeMismatch("sequences differ in shape".into()));
        }
        data.index_axis_mut(Axis(0), i).assign(it);
    }
    SequenceBatch::new(data)
}

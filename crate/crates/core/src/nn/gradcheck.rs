//! Central finite-difference check of `Model::loss_and_grad`.

use serde::Serialize;

use super::layers::Params;
use super::model::{Model, ModelConfig, PreparedSample};
use crate::data::make_dataset;
use crate::error::Result;
use crate::nn::prepare_dataset;
use crate::ssm::S6Params;

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub name: String,
    pub len: usize,
    /// `‖a − f‖₂ / max(‖a‖₂, ‖f‖₂)` over the whole tensor.
    pub rel_err: f64,
    /// Worst single-element `rel_err`; near-zero elements make this
    /// dominated by cancellation in the difference quotient.
    pub max_elem_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Relative error `|a − f| / max(|a|, |f|, floor)`; the floor keeps exact
/// zeros (dead units) from dividing by nothing.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Norm-wise relative error between two gradient tensors. Zero when both are
/// exactly zero.
pub fn tensor_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, f)| a - f));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every parameter element, grouped by tensor.
pub fn numeric_gradient(model: &mut Model, batch: &[&PreparedSample], eps: f64) -> Result<Vec<Vec<f64>>> {
    let sizes: Vec<usize> = model.param_list().iter().map(|p| p.data.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (k, n) in sizes.into_iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = model.param_list()[k].data[i];
            model.param_list_mut()[k].data[i] = orig + eps;
            let up = model.loss(batch);
            model.param_list_mut()[k].data[i] = orig - eps;
            let down = model.loss(batch);
            model.param_list_mut()[k].data[i] = orig;
            g.push((up? - down?) / (2.0 * eps));
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares every parameter's analytic gradient against central finite
/// differences, one group per named tensor.
pub fn gradient_check(model: &mut Model, batch: &[&PreparedSample], eps: f64) -> Result<Vec<GroupError>> {
    let (_, grad) = model.loss_and_grad(batch)?;
    let numeric = numeric_gradient(model, batch, eps)?;
    Ok(grad
        .param_list()
        .iter()
        .zip(numeric)
        .map(|(p, f)| {
            let a: Vec<f64> = p.data.to_vec();
            let max_elem_rel_err = a.iter().zip(&f).map(|(&a, &f)| rel_err(a, f, 1e-8)).fold(0.0, f64::max);
            GroupError {
                name: p.name.clone(),
                len: a.len(),
                rel_err: tensor_rel_err(&a, &f),
                max_elem_rel_err,
                max_abs_grad: a.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            }
        })
        .collect())
}

/// Toy setup: width 8, one block, sequences of 6 tokens, two classes, PE on,
/// one sample per class. The S6 parameters are replaced by generic random
/// ones so the selective path carries gradients of ordinary size.
pub fn toy_problem(seed: u64) -> Result<(Model, Vec<PreparedSample>)> {
    let cfg = ModelConfig { use_positional_embedding: true, ..ModelConfig::toy() };
    let ds = make_dataset(cfg.classes, 1, cfg.n_points, seed, false)?;
    let mut samples = prepare_dataset(&ds.train, &cfg, None)?;
    samples.extend(prepare_dataset(&ds.test, &cfg, None)?);
    let mut model = Model::new(cfg, seed)?;
    for (i, b) in model.blocks.iter_mut().enumerate() {
        b.s6 = S6Params::random(b.inner(), b.s6.state_size(), seed.wrapping_add(i as u64 + 1));
    }
    Ok((model, samples))
}

//! Training runs for the comparison experiments: the positional-embedding
//! ablation and the robustness matrix. Runs are keyed and cached so that
//! experiments sharing a configuration (the clean baselines, most notably)
//! train each model once.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsSink;
use crate::data::{load_dataset_dir, make_dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::nn::{evaluate, prepare_dataset, train, Model, ModelConfig, PreparedSample, TrainConfig, TrainReport};
use crate::perturb::{
    mix_seed, ApplyTo, PerturbKind, PerturbSpec, DEFAULT_CLIP, DEFAULT_DROPOUT, DEFAULT_FLIP_PROB, DEFAULT_SIGMA,
};
use crate::serialize::OrderingKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub random_pose: bool,
    /// Read `<dir>/<class>/<split>/*.{off,xyz}` instead of generating shapes.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { classes: 4, per_class: 50, random_pose: false, dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub clip: f64,
    pub p: f64,
    pub flip_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma: DEFAULT_SIGMA, clip: DEFAULT_CLIP, p: DEFAULT_DROPOUT, flip_prob: DEFAULT_FLIP_PROB }
    }
}

impl NoiseConfig {
    pub fn spec(&self, kind: PerturbKind, apply_to: ApplyTo, seed: u64) -> PerturbSpec {
        PerturbSpec {
            sigma: self.sigma,
            clip: self.clip,
            p: self.p,
            flip_prob: self.flip_prob,
            ..PerturbSpec::new(kind, apply_to, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    /// Repeats for trend checks; each seed drives data, init and shuffling.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        Ok(())
    }

    pub fn load_data(&self, seed: u64) -> Result<DatasetSplits> {
        let splits = match &self.data.dir {
            Some(dir) => load_dataset_dir(dir, self.model.n_points, seed)?,
            None => {
                make_dataset(self.data.classes, self.data.per_class, self.model.n_points, seed, self.data.random_pose)?
            }
        };
        if splits.train.num_classes() != self.model.classes {
            return Err(Error::invalid(format!(
                "dataset has {} classes, model expects {}",
                splits.train.num_classes(),
                self.model.classes
            )));
        }
        Ok(splits)
    }
}

/// Positional-embedding setting each ordering is normally paired with: the
/// proximity ordering runs without it, the others with it.
pub fn default_pe(ordering: OrderingKind) -> bool {
    ordering != OrderingKind::Nimba
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub ordering: OrderingKind,
    pub pe: bool,
    /// Perturbation applied to the training split, if any.
    pub train_noise: Option<PerturbKind>,
    pub seed: u64,
}

impl RunKey {
    pub fn clean(ordering: OrderingKind, pe: bool, seed: u64) -> Self {
        RunKey { ordering, pe, train_noise: None, seed }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub key: RunKey,
    pub model: Model,
    pub report: TrainReport,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    #[serde(flatten)]
    key: &'a RunKey,
    #[serde(flatten)]
    record: &'a crate::nn::EpochRecord,
}

#[derive(Serialize)]
struct RunLine<'a> {
    #[serde(flatten)]
    key: &'a RunKey,
    seq_len: usize,
    test_acc: Option<f64>,
    initial_test_acc: Option<f64>,
}

/// Trained models and prepared datasets for one experiment configuration.
pub struct RunCache {
    config: ExperimentConfig,
    data: BTreeMap<u64, Arc<DatasetSplits>>,
    runs: BTreeMap<RunKey, Arc<TrainedRun>>,
}

impl RunCache {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(RunCache { config, data: BTreeMap::new(), runs: BTreeMap::new() })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn trained(&self) -> usize {
        self.runs.len()
    }

    pub fn data(&mut self, seed: u64) -> Result<Arc<DatasetSplits>> {
        if let Some(d) = self.data.get(&seed) {
            return Ok(d.clone());
        }
        let d = Arc::new(self.config.load_data(seed)?);
        self.data.insert(seed, d.clone());
        Ok(d)
    }

    fn model_config(&self, ordering: OrderingKind, pe: bool) -> ModelConfig {
        ModelConfig { ordering, use_positional_embedding: pe, ..self.config.model.clone() }
    }

    pub fn noise_spec(&self, kind: PerturbKind, apply_to: ApplyTo, seed: u64) -> PerturbSpec {
        self.config.noise.spec(kind, apply_to, mix_seed(seed, 0x6e6f697365))
    }

    /// Trains (or fetches) the run for `key`, logging epochs to `sink`.
    pub fn run(&mut self, key: RunKey, sink: &mut MetricsSink) -> Result<Arc<TrainedRun>> {
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        let data = self.data(key.seed)?;
        let mcfg = self.model_config(key.ordering, key.pe);
        let spec = key.train_noise.map(|k| self.noise_spec(k, ApplyTo::Train, key.seed));
        let train_set = prepare_dataset(&data.train, &mcfg, spec.as_ref())?;
        let test_set = prepare_dataset(&data.test, &mcfg, None)?;
        let mut model = Model::new(mcfg.clone(), key.seed)?;
        let tcfg = TrainConfig { seed: key.seed, ..self.config.train.clone() };
        let report = train(&mut model, &train_set, &test_set, &tcfg, |rec| {
            sink.emit("epoch", &EpochLine { key: &key, record: rec })
        })?;
        sink.emit(
            "run",
            &RunLine {
                key: &key,
                seq_len: mcfg.seq_len(),
                test_acc: report.final_test.map(|e| e.accuracy),
                initial_test_acc: report.initial_test.map(|e| e.accuracy),
            },
        )?;
        let run = Arc::new(TrainedRun { key, model, report });
        self.runs.insert(key, run.clone());
        Ok(run)
    }

    /// Accuracy of `run` on the test split, perturbed by `noise` if given.
    pub fn test_accuracy(&mut self, run: &TrainedRun, noise: Option<&PerturbSpec>) -> Result<f64> {
        let data = self.data(run.key.seed)?;
        if noise.is_none() {
            if let Some(e) = run.report.final_test {
                return Ok(e.accuracy);
            }
        }
        let test_set: Vec<PreparedSample> = prepare_dataset(&data.test, &run.model.config, noise)?;
        Ok(evaluate(&run.model, &test_set, 64)?.accuracy)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (0 for a single value).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ordering: OrderingKind,
    pub pe: bool,
    pub acc: f64,
    pub acc_std: f64,
    pub accs: Vec<f64>,
    /// Mean accuracy with PE minus without, for this row's ordering.
    pub gap: f64,
}

/// The 2×2 grid {proximity, axis-triple} × {PE on, PE off} over all seeds.
pub fn ablate_pe(cache: &mut RunCache, sink: &mut MetricsSink) -> Result<Vec<AblationRow>> {
    let seeds = cache.config.seeds.clone();
    let mut rows = Vec::new();
    for ordering in [OrderingKind::Nimba, OrderingKind::AxisTriple] {
        let mut accs = BTreeMap::new();
        for pe in [true, false] {
            let mut v = Vec::new();
            for &seed in &seeds {
                let run = cache.run(RunKey::clean(ordering, pe, seed), sink)?;
                v.push(cache.test_accuracy(&run, None)?);
            }
            accs.insert(pe, v);
        }
        let gap = mean(&accs[&true]) - mean(&accs[&false]);
        for pe in [true, false] {
            let v = accs[&pe].clone();
            let row = AblationRow { ordering, pe, acc: mean(&v), acc_std: std_dev(&v), accs: v, gap };
            sink.emit("ablation", &row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub noise: PerturbKind,
    pub apply_to: ApplyTo,
    pub ordering: OrderingKind,
    pub pe: bool,
    pub acc: f64,
    pub acc_std: f64,
    pub accs: Vec<f64>,
    /// Mean over seeds of (clean accuracy − cell accuracy).
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub ordering: OrderingKind,
    pub pe: bool,
    pub acc: f64,
    pub accs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMatrix {
    pub baselines: Vec<Baseline>,
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessMatrix {
    pub fn cell(&self, noise: PerturbKind, apply_to: ApplyTo, ordering: OrderingKind) -> Option<&RobustnessCell> {
        self.cells.iter().find(|c| c.noise == noise && c.apply_to == apply_to && c.ordering == ordering)
    }
}

/// Accuracy under each noise type applied to train, test or both, for each
/// ordering at its default PE setting, next to the clean baseline.
pub fn robustness(
    cache: &mut RunCache,
    kinds: &[PerturbKind],
    orderings: &[OrderingKind],
    sink: &mut MetricsSink,
) -> Result<RobustnessMatrix> {
    let seeds = cache.config.seeds.clone();
    let mut baselines = Vec::new();
    let mut base_acc: BTreeMap<(OrderingKind, u64), f64> = BTreeMap::new();
    for &ordering in orderings {
        let pe = default_pe(ordering);
        let mut accs = Vec::new();
        for &seed in &seeds {
            let run = cache.run(RunKey::clean(ordering, pe, seed), sink)?;
            let a = cache.test_accuracy(&run, None)?;
            base_acc.insert((ordering, seed), a);
            accs.push(a);
        }
        let b = Baseline { ordering, pe, acc: mean(&accs), accs };
        sink.emit("robustness_baseline", &b)?;
        baselines.push(b);
    }
    let mut cells = Vec::new();
    for &noise in kinds {
        for apply_to in ApplyTo::ALL {
            for &ordering in orderings {
                let pe = default_pe(ordering);
                let mut accs = Vec::new();
                let mut drops = Vec::new();
                for &seed in &seeds {
                    let key = RunKey { ordering, pe, train_noise: apply_to.touches_train().then_some(noise), seed };
                    let run = cache.run(key, sink)?;
                    let spec = cache.noise_spec(noise, apply_to, seed);
                    let a = cache.test_accuracy(&run, apply_to.touches_test().then_some(&spec))?;
                    drops.push(base_acc[&(ordering, seed)] - a);
                    accs.push(a);
                }
                let cell = RobustnessCell {
                    noise,
                    apply_to,
                    ordering,
                    pe,
                    acc: mean(&accs),
                    acc_std: std_dev(&accs),
                    accs,
                    drop: mean(&drops),
                };
                sink.emit("robustness_cell", &cell)?;
                cells.push(cell);
            }
        }
    }
    Ok(RobustnessMatrix { baselines, cells })
}

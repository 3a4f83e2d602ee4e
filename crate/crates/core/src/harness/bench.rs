//! Wall-clock comparison of sequence mixers.
//!
//! Each sample times `inner` back-to-back calls so that short sequences are
//! still well above timer resolution; `warmup` untimed samples come first.
//! Everything runs on the calling thread.

use std::hint::black_box;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{s6_scan_seq, sdpa_seq, AttnParams, S6Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixer {
    S6,
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub widths: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Sequence length standing for one copy of the centers.
    pub n_c: usize,
    pub state: usize,
    /// Width used for the mixer-vs-mixer sweep.
    pub mixer_width: usize,
    pub repeats: usize,
    pub warmup: usize,
    /// Minimum work per timed sample, in calls × length.
    pub min_tokens: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            widths: vec![16, 32, 64],
            lengths: vec![64, 128, 256, 512, 1024],
            n_c: 64,
            state: 16,
            mixer_width: 32,
            repeats: 7,
            warmup: 2,
            min_tokens: 8192,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mixer: Mixer,
    pub width: usize,
    pub length: usize,
    pub repeats: usize,
    pub inner: usize,
    /// Seconds per single call.
    pub median_s: f64,
    pub iqr_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub threads_used: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads_used: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub machine: MachineInfo,
    /// S6 at `n_c` and `3·n_c` for each width.
    pub replication: Vec<Timing>,
    /// S6 and attention across `lengths`.
    pub scaling: Vec<Timing>,
}

impl BenchReport {
    pub fn find(&self, mixer: Mixer, width: usize, length: usize) -> Option<&Timing> {
        self.replication
            .iter()
            .chain(&self.scaling)
            .find(|t| t.mixer == mixer && t.width == width && t.length == length)
    }

    /// `t(long) / t(short)` for one mixer in the scaling sweep.
    pub fn ratio(&self, mixer: Mixer, short: usize, long: usize) -> Option<f64> {
        let w = self.scaling.first()?.width;
        let get = |l| self.scaling.iter().find(|t| t.mixer == mixer && t.width == w && t.length == l);
        Some(get(long)?.median_s / get(short)?.median_s)
    }
}

/// Median and interquartile range (linear interpolation between order
/// statistics).
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

fn input(len: usize, width: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((len, width), |_| rng.gen_range(-1.0..1.0))
}

fn time(cfg: &BenchConfig, mixer: Mixer, width: usize, len: usize, mut f: impl FnMut()) -> Timing {
    let inner = cfg.min_tokens.div_ceil(len).max(1);
    let mut run = || {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        t.elapsed().as_secs_f64() / inner as f64
    };
    for _ in 0..cfg.warmup {
        run();
    }
    let samples: Vec<f64> = (0..cfg.repeats).map(|_| run()).collect();
    let (median_s, iqr_s) = median_iqr(&samples);
    Timing { mixer, width, length: len, repeats: cfg.repeats, inner, median_s, iqr_s }
}

fn time_s6(cfg: &BenchConfig, width: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<Timing> {
    let p = S6Params::random(width, cfg.state, rng.gen());
    let x = input(len, width, rng);
    s6_scan_seq(&p, x.view())?;
    Ok(time(cfg, Mixer::S6, width, len, || {
        black_box(s6_scan_seq(&p, black_box(x.view())).expect("validated"));
    }))
}

fn time_attention(cfg: &BenchConfig, width: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<Timing> {
    let p = AttnParams::random(width, rng.gen());
    let x = input(len, width, rng);
    sdpa_seq(&p, x.view(), false)?;
    Ok(time(cfg, Mixer::Attention, width, len, || {
        black_box(sdpa_seq(&p, black_box(x.view()), false).expect("validated"));
    }))
}

pub fn run_bench(cfg: &BenchConfig, mut on_timing: impl FnMut(&Timing) -> Result<()>) -> Result<BenchReport> {
    if cfg.repeats == 0 || cfg.n_c == 0 || cfg.widths.is_empty() || cfg.lengths.is_empty() {
        return Err(Error::invalid("bench needs repeats, n_c, widths and lengths to be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut replication = Vec::new();
    for &w in &cfg.widths {
        for len in [cfg.n_c, 3 * cfg.n_c] {
            let t = time_s6(cfg, w, len, &mut rng)?;
            on_timing(&t)?;
            replication.push(t);
        }
    }
    let mut scaling = Vec::new();
    for &len in &cfg.lengths {
        for mixer in [Mixer::S6, Mixer::Attention] {
            let t = match mixer {
                Mixer::S6 => time_s6(cfg, cfg.mixer_width, len, &mut rng)?,
                Mixer::Attention => time_attention(cfg, cfg.mixer_width, len, &mut rng)?,
            };
            on_timing(&t)?;
            scaling.push(t);
        }
    }
    Ok(BenchReport { machine: MachineInfo::current(), replication, scaling })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        assert_eq!(median_iqr(&[3.0]), (3.0, 0.0));
        assert_eq!(median_iqr(&[4.0, 1.0, 3.0, 2.0, 5.0]), (3.0, 2.0));
    }

    #[test]
    fn single_repeat_is_a_valid_record() {
        let cfg = BenchConfig {
            widths: vec![4],
            lengths: vec![8, 16],
            n_c: 4,
            repeats: 1,
            warmup: 0,
            min_tokens: 16,
            ..Default::default()
        };
        let r = run_bench(&cfg, |_| Ok(())).unwrap();
        assert_eq!(r.replication.len(), 2);
        assert_eq!(r.scaling.len(), 4);
        assert!(r.scaling.iter().all(|t| t.median_s > 0.0 && t.iqr_s == 0.0));
    }
}

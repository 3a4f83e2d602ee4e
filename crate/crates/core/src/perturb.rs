//! Noise injections applied to train and/or test clouds: random rotation,
//! random horizontal flip, Gaussian jitter, random input dropout, and all of
//! them composed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub const DEFAULT_SIGMA: f64 = 0.01;
pub const DEFAULT_CLIP: f64 = 0.05;
pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_FLIP_PROB: f64 = 0.5;

/// splitmix64 finalizer; derives independent per-item seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row-major 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Right-handed rotation by `angle` radians about `axis` (normalized here).
    pub fn axis_angle(axis: Point3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("rotation axis must be a nonzero finite vector"));
        }
        let u = axis * (1.0 / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Ok(Rotation([
            [t * u.x * u.x + c, t * u.x * u.y - s * u.z, t * u.x * u.z + s * u.y],
            [t * u.x * u.y + s * u.z, t * u.y * u.y + c, t * u.y * u.z - s * u.x],
            [t * u.x * u.z - s * u.y, t * u.y * u.z + s * u.x, t * u.z * u.z + c],
        ]))
    }

    /// Uniform over SO(3), from a uniformly distributed unit quaternion.
    pub fn uniform(rng: &mut impl Rng) -> Self {
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let tau = std::f64::consts::TAU;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
        Rotation([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.0;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

pub fn rotate_with(cloud: &PointCloud, rot: &Rotation) -> Result<PointCloud> {
    cloud.map_points(|p| rot.apply(p))
}

/// Uniformly random rotation drawn from `seed`.
pub fn rotate(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    let rot = Rotation::uniform(&mut ChaCha8Rng::seed_from_u64(seed));
    rotate_with(cloud, &rot)
}

/// With probability `prob`, negates every x coordinate.
pub fn flip_horizontal(cloud: &PointCloud, prob: f64, seed: u64) -> Result<PointCloud> {
    check_prob(prob, "flip probability")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen::<f64>() < prob {
        cloud.map_points(|p| Point3::new(-p.x, p.y, p.z))
    } else {
        Ok(cloud.clone())
    }
}

/// Adds clamped per-coordinate Gaussian noise.
pub fn jitter(cloud: &PointCloud, sigma: f64, clip: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !(clip >= 0.0 && clip.is_finite()) {
        return Err(Error::invalid("jitter sigma and clip must be finite and >= 0"));
    }
    if sigma == 0.0 || clip == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || normal.sample(&mut rng).clamp(-clip, clip);
    cloud.map_points(|p| Point3::new(p.x + noise(), p.y + noise(), p.z + noise()))
}

/// Removes each point independently with probability `p`. At least one
/// point always survives.
pub fn dropout_points(cloud: &PointCloud, p: f64, seed: u64) -> Result<PointCloud> {
    check_prob(p, "dropout probability")?;
    if p >= 1.0 {
        return Err(Error::invalid("dropout probability must be < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = (0..cloud.len()).filter(|_| rng.gen::<f64>() >= p).collect();
    if keep.is_empty() {
        keep.push(rng.gen_range(0..cloud.len()));
    }
    cloud.select(&keep)
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{what} must be in [0, 1], got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Rotation,
    Rhf,
    Jitter,
    Rid,
    All,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 5] =
        [PerturbKind::Rotation, PerturbKind::Rhf, PerturbKind::Jitter, PerturbKind::Rid, PerturbKind::All];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Rotation => "rotation",
            PerturbKind::Rhf => "rhf",
            PerturbKind::Jitter => "jitter",
            PerturbKind::Rid => "rid",
            PerturbKind::All => "all",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyTo {
    Train,
    Test,
    Both,
}

impl ApplyTo {
    pub const ALL: [ApplyTo; 3] = [ApplyTo::Train, ApplyTo::Test, ApplyTo::Both];

    pub fn name(self) -> &'static str {
        match self {
            ApplyTo::Train => "train",
            ApplyTo::Test => "test",
            ApplyTo::Both => "both",
        }
    }

    pub fn touches_train(self) -> bool {
        matches!(self, ApplyTo::Train | ApplyTo::Both)
    }

    pub fn touches_test(self) -> bool {
        matches!(self, ApplyTo::Test | ApplyTo::Both)
    }
}

impl fmt::Display for ApplyTo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ApplyTo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ApplyTo::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split selector '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub apply_to: ApplyTo,
    pub seed: u64,
    pub sigma: f64,
    pub clip: f64,
    pub p: f64,
    pub flip_prob: f64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, apply_to: ApplyTo, seed: u64) -> Self {
        PerturbSpec {
            kind,
            apply_to,
            seed,
            sigma: DEFAULT_SIGMA,
            clip: DEFAULT_CLIP,
            p: DEFAULT_DROPOUT,
            flip_prob: DEFAULT_FLIP_PROB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob(self.flip_prob, "flip probability")?;
        check_prob(self.p, "dropout probability")?;
        if self.p >= 1.0 {
            return Err(Error::invalid("dropout probability must be < 1"));
        }
        if !(self.sigma >= 0.0) || !(self.clip >= 0.0) {
            return Err(Error::invalid("jitter sigma and clip must be >= 0"));
        }
        Ok(())
    }

    /// Perturbs one cloud; `item` decorrelates the randomness across items.
    pub fn apply(&self, cloud: &PointCloud, item: u64) -> Result<PointCloud> {
        let base = mix_seed(self.seed, item);
        let sub = |k: u64| mix_seed(base, k);
        match self.kind {
            PerturbKind::Rotation => rotate(cloud, sub(1)),
            PerturbKind::Rhf => flip_horizontal(cloud, self.flip_prob, sub(2)),
            PerturbKind::Jitter => jitter(cloud, self.sigma, self.clip, sub(3)),
            PerturbKind::Rid => dropout_points(cloud, self.p, sub(4)),
            PerturbKind::All => {
                let c = rotate(cloud, sub(1))?;
                let c = flip_horizontal(&c, self.flip_prob, sub(2))?;
                let c = jitter(&c, self.sigma, self.clip, sub(3))?;
                dropout_points(&c, self.p, sub(4))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&a| a.into()).collect()).unwrap()
    }

    fn close(a: Point3, b: Point3) -> bool {
        a.dist(b) < 1e-12
    }

    #[test]
    fn quarter_turn_about_z() {
        let rot = Rotation::axis_angle(Point3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2).unwrap();
        assert!(close(rot.apply(Point3::new(1.0, 0.0, 0.0)), Point3::new(0.0, 1.0, 0.0)));
    }

    #[test]
    fn zero_angle_is_identity() {
        let c = cloud(&[[1.0, 2.0, 3.0], [-0.5, 0.1, 0.0]]);
        let rot = Rotation::axis_angle(Point3::new(1.0, 1.0, 0.0), 0.0).unwrap();
        assert_eq!(rotate_with(&c, &rot).unwrap(), c);
    }

    #[test]
    fn uniform_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = Rotation::uniform(&mut rng);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_extremes() {
        let c = cloud(&[[1.0, 2.0, 3.0]]);
        assert_eq!(flip_horizontal(&c, 0.0, 1).unwrap(), c);
        assert_eq!(flip_horizontal(&c, 1.0, 1).unwrap().points()[0], Point3::new(-1.0, 2.0, 3.0));
        assert!(flip_horizontal(&c, 1.5, 1).is_err());
    }

    #[test]
    fn flip_frequency() {
        let c = cloud(&[[1.0, 0.0, 0.0]]);
        let flips =
            (0..10_000u64).filter(|&s| flip_horizontal(&c, 0.5, mix_seed(7, s)).unwrap().points()[0].x < 0.0).count();
        let freq = flips as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn jitter_degenerate_cases() {
        let c = cloud(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        assert_eq!(jitter(&c, 0.0, 0.05, 1).unwrap(), c);
        assert_eq!(jitter(&c, 0.3, 0.0, 1).unwrap(), c);
    }

    #[test]
    fn jitter_statistics() {
        let c = PointCloud::new(vec![Point3::ORIGIN; 20_000]).unwrap();
        let j = jitter(&c, 0.01, 0.05, 11).unwrap();
        let vals: Vec<f64> = j.points().iter().flat_map(|p| p.to_array()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 0.001, "{std}");
        assert!(vals.iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn dropout_counts() {
        let c = PointCloud::new(vec![Point3::ORIGIN; 10_000]).unwrap();
        assert_eq!(dropout_points(&c, 0.0, 3).unwrap(), c);
        let kept = dropout_points(&c, 0.3, 5).unwrap();
        assert!((kept.len() as i64 - 7000).abs() <= 150, "{}", kept.len());
        assert!(kept.source_indices().windows(2).all(|w| w[0] < w[1]));
        assert!(dropout_points(&c, 1.0, 3).is_err());
    }

    #[test]
    fn dropout_keeps_one_point() {
        let c = cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        for s in 0..50 {
            assert!(!dropout_points(&c, 0.999, s).unwrap().is_empty());
        }
    }

    #[test]
    fn spec_is_deterministic_and_count_preserving() {
        let c = cloud(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.3, 0.3]]);
        for kind in PerturbKind::ALL {
            let spec = PerturbSpec::new(kind, ApplyTo::Both, 9);
            let a = spec.apply(&c, 4).unwrap();
            assert_eq!(a, spec.apply(&c, 4).unwrap());
            match kind {
                PerturbKind::Rid | PerturbKind::All => assert!(a.len() <= c.len()),
                _ => assert_eq!(a.len(), c.len()),
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for k in PerturbKind::ALL {
            assert_eq!(k.name().parse::<PerturbKind>().unwrap(), k);
        }
        for a in ApplyTo::ALL {
            assert_eq!(a.name().parse::<ApplyTo>().unwrap(), a);
        }
    }
}

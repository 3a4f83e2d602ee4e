//! Point-cloud preprocessing: normalization, farthest point sampling and
//! kNN patch grouping.
//!
//! Everything here is brute force. Clouds at the scale this crate targets
//! (N ≤ 4096) make the O(n_c·N) sampler and O(n_c·N log N) grouping cheap
//! enough that a spatial index would only add tie-breaking hazards.

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, other: Point3) -> f64 {
        (self - other).norm_sq()
    }

    pub fn dist(self, other: Point3) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Coordinate by axis index (0 = x, 1 = y, 2 = z).
    pub fn coord(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {axis} out of range"),
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered list of points together with the index each point had in the
/// cloud it was originally loaded from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    source_indices: Vec<usize>,
}

impl PointCloud {
    /// Builds a cloud whose provenance is the identity.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let source_indices = (0..points.len()).collect();
        Self::with_sources(points, source_indices)
    }

    pub fn with_sources(points: Vec<Point3>, source_indices: Vec<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.len() != source_indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} source indices",
                points.len(),
                source_indices.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(PointCloud { points, source_indices })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let sum = self.points.iter().fold(Point3::ORIGIN, |acc, &p| acc + p);
        sum * (1.0 / self.points.len() as f64)
    }

    /// Applies `f` to every point, keeping provenance.
    pub fn map_points(&self, f: impl FnMut(Point3) -> Point3) -> Result<Self> {
        Self::with_sources(self.points.iter().copied().map(f).collect(), self.source_indices.clone())
    }

    /// Keeps the points at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(positions.len());
        let mut src = Vec::with_capacity(positions.len());
        for &i in positions {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            pts.push(self.points[i]);
            src.push(self.source_indices[i]);
        }
        Self::with_sources(pts, src)
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// unit norm. A cloud whose points all coincide maps to the origin.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    let c = cloud.centroid();
    let centered: Vec<Point3> = cloud.points.iter().map(|&p| p - c).collect();
    let max_norm = centered.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let points = if max_norm > 0.0 {
        centered.into_iter().map(|p| p * (1.0 / max_norm)).collect()
    } else {
        vec![Point3::ORIGIN; cloud.len()]
    };
    PointCloud::with_sources(points, cloud.source_indices.clone())
}

/// How farthest point sampling picks its first point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartRule {
    Index(usize),
    /// Uniformly chosen index from an explicit seed.
    Random(u64),
}

impl Default for StartRule {
    fn default() -> Self {
        StartRule::Index(0)
    }
}

/// Greedy farthest point sampling. Returns the selected points and their
/// positions in `cloud`, in selection order. Ties go to the lower index.
pub fn farthest_point_sampling(cloud: &PointCloud, n_c: usize, start: StartRule) -> Result<(Vec<Point3>, Vec<usize>)> {
    let n = cloud.len();
    if n_c == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if n_c > n {
        return Err(Error::SampleTooLarge { requested: n_c, available: n });
    }
    let first = match start {
        StartRule::Index(i) if i < n => i,
        StartRule::Index(i) => return Err(Error::IndexOutOfRange { index: i, len: n }),
        StartRule::Random(seed) => ChaCha8Rng::seed_from_u64(seed).gen_range(0..n),
    };

    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(n_c);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == n_c {
            break;
        }
        let anchor = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = p.dist_sq(anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    let centers = selected.iter().map(|&i| pts[i]).collect();
    Ok((centers, selected))
}

/// Centers plus their kNN patches. Patch coordinates are relative to their
/// center; indices are positions in the cloud the patches were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub centers: Vec<Point3>,
    pub center_indices: Vec<usize>,
    pub patches: Vec<Vec<Point3>>,
    pub patch_indices: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn n_c(&self) -> usize {
        self.centers.len()
    }

    pub fn n_p(&self) -> usize {
        self.patches.first().map_or(0, Vec::len)
    }
}

/// Indices of the `k` points nearest to `center`, closest first, ties by
/// lower index.
pub fn nearest_indices(points: &[Point3], center: Point3, k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist_sq(center), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

pub fn knn_group(cloud: &PointCloud, centers: &[Point3], center_indices: &[usize], n_p: usize) -> Result<PatchSet> {
    if n_p == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    if n_p > cloud.len() {
        return Err(Error::SampleTooLarge { requested: n_p, available: cloud.len() });
    }
    if centers.len() != center_indices.len() {
        return Err(Error::ShapeMismatch("centers and center_indices differ in length".into()));
    }
    let mut patches = Vec::with_capacity(centers.len());
    let mut patch_indices = Vec::with_capacity(centers.len());
    for &c in centers {
        let idx = nearest_indices(&cloud.points, c, n_p);
        patches.push(idx.iter().map(|&i| cloud.points[i] - c).collect());
        patch_indices.push(idx);
    }
    Ok(PatchSet { centers: centers.to_vec(), center_indices: center_indices.to_vec(), patches, patch_indices })
}

/// FPS followed by kNN grouping.
pub fn build_patches(cloud: &PointCloud, n_c: usize, n_p: usize, start: StartRule) -> Result<PatchSet> {
    let (centers, idx) = farthest_point_sampling(cloud, n_c, start)?;
    knn_group(cloud, &centers, &idx, n_p)
}

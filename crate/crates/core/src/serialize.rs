//! Turning an unordered set of patch centers into a 1D processing order.
//!
//! Three families are provided: a single-axis sort, the axis-triple layout
//! (x-, y- and z-sorted copies concatenated, so the sequence is 3·n_c long)
//! and the proximity reordering, a single greedy pass over the y-sorted list
//! that pulls a nearby center forward whenever an adjacent gap reaches `r`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Proximity threshold used by the default reordering.
pub const DEFAULT_PROXIMITY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Which later candidate the proximity pass moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateRule {
    /// First center along the sequence within `r`.
    #[default]
    First,
    /// Closest center within `r` (ties to the earlier position).
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProximityThreshold(f64);

impl ProximityThreshold {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::invalid(format!("proximity threshold must be >= 0, got {r}")));
        }
        Ok(ProximityThreshold(r))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for ProximityThreshold {
    fn default() -> Self {
        ProximityThreshold(DEFAULT_PROXIMITY)
    }
}

impl TryFrom<f64> for ProximityThreshold {
    type Error = Error;
    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

impl From<ProximityThreshold> for f64 {
    fn from(r: ProximityThreshold) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Identity,
    AxisSort { axis: Axis },
    AxisTriple,
    NimbaProximity { r: ProximityThreshold, rule: CandidateRule },
}

/// Serialization family without its parameters; what the CLI's
/// `--ordering` flag selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingKind {
    Nimba,
    AxisTriple,
    Ysort,
    Identity,
}

impl OrderingKind {
    pub fn name(self) -> &'static str {
        match self {
            OrderingKind::Nimba => "nimba",
            OrderingKind::AxisTriple => "axis-triple",
            OrderingKind::Ysort => "ysort",
            OrderingKind::Identity => "identity",
        }
    }

    pub fn replication(self) -> usize {
        match self {
            OrderingKind::AxisTriple => 3,
            _ => 1,
        }
    }

    pub fn serialize(self, centers: &[Point3], r: ProximityThreshold, rule: CandidateRule) -> Result<Serialization> {
        if centers.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(match self {
            OrderingKind::Nimba => nimba_reorder_with(centers, r, rule),
            OrderingKind::AxisTriple => axis_triple(centers),
            OrderingKind::Ysort => sort_axis(centers, Axis::Y),
            OrderingKind::Identity => Serialization::identity(centers.len()),
        })
    }
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nimba" => Ok(OrderingKind::Nimba),
            "axis-triple" => Ok(OrderingKind::AxisTriple),
            "ysort" => Ok(OrderingKind::Ysort),
            "identity" => Ok(OrderingKind::Identity),
            other => Err(Error::invalid(format!("unknown ordering '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Serialization {
    pub order: Vec<usize>,
    pub strategy: Strategy,
    pub replication: usize,
}

impl Serialization {
    pub fn identity(n: usize) -> Self {
        Serialization { order: (0..n).collect(), strategy: Strategy::Identity, replication: 1 }
    }

    /// Number of source tokens this serialization indexes.
    pub fn n_source(&self) -> usize {
        self.order.len() / self.replication.max(1)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `out[i] = tokens[order[i]]`.
    pub fn apply<T: Clone>(&self, tokens: &[T]) -> Result<Vec<T>> {
        self.check_source_len(tokens.len())?;
        self.order
            .iter()
            .map(|&i| tokens.get(i).cloned().ok_or(Error::IndexOutOfRange { index: i, len: tokens.len() }))
            .collect()
    }

    /// Row-gather of a token matrix (one token per row).
    pub fn apply_rows(&self, tokens: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_source_len(tokens.nrows())?;
        let mut out = Array2::zeros((self.order.len(), tokens.ncols()));
        for (dst, &src) in self.order.iter().enumerate() {
            if src >= tokens.nrows() {
                return Err(Error::IndexOutOfRange { index: src, len: tokens.nrows() });
            }
            out.row_mut(dst).assign(&tokens.row(src));
        }
        Ok(out)
    }

    fn check_source_len(&self, n: usize) -> Result<()> {
        if n != self.n_source() {
            return Err(Error::ShapeMismatch(format!("serialization covers {} tokens, got {n}", self.n_source())));
        }
        Ok(())
    }
}

fn sorted_by_axis(centers: &[Point3], axis: Axis) -> Vec<usize> {
    let k = axis.index();
    let mut order: Vec<usize> = (0..centers.len()).collect();
    // stable: equal coordinates keep index order
    order.sort_by(|&a, &b| centers[a].coord(k).total_cmp(&centers[b].coord(k)));
    order
}

pub fn sort_axis(centers: &[Point3], axis: Axis) -> Serialization {
    Serialization { order: sorted_by_axis(centers, axis), strategy: Strategy::AxisSort { axis }, replication: 1 }
}

pub fn axis_triple(centers: &[Point3]) -> Serialization {
    let order = Axis::ALL.iter().flat_map(|&a| sorted_by_axis(centers, a)).collect();
    Serialization { order, strategy: Strategy::AxisTriple, replication: 3 }
}

/// Proximity reordering with the first-candidate rule.
pub fn nimba_reorder(centers: &[Point3], r: ProximityThreshold) -> Serialization {
    nimba_reorder_with(centers, r, CandidateRule::First)
}

pub fn nimba_reorder_with(centers: &[Point3], r: ProximityThreshold, rule: CandidateRule) -> Serialization {
    let r = r.get();
    let mut seq = sorted_by_axis(centers, Axis::Y);
    let n = seq.len();
    for i in 0..n.saturating_sub(1) {
        let anchor = centers[seq[i]];
        if anchor.dist(centers[seq[i + 1]]) < r {
            continue;
        }
        let candidate = match rule {
            CandidateRule::First => (i + 2..n).find(|&j| anchor.dist(centers[seq[j]]) < r),
            CandidateRule::Nearest => (i + 2..n)
                .map(|j| (anchor.dist(centers[seq[j]]), j))
                .filter(|&(d, _)| d < r)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, j)| j),
        };
        if let Some(j) = candidate {
            let moved = seq.remove(j);
            seq.insert(i + 1, moved);
        }
    }
    Serialization { order: seq, strategy: Strategy::NimbaProximity { r: ProximityThreshold(r), rule }, replication: 1 }
}

/// Distances between consecutive centers along a serialization.
pub fn adjacent_distances(centers: &[Point3], s: &Serialization) -> Vec<f64> {
    s.order.windows(2).map(|w| centers[w[0]].dist(centers[w[1]])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 3]]) -> Vec<Point3> {
        v.iter().map(|&a| a.into()).collect()
    }

    fn r(x: f64) -> ProximityThreshold {
        ProximityThreshold::new(x).unwrap()
    }

    #[test]
    fn sort_on_y() {
        let c = pts(&[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(sort_axis(&c, Axis::Y).order, vec![1, 0]);
    }

    #[test]
    fn equal_centers_keep_identity() {
        let c = pts(&[[0.3, 0.3, 0.3]; 5]);
        for axis in Axis::ALL {
            assert_eq!(sort_axis(&c, axis).order, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn axis_triple_by_hand() {
        let c = pts(&[[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        let s = axis_triple(&c);
        assert_eq!(s.order, vec![0, 1, 0, 1, 1, 0]);
        assert_eq!(s.replication, 3);
        assert_eq!(axis_triple(&pts(&[[0.5, 0.5, 0.5]])).order, vec![0, 0, 0]);
    }

    #[test]
    fn nimba_chain_is_untouched() {
        let c = pts(&[[0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(nimba_reorder(&c, r(0.8)).order, vec![0, 1, 2]);
    }

    #[test]
    fn nimba_pulls_close_center_forward() {
        let c = pts(&[[0.0, 0.0, 0.0], [2.0, 0.5, 0.0], [0.0, 0.6, 0.0]]);
        assert_eq!(nimba_reorder(&c, r(0.8)).order, vec![0, 2, 1]);
    }

    #[test]
    fn nearest_rule_differs_from_first() {
        // y-sorted: a(0,0) b(5,0.1) c(0.7,0.2) d(0.1,0.3)
        let c = pts(&[[0.0, 0.0, 0.0], [5.0, 0.1, 0.0], [0.7, 0.2, 0.0], [0.1, 0.3, 0.0]]);
        assert_eq!(nimba_reorder_with(&c, r(0.8), CandidateRule::First).order[..2], [0, 2]);
        assert_eq!(nimba_reorder_with(&c, r(0.8), CandidateRule::Nearest).order[..2], [0, 3]);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(ProximityThreshold::new(-0.1).is_err());
        assert!(ProximityThreshold::new(f64::NAN).is_err());
    }

    #[test]
    fn apply_orders() {
        let s = Serialization { order: vec![1, 0], strategy: Strategy::Identity, replication: 1 };
        assert_eq!(s.apply(&['a', 'b']).unwrap(), vec!['b', 'a']);
        assert_eq!(Serialization::identity(3).apply(&[1, 2, 3]).unwrap(), vec![1, 2, 3]);
        let bad = Serialization { order: vec![0, 5], strategy: Strategy::Identity, replication: 1 };
        assert!(matches!(bad.apply(&[1, 2]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn apply_axis_triple_rows() {
        let c = pts(&[[0.1, 0.9, 0.3], [0.5, 0.2, 0.8], [0.9, 0.4, 0.1], [0.3, 0.6, 0.5]]);
        let s = axis_triple(&c);
        let tokens = Array2::from_shape_fn((4, 2), |(i, j)| (i * 10 + j) as f64);
        let out = s.apply_rows(tokens.view()).unwrap();
        assert_eq!(out.nrows(), 12);
        for src in 0..4 {
            let count = out.rows().into_iter().filter(|row| *row == tokens.row(src)).count();
            assert_eq!(count, 3);
        }
    }

    #[test]
    fn ordering_kind_parses() {
        for k in [OrderingKind::Nimba, OrderingKind::AxisTriple, OrderingKind::Ysort, OrderingKind::Identity] {
            assert_eq!(k.name().parse::<OrderingKind>().unwrap(), k);
        }
        assert!("zorder".parse::<OrderingKind>().is_err());
    }
}

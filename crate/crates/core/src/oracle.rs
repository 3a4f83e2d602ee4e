//! Deliberately naive reference implementations used to cross-check the
//! fast paths, both by the test suites and by `pointseq check`.

use crate::geometry::Point3;

fn dist_sq(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling recomputing every point-to-set distance from
/// scratch at each step. Quadratic in the sample size, which is fine here.
pub fn fps_brute(points: &[Point3], n_c: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < n_c.min(points.len()) {
        let mut best: Option<(f64, usize)> = None;
        for (i, &p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| dist_sq(p, points[c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        chosen.push(best.expect("unselected point remains").1);
    }
    chosen
}

/// The `k` nearest points by a full sort on `(distance², index)`.
pub fn knn_brute(points: &[Point3], center: Point3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (dist_sq(p, center), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Indices sorted by the y coordinate, stable.
pub fn ysort(points: &[Point3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].y.partial_cmp(&points[b].y).expect("finite"));
    idx
}

/// Replays the proximity rule as a queue: the placed prefix grows by one
/// element per step, taken either from the head of the remaining y-sorted
/// queue or, when the head is too far from the last placed center, from the
/// first queued center within `r` of it.
pub fn nimba_replay(points: &[Point3], r: f64) -> Vec<usize> {
    let mut queue = ysort(points);
    if queue.is_empty() {
        return queue;
    }
    let mut placed = vec![queue.remove(0)];
    while !queue.is_empty() {
        let last = points[*placed.last().expect("non-empty")];
        let near = |i: usize| dist_sq(last, points[i]).sqrt() < r;
        let pick = if near(queue[0]) { 0 } else { (1..queue.len()).find(|&j| near(queue[j])).unwrap_or(0) };
        placed.push(queue.remove(pick));
    }
    placed
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_on_hand_example() {
        let pts: Vec<Point3> = [[0.0, 0.0, 0.0], [5.0, 1.0, 0.0], [0.1, 2.0, 0.0]].iter().map(|&a| a.into()).collect();
        assert_eq!(nimba_replay(&pts, 0.8), vec![0, 1, 2]);
        assert_eq!(nimba_replay(&pts, 3.0), vec![0, 2, 1]);
    }

    #[test]
    fn permutation_check() {
        assert!(is_permutation(&[2, 0, 1], 3));
        assert!(!is_permutation(&[0, 0, 1], 3));
        assert!(!is_permutation(&[0, 1], 3));
    }
}

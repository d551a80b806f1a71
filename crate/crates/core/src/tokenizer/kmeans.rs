//! Lloyd's algorithm with k-means++ seeding.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::nearest::{squared_distance, squared_distance_within, NearestIndex};

pub const MAX_ITERATIONS: usize = 50;
/// Training stops once an iteration improves the objective by less than this
/// fraction of its previous value.
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    pub centroids: Vec<f64>,
    /// Cluster of every input point under the final centroids.
    pub assignments: Vec<u32>,
    /// Total squared error after each assignment step, starting with the
    /// seeded centroids. The last entry belongs to the final centroids.
    pub objective: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits.
pub(crate) fn unit_f64(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Clusters `points` (flat, `dim` per point) into `k` groups.
///
/// Panics if there are fewer than `k` points; callers validate first.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> KMeans {
    let n = points.len() / dim;
    assert!(k >= 1 && n >= k, "need at least k points");
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, dim, k, &mut rng);

    let mut assignments = vec![0u32; n];
    let mut objective = Vec::new();
    let mut error = assign(points, dim, &centroids, &mut assignments, false);
    objective.push(error);

    for _ in 0..MAX_ITERATIONS {
        repair_empty_clusters(points, dim, &centroids, &mut assignments, k);
        centroids = cluster_means(points, dim, &assignments, k);
        let previous = error;
        error = assign(points, dim, &centroids, &mut assignments, true);
        objective.push(error);
        if previous - error <= RELATIVE_TOLERANCE * previous {
            break;
        }
    }

    KMeans {
        dim,
        centroids,
        assignments,
        objective,
    }
}

fn seed_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let norms: Vec<f64> = points.chunks_exact(dim).map(super::nearest::norm).collect();

    let mut centroids = Vec::with_capacity(k * dim);
    let first = ((unit_f64(rng) * n as f64) as usize).min(n - 1);
    centroids.extend_from_slice(point(first));
    let mut nearest_sq: Vec<f64> = (0..n).map(|i| squared_distance(point(i), point(first))).collect();

    for _ in 1..k {
        let total: f64 = nearest_sq.iter().sum();
        let chosen = if total > 0.0 {
            let target = unit_f64(rng) * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest_sq.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final partial sum.
            pick.unwrap_or_else(|| nearest_sq.iter().rposition(|&d| d > 0.0).unwrap_or(n - 1))
        } else {
            // Every point already coincides with a centroid; the duplicate is
            // repaired during the first Lloyd step.
            ((unit_f64(rng) * n as f64) as usize).min(n - 1)
        };
        let c = point(chosen);
        let cn = norms[chosen];
        centroids.extend_from_slice(c);
        for (i, slot) in nearest_sq.iter_mut().enumerate() {
            let gap = norms[i] - cn;
            if gap * gap >= *slot {
                continue;
            }
            if let Some(d) = squared_distance_within(point(i), c, *slot) {
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    centroids
}

/// Assigns every point to its nearest centroid and returns the total error,
/// accumulated in point order.
fn assign(points: &[f64], dim: usize, centroids: &[f64], assignments: &mut [u32], warm: bool) -> f64 {
    let index = NearestIndex::new(centroids, dim);
    let mut total = 0.0;
    for (p, slot) in points.chunks_exact(dim).zip(assignments.iter_mut()) {
        let hint = warm.then_some(*slot as usize);
        let (best, d) = index.nearest(centroids, p, hint);
        *slot = best as u32;
        total += d;
    }
    total
}

/// Gives every empty cluster the point farthest from its own centroid, taken
/// from clusters that keep at least one member. Ties go to the lowest point.
fn repair_empty_clusters(points: &[f64], dim: usize, centroids: &[f64], assignments: &mut [u32], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a as usize] += 1;
    }
    if sizes.iter().all(|&s| s > 0) {
        return;
    }
    let mut distance: Vec<f64> = points
        .chunks_exact(dim)
        .zip(assignments.iter())
        .map(|(p, &a)| squared_distance(p, &centroids[a as usize * dim..(a as usize + 1) * dim]))
        .collect();
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a as usize] < 2 {
                continue;
            }
            if pick.map_or(true, |p| distance[i] > distance[p]) {
                pick = Some(i);
            }
        }
        let i = pick.expect("n >= k guarantees a donor cluster");
        sizes[assignments[i] as usize] -= 1;
        assignments[i] = empty as u32;
        sizes[empty] = 1;
        // A moved point sits on its new centroid after the update step.
        distance[i] = 0.0;
    }
}

fn cluster_means(points: &[f64], dim: usize, assignments: &[u32], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(dim).zip(assignments) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        debug_assert!(count > 0);
        for s in &mut sums[c * dim..(c + 1) * dim] {
            *s /= count as f64;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::nearest::nearest_exhaustive;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        (0..n * dim).map(|_| unit_f64(&mut rng) * 10.0).collect()
    }

    #[test]
    fn two_points_two_clusters() {
        let km = kmeans(&[0.0, 10.0], 1, 2, 7);
        let mut c = km.centroids.clone();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(*km.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn identical_points_get_duplicate_centroid() {
        let km = kmeans(&[2.5; 6], 2, 2, 1);
        assert_eq!(km.centroids, vec![2.5; 4]);
        assert_eq!(*km.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn objective_non_increasing_and_local_optimum() {
        let points = random_points(100, 2, 42);
        let km = kmeans(&points, 2, 4, 3);
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0], "objective rose: {:?}", km.objective);
        }
        // No single point would rather sit in another cluster.
        let mut total = 0.0;
        for (i, p) in points.chunks_exact(2).enumerate() {
            let (best, d) = nearest_exhaustive(&km.centroids, 2, p);
            assert_eq!(best as u32, km.assignments[i]);
            total += d;
        }
        assert_eq!(total, *km.objective.last().unwrap());
    }

    #[test]
    fn deterministic_for_seed() {
        let points = random_points(300, 3, 9);
        let a = kmeans(&points, 3, 16, 5);
        let b = kmeans(&points, 3, 16, 5);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.objective, b.objective);
        let c = kmeans(&points, 3, 16, 6);
        assert_ne!(a.centroids, c.centroids);
    }

    #[test]
    fn repair_takes_farthest_point() {
        // Clusters 0 and 1 share all points; cluster 2 is empty.
        let points = [0.0, 1.0, 5.0, 0.5];
        let centroids = [0.0, 9.0, 100.0];
        let mut assignments = vec![0, 0, 0, 1];
        repair_empty_clusters(&points, 1, &centroids, &mut assignments, 3);
        assert_eq!(assignments, vec![0, 0, 2, 1]);
    }
}

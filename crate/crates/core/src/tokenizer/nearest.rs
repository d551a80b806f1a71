//! Exact nearest-neighbour search over a flat set of vectors.
//!
//! Candidates are visited in order of vector norm, starting from the query's
//! norm and widening in both directions. The reverse triangle inequality
//! `|‖x‖ − ‖c‖|² ≤ ‖x − c‖²` ends each direction once no remaining candidate
//! can reach the current best, and per-candidate sums bail out as soon as they
//! exceed it. The result is identical to an exhaustive lowest-index-wins scan.

/// Relative and absolute slack applied to the norm bound so floating-point
/// rounding in the norms can never prune a true winner.
const BOUND_REL_SLACK: f64 = 1e-9;
const BOUND_ABS_SLACK: f64 = 1e-12;

/// Squared Euclidean distance, summed sequentially.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Like [`squared_distance`] but returns `None` once the running sum exceeds
/// `limit`. When it returns `Some`, the value equals `squared_distance`.
#[inline]
pub fn squared_distance_within(a: &[f64], b: &[f64], limit: f64) -> Option<f64> {
    const BLOCK: usize = 16;
    let mut sum = 0.0;
    let mut ca = a.chunks(BLOCK);
    let mut cb = b.chunks(BLOCK);
    while let (Some(xa), Some(xb)) = (ca.next(), cb.next()) {
        for (x, y) in xa.iter().zip(xb) {
            let d = x - y;
            sum += d * d;
        }
        if sum > limit {
            return None;
        }
    }
    Some(sum)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct NearestIndex {
    dim: usize,
    order: Vec<u32>,
    sorted_norms: Vec<f64>,
}

impl NearestIndex {
    pub fn new(vectors: &[f64], dim: usize) -> Self {
        let norms: Vec<f64> = vectors.chunks_exact(dim).map(norm).collect();
        let mut order: Vec<u32> = (0..norms.len() as u32).collect();
        order.sort_by(|&a, &b| {
            norms[a as usize]
                .total_cmp(&norms[b as usize])
                .then(a.cmp(&b))
        });
        let sorted_norms = order.iter().map(|&i| norms[i as usize]).collect();
        NearestIndex {
            dim,
            order,
            sorted_norms,
        }
    }

    /// Index and squared distance of the vector closest to `query`; ties go to
    /// the lowest index. `hint` seeds the search with a likely winner.
    pub fn nearest(&self, vectors: &[f64], query: &[f64], hint: Option<usize>) -> (usize, f64) {
        debug_assert_eq!(query.len(), self.dim);
        let dim = self.dim;
        let qn = norm(query);
        let vector = |i: usize| &vectors[i * dim..(i + 1) * dim];

        let start = self.sorted_norms.partition_point(|&n| n < qn);
        let (mut best, mut best_d) = match hint {
            Some(h) => (h, squared_distance(query, vector(h))),
            None => {
                let i = self.order[start.min(self.order.len() - 1)] as usize;
                (i, squared_distance(query, vector(i)))
            }
        };

        let consider = |i: usize, best: &mut usize, best_d: &mut f64| {
            if i == *best {
                return;
            }
            if let Some(d) = squared_distance_within(query, vector(i), *best_d) {
                if d < *best_d || (d == *best_d && i < *best) {
                    *best = i;
                    *best_d = d;
                }
            }
        };
        let pruned = |gap: f64, best_d: f64| gap * gap > best_d * (1.0 + BOUND_REL_SLACK) + BOUND_ABS_SLACK;

        let mut up = start;
        let mut down = start;
        let mut up_open = up < self.order.len();
        let mut down_open = down > 0;
        while up_open || down_open {
            let up_gap = if up_open { self.sorted_norms[up] - qn } else { f64::INFINITY };
            let down_gap = if down_open { qn - self.sorted_norms[down - 1] } else { f64::INFINITY };
            if up_gap <= down_gap {
                if pruned(up_gap, best_d) {
                    up_open = false;
                    continue;
                }
                consider(self.order[up] as usize, &mut best, &mut best_d);
                up += 1;
                up_open = up < self.order.len();
            } else {
                if pruned(down_gap, best_d) {
                    down_open = false;
                    continue;
                }
                down -= 1;
                consider(self.order[down] as usize, &mut best, &mut best_d);
                down_open = down > 0;
            }
        }
        (best, best_d)
    }
}

/// Exhaustive reference search; lowest index wins ties.
pub fn nearest_exhaustive(vectors: &[f64], dim: usize, query: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in vectors.chunks_exact(dim).enumerate() {
        let d = squared_distance(query, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equidistant_goes_to_lowest_index() {
        let vectors = [0.0, 0.0, 1.0, 1.0];
        let index = NearestIndex::new(&vectors, 2);
        assert_eq!(index.nearest(&vectors, &[0.5, 0.5], None).0, 0);
        assert_eq!(index.nearest(&vectors, &[0.5, 0.5], Some(1)).0, 0);
    }

    #[test]
    fn duplicate_vectors_resolve_to_first() {
        let vectors = [3.0, 1.0, 3.0, 3.0];
        let index = NearestIndex::new(&vectors, 1);
        assert_eq!(index.nearest(&vectors, &[3.0], None), (0, 0.0));
        assert_eq!(index.nearest(&vectors, &[2.9], Some(3)).0, 0);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(
            dim in 1usize..6,
            seed_vectors in proptest::collection::vec(-3i32..4, 2..80),
            query in proptest::collection::vec(-30i32..40, 6),
            hint in any::<proptest::sample::Index>(),
        ) {
            // Coarse lattice values make exact ties common.
            let n = seed_vectors.len() / dim;
            prop_assume!(n >= 1);
            let vectors: Vec<f64> = seed_vectors[..n * dim].iter().map(|&v| v as f64 * 0.5).collect();
            let query: Vec<f64> = query[..dim].iter().map(|&v| v as f64 * 0.1).collect();
            let index = NearestIndex::new(&vectors, dim);
            let expected = nearest_exhaustive(&vectors, dim, &query);
            prop_assert_eq!(index.nearest(&vectors, &query, None), expected);
            prop_assert_eq!(index.nearest(&vectors, &query, Some(hint.index(n))), expected);
        }
    }
}

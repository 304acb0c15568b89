//! Maximum-weight bipartite assignment over IoU matrices.
//!
//! Weights are quantized to 2^-30 and solved exactly with the Hungarian
//! method on integer costs. Among assignments with equal quantized weight
//! the one with the smallest sum of `row * cols + col - rows * cols` over
//! positive pairs wins, so ties favour low rows (tracks) and then low
//! columns (detections) and the result never depends on floating-point
//! noise.

const QUANT: f64 = (1u64 << 30) as f64;

/// Returns `assignment[row] = Some(col)` maximizing total weight. Weights
/// must be finite and non-negative; zero-weight pairs are never reported.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let q = |w: f64| -> i128 { (w.clamp(0.0, 1.0) * QUANT).round() as i128 };
    let n_pairs = (rows * cols) as i128;
    let tie_scale = n_pairs * (rows.max(cols) as i128 + 1) + 1;
    let cost = |r: usize, c: usize| -> i128 {
        let qw = q(weights[r][c]);
        let rank = if qw > 0 { (r * cols + c) as i128 } else { n_pairs };
        -qw * tie_scale + rank
    };

    let assignment = if rows <= cols {
        hungarian(rows, cols, |r, c| cost(r, c))
    } else {
        let by_col = hungarian(cols, rows, |c, r| cost(r, c));
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    };
    assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| c.filter(|&c| q(weights[r][c]) > 0))
        .collect()
}

/// Classic O(n^2 m) shortest-augmenting-path Hungarian method for an
/// `n x m` cost matrix with `n <= m`. Every row is assigned.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> i128) -> Vec<Option<usize>> {
    const INF: i128 = i128::MAX / 4;
    // 1-based; index 0 is the virtual column used to start each augmentation.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Greedy assignment: repeatedly take the heaviest remaining pair, ties by
/// lowest row then lowest column.
pub fn greedy_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let mut pairs: Vec<(f64, usize, usize)> = weights
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &w)| (w, r, c)))
        .filter(|&(w, _, _)| w > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; rows];
    let mut col_used = vec![false; weights.first().map_or(0, Vec::len)];
    for (_, r, c) in pairs {
        if out[r].is_none() && !col_used[c] {
            out[r] = Some(c);
            col_used[c] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(w: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| w[r][c]))
            .sum()
    }

    fn brute(w: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == w.len() {
                return 0.0;
            }
            let mut best = go(w, r + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[r][c] + go(w, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let cols = w.first().map_or(0, Vec::len);
        go(w, 0, &mut vec![false; cols])
    }

    #[test]
    fn unique_optimum() {
        let w = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        assert_eq!(max_weight_assignment(&w), vec![Some(0), Some(1)]);
    }

    #[test]
    fn optimal_beats_greedy() {
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.0]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
        assert_eq!(greedy_assignment(&w), vec![Some(0), None]);
    }

    #[test]
    fn ties_prefer_low_rows() {
        // two identical rows competing for one column
        let w = vec![vec![0.7], vec![0.7]];
        assert_eq!(max_weight_assignment(&w), vec![Some(0), None]);
        let w = vec![vec![0.7, 0.0], vec![0.7, 0.0]];
        assert_eq!(max_weight_assignment(&w), vec![Some(0), None]);
    }

    #[test]
    fn empty_inputs() {
        assert!(max_weight_assignment(&[]).is_empty());
        assert_eq!(max_weight_assignment(&[vec![], vec![]]), vec![None, None]);
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(rows in 1usize..=6, cols in 1usize..=6,
                                         seed in proptest::collection::vec(0.0f64..1.0, 36)) {
            let w: Vec<Vec<f64>> = (0..rows)
                .map(|r| (0..cols).map(|c| seed[r * 6 + c]).collect())
                .collect();
            let a = max_weight_assignment(&w);
            let mut seen = vec![false; cols];
            for c in a.iter().flatten() {
                prop_assert!(!seen[*c]);
                seen[*c] = true;
            }
            prop_assert!((total(&w, &a) - brute(&w)).abs() < 1e-8);
        }
    }
}

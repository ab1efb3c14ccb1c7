//! Rectangular linear assignment (Hungarian method with potentials).
//!
//! Used by the tracker (cost `1 - IoU`) and by point-based evaluation
//! (center distance). Both gate their costs: pairs above the gate are
//! forbidden and the solver returns the largest gated matching, breaking
//! ties by minimum total cost.

/// Result of a gated assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost[r][c]).sum()
    }
}

/// Minimum-cost assignment covering every row when `rows <= cols` (every
/// column otherwise). Returns, for each row, its assigned column.
pub fn solve(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        hungarian(rows, cols, |i, j| cost[i][j])
    } else {
        let by_col = hungarian(cols, rows, |i, j| cost[j][i]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

/// Gated assignment: only pairs with `cost <= gate` may be matched. Among
/// matchings of maximum size, the one with minimum total cost is returned.
///
/// The column count is taken from the first row.
pub fn solve_gated(cost: &[Vec<f64>], gate: f64) -> Assignment {
    let cols = cost.first().map_or(0, Vec::len);
    let allowed = |c: f64| c.is_finite() && c <= gate;
    // Any matching of allowed pairs costs less than one forbidden pair, so
    // the solver maximizes the number of allowed pairs first.
    let big = 1.0
        + cost
            .iter()
            .flatten()
            .filter(|&&c| allowed(c))
            .map(|c| c.abs())
            .sum::<f64>();
    let padded: Vec<Vec<f64>> = cost
        .iter()
        .map(|row| row.iter().map(|&c| if allowed(c) { c } else { big }).collect())
        .collect();

    let mut out = Assignment::default();
    let mut col_used = vec![false; cols];
    for (r, c) in solve(&padded).into_iter().enumerate() {
        match c {
            Some(c) if allowed(cost[r][c]) => {
                out.pairs.push((r, c));
                col_used[c] = true;
            }
            _ => out.unmatched_rows.push(r),
        }
    }
    out.unmatched_cols = (0..cols).filter(|&c| !col_used[c]).collect();
    out
}

/// Shortest augmenting path Hungarian algorithm, `n <= m`, O(n^2 m).
fn hungarian(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based arrays; p[j] = row matched to column j, 0 = free.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over all partial matchings of allowed pairs:
    /// maximize size, then minimize cost.
    fn brute_force(cost: &[Vec<f64>], gate: f64) -> (usize, f64) {
        fn rec(cost: &[Vec<f64>], gate: f64, row: usize, used: &mut Vec<bool>, k: usize, c: f64, best: &mut (usize, f64)) {
            if row == cost.len() {
                if k > best.0 || (k == best.0 && c < best.1) {
                    *best = (k, c);
                }
                return;
            }
            rec(cost, gate, row + 1, used, k, c, best);
            for j in 0..used.len() {
                if !used[j] && cost[row][j] <= gate {
                    used[j] = true;
                    rec(cost, gate, row + 1, used, k + 1, c + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let cols = cost.first().map_or(0, Vec::len);
        let mut best = (0, f64::INFINITY);
        rec(cost, gate, 0, &mut vec![false; cols], 0, 0.0, &mut best);
        if best.0 == 0 {
            best.1 = 0.0;
        }
        best
    }

    #[test]
    fn greedy_trap() {
        // greedy takes (0,0)=1 then (1,1)=10 -> 11; optimum is 2 + 3 = 5
        let cost = vec![vec![1.0, 2.0], vec![3.0, 10.0]];
        let a = solve_gated(&cost, f64::INFINITY);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_inputs() {
        assert!(solve(&[]).is_empty());
        let a = solve_gated(&[vec![], vec![]], 1.0);
        assert_eq!(a.unmatched_rows, vec![0, 1]);
        assert!(a.pairs.is_empty());
    }

    #[test]
    fn gate_prefers_cardinality() {
        // matching (0,0) alone is cheapest, but (0,1),(1,0) matches both
        let cost = vec![vec![0.1, 0.4], vec![0.3, 9.0]];
        let a = solve_gated(&cost, 0.5);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert!(a.unmatched_rows.is_empty() && a.unmatched_cols.is_empty());
    }

    #[test]
    fn rectangular_both_ways() {
        let tall = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(solve(&tall), vec![None, Some(0), None]);
        let wide = vec![vec![5.0, 1.0, 3.0]];
        assert_eq!(solve(&wide), vec![Some(1)]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_enumeration(
            rows in 0usize..6,
            cols in 0usize..6,
            seed in proptest::collection::vec(0.0f64..1.0, 36),
            gate in 0.1f64..1.1,
        ) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| seed[r * 6 + c]).collect()).collect();
            // an empty matrix carries no column count
            let cols = if rows == 0 { 0 } else { cols };
            let a = solve_gated(&cost, gate);
            let (k, c) = brute_force(&cost, gate);
            prop_assert_eq!(a.pairs.len(), k);
            prop_assert!((a.total_cost(&cost) - c).abs() < 1e-9);
            let mut seen_r = vec![false; rows];
            let mut seen_c = vec![false; cols];
            for &(r, cc) in &a.pairs {
                prop_assert!(!seen_r[r] && !seen_c[cc]);
                seen_r[r] = true;
                seen_c[cc] = true;
            }
            prop_assert_eq!(a.pairs.len() + a.unmatched_rows.len(), rows);
            prop_assert_eq!(a.pairs.len() + a.unmatched_cols.len(), cols);
        }
    }
}

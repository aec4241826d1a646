//! Minimum-cost one-to-one assignment and gated box association.

use crate::geometry::{aabb_iou3d, Aabb3};

/// Cost assigned to pairs that must not be matched.
pub const FORBIDDEN: f64 = 1e9;
/// Cost of leaving a row or column unmatched in the padded problem.
pub const DUMMY: f64 = 1e3;

/// Solves the rectangular assignment problem for `rows <= cols` with the
/// O(n^2 m) shortest augmenting path method. Returns the column of each row.
fn solve_raw(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    debug_assert!(rows <= cols);
    let at = |i: usize, j: usize| cost[i * cols + j];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let flat: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| cost[i][j])).collect();
    let sol = solve_raw(&flat, rows.len(), cols.len());
    rows.iter().zip(&sol).map(|(&i, &k)| cost[i][cols[k]]).sum()
}

/// Minimum total cost assignment of every row to a distinct column
/// (`rows <= cols`). Among optimal assignments the lexicographically
/// smallest `(row, column)` sequence is returned.
pub fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols");
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = optimum(cost, &all_rows, &all_cols);
    let tol = 1e-9 * (1.0 + best.abs());

    let mut out = Vec::with_capacity(n);
    let mut free: Vec<usize> = all_cols;
    let mut fixed = 0.0;
    for i in 0..n {
        let rest: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free.iter().enumerate() {
            let cols: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let total = fixed + cost[i][j] + optimum(cost, &rest, &cols);
            if total <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        // the optimum always admits some column, rounding aside
        let pos = chosen.unwrap_or_else(|| {
            let cols: Vec<usize> = free.clone();
            let rows: Vec<usize> = (i..n).collect();
            let flat: Vec<f64> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| cost[r][c])).collect();
            solve_raw(&flat, rows.len(), cols.len())[0]
        });
        let j = free.remove(pos);
        fixed += cost[i][j];
        out.push(j);
    }
    out
}

/// Sum of `cost[i][assignment[i]]` in row order.
pub fn total_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(row, column)` pairs in row order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Optimal partial matching where `None` marks inadmissible pairs. Rows and
/// columns may stay unmatched at a fixed price, so any admissible pair is
/// preferred to leaving both sides unmatched.
pub fn match_gated(cost: &[Vec<Option<f64>>], cols: usize) -> Matching {
    let rows = cost.len();
    let size = rows + cols;
    if rows == 0 || cols == 0 {
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    let mut padded = vec![vec![FORBIDDEN; size]; size];
    for i in 0..rows {
        for j in 0..cols {
            if let Some(c) = cost[i][j] {
                padded[i][j] = c;
            }
        }
        padded[i][cols + i] = DUMMY;
    }
    for j in 0..cols {
        padded[rows + j][j] = DUMMY;
        for k in 0..rows {
            padded[rows + j][cols + k] = 0.0;
        }
    }
    let sol = solve(&padded);
    let mut m = Matching::default();
    let mut col_used = vec![false; cols];
    for (i, &j) in sol.iter().enumerate().take(rows) {
        if j < cols && cost[i][j].is_some() {
            m.pairs.push((i, j));
            col_used[j] = true;
        } else {
            m.unmatched_rows.push(i);
        }
    }
    m.unmatched_cols = (0..cols).filter(|&j| !col_used[j]).collect();
    m
}

/// Association cost between two boxes, weighting horizontal displacement.
pub fn box_cost(a: &Aabb3, b: &Aabb3) -> f64 {
    let d = b.center - a.center;
    2.0 * d.xy().norm() + d.z.abs() - aabb_iou3d(a, b)
}

/// Matches previous track boxes to current detections; pairs further apart
/// than `gate` horizontally are inadmissible.
pub fn associate(prev: &[Aabb3], curr: &[Aabb3], gate: f64) -> Matching {
    let cost: Vec<Vec<Option<f64>>> = prev
        .iter()
        .map(|a| curr.iter().map(|b| ((b.center - a.center).xy().norm() <= gate).then(|| box_cost(a, b))).collect())
        .collect();
    match_gated(&cost, curr.len())
}

//! Exact linear assignment on dense square cost matrices.
//!
//! [`solve`] is the Jonker-Volgenant method: column reduction, reduction
//! transfer and two rounds of augmenting row reduction build a large partial
//! assignment cheaply, and the remaining free rows are inserted by shortest
//! augmenting paths. [`solve_augmenting`] runs shortest augmenting paths
//! from scratch; it is simpler, slower, and kept as a cross-check.
//!
//! Both are `O(n^3)` in the worst case and deterministic: ties are broken by
//! a fixed scan order.

const FREE: usize = usize::MAX;

fn total_cost(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

/// Minimum-cost perfect matching on a row-major `n x n` cost matrix.
///
/// Returns `perm` with row `i` assigned to column `perm[i]`, and the total
/// cost.
pub fn solve(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    let mut v = vec![0.0; n];
    let mut rowsol = vec![FREE; n];
    let mut colsol = vec![FREE; n];
    let mut matches = vec![0u32; n];

    // Column reduction: each column goes to its cheapest row.
    for j in (0..n).rev() {
        let (mut imin, mut min) = (0, c(0, j));
        for i in 1..n {
            if c(i, j) < min {
                min = c(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else if v[j] < v[rowsol[imin]] {
            let j1 = rowsol[imin];
            rowsol[imin] = j;
            colsol[j] = imin;
            colsol[j1] = FREE;
        } else {
            colsol[j] = FREE;
        }
    }

    // Reduction transfer from singly matched rows.
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free.push(i);
        } else if matches[i] == 1 {
            let j1 = rowsol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    min = min.min(c(i, j) - v[j]);
                }
            }
            if min.is_finite() {
                v[j1] -= min;
            }
        }
    }

    // Augmenting row reduction, two rounds.
    for _ in 0..2 {
        let previous = std::mem::take(&mut free);
        let mut queue: Vec<usize> = previous.into_iter().rev().collect();
        let mut guard = 0usize;
        while let Some(i) = queue.pop() {
            guard += 1;
            let (mut umin, mut j1) = (c(i, 0) - v[0], 0);
            let (mut usubmin, mut j2) = (f64::INFINITY, 0);
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            let strict = umin < usubmin;
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != FREE {
                j1 = j2;
                i0 = colsol[j2];
            }
            if i0 != FREE {
                rowsol[i0] = FREE;
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != FREE {
                // Keep reducing along the displaced row while prices drop,
                // but bound the work so float rounding cannot cycle.
                if strict && guard < 8 * n {
                    queue.push(i0);
                } else {
                    free.push(i0);
                }
            }
        }
    }

    // Shortest augmenting paths for the rows still free.
    let mut sap = Dijkstra::new(n);
    for &freerow in &free {
        let endofpath = sap.search(cost, n, freerow, &v, &colsol);
        sap.update_prices(&mut v);
        let mut j = endofpath;
        loop {
            let i = sap.pred[j] as usize;
            colsol[j] = i;
            std::mem::swap(&mut rowsol[i], &mut j);
            if i == freerow {
                break;
            }
        }
    }
    let total = total_cost(cost, n, &rowsol);
    (rowsol, total)
}

/// Dense Dijkstra over reduced costs for one augmenting path.
///
/// Finalized columns get `vs = -inf` so the relaxation `c - vs - h` is `+inf`
/// there and never lowers `d`; that keeps the inner loop free of branches and
/// lets it run four lanes at a time.
struct Dijkstra {
    d: Vec<f64>,
    vs: Vec<f64>,
    pred: Vec<f64>,
    done: Vec<(usize, f64)>,
    min: f64,
}

impl Dijkstra {
    fn new(n: usize) -> Self {
        Self { d: vec![0.0; n], vs: vec![0.0; n], pred: vec![0.0; n], done: Vec::with_capacity(n), min: 0.0 }
    }

    /// Relaxes every open column from `row` (shifted by `h`) and returns the
    /// open column with the smallest tentative distance.
    fn relax(&mut self, row: &[f64], h: f64, i: f64) -> usize {
        use wide::f64x4;
        let n = row.len();
        let body = n - n % 4;
        let (hv, iv) = (f64x4::splat(h), f64x4::splat(i));
        let mut best = f64x4::splat(f64::INFINITY);
        let mut best_at = f64x4::ZERO;
        let (mut at, four) = (f64x4::new([0.0, 1.0, 2.0, 3.0]), f64x4::splat(4.0));
        for k in (0..body).step_by(4) {
            let r = f64x4::from(<[f64; 4]>::try_from(&row[k..k + 4]).unwrap());
            let vs = f64x4::from(<[f64; 4]>::try_from(&self.vs[k..k + 4]).unwrap());
            let d = f64x4::from(<[f64; 4]>::try_from(&self.d[k..k + 4]).unwrap());
            let p = f64x4::from(<[f64; 4]>::try_from(&self.pred[k..k + 4]).unwrap());
            let cand = r - vs - hv;
            let lower = cand.simd_lt(d);
            let d = lower.blend(cand, d);
            self.d[k..k + 4].copy_from_slice(&d.to_array());
            self.pred[k..k + 4].copy_from_slice(&lower.blend(iv, p).to_array());
            let better = d.simd_lt(best);
            best = better.blend(d, best);
            best_at = better.blend(at, best_at);
            at += four;
        }
        // Smallest value, first index on ties.
        let (mut min, mut arg) = (f64::INFINITY, 0usize);
        for (m, a) in best.to_array().into_iter().zip(best_at.to_array()) {
            let a = a as usize;
            if m < min || (m == min && a < arg) {
                min = m;
                arg = a;
            }
        }
        for k in body..n {
            let cand = row[k] - self.vs[k] - h;
            if cand < self.d[k] {
                self.d[k] = cand;
                self.pred[k] = i;
            }
            if self.d[k] < min {
                min = self.d[k];
                arg = k;
            }
        }
        // With every column finalized the minimum is `+inf`; callers stop then.
        arg
    }

    fn search(&mut self, cost: &[f64], n: usize, freerow: usize, v: &[f64], colsol: &[usize]) -> usize {
        self.d.fill(f64::INFINITY);
        self.vs.copy_from_slice(v);
        self.done.clear();
        let (mut row, mut h) = (freerow, 0.0);
        loop {
            let j = self.relax(&cost[row * n..(row + 1) * n], h, row as f64);
            let min = self.d[j];
            self.min = min;
            if colsol[j] == FREE || !min.is_finite() {
                return j;
            }
            self.done.push((j, min));
            self.d[j] = f64::INFINITY;
            self.vs[j] = f64::NEG_INFINITY;
            row = colsol[j];
            h = cost[row * n + j] - v[j] - min;
        }
    }

    /// Columns finalized before the path's end get new prices.
    fn update_prices(&self, v: &mut [f64]) {
        for &(j, dj) in &self.done {
            v[j] += dj - self.min;
        }
    }
}

/// Successive shortest augmenting paths with row and column potentials,
/// starting from an empty assignment.
pub fn solve_augmenting(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![FREE; n];
    let mut row4col = vec![FREE; n];
    let mut path = vec![FREE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut remaining = vec![0usize; n];
    let mut scanned_rows = Vec::with_capacity(n);
    let mut scanned_cols = Vec::with_capacity(n);

    for cur in 0..n {
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);
        for (k, r) in remaining.iter_mut().enumerate() {
            *r = n - 1 - k;
        }
        let mut left = n;
        scanned_rows.clear();
        scanned_cols.clear();
        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            scanned_rows.push(i);
            let row = &cost[i * n..(i + 1) * n];
            let ui = u[i];
            let mut lowest = f64::INFINITY;
            let mut index = 0;
            for (it, &j) in remaining[..left].iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                let s = shortest[j];
                if s < lowest || (s == lowest && row4col[j] == FREE) {
                    lowest = s;
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining[index];
            scanned_cols.push(j);
            left -= 1;
            remaining[index] = remaining[left];
            if row4col[j] == FREE {
                break j;
            }
            i = row4col[j];
        };

        u[cur] += min_val;
        for &r in &scanned_rows[1..] {
            u[r] += min_val - shortest[col4row[r]];
        }
        for &c in &scanned_cols {
            v[c] -= min_val - shortest[c];
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    let total = total_cost(cost, n, &col4row);
    (col4row, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = rng_from_seed(5);
        for n in 1..=6 {
            let perms = permutations(n);
            for _ in 0..30 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
                let (_, got) = solve(&cost, n);
                let best = perms
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                assert!((got - best).abs() < 1e-9, "n={n}: {got} vs {best}");
            }
        }
    }

    #[test]
    fn agrees_with_plain_augmenting_paths() {
        let mut rng = rng_from_seed(7);
        for n in [1, 2, 7, 40, 150] {
            for _ in 0..5 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
                let (pa, a) = solve(&cost, n);
                let (_, b) = solve_augmenting(&cost, n);
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "n={n}: {a} vs {b}");
                assert!((total_cost(&cost, n, &pa) - a).abs() < 1e-12);
            }
        }
        // Integer costs produce many ties.
        for n in [5, 30, 100] {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..4) as f64).collect();
            let (_, a) = solve(&cost, n);
            let (_, b) = solve_augmenting(&cost, n);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn returns_a_permutation() {
        let mut rng = rng_from_seed(6);
        let n = 50;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let (perm, _) = solve(&cost, n);
        assert_eq!(perm.len(), n);
        let mut seen = vec![false; n];
        for &j in &perm {
            assert!(!seen[j]);
            seen[j] = true;
        }
    }
}

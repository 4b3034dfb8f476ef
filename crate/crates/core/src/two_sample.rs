//! Two-sample distances between point clouds and their null calibration.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{IfmError, Result};
use crate::rng::rng_from_seed;
use crate::types::PointCloud;

pub const DEFAULT_PROJECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSampleReport {
    pub energy_distance: f64,
    pub sliced_w2: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn check_pair(a: &[f64], b: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || a.is_empty() || b.is_empty() || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(IfmError::InvalidValue("two-sample inputs must be nonempty row-major clouds".into()));
    }
    Ok(())
}

/// Column-major copy, so the inner distance loop vectorizes.
fn columns(rows: &[f64], dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|k| rows.iter().skip(k).step_by(dim).copied().collect()).collect()
}

/// `sum_{i in a, j in b} |a_i - b_j|`.
fn cross_sum(a: &[f64], b_cols: &[Vec<f64>], dim: usize) -> f64 {
    let m = b_cols[0].len();
    let mut buf = vec![0.0; m];
    let mut total = 0.0;
    for row in a.chunks_exact(dim) {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (k, col) in b_cols.iter().enumerate() {
            let x = row[k];
            for (acc, &y) in buf.iter_mut().zip(col) {
                let d = x - y;
                *acc += d * d;
            }
        }
        total += buf.iter().map(|v| v.sqrt()).sum::<f64>();
    }
    total
}

/// `sum_{i < j} |z_i - z_j|` for sorted 1-D data.
fn sorted_pair_sum(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    z.iter().enumerate().map(|(i, v)| v * (2.0 * i as f64 - n + 1.0)).sum()
}

fn energy_1d(a: &[f64], b: &[f64]) -> f64 {
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sa, sb) = (sort(a), sort(b));
    let mut all = [a, b].concat();
    all.sort_by(f64::total_cmp);
    let (ta, tb) = (sorted_pair_sum(&sa), sorted_pair_sum(&sb));
    let cross = sorted_pair_sum(&all) - ta - tb;
    let (n, m) = (a.len() as f64, b.len() as f64);
    (2.0 * cross / (n * m) - 2.0 * ta / (n * n) - 2.0 * tb / (m * m)).max(0.0)
}

/// Energy distance V-statistic
/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` on row-major data.
pub fn energy_distance_rows(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    check_pair(a, b, dim)?;
    if dim == 1 {
        return Ok(energy_1d(a, b));
    }
    let (n, m) = ((a.len() / dim) as f64, (b.len() / dim) as f64);
    let (ca, cb) = (columns(a, dim), columns(b, dim));
    let ab = cross_sum(a, &cb, dim);
    let aa = cross_sum(a, &ca, dim);
    let bb = cross_sum(b, &cb, dim);
    Ok((2.0 * ab / (n * m) - aa / (n * n) - bb / (m * m)).max(0.0))
}

pub fn energy_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(IfmError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    energy_distance_rows(a.as_slice(), b.as_slice(), a.dim())
}

/// Empirical quantile function at probability `p`, by linear interpolation
/// between order statistics placed at `(i + 0.5) / n`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Squared 2-Wasserstein distance between two 1-D samples.
pub fn wasserstein2_sq_1d(a: &[f64], b: &[f64]) -> f64 {
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sa, sb) = (sort(a), sort(b));
    if sa.len() == sb.len() {
        return sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / sa.len() as f64;
    }
    let k = sa.len().max(sb.len());
    (0..k)
        .map(|i| {
            let p = (i as f64 + 0.5) / k as f64;
            let d = quantile(&sa, p) - quantile(&sb, p);
            d * d
        })
        .sum::<f64>()
        / k as f64
}

/// Sliced 2-Wasserstein distance over `projections` uniform random directions.
pub fn sliced_w2<R: Rng + ?Sized>(a: &PointCloud, b: &PointCloud, projections: usize, rng: &mut R) -> Result<f64> {
    let dim = a.dim();
    if b.dim() != dim {
        return Err(IfmError::DimensionMismatch { expected: dim, got: b.dim() });
    }
    if projections == 0 {
        return Err(IfmError::InvalidValue("projections must be >= 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|c| *c /= n);
        let project = |c: &PointCloud| -> Vec<f64> {
            c.rows().map(|r| r.iter().zip(&dir).map(|(x, d)| x * d).sum()).collect()
        };
        total += wasserstein2_sq_1d(&project(a), &project(b));
    }
    Ok((total / projections as f64).sqrt())
}

pub fn two_sample_distance(a: &PointCloud, b: &PointCloud, seed: u64) -> Result<TwoSampleReport> {
    let energy_distance = energy_distance(a, b)?;
    let sliced_w2 = sliced_w2(a, b, DEFAULT_PROJECTIONS, &mut rng_from_seed(seed))?;
    Ok(TwoSampleReport { energy_distance, sliced_w2, n_a: a.len(), n_b: b.len() })
}

/// Same-distribution reference for the energy distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullCalibration {
    /// Sorted energy distances of the random splits.
    pub statistics: Vec<f64>,
    pub quantile: f64,
    pub threshold: f64,
}

/// Splits `pool` at random into disjoint halves of `n` rows, `repetitions`
/// times, and records the energy distance of each split. The threshold is
/// the nearest-rank `quantile` of those values.
pub fn calibrate_null<R: Rng + ?Sized>(
    pool: &PointCloud,
    n: usize,
    repetitions: usize,
    quantile: f64,
    rng: &mut R,
) -> Result<NullCalibration> {
    if n == 0 || 2 * n > pool.len() {
        return Err(IfmError::InvalidValue(format!(
            "null calibration needs 2 x {n} rows, pool has {}",
            pool.len()
        )));
    }
    if repetitions == 0 || !(0.0..=1.0).contains(&quantile) {
        return Err(IfmError::InvalidValue("repetitions must be >= 1 and quantile in [0, 1]".into()));
    }
    let dim = pool.dim();
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut statistics = Vec::with_capacity(repetitions);
    let gather = |ids: &[usize]| -> Vec<f64> { ids.iter().flat_map(|&i| pool.row(i).iter().copied()).collect() };
    for _ in 0..repetitions {
        idx.shuffle(rng);
        let a = gather(&idx[..n]);
        let b = gather(&idx[n..2 * n]);
        statistics.push(energy_distance_rows(&a, &b, dim)?);
    }
    statistics.sort_by(f64::total_cmp);
    let rank = ((quantile * repetitions as f64).ceil() as usize).clamp(1, repetitions);
    let threshold = statistics[rank - 1];
    Ok(NullCalibration { statistics, quantile, threshold })
}

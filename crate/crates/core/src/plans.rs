//! Transport-plan sampling: independent coupling and minibatch OT.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::assignment;
use crate::error::{IfmError, Result};
use crate::types::{PairBatch, PlateGeometry, PointCloud};

pub const DEFAULT_ASSIGNMENT_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanKind {
    /// Product coupling: rows paired in the order they were drawn.
    Independent,
    /// Rows re-paired by the exact squared-Euclidean assignment.
    MinibatchOt,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Independent => "independent",
            PlanKind::MinibatchOt => "minibatch-ot",
        }
    }
}

impl std::str::FromStr for PlanKind {
    type Err = IfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" | "ind" => Ok(PlanKind::Independent),
            "minibatch-ot" | "minibatch_ot" | "mb" | "ot" => Ok(PlanKind::MinibatchOt),
            other => Err(IfmError::InvalidValue(format!("unknown plan `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub kind: PlanKind,
    /// Largest batch solved exactly by [`PlanKind::MinibatchOt`].
    pub assignment_cap: usize,
}

impl Plan {
    pub fn new(kind: PlanKind) -> Self {
        Self { kind, assignment_cap: DEFAULT_ASSIGNMENT_CAP }
    }
}

impl From<PlanKind> for Plan {
    fn from(kind: PlanKind) -> Self {
        Plan::new(kind)
    }
}

/// `sum_i |x_i - y_i|^2` over aligned rows.
pub fn pairing_cost(quarks: &[f64], antiquarks: &[f64]) -> f64 {
    quarks.iter().zip(antiquarks).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn squared_distances(xs: &[f64], ys: &[f64], dim: usize) -> Vec<f64> {
    let n = xs.len() / dim;
    let mut cost = Vec::with_capacity(n * n);
    for x in xs.chunks_exact(dim) {
        for y in ys.chunks_exact(dim) {
            cost.push(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    cost
}

/// Re-orders `antiquarks` so that row `i` is the optimal partner of quark `i`.
fn assign(quarks: &[f64], antiquarks: Vec<f64>, dim: usize) -> Vec<f64> {
    let n = quarks.len() / dim;
    let cost = squared_distances(quarks, &antiquarks, dim);
    let (perm, _) = assignment::solve(&cost, n);
    let mut out = Vec::with_capacity(antiquarks.len());
    for j in perm {
        out.extend_from_slice(&antiquarks[j * dim..(j + 1) * dim]);
    }
    out
}

fn check_clouds(source: &PointCloud, target: &PointCloud, geometry: &PlateGeometry) -> Result<()> {
    for c in [source, target] {
        if c.dim() != geometry.data_dim() {
            return Err(IfmError::DimensionMismatch { expected: geometry.data_dim(), got: c.dim() });
        }
    }
    Ok(())
}

/// Draws `batch` pairs from the plan.
///
/// Rows are drawn uniformly with replacement from each cloud; for
/// [`PlanKind::MinibatchOt`] the drawn antiquarks are then re-paired by the
/// permutation minimising the total squared distance.
pub fn sample_pairs<R: Rng + ?Sized>(
    source: &PointCloud,
    target: &PointCloud,
    geometry: PlateGeometry,
    batch: usize,
    plan: Plan,
    rng: &mut R,
) -> Result<PairBatch> {
    check_clouds(source, target, &geometry)?;
    if batch == 0 {
        return Err(IfmError::InvalidValue("batch size must be >= 1".into()));
    }
    if plan.kind == PlanKind::MinibatchOt && batch > plan.assignment_cap {
        return Err(IfmError::AssignmentCap { batch, cap: plan.assignment_cap });
    }
    let dim = geometry.data_dim();
    let mut quarks = Vec::with_capacity(batch * dim);
    let mut antiquarks = Vec::with_capacity(batch * dim);
    for _ in 0..batch {
        quarks.extend_from_slice(source.row(rng.random_range(0..source.len())));
    }
    for _ in 0..batch {
        antiquarks.extend_from_slice(target.row(rng.random_range(0..target.len())));
    }
    if plan.kind == PlanKind::MinibatchOt {
        antiquarks = assign(&quarks, antiquarks, dim);
    }
    PairBatch::new(quarks, antiquarks, geometry)
}

/// Pairs whole datasets: both clouds are shuffled (without replacement),
/// cut into chunks of `chunk` rows and each chunk is paired under the plan.
/// Uses `min(|source|, |target|)` rows of each.
pub fn pair_dataset<R: Rng + ?Sized>(
    source: &PointCloud,
    target: &PointCloud,
    geometry: PlateGeometry,
    chunk: usize,
    plan: Plan,
    rng: &mut R,
) -> Result<PairBatch> {
    check_clouds(source, target, &geometry)?;
    if chunk == 0 {
        return Err(IfmError::InvalidValue("chunk size must be >= 1".into()));
    }
    if plan.kind == PlanKind::MinibatchOt && chunk > plan.assignment_cap {
        return Err(IfmError::AssignmentCap { batch: chunk, cap: plan.assignment_cap });
    }
    let dim = geometry.data_dim();
    let n = source.len().min(target.len());
    let mut si: Vec<usize> = (0..source.len()).collect();
    let mut ti: Vec<usize> = (0..target.len()).collect();
    si.shuffle(rng);
    ti.shuffle(rng);
    let mut quarks = Vec::with_capacity(n * dim);
    let mut antiquarks = Vec::with_capacity(n * dim);
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let q: Vec<f64> = si[start..end].iter().flat_map(|&i| source.row(i).iter().copied()).collect();
        let mut a: Vec<f64> = ti[start..end].iter().flat_map(|&i| target.row(i).iter().copied()).collect();
        if plan.kind == PlanKind::MinibatchOt {
            a = assign(&q, a, dim);
        }
        quarks.extend(q);
        antiquarks.extend(a);
    }
    PairBatch::new(quarks, antiquarks, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::types::Plate;

    fn cloud(rows: &[f64], plate: Plate) -> PointCloud {
        PointCloud::new(1, rows.to_vec(), plate).unwrap()
    }

    #[test]
    fn two_point_example_pairs_nearest() {
        let q = [0.0, 10.0];
        let a = assign(&q, vec![9.0, 1.0], 1);
        assert_eq!(a, vec![1.0, 9.0]);
        assert_eq!(pairing_cost(&q, &a), 2.0);
        assert_eq!(pairing_cost(&q, &[9.0, 1.0]), 162.0);
    }

    #[test]
    fn single_row_batch_is_trivial() {
        let g = PlateGeometry::new(1, 1.0).unwrap();
        let s = cloud(&[3.0], Plate::Source);
        let t = cloud(&[-2.0], Plate::Target);
        let b = sample_pairs(&s, &t, g, 1, Plan::new(PlanKind::MinibatchOt), &mut rng_from_seed(0)).unwrap();
        assert_eq!(b.quark(0), &[3.0]);
        assert_eq!(b.antiquark(0), &[-2.0]);
    }

    #[test]
    fn cap_is_enforced() {
        let g = PlateGeometry::new(1, 1.0).unwrap();
        let s = cloud(&[0.0], Plate::Source);
        let plan = Plan { kind: PlanKind::MinibatchOt, assignment_cap: 4 };
        let e = sample_pairs(&s, &s, g, 5, plan, &mut rng_from_seed(0)).unwrap_err();
        assert_eq!(e, IfmError::AssignmentCap { batch: 5, cap: 4 });
        assert!(sample_pairs(&s, &s, g, 5, Plan::new(PlanKind::Independent), &mut rng_from_seed(0)).is_ok());
    }

    #[test]
    fn same_seed_same_batch() {
        let g = PlateGeometry::new(1, 1.0).unwrap();
        let s = cloud(&[0.0, 1.0, 2.0, 3.0], Plate::Source);
        let t = cloud(&[5.0, 6.0, 7.0], Plate::Target);
        for kind in [PlanKind::Independent, PlanKind::MinibatchOt] {
            let a = sample_pairs(&s, &t, g, 16, kind.into(), &mut rng_from_seed(3)).unwrap();
            let b = sample_pairs(&s, &t, g, 16, kind.into(), &mut rng_from_seed(3)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dataset_pairing_uses_every_row_once() {
        let g = PlateGeometry::new(1, 1.0).unwrap();
        let s = cloud(&(0..10).map(f64::from).collect::<Vec<_>>(), Plate::Source);
        let t = cloud(&(0..12).map(|i| f64::from(i) + 0.5).collect::<Vec<_>>(), Plate::Target);
        let b = pair_dataset(&s, &t, g, 4, PlanKind::MinibatchOt.into(), &mut rng_from_seed(1)).unwrap();
        assert_eq!(b.len(), 10);
        let mut q: Vec<f64> = b.quarks().to_vec();
        q.sort_by(f64::total_cmp);
        assert_eq!(q, (0..10).map(f64::from).collect::<Vec<_>>());
    }
}

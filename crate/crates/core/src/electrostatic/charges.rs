use std::f64::consts::PI;

use crate::error::{IfmError, Result};
use crate::types::{ExtendedPoint, FieldVector, Plate, PlateGeometry, PointCloud};

/// Surface area `S_{n-1} = 2 pi^{n/2} / Gamma(n/2)` of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / libm::tgamma(h)
}

/// Field at `at` of a unit point charge of sign `sign` at `source`, in
/// `total_dim` dimensions: `sign r / (S_{n-1} |r|^n)`.
pub fn coulomb_kernel(at: &ExtendedPoint, source: &ExtendedPoint, sign: f64, total_dim: usize) -> Result<FieldVector> {
    if at.dim() + 1 != total_dim || source.dim() + 1 != total_dim {
        return Err(IfmError::DimensionMismatch { expected: total_dim, got: at.dim() + 1 });
    }
    if sign.abs() != 1.0 {
        return Err(IfmError::InvalidValue(format!("charge sign must be +1 or -1, got {sign}")));
    }
    let r: Vec<f64> = at.to_extended().iter().zip(source.to_extended()).map(|(a, s)| a - s).collect();
    let r2: f64 = r.iter().map(|c| c * c).sum();
    if r2 == 0.0 {
        return Err(IfmError::CoincidentCharge);
    }
    let scale = sign / (sphere_area(total_dim) * r2.powf(total_dim as f64 / 2.0));
    FieldVector::new(r.iter().map(|c| c * scale).collect())
}

/// Charges on one plate; every element carries an equal share of the plate's
/// unit total charge.
#[derive(Debug, Clone, PartialEq)]
pub enum Charges {
    /// Point charges at the rows of a `count x D` row-major buffer.
    Points { dim: usize, rows: Vec<f64> },
    /// Uniformly charged intervals `[lo, hi]` (only for `D = 1`).
    Segments(Vec<[f64; 2]>),
}

impl Charges {
    pub fn len(&self) -> usize {
        match self {
            Charges::Points { dim, rows } => rows.len() / dim,
            Charges::Segments(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.is_empty() {
            return Err(IfmError::InvalidValue("each plate needs at least one charge".into()));
        }
        match self {
            Charges::Points { dim: d, rows } => {
                if *d != dim {
                    return Err(IfmError::DimensionMismatch { expected: dim, got: *d });
                }
                if rows.iter().any(|v| !v.is_finite()) {
                    return Err(IfmError::InvalidValue("non-finite charge position".into()));
                }
            }
            Charges::Segments(s) => {
                if dim != 1 {
                    return Err(IfmError::Unsupported("segment charges need D = 1".into()));
                }
                if s.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                    return Err(IfmError::InvalidValue("segments need finite lo < hi".into()));
                }
            }
        }
        Ok(())
    }

    /// Adds this plate's field at offset `dz` above the plate to `out`.
    /// Returns `false` when `x` sits on a charge.
    fn accumulate(&self, x: &[f64], dz: f64, sign: f64, out: &mut [f64]) -> bool {
        let q = sign / self.len() as f64;
        match self {
            Charges::Points { dim, rows } => {
                let n = dim + 1;
                let c = q / sphere_area(n);
                let half = n as f64 / 2.0;
                for row in rows.chunks_exact(*dim) {
                    let mut r2 = dz * dz;
                    for (xi, ri) in x.iter().zip(row) {
                        r2 += (xi - ri) * (xi - ri);
                    }
                    if r2 == 0.0 {
                        return false;
                    }
                    let s = c / r2.powf(half);
                    for (o, (xi, ri)) in out.iter_mut().zip(x.iter().zip(row)) {
                        *o += s * (xi - ri);
                    }
                    out[*dim] += s * dz;
                }
            }
            Charges::Segments(segs) => {
                let (ex, ez) = segment_sum(segs, x[0], dz, q);
                if !(ex.is_finite() && ez.is_finite()) {
                    return false;
                }
                out[0] += ex;
                out[1] += ez;
            }
        }
        true
    }
}

/// Field of uniformly charged segments on the line `dz = 0`, each holding
/// charge `q`. With `w = x + i dz`, one segment `[a, b]` contributes
/// `E_x + i E_z = conj(lambda / (2 pi) Log((w - a) / (w - b)))`.
fn segment_sum(segs: &[[f64; 2]], x: f64, dz: f64, q: f64) -> (f64, f64) {
    let (mut ex, mut ez) = (0.0, 0.0);
    let dz2 = dz * dz;
    for &[a, b] in segs {
        let lambda = q / (b - a);
        let (u1, u2) = (x - a, x - b);
        let (n1, n2) = (u1 * u1 + dz2, u2 * u2 + dz2);
        ex += lambda * (n1 / n2).ln();
        ez -= lambda * (dz * (a - b)).atan2(u1 * u2 + dz2);
    }
    (ex / (4.0 * PI), ez / (2.0 * PI))
}

/// Positive unit charge on `z = 0` and negative unit charge on `z = L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSystem {
    geometry: PlateGeometry,
    positives: Charges,
    negatives: Charges,
}

impl ChargeSystem {
    pub fn new(geometry: PlateGeometry, positives: Charges, negatives: Charges) -> Result<Self> {
        positives.validate(geometry.data_dim())?;
        negatives.validate(geometry.data_dim())?;
        Ok(Self { geometry, positives, negatives })
    }

    /// Point charges at the rows of two clouds.
    pub fn points(positive: &PointCloud, negative: &PointCloud, gap: f64) -> Result<Self> {
        let dim = positive.dim();
        if negative.dim() != dim {
            return Err(IfmError::DimensionMismatch { expected: dim, got: negative.dim() });
        }
        Self::new(
            PlateGeometry::new(dim, gap)?,
            Charges::Points { dim, rows: positive.as_slice().to_vec() },
            Charges::Points { dim, rows: negative.as_slice().to_vec() },
        )
    }

    /// `D = 1` system of uniformly charged segments.
    pub fn segments(gap: f64, positives: Vec<[f64; 2]>, negatives: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(PlateGeometry::new(1, gap)?, Charges::Segments(positives), Charges::Segments(negatives))
    }

    /// `D = 1` system whose plates carry piecewise-uniform densities built
    /// from samples: each plate is cut at `count` equal-mass empirical
    /// quantiles, from the smallest to the largest sample.
    pub fn quantile_segments(source: &[f64], target: &[f64], count: usize, gap: f64) -> Result<Self> {
        let cut = |samples: &[f64]| -> Result<Vec<[f64; 2]>> {
            if count == 0 || samples.len() < 2 {
                return Err(IfmError::InvalidValue("quantile segments need count >= 1 and two samples".into()));
            }
            let mut s = samples.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len() - 1;
            let at = |p: f64| {
                let pos = p * n as f64;
                let lo = (pos.floor() as usize).min(n);
                let hi = (lo + 1).min(n);
                s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
            };
            let edges: Vec<f64> = (0..=count).map(|i| at(i as f64 / count as f64)).collect();
            Ok(edges.windows(2).map(|w| [w[0], w[1]]).collect())
        };
        Self::segments(gap, cut(source)?, cut(target)?)
    }

    pub fn geometry(&self) -> &PlateGeometry {
        &self.geometry
    }

    pub fn positives(&self) -> &Charges {
        &self.positives
    }

    pub fn negatives(&self) -> &Charges {
        &self.negatives
    }

    pub fn plate(&self, plate: Plate) -> &Charges {
        match plate {
            Plate::Source => &self.positives,
            Plate::Target => &self.negatives,
        }
    }

    /// Field at `(x, z)` written to `out`; `false` on a charge.
    pub fn field_into(&self, x: &[f64], z: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|c| *c = 0.0);
        self.positives.accumulate(x, z, 1.0, out) && self.negatives.accumulate(x, z - self.geometry.gap(), -1.0, out)
    }

    /// Surface charge density of a segment plate at `x` (zero off the
    /// segments; summed where segments overlap).
    pub fn density(&self, plate: Plate, x: f64) -> Result<f64> {
        match self.plate(plate) {
            Charges::Segments(segs) => {
                let q = 1.0 / segs.len() as f64;
                Ok(segs.iter().filter(|[a, b]| (*a..=*b).contains(&x)).map(|[a, b]| q / (b - a)).sum())
            }
            Charges::Points { .. } => Err(IfmError::Unsupported("point charges have no finite density".into())),
        }
    }

    /// Quantile function of a segment plate's charge distribution: `u` in
    /// `[0, 1)` picks segment `floor(u K)` and a uniform position inside it.
    pub fn quantile(&self, plate: Plate, u: f64) -> Result<f64> {
        match self.plate(plate) {
            Charges::Segments(segs) => {
                let k = segs.len() as f64;
                let pos = (u.clamp(0.0, 1.0) * k).min(k - 1e-12);
                let [a, b] = segs[pos as usize];
                Ok(a + pos.fract() * (b - a))
            }
            Charges::Points { .. } => Err(IfmError::Unsupported("quantiles need segment charges".into())),
        }
    }

    /// Index of the segment containing `x`, if any.
    pub fn segment_of(&self, plate: Plate, x: f64) -> Option<usize> {
        match self.plate(plate) {
            Charges::Segments(segs) => segs.iter().position(|[a, b]| (*a..=*b).contains(&x)),
            Charges::Points { .. } => None,
        }
    }
}

/// Capacitor field: mean Coulomb field of the positive charges plus that of
/// the negative ones. Pairing plays no role.
pub fn capacitor_field(at: &ExtendedPoint, system: &ChargeSystem) -> Result<FieldVector> {
    let dim = system.geometry.data_dim();
    if at.dim() != dim {
        return Err(IfmError::DimensionMismatch { expected: dim, got: at.dim() });
    }
    let mut out = vec![0.0; dim + 1];
    if !system.field_into(at.x(), at.z(), &mut out) {
        return Err(IfmError::CoincidentCharge);
    }
    FieldVector::new(out)
}

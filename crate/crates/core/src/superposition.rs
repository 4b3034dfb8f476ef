//! Monte-Carlo superposition of pair fields over an empirical plan.
//!
//! [`superpose_field`] is the plain mean of [`pair_field`] values. Training
//! and sampling only need the field *direction*, and the mean can underflow
//! to zero far from every string where `sigma(z)` is small; [`StringKernel`]
//! therefore also offers a rescaled evaluation that divides out the largest
//! Gaussian weight before summing. Any factor common to all pairs cancels
//! under normalization, so both give the same direction.
//!
//! [`pair_field`]: crate::string_field::pair_field

use crate::error::{IfmError, Result};
use crate::string_field::{cap_slope, string_width};
use crate::types::{ExtendedPoint, FieldVector, PairBatch, PlateGeometry, StringParams};

/// Below this norm a field is treated as "no field here".
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Result of [`normalize_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub v: FieldVector,
    pub degenerate: bool,
}

pub fn normalize_field(v: &FieldVector) -> Normalized {
    let n = v.norm();
    if n > DEGENERATE_NORM {
        Normalized { v: FieldVector::from_raw(v.as_slice().iter().map(|c| c / n).collect()), degenerate: false }
    } else {
        Normalized { v: FieldVector::zeros(v.as_slice().len()), degenerate: true }
    }
}

/// Pair data laid out for repeated field evaluation.
///
/// For a pair with shift `a = x_qbar - x_q` and axis `e = (a, L) / |(a, L)|`,
/// the pair field at `(x, z)` equals
/// `w sigma^-D (e + s(z) (rho, 0))` with `rho = x - x_q - a z / L`,
/// `w = exp(-|rho|^2 / 2 sigma^2)` and `s(z) = tan(alpha) / |rho|`, because
/// `(cos a e + sin a e_perp) / cos a = e + tan a e_perp`.
#[derive(Debug, Clone)]
pub struct StringKernel {
    geometry: PlateGeometry,
    params: StringParams,
    quarks: Vec<f64>,
    shifts: Vec<f64>,
    axes: Vec<f64>,
}

impl StringKernel {
    pub fn new(batch: &PairBatch, params: StringParams) -> Self {
        let geometry = *batch.geometry();
        let (dim, l) = (geometry.data_dim(), geometry.gap());
        let mut shifts = Vec::with_capacity(batch.len() * dim);
        let mut axes = Vec::with_capacity(batch.len() * (dim + 1));
        for (q, a) in batch.pairs() {
            let start = axes.len();
            for (qi, ai) in q.iter().zip(a) {
                shifts.push(ai - qi);
                axes.push(ai - qi);
            }
            axes.push(l);
            let n = axes[start..].iter().map(|c| c * c).sum::<f64>().sqrt();
            axes[start..].iter_mut().for_each(|c| *c /= n);
        }
        Self { geometry, params, quarks: batch.quarks().to_vec(), shifts, axes }
    }

    pub fn geometry(&self) -> &PlateGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &StringParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.shifts.len() / self.geometry.data_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Squared axis offsets `|rho_i|^2`, written into `out`.
    fn offsets(&self, x: &[f64], z: f64, out: &mut Vec<f64>) {
        let dim = self.geometry.data_dim();
        let t = z / self.geometry.gap();
        out.clear();
        for (q, a) in self.quarks.chunks_exact(dim).zip(self.shifts.chunks_exact(dim)) {
            let mut r2 = 0.0;
            for i in 0..dim {
                let r = x[i] - q[i] - a[i] * t;
                r2 += r * r;
            }
            out.push(r2);
        }
    }

    /// `sum_i w_i scale_i (e_i + s rho_i)` with `w_i = exp(-(r2_i / 2 sigma^2) + shift)`.
    fn accumulate(&self, x: &[f64], z: f64, sigma: f64, shift: f64, r2: &[f64], out: &mut [f64]) {
        let dim = self.geometry.data_dim();
        let t = z / self.geometry.gap();
        let slope = cap_slope(z, &self.params, &self.geometry);
        let inv = 1.0 / (2.0 * sigma * sigma);
        out.iter_mut().for_each(|c| *c = 0.0);
        for (i, &r) in r2.iter().enumerate() {
            let arg = shift - r * inv;
            // exp underflows to zero below this.
            if arg < -745.2 {
                continue;
            }
            let w = arg.exp();
            let q = &self.quarks[i * dim..(i + 1) * dim];
            let a = &self.shifts[i * dim..(i + 1) * dim];
            let e = &self.axes[i * (dim + 1)..(i + 1) * (dim + 1)];
            for j in 0..dim {
                let rho = x[j] - q[j] - a[j] * t;
                out[j] += w * (e[j] + slope * rho);
            }
            out[dim] += w * e[dim];
        }
    }

    /// Mean pair field at `(x, z)`.
    pub fn mean_field(&self, x: &[f64], z: f64, include_sigma_power: bool) -> Vec<f64> {
        let mut r2 = Vec::with_capacity(self.len());
        let mut out = vec![0.0; self.geometry.extended_dim()];
        self.mean_field_into(x, z, include_sigma_power, &mut r2, &mut out);
        out
    }

    fn mean_field_into(&self, x: &[f64], z: f64, include_sigma_power: bool, r2: &mut Vec<f64>, out: &mut [f64]) {
        let sigma = string_width(z, &self.params, &self.geometry);
        if sigma == 0.0 {
            out.iter_mut().for_each(|c| *c = 0.0);
            return;
        }
        self.offsets(x, z, r2);
        self.accumulate(x, z, sigma, 0.0, r2, out);
        let mut scale = 1.0 / self.len() as f64;
        if include_sigma_power {
            scale *= sigma.powi(-(self.geometry.data_dim() as i32));
        }
        out.iter_mut().for_each(|c| *c *= scale);
    }

    /// Field direction at `(x, z)`, robust to Gaussian underflow.
    ///
    /// Returns `None` when the field vanishes (outside the plates, or an
    /// exact cancellation).
    pub fn direction(&self, x: &[f64], z: f64) -> Option<Vec<f64>> {
        let mut r2 = Vec::with_capacity(self.len());
        let mut out = vec![0.0; self.geometry.extended_dim()];
        self.direction_into(x, z, &mut r2, &mut out).then_some(out)
    }

    /// Buffer-reusing form of [`direction`](Self::direction); returns `false`
    /// (and zeroes `out`) for a degenerate field.
    pub fn direction_into(&self, x: &[f64], z: f64, r2: &mut Vec<f64>, out: &mut [f64]) -> bool {
        let sigma = string_width(z, &self.params, &self.geometry);
        if sigma == 0.0 {
            out.iter_mut().for_each(|c| *c = 0.0);
            return false;
        }
        self.offsets(x, z, r2);
        let inv = 1.0 / (2.0 * sigma * sigma);
        let min_r2 = r2.iter().copied().fold(f64::INFINITY, f64::min);
        self.accumulate(x, z, sigma, min_r2 * inv, r2, out);
        let n = out.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            out.iter_mut().for_each(|c| *c = 0.0);
            return false;
        }
        out.iter_mut().for_each(|c| *c /= n);
        true
    }
}

impl StringKernel {
    /// Limit of the field direction at a plate, where `sigma` vanishes.
    ///
    /// At `z = 0` a point that coincides with one or more quarks leaves
    /// along the mean of their string axes (and symmetrically for
    /// antiquarks at `z = L`). Anywhere else on a plate there is no field
    /// line and `false` is returned.
    pub fn plate_direction_into(&self, x: &[f64], z: f64, out: &mut [f64]) -> bool {
        let dim = self.geometry.data_dim();
        let l = self.geometry.gap();
        out.iter_mut().for_each(|c| *c = 0.0);
        let end = if z == 0.0 {
            0.0
        } else if z == l {
            1.0
        } else {
            return false;
        };
        let mut hits = 0usize;
        for (i, (q, a)) in self.quarks.chunks_exact(dim).zip(self.shifts.chunks_exact(dim)).enumerate() {
            if (0..dim).all(|j| x[j] == q[j] + end * a[j]) {
                hits += 1;
                out.iter_mut().zip(&self.axes[i * (dim + 1)..(i + 1) * (dim + 1)]).for_each(|(o, e)| *o += e);
            }
        }
        let n = out.iter().map(|c| c * c).sum::<f64>().sqrt();
        if hits == 0 || !(n > 0.0) {
            out.iter_mut().for_each(|c| *c = 0.0);
            return false;
        }
        out.iter_mut().for_each(|c| *c /= n);
        true
    }
}

impl StringKernel {
    /// Field directions at many points that share the height `z`.
    ///
    /// `xs` holds the points row-major (`D` columns) and `out` receives
    /// `D + 1` columns per point. Plate heights use
    /// [`plate_direction_into`](Self::plate_direction_into). Agrees with
    /// [`direction_into`](Self::direction_into) to rounding; the pair loop
    /// runs four lanes wide.
    pub fn directions_at(&self, z: f64, xs: &[f64], out: &mut [f64], valid: &mut [bool]) {
        use rayon::prelude::*;
        use wide::f64x4;
        let dim = self.geometry.data_dim();
        let d1 = dim + 1;
        let sigma = string_width(z, &self.params, &self.geometry);
        if sigma == 0.0 {
            for ((x, o), ok) in xs.chunks_exact(dim).zip(out.chunks_exact_mut(d1)).zip(valid.iter_mut()) {
                *ok = self.plate_direction_into(x, z, o);
            }
            return;
        }
        let t = z / self.geometry.gap();
        let slope = cap_slope(z, &self.params, &self.geometry);
        let inv = 1.0 / (2.0 * sigma * sigma);
        let m = self.len();
        let lanes = m.div_ceil(4);
        // Padding strings sit so far away that their weight underflows to 0.
        const FAR: f64 = 1e100;
        let pack = |f: &dyn Fn(usize) -> f64, pad: f64| -> Vec<f64x4> {
            (0..lanes)
                .map(|c| f64x4::new(std::array::from_fn(|l| if 4 * c + l < m { f(4 * c + l) } else { pad })))
                .collect()
        };
        let centres: Vec<Vec<f64x4>> =
            (0..dim).map(|j| pack(&|i| self.quarks[i * dim + j] + self.shifts[i * dim + j] * t, FAR)).collect();
        let axes: Vec<Vec<f64x4>> = (0..d1).map(|j| pack(&|i| self.axes[i * d1 + j], 0.0)).collect();
        const ROWS: usize = 32;
        out.par_chunks_mut(ROWS * d1).zip(xs.par_chunks(ROWS * dim)).zip(valid.par_chunks_mut(ROWS)).for_each_init(
            || vec![f64x4::ZERO; lanes],
            |r2, ((o, x), ok)| {
                for ((o, x), ok) in o.chunks_exact_mut(d1).zip(x.chunks_exact(dim)).zip(ok.iter_mut()) {
                    r2.iter_mut().for_each(|r| *r = f64x4::ZERO);
                    for (c, &xj) in centres.iter().zip(x) {
                        let xj = f64x4::splat(xj);
                        for (r, &cj) in r2.iter_mut().zip(c) {
                            let d = xj - cj;
                            *r += d * d;
                        }
                    }
                    let min_r2 = r2.iter().fold(f64::INFINITY, |acc, r| r.to_array().into_iter().fold(acc, f64::min));
                    let (min_v, inv_v) = (f64x4::splat(min_r2), f64x4::splat(inv));
                    let mut wsum = f64x4::ZERO;
                    let mut wc = [f64x4::ZERO; 8];
                    let mut wc_big = vec![f64x4::ZERO; if dim > 8 { dim } else { 0 }];
                    let mut acc_axes = [f64x4::ZERO; 9];
                    let mut acc_axes_big = vec![f64x4::ZERO; if d1 > 9 { d1 } else { 0 }];
                    let wc = if dim > 8 { &mut wc_big[..] } else { &mut wc[..dim] };
                    let acc = if d1 > 9 { &mut acc_axes_big[..] } else { &mut acc_axes[..d1] };
                    for (i, &r) in r2.iter().enumerate() {
                        let w = ((min_v - r) * inv_v).exp();
                        wsum += w;
                        for (a, c) in wc.iter_mut().zip(&centres) {
                            *a += w * c[i];
                        }
                        for (a, e) in acc.iter_mut().zip(&axes) {
                            *a += w * e[i];
                        }
                    }
                    let wsum = wsum.reduce_add();
                    for (j, oj) in o.iter_mut().enumerate() {
                        *oj = acc[j].reduce_add();
                    }
                    // sum_i w_i slope (x - c_i) = slope (x sum_i w_i - sum_i w_i c_i)
                    for j in 0..dim {
                        o[j] += slope * (x[j] * wsum - wc[j].reduce_add());
                    }
                    let n = o.iter().map(|c| c * c).sum::<f64>().sqrt();
                    *ok = n > 0.0 && n.is_finite();
                    if *ok {
                        o.iter_mut().for_each(|c| *c /= n);
                    } else {
                        o.iter_mut().for_each(|c| *c = 0.0);
                    }
                }
            },
        );
    }
}

/// Mean of the pair fields of every pair in `batch` at `at`.
pub fn superpose_field(
    at: &ExtendedPoint,
    batch: &PairBatch,
    params: &StringParams,
    include_sigma_power: bool,
) -> Result<FieldVector> {
    let dim = batch.dim();
    if at.dim() != dim {
        return Err(IfmError::DimensionMismatch { expected: dim, got: at.dim() });
    }
    let kernel = StringKernel::new(batch, *params);
    let v = kernel.mean_field(at.x(), at.z(), include_sigma_power);
    FieldVector::new(v)
}

//! Closed-form field of a single unit quark/antiquark pair.
//!
//! The string runs from the quark on `z = 0` to the antiquark on `z = L`.
//! Its cross-section is a Gaussian of width `sigma(z)` that opens as
//! `sin(k z)` over the lower cap `[0, d]`, stays at `sigma0` through the
//! straight middle `[d, L - d]` and closes as `sin(k (L - z))` over the
//! upper cap. Field lines follow the level sets `x_perp / sigma(z) = const`,
//! so their inclination `alpha` against the string axis satisfies
//! `tan(alpha) = d x_perp / dz`. That slope is positive (lines open up) in
//! the lower cap and negative (lines close onto the antiquark) in the upper
//! cap; [`field_angle`] returns it signed.
//!
//! A pair whose endpoints are not vertically aligned is handled by shearing
//! the symmetric field parallel to the plates, never by rotating it, so the
//! field stays identically zero outside `0 <= z <= L`.

use std::f64::consts::FRAC_PI_2;

use crate::error::{IfmError, Result};
use crate::types::{ExtendedPoint, FieldVector, PlateGeometry, StringParams};

/// Angle returned at `z = 0` (and, negated, at `z = L`) for off-axis points,
/// where the cap slope diverges.
pub const ENDPOINT_ANGLE: f64 = FRAC_PI_2 - 1e-9;

const SIN_FLOOR: f64 = 1e-300;

/// Effective string width `sigma(z)`; exactly zero outside `[0, L]`.
pub fn string_width(z: f64, params: &StringParams, geometry: &PlateGeometry) -> f64 {
    let l = geometry.gap();
    if !(0.0..=l).contains(&z) {
        return 0.0;
    }
    let (s0, d, k) = (params.sigma0(), params.depth(), params.k());
    if z <= d {
        s0 * (k * z).sin()
    } else if z >= l - d {
        s0 * (k * (l - z)).sin()
    } else {
        s0
    }
}

fn cot(x: f64) -> f64 {
    x.cos() / x.sin().max(SIN_FLOOR)
}

/// `tan(alpha) / x_perp` at height `z`: `k cot(kz)` in the lower cap,
/// `-k cot(k (L - z))` in the upper cap, zero in the middle and outside.
pub(crate) fn cap_slope(z: f64, params: &StringParams, geometry: &PlateGeometry) -> f64 {
    let l = geometry.gap();
    let (d, k) = (params.depth(), params.k());
    if !(0.0..=l).contains(&z) {
        0.0
    } else if z < d {
        k * cot(k * z)
    } else if z > l - d {
        -k * cot(k * (l - z))
    } else {
        0.0
    }
}

/// Signed inclination of the field against the string axis.
///
/// Lies in `(-pi/2, pi/2)`: positive in the lower cap, negative in the upper
/// cap, exactly zero on the axis and throughout the straight middle.
pub fn field_angle(x_perp: f64, z: f64, params: &StringParams, geometry: &PlateGeometry) -> Result<f64> {
    let l = geometry.gap();
    if !(0.0..=l).contains(&z) {
        return Err(IfmError::OutOfPlates { z, gap: l });
    }
    if !(x_perp >= 0.0) {
        return Err(IfmError::InvalidValue(format!("x_perp must be >= 0, got {x_perp}")));
    }
    if x_perp == 0.0 {
        return Ok(0.0);
    }
    let (d, k) = (params.depth(), params.k());
    if z == 0.0 {
        return Ok(ENDPOINT_ANGLE);
    }
    if z == l {
        return Ok(-ENDPOINT_ANGLE);
    }
    Ok(if z < d {
        (k * x_perp * cot(k * z)).atan()
    } else if z > l - d {
        -(k * x_perp * cot(k * (l - z))).atan()
    } else {
        0.0
    })
}

/// Field strength `exp(-x_perp^2 / 2 sigma^2) [sigma^-D] / cos(alpha)`.
///
/// Zero wherever `sigma(z) = 0`, which covers both plates' outer half-spaces.
pub fn field_magnitude(
    x_perp: f64,
    z: f64,
    params: &StringParams,
    geometry: &PlateGeometry,
    include_sigma_power: bool,
) -> f64 {
    let sigma = string_width(z, params, geometry);
    if sigma == 0.0 {
        return 0.0;
    }
    let alpha = match field_angle(x_perp, z, params, geometry) {
        Ok(a) => a,
        Err(_) => return 0.0,
    };
    let gauss = (-x_perp * x_perp / (2.0 * sigma * sigma)).exp();
    let norm = if include_sigma_power { sigma.powi(-(geometry.data_dim() as i32)) } else { 1.0 };
    gauss * norm / alpha.cos()
}

/// Geometry of a pair field evaluation, as produced by the interaction
/// field algorithm before the final product is formed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFieldDecomposition {
    /// Distance from the (sheared) string axis, measured parallel to the plates.
    pub x_perp: f64,
    /// Unit offset direction from the axis, or zero on the axis.
    pub e_perp: Vec<f64>,
    /// Unit vector from quark to antiquark.
    pub e_axis: Vec<f64>,
    pub alpha: f64,
    pub magnitude: f64,
}

impl PairFieldDecomposition {
    pub fn field(&self) -> FieldVector {
        let (c, s) = (self.alpha.cos(), self.alpha.sin());
        let v = self
            .e_axis
            .iter()
            .zip(&self.e_perp)
            .map(|(a, p)| self.magnitude * (c * a + s * p))
            .collect();
        FieldVector::from_raw(v)
    }
}

fn check_dims(point: &ExtendedPoint, quark: &[f64], antiquark: &[f64], geometry: &PlateGeometry) -> Result<()> {
    let dim = geometry.data_dim();
    for got in [point.dim(), quark.len(), antiquark.len()] {
        if got != dim {
            return Err(IfmError::DimensionMismatch { expected: dim, got });
        }
    }
    Ok(())
}

/// Runs the interaction-field algorithm up to (but excluding) the final
/// product `E n`.
pub fn decompose_pair(
    point: &ExtendedPoint,
    quark: &[f64],
    antiquark: &[f64],
    params: &StringParams,
    geometry: &PlateGeometry,
    include_sigma_power: bool,
) -> Result<PairFieldDecomposition> {
    check_dims(point, quark, antiquark, geometry)?;
    let l = geometry.gap();
    let z = point.z();

    // r = x_qbar - x_q in extended space; its z-component is L.
    let mut e_axis: Vec<f64> = antiquark.iter().zip(quark).map(|(a, q)| a - q).collect();
    e_axis.push(l);
    let r_norm = e_axis.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(r_norm > 0.0) {
        return Err(IfmError::DegeneratePair);
    }
    e_axis.iter_mut().for_each(|c| *c /= r_norm);

    // rho = x - x_q + (x_q - x_qbar) z / L. Its z-component z - 0 + (0 - L) z / L
    // vanishes identically, so it is set to zero rather than computed.
    let t = z / l;
    let mut e_perp: Vec<f64> = point
        .x()
        .iter()
        .zip(quark.iter().zip(antiquark))
        .map(|(x, (q, a))| x - q + (q - a) * t)
        .collect();
    e_perp.push(0.0);
    let x_perp = e_perp.iter().map(|c| c * c).sum::<f64>().sqrt();
    if x_perp > 0.0 {
        e_perp.iter_mut().for_each(|c| *c /= x_perp);
    }

    let (alpha, magnitude) = if geometry.contains_z(z) {
        (
            field_angle(x_perp, z, params, geometry)?,
            field_magnitude(x_perp, z, params, geometry, include_sigma_power),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(PairFieldDecomposition { x_perp, e_perp, e_axis, alpha, magnitude })
}

/// Field of one unit pair at `point`; the exact zero vector outside `[0, L]`.
pub fn pair_field(
    point: &ExtendedPoint,
    quark: &[f64],
    antiquark: &[f64],
    params: &StringParams,
    geometry: &PlateGeometry,
    include_sigma_power: bool,
) -> Result<FieldVector> {
    let dec = decompose_pair(point, quark, antiquark, params, geometry, include_sigma_power)?;
    if dec.magnitude == 0.0 {
        return Ok(FieldVector::zeros(geometry.extended_dim()));
    }
    Ok(dec.field())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn toy() -> (PlateGeometry, StringParams) {
        (PlateGeometry::new(2, 6.0).unwrap(), StringParams::new(1.0, 1.5).unwrap())
    }

    fn pt(x: &[f64], z: f64) -> ExtendedPoint {
        ExtendedPoint::new(x.to_vec(), z).unwrap()
    }

    #[test]
    fn width_branches() {
        let (g, p) = toy();
        assert_eq!(string_width(0.0, &p, &g), 0.0);
        assert_eq!(string_width(p.depth(), &p, &g), 1.0);
        assert_eq!(string_width(3.0, &p, &g), 1.0);
        assert_eq!(string_width(6.1, &p, &g), 0.0);
        assert_eq!(string_width(-0.1, &p, &g), 0.0);
        assert!((string_width(0.75, &p, &g) - (PI / 4.0).sin()).abs() < 1e-15);
        // mirror symmetry of the caps
        for z in [0.1, 0.4, 1.2] {
            assert!((string_width(z, &p, &g) - string_width(6.0 - z, &p, &g)).abs() < 1e-14);
        }
    }

    #[test]
    fn angle_branches() {
        let (g, p) = toy();
        for z in [0.0, 0.3, 3.0, 5.9, 6.0] {
            assert_eq!(field_angle(0.0, z, &p, &g).unwrap(), 0.0);
        }
        assert_eq!(field_angle(2.5, 3.0, &p, &g).unwrap(), 0.0);
        let x = 1.0 / p.k();
        let a = field_angle(x, p.depth() / 2.0, &p, &g).unwrap();
        assert!((a - FRAC_PI_4).abs() < 1e-12, "{a}");
        let b = field_angle(x, 6.0 - p.depth() / 2.0, &p, &g).unwrap();
        assert!((b + FRAC_PI_4).abs() < 1e-12, "{b}");
        assert_eq!(field_angle(1.0, 0.0, &p, &g).unwrap(), ENDPOINT_ANGLE);
        assert_eq!(field_angle(1.0, 6.0, &p, &g).unwrap(), -ENDPOINT_ANGLE);
        assert!(matches!(field_angle(1.0, 6.5, &p, &g), Err(IfmError::OutOfPlates { .. })));
        assert!(field_angle(-1.0, 1.0, &p, &g).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let (g, p) = toy();
        assert_eq!(field_magnitude(0.0, 3.0, &p, &g, true), 1.0);
        let m = field_magnitude(1.0, 3.0, &p, &g, true);
        assert!((m - (-0.5f64).exp()).abs() < 1e-15);
        assert!((m - 0.60653).abs() < 1e-5);
        assert_eq!(field_magnitude(0.0, -0.3, &p, &g, true), 0.0);
        assert_eq!(field_magnitude(0.5, 0.0, &p, &g, true), 0.0);
        assert_eq!(field_magnitude(0.5, 6.0, &p, &g, true), 0.0);
    }

    #[test]
    fn magnitude_decays_radially_when_caps_are_gentle() {
        // |E| = exp(-x^2 / 2 sigma^2) sqrt(1 + (s x)^2) is monotone in x iff
        // sigma0 k cos(kz) <= 1, i.e. for every z when d >= pi sigma0 / 2.
        let g = PlateGeometry::new(2, 6.0).unwrap();
        let p = StringParams::new(1.0, 3.0).unwrap();
        for z in [0.05, 0.2, 0.9, 1.5, 3.0, 4.7, 5.8, 5.97] {
            let mut prev = f64::INFINITY;
            for i in 0..400 {
                let m = field_magnitude(i as f64 * 0.05, z, &p, &g, true);
                assert!(m <= prev * (1.0 + 1e-12), "z={z} i={i}");
                prev = m;
            }
            assert!(field_magnitude(1e3, z, &p, &g, true) == 0.0);
        }
    }

    #[test]
    fn steep_caps_break_magnitude_monotonicity_but_not_axial_component() {
        let (g, p) = toy();
        assert!(p.sigma0() * p.k() > 1.0);
        let near = field_magnitude(0.0, 0.2, &p, &g, false);
        let off = field_magnitude(0.05, 0.2, &p, &g, false);
        assert!(off > near);
        let q = [0.0, 0.0];
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let f = pair_field(&pt(&[i as f64 * 0.01, 0.0], 0.2), &q, &q, &p, &g, false).unwrap();
            assert!(f.z() <= prev);
            prev = f.z();
        }
    }

    #[test]
    fn on_axis_middle_is_unit_axial() {
        let (g, p) = toy();
        let f = pair_field(&pt(&[0.0, 0.0], 3.0), &[0.0, 0.0], &[0.0, 0.0], &p, &g, true).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shifted_axis_points_carry_pure_axial_field() {
        let (g, p) = toy();
        let a = [1.5, -0.7];
        let r = (a[0] * a[0] + a[1] * a[1] + 36.0f64).sqrt();
        for z in [0.2, 1.0, 2.9, 4.4, 5.95] {
            let x = [a[0] * z / 6.0, a[1] * z / 6.0];
            let f = pair_field(&pt(&x, z), &[0.0, 0.0], &a, &p, &g, true).unwrap();
            let s = string_width(z, &p, &g).powi(-2);
            let want = [s * a[0] / r, s * a[1] / r, s * 6.0 / r];
            for (got, w) in f.as_slice().iter().zip(want) {
                assert!((got - w).abs() <= 1e-12 * s, "z={z}: {got} vs {w}");
            }
        }
    }

    #[test]
    fn decomposition_of_symmetric_pair_is_orthogonal() {
        let (g, p) = toy();
        let d = decompose_pair(&pt(&[0.3, -0.4], 1.0), &[0.0, 0.0], &[0.0, 0.0], &p, &g, false).unwrap();
        assert!((d.x_perp - 0.5).abs() < 1e-15);
        let dot: f64 = d.e_perp.iter().zip(&d.e_axis).map(|(a, b)| a * b).sum();
        assert!(dot.abs() <= 1e-12);
        let n: f64 = d.e_axis.iter().map(|c| c * c).sum();
        assert!((n - 1.0).abs() < 1e-15);
        let on = decompose_pair(&pt(&[0.0, 0.0], 1.0), &[0.0, 0.0], &[0.0, 0.0], &p, &g, false).unwrap();
        assert_eq!(on.x_perp, 0.0);
        assert!(on.e_perp.iter().all(|&c| c == 0.0));
        assert_eq!(on.alpha, 0.0);
    }

    #[test]
    fn lines_open_in_lower_cap_and_close_in_upper_cap() {
        let (g, p) = toy();
        let q = [0.0, 0.0];
        let lo = pair_field(&pt(&[0.2, 0.0], 0.5), &q, &q, &p, &g, false).unwrap();
        let hi = pair_field(&pt(&[0.2, 0.0], 5.5), &q, &q, &p, &g, false).unwrap();
        assert!(lo.x()[0] > 0.0 && lo.z() > 0.0);
        assert!(hi.x()[0] < 0.0 && hi.z() > 0.0);
        assert!((lo.x()[0] + hi.x()[0]).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (g, p) = toy();
        let e = pair_field(&pt(&[0.0], 1.0), &[0.0, 0.0], &[0.0, 0.0], &p, &g, false).unwrap_err();
        assert_eq!(e, IfmError::DimensionMismatch { expected: 2, got: 1 });
    }

    proptest! {
        #[test]
        fn caged_outside_plates(
            q in prop::array::uniform2(-5.0f64..5.0),
            a in prop::array::uniform2(-5.0f64..5.0),
            x in prop::array::uniform2(-8.0f64..8.0),
            dz in 1e-9f64..10.0,
            above in any::<bool>(),
        ) {
            let (g, p) = toy();
            let z = if above { 6.0 + dz } else { -dz };
            let f = pair_field(&pt(&x, z), &q, &a, &p, &g, true).unwrap();
            prop_assert!(f.is_zero());
        }

        #[test]
        fn middle_region_is_axial(
            q in prop::array::uniform2(-5.0f64..5.0),
            a in prop::array::uniform2(-5.0f64..5.0),
            x in prop::array::uniform2(-3.0f64..3.0),
            z in 1.5f64..4.5,
        ) {
            let (g, p) = toy();
            let d = decompose_pair(&pt(&x, z), &q, &a, &p, &g, false).unwrap();
            prop_assert_eq!(d.alpha, 0.0);
            let f = d.field();
            let m = f.norm();
            let along: f64 = f.as_slice().iter().zip(&d.e_axis).map(|(u, v)| u * v).sum();
            let cross = f.as_slice().iter().zip(&d.e_axis).map(|(u, v)| (u - along * v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(cross <= 1e-12 * m);
        }

        #[test]
        fn magnitude_is_centrosymmetric(
            r in 0.0f64..3.0,
            th1 in 0.0f64..6.283,
            th2 in 0.0f64..6.283,
            z in 0.01f64..5.99,
        ) {
            let (g, p) = toy();
            let q = [0.4, -1.0];
            let m1 = pair_field(&pt(&[q[0] + r * th1.cos(), q[1] + r * th1.sin()], z), &q, &q, &p, &g, true).unwrap().norm();
            let m2 = pair_field(&pt(&[q[0] + r * th2.cos(), q[1] + r * th2.sin()], z), &q, &q, &p, &g, true).unwrap().norm();
            prop_assert!((m1 - m2).abs() <= 1e-12 * m1.max(m2).max(1e-300));
        }
    }
}

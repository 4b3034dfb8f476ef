//! Electrostatic capacitor baseline.
//!
//! The source distribution is a positive charge of total mass one on the
//! plate `z = 0`, the target a negative unit charge on `z = L`. The field is
//! the Coulomb superposition of both plates, normalized so that a unit
//! charge emits unit flux. The stochastic transfer map that moves samples
//! along its field lines lives in [`transfer`].

mod charges;
pub mod transfer;

pub use charges::{capacitor_field, coulomb_kernel, sphere_area, ChargeSystem, Charges};
pub use transfer::{
    stochastic_transfer, Branch, Crossing, FieldLine, Integrator, LineEnd, StochasticMap, TransferConfig,
    TransferMode, TransferOutcome,
};

/// Outcome of [`mu_probability_checked`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuOutcome {
    pub mu: f64,
    /// Set when both `E_z^+ < 0` and `E_z^- > 0`, which a field obeying the
    /// plate jump condition never produces. The first branch wins.
    pub conflicting: bool,
}

/// Probability of leaving a source point along the forward line, given the
/// one-sided limits of `E_z` above (`plus`) and below (`minus`) the plate.
///
/// With no flux on either side (`plus = minus = 0`) both branches are equally
/// likely.
pub fn mu_probability_checked(plus: f64, minus: f64) -> MuOutcome {
    let conflicting = plus < 0.0 && minus > 0.0;
    let mu = if plus < 0.0 {
        0.0
    } else if minus > 0.0 {
        1.0
    } else if plus == 0.0 && minus == 0.0 {
        0.5
    } else {
        plus / (plus + minus.abs())
    };
    MuOutcome { mu, conflicting }
}

pub fn mu_probability(plus: f64, minus: f64) -> f64 {
    mu_probability_checked(plus, minus).mu
}

/// Probability of stopping where a line crosses a plate, given `E_z` just
/// before and just after the crossing.
pub fn nu_probability(before: f64, after: f64) -> crate::Result<f64> {
    if before == 0.0 || !before.is_finite() || !after.is_finite() {
        return Err(crate::IfmError::InvalidValue(format!(
            "stop probability needs a finite nonzero E_z before the crossing, got {before}"
        )));
    }
    Ok(if before * after < 0.0 {
        1.0
    } else if after.abs() >= before.abs() {
        0.0
    } else {
        (before.abs() - after.abs()) / before.abs()
    })
}

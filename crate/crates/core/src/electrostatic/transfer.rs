//! Stochastic transfer along electrostatic field lines (`D = 1`).
//!
//! A source point leaves its plate either forward (above the plate) or
//! backward (below it), choosing forward with probability `mu`. Its field
//! line is then followed; every time it crosses a plate it stops with
//! probability `nu`, otherwise it carries on along the field on the far side.
//!
//! The line from a given start and branch is deterministic, so
//! [`trace_line`] records all of its crossings with their stop
//! probabilities once, and the random stop decisions are drawn afterwards.
//! [`StochasticMap`] caches the lines of a fixed set of start points so
//! that many traces can be drawn cheaply.

use rand::Rng;
use rayon::prelude::*;

use super::charges::ChargeSystem;
use super::{mu_probability, nu_probability};
use crate::error::{IfmError, Result};
use crate::rng::rng_from_seed;
use crate::types::Plate;

/// Below this field magnitude a line is considered stalled.
pub const STALL_MAGNITUDE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Leaves the source plate towards `z > 0`.
    Forward,
    /// Leaves the source plate towards `z < 0`.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// `mu` branch choice and `nu` stopping at every crossing.
    Full,
    /// Always forward, always stop at the first crossing.
    ForwardOnly,
}

/// Line integrator. Lengths are fractions of the plate gap `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta with a fixed arc-length step.
    Rk4 { step: f64 },
    /// Dormand-Prince 5(4) with absolute error `tolerance` per step. The
    /// step cap grows with the distance from the plates, where lines are
    /// long and smooth.
    Adaptive { tolerance: f64, max_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub integrator: Integrator,
    /// Crossings recorded before a line is abandoned.
    pub max_crossings: usize,
    /// Arc length (in units of `L`) after which a line is abandoned.
    pub path_budget: f64,
    /// Offset (in units of `L`) at which one-sided limits of `E_z` are taken.
    pub limit_offset: f64,
    pub mode: TransferMode,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Rk4 { step: 1e-3 },
            max_crossings: 16,
            path_budget: 1e5,
            limit_offset: 1e-4,
            mode: TransferMode::Full,
        }
    }
}

impl TransferConfig {
    /// Adaptive integration with settings sized for bulk experiments.
    pub fn adaptive() -> Self {
        Self { integrator: Integrator::Adaptive { tolerance: 1e-8, max_step: 0.02 }, ..Self::default() }
    }

    pub fn with_mode(mut self, mode: TransferMode) -> Self {
        self.mode = mode;
        self
    }
}

/// A plate crossing along a field line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub x: f64,
    pub plate: Plate,
    /// Direction of travel through the plate.
    pub upward: bool,
    pub before: f64,
    pub after: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineEnd {
    /// The last crossing stops the line with certainty.
    Terminated,
    MaxCrossings,
    PathBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldLine {
    pub start: f64,
    pub branch: Branch,
    pub crossings: Vec<Crossing>,
    pub end: LineEnd,
    pub path_length: f64,
    pub steps: usize,
}

/// Where a sampled trace stopped, and what it went through on the way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOutcome {
    pub x: f64,
    pub plate: Plate,
    pub branch: Branch,
    /// Plate crossings up to and including the stopping one.
    pub crossings: usize,
    /// Passes through the target plate into `z > L` that did not stop.
    pub escapes: usize,
}

fn require_d1(system: &ChargeSystem) -> Result<()> {
    if system.geometry().data_dim() != 1 {
        return Err(IfmError::Unsupported("stochastic transfer is implemented for D = 1 only".into()));
    }
    Ok(())
}

fn field(system: &ChargeSystem, x: f64, z: f64) -> Option<[f64; 2]> {
    let mut out = [0.0; 2];
    system.field_into(&[x], z, &mut out).then_some(out)
}

/// One-sided limits `(E_z^+, E_z^-)` at `x` on the plate at height `plane`.
pub fn one_sided_limits(system: &ChargeSystem, x: f64, plane: f64, config: &TransferConfig) -> Result<(f64, f64)> {
    let eps = config.limit_offset * system.geometry().gap();
    let up = field(system, x, plane + eps).ok_or(IfmError::CoincidentCharge)?;
    let down = field(system, x, plane - eps).ok_or(IfmError::CoincidentCharge)?;
    Ok((up[1], down[1]))
}

/// Forward-branch probability at a source point.
pub fn branch_probability(system: &ChargeSystem, x: f64, config: &TransferConfig) -> Result<f64> {
    if config.mode == TransferMode::ForwardOnly {
        return Ok(1.0);
    }
    let (plus, minus) = one_sided_limits(system, x, 0.0, config)?;
    Ok(mu_probability(plus, minus))
}

struct Tracer<'a> {
    system: &'a ChargeSystem,
    steps: usize,
}

impl Tracer<'_> {
    /// Unit field direction.
    fn dir(&mut self, p: [f64; 2]) -> Result<[f64; 2]> {
        let e = field(self.system, p[0], p[1]).ok_or(IfmError::CoincidentCharge)?;
        let n = e[0].hypot(e[1]);
        if !(n >= STALL_MAGNITUDE) || !n.is_finite() {
            return Err(IfmError::StalledLine { step: self.steps, magnitude: n });
        }
        Ok([e[0] / n, e[1] / n])
    }

    fn rk4(&mut self, p: [f64; 2], k1: [f64; 2], h: f64) -> Result<[f64; 2]> {
        let at = |k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
        let k2 = self.dir(at(k1, h / 2.0))?;
        let k3 = self.dir(at(k2, h / 2.0))?;
        let k4 = self.dir(at(k3, h))?;
        Ok([
            p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ])
    }

    /// Dormand-Prince step: fifth-order solution, error estimate, and the
    /// direction at the new point.
    fn dopri(&mut self, p: [f64; 2], k1: [f64; 2], h: f64) -> Result<([f64; 2], f64, [f64; 2])> {
        const A: [[f64; 6]; 6] = [
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let mut k = [[0.0; 2]; 7];
        k[0] = k1;
        let mut y = p;
        for s in 0..6 {
            y = p;
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                y[0] += h * A[s][j] * kj[0];
                y[1] += h * A[s][j] * kj[1];
            }
            k[s + 1] = self.dir(y)?;
        }
        let mut err = [0.0; 2];
        for (kj, e) in k.iter().zip(E) {
            err[0] += h * e * kj[0];
            err[1] += h * e * kj[1];
        }
        Ok((y, err[0].abs().max(err[1].abs()), k[6]))
    }
}

/// Distance to the nearest plate in the direction of travel `kz`, if the
/// line is heading towards one.
fn plate_ahead(z: f64, kz: f64, gap: f64) -> Option<(Plate, f64, f64)> {
    let mut best: Option<(Plate, f64, f64)> = None;
    for (plate, plane) in [(Plate::Source, 0.0), (Plate::Target, gap)] {
        let dist = (plane - z) * kz.signum();
        if kz != 0.0 && dist > 0.0 && best.is_none_or(|b| dist < b.2) {
            best = Some((plate, plane, dist));
        }
    }
    best
}

/// Follows the field line leaving `start` on the source plate along
/// `branch`, recording every plate crossing until one stops the line for
/// certain, or the crossing or path budget runs out.
///
/// Steps never reach across a plate: near one, the step is capped at half
/// the remaining distance, so every Runge-Kutta stage sees the field of the
/// near side only, and the line lands once it is within `1e-10 L`. This also
/// lets lines converge onto point charges, where the direction field flips.
pub fn trace_line(system: &ChargeSystem, start: f64, branch: Branch, config: &TransferConfig) -> Result<FieldLine> {
    require_d1(system)?;
    let gap = system.geometry().gap();
    let eps = config.limit_offset * gap;
    let budget = config.path_budget * gap;
    let land = 1e-10 * gap;
    let max_crossings = match config.mode {
        TransferMode::Full => config.max_crossings.max(1),
        TransferMode::ForwardOnly => 1,
    };
    let adaptive = matches!(config.integrator, Integrator::Adaptive { .. });
    let (mut h, tol, cap) = match config.integrator {
        Integrator::Rk4 { step } => (step * gap, 0.0, step * gap),
        Integrator::Adaptive { tolerance, max_step } => (max_step * gap * 0.01, tolerance * gap, max_step * gap),
    };
    let mut t = Tracer { system, steps: 0 };
    let mut p = [start, if branch == Branch::Forward { eps } else { -eps }];
    let mut k1 = t.dir(p)?;
    let mut crossings = Vec::new();
    let mut length = 0.0;
    let finish = |crossings, end, length, steps| FieldLine { start, branch, crossings, end, path_length: length, steps };

    loop {
        if length > budget {
            return Ok(finish(crossings, LineEnd::PathBudget, length, t.steps));
        }
        let ahead = plate_ahead(p[1], k1[1], gap);
        if let Some((plate, plane, dist)) = ahead.filter(|a| a.2 <= land) {
            let x = p[0] + (plane - p[1]) * k1[0] / k1[1];
            let upward = k1[1] > 0.0;
            let s = if upward { 1.0 } else { -1.0 };
            let before = field(system, x, plane - s * eps).ok_or(IfmError::CoincidentCharge)?[1];
            let after = field(system, x, plane + s * eps).ok_or(IfmError::CoincidentCharge)?[1];
            // Off the charged segments the field is continuous across the
            // plate and no line can end there; the one-sided samples only
            // differ by the z-gradient over 2 eps.
            let uncharged = matches!(system.density(plate, x), Ok(rho) if rho == 0.0);
            let nu = if uncharged { 0.0 } else { nu_probability(before, after)? };
            crossings.push(Crossing { x, plate, upward, before, after, nu });
            length += dist;
            if nu >= 1.0 || config.mode == TransferMode::ForwardOnly {
                return Ok(finish(crossings, LineEnd::Terminated, length, t.steps));
            }
            if crossings.len() >= max_crossings {
                return Ok(finish(crossings, LineEnd::MaxCrossings, length, t.steps));
            }
            p = [x, plane + s * eps];
            length += eps;
            k1 = t.dir(p)?;
            h = h.min(cap * 0.01);
            continue;
        }
        let mut limit = cap;
        if adaptive {
            limit *= 1.0 + p[0].hypot(p[1] - gap / 2.0) / gap;
        }
        if let Some((_, _, dist)) = ahead {
            limit = limit.min(0.5 * dist / k1[1].abs().max(0.05));
        }
        // Distance to a plate behind the line also bounds stage excursions.
        let behind = [p[1].abs(), (p[1] - gap).abs()].into_iter().fold(f64::INFINITY, f64::min);
        limit = limit.min(0.5 * behind.max(land) / 0.05);
        t.steps += 1;
        if adaptive {
            let step = h.min(limit);
            let (y, err, k7) = t.dopri(p, k1, step)?;
            if err > tol && step > land {
                h = step * (0.9 * (tol / err).powf(0.2)).max(0.2);
                continue;
            }
            let grow = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h = step * grow;
            length += step;
            p = y;
            k1 = k7;
        } else {
            let step = h.min(limit);
            p = t.rk4(p, k1, step)?;
            length += step;
            k1 = t.dir(p)?;
        }
    }
}

/// Draws the stop decisions along a traced line.
pub fn sample_stop<R: Rng + ?Sized>(line: &FieldLine, config: &TransferConfig, rng: &mut R) -> Result<TransferOutcome> {
    let mut escapes = 0;
    for (i, c) in line.crossings.iter().enumerate() {
        let nu = if config.mode == TransferMode::ForwardOnly { 1.0 } else { c.nu };
        let u: f64 = rng.random();
        if u < nu {
            return Ok(TransferOutcome { x: c.x, plate: c.plate, branch: line.branch, crossings: i + 1, escapes });
        }
        if c.plate == Plate::Target && c.upward {
            escapes += 1;
        }
    }
    Err(match line.end {
        LineEnd::PathBudget => IfmError::PathBudget { budget: config.path_budget },
        _ => IfmError::TooManyCrossings { max: config.max_crossings },
    })
}

/// One draw of the stochastic map from `source_x`, seeded by `seed`.
pub fn stochastic_transfer(source_x: &[f64], system: &ChargeSystem, seed: u64, config: &TransferConfig) -> Result<TransferOutcome> {
    require_d1(system)?;
    if source_x.len() != 1 {
        return Err(IfmError::DimensionMismatch { expected: 1, got: source_x.len() });
    }
    let mut rng = rng_from_seed(seed);
    let mu = branch_probability(system, source_x[0], config)?;
    let u: f64 = rng.random();
    let branch = if u < mu { Branch::Forward } else { Branch::Backward };
    let line = trace_line(system, source_x[0], branch, config)?;
    sample_stop(&line, config, &mut rng)
}

/// Field lines of a fixed set of start points, traced once and sampled many
/// times. Each draw picks a start uniformly, then a branch and stops.
#[derive(Debug, Clone)]
pub struct StochasticMap {
    config: TransferConfig,
    starts: Vec<f64>,
    mus: Vec<f64>,
    lines: Vec<[Option<Result<FieldLine>>; 2]>,
}

impl StochasticMap {
    pub fn new(system: &ChargeSystem, starts: Vec<f64>, config: TransferConfig) -> Result<Self> {
        require_d1(system)?;
        if starts.is_empty() {
            return Err(IfmError::InvalidValue("stochastic map needs at least one start".into()));
        }
        let traced: Vec<(f64, [Option<Result<FieldLine>>; 2])> = starts
            .par_iter()
            .map(|&x| {
                let mu = match branch_probability(system, x, &config) {
                    Ok(mu) => mu,
                    Err(e) => return (1.0, [Some(Err(e)), None]),
                };
                let fwd = (mu > 0.0).then(|| trace_line(system, x, Branch::Forward, &config));
                let bwd = (mu < 1.0).then(|| trace_line(system, x, Branch::Backward, &config));
                (mu, [fwd, bwd])
            })
            .collect();
        let (mus, lines) = traced.into_iter().unzip();
        Ok(Self { config, starts, mus, lines })
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    /// Forward probabilities per start.
    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    pub fn lines(&self) -> impl Iterator<Item = &Result<FieldLine>> {
        self.lines.iter().flat_map(|l| l.iter().flatten())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TransferOutcome> {
        let i = rng.random_range(0..self.starts.len());
        let u: f64 = rng.random();
        let slot = usize::from(u >= self.mus[i]);
        match &self.lines[i][slot] {
            Some(Ok(line)) => sample_stop(line, &self.config, rng),
            Some(Err(e)) => Err(e.clone()),
            None => unreachable!("branch with zero probability was drawn"),
        }
    }
}

//! Fixed-step Euler transfer with `z` as the integration variable.
//!
//! A point moves by `dx = (v_x / v_z) dz`, so only the direction of the
//! field matters and every trace reaches `z = L` after exactly `steps`
//! steps.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::error::{IfmError, Result};
use crate::superposition::StringKernel;
use crate::trainer::{field_targets, FieldModel};
use crate::types::{ExtendedPoint, FieldVector, PairBatch, Plate, PlateGeometry, PointCloud, StringParams};

/// Smallest `|v_z|` used as a divisor; smaller values are clamped to it.
pub const VZ_FLOOR: f64 = 1e-8;
/// Clamped steps tolerated per trace before it is declared degenerate.
pub const CLAMP_BUDGET: usize = 10;
/// Default number of Euler steps.
pub const DEFAULT_STEPS: usize = 100;

/// Field evaluated at rows `(x, z)`, written row-major into the output.
pub type FieldFn = dyn Fn(ArrayView2<f64>, &mut Array2<f64>) + Send + Sync;

#[derive(Clone)]
pub enum FieldSource {
    /// Trained regressor, with EMA weights when `use_ema` is set.
    Model { model: FieldModel, use_ema: bool },
    /// Exact normalized superposed field of a fixed pairing.
    Oracle { kernel: StringKernel },
    /// Any other field on extended space.
    Custom { geometry: PlateGeometry, field: Arc<FieldFn> },
}

impl std::fmt::Debug for FieldSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldSource::Model { use_ema, .. } => write!(f, "Model {{ use_ema: {use_ema} }}"),
            FieldSource::Oracle { kernel } => write!(f, "Oracle {{ pairs: {} }}", kernel.len()),
            FieldSource::Custom { geometry, .. } => write!(f, "Custom {{ {geometry:?} }}"),
        }
    }
}

impl FieldSource {
    pub fn model(model: FieldModel, use_ema: bool) -> Self {
        FieldSource::Model { model, use_ema }
    }

    pub fn oracle(batch: &PairBatch, params: StringParams) -> Result<Self> {
        if batch.is_empty() {
            return Err(IfmError::InvalidValue("oracle needs at least one pair".into()));
        }
        crate::types::validate_geometry(batch.geometry(), &params)?;
        Ok(FieldSource::Oracle { kernel: StringKernel::new(batch, params) })
    }

    pub fn data_dim(&self) -> usize {
        match self {
            FieldSource::Model { model, .. } => model.data_dim(),
            FieldSource::Oracle { kernel } => kernel.geometry().data_dim(),
            FieldSource::Custom { geometry, .. } => geometry.data_dim(),
        }
    }

    /// Field at every row of `points`.
    pub fn evaluate(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        let d1 = self.data_dim() + 1;
        if points.ncols() != d1 {
            return Err(IfmError::DimensionMismatch { expected: d1, got: points.ncols() });
        }
        match self {
            FieldSource::Model { model, use_ema } => model.predict(points, *use_ema),
            FieldSource::Oracle { kernel } => {
                let n = points.nrows();
                let mut out = Array2::zeros(points.raw_dim());
                let mut valid = vec![false; n];
                let z = if n > 0 { points[[0, d1 - 1]] } else { 0.0 };
                if points.column(d1 - 1).iter().all(|&zi| zi == z) {
                    let xs: Vec<f64> = points.rows().into_iter().flat_map(|r| r.iter().take(d1 - 1).copied().collect::<Vec<_>>()).collect();
                    kernel.directions_at(z, &xs, out.as_slice_mut().expect("standard layout"), &mut valid);
                } else {
                    field_targets(kernel, points, &mut out, &mut valid);
                    for (i, ok) in valid.iter().enumerate() {
                        if !ok {
                            let p = points.row(i).to_vec();
                            let mut row = out.row_mut(i);
                            kernel.plate_direction_into(&p[..d1 - 1], p[d1 - 1], row.as_slice_mut().expect("row-major"));
                        }
                    }
                }
                Ok(out)
            }
            FieldSource::Custom { field, .. } => {
                let mut out = Array2::zeros(points.raw_dim());
                field(points, &mut out);
                Ok(out)
            }
        }
    }
}

/// One Euler step `x += (v_x / v_z) dtau`, `z += dtau`.
pub fn euler_step(point: &ExtendedPoint, field: &FieldVector, dtau: f64) -> Result<ExtendedPoint> {
    let v = field.as_slice();
    let d = point.dim();
    if v.len() != d + 1 {
        return Err(IfmError::DimensionMismatch { expected: d + 1, got: v.len() });
    }
    if !(dtau > 0.0) {
        return Err(IfmError::InvalidValue(format!("dtau must be > 0, got {dtau}")));
    }
    if !(v[d].abs() >= VZ_FLOOR) {
        return Err(IfmError::InvalidValue(format!("|v_z| = {:e} is below the floor {VZ_FLOOR:e}", v[d].abs())));
    }
    let mut x = point.x().to_vec();
    advance(&mut x, v, dtau);
    ExtendedPoint::new(x, point.z() + dtau)
}

/// Moves `x` along `v`, clamping `v_z`; returns whether a clamp was needed.
fn advance(x: &mut [f64], v: &[f64], dtau: f64) -> bool {
    let d = x.len();
    let vz = v[d];
    let (vz, clamped) = if vz.abs() < VZ_FLOOR || vz.is_nan() {
        (if vz < 0.0 { -VZ_FLOOR } else { VZ_FLOOR }, true)
    } else {
        (vz, false)
    };
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi += vi / vz * dtau;
    }
    clamped
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    Completed,
    /// The clamp budget ran out at this step; the trace stopped there.
    DegenerateField(usize),
    /// Completed, but this many steps needed a clamped denominator.
    ClampedDenominator(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    /// Positions at `z = 0, dtau, ..., L` (fewer for a stopped trace).
    pub steps: Vec<ExtendedPoint>,
    pub status: TraceStatus,
}

/// The `z` grid `{0, L/steps, ..., L}`, ending exactly at `L`.
pub fn z_grid(gap: f64, steps: usize) -> Vec<f64> {
    let dtau = gap / steps as f64;
    (0..=steps).map(|i| if i == steps { gap } else { i as f64 * dtau }).collect()
}

struct Run {
    terminal: PointCloud,
    statuses: Vec<TraceStatus>,
    traces: Option<Vec<Vec<ExtendedPoint>>>,
}

fn run(source: &PointCloud, field: &FieldSource, gap: f64, steps: usize, record: bool) -> Result<Run> {
    let d = field.data_dim();
    if source.dim() != d {
        return Err(IfmError::DimensionMismatch { expected: d, got: source.dim() });
    }
    if source.plate() != Plate::Source {
        return Err(IfmError::InvalidValue("transfer starts from a source-plate cloud".into()));
    }
    if steps == 0 {
        return Err(IfmError::InvalidValue("steps must be >= 1".into()));
    }
    let n = source.len();
    let grid = z_grid(gap, steps);
    let mut state = Array2::zeros((n, d + 1));
    for (i, row) in source.rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            state[[i, j]] = v;
        }
    }
    let mut clamps = vec![0usize; n];
    let mut stopped: Vec<Option<usize>> = vec![None; n];
    let snapshot = |state: &Array2<f64>, i: usize| {
        let r = state.row(i);
        ExtendedPoint::new(r.iter().take(d).copied().collect(), r[d]).expect("finite state")
    };
    let mut traces = record.then(|| (0..n).map(|i| vec![snapshot(&state, i)]).collect::<Vec<_>>());
    for s in 0..steps {
        let v = field.evaluate(state.view())?;
        let dtau = grid[s + 1] - grid[s];
        for i in 0..n {
            if stopped[i].is_some() {
                continue;
            }
            let vi = v.row(i);
            let mut x: Vec<f64> = state.row(i).iter().take(d).copied().collect();
            if advance(&mut x, vi.as_slice().expect("row-major"), dtau) {
                clamps[i] += 1;
                if clamps[i] > CLAMP_BUDGET {
                    stopped[i] = Some(s);
                    continue;
                }
            }
            if x.iter().any(|c| !c.is_finite()) {
                stopped[i] = Some(s);
                continue;
            }
            let mut row = state.row_mut(i);
            for (j, c) in x.into_iter().enumerate() {
                row[j] = c;
            }
            row[d] = grid[s + 1];
            if let Some(t) = traces.as_mut() {
                t[i].push(snapshot(&state, i));
            }
        }
    }
    let statuses = (0..n)
        .map(|i| match (stopped[i], clamps[i]) {
            (Some(s), _) => TraceStatus::DegenerateField(s),
            (None, 0) => TraceStatus::Completed,
            (None, c) => TraceStatus::ClampedDenominator(c),
        })
        .collect();
    let data = state.rows().into_iter().flat_map(|r| r.iter().take(d).copied().collect::<Vec<_>>()).collect();
    Ok(Run { terminal: PointCloud::new(d, data, Plate::Target)?, statuses, traces })
}

fn gap_of(field: &FieldSource, gap: Option<f64>) -> Result<f64> {
    match (field, gap) {
        (FieldSource::Oracle { kernel }, _) => Ok(kernel.geometry().gap()),
        (FieldSource::Custom { geometry, .. }, _) => Ok(geometry.gap()),
        (FieldSource::Model { .. }, Some(l)) if l > 0.0 => Ok(l),
        (FieldSource::Model { .. }, _) => Err(IfmError::InvalidGeometry("model transfer needs the plate gap L".into())),
    }
}

/// Transfers `source` to the target plate and records every trace.
///
/// `gap` is required for a model source (the checkpoint does not store
/// `L`) and ignored otherwise. Terminal rows keep the input order; a
/// trace that stopped early contributes its last position.
pub fn transfer(
    source: &PointCloud,
    field: &FieldSource,
    gap: Option<f64>,
    steps: usize,
) -> Result<(PointCloud, Vec<TraceResult>)> {
    let r = run(source, field, gap_of(field, gap)?, steps, true)?;
    let traces = r
        .traces
        .expect("recorded")
        .into_iter()
        .zip(r.statuses)
        .map(|(steps, status)| TraceResult { steps, status })
        .collect();
    Ok((r.terminal, traces))
}

/// [`transfer`] without the per-step record.
pub fn transfer_terminal(
    source: &PointCloud,
    field: &FieldSource,
    gap: Option<f64>,
    steps: usize,
) -> Result<(PointCloud, Vec<TraceStatus>)> {
    let r = run(source, field, gap_of(field, gap)?, steps, false)?;
    Ok((r.terminal, r.statuses))
}

/// Traces as CSV: `trace_id,step,x0..x{D-1},z`.
pub fn traces_to_csv(traces: &[TraceResult], seed: u64) -> String {
    let dim = traces.iter().flat_map(|t| t.steps.first()).map(|p| p.dim()).next().unwrap_or(0);
    let mut out = format!("# seed={seed}\ntrace_id,step,");
    for j in 0..dim {
        let _ = write!(out, "x{j},");
    }
    out.push_str("z\n");
    for (id, t) in traces.iter().enumerate() {
        for (s, p) in t.steps.iter().enumerate() {
            let _ = write!(out, "{id},{s}");
            for v in p.x() {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", p.z());
        }
    }
    out
}

pub fn write_traces(path: &Path, traces: &[TraceResult], seed: u64) -> Result<()> {
    std::fs::write(path, traces_to_csv(traces, seed))?;
    Ok(())
}

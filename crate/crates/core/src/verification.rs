//! Numerical checks of the field construction and of distribution transfer.
//!
//! Every check returns a typed report and can be turned into a
//! [`CheckEntry`] for the JSON verification report.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{make_gaussian, make_swiss_roll, make_two_gaussians, SwissRoll};
use crate::electrostatic::{ChargeSystem, StochasticMap, TransferConfig, TransferMode};
use crate::error::{IfmError, Result};
use crate::plans::{pair_dataset, Plan, PlanKind};
use crate::quadrature::{integrate_with_nodes, Quadrature};
use crate::rng::{rng_from_seed, SeedStreams};
use crate::sampler::{transfer_terminal, FieldSource, TraceStatus};
use crate::string_field::{field_angle, pair_field};
use crate::superposition::StringKernel;
use crate::two_sample::{calibrate_null, energy_distance, energy_distance_rows, two_sample_distance, TwoSampleReport};
use crate::types::{ExtendedPoint, PairBatch, Plate, PlateGeometry, PointCloud, StringParams};

/// Half-width, in units of `sigma0`, of the region integrated around each
/// string axis. The Gaussian tail beyond it is below 1e-14.
pub const FLUX_HALF_WIDTH: f64 = 8.0;

/// One entry of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub params: Value,
    pub measured: Value,
    pub threshold: Value,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

// ---------------------------------------------------------------- flux

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxReport {
    pub planes: Vec<f64>,
    pub flux: Vec<f64>,
    /// `(max - min) / mean` of the flux values.
    pub relative_spread: f64,
    /// Largest node count used for one plane.
    pub nodes: usize,
}

/// Flux of the superposed field (with the `sigma^-D` factor) through the
/// plane `z = z_c`, by composite Gauss-Legendre quadrature with at least
/// `min_nodes` nodes per integration axis.
///
/// `D = 1` integrates `E_z` over a window covering every string axis at
/// that height `+- 8 sigma0`. For `D = 2` a single pair is integrated
/// radially about its axis (`2 pi r E_z(r)`), several pairs over the
/// covering box.
pub fn flux_through_plane(z_c: f64, batch: &PairBatch, params: &StringParams, min_nodes: usize) -> Result<Quadrature> {
    let g = *batch.geometry();
    let l = g.gap();
    if !(z_c > 0.0 && z_c < l) {
        return Err(IfmError::OutOfPlates { z: z_c, gap: l });
    }
    let dim = g.data_dim();
    if !(1..=2).contains(&dim) {
        return Err(IfmError::Unsupported(format!("flux quadrature supports D = 1, 2 (got {dim})")));
    }
    let kernel = StringKernel::new(batch, *params);
    let ez = |x: &[f64]| kernel.mean_field(x, z_c, true)[dim];
    let t = z_c / l;
    let centres: Vec<Vec<f64>> = batch.pairs().map(|(q, a)| q.iter().zip(a).map(|(q, a)| q + (a - q) * t).collect()).collect();
    let reach = FLUX_HALF_WIDTH * params.sigma0();
    let window = |j: usize| {
        let lo = centres.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min) - reach;
        let hi = centres.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max) + reach;
        (lo, hi)
    };
    if dim == 1 {
        let (lo, hi) = window(0);
        return Ok(integrate_with_nodes(|x| ez(&[x]), lo, hi, min_nodes));
    }
    if batch.len() == 1 {
        let c = &centres[0];
        let q = integrate_with_nodes(|r| 2.0 * PI * r * ez(&[c[0] + r, c[1]]), 0.0, reach, min_nodes);
        return Ok(q);
    }
    let ((x0, x1), (y0, y1)) = (window(0), window(1));
    let mut inner_nodes = 0;
    let mut converged = true;
    let outer = integrate_with_nodes(
        |y| {
            let q = integrate_with_nodes(|x| ez(&[x, y]), x0, x1, min_nodes);
            inner_nodes = inner_nodes.max(q.nodes);
            converged &= q.converged;
            q.value
        },
        y0,
        y1,
        min_nodes,
    );
    Ok(Quadrature { value: outer.value, nodes: outer.nodes * inner_nodes, converged: outer.converged && converged })
}

pub fn flux_report(planes: &[f64], batch: &PairBatch, params: &StringParams, min_nodes: usize) -> Result<FluxReport> {
    let mut flux = Vec::with_capacity(planes.len());
    let mut nodes = 0;
    for &z in planes {
        let q = flux_through_plane(z, batch, params, min_nodes)?;
        nodes = nodes.max(q.nodes);
        flux.push(q.value);
    }
    let max = flux.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = flux.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = flux.iter().sum::<f64>() / flux.len().max(1) as f64;
    Ok(FluxReport { planes: planes.to_vec(), flux, relative_spread: (max - min) / mean, nodes })
}

/// Planes `z = step, 2 step, ...` strictly inside `(0, L)`.
pub fn interior_planes(gap: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| gap * i as f64 / (count + 1) as f64).collect()
}

// -------------------------------------------------------------- caging

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CagingReport {
    pub evaluations: usize,
    pub placements: usize,
    /// Evaluations that returned anything but the exact zero vector.
    pub nonzero: usize,
    pub pass: bool,
}

/// Evaluates single-pair fields at random points below `z = 0` or above
/// `z = L`, for random pair placements. Passes iff every value is exactly
/// zero.
pub fn check_caging(params: &StringParams, geometry: &PlateGeometry, fuzz_count: usize, seed: u64) -> Result<CagingReport> {
    crate::types::validate_geometry(geometry, params)?;
    let mut rng = rng_from_seed(seed);
    let (dim, l) = (geometry.data_dim(), geometry.gap());
    let placements = fuzz_count.clamp(1, 1000);
    let per = fuzz_count.div_ceil(placements);
    let mut nonzero = 0;
    let mut evaluations = 0;
    for _ in 0..placements {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        for _ in 0..per {
            if evaluations == fuzz_count {
                break;
            }
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-8.0..8.0)).collect();
            // Half the points hug the plates, half are far outside.
            let depth = if rng.random::<bool>() { rng.random_range(1e-12..1e-3) * l } else { rng.random_range(1e-3..2.0) * l };
            let z = if rng.random::<bool>() { -depth } else { l + depth };
            let p = ExtendedPoint::new(x, z)?;
            for flag in [false, true] {
                let v = pair_field(&p, &q, &a, params, geometry, flag)?;
                if v.as_slice().iter().any(|&c| c != 0.0) {
                    nonzero += 1;
                }
            }
            evaluations += 1;
        }
    }
    Ok(CagingReport { evaluations, placements, nonzero, pass: nonzero == 0 })
}

// -------------------------------------------------------- straightness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StraightnessReport {
    /// Largest distance, over seeds and heights in `[d, L - d]`, between a
    /// traced line and the axis-parallel line through its seed.
    pub max_deviation: f64,
    pub on_axis_deviation: f64,
    /// Same measure for a seed traced through the lower cap `[d/2, d]`.
    pub cap_deviation: f64,
    /// Largest `|alpha|` sampled in the middle region.
    pub max_middle_angle: f64,
    pub seeds: usize,
}

/// `dx/dz = v_x / v_z` for the normalized single-pair field.
fn slope(p: &[f64], z: f64, q: &[f64], a: &[f64], params: &StringParams, g: &PlateGeometry) -> Result<Vec<f64>> {
    let v = pair_field(&ExtendedPoint::new(p.to_vec(), z)?, q, a, params, g, false)?;
    let s = v.as_slice();
    let d = p.len();
    if !(s[d].abs() > 1e-300) {
        return Err(IfmError::StalledLine { step: 0, magnitude: v.norm() });
    }
    Ok(s[..d].iter().map(|c| c / s[d]).collect())
}

/// RK4 in `z` from `(x0, z0)` to `z1`; returns the path.
fn rk4_path(
    x0: &[f64],
    z0: f64,
    z1: f64,
    steps: usize,
    q: &[f64],
    a: &[f64],
    params: &StringParams,
    g: &PlateGeometry,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let h = (z1 - z0) / steps as f64;
    let mut x = x0.to_vec();
    let mut path = vec![(x.clone(), z0)];
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + s * k).collect() };
    for i in 0..steps {
        let z = z0 + i as f64 * h;
        let f = |x: &[f64], z: f64| slope(x, z, q, a, params, g).map_err(|e| match e {
            IfmError::StalledLine { magnitude, .. } => IfmError::StalledLine { step: i, magnitude },
            e => e,
        });
        let k1 = f(&x, z)?;
        let k2 = f(&axpy(&x, &k1, h / 2.0), z + h / 2.0)?;
        let k3 = f(&axpy(&x, &k2, h / 2.0), z + h / 2.0)?;
        let k4 = f(&axpy(&x, &k3, h), z + h)?;
        for j in 0..x.len() {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        path.push((x.clone(), if i + 1 == steps { z1 } else { z + h }));
    }
    Ok(path)
}

fn deviation(path: &[(Vec<f64>, f64)], q: &[f64], a: &[f64], gap: f64) -> f64 {
    let (x0, z0) = &path[0];
    path.iter()
        .map(|(x, z)| {
            x.iter()
                .enumerate()
                .map(|(j, xj)| {
                    let straight = x0[j] + (a[j] - q[j]) * (z - z0) / gap;
                    (xj - straight).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Traces single-pair lines through the middle region `[d, L - d]` with
/// RK4 and measures how far they stray from axis-parallel lines.
pub fn check_straightness(
    quark: &[f64],
    antiquark: &[f64],
    params: &StringParams,
    geometry: &PlateGeometry,
    steps: usize,
) -> Result<StraightnessReport> {
    crate::types::validate_geometry(geometry, params)?;
    let (l, d) = (geometry.gap(), params.depth());
    if !(d < l / 2.0) {
        return Err(IfmError::InvalidValue(format!("straightness needs d < L/2 (d = {d}, L = {l})")));
    }
    let dim = geometry.data_dim();
    let centre: Vec<f64> = quark.iter().zip(antiquark).map(|(q, a)| q + (a - q) * d / l).collect();
    let s0 = params.sigma0();
    let mut seeds = vec![centre.clone()];
    for r in [0.1, 0.5, 1.0, 2.0, 3.0] {
        for j in 0..dim {
            for sign in [1.0, -1.0] {
                let mut s = centre.clone();
                s[j] += sign * r * s0;
                seeds.push(s);
            }
        }
    }
    let mut max_dev: f64 = 0.0;
    let mut on_axis = 0.0;
    for (i, s) in seeds.iter().enumerate() {
        let path = rk4_path(s, d, l - d, steps, quark, antiquark, params, geometry)?;
        let dev = deviation(&path, quark, antiquark, l);
        if i == 0 {
            on_axis = dev;
        }
        max_dev = max_dev.max(dev);
    }
    let mut cap_seed = quark.iter().zip(antiquark).map(|(q, a)| q + (a - q) * 0.5 * d / l).collect::<Vec<_>>();
    cap_seed[0] += 0.5 * s0;
    let cap = rk4_path(&cap_seed, 0.5 * d, d, steps, quark, antiquark, params, geometry)?;
    let cap_deviation = deviation(&cap, quark, antiquark, l);
    let mut max_angle: f64 = 0.0;
    for i in 0..=100 {
        let z = d + (l - 2.0 * d) * i as f64 / 100.0;
        for r in [0.0, 0.3, 1.0, 4.0] {
            max_angle = max_angle.max(field_angle(r * s0, z, params, geometry)?.abs());
        }
    }
    Ok(StraightnessReport {
        max_deviation: max_dev,
        on_axis_deviation: on_axis,
        cap_deviation,
        max_middle_angle: max_angle,
        seeds: seeds.len(),
    })
}

// ---------------------------------------------------- oracle transfer

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTransferConfig {
    pub n: usize,
    pub gap: f64,
    pub sigma0: f64,
    pub depth: f64,
    pub steps: usize,
    /// Pairing chunk for the minibatch-OT plan.
    pub chunk: usize,
    pub swiss_noise: f64,
    pub null_repetitions: usize,
    pub seed: u64,
}

impl OracleTransferConfig {
    /// Gaussian to Swiss roll with `L = 6`, `d = L/2`, 1000 steps, 4096 points.
    pub fn toy() -> Self {
        Self {
            n: 4096,
            gap: 6.0,
            sigma0: 1.0,
            depth: 3.0,
            steps: 1000,
            chunk: 1024,
            swiss_noise: SWISS_NOISE,
            null_repetitions: 100,
            seed: 0,
        }
    }
}

/// Gaussian noise added to Swiss-roll samples in the toy experiments.
pub const SWISS_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub distance: TwoSampleReport,
    /// Energy distance between the untransported source and the held-out target.
    pub baseline_energy: f64,
    pub null_p99: f64,
    pub incomplete_traces: usize,
}

/// Toy clouds: training source and target, plus a held-out target pool of
/// `2 n` points, all drawn from named sub-streams of `seed`.
pub fn toy_clouds(n: usize, swiss_noise: f64, seed: u64) -> Result<(PointCloud, PointCloud, PointCloud)> {
    let s = SeedStreams::new(seed);
    let seed_of = |name: &str| s.stream(name).random::<u64>();
    let src = make_gaussian(n, 2, &[0.0, 0.0], 1.0, seed_of("data-source"), Plate::Source)?;
    let tgt = SwissRoll::default().sample(n, swiss_noise, seed_of("data-target"), Plate::Target)?;
    let held = make_swiss_roll(2 * n, swiss_noise, seed_of("data-heldout"), Plate::Target)?;
    Ok((src, tgt, held))
}

/// Energy distance of `transferred` to the first `n` held-out points, and
/// the 99th percentile of the same statistic between random halves of the
/// held-out pool.
pub fn score_transfer(
    transferred: &PointCloud,
    source: &PointCloud,
    held: &PointCloud,
    repetitions: usize,
    seed: u64,
    incomplete: usize,
) -> Result<TransferReport> {
    let n = transferred.len();
    let test = held.slice(0..n)?;
    let distance = two_sample_distance(transferred, &test, seed)?;
    let baseline_energy = energy_distance(&source.clone().with_plate(Plate::Target), &test)?;
    let null = calibrate_null(held, n, repetitions, 0.99, &mut SeedStreams::new(seed).stream("null"))?;
    Ok(TransferReport { distance, baseline_energy, null_p99: null.threshold, incomplete_traces: incomplete })
}

/// Transfers the dataset's own source points along the exact superposed
/// field of its minibatch-OT pairing.
///
/// Every line of a finite oracle starts at one of its quarks, so the
/// quarks are what gets transferred.
pub fn oracle_transfer_experiment(config: &OracleTransferConfig) -> Result<TransferReport> {
    let (src, tgt, held) = toy_clouds(config.n, config.swiss_noise, config.seed)?;
    let g = PlateGeometry::new(2, config.gap)?;
    let params = StringParams::new(config.sigma0, config.depth)?;
    let mut rng = SeedStreams::new(config.seed).stream("plan");
    let batch = pair_dataset(&src, &tgt, g, config.chunk, Plan::new(PlanKind::MinibatchOt), &mut rng)?;
    let field = FieldSource::oracle(&batch, params)?;
    let (out, statuses) = transfer_terminal(&src, &field, None, config.steps)?;
    let incomplete = statuses.iter().filter(|s| matches!(s, TraceStatus::DegenerateField(_))).count();
    score_transfer(&out, &src, &held, config.null_repetitions, config.seed, incomplete)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedTransferConfig {
    /// Training cloud size per plate.
    pub train_size: usize,
    /// Size of the transferred and the held-out evaluation clouds.
    pub eval_size: usize,
    pub gap: f64,
    pub sigma0: f64,
    pub depth: f64,
    pub batch: usize,
    pub lr: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub swiss_noise: f64,
    pub null_repetitions: usize,
    pub seed: u64,
}

impl TrainedTransferConfig {
    /// Gaussian to Swiss roll at plate distance `gap` with string depth
    /// `d = depth_fraction * gap`.
    pub fn toy(gap: f64, depth_fraction: f64, iterations: usize) -> Self {
        Self {
            train_size: 20_000,
            eval_size: 4096,
            gap,
            sigma0: 1.0,
            depth: depth_fraction * gap,
            batch: 1024,
            lr: 2e-4,
            iterations,
            warmup: (iterations / 10).min(5000),
            hidden: vec![256, 256, 256],
            steps: crate::sampler::DEFAULT_STEPS,
            swiss_noise: SWISS_NOISE,
            null_repetitions: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedTransferReport {
    pub transfer: TransferReport,
    /// Mean loss over the last 200 iterations.
    pub final_loss: f64,
    pub degenerate_targets: usize,
}

/// Trains a field model on the toy task and transfers fresh source samples
/// with its EMA weights.
pub fn trained_transfer_experiment(config: &TrainedTransferConfig) -> Result<(TrainedTransferReport, crate::trainer::FieldModel)> {
    use crate::trainer::{train, TrainConfig};
    let s = SeedStreams::new(config.seed);
    let seed_of = |name: &str| s.stream(name).random::<u64>();
    let (src, tgt, _) = toy_clouds(config.train_size, config.swiss_noise, config.seed)?;
    let held = make_swiss_roll(2 * config.eval_size, config.swiss_noise, seed_of("data-heldout"), Plate::Target)?;
    let fresh = make_gaussian(config.eval_size, 2, &[0.0, 0.0], 1.0, seed_of("data-fresh"), Plate::Source)?;
    let g = PlateGeometry::new(2, config.gap)?;
    let mut tc = TrainConfig::new(g, StringParams::new(config.sigma0, config.depth)?, config.iterations);
    tc.batch = config.batch;
    tc.lr = config.lr;
    tc.warmup = config.warmup;
    tc.hidden = config.hidden.clone();
    tc.seed = config.seed;
    let (model, history) = train(&src, &tgt, tc)?;
    let tail = &history[history.len().saturating_sub(200)..];
    let final_loss = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64;
    let degenerate_targets = history.iter().map(|r| r.degenerate_count).sum();
    let field = FieldSource::model(model.clone(), true);
    let (out, statuses) = transfer_terminal(&fresh, &field, Some(config.gap), config.steps)?;
    let incomplete = statuses.iter().filter(|s| matches!(s, TraceStatus::DegenerateField(_))).count();
    let transfer = score_transfer(&out, &fresh, &held, config.null_repetitions, config.seed, incomplete)?;
    Ok((TrainedTransferReport { transfer, final_loss, degenerate_targets }, model))
}

// -------------------------------------------------------------- EFM

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfmConfig {
    pub gap: f64,
    pub separation: f64,
    /// Equal-mass segments per plate.
    pub segments: usize,
    /// Samples used to place the segments.
    pub samples: usize,
    /// Stratified line starts.
    pub starts: usize,
    pub traces: usize,
    /// Reference draws from the target density.
    pub reference: usize,
    pub null_repetitions: usize,
    pub seed: u64,
}

impl EfmConfig {
    /// One Gaussian to two Gaussians at `+-3`, `L = 2`.
    pub fn toy() -> Self {
        Self {
            gap: 2.0,
            separation: 6.0,
            segments: 64,
            samples: 20_000,
            starts: 2000,
            traces: 100_000,
            reference: 100_000,
            null_repetitions: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfmVariant {
    /// Energy distance of target-plate landings to the reference draws.
    pub energy_distance: f64,
    pub landed_on_target: usize,
    pub landed_on_source: usize,
    pub failed: usize,
    pub escapes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfmReport {
    pub full: EfmVariant,
    pub forward_only: EfmVariant,
    pub null_p99: f64,
    pub forward_only_worse: bool,
    pub full_within_null: bool,
}

fn run_variant(system: &ChargeSystem, starts: &[f64], mode: TransferMode, cfg: &EfmConfig, reference: &[f64]) -> Result<EfmVariant> {
    let map = StochasticMap::new(system, starts.to_vec(), TransferConfig::adaptive().with_mode(mode))?;
    let mut rng = SeedStreams::new(cfg.seed).stream("traces");
    let mut landed = Vec::with_capacity(cfg.traces);
    let (mut on_source, mut failed, mut escapes) = (0, 0, 0);
    for _ in 0..cfg.traces {
        match map.sample(&mut rng) {
            Ok(o) if o.plate == Plate::Target => {
                escapes += o.escapes;
                landed.push(o.x);
            }
            Ok(o) => {
                escapes += o.escapes;
                on_source += 1;
            }
            Err(_) => failed += 1,
        }
    }
    let energy_distance = if landed.is_empty() { f64::INFINITY } else { energy_distance_rows(&landed, reference, 1)? };
    Ok(EfmVariant { energy_distance, landed_on_target: landed.len(), landed_on_source: on_source, failed, escapes })
}

/// Electrostatic transfer from one Gaussian to a two-Gaussian mixture, with
/// the full stochastic map and with forward lines only.
///
/// The plates carry piecewise-uniform densities cut at equal-mass sample
/// quantiles; the reference sample is drawn from the target plate's
/// density itself, and the null threshold comes from random halves of a
/// pool of such draws.
pub fn efm_coverage_experiment(cfg: &EfmConfig) -> Result<EfmReport> {
    let s = SeedStreams::new(cfg.seed);
    let seed_of = |name: &str| s.stream(name).random::<u64>();
    let src = make_gaussian(cfg.samples, 1, &[0.0], 1.0, seed_of("data-source"), Plate::Source)?;
    let tgt = make_two_gaussians(cfg.samples, cfg.separation, seed_of("data-target"), Plate::Target)?;
    let system = ChargeSystem::quantile_segments(src.as_slice(), tgt.as_slice(), cfg.segments, cfg.gap)?;
    let starts = stratified_starts(&system, cfg.starts)?;
    let mut rng = s.stream("reference");
    let pool: Vec<f64> =
        (0..2 * cfg.reference).map(|_| system.quantile(Plate::Target, rng.random::<f64>())).collect::<Result<_>>()?;
    let pool = PointCloud::new(1, pool, Plate::Target)?;
    let null = calibrate_null(&pool, cfg.traces.min(cfg.reference), cfg.null_repetitions, 0.99, &mut s.stream("null"))?;
    let reference = &pool.as_slice()[..cfg.reference];
    let full = run_variant(&system, &starts, TransferMode::Full, cfg, reference)?;
    let forward_only = run_variant(&system, &starts, TransferMode::ForwardOnly, cfg, reference)?;
    Ok(EfmReport {
        forward_only_worse: forward_only.energy_distance > full.energy_distance,
        full_within_null: full.energy_distance <= null.threshold,
        full,
        forward_only,
        null_p99: null.threshold,
    })
}

/// Source-density quantiles at `(i + 1/2) / count`.
pub fn stratified_starts(system: &ChargeSystem, count: usize) -> Result<Vec<f64>> {
    (0..count).map(|i| system.quantile(Plate::Source, (i as f64 + 0.5) / count as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    /// Landings per negative charge, in order.
    pub counts: Vec<usize>,
    pub expected: f64,
    /// Largest `|count - expected| / sd` over the charges.
    pub max_z: f64,
    pub misses: usize,
    pub pass: bool,
}

/// Multinomial coverage test of the full stochastic map on a discrete
/// system: narrow equal-charge segments on each plate. Every trace must
/// land on one of the negative charges, and each charge must receive its
/// share within `z_bound` standard deviations.
pub fn discrete_coverage(
    positives: &[f64],
    negatives: &[f64],
    width: f64,
    gap: f64,
    starts: usize,
    traces: usize,
    z_bound: f64,
    seed: u64,
) -> Result<CoverageReport> {
    let seg = |c: &[f64]| c.iter().map(|&x| [x - width / 2.0, x + width / 2.0]).collect::<Vec<_>>();
    let system = ChargeSystem::segments(gap, seg(positives), seg(negatives))?;
    let map = StochasticMap::new(&system, stratified_starts(&system, starts)?, TransferConfig::adaptive())?;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; negatives.len()];
    let mut misses = 0;
    for _ in 0..traces {
        match map.sample(&mut rng) {
            Ok(o) if o.plate == Plate::Target => match system.segment_of(Plate::Target, o.x) {
                Some(k) => counts[k] += 1,
                None => misses += 1,
            },
            _ => misses += 1,
        }
    }
    let p = 1.0 / negatives.len() as f64;
    let expected = traces as f64 * p;
    let sd = (traces as f64 * p * (1.0 - p)).sqrt();
    let max_z = counts.iter().map(|&c| (c as f64 - expected).abs() / sd).fold(0.0, f64::max);
    Ok(CoverageReport { counts, expected, max_z, misses, pass: misses == 0 && max_z <= z_bound })
}

// ------------------------------------------------------------- suites

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Flux,
    Caging,
    Straightness,
    Transfer,
    EfmContrast,
}

impl std::str::FromStr for Suite {
    type Err = IfmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "flux" => Suite::Flux,
            "caging" => Suite::Caging,
            "straightness" => Suite::Straightness,
            "transfer" => Suite::Transfer,
            "efm-contrast" => Suite::EfmContrast,
            other => return Err(IfmError::InvalidValue(format!("unknown suite `{other}`"))),
        })
    }
}

/// Shared inputs of the verification suites.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub geometry: PlateGeometry,
    pub params: StringParams,
    pub seed: u64,
    /// Scales sample counts of the stochastic suites (1.0 = full size).
    pub scale: f64,
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(16)
}

pub fn flux_entries(cfg: &SuiteConfig) -> Result<Vec<CheckEntry>> {
    let g = cfg.geometry;
    let dim = g.data_dim();
    if dim > 2 {
        return Ok(vec![]);
    }
    let planes = interior_planes(g.gap(), 19);
    let zero = vec![0.0; dim];
    let single = PairBatch::single(&zero, &zero, g)?;
    let rep = flux_report(&planes, &single, &cfg.params, 10_000)?;
    let mut rng = rng_from_seed(cfg.seed);
    let q: Vec<f64> = (0..8 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let a: Vec<f64> = (0..8 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let multi = PairBatch::new(q, a, g)?;
    let multi_planes = interior_planes(g.gap(), if dim == 2 { 5 } else { 19 });
    let rep8 = flux_report(&multi_planes, &multi, &cfg.params, if dim == 2 { 1024 } else { 10_000 })?;
    let params = json!({"D": dim, "L": g.gap(), "sigma0": cfg.params.sigma0(), "d": cfg.params.depth()});
    Ok(vec![
        CheckEntry {
            name: "flux-single-pair".into(),
            params: params.clone(),
            measured: serde_json::to_value(&rep).expect("serializable"),
            threshold: json!({"relative_spread": 1e-3}),
            pass: rep.relative_spread <= 1e-3,
        },
        CheckEntry {
            name: "flux-eight-pairs".into(),
            params,
            measured: serde_json::to_value(&rep8).expect("serializable"),
            threshold: json!({"relative_spread": 5e-3}),
            pass: rep8.relative_spread <= 5e-3,
        },
    ])
}

pub fn caging_entries(cfg: &SuiteConfig) -> Result<Vec<CheckEntry>> {
    let n = scaled(100_000, cfg.scale);
    let rep = check_caging(&cfg.params, &cfg.geometry, n, cfg.seed)?;
    Ok(vec![CheckEntry {
        name: "caging".into(),
        params: json!({"L": cfg.geometry.gap(), "sigma0": cfg.params.sigma0(), "d": cfg.params.depth(), "fuzz": n}),
        measured: serde_json::to_value(&rep).expect("serializable"),
        threshold: json!({"nonzero": 0}),
        pass: rep.pass,
    }])
}

pub fn straightness_entries(cfg: &SuiteConfig) -> Result<Vec<CheckEntry>> {
    let g = cfg.geometry;
    let l = g.gap();
    let mut params = cfg.params;
    if !(params.depth() < l / 2.0) {
        params = StringParams::new(params.sigma0(), 0.25 * l)?;
    }
    let dim = g.data_dim();
    let q = vec![0.0; dim];
    let mut a = vec![0.0; dim];
    a[0] = 1.0;
    let rep = check_straightness(&q, &a, &params, &g, 2000)?;
    let bound = 1e-6 * l;
    Ok(vec![CheckEntry {
        name: "straightness".into(),
        params: json!({"L": l, "sigma0": params.sigma0(), "d": params.depth(), "steps": 2000}),
        measured: serde_json::to_value(&rep).expect("serializable"),
        threshold: json!({"max_deviation": bound, "max_middle_angle": 0.0}),
        pass: rep.max_deviation < bound && rep.max_middle_angle == 0.0 && rep.cap_deviation > 0.0,
    }])
}

pub fn transfer_entries(cfg: &SuiteConfig) -> Result<Vec<CheckEntry>> {
    let mut c = OracleTransferConfig::toy();
    c.n = scaled(c.n, cfg.scale);
    c.chunk = c.chunk.min(c.n);
    c.seed = cfg.seed;
    let rep = oracle_transfer_experiment(&c)?;
    let bound = 3.0 * rep.null_p99;
    Ok(vec![CheckEntry {
        name: "oracle-transfer".into(),
        params: serde_json::to_value(&c).expect("serializable"),
        measured: serde_json::to_value(&rep).expect("serializable"),
        threshold: json!({"energy_distance": bound}),
        pass: rep.distance.energy_distance < bound,
    }])
}

pub fn efm_entries(cfg: &SuiteConfig) -> Result<Vec<CheckEntry>> {
    let mut c = EfmConfig::toy();
    c.starts = scaled(c.starts, cfg.scale);
    c.traces = scaled(c.traces, cfg.scale);
    c.reference = scaled(c.reference, cfg.scale);
    c.seed = cfg.seed;
    let rep = efm_coverage_experiment(&c)?;
    Ok(vec![CheckEntry {
        name: "efm-contrast".into(),
        params: serde_json::to_value(&c).expect("serializable"),
        measured: serde_json::to_value(&rep).expect("serializable"),
        threshold: json!({"forward_only_worse": true, "full_energy_distance": rep.null_p99}),
        pass: rep.forward_only_worse && rep.full_within_null,
    }])
}

/// Runs a suite and collects its entries.
pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<VerificationReport> {
    let mut entries = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Flux {
        entries.extend(flux_entries(cfg)?);
    }
    if all || suite == Suite::Caging {
        entries.extend(caging_entries(cfg)?);
    }
    if all || suite == Suite::Straightness {
        entries.extend(straightness_entries(cfg)?);
    }
    if all || suite == Suite::Transfer {
        entries.extend(transfer_entries(cfg)?);
    }
    if all || suite == Suite::EfmContrast {
        entries.extend(efm_entries(cfg)?);
    }
    Ok(VerificationReport { seed: cfg.seed, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dim: usize, gap: f64) -> PairBatch {
        PairBatch::single(&vec![0.0; dim], &vec![0.0; dim], PlateGeometry::new(dim, gap).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_pair_flux_is_two_pi_in_the_middle() {
        let p = StringParams::new(1.0, 1.5).unwrap();
        let q = flux_through_plane(3.0, &pair(2, 6.0), &p, 1024).unwrap();
        // int exp(-r^2/2) 2 pi r dr over [0, inf) = 2 pi
        assert!((q.value - 2.0 * PI).abs() < 1e-9 * 2.0 * PI, "{}", q.value);
        let cap = flux_through_plane(0.75, &pair(2, 6.0), &p, 1024).unwrap();
        assert!((cap.value / q.value - 1.0).abs() < 1e-3);
        let top = flux_through_plane(6.0 - 1e-3, &pair(2, 6.0), &p, 1024).unwrap();
        assert!((top.value / q.value - 1.0).abs() < 1e-3);
    }

    #[test]
    fn one_dimensional_flux_is_root_two_pi() {
        let p = StringParams::new(0.5, 1.0).unwrap();
        let rep = flux_report(&interior_planes(4.0, 19), &pair(1, 4.0), &p, 2048).unwrap();
        for f in &rep.flux {
            assert!((f - (2.0 * PI).sqrt()).abs() < 1e-6, "{f}");
        }
        assert!(rep.relative_spread < 1e-6);
    }

    #[test]
    fn shifted_pair_flux_scales_with_axis_slope() {
        // E_z = exp(-rho^2 / 2 sigma^2) sigma^-D L / |r| for a shifted pair.
        let g = PlateGeometry::new(2, 4.0).unwrap();
        let b = PairBatch::single(&[0.0, 0.0], &[3.0, 0.0], g).unwrap();
        let p = StringParams::new(1.0, 1.0).unwrap();
        for z in [0.5, 2.0, 3.7] {
            let f = flux_through_plane(z, &b, &p, 1024).unwrap().value;
            assert!((f - 2.0 * PI * 4.0 / 5.0).abs() < 1e-8, "{f}");
        }
    }

    #[test]
    fn multi_pair_flux_is_conserved() {
        let g = PlateGeometry::new(1, 6.0).unwrap();
        let b = PairBatch::new(vec![-1.0, 0.0, 2.0], vec![1.5, -2.0, 0.0], g).unwrap();
        let p = StringParams::new(1.0, 2.0).unwrap();
        let rep = flux_report(&interior_planes(6.0, 19), &b, &p, 4096).unwrap();
        assert!(rep.relative_spread < 1e-6, "{rep:?}");
        assert!(flux_through_plane(0.0, &b, &p, 64).is_err());
        assert!(flux_through_plane(6.0, &b, &p, 64).is_err());
    }

    #[test]
    fn caging_and_straightness_pass_on_toy_settings() {
        let g = PlateGeometry::new(2, 6.0).unwrap();
        let p = StringParams::new(1.0, 1.5).unwrap();
        let c = check_caging(&p, &g, 5000, 1).unwrap();
        assert!(c.pass && c.evaluations == 5000 && c.placements == 1000);
        let s = check_straightness(&[0.0, 0.0], &[1.0, -0.5], &p, &g, 500).unwrap();
        assert!(s.on_axis_deviation < 1e-12, "{s:?}");
        assert!(s.max_deviation < 1e-6 * 6.0, "{s:?}");
        assert_eq!(s.max_middle_angle, 0.0);
        assert!(s.cap_deviation > 1e-3, "{s:?}");
        assert!(check_straightness(&[0.0, 0.0], &[1.0, 0.0], &StringParams::new(1.0, 3.0).unwrap(), &g, 10).is_err());
    }

    #[test]
    fn suite_names_parse() {
        for s in ["all", "flux", "caging", "straightness", "transfer", "efm-contrast"] {
            assert!(s.parse::<Suite>().is_ok());
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn report_json_has_the_entry_fields() {
        let r = VerificationReport {
            seed: 3,
            entries: vec![CheckEntry { name: "x".into(), params: json!({}), measured: json!(1.0), threshold: json!(2.0), pass: true }],
        };
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["entries"][0]["name"], "x");
        assert_eq!(v["entries"][0]["pass"], true);
        assert!(r.all_pass());
    }
}

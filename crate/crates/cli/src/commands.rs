use std::path::{Path, PathBuf};

use ifm_core::checkpoint;
use ifm_core::data::{make_gaussian, make_two_gaussians, plate_from_path, read_cloud, write_cloud, SwissRoll};
use ifm_core::nn::Activation;
use ifm_core::plans::{pair_dataset, sample_pairs};
use ifm_core::sampler::{self, FieldSource, TraceStatus};
use ifm_core::trainer::{self, NoiseMode, TrainConfig};
use ifm_core::verification::{self, EfmConfig, Suite, SuiteConfig};
use ifm_core::{normalize_field, superpose_field, ExtendedPoint, PairBatch, Plan, PlanKind, Plate, PlateGeometry, PointCloud, SeedStreams, StringParams};
use serde_json::json;

use crate::config::Config;
use crate::error::{CliError, Context};
use crate::{Cli, Command, Dataset, PlateArg, SuiteArg};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::FieldEval { config, at } => field_eval(cli, &Config::load(config)?, at),
        Command::Train { config, out, history } => train(cli, &Config::load(config)?, out, history.as_deref()),
        Command::Sample { config, model, input, out, traces, steps } => {
            sample(cli, &Config::load(config)?, model, input, out, traces.as_deref(), *steps)
        }
        Command::Trace { config, input, out, terminal, steps } => {
            trace(cli, &Config::load(config)?, input, out, terminal.as_deref(), *steps)
        }
        Command::Verify { suite, out, config, scale } => verify(cli, config.as_deref(), *suite, out, *scale),
        Command::CompareEfm { config, out } => compare_efm(cli, config.as_deref(), out),
        Command::Generate { dataset, n, out, plate, dim, noise, separation } => {
            generate(cli, *dataset, *n, out, *plate, *dim, *noise, *separation)
        }
    }
}

fn seed(cli: &Cli, cfg: Option<&Config>) -> Result<u64, CliError> {
    match (cli.seed, cfg) {
        (Some(s), _) => Ok(s),
        (None, Some(c)) => c.or("seed", 0),
        (None, None) => Ok(0),
    }
}

fn seed_comment(seed: u64) -> String {
    format!("seed={seed}")
}

fn geometry(cfg: &Config) -> Result<PlateGeometry, CliError> {
    PlateGeometry::new(cfg.require("D")?, cfg.require("L")?).context(|| "config keys `D`/`L`".into())
}

fn string_params(cfg: &Config, g: &PlateGeometry) -> Result<StringParams, CliError> {
    let p = StringParams::new(cfg.require("sigma0")?, cfg.require("d")?).context(|| "config keys `sigma0`/`d`".into())?;
    ifm_core::validate_geometry(g, &p).context(|| "config keys `L`/`d`".into())?;
    Ok(p)
}

fn plan(cfg: &Config) -> Result<Plan, CliError> {
    Ok(Plan::new(cfg.or("plan", PlanKind::MinibatchOt)?))
}

fn load_cloud(path: &Path, plate: Plate) -> Result<PointCloud, CliError> {
    read_cloud(path, Some(plate)).context(|| format!("reading {}", path.display()))
}

fn clouds(cfg: &Config) -> Result<(PointCloud, PointCloud), CliError> {
    let path = |k: &str| cfg.path(k).ok_or_else(|| CliError::Usage(format!("config is missing required key `{k}`")));
    Ok((load_cloud(&path("source")?, Plate::Source)?, load_cloud(&path("target")?, Plate::Target)?))
}

/// Inline single pair (`quark`/`antiquark`) if given, else `None`.
fn inline_pair(cfg: &Config, g: PlateGeometry) -> Result<Option<PairBatch>, CliError> {
    match (cfg.list::<f64>("quark")?, cfg.list::<f64>("antiquark")?) {
        (Some(q), Some(a)) => Ok(Some(PairBatch::single(&q, &a, g).context(|| "config keys `quark`/`antiquark`".into())?)),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("config keys `quark` and `antiquark` must be given together".into())),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|c| format!("{c:.12e}")).collect::<Vec<_>>().join(", ")
}

fn field_eval(cli: &Cli, cfg: &Config, at: &str) -> Result<(), CliError> {
    let g = geometry(cfg)?;
    let p = string_params(cfg, &g)?;
    let coords: Vec<f64> = at
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--at: cannot parse `{s}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if coords.len() != g.extended_dim() {
        return Err(CliError::Usage(format!("--at needs {} comma-separated values (x0..x{}, z)", g.extended_dim(), g.data_dim() - 1)));
    }
    let point = ExtendedPoint::from_extended(&coords).context(|| "--at".into())?;
    let seed = seed(cli, Some(cfg))?;
    let batch = match inline_pair(cfg, g)? {
        Some(b) => b,
        None => {
            let (src, tgt) = clouds(cfg)?;
            let mut rng = SeedStreams::new(seed).stream("plan");
            sample_pairs(&src, &tgt, g, cfg.or("batch", 1024)?, plan(cfg)?, &mut rng).context(|| "pairing".into())?
        }
    };
    let v = superpose_field(&point, &batch, &p, false).context(|| "field evaluation".into())?;
    let n = normalize_field(&v);
    println!("# seed={seed}");
    println!("pairs = {}", batch.len());
    println!("field = [{}]", fmt_vec(v.as_slice()));
    println!("magnitude = {:.12e}", v.norm());
    if n.degenerate {
        println!("direction = none (zero field)");
    } else {
        println!("direction = [{}]", fmt_vec(n.v.as_slice()));
    }
    if !g.contains_z(point.z()) {
        println!("note: z = {} lies outside [0, {}]; the field is caged there and vanishes exactly", point.z(), g.gap());
    }
    Ok(())
}

fn train_config(cfg: &Config, seed: u64) -> Result<TrainConfig, CliError> {
    let g = geometry(cfg)?;
    let p = string_params(cfg, &g)?;
    let mut tc = TrainConfig::new(g, p, cfg.require("iterations")?);
    tc.batch = cfg.or("batch", tc.batch)?;
    tc.lr = cfg.or("lr", tc.lr)?;
    tc.warmup = cfg.or("warmup", tc.warmup)?;
    tc.plan = plan(cfg)?;
    tc.noise = cfg.or("noise", NoiseMode::None)?;
    tc.seed = seed;
    if let Some(h) = cfg.list::<usize>("hidden")? {
        tc.hidden = h;
    }
    tc.activation = match cfg.get::<String>("activation")?.as_deref() {
        None | Some("silu") => Activation::Silu,
        Some("tanh") => Activation::Tanh,
        Some(other) => return Err(CliError::Usage(format!("config key `activation`: unknown activation `{other}`"))),
    };
    tc.ema_decay = cfg.or("ema_decay", tc.ema_decay)?;
    tc.weight_decay = cfg.or("weight_decay", tc.weight_decay)?;
    tc.validate().context(|| "training config".into())?;
    Ok(tc)
}

fn train(cli: &Cli, cfg: &Config, out: &Path, history: Option<&Path>) -> Result<(), CliError> {
    let seed = seed(cli, Some(cfg))?;
    let tc = train_config(cfg, seed)?;
    let (src, tgt) = clouds(cfg)?;
    let iterations = tc.iterations;
    let (model, hist) = trainer::train(&src, &tgt, tc).context(|| "training".into())?;
    checkpoint::save(out, &model).context(|| format!("writing {}", out.display()))?;
    let history_path = history.map(Path::to_path_buf).unwrap_or_else(|| sibling(out, "history.csv"));
    trainer::write_history(&history_path, &hist, seed).context(|| format!("writing {}", history_path.display()))?;
    let last = hist.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("trained {iterations} iterations, final loss {last:.6e}; checkpoint {}", out.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn report_statuses(statuses: impl Iterator<Item = TraceStatus>) {
    let (mut degenerate, mut clamped) = (0, 0);
    for s in statuses {
        match s {
            TraceStatus::DegenerateField(_) => degenerate += 1,
            TraceStatus::ClampedDenominator(_) => clamped += 1,
            TraceStatus::Completed => {}
        }
    }
    if degenerate + clamped > 0 {
        eprintln!("note: {degenerate} traces stopped on a degenerate field, {clamped} needed a clamped denominator");
    }
}

fn steps_of(cfg: &Config, flag: Option<usize>) -> Result<usize, CliError> {
    let s = match flag {
        Some(s) => s,
        None => cfg.or("steps", sampler::DEFAULT_STEPS)?,
    };
    if s == 0 {
        return Err(CliError::Usage("steps must be >= 1".into()));
    }
    Ok(s)
}

fn run_transfer(
    field: &FieldSource,
    gap: f64,
    input: &Path,
    out: &Path,
    traces: Option<&Path>,
    steps: usize,
    seed: u64,
    cloud_out: bool,
) -> Result<(), CliError> {
    let src = load_cloud(input, Plate::Source)?;
    let comments = vec![seed_comment(seed), format!("steps={steps}")];
    if let Some(tp) = traces {
        let (terminal, results) = sampler::transfer(&src, field, Some(gap), steps).context(|| "transfer".into())?;
        report_statuses(results.iter().map(|t| t.status));
        sampler::write_traces(tp, &results, seed).context(|| format!("writing {}", tp.display()))?;
        if cloud_out {
            write_cloud(out, &terminal, &comments).context(|| format!("writing {}", out.display()))?;
        }
    } else {
        let (terminal, statuses) = sampler::transfer_terminal(&src, field, Some(gap), steps).context(|| "transfer".into())?;
        report_statuses(statuses.into_iter());
        write_cloud(out, &terminal, &comments).context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn sample(
    cli: &Cli,
    cfg: &Config,
    model: &Path,
    input: &Path,
    out: &Path,
    traces: Option<&Path>,
    steps: Option<usize>,
) -> Result<(), CliError> {
    let seed = seed(cli, Some(cfg))?;
    let g = geometry(cfg)?;
    let m = checkpoint::load(model).context(|| format!("reading {}", model.display()))?;
    if m.data_dim() != g.data_dim() {
        return Err(CliError::Usage(format!("model is for D = {}, config says D = {}", m.data_dim(), g.data_dim())));
    }
    let field = FieldSource::model(m, cfg.or("use_ema", true)?);
    run_transfer(&field, g.gap(), input, out, traces, steps_of(cfg, steps)?, seed, true)
}

fn trace(cli: &Cli, cfg: &Config, input: &Path, out: &Path, terminal: Option<&Path>, steps: Option<usize>) -> Result<(), CliError> {
    let seed = seed(cli, Some(cfg))?;
    let g = geometry(cfg)?;
    let p = string_params(cfg, &g)?;
    let batch = match inline_pair(cfg, g)? {
        Some(b) => b,
        None => {
            let (src, tgt) = clouds(cfg)?;
            let mut rng = SeedStreams::new(seed).stream("plan");
            pair_dataset(&src, &tgt, g, cfg.or("batch", 1024)?, plan(cfg)?, &mut rng).context(|| "pairing".into())?
        }
    };
    let field = FieldSource::oracle(&batch, p).context(|| "oracle field".into())?;
    let steps = steps_of(cfg, steps)?;
    match terminal {
        Some(t) => run_transfer(&field, g.gap(), input, t, Some(out), steps, seed, true),
        None => run_transfer(&field, g.gap(), input, out, Some(out), steps, seed, false),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn verify(cli: &Cli, config: Option<&Path>, suite: SuiteArg, out: &Path, scale: Option<f64>) -> Result<(), CliError> {
    let cfg = config.map(Config::load).transpose()?;
    let seed = seed(cli, cfg.as_ref())?;
    let (geometry, params) = match &cfg {
        Some(c) => {
            let g = geometry(c)?;
            (g, string_params(c, &g)?)
        }
        None => (PlateGeometry::new(2, 6.0)?, StringParams::new(1.0, 1.5)?),
    };
    let scale = match (scale, &cfg) {
        (Some(s), _) => s,
        (None, Some(c)) => c.or("scale", 1.0)?,
        (None, None) => 1.0,
    };
    if !(scale > 0.0) {
        return Err(CliError::Usage(format!("scale must be > 0, got {scale}")));
    }
    let suite = match suite {
        SuiteArg::All => Suite::All,
        SuiteArg::Flux => Suite::Flux,
        SuiteArg::Caging => Suite::Caging,
        SuiteArg::Straightness => Suite::Straightness,
        SuiteArg::Transfer => Suite::Transfer,
        SuiteArg::EfmContrast => Suite::EfmContrast,
    };
    let report = verification::run_suite(suite, &SuiteConfig { geometry, params, seed, scale }).context(|| "verification".into())?;
    let value = serde_json::to_value(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(out, &value)?;
    for e in &report.entries {
        println!("{:<20} {}", e.name, if e.pass { "pass" } else { "FAIL" });
    }
    if report.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect();
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}

fn compare_efm(cli: &Cli, config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = config.map(Config::load).transpose()?;
    let mut c = EfmConfig::toy();
    if let Some(k) = &cfg {
        c.gap = k.or("L", c.gap)?;
        c.separation = k.or("separation", c.separation)?;
        c.segments = k.or("segments", c.segments)?;
        c.samples = k.or("samples", c.samples)?;
        c.starts = k.or("starts", c.starts)?;
        c.traces = k.or("traces", c.traces)?;
        c.reference = k.or("reference", c.reference)?;
        c.null_repetitions = k.or("null_repetitions", c.null_repetitions)?;
    }
    c.seed = seed(cli, cfg.as_ref())?;
    let report = verification::efm_coverage_experiment(&c).context(|| "EFM experiment".into())?;
    write_json(out, &json!({"seed": c.seed, "config": c, "report": report}))?;
    println!(
        "full map: energy distance {:.4e}; forward only: {:.4e}; null p99 {:.4e}",
        report.full.energy_distance, report.forward_only.energy_distance, report.null_p99
    );
    if report.forward_only_worse {
        Ok(())
    } else {
        Err(CliError::CheckFailed("forward-only transfer was not worse than the full map".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn generate(
    cli: &Cli,
    dataset: Dataset,
    n: usize,
    out: &Path,
    plate: Option<PlateArg>,
    dim: usize,
    noise: f64,
    separation: f64,
) -> Result<(), CliError> {
    let seed = seed(cli, None)?;
    let plate = match plate {
        Some(PlateArg::Source) => Plate::Source,
        Some(PlateArg::Target) => Plate::Target,
        None => plate_from_path(out).unwrap_or(Plate::Source),
    };
    let cloud = match dataset {
        Dataset::Gaussian => make_gaussian(n, dim, &vec![0.0; dim], 1.0, seed, plate),
        Dataset::SwissRoll => SwissRoll::default().sample(n, noise, seed, plate),
        Dataset::TwoGaussians => make_two_gaussians(n, separation, seed, plate),
    }
    .context(|| "generating".into())?;
    write_cloud(out, &cloud, &[seed_comment(seed)]).context(|| format!("writing {}", out.display()))?;
    println!("wrote {} points (D = {}) to {}", cloud.len(), cloud.dim(), out.display());
    Ok(())
}

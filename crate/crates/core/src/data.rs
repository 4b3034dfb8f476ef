//! Toy dataset generators and point-cloud CSV persistence.
//!
//! CSV layout: optional `#`-prefixed comment lines (the writer records the
//! seed there), a header `x0,x1,...,x{D-1}`, then one point per line with
//! shortest round-trip decimals. UTF-8, LF line endings.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{IfmError, Result};
use crate::rng::rng_from_seed;
use crate::types::{Plate, PointCloud};

/// `n` draws of `mean + scale * N(0, I_D)`.
pub fn make_gaussian(n: usize, dim: usize, mean: &[f64], scale: f64, seed: u64, plate: Plate) -> Result<PointCloud> {
    if n == 0 {
        return Err(IfmError::InvalidValue("n must be >= 1".into()));
    }
    if mean.len() != dim {
        return Err(IfmError::DimensionMismatch { expected: dim, got: mean.len() });
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for m in mean {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(m + scale * e);
        }
    }
    PointCloud::new(dim, data, plate)
}

/// Parametrization of the 2-D Swiss roll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwissRoll {
    /// Radius per unit of the spiral parameter: `|p| = scale * t`.
    pub scale: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for SwissRoll {
    fn default() -> Self {
        Self { scale: 0.4 / PI, t_min: 1.5 * PI, t_max: 4.5 * PI }
    }
}

impl SwissRoll {
    pub fn sample(&self, n: usize, noise_sd: f64, seed: u64, plate: Plate) -> Result<PointCloud> {
        if n == 0 {
            return Err(IfmError::InvalidValue("n must be >= 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let t = rng.random_range(self.t_min..self.t_max);
            let (e0, e1): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            data.push(self.scale * t * t.cos() + noise_sd * e0);
            data.push(self.scale * t * t.sin() + noise_sd * e1);
        }
        PointCloud::new(2, data, plate)
    }
}

/// `t ~ U[1.5 pi, 4.5 pi]`, `p = 0.4 (t cos t, t sin t) / pi + N(0, noise_sd^2 I)`.
pub fn make_swiss_roll(n: usize, noise_sd: f64, seed: u64, plate: Plate) -> Result<PointCloud> {
    SwissRoll::default().sample(n, noise_sd, seed, plate)
}

/// Balanced 1-D mixture of unit Gaussians at `+-separation / 2`.
pub fn make_two_gaussians(n: usize, separation: f64, seed: u64, plate: Plate) -> Result<PointCloud> {
    if n == 0 {
        return Err(IfmError::InvalidValue("n must be >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let data = (0..n)
        .map(|_| {
            let centre = if rng.random::<bool>() { separation / 2.0 } else { -separation / 2.0 };
            let e: f64 = StandardNormal.sample(&mut rng);
            centre + e
        })
        .collect();
    PointCloud::new(1, data, plate)
}

/// Serializes a cloud; each entry of `comments` becomes a `# ` line.
pub fn cloud_to_csv(cloud: &PointCloud, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let header: Vec<String> = (0..cloud.dim()).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in cloud.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV layout described in the module docs.
pub fn cloud_from_csv(text: &str, plate: Plate) -> Result<PointCloud> {
    let mut dim = None;
    let mut data = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.starts_with('#') || (line.trim().is_empty() && dim.is_none()) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match dim {
            None => {
                for (i, f) in fields.iter().enumerate() {
                    if *f != format!("x{i}") {
                        return Err(IfmError::Parse {
                            line: line_no,
                            message: format!("malformed header: expected `x{i}`, found `{f}`"),
                        });
                    }
                }
                dim = Some(fields.len());
            }
            Some(d) => {
                if line.trim().is_empty() {
                    continue;
                }
                if fields.len() != d {
                    return Err(IfmError::Parse {
                        line: line_no,
                        message: format!("ragged row: expected {d} fields, found {}", fields.len()),
                    });
                }
                for f in fields {
                    let v: f64 = f.parse().map_err(|_| IfmError::Parse {
                        line: line_no,
                        message: format!("not a number: `{f}`"),
                    })?;
                    if !v.is_finite() {
                        return Err(IfmError::Parse { line: line_no, message: format!("non-finite entry `{f}`") });
                    }
                    data.push(v);
                }
            }
        }
    }
    let dim = dim.ok_or(IfmError::Parse { line: 0, message: "missing header".into() })?;
    if data.is_empty() {
        return Err(IfmError::Parse { line: 0, message: "no data rows".into() });
    }
    PointCloud::new(dim, data, plate)
}

/// Plate implied by the `source_*.csv` / `target_*.csv` naming convention.
pub fn plate_from_path(path: &Path) -> Option<Plate> {
    let name = path.file_name()?.to_str()?;
    if name.starts_with("source") {
        Some(Plate::Source)
    } else if name.starts_with("target") {
        Some(Plate::Target)
    } else {
        None
    }
}

/// Reads a cloud; the plate comes from `plate` or, failing that, the file name.
pub fn read_cloud(path: &Path, plate: Option<Plate>) -> Result<PointCloud> {
    let plate = plate.or_else(|| plate_from_path(path)).ok_or_else(|| {
        IfmError::InvalidValue(format!(
            "cannot infer plate for {}: name it source_*.csv / target_*.csv or pass the plate explicitly",
            path.display()
        ))
    })?;
    let text = std::fs::read_to_string(path)?;
    cloud_from_csv(&text, plate)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    std::fs::write(path, cloud_to_csv(cloud, comments))?;
    Ok(())
}

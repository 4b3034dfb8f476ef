//! Value types shared by every module: plate geometry, string parameters,
//! extended-space points, point clouds, pair batches and field vectors.
//!
//! Constructors validate their invariants, so a value that exists is a
//! value that every downstream routine may use without re-checking.

use std::f64::consts::PI;

use crate::error::{IfmError, Result};

/// Data dimension `D` and plate separation `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateGeometry {
    data_dim: usize,
    gap: f64,
}

impl PlateGeometry {
    pub fn new(data_dim: usize, gap: f64) -> Result<Self> {
        if data_dim == 0 {
            return Err(IfmError::InvalidGeometry("data dimension D must be >= 1".into()));
        }
        if !(gap.is_finite() && gap > 0.0) {
            return Err(IfmError::InvalidGeometry(format!("plate gap L must be > 0, got {gap}")));
        }
        Ok(Self { data_dim, gap })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    /// `D + 1`.
    pub fn extended_dim(&self) -> usize {
        self.data_dim + 1
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn contains_z(&self, z: f64) -> bool {
        (0.0..=self.gap).contains(&z)
    }
}

/// String cross-section width `sigma0` and curved-cap depth `d`.
///
/// The cap wavenumber `k = pi / (2 d)` is always derived from `d` on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringParams {
    sigma0: f64,
    depth: f64,
}

impl StringParams {
    pub fn new(sigma0: f64, depth: f64) -> Result<Self> {
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(IfmError::InvalidGeometry(format!("sigma0 must be > 0, got {sigma0}")));
        }
        if !(depth.is_finite() && depth > 0.0) {
            return Err(IfmError::InvalidGeometry(format!("cap depth d must be > 0, got {depth}")));
        }
        Ok(Self { sigma0, depth })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn k(&self) -> f64 {
        PI / (2.0 * self.depth)
    }
}

/// Checks the joint invariant `d <= L / 2`.
pub fn validate_geometry(geometry: &PlateGeometry, params: &StringParams) -> Result<()> {
    if params.depth() > geometry.gap() / 2.0 {
        return Err(IfmError::InvalidGeometry(format!(
            "cap depth d = {} exceeds L/2 = {}",
            params.depth(),
            geometry.gap() / 2.0
        )));
    }
    Ok(())
}

/// A point `(x, z)` of the extended space; `z` is the plate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    x: Vec<f64>,
    z: f64,
}

impl ExtendedPoint {
    pub fn new(x: Vec<f64>, z: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(IfmError::InvalidValue("point needs at least one data coordinate".into()));
        }
        if !z.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(IfmError::InvalidValue("point coordinates must be finite".into()));
        }
        Ok(Self { x, z })
    }

    /// Builds a point from a flat `[x_0, .., x_{D-1}, z]` slice.
    pub fn from_extended(v: &[f64]) -> Result<Self> {
        match v.split_last() {
            Some((&z, x)) => Self::new(x.to_vec(), z),
            None => Err(IfmError::InvalidValue("empty coordinate vector".into())),
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn to_extended(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.z);
        v
    }
}

/// Which plate a cloud lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plate {
    /// Quarks, `z = 0`.
    Source,
    /// Antiquarks, `z = L`.
    Target,
}

impl Plate {
    pub fn z(self, geometry: &PlateGeometry) -> f64 {
        match self {
            Plate::Source => 0.0,
            Plate::Target => geometry.gap(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plate::Source => "source",
            Plate::Target => "target",
        }
    }
}

/// `N x D` samples sitting on one plate, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
    plate: Plate,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>, plate: Plate) -> Result<Self> {
        if dim == 0 {
            return Err(IfmError::InvalidValue("cloud dimension must be >= 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(IfmError::InvalidValue(format!(
                "cloud buffer of length {} is not a nonempty multiple of D = {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(IfmError::InvalidValue(format!("non-finite entry in row {}", i / dim)));
        }
        Ok(Self { dim, data, plate })
    }

    pub fn from_rows(rows: &[Vec<f64>], plate: Plate) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(IfmError::InvalidValue("ragged rows".into()));
        }
        Self::new(dim, rows.concat(), plate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plate(&self) -> Plate {
        self.plate
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn with_plate(mut self, plate: Plate) -> Self {
        self.plate = plate;
        self
    }

    /// Rows `range` as a new cloud on the same plate.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.dim, self.data[range.start * self.dim..range.end * self.dim].to_vec(), self.plate)
    }
}

/// Matched quark/antiquark rows drawn from a transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    quarks: Vec<f64>,
    antiquarks: Vec<f64>,
    geometry: PlateGeometry,
}

impl PairBatch {
    pub fn new(quarks: Vec<f64>, antiquarks: Vec<f64>, geometry: PlateGeometry) -> Result<Self> {
        let dim = geometry.data_dim();
        if quarks.is_empty() || quarks.len() % dim != 0 || quarks.len() != antiquarks.len() {
            return Err(IfmError::InvalidValue(format!(
                "pair batch needs equal nonempty row counts of width {dim} (got {} and {} values)",
                quarks.len(),
                antiquarks.len()
            )));
        }
        if quarks.iter().chain(&antiquarks).any(|v| !v.is_finite()) {
            return Err(IfmError::InvalidValue("non-finite pair coordinate".into()));
        }
        Ok(Self { quarks, antiquarks, geometry })
    }

    /// A batch holding one pair.
    pub fn single(quark: &[f64], antiquark: &[f64], geometry: PlateGeometry) -> Result<Self> {
        Self::new(quark.to_vec(), antiquark.to_vec(), geometry)
    }

    pub fn geometry(&self) -> &PlateGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.geometry.data_dim()
    }

    pub fn len(&self) -> usize {
        self.quarks.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.quarks.is_empty()
    }

    pub fn quark(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.quarks[i * d..(i + 1) * d]
    }

    pub fn antiquark(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.antiquarks[i * d..(i + 1) * d]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        let d = self.dim();
        self.quarks.chunks_exact(d).zip(self.antiquarks.chunks_exact(d))
    }

    pub fn quarks(&self) -> &[f64] {
        &self.quarks
    }

    pub fn antiquarks(&self) -> &[f64] {
        &self.antiquarks
    }

    /// Concatenation of two batches over the same geometry.
    pub fn concat(&self, other: &PairBatch) -> Result<Self> {
        if self.geometry != other.geometry {
            return Err(IfmError::InvalidGeometry("cannot concatenate batches with different geometry".into()));
        }
        let mut q = self.quarks.clone();
        q.extend_from_slice(&other.quarks);
        let mut a = self.antiquarks.clone();
        a.extend_from_slice(&other.antiquarks);
        Self::new(q, a, self.geometry)
    }
}

/// A `(D + 1)`-vector: first `D` components along the data axes, last along `z`.
///
/// The zero vector is a legal value meaning "no field here".
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    v: Vec<f64>,
}

impl FieldVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(IfmError::InvalidValue("field vector needs D + 1 >= 2 components".into()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(IfmError::InvalidValue("field vector must be finite".into()));
        }
        Ok(Self { v })
    }

    pub fn zeros(extended_dim: usize) -> Self {
        Self { v: vec![0.0; extended_dim] }
    }

    pub(crate) fn from_raw(v: Vec<f64>) -> Self {
        debug_assert!(v.len() >= 2);
        Self { v }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.v
    }

    pub fn x(&self) -> &[f64] {
        &self.v[..self.v.len() - 1]
    }

    pub fn z(&self) -> f64 {
        self.v[self.v.len() - 1]
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|&c| c == 0.0)
    }
}

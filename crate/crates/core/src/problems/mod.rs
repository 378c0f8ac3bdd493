//! Built-in benchmark problems and the independent oracles used to check them.

pub mod laplace;
pub mod metrics;
pub mod spacetime;
pub mod sphere;
pub mod ssa;
pub mod stiff;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::{BasisError, BasisFamily, BasisSpec1D, TensorBasisSpec};
use crate::field::io::{CoefficientFile, FormatError, NamedField};
use crate::field::{CoefficientField, FieldError};
use crate::geometry::{DomainSpec, GeometryError};
use crate::geometry::raster::{GrayRaster, RasterMask};
use crate::optimize::{self, FirstOrderConfig, OptimizeError, OptimizerConfig, RunReport, SecondOrderConfig};
use crate::residual::{CompiledProblem, ProblemSpec, ResidualError, Weighting};

pub use metrics::{error_metrics, mass_integral, MetricError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem id '{0}'")]
    UnknownId(String),
    #[error("invalid parameter {name}: {msg}")]
    Param { name: String, msg: String },
    #[error("oracle resolution error: {0}")]
    OracleResolution(String),
    #[error("reference solve failed: {0}")]
    Reference(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ProblemError {
    pub(crate) fn param(name: &str, msg: impl Into<String>) -> Self {
        ProblemError::Param { name: name.to_string(), msg: msg.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    LaplacePeanut,
    LaplaceDataAssim,
    LaplaceMask,
    AllenCahn,
    Nls,
    WavePeanut,
    SphereDiffusion,
    HeatControl,
    Transport,
    SsaSynthetic,
}

impl ProblemId {
    pub const ALL: [ProblemId; 10] = [
        ProblemId::LaplacePeanut,
        ProblemId::LaplaceDataAssim,
        ProblemId::LaplaceMask,
        ProblemId::AllenCahn,
        ProblemId::Nls,
        ProblemId::WavePeanut,
        ProblemId::SphereDiffusion,
        ProblemId::HeatControl,
        ProblemId::Transport,
        ProblemId::SsaSynthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::LaplacePeanut => "laplace-peanut",
            ProblemId::LaplaceDataAssim => "laplace-data-assim",
            ProblemId::LaplaceMask => "laplace-mask",
            ProblemId::AllenCahn => "allen-cahn",
            ProblemId::Nls => "nls",
            ProblemId::WavePeanut => "wave-peanut",
            ProblemId::SphereDiffusion => "sphere-diffusion",
            ProblemId::HeatControl => "heat-control",
            ProblemId::Transport => "transport",
            ProblemId::SsaSynthetic => "ssa-synthetic",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ProblemId::LaplacePeanut => "Laplace equation on the peanut with a circular hole, Dirichlet data",
            ProblemId::LaplaceDataAssim => "Laplace equation on the peanut constrained by interior samples",
            ProblemId::LaplaceMask => "Laplace equation on a raster-mask domain",
            ProblemId::AllenCahn => "Allen-Cahn equation, periodic in x",
            ProblemId::Nls => "nonlinear Schrodinger equation split into real and imaginary parts",
            ProblemId::WavePeanut => "wave equation on the peanut with a Gaussian pulse",
            ProblemId::SphereDiffusion => "diffusion on the unit sphere embedded in 3D",
            ProblemId::HeatControl => "heat equation on the disk with a learned boundary forcing",
            ProblemId::Transport => "advection-diffusion on the disk driven to raster targets",
            ProblemId::SsaSynthetic => "shallow shelf viscosity inversion from synthetic data",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        ProblemId::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| ProblemError::UnknownId(s.to_string()))
    }
}

/// Physical constants shared by the built-in problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub rho_ice: f64,
    pub rho_water: f64,
    pub gravity: f64,
    pub heat_diffusivity: f64,
    pub transport_diffusivity: f64,
    pub sphere_diffusivity: f64,
    pub ac_diffusion: f64,
    pub ac_reaction: f64,
    pub nls_dispersion: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    rho_ice: 917.0,
    rho_water: 1030.0,
    gravity: 9.81,
    heat_diffusivity: 0.1,
    transport_diffusivity: 0.1,
    sphere_diffusivity: 0.5,
    ac_diffusion: 1e-4,
    ac_reaction: 5.0,
    nls_dispersion: 0.5,
};

/// Scattered observations `(point, value)` for data-assimilation terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Overrides applied on top of a problem's defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    pub seed: u64,
    /// Highest mode index for every dimension of every field (`N + 1` modes each).
    pub modes: Option<usize>,
    /// Per-field mode counts, overriding `modes`.
    pub field_modes: BTreeMap<String, Vec<usize>>,
    /// Collocation counts keyed by set name (`pde`, `boundary`, `initial`, `data`).
    pub points: BTreeMap<String, usize>,
    pub t_end: Option<f64>,
    pub diffusivity: Option<f64>,
    /// Laplace peanut: use `x^3 - 3xy^2` as boundary data on every boundary.
    pub harmonic_boundary: bool,
    /// SSA: include the calving-front force balance.
    pub calving_front: Option<bool>,
    /// Transport: number of time-slice targets when no rasters are given.
    pub n_targets: Option<usize>,
    /// Highest mode index of internal reference solves.
    pub reference_modes: Option<usize>,
    #[serde(skip)]
    pub observations: Option<Observations>,
    #[serde(skip)]
    pub mask: Option<RasterMask>,
    #[serde(skip)]
    pub targets: Option<Vec<GrayRaster>>,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl ProblemParams {
    pub fn seeded(seed: u64) -> Self {
        ProblemParams { seed, ..Default::default() }
    }

    pub fn with_modes(mut self, n: usize) -> Self {
        self.modes = Some(n);
        self
    }

    pub fn with_points(mut self, set: &str, n: usize) -> Self {
        self.points.insert(set.to_string(), n);
        self
    }

    /// Mode counts for `field`, falling back to `default`.
    pub(crate) fn shape(&self, field: &str, default: &[usize]) -> Result<Vec<usize>, ProblemError> {
        let shape = if let Some(s) = self.field_modes.get(field) {
            if s.len() != default.len() {
                return Err(ProblemError::param(
                    &format!("field_modes.{field}"),
                    format!("expected {} entries, got {}", default.len(), s.len()),
                ));
            }
            s.clone()
        } else if let Some(n) = self.modes {
            vec![n + 1; default.len()]
        } else {
            default.to_vec()
        };
        if shape.iter().any(|&m| m == 0) {
            return Err(ProblemError::param(&format!("field_modes.{field}"), "mode counts must be positive"));
        }
        Ok(shape)
    }

    pub(crate) fn count(&self, set: &str, default: usize) -> Result<usize, ProblemError> {
        let n = self.points.get(set).copied().unwrap_or(default);
        if n == 0 {
            return Err(ProblemError::param(&format!("points.{set}"), "must be at least 1"));
        }
        Ok(n)
    }

    pub(crate) fn positive(name: &str, v: Option<f64>, default: f64) -> Result<f64, ProblemError> {
        let v = v.unwrap_or(default);
        if !(v.is_finite() && v > 0.0) {
            return Err(ProblemError::param(name, format!("must be positive and finite, got {v}")));
        }
        Ok(v)
    }
}

/// A fully declared problem ready to compile and solve.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub id: ProblemId,
    pub spec: ProblemSpec,
    pub domain: DomainSpec,
    pub optimizer: OptimizerConfig,
    /// Coordinate names of each field's inputs.
    pub axes: Vec<Vec<String>>,
    /// Non-dimensionalization scales and other recorded constants.
    pub scales: BTreeMap<String, f64>,
    /// Reference field used to generate data, when one exists.
    pub reference: Option<CoefficientField>,
    pub params: ProblemParams,
}

impl BuiltProblem {
    pub fn compile(&self) -> Result<CompiledProblem, ProblemError> {
        Ok(self.spec.compile()?)
    }

    pub fn field_names(&self) -> Vec<String> {
        self.spec.fields.iter().map(|f| f.name.clone()).collect()
    }
}

/// Table of solver defaults.
pub fn default_optimizer(id: ProblemId) -> OptimizerConfig {
    let adam = |lr, steps| FirstOrderConfig::new(lr, steps);
    match id {
        ProblemId::LaplacePeanut
        | ProblemId::AllenCahn
        | ProblemId::Nls => OptimizerConfig::Dogleg(SecondOrderConfig::dogleg()),
        ProblemId::LaplaceMask | ProblemId::SsaSynthetic => {
            OptimizerConfig::LevenbergMarquardt(SecondOrderConfig::levenberg_marquardt())
        }
        ProblemId::LaplaceDataAssim => OptimizerConfig::Adam(adam(0.1, 1000)),
        ProblemId::WavePeanut => OptimizerConfig::NAdam(adam(0.1, 5000)),
        ProblemId::SphereDiffusion => OptimizerConfig::Adam(adam(0.01, 1000)),
        ProblemId::HeatControl => OptimizerConfig::Adam(adam(0.1, 500)),
        ProblemId::Transport => OptimizerConfig::Adam(adam(0.1, 1000)),
    }
}

/// Loss weighting paired with each default optimizer.
pub fn default_weighting(id: ProblemId) -> Weighting {
    match default_optimizer(id) {
        OptimizerConfig::Adam(_) | OptimizerConfig::NAdam(_) => Weighting::adaptive_default(),
        _ => Weighting::Fixed,
    }
}

/// Builds the problem `id` with `params` applied over its defaults.
pub fn build(id: ProblemId, params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    match id {
        ProblemId::LaplacePeanut => laplace::build_peanut(params),
        ProblemId::LaplaceDataAssim => laplace::build_data_assim(params),
        ProblemId::LaplaceMask => laplace::build_mask(params),
        ProblemId::AllenCahn => stiff::build_allen_cahn(params),
        ProblemId::Nls => stiff::build_nls(params),
        ProblemId::WavePeanut => spacetime::build_wave(params),
        ProblemId::SphereDiffusion => sphere::build(params),
        ProblemId::HeatControl => spacetime::build_heat(params),
        ProblemId::Transport => spacetime::build_transport(params),
        ProblemId::SsaSynthetic => ssa::build(params),
    }
}

/// Solves a built problem from zero coefficients with its configured optimizer.
pub fn solve(built: &BuiltProblem) -> Result<(CompiledProblem, RunReport), ProblemError> {
    let compiled = built.compile()?;
    let x0 = vec![0.0; compiled.n_coeffs()];
    let report = optimize::run(&compiled, &x0, &built.optimizer, &mut |_| {})?;
    Ok((compiled, report))
}

pub(crate) fn basis(family: BasisFamily, n: usize, lo: f64, hi: f64) -> Result<BasisSpec1D, ProblemError> {
    Ok(BasisSpec1D::new(family, n, lo, hi)?)
}

pub(crate) fn tensor(dims: Vec<BasisSpec1D>) -> Result<TensorBasisSpec, ProblemError> {
    Ok(TensorBasisSpec::new(dims)?)
}

pub(crate) fn stream(params: &ProblemParams, id: ProblemId, set: &str) -> rand_chacha::ChaCha8Rng {
    crate::geometry::stream_rng(params.seed, &format!("{}/{set}", id.name()))
}

pub(crate) fn axes(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Solves `built` once and caches the fields under a key derived from `tag`.
pub(crate) fn cached_solution(built: &BuiltProblem, tag: &str) -> Result<Vec<CoefficientField>, ProblemError> {
    let name = format!("{}-{}.coef", built.id.name(), cache_key(tag));
    let text = cached_text(built.params.cache_dir.as_ref(), &name, || {
        let (compiled, report) = solve(built)?;
        if report.termination.is_failure() {
            return Err(ProblemError::Reference(format!("{:?}", report.termination)));
        }
        let fields = compiled.unpack(&report.x)?;
        let named = fields
            .into_iter()
            .zip(built.spec.fields.iter().zip(&built.axes))
            .map(|(field, (decl, axes))| NamedField { name: decl.name.clone(), axes: axes.clone(), field })
            .collect();
        Ok(CoefficientFile { problem: Some(built.id.name().to_string()), domain: None, fields: named }.to_text())
    })?;
    Ok(CoefficientFile::parse(&text)?.fields.into_iter().map(|f| f.field).collect())
}

/// Hex SHA-256 of `key`, shortened; used to name cache entries.
pub fn cache_key(key: &str) -> String {
    let digest = Sha256::digest(key.as_bytes());
    hex::encode(&digest[..8])
}

/// Loads `name` from the cache directory, or computes and stores it.
pub(crate) fn cached_text<F>(dir: Option<&PathBuf>, name: &str, compute: F) -> Result<String, ProblemError>
where
    F: FnOnce() -> Result<String, ProblemError>,
{
    let Some(dir) = dir else {
        return compute();
    };
    let path = dir.join(name);
    if let Ok(text) = std::fs::read_to_string(&path) {
        return Ok(text);
    }
    let text = compute()?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, &text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_through_names() {
        for id in ProblemId::ALL {
            assert_eq!(id.name().parse::<ProblemId>().unwrap(), id);
        }
        assert!("laplace_peanut".parse::<ProblemId>().is_ok());
        assert!(matches!("nope".parse::<ProblemId>(), Err(ProblemError::UnknownId(_))));
    }

    #[test]
    fn constants_are_physical() {
        let c = CONSTANTS;
        assert!(c.rho_ice < c.rho_water);
        for v in [c.gravity, c.heat_diffusivity, c.transport_diffusivity, c.sphere_diffusivity, c.ac_diffusion] {
            assert!(v > 0.0);
        }
    }

    #[test]
    fn shape_overrides() {
        let p = ProblemParams::default();
        assert_eq!(p.shape("u", &[61, 61]).unwrap(), vec![61, 61]);
        let p = p.with_modes(8);
        assert_eq!(p.shape("u", &[61, 61, 3]).unwrap(), vec![9, 9, 9]);
        let mut p = ProblemParams::default();
        p.field_modes.insert("u".into(), vec![4]);
        assert!(p.shape("u", &[61, 61]).is_err());
        p.field_modes.insert("u".into(), vec![0, 3]);
        assert!(p.shape("u", &[61, 61]).is_err());
        assert!(ProblemParams::default().with_points("pde", 0).count("pde", 10).is_err());
    }

    #[test]
    fn optimizer_table() {
        assert!(matches!(default_optimizer(ProblemId::LaplacePeanut), OptimizerConfig::Dogleg(_)));
        assert!(matches!(default_optimizer(ProblemId::SsaSynthetic), OptimizerConfig::LevenbergMarquardt(_)));
        match default_optimizer(ProblemId::Transport) {
            OptimizerConfig::Adam(c) => assert_eq!((c.lr, c.steps), (0.1, 1000)),
            other => panic!("{other:?}"),
        }
        match default_optimizer(ProblemId::WavePeanut) {
            OptimizerConfig::NAdam(c) => assert_eq!((c.lr, c.steps), (0.1, 5000)),
            other => panic!("{other:?}"),
        }
        assert_eq!(default_weighting(ProblemId::SphereDiffusion), Weighting::adaptive_default());
        assert_eq!(default_weighting(ProblemId::AllenCahn), Weighting::Fixed);
    }
}

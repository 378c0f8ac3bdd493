//! Run configuration files.
//!
//! ```toml
//! spec_version = 1
//! problem = "laplace-peanut"
//! output_dir = "runs/peanut"
//!
//! [params]
//! seed = 3
//! modes = 20
//! points = { pde = 5000, boundary = 800 }
//!
//! [optimizer]
//! kind = "lm"
//! max_iters = 200
//!
//! [loss]
//! mode = "fixed"
//! weights = { boundary = 10.0 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use basisfit::geometry::raster::{Extent, GrayRaster, RasterMask};
use basisfit::optimize::{FirstOrderConfig, OptimizerConfig, SecondOrderConfig};
use basisfit::problems::{self, BuiltProblem, ProblemId, ProblemParams};
use basisfit::residual::Weighting;
use serde::Deserialize;

use crate::CliError;

pub const SPEC_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "BASISFIT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "basisfit-output";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec_version: u32,
    pub problem: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: ProblemParams,
    #[serde(default)]
    pub optimizer: OptimizerOverride,
    #[serde(default)]
    pub loss: LossOverride,
    #[serde(default)]
    pub mask: Option<RasterInput>,
    #[serde(default)]
    pub targets: Vec<RasterInput>,
}

/// A grayscale image and the rectangle `[x_lo, x_hi, y_lo, y_hi]` it covers.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterInput {
    pub path: PathBuf,
    #[serde(default = "unit_square")]
    pub extent: [f64; 4],
}

fn unit_square() -> [f64; 4] {
    [-1.0, 1.0, -1.0, 1.0]
}

/// Optimizer settings layered over the problem default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOverride {
    pub kind: Option<String>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub precondition: Option<bool>,
    pub l1: Option<f64>,
    pub divergence_factor: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_iters: Option<usize>,
    pub initial: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossOverride {
    /// `fixed` or `adaptive`.
    pub mode: Option<String>,
    pub epsilon: Option<f64>,
    pub cap: Option<f64>,
    pub every: Option<usize>,
    /// Fixed per-term weights by term name.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.spec_version != SPEC_VERSION {
            return Err(CliError::Config(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                cfg.spec_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for r in cfg.mask.iter_mut().chain(cfg.targets.iter_mut()) {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        cfg.id()?;
        cfg.optimizer_config()?;
        cfg.weighting()?;
        Ok(cfg)
    }

    pub fn id(&self) -> Result<ProblemId, CliError> {
        self.problem.parse().map_err(|e: problems::ProblemError| CliError::Config(e.to_string()))
    }

    /// Output directory: explicit flag, then config, then environment, then the default.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Problem parameters including any rasters named in the config.
    pub fn problem_params(&self) -> Result<ProblemParams, CliError> {
        let mut p = self.params.clone();
        if let Some(m) = &self.mask {
            let mask = RasterMask::from_png(&m.path, extent(m)?).map_err(|e| CliError::Config(e.to_string()))?;
            p.mask = Some(mask);
        }
        if !self.targets.is_empty() {
            let t = self
                .targets
                .iter()
                .map(|r| GrayRaster::from_png(&r.path, extent(r)?).map_err(|e| CliError::Config(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            p.targets = Some(t);
        }
        Ok(p)
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig, CliError> {
        apply_optimizer(problems::default_optimizer(self.id()?), &self.optimizer)
    }

    /// `None` keeps the problem default.
    pub fn weighting(&self) -> Result<Option<Weighting>, CliError> {
        let l = &self.loss;
        let adaptive = match l.mode.as_deref() {
            None if l.epsilon.is_none() && l.cap.is_none() && l.every.is_none() => return Ok(None),
            None | Some("adaptive") => true,
            Some("fixed") => false,
            Some(other) => return Err(CliError::Config(format!("loss.mode: unknown mode '{other}'"))),
        };
        if !adaptive {
            if l.epsilon.is_some() || l.cap.is_some() || l.every.is_some() {
                return Err(CliError::Config("loss: epsilon, cap and every apply only to adaptive mode".into()));
            }
            return Ok(Some(Weighting::Fixed));
        }
        let Weighting::Adaptive { epsilon, cap, every } = Weighting::adaptive_default() else {
            unreachable!()
        };
        let (epsilon, cap, every) = (l.epsilon.unwrap_or(epsilon), l.cap.unwrap_or(cap), l.every.unwrap_or(every));
        if !(epsilon > 0.0) || !(cap > 0.0) || every == 0 {
            return Err(CliError::Config("loss: epsilon and cap must be positive, every at least 1".into()));
        }
        Ok(Some(Weighting::Adaptive { epsilon, cap, every }))
    }

    /// Builds the problem and applies optimizer and loss overrides.
    pub fn build(&self, params: &ProblemParams) -> Result<BuiltProblem, CliError> {
        let mut built = problems::build(self.id()?, params).map_err(|e| CliError::Config(e.to_string()))?;
        built.optimizer = self.optimizer_config()?;
        if let Some(w) = self.weighting()? {
            built.spec.weighting = w;
        }
        for (name, &w) in &self.loss.weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CliError::Config(format!("loss.weights.{name}: must be finite and non-negative")));
            }
            let term = built
                .spec
                .terms
                .iter_mut()
                .find(|t| &t.name == name)
                .ok_or_else(|| CliError::Config(format!("loss.weights.{name}: no such term")))?;
            term.weight = w;
        }
        Ok(built)
    }
}

fn extent(r: &RasterInput) -> Result<Extent, CliError> {
    let [a, b, c, d] = r.extent;
    Extent::new(a, b, c, d).map_err(|e| CliError::Config(format!("{}: {e}", r.path.display())))
}

fn apply_optimizer(default: OptimizerConfig, o: &OptimizerOverride) -> Result<OptimizerConfig, CliError> {
    let mut cfg = match o.kind.as_deref() {
        None => default,
        Some(k) => {
            let first = match default {
                OptimizerConfig::Adam(c) | OptimizerConfig::NAdam(c) => c,
                _ => FirstOrderConfig::new(0.01, 1000),
            };
            match k.to_ascii_lowercase().as_str() {
                "adam" => OptimizerConfig::Adam(first),
                "nadam" => OptimizerConfig::NAdam(first),
                "dogleg" => OptimizerConfig::Dogleg(SecondOrderConfig::dogleg()),
                "lm" | "levenberg-marquardt" => OptimizerConfig::LevenbergMarquardt(SecondOrderConfig::levenberg_marquardt()),
                other => return Err(CliError::Config(format!("optimizer.kind: unknown optimizer '{other}'"))),
            }
        }
    };
    let kind = cfg.name();
    let misplaced = |name: &str| CliError::Config(format!("optimizer.{name}: not used by {kind}"));
    match &mut cfg {
        OptimizerConfig::Adam(c) | OptimizerConfig::NAdam(c) => {
            for (name, set) in [("rtol", o.rtol.is_some()), ("atol", o.atol.is_some()), ("initial", o.initial.is_some())] {
                if set {
                    return Err(misplaced(name));
                }
            }
            if o.max_iters.is_some() {
                return Err(misplaced("max_iters"));
            }
            c.lr = o.lr.unwrap_or(c.lr);
            c.steps = o.steps.unwrap_or(c.steps);
            c.beta1 = o.beta1.unwrap_or(c.beta1);
            c.beta2 = o.beta2.unwrap_or(c.beta2);
            c.eps = o.eps.unwrap_or(c.eps);
            c.precondition = o.precondition.unwrap_or(c.precondition);
            c.l1 = o.l1.unwrap_or(c.l1);
            c.divergence_factor = o.divergence_factor.unwrap_or(c.divergence_factor);
        }
        OptimizerConfig::Dogleg(c) | OptimizerConfig::LevenbergMarquardt(c) => {
            let first_order = [
                ("lr", o.lr.is_some()),
                ("steps", o.steps.is_some()),
                ("beta1", o.beta1.is_some()),
                ("beta2", o.beta2.is_some()),
                ("eps", o.eps.is_some()),
                ("precondition", o.precondition.is_some()),
                ("l1", o.l1.is_some()),
                ("divergence_factor", o.divergence_factor.is_some()),
            ];
            if let Some((name, _)) = first_order.iter().find(|(_, set)| *set) {
                return Err(CliError::Config(format!("optimizer.{name}: not used by second-order solvers")));
            }
            c.rtol = o.rtol.unwrap_or(c.rtol);
            c.atol = o.atol.unwrap_or(c.atol);
            c.max_iters = o.max_iters.unwrap_or(c.max_iters);
            c.initial = o.initial.unwrap_or(c.initial);
        }
    }
    cfg.validate().map_err(|e| CliError::Config(format!("optimizer: {e}")))?;
    Ok(cfg)
}

//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `[model]`, `[grid]`,
//! `[objective]`, `[optimizer]` and `[output]`. Unknown keys are rejected, and
//! keys that do not apply to the chosen model kind are reported by name.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam::{BeamMaterial, BeamModel, BoundaryCondition};
use crate::error::{Error, Result};
use crate::models::PendulumParams;
use crate::numerics::{step_ratio, NewtonSettings};
use crate::optimizer::{BbVariant, HomotopySettings, ShootingSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Pendulum in the angle coordinate.
    Pendulum,
    /// Pendulum as a point on a circle in the plane.
    ConstrainedPendulum,
    Beam,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Pendulum => "pendulum",
            ModelKind::ConstrainedPendulum => "constrained-pendulum",
            ModelKind::Beam => "beam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Free,
    Pinned,
    Clamped,
}

impl From<Boundary> for BoundaryCondition {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Free => BoundaryCondition::Free,
            Boundary::Pinned => BoundaryCondition::Pinned,
            Boundary::Clamped => BoundaryCondition::Clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Pendulum length or beam length.
    pub length: Option<f64>,
    /// Magnitude of gravity, acting along `−y`.
    pub gravity: Option<f64>,
    pub mass: Option<f64>,
    pub initial_angle: Option<f64>,
    pub segments: Option<usize>,
    /// Side of the square cross-section.
    pub side: Option<f64>,
    pub youngs_modulus: Option<f64>,
    pub density: Option<f64>,
    pub poisson: Option<f64>,
    pub eta: Option<f64>,
    pub zeta: Option<f64>,
    pub alpha: Option<[f64; 4]>,
    pub left: Option<Boundary>,
    pub right: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: Option<usize>,
    pub step: Option<f64>,
    /// Coarse steps of a convergence study.
    pub step_sizes: Option<Vec<f64>>,
    /// Step of the reference solution of a convergence study.
    pub reference_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub s_q: f64,
    pub s_p: f64,
    pub r: f64,
    pub target_angle: f64,
    pub target_momentum: f64,
    /// Constant initial control guess; for the beam also the fixed first torque.
    pub initial_control: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { s_q: 0.0, s_p: 0.0, r: 0.0, target_angle: PI, target_momentum: 0.0, initial_control: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub bb_variant: BbVariant,
    pub step_fallback: Option<f64>,
    pub step_cap_factor: f64,
    pub max_halvings: usize,
    /// Defaults to on exactly when `objective.s_p > 0`.
    pub homotopy: Option<bool>,
    pub homotopy_beta: f64,
    pub homotopy_tolerance: f64,
    pub homotopy_max_outer: usize,
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let s = ShootingSettings::default();
        let h = HomotopySettings::default();
        let n = NewtonSettings::default();
        Self {
            max_iterations: s.max_iterations,
            gradient_tolerance: s.gradient_tolerance,
            bb_variant: s.bb_variant,
            step_fallback: s.step_fallback,
            step_cap_factor: s.step_cap_factor,
            max_halvings: s.max_halvings,
            homotopy: None,
            homotopy_beta: h.beta,
            homotopy_tolerance: h.tolerance,
            homotopy_max_outer: h.max_outer,
            newton_tolerance: n.residual_tolerance,
            newton_max_iterations: n.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; the command line `--out` takes precedence.
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing key `{key}`"))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml_str(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let pendulum_keys = [
            ("model.mass", m.mass.is_some()),
            ("model.initial_angle", m.initial_angle.is_some()),
        ];
        let beam_keys = [
            ("model.segments", m.segments.is_some()),
            ("model.side", m.side.is_some()),
            ("model.youngs_modulus", m.youngs_modulus.is_some()),
            ("model.density", m.density.is_some()),
            ("model.poisson", m.poisson.is_some()),
            ("model.eta", m.eta.is_some()),
            ("model.zeta", m.zeta.is_some()),
            ("model.alpha", m.alpha.is_some()),
            ("model.left", m.left.is_some()),
            ("model.right", m.right.is_some()),
        ];
        let foreign: &[(&str, bool)] = match m.kind {
            ModelKind::Beam => &pendulum_keys,
            _ => &beam_keys,
        };
        if let Some((key, _)) = foreign.iter().find(|(_, set)| *set) {
            return Err(Error::Config(format!("`{key}` does not apply to model kind `{}`", m.kind.name())));
        }
        if m.kind == ModelKind::Beam {
            for (key, set) in [
                ("objective.s_p", self.objective.s_p != 0.0),
                ("objective.target_momentum", self.objective.target_momentum != 0.0),
                ("objective.target_angle", self.objective.target_angle != PI),
            ] {
                if set {
                    return Err(Error::Config(format!("`{key}` does not apply to model kind `beam`")));
                }
            }
        }
        positive("grid.horizon", self.grid.horizon)?;
        self.step()?;
        if self.grid.step_sizes.is_some() || self.grid.reference_step.is_some() {
            self.convergence_steps()?;
        }
        let o = &self.objective;
        non_negative("objective.s_q", o.s_q)?;
        non_negative("objective.s_p", o.s_p)?;
        non_negative("objective.r", o.r)?;
        for (key, v) in [("objective.target_angle", o.target_angle), ("objective.initial_control", o.initial_control)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("`{key}` must be finite")));
            }
        }
        self.shooting_settings()?.validate()?;
        self.newton_settings().validate()?;
        match m.kind {
            ModelKind::Beam => self.beam_model().map(|_| ()),
            _ => self.pendulum_params().and_then(|p| p.validate()),
        }
    }

    /// Time step, from `grid.steps` or `grid.step`; both must agree with the
    /// horizon when given together. A convergence study without either runs
    /// at its reference step.
    pub fn step(&self) -> Result<f64> {
        let g = &self.grid;
        let h = match (g.steps, g.step) {
            (None, None) => match (&g.step_sizes, g.reference_step) {
                (Some(_), Some(h)) => positive("grid.reference_step", h)?,
                _ => return Err(missing("grid.steps")),
            },
            (Some(0), _) => return Err(Error::Config("`grid.steps` must be positive".into())),
            (Some(n), None) => g.horizon / n as f64,
            (None, Some(h)) => positive("grid.step", h)?,
            (Some(n), Some(h)) => {
                positive("grid.step", h)?;
                if (h * n as f64 - g.horizon).abs() > 1e-9 * g.horizon {
                    return Err(Error::Config(format!(
                        "`grid.step` {h} times `grid.steps` {n} differs from `grid.horizon` {}",
                        g.horizon
                    )));
                }
                h
            }
        };
        let n = (g.horizon / h).round();
        if n < 1.0 || (n * h - g.horizon).abs() > 1e-9 * g.horizon {
            return Err(Error::Config(format!("`grid.step` {h} does not divide `grid.horizon` {}", g.horizon)));
        }
        Ok(h)
    }

    pub fn steps(&self) -> Result<usize> {
        Ok((self.grid.horizon / self.step()?).round() as usize)
    }

    /// Coarse steps (strictly decreasing) and the reference step.
    pub fn convergence_steps(&self) -> Result<(Vec<f64>, f64)> {
        let sizes = self.grid.step_sizes.clone().ok_or_else(|| missing("grid.step_sizes"))?;
        let reference = positive("grid.reference_step", self.grid.reference_step.ok_or_else(|| missing("grid.reference_step"))?)?;
        if sizes.len() < 3 {
            return Err(Error::Config("`grid.step_sizes` needs at least three entries".into()));
        }
        for &h in &sizes {
            positive("grid.step_sizes", h)?;
            step_ratio(h, reference).map_err(|_| {
                Error::Config(format!("`grid.step_sizes` entry {h} is not a multiple of `grid.reference_step` {reference}"))
            })?;
            PendulumParams { h, horizon: self.grid.horizon, ..PendulumParams::default() }
                .steps()
                .map_err(|_| Error::Config(format!("`grid.step_sizes` entry {h} does not divide `grid.horizon`")))?;
        }
        if sizes.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("`grid.step_sizes` must be strictly decreasing".into()));
        }
        if sizes.iter().any(|&h| h < reference) {
            return Err(Error::Config("`grid.reference_step` must not be coarser than any `grid.step_sizes` entry".into()));
        }
        Ok((sizes, reference))
    }

    pub fn pendulum_params(&self) -> Result<PendulumParams> {
        let m = &self.model;
        if m.kind == ModelKind::Beam {
            return Err(Error::Config("`model.kind` must be a pendulum".into()));
        }
        let d = PendulumParams::default();
        Ok(PendulumParams {
            m: positive("model.mass", m.mass.unwrap_or(d.m))?,
            l: positive("model.length", m.length.unwrap_or(d.l))?,
            grav: positive("model.gravity", m.gravity.unwrap_or(d.grav))?,
            h: self.step()?,
            horizon: self.grid.horizon,
        })
    }

    pub fn initial_angle(&self) -> f64 {
        self.model.initial_angle.unwrap_or(0.0)
    }

    pub fn beam_material(&self) -> Result<BeamMaterial> {
        let m = &self.model;
        if m.kind != ModelKind::Beam {
            return Err(Error::Config("`model.kind` must be `beam`".into()));
        }
        let side = positive("model.side", m.side.ok_or_else(|| missing("model.side"))?)?;
        let e = positive("model.youngs_modulus", m.youngs_modulus.ok_or_else(|| missing("model.youngs_modulus"))?)?;
        let rho = positive("model.density", m.density.ok_or_else(|| missing("model.density"))?)?;
        let nu = m.poisson.ok_or_else(|| missing("model.poisson"))?;
        if !(nu > -1.0 && nu < 0.5) {
            return Err(Error::Config(format!("`model.poisson` must lie in (−1, 0.5), got {nu}")));
        }
        let eta = non_negative("model.eta", m.eta.unwrap_or(0.0))?;
        let zeta = non_negative("model.zeta", m.zeta.unwrap_or(0.0))?;
        let mut mat = BeamMaterial::square(side, e, nu, rho, eta, zeta);
        mat.alpha = m.alpha.unwrap_or([0.0; 4]);
        mat.gravity.y = -non_negative("model.gravity", m.gravity.unwrap_or(9.81))?;
        mat.validate().map_err(|e| Error::Config(format!("[model]: {e}")))?;
        Ok(mat)
    }

    pub fn beam_model(&self) -> Result<BeamModel> {
        let m = &self.model;
        let segments = m.segments.ok_or_else(|| missing("model.segments"))?;
        if segments == 0 {
            return Err(Error::Config("`model.segments` must be positive".into()));
        }
        let length = positive("model.length", m.length.unwrap_or(1.0))?;
        BeamModel::new(
            self.beam_material()?,
            length,
            segments,
            self.step()?,
            m.left.unwrap_or(Boundary::Pinned).into(),
            m.right.unwrap_or(Boundary::Free).into(),
        )
    }

    pub fn newton_settings(&self) -> NewtonSettings {
        NewtonSettings {
            residual_tolerance: self.optimizer.newton_tolerance,
            max_iterations: self.optimizer.newton_max_iterations,
            ..NewtonSettings::default()
        }
    }

    pub fn homotopy_enabled(&self) -> bool {
        self.optimizer.homotopy.unwrap_or(self.objective.s_p > 0.0)
    }

    pub fn shooting_settings(&self) -> Result<ShootingSettings> {
        let o = &self.optimizer;
        let homotopy = self.homotopy_enabled().then_some(HomotopySettings {
            beta: o.homotopy_beta,
            tolerance: o.homotopy_tolerance,
            max_outer: o.homotopy_max_outer,
        });
        let s = ShootingSettings {
            max_iterations: o.max_iterations,
            gradient_tolerance: o.gradient_tolerance,
            bb_variant: o.bb_variant,
            step_fallback: o.step_fallback,
            step_cap_factor: o.step_cap_factor,
            max_halvings: o.max_halvings,
            homotopy,
        };
        s.validate().map_err(|e| Error::Config(format!("[optimizer]: {e}")))?;
        Ok(s)
    }
}

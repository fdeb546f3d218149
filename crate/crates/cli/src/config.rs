//! Run configuration: a flat `key = value` document with `[section]`
//! headers (the table-free subset of TOML). Every key is optional unless the
//! chosen command needs it; unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("cannot read config: {0}")]
    Read(String),
}

impl ConfigError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    SolveElliptic,
    SolveParabolic,
    SolveTransport,
    KernelTable,
    Convergence,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Verify => "verify",
            Command::SolveElliptic => "solve-elliptic",
            Command::SolveParabolic => "solve-parabolic",
            Command::SolveTransport => "solve-transport",
            Command::KernelTable => "kernel-table",
            Command::Convergence => "convergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub collar: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            a: -1.0,
            b: 1.0,
            h: 1.0 / 32.0,
            collar: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kernel {
    pub s: Option<f64>,
    pub n: usize,
}

impl Default for Kernel {
    fn default() -> Self {
        Self { s: None, n: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorKind {
    Identity,
    Constant,
    Sinusoidal,
}

/// `identity`, `constant` (`A = value·I`) or `sinusoidal`
/// (`A = (mean + amplitude·sin x₁) I`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tensor {
    pub kind: TensorKind,
    pub value: f64,
    pub mean: f64,
    pub amplitude: f64,
}

impl Default for Tensor {
    fn default() -> Self {
        Self {
            kind: TensorKind::Identity,
            value: 1.0,
            mean: 2.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Advection {
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    Zero,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Forcing {
    pub kind: ForcingKind,
    pub value: f64,
}

impl Default for Forcing {
    fn default() -> Self {
        Self {
            kind: ForcingKind::Zero,
            value: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Bump,
    Plume,
}

/// `bump` (smooth, supported in `|x - center| < radius`) or `plume`
/// (Gaussian of width `sigma`, cut to zero beyond `radius`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Initial {
    pub kind: Option<InitialKind>,
    pub center: f64,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for Initial {
    fn default() -> Self {
        Self {
            kind: None,
            center: 0.0,
            radius: 1.0,
            sigma: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Time {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub theta: f64,
    pub stride: usize,
}

impl Default for Time {
    fn default() -> Self {
        Self {
            t_end: None,
            dt: None,
            theta: 1.0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quadrature {
    pub panels: usize,
    pub levels: u32,
    pub tolerance: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            panels: 4,
            levels: 12,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Getoor,
    ZeroLoad,
}

/// Mesh sizes `h_max, h_max/2, …` (`levels` of them) on `(-1, 1)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Convergence {
    pub problem: ProblemKind,
    pub h_max: f64,
    pub levels: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Getoor,
            h_max: 1.0 / 16.0,
            levels: 4,
        }
    }
}

/// Separations `|x - z|` sampled uniformly in `[r_min, r_max]` with `x = 0`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelTable {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

impl Default for KernelTable {
    fn default() -> Self {
        Self {
            r_min: 0.1,
            r_max: 2.0,
            points: 20,
        }
    }
}

/// Overrides of the verification tolerance table.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesOverride {
    pub operator_equivalence: Option<f64>,
    pub kernel_ratio: Option<f64>,
    pub kernel_symmetry: Option<f64>,
    pub rayleigh_slack: Option<f64>,
    pub rayleigh_agreement: Option<f64>,
    pub ledger_slack: Option<f64>,
    pub green: Option<f64>,
    pub weight_transformation: Option<f64>,
    pub transport_skew: Option<f64>,
    pub matrix_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub serial: bool,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub tensor: Tensor,
    #[serde(default)]
    pub advection: Advection,
    #[serde(default)]
    pub forcing: Forcing,
    #[serde(default)]
    pub initial: Initial,
    #[serde(default)]
    pub time: Time,
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default)]
    pub convergence: Convergence,
    #[serde(default)]
    pub kernel_table: KernelTable,
    #[serde(default)]
    pub tolerances: TolerancesOverride,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    7
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            field,
            format!("must be a positive number, got {v}"),
        ))
    }
}

fn required<T: Copy>(field: &'static str, v: Option<T>, command: Command) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::invalid(field, format!("required by `{command}`")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = self.command;
        let d = &self.domain;
        if !(d.a.is_finite() && d.b.is_finite() && d.a < d.b) {
            return Err(ConfigError::invalid(
                "domain.a",
                format!("need a < b, got ({}, {})", d.a, d.b),
            ));
        }
        positive("domain.h", d.h)?;
        if d.h > d.b - d.a {
            return Err(ConfigError::invalid("domain.h", "mesh size exceeds the domain length"));
        }
        if !(d.collar.is_finite() && d.collar >= 0.0) {
            return Err(ConfigError::invalid("domain.collar", "must be non-negative"));
        }

        let needs_s = !matches!(c, Command::Verify);
        if let Some(s) = self.kernel.s {
            if !(s > 0.0 && s < 1.0) {
                return Err(ConfigError::invalid(
                    "s",
                    format!("fractional order must lie in (0, 1), got {s}"),
                ));
            }
            if c == Command::SolveTransport && s < 0.5 {
                return Err(ConfigError::invalid(
                    "s",
                    format!("transport requires s in [0.5, 1) so diffusion controls the drift, got {s}"),
                ));
            }
        } else if needs_s {
            required("s", self.kernel.s, c)?;
        }
        let max_n = if c == Command::KernelTable { 2 } else { 1 };
        if self.kernel.n == 0 || self.kernel.n > max_n {
            return Err(ConfigError::invalid(
                "kernel.n",
                format!("`{c}` supports n in 1..={max_n}, got {}", self.kernel.n),
            ));
        }

        let t = &self.tensor;
        match t.kind {
            TensorKind::Identity => {}
            TensorKind::Constant => positive("tensor.value", t.value)?,
            TensorKind::Sinusoidal => {
                if !(t.mean.is_finite() && t.amplitude.is_finite() && t.mean - t.amplitude.abs() > 0.0) {
                    return Err(ConfigError::invalid(
                        "tensor.amplitude",
                        "need mean - |amplitude| > 0 for ellipticity",
                    ));
                }
            }
        }

        if c == Command::SolveTransport {
            let v = required("advection.speed", self.advection.speed, c)?;
            if !v.is_finite() {
                return Err(ConfigError::invalid("advection.speed", "must be finite"));
            }
        } else if self.advection.speed.is_some() {
            return Err(ConfigError::invalid(
                "advection.speed",
                format!("only used by `solve-transport`, not `{c}`"),
            ));
        }

        if !self.forcing.value.is_finite() {
            return Err(ConfigError::invalid("forcing.value", "must be finite"));
        }

        if matches!(c, Command::SolveParabolic | Command::SolveTransport) {
            required("initial.kind", self.initial.kind, c)?;
            positive("initial.radius", self.initial.radius)?;
            positive("initial.sigma", self.initial.sigma)?;
            if !self.initial.center.is_finite() {
                return Err(ConfigError::invalid("initial.center", "must be finite"));
            }
            positive("time.t_end", required("time.t_end", self.time.t_end, c)?)?;
            positive("time.dt", required("time.dt", self.time.dt, c)?)?;
            if !(0.0..=1.0).contains(&self.time.theta) {
                return Err(ConfigError::invalid(
                    "time.theta",
                    format!("must lie in [0, 1], got {}", self.time.theta),
                ));
            }
            if self.time.stride == 0 {
                return Err(ConfigError::invalid("time.stride", "must be at least 1"));
            }
        }

        let q = &self.quadrature;
        if q.panels == 0 {
            return Err(ConfigError::invalid("quadrature.panels", "must be at least 1"));
        }
        if q.levels == 0 {
            return Err(ConfigError::invalid("quadrature.levels", "must be at least 1"));
        }
        positive("quadrature.tolerance", q.tolerance)?;

        if c == Command::Convergence {
            positive("convergence.h_max", self.convergence.h_max)?;
            if self.convergence.levels < 2 {
                return Err(ConfigError::invalid(
                    "convergence.levels",
                    "need at least two mesh sizes",
                ));
            }
        }
        if c == Command::KernelTable {
            let k = &self.kernel_table;
            positive("kernel_table.r_min", k.r_min)?;
            if !(k.r_max.is_finite() && k.r_max >= k.r_min) {
                return Err(ConfigError::invalid("kernel_table.r_max", "must be at least r_min"));
            }
            if k.points == 0 {
                return Err(ConfigError::invalid("kernel_table.points", "must be at least 1"));
            }
        }

        let o = &self.tolerances;
        for (field, v) in [
            ("tolerances.operator_equivalence", o.operator_equivalence),
            ("tolerances.kernel_ratio", o.kernel_ratio),
            ("tolerances.kernel_symmetry", o.kernel_symmetry),
            ("tolerances.rayleigh_slack", o.rayleigh_slack),
            ("tolerances.rayleigh_agreement", o.rayleigh_agreement),
            ("tolerances.ledger_slack", o.ledger_slack),
            ("tolerances.green", o.green),
            ("tolerances.weight_transformation", o.weight_transformation),
            ("tolerances.transport_skew", o.transport_skew),
            ("tolerances.matrix_factor", o.matrix_factor),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        Ok(())
    }

    pub fn s(&self) -> f64 {
        self.kernel.s.unwrap_or(0.5)
    }
}

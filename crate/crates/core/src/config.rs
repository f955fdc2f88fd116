//! Declarative run configuration shared by the command-line tools.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::experiments::{CaseId, Control, Controls, Formulation, StudySpec};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::measurements::MeasurementTarget;
use crate::solvers::SolverConfig;

/// Rejected configuration with the offending location.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ConfigError {
    /// Dotted field path, or `line L column C` for syntax errors.
    pub location: String,
    pub message: String,
}

impl ConfigError {
    fn at(location: &str, message: impl Into<String>) -> Self {
        Self {
            location: location.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    /// Defaults per case: 0.2 in 1D, 0.3 in 2D.
    #[serde(default)]
    pub lengthscale: Option<f64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Taken from the case when omitted.
    #[serde(default)]
    pub dim: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: default_family(),
            lengthscale: None,
            amplitude: 1.0,
            dim: None,
        }
    }
}

fn default_family() -> KernelFamily {
    KernelFamily::Gaussian
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub control: Control,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// Random point pairs per operator pair.
    pub trials: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { trials: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Fill the `seconds` column; leave off for reproducible output.
    pub record_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub case: Option<CaseId>,
    /// Defaults to the case's natural formulation.
    #[serde(default)]
    pub formulation: Option<Formulation>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub controls: Controls,
    /// Explicit measurements replacing the generated ones.
    #[serde(default)]
    pub measurements: Option<Vec<MeasurementTarget>>,
    #[serde(default)]
    pub study: Option<SweepConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default = "default_eval_grid")]
    pub eval_grid: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_eval_grid() -> usize {
    200
}

impl RunConfig {
    /// Parse and validate. Syntax errors carry line and column, type
    /// errors the field path.
    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let location = if path.is_empty() || path == "." {
                format!("line {} column {}", inner.line(), inner.column())
            } else {
                format!("{path} (line {} column {})", inner.line(), inner.column())
            };
            ConfigError::at(&location, inner.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(RunConfig)).expect("schema serializes")
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let k = &self.kernel;
        if let Some(l) = k.lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ConfigError::at(
                    "kernel.lengthscale",
                    format!("must be positive, got {l}"),
                ));
            }
        }
        if !(k.amplitude > 0.0 && k.amplitude.is_finite()) {
            return Err(ConfigError::at(
                "kernel.amplitude",
                format!("must be positive, got {}", k.amplitude),
            ));
        }
        if let Some(d) = k.dim {
            if !(1..=2).contains(&d) {
                return Err(ConfigError::at("kernel.dim", format!("must be 1 or 2, got {d}")));
            }
            if let Some(case) = self.case {
                if case.default_kernel().dim != d {
                    return Err(ConfigError::at(
                        "kernel.dim",
                        format!("{} is {}-dimensional", case.name(), case.default_kernel().dim),
                    ));
                }
            }
        }
        self.solver
            .validate()
            .map_err(|e| ConfigError::at("solver", strip_input(e.to_string())))?;
        self.controls
            .validate()
            .map_err(|e| ConfigError::at("controls", strip_input(e.to_string())))?;
        if self.eval_grid == 0 {
            return Err(ConfigError::at("eval_grid", "must be at least 1"));
        }
        if self.validation.trials == 0 {
            return Err(ConfigError::at("validation.trials", "must be at least 1"));
        }
        if let Some(ms) = &self.measurements {
            if ms.is_empty() {
                return Err(ConfigError::at("measurements", "must not be empty"));
            }
            for (i, m) in ms.iter().enumerate() {
                m.test_fn
                    .validate()
                    .map_err(|e| ConfigError::at(&format!("measurements[{i}]"), strip_input(e.to_string())))?;
                if !(m.tolerance >= 0.0) {
                    return Err(ConfigError::at(
                        &format!("measurements[{i}].tolerance"),
                        "must be nonnegative",
                    ));
                }
            }
        }
        if let Some(study) = &self.study {
            let spec = StudySpec {
                sweep: study.values.clone(),
                ..self.study_shell(study)
            };
            spec.validate()
                .map_err(|e| ConfigError::at("study", strip_input(e.to_string())))?;
        }
        Ok(())
    }

    fn study_shell(&self, study: &SweepConfig) -> StudySpec {
        let case = self.case.unwrap_or(CaseId::CubicDirichlet1d);
        let mut spec = StudySpec::new(case, study.control, study.values.clone());
        if let Some(f) = self.formulation {
            spec.formulation = f;
        }
        spec.fixed = self.controls.clone();
        spec.solver = self.solver.clone();
        spec.eval_grid = self.eval_grid;
        spec.record_wall_time = self.output.record_wall_time;
        spec
    }

    pub fn require_case(&self) -> std::result::Result<CaseId, ConfigError> {
        self.case
            .ok_or_else(|| ConfigError::at("case", "required for this command"))
    }

    pub fn effective_formulation(&self) -> std::result::Result<Formulation, ConfigError> {
        Ok(self.formulation.unwrap_or(self.require_case()?.default_formulation()))
    }

    /// Kernel with case defaults filled in.
    pub fn kernel_spec(&self) -> std::result::Result<KernelSpec, ConfigError> {
        let base = match self.case {
            Some(c) => c.default_kernel(),
            None => KernelSpec::gaussian(0.2, self.kernel.dim.unwrap_or(1)).expect("valid"),
        };
        let spec = KernelSpec {
            family: self.kernel.family,
            lengthscale: self.kernel.lengthscale.unwrap_or(base.lengthscale),
            amplitude: self.kernel.amplitude,
            dim: self.kernel.dim.unwrap_or(base.dim),
        };
        spec.validate()
            .map_err(|e| ConfigError::at("kernel", strip_input(e.to_string())))?;
        Ok(spec)
    }

    pub fn study_spec(&self) -> std::result::Result<StudySpec, ConfigError> {
        self.require_case()?;
        let study = self
            .study
            .as_ref()
            .ok_or_else(|| ConfigError::at("study", "required for this command"))?;
        let spec = StudySpec {
            kernel: self.kernel_spec()?,
            ..self.study_shell(study)
        };
        spec.validate()
            .map_err(|e| ConfigError::at("study", strip_input(e.to_string())))?;
        Ok(spec)
    }
}

fn strip_input(msg: String) -> String {
    msg.strip_prefix("invalid input: ").map(str::to_string).unwrap_or(msg)
}

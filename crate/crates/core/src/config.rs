//! Declarative experiment descriptions, as read from a JSON document.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, TabulatedKernel};
use crate::phi::{closed_form_phi, solve_phi_volterra, PhiFunction};
use crate::point_process::{IntensitySpec, MarkDistributionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Estimate,
    Trajectory,
    VerifyGirsanov,
    Consistency,
    SolvePhi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Indicator,
    ExpShotNoise { a: f64 },
    Fractional { hurst: f64 },
    /// CSV with header `t,s,value`; relative paths resolve against the
    /// directory holding the config file.
    Tabulated { path: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSource {
    #[default]
    ClosedForm,
    Volterra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityConfig {
    Constant {
        base_rate: f64,
    },
    /// `base_rate · (1 + θ φ(s))` with `φ` calibrated against `base_rate`.
    ScaledByPhi {
        base_rate: f64,
        theta: f64,
        #[serde(default)]
        phi_source: PhiSource,
    },
}

impl IntensityConfig {
    pub fn base_rate(&self) -> f64 {
        match self {
            IntensityConfig::Constant { base_rate } | IntensityConfig::ScaledByPhi { base_rate, .. } => {
                *base_rate
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarksConfig {
    Unit,
    Exponential { mean: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        let mut v: Vec<f64> = (0..self.count).map(|i| self.start + step * i as f64).collect();
        // pin the end exactly so it can equal the horizon
        v[self.count - 1] = self.stop;
        v
    }
}

/// The change-of-measure shift `h = scale · φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub scale: f64,
    #[serde(default)]
    pub phi_source: PhiSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub kernel: KernelConfig,
    pub intensity: IntensityConfig,
    pub marks: MarksConfig,
    pub horizon: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub theta_true: Option<f64>,
    #[serde(default)]
    pub h_spec: Option<ShiftConfig>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_output_path")]
    pub output_path: String,
    /// Evaluation times of the law comparison.
    #[serde(default)]
    pub eval_times: Option<Vec<f64>>,
    /// Horizons of the consistency experiment.
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default)]
    pub rmse_threshold: Option<f64>,
    #[serde(default)]
    pub bootstrap_resamples: Option<usize>,
}

fn default_replicas() -> usize {
    1
}

fn default_output_path() -> String {
    "fpp-lab-out".into()
}

pub const DEFAULT_GRID_START: f64 = 0.01;
pub const DEFAULT_GRID_COUNT: usize = 2000;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
/// Final-horizon RMSE bound of the consistency experiment, frozen from a
/// pilot run of the fractional `H = 0.7` case.
pub const DEFAULT_RMSE_THRESHOLD: f64 = 0.2;

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let t = c.horizon;
        c.grid.get_or_insert(GridConfig {
            start: DEFAULT_GRID_START,
            stop: t,
            count: DEFAULT_GRID_COUNT,
        });
        match c.experiment {
            ExperimentKind::VerifyGirsanov => {
                c.eval_times.get_or_insert_with(|| vec![0.2 * t, 0.5 * t, t]);
                c.bootstrap_resamples.get_or_insert(DEFAULT_BOOTSTRAP_RESAMPLES);
            }
            ExperimentKind::Consistency => {
                c.horizons.get_or_insert_with(|| vec![0.05 * t, 0.2 * t, t]);
                c.rmse_threshold.get_or_insert(DEFAULT_RMSE_THRESHOLD);
            }
            _ => {}
        }
        c
    }

    /// Checks the config and builds the typed specifications. `base_dir`
    /// anchors relative file references.
    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared> {
        let config = self.resolved();
        config.check_scalars()?;
        let kernel = match &config.kernel {
            KernelConfig::Indicator => KernelSpec::Indicator,
            KernelConfig::ExpShotNoise { a } => KernelSpec::ExpShotNoise { a: *a },
            KernelConfig::Fractional { hurst } => KernelSpec::Fractional { hurst: *hurst },
            KernelConfig::Tabulated { path } => {
                let full = resolve_path(base_dir, path);
                let file = File::open(&full)
                    .map_err(|e| invalid(format!("cannot open kernel table {}: {e}", full.display())))?;
                KernelSpec::Tabulated(TabulatedKernel::read_csv(BufReader::new(file))?)
            }
        };
        kernel.validate().map_err(|e| invalid(format!("kernel: {e}")))?;
        let marks = match config.marks {
            MarksConfig::Unit => MarkDistributionSpec::Unit,
            MarksConfig::Exponential { mean } => MarkDistributionSpec::Exponential { mean },
            MarksConfig::Lognormal { mu, sigma } => MarkDistributionSpec::LogNormal { mu, sigma },
        };
        marks.validate().map_err(|e| invalid(format!("marks: {e}")))?;
        let grid = config.grid.expect("resolved").points();

        let mut sources = Vec::new();
        if let IntensityConfig::ScaledByPhi { theta, phi_source, .. } = config.intensity {
            if !(theta >= 0.0 && theta.is_finite()) {
                return Err(invalid(format!("intensity.theta must be >= 0, got {theta}")));
            }
            sources.push(phi_source);
        }
        if let Some(h) = config.h_spec {
            if !h.scale.is_finite() {
                return Err(invalid("h_spec.scale must be finite"));
            }
            sources.push(h.phi_source);
        }
        for source in sources {
            check_phi_source(source, &kernel, &grid, config.horizon)?;
        }

        match config.experiment {
            ExperimentKind::Estimate | ExperimentKind::Trajectory | ExperimentKind::Consistency => {
                if !matches!(config.intensity, IntensityConfig::Constant { .. }) {
                    return Err(invalid(
                        "estimation experiments take the constant base intensity; the drift comes from theta_true",
                    ));
                }
                let theta = config
                    .theta_true
                    .ok_or_else(|| invalid("theta_true is required for this experiment"))?;
                if !(theta >= 0.0 && theta.is_finite()) {
                    return Err(invalid(format!("theta_true must be >= 0, got {theta}")));
                }
                check_phi_source(config.estimation_phi_source(), &kernel, &grid, config.horizon)?;
            }
            _ => {}
        }
        match config.experiment {
            ExperimentKind::Trajectory => {
                if grid[config.grid.unwrap().count - 1] > config.horizon {
                    return Err(invalid("trajectory grid must lie within (0, horizon]"));
                }
            }
            ExperimentKind::VerifyGirsanov => {
                if config.h_spec.is_none() {
                    return Err(invalid("verify-girsanov needs h_spec"));
                }
                if !kernel.is_diagonal_degenerate() {
                    return Err(Error::Precondition(format!(
                        "the change of measure needs a kernel that vanishes on the diagonal, K(t,t) = 0; {} does not",
                        config.kernel.name()
                    )));
                }
                let times = config.eval_times.as_ref().expect("resolved");
                check_times("eval_times", times, config.horizon)?;
                if config.bootstrap_resamples == Some(0) {
                    return Err(invalid("bootstrap_resamples must be positive"));
                }
            }
            ExperimentKind::Consistency => {
                if config.theta_true.unwrap_or(0.0) <= 0.0 {
                    return Err(invalid("consistency needs theta_true > 0"));
                }
                check_times("horizons", config.horizons.as_ref().expect("resolved"), config.horizon)?;
                let r = config.rmse_threshold.expect("resolved");
                if !(r > 0.0 && r.is_finite()) {
                    return Err(invalid(format!("rmse_threshold must be positive, got {r}")));
                }
            }
            _ => {}
        }
        Ok(Prepared {
            config,
            kernel,
            marks,
            grid,
        })
    }

    fn check_scalars(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas must be at least 1"));
        }
        let rate = self.intensity.base_rate();
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("intensity.base_rate must be positive, got {rate}")));
        }
        let g = self.grid.expect("resolved");
        if !(g.start > 0.0 && g.stop > g.start && g.stop.is_finite() && g.count >= 2) {
            return Err(invalid(format!(
                "grid needs 0 < start < stop and count >= 2, got {g:?}"
            )));
        }
        Ok(())
    }

    /// Source of `φ` used by the estimator: the shift's if given, else
    /// the closed form.
    pub fn estimation_phi_source(&self) -> PhiSource {
        self.h_spec.map(|h| h.phi_source).unwrap_or_default()
    }
}

impl KernelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            KernelConfig::Indicator => "indicator",
            KernelConfig::ExpShotNoise { .. } => "exp_shot_noise",
            KernelConfig::Fractional { .. } => "fractional",
            KernelConfig::Tabulated { .. } => "tabulated",
        }
    }
}

fn resolve_path(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn check_phi_source(source: PhiSource, kernel: &KernelSpec, grid: &[f64], horizon: f64) -> Result<()> {
    match source {
        PhiSource::ClosedForm if matches!(kernel, KernelSpec::Tabulated(_)) => Err(invalid(
            "phi_source closed_form is unavailable for tabulated kernels; use volterra",
        )),
        PhiSource::Volterra if grid[grid.len() - 1] < horizon => Err(invalid(
            "phi_source volterra needs grid.stop >= horizon so phi is known on the whole window",
        )),
        _ => Ok(()),
    }
}

fn check_times(name: &str, times: &[f64], horizon: f64) -> Result<()> {
    if times.is_empty()
        || !(times[0] > 0.0)
        || times.windows(2).any(|w| !(w[0] < w[1]))
        || times[times.len() - 1] > horizon
    {
        return Err(invalid(format!(
            "{name} must be nonempty, strictly increasing and inside (0, horizon]"
        )));
    }
    Ok(())
}

/// A validated config with its typed specifications.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub kernel: KernelSpec,
    pub marks: MarkDistributionSpec,
    pub grid: Vec<f64>,
}

impl Prepared {
    pub fn m1(&self) -> f64 {
        self.marks.mean()
    }

    pub fn base_rate(&self) -> f64 {
        self.config.intensity.base_rate()
    }

    /// `φ` calibrated against the constant base rate.
    pub fn phi(&self, source: PhiSource) -> Result<PhiFunction> {
        match source {
            PhiSource::ClosedForm => closed_form_phi(&self.kernel, self.base_rate(), self.m1()),
            PhiSource::Volterra => solve_phi_volterra(
                &self.kernel,
                &IntensitySpec::constant(self.base_rate())?,
                self.m1(),
                &self.grid,
            ),
        }
    }

    /// The configured intensity of the reference measure.
    pub fn intensity(&self) -> Result<IntensitySpec> {
        match self.config.intensity {
            IntensityConfig::Constant { base_rate } => IntensitySpec::constant(base_rate),
            IntensityConfig::ScaledByPhi {
                base_rate,
                theta,
                phi_source,
            } => IntensitySpec::scaled_by_phi(base_rate, theta, self.phi(phi_source)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GIRSANOV: &str = r#"{
        "experiment": "verify-girsanov",
        "kernel": {"kind": "fractional", "hurst": 0.7},
        "intensity": {"kind": "constant", "base_rate": 1.0},
        "marks": {"kind": "unit"},
        "horizon": 5.0,
        "h_spec": {"scale": 0.3},
        "replicas": 2000,
        "seed": 11
    }"#;

    #[test]
    fn parses_and_resolves_defaults() {
        let c = ExperimentConfig::from_json_str(GIRSANOV).unwrap();
        assert_eq!(c.experiment, ExperimentKind::VerifyGirsanov);
        let r = c.resolved();
        assert_eq!(r.eval_times, Some(vec![1.0, 2.5, 5.0]));
        assert_eq!(r.bootstrap_resamples, Some(1000));
        assert_eq!(r.grid.unwrap().count, DEFAULT_GRID_COUNT);
        assert_eq!(r.h_spec.unwrap().phi_source, PhiSource::ClosedForm);
        let p = c.prepare(Path::new(".")).unwrap();
        assert_eq!(p.kernel, KernelSpec::Fractional { hurst: 0.7 });
        assert_eq!(p.grid.len(), 2000);
        assert_eq!(*p.grid.last().unwrap(), 5.0);
    }

    #[test]
    fn resolved_config_round_trips() {
        let r = ExperimentConfig::from_json_str(GIRSANOV).unwrap().resolved();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), r);
    }

    #[test]
    fn rejects_unknown_keys() {
        let extra = GIRSANOV.replace("\"seed\": 11", "\"seed\": 11, \"sede\": 3");
        assert!(matches!(ExperimentConfig::from_json_str(&extra), Err(Error::Json(_))));
        let nested = GIRSANOV.replace("\"hurst\": 0.7", "\"hurst\": 0.7, \"a\": 1");
        assert!(ExperimentConfig::from_json_str(&nested).is_err());
    }

    #[test]
    fn rejects_inconsistent_values() {
        let bad_h = GIRSANOV.replace("0.7", "1.2");
        let c = ExperimentConfig::from_json_str(&bad_h).unwrap();
        assert!(matches!(c.prepare(Path::new(".")), Err(Error::Config(_))));
        let indicator = GIRSANOV.replace(r#"{"kind": "fractional", "hurst": 0.7}"#, r#"{"kind": "indicator"}"#);
        let c = ExperimentConfig::from_json_str(&indicator).unwrap();
        assert!(matches!(c.prepare(Path::new(".")), Err(Error::Precondition(_))));
        let late = GIRSANOV.replace("\"replicas\"", "\"eval_times\": [1, 6], \"replicas\"");
        let c = ExperimentConfig::from_json_str(&late).unwrap();
        assert!(c.prepare(Path::new(".")).is_err());
        let no_shift = GIRSANOV.replace("\"h_spec\": {\"scale\": 0.3},", "");
        let c = ExperimentConfig::from_json_str(&no_shift).unwrap();
        assert!(c.prepare(Path::new(".")).is_err());
    }

    #[test]
    fn estimation_needs_theta_and_constant_intensity() {
        let base = GIRSANOV.replace("verify-girsanov", "estimate");
        let c = ExperimentConfig::from_json_str(&base).unwrap();
        assert!(c.prepare(Path::new(".")).is_err());
        let with_theta = base.replace("\"seed\": 11", "\"seed\": 11, \"theta_true\": 1.0");
        assert!(ExperimentConfig::from_json_str(&with_theta)
            .unwrap()
            .prepare(Path::new("."))
            .is_ok());
        let scaled = with_theta.replace(
            r#"{"kind": "constant", "base_rate": 1.0}"#,
            r#"{"kind": "scaled_by_phi", "base_rate": 1.0, "theta": 1.0}"#,
        );
        assert!(ExperimentConfig::from_json_str(&scaled)
            .unwrap()
            .prepare(Path::new("."))
            .is_err());
    }

    #[test]
    fn scaled_intensity_resolves_phi() {
        let text = GIRSANOV
            .replace("verify-girsanov", "simulate")
            .replace(
                r#"{"kind": "constant", "base_rate": 1.0}"#,
                r#"{"kind": "scaled_by_phi", "base_rate": 2.0, "theta": 0.5}"#,
            );
        let p = ExperimentConfig::from_json_str(&text)
            .unwrap()
            .prepare(Path::new("."))
            .unwrap();
        let lambda = p.intensity().unwrap();
        let phi = closed_form_phi(&KernelSpec::Fractional { hurst: 0.7 }, 2.0, 1.0).unwrap();
        assert_eq!(lambda.eval(1.0), 2.0 * (1.0 + 0.5 * phi.eval(1.0)));
    }

    #[test]
    fn volterra_source_needs_grid_over_horizon() {
        let text = GIRSANOV.replace(
            "\"h_spec\": {\"scale\": 0.3}",
            "\"h_spec\": {\"scale\": 0.3, \"phi_source\": \"volterra\"}, \"grid\": {\"start\": 0.01, \"stop\": 4, \"count\": 100}",
        );
        let c = ExperimentConfig::from_json_str(&text).unwrap();
        assert!(matches!(c.prepare(Path::new(".")), Err(Error::Config(_))));
    }
}

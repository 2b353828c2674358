use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{FilterParams, FilterPrior};
use crate::error::HarnessError;
use crate::geometry::{build_anchor_map, generate_trajectory, FloorPlan, Vec2, WallSegment};
use crate::metrics::OspaParams;
use crate::models::AgentState;
use crate::sim::{GeneratorModel, Scenario};

/// Value of the `schema` key accepted by this version.
pub const SCHEMA: &str = "bpslam-config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Run,
    Evaluate,
}

impl std::str::FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Self::Simulate),
            "run" => Ok(Self::Run),
            "evaluate" => Ok(Self::Evaluate),
            other => Err(HarnessError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Geometry and trajectory of an experiment, as stored in `scenario.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plan: FloorPlan,
    pub pas: Vec<Vec2>,
    pub waypoints: Vec<Vec2>,
    pub step_length: f64,
    /// Truncates the resampled trajectory to this many steps.
    #[serde(default)]
    pub num_steps: Option<usize>,
}

impl Default for ScenarioConfig {
    /// A 12 m x 8 m room with a partition wall on the line y = 4. PA 1 sees
    /// five distinct images (6 features); PA 2 lies on the partition line,
    /// so its image there coincides with itself (5 features).
    fn default() -> Self {
        let wall = |a: (f64, f64), b: (f64, f64)| WallSegment {
            start: Vec2::new(a.0, a.1),
            end: Vec2::new(b.0, b.1),
        };
        let v = Vec2::new;
        Self {
            plan: FloorPlan {
                walls: vec![
                    wall((0.0, 0.0), (12.0, 0.0)),
                    wall((12.0, 0.0), (12.0, 8.0)),
                    wall((12.0, 8.0), (0.0, 8.0)),
                    wall((0.0, 8.0), (0.0, 0.0)),
                    wall((8.0, 4.0), (12.0, 4.0)),
                ],
                roi_center: v(6.0, 4.0),
                roi_radius: 30.0,
            },
            pas: vec![v(10.0, 6.0), v(3.0, 4.0)],
            waypoints: vec![
                v(1.5, 1.5),
                v(3.0, 2.5),
                v(6.5, 1.5),
                v(7.2, 3.0),
                v(7.0, 5.5),
                v(10.5, 6.8),
                v(11.0, 5.0),
                v(6.5, 6.5),
                v(2.5, 6.8),
                v(1.2, 3.5),
                v(2.0, 2.0),
            ],
            step_length: 0.028,
            num_steps: Some(900),
        }
    }
}

impl ScenarioConfig {
    pub fn build(&self, generator: GeneratorModel) -> Result<Scenario, HarnessError> {
        self.plan.validate()?;
        generator.validate()?;
        let anchors = build_anchor_map(&self.pas, &self.plan)?;
        let mut trajectory = generate_trajectory(&self.waypoints, self.step_length)?;
        if let Some(n) = self.num_steps {
            if trajectory.len() < n {
                return Err(HarnessError::Config(format!(
                    "trajectory has {} points, num_steps asks for {n}",
                    trajectory.len()
                )));
            }
            trajectory.truncate(n);
        }
        Ok(Scenario {
            plan: self.plan.clone(),
            anchors,
            trajectory,
            generator,
        })
    }
}

/// Scenario given inline or as a path to a `scenario.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Inline(Box<ScenarioConfig>),
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self::Inline(Box::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Half width of the uniform agent prior around `[p_1, 0, 0]`.
    pub agent_half_width: f64,
    /// Standard deviation of the PA position priors.
    pub pa_sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            agent_half_width: 0.5,
            pa_sigma: 1e-3,
        }
    }
}

impl PriorConfig {
    pub fn filter_prior(&self, plan: &FloorPlan, pas: &[Vec2], start: Vec2) -> FilterPrior {
        FilterPrior {
            agent_center: AgentState::new(start, Vec2::zeros()),
            agent_half_width: self.agent_half_width,
            pa_positions: pas.to_vec(),
            pa_sigma: self.pa_sigma,
            plan: plan.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub ospa_cutoff: f64,
    pub ospa_order: f64,
    /// First step of the time-averaged RMSE window.
    pub rmse_window_start: usize,
    /// A completed run whose final position error exceeds this many meters
    /// counts as lost.
    pub lost_threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ospa_cutoff: 5.0,
            ospa_order: 1.0,
            rmse_window_start: 200,
            lost_threshold: 1.0,
        }
    }
}

impl EvaluationConfig {
    pub fn ospa(&self) -> OspaParams {
        OspaParams {
            cutoff: self.ospa_cutoff,
            order: self.ospa_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub runs: usize,
    pub seed: u64,
    /// Measurement CSV replayed in `run` mode.
    pub measurements: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Evaluate,
            runs: 10,
            seed: 1,
            measurements: None,
        }
    }
}

/// Top-level JSON configuration. Every section is optional and defaults to
/// the SLAM 1 setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    #[serde(default)]
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub generator: GeneratorModel,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema: SCHEMA.to_string(),
            scenario: ScenarioSource::default(),
            generator: GeneratorModel::default(),
            filter: FilterParams::default(),
            prior: PriorConfig::default(),
            evaluation: EvaluationConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Config {
    /// The SLAM 3 robustness setting: `P_d = 0.5`, two false alarms per step.
    pub fn slam3() -> Self {
        let mut c = Self::default();
        c.generator.p_detect = 0.5;
        c.generator.mu_fa = 2.0;
        c.filter.sensor.p_detect = 0.5;
        c.filter.sensor.mu_fa = 2.0;
        c
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(SCHEMA) => {}
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "{origin}: unsupported schema `{other}`, expected `{SCHEMA}`"
                )))
            }
            None => return Err(HarnessError::Config(format!("{origin}: missing `schema` key"))),
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Resolves the scenario, reading it from disk relative to `base_dir`
    /// when given by path.
    pub fn scenario_config(&self, base_dir: &Path) -> Result<ScenarioConfig, HarnessError> {
        match &self.scenario {
            ScenarioSource::Inline(s) => Ok((**s).clone()),
            ScenarioSource::Path(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.runs < 1 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.filter.n_particles < 100 {
            return Err(HarnessError::Config(format!(
                "particle count must be at least 100, got {}",
                self.filter.n_particles
            )));
        }
        self.filter.validate()?;
        self.generator.validate()?;
        self.evaluation.ospa().validate()?;
        Ok(())
    }
}

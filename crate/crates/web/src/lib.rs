//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes and returns plain numbers or JSON strings, so the same
//! functions run natively in tests.

use bpslam_core::da::{da_iterate, exact_da_marginals, DaInputs, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use bpslam_core::engine::{Filter, FilterParams};
use bpslam_core::geometry::build_anchor_map;
use bpslam_core::harness::{Config, ScenarioConfig};
use bpslam_core::rng::{stream, Purpose};
use bpslam_core::sim::{generate_frame, Scenario};
use bpslam_core::Vec2;
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Point = [f64; 2];

fn pt(v: &Vec2) -> Point {
    [v.x, v.y]
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// The built-in room scenario as JSON.
#[wasm_bindgen]
pub fn default_scenario() -> String {
    serde_json::to_string(&ScenarioConfig::default()).expect("scenario serializes")
}

#[derive(Serialize)]
struct MirrorMap {
    walls: Vec<[Point; 2]>,
    /// Features per anchor; the first entry of each list is the anchor.
    features: Vec<Vec<Point>>,
}

/// Virtual anchors of a scenario with the anchors moved to `pas`
/// (flat `[x1, y1, x2, y2, ...]`).
#[wasm_bindgen]
pub fn mirror_map(scenario_json: &str, pas: Vec<f64>) -> Result<String, String> {
    let scenario: ScenarioConfig = serde_json::from_str(scenario_json).map_err(err)?;
    if pas.len() % 2 != 0 {
        return Err("anchor coordinates come in pairs".into());
    }
    let pas: Vec<Vec2> = pas.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
    let map = build_anchor_map(&pas, &scenario.plan).map_err(err)?;
    let out = MirrorMap {
        walls: scenario.plan.walls.iter().map(|w| [pt(&w.start), pt(&w.end)]).collect(),
        features: (0..map.num_pas()).map(|j| map.features(j).iter().map(pt).collect()).collect(),
    };
    Ok(serde_json::to_string(&out).expect("map serializes"))
}

#[derive(Serialize)]
struct Association {
    /// Feature-oriented marginals, row-major `K x (M + 1)`.
    bp: Vec<f64>,
    exact: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Loopy BP association marginals next to the exact ones. `beta` is
/// row-major `K x (M + 1)`, `xi` row-major `M x (K + 1)`.
#[wasm_bindgen]
pub fn associate(beta: Vec<f64>, xi: Vec<f64>, k: usize, m: usize) -> Result<String, String> {
    if beta.len() != k * (m + 1) || xi.len() != m * (k + 1) {
        return Err(format!("expected {} beta and {} xi entries", k * (m + 1), m * (k + 1)));
    }
    let inputs = DaInputs::new(
        DMatrix::from_row_slice(k, m + 1, &beta),
        DMatrix::from_row_slice(m, k + 1, &xi),
    )
    .map_err(err)?;
    let bp = da_iterate(&inputs, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS).map_err(err)?;
    let exact = exact_da_marginals(&inputs).map_err(err)?;
    let rows = |d: DMatrix<f64>| d.transpose().as_slice().to_vec();
    let out = Association {
        bp: rows(bp.feature_marginals(&inputs)),
        // The oracle's `eta` already holds the marginals.
        exact: rows(exact.eta),
        iterations: bp.iterations,
        converged: bp.converged,
    };
    Ok(serde_json::to_string(&out).expect("marginals serialize"))
}

#[derive(Serialize)]
struct FeatureView {
    position: Point,
    existence: f64,
    detected: bool,
}

#[derive(Serialize)]
struct Snapshot {
    step: usize,
    done: bool,
    truth: Point,
    estimate: Point,
    error: f64,
    particles: Vec<Point>,
    features: Vec<Vec<FeatureView>>,
    true_features: Vec<Vec<Point>>,
    measurements: usize,
}

/// Step-by-step SLAM run on synthetic measurements.
#[wasm_bindgen]
pub struct Demo {
    scenario: Scenario,
    filter: Filter,
    rng: ChaCha8Rng,
    step: usize,
    last: Option<String>,
}

const SHOWN_PARTICLES: usize = 400;

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(scenario_json: &str, particles: usize, seed: u64) -> Result<Demo, String> {
        let config = Config::default();
        let scenario_cfg: ScenarioConfig = serde_json::from_str(scenario_json).map_err(err)?;
        let scenario = scenario_cfg.build(config.generator).map_err(err)?;
        let params = FilterParams {
            n_particles: particles,
            intensity_particles: particles,
            ..config.filter
        };
        let prior = config
            .prior
            .filter_prior(&scenario.plan, &scenario.anchors.pa_positions, scenario.trajectory[0]);
        let filter = Filter::new(params, &prior, seed).map_err(err)?;
        Ok(Demo {
            scenario,
            filter,
            rng: stream(seed, 0, 0, Purpose::Measurements),
            step: 0,
            last: None,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.scenario.num_steps()
    }

    /// Advances up to `count` steps and returns a JSON snapshot.
    pub fn advance(&mut self, count: usize) -> Result<String, String> {
        let mut report = None;
        let mut measurements = 0;
        for _ in 0..count {
            if self.step >= self.scenario.num_steps() {
                break;
            }
            self.step += 1;
            let frame = generate_frame(&self.scenario, self.step, &mut self.rng);
            measurements = frame.measurements.iter().map(Vec::len).sum();
            report = Some(self.filter.step(&frame.measurements).map_err(err)?);
        }
        let Some(report) = report else {
            return self.last.clone().ok_or_else(|| "scenario has no steps".to_string());
        };
        let truth = self.scenario.trajectory[self.step - 1];
        let stride = (self.filter.agents.len() / SHOWN_PARTICLES).max(1);
        let snap = Snapshot {
            step: self.step,
            done: self.step >= self.scenario.num_steps(),
            truth: pt(&truth),
            estimate: pt(&report.agent.p),
            error: (report.agent.p - truth).norm(),
            particles: self.filter.agents.iter().step_by(stride).map(|a| pt(&a.p)).collect(),
            features: report
                .anchors
                .iter()
                .map(|a| {
                    a.features
                        .iter()
                        .map(|f| FeatureView {
                            position: pt(&f.position),
                            existence: f.existence,
                            detected: f.detected,
                        })
                        .collect()
                })
                .collect(),
            true_features: (0..self.scenario.anchors.num_pas())
                .map(|j| self.scenario.anchors.features(j).iter().map(pt).collect())
                .collect(),
            measurements,
        };
        let json = serde_json::to_string(&snap).expect("snapshot serializes");
        self.last = Some(json.clone());
        Ok(json)
    }
}

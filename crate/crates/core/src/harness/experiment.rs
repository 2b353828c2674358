use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Config, EvaluationConfig, Mode, PriorConfig};
use super::csvio::{parse_measurement_csv, write_measurement_csv, write_table, FrameSeries};
use crate::engine::{FeatureEstimate, Filter, FilterParams, FilterPrior};
use crate::error::{FilterError, HarnessError};
use crate::geometry::Vec2;
use crate::metrics::{ospa, rmse};
use crate::models::AgentState;
use crate::rng::{run_seed, stream, Purpose};
use crate::sim::{generate_frame, Scenario};

/// Output of one filter execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// MMSE agent estimate per step.
    pub agent: Vec<AgentState>,
    /// Retained feature estimates per step and anchor.
    pub features: Vec<Vec<Vec<FeatureEstimate>>>,
    /// Wall-clock seconds per step, averaged over the run.
    pub seconds_per_step: f64,
}

#[derive(Debug)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub outcome: Result<RunTrace, FilterError>,
}

/// Measurement frames of one synthetic run.
pub fn simulate_run(scenario: &Scenario, seed: u64) -> (FrameSeries, usize) {
    let mut rng = stream(seed, 0, 0, Purpose::Measurements);
    let mut clipped = 0;
    let frames = (1..=scenario.num_steps())
        .map(|n| {
            let f = generate_frame(scenario, n, &mut rng);
            clipped += f.clipped;
            f.measurements
        })
        .collect();
    (frames, clipped)
}

/// Runs the filter over a measurement series.
pub fn filter_run(
    frames: &FrameSeries,
    params: &FilterParams,
    prior: &FilterPrior,
    seed: u64,
) -> Result<RunTrace, FilterError> {
    let mut filter = Filter::new(params.clone(), prior, seed)?;
    let mut agent = Vec::with_capacity(frames.len());
    let mut features = Vec::with_capacity(frames.len());
    let start = Instant::now();
    for frame in frames {
        let report = filter.step(frame)?;
        agent.push(report.agent);
        features.push(report.anchors.into_iter().map(|a| a.features).collect());
    }
    let seconds_per_step = start.elapsed().as_secs_f64() / frames.len().max(1) as f64;
    Ok(RunTrace {
        agent,
        features,
        seconds_per_step,
    })
}

/// Independent synthetic runs of one scenario, executed in parallel.
pub fn run_batch(
    scenario: &Scenario,
    params: &FilterParams,
    prior: &PriorConfig,
    runs: usize,
    seed: u64,
) -> Vec<RunResult> {
    let filter_prior = prior.filter_prior(&scenario.plan, &scenario.anchors.pa_positions, scenario.trajectory[0]);
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(seed, run);
            let (frames, _) = simulate_run(scenario, seed);
            RunResult {
                run,
                seed,
                outcome: filter_run(&frames, params, &filter_prior, seed),
            }
        })
        .collect()
}

/// Per-step error statistics over the completed runs of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub rmse: Vec<f64>,
    /// Mean OSPA per anchor and step, `[j][n - 1]`.
    pub mospa: Vec<Vec<f64>>,
    /// Mean number of detected features per anchor and step.
    pub mean_detected: Vec<Vec<f64>>,
    pub completed: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    /// Completed runs whose final position error exceeds the lost threshold.
    pub lost: Vec<usize>,
    pub final_errors: Vec<f64>,
}

pub fn evaluate_batch(scenario: &Scenario, results: &[RunResult], eval: &EvaluationConfig) -> BatchMetrics {
    let steps = scenario.num_steps();
    let num_pas = scenario.anchors.num_pas();
    let ospa_params = eval.ospa();
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    let mut traces = Vec::new();
    for r in results {
        match &r.outcome {
            Ok(t) => {
                completed.push(r.run);
                traces.push(t);
            }
            Err(e) => failed.push((r.run, e.to_string())),
        }
    }
    let truth = &scenario.trajectory;
    let estimates: Vec<Vec<Vec2>> = traces.iter().map(|t| t.agent.iter().map(|a| a.p).collect()).collect();
    let rmse = if traces.is_empty() {
        vec![f64::NAN; steps]
    } else {
        rmse(truth, &estimates).expect("traces cover every step")
    };
    let final_errors: Vec<f64> = estimates.iter().map(|e| (e[steps - 1] - truth[steps - 1]).norm()).collect();
    let lost = completed
        .iter()
        .zip(&final_errors)
        .filter(|(_, e)| **e > eval.lost_threshold)
        .map(|(r, _)| *r)
        .collect();
    let runs = traces.len().max(1) as f64;
    let mut mospa = vec![vec![0.0; steps]; num_pas];
    let mut mean_detected = vec![vec![0.0; steps]; num_pas];
    for j in 0..num_pas {
        let true_features = scenario.anchors.features(j);
        for n in 0..steps {
            let mut o = 0.0;
            let mut d = 0.0;
            for t in &traces {
                let detected: Vec<Vec2> = t.features[n][j].iter().filter(|f| f.detected).map(|f| f.position).collect();
                o += ospa(&true_features, &detected, &ospa_params);
                d += detected.len() as f64;
            }
            mospa[j][n] = o / runs;
            mean_detected[j][n] = d / runs;
        }
    }
    BatchMetrics {
        rmse,
        mospa,
        mean_detected,
        completed,
        failed,
        lost,
        final_errors,
    }
}

/// Scalar results written to `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }
}

/// Time-averaged RMSE over steps `start..=len` (1-based).
pub fn time_average(values: &[f64], start: usize) -> f64 {
    let from = start.max(1) - 1;
    let window = &values[from.min(values.len())..];
    if window.is_empty() {
        return f64::NAN;
    }
    window.iter().sum::<f64>() / window.len() as f64
}

pub fn summarize(metrics: &BatchMetrics, runs: usize, eval: &EvaluationConfig) -> Summary {
    let mut s = Summary { entries: Vec::new() };
    s.push("runs", runs);
    s.push("completed_runs", metrics.completed.len());
    s.push("failed_runs", metrics.failed.len());
    s.push("lost_runs", metrics.lost.len());
    s.push("steps", metrics.rmse.len());
    s.push("rmse_window_start", eval.rmse_window_start);
    s.push("rmse_time_avg", time_average(&metrics.rmse, eval.rmse_window_start));
    s.push("rmse_final", metrics.rmse.last().copied().unwrap_or(f64::NAN));
    for (j, m) in metrics.mospa.iter().enumerate() {
        s.push(format!("mospa_final_pa{}", j + 1), m.last().copied().unwrap_or(f64::NAN));
    }
    for (j, d) in metrics.mean_detected.iter().enumerate() {
        s.push(format!("mean_detected_final_pa{}", j + 1), d.last().copied().unwrap_or(f64::NAN));
    }
    s
}

/// Files written and statistics of one experiment.
#[derive(Debug)]
pub struct ExperimentReport {
    pub files: Vec<PathBuf>,
    pub summary: Summary,
    /// `(run, message)` for runs that aborted with a filter error.
    pub failures: Vec<(usize, String)>,
    pub seconds_per_step: f64,
}

fn agent_rows(results: &[RunResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        if let Ok(t) = &r.outcome {
            for (n, a) in t.agent.iter().enumerate() {
                rows.push(vec![
                    r.run.to_string(),
                    (n + 1).to_string(),
                    a.p.x.to_string(),
                    a.p.y.to_string(),
                    a.v.x.to_string(),
                    a.v.y.to_string(),
                ]);
            }
        }
    }
    rows
}

fn feature_rows(results: &[RunResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        if let Ok(t) = &r.outcome {
            for (n, per_pa) in t.features.iter().enumerate() {
                for (j, fs) in per_pa.iter().enumerate() {
                    for f in fs {
                        rows.push(vec![
                            r.run.to_string(),
                            (n + 1).to_string(),
                            (j + 1).to_string(),
                            f.id.to_string(),
                            f.position.x.to_string(),
                            f.position.y.to_string(),
                            f.existence.to_string(),
                            u8::from(f.detected).to_string(),
                        ]);
                    }
                }
            }
        }
    }
    rows
}

fn measurement_file(out: &Path, run: usize) -> PathBuf {
    if run == 0 {
        out.join("measurements.csv")
    } else {
        out.join(format!("measurements_run{run}.csv"))
    }
}

fn mean_seconds(results: &[RunResult]) -> f64 {
    let times: Vec<f64> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|t| t.seconds_per_step).collect();
    if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    }
}

/// Executes the experiment described by `config`, writing its artifacts to
/// `out_dir`. Relative paths in the config resolve against `base_dir`.
pub fn run_experiment(config: &Config, base_dir: &Path, out_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let scenario_cfg = config.scenario_config(base_dir)?;
    let scenario = scenario_cfg.build(config.generator)?;
    let exp = &config.experiment;
    let mut files = Vec::new();

    let scenario_path = out_dir.join("scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string_pretty(&scenario_cfg)? + "\n").map_err(|source| {
        HarnessError::Io {
            path: scenario_path.display().to_string(),
            source,
        }
    })?;
    files.push(scenario_path);

    match exp.mode {
        Mode::Simulate => {
            let series: Vec<FrameSeries> = (0..exp.runs)
                .into_par_iter()
                .map(|r| simulate_run(&scenario, run_seed(exp.seed, r)).0)
                .collect();
            for (r, frames) in series.iter().enumerate() {
                let path = measurement_file(out_dir, r);
                write_measurement_csv(&path, frames)?;
                files.push(path);
            }
            let mut summary = Summary { entries: Vec::new() };
            summary.push("runs", exp.runs);
            summary.push("steps", scenario.num_steps());
            write_summary(out_dir, &summary, &mut files)?;
            Ok(ExperimentReport {
                files,
                summary,
                failures: Vec::new(),
                seconds_per_step: 0.0,
            })
        }
        Mode::Evaluate => {
            let path = measurement_file(out_dir, 0);
            write_measurement_csv(&path, &simulate_run(&scenario, run_seed(exp.seed, 0)).0)?;
            files.push(path);
            let results = run_batch(&scenario, &config.filter, &config.prior, exp.runs, exp.seed);
            let metrics = evaluate_batch(&scenario, &results, &config.evaluation);
            write_estimates(out_dir, &results, &mut files)?;
            let mut header = vec!["n".to_string(), "rmse".to_string()];
            let num_pas = scenario.anchors.num_pas();
            header.extend((1..=num_pas).map(|j| format!("ospa_pa{j}")));
            header.extend((1..=num_pas).map(|j| format!("n_detected_pa{j}")));
            let rows: Vec<Vec<String>> = (0..scenario.num_steps())
                .map(|n| {
                    let mut row = vec![(n + 1).to_string(), metrics.rmse[n].to_string()];
                    row.extend(metrics.mospa.iter().map(|m| m[n].to_string()));
                    row.extend(metrics.mean_detected.iter().map(|d| d[n].to_string()));
                    row
                })
                .collect();
            let path = out_dir.join("metrics.csv");
            let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
            write_table(&path, &header_ref, &rows)?;
            files.push(path);
            let summary = summarize(&metrics, exp.runs, &config.evaluation);
            write_summary(out_dir, &summary, &mut files)?;
            Ok(ExperimentReport {
                files,
                summary,
                failures: metrics.failed,
                seconds_per_step: mean_seconds(&results),
            })
        }
        Mode::Run => {
            let Some(rel) = &exp.measurements else {
                return Err(HarnessError::Config("run mode needs `experiment.measurements`".into()));
            };
            let frames = parse_measurement_csv(&base_dir.join(rel), scenario.anchors.num_pas())?;
            let start = scenario_cfg.waypoints.first().copied().unwrap_or_else(Vec2::zeros);
            let prior = config.prior.filter_prior(&scenario.plan, &scenario.anchors.pa_positions, start);
            let results: Vec<RunResult> = (0..exp.runs)
                .into_par_iter()
                .map(|run| {
                    let seed = run_seed(exp.seed, run);
                    RunResult {
                        run,
                        seed,
                        outcome: filter_run(&frames, &config.filter, &prior, seed),
                    }
                })
                .collect();
            write_estimates(out_dir, &results, &mut files)?;
            let failures: Vec<(usize, String)> = results
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.run, e.to_string())))
                .collect();
            let mut summary = Summary { entries: Vec::new() };
            summary.push("runs", exp.runs);
            summary.push("completed_runs", exp.runs - failures.len());
            summary.push("failed_runs", failures.len());
            summary.push("steps", frames.len());
            let done: Vec<&RunTrace> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            for j in 0..scenario.anchors.num_pas() {
                let mean = if done.is_empty() || frames.is_empty() {
                    f64::NAN
                } else {
                    done.iter()
                        .map(|t| t.features[frames.len() - 1][j].iter().filter(|f| f.detected).count() as f64)
                        .sum::<f64>()
                        / done.len() as f64
                };
                summary.push(format!("mean_detected_final_pa{}", j + 1), mean);
            }
            write_summary(out_dir, &summary, &mut files)?;
            Ok(ExperimentReport {
                files,
                summary,
                failures,
                seconds_per_step: mean_seconds(&results),
            })
        }
    }
}

fn write_estimates(out: &Path, results: &[RunResult], files: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let path = out.join("agent_estimates.csv");
    write_table(&path, &["run", "n", "x", "y", "vx", "vy"], &agent_rows(results))?;
    files.push(path);
    let path = out.join("features.csv");
    write_table(
        &path,
        &["run", "n", "j", "feature_id", "x", "y", "p_exist", "detected"],
        &feature_rows(results),
    )?;
    files.push(path);
    Ok(())
}

fn write_summary(out: &Path, summary: &Summary, files: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let path = out.join("summary.csv");
    let rows: Vec<Vec<String>> = summary.entries.iter().map(|(k, v)| vec![k.clone(), v.clone()]).collect();
    write_table(&path, &["key", "value"], &rows)?;
    files.push(path);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_average_window() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(time_average(&v, 3), 3.5);
        assert_eq!(time_average(&v, 1), 2.5);
        assert!(time_average(&v, 9).is_nan());
    }
}

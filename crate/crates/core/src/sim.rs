//! Synthetic range measurements: Bernoulli detection of every true
//! feature, Gaussian range noise, Poisson clutter and a random order.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::geometry::{AnchorMap, FloorPlan, Vec2};
use crate::models::{check, Measurement};

/// Standard deviation written into noiseless measurements, which must carry
/// a positive value.
pub const MIN_REPORTED_SIGMA: f64 = 1e-9;

/// True data-generating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorModel {
    pub p_detect: f64,
    pub mu_fa: f64,
    pub fa_range_max: f64,
    /// Range noise standard deviation in meters.
    pub sigma: f64,
}

impl Default for GeneratorModel {
    fn default() -> Self {
        Self {
            p_detect: 0.95,
            mu_fa: 1.0,
            fa_range_max: 30.0,
            sigma: 0.1,
        }
    }
}

impl GeneratorModel {
    pub fn validate(&self) -> Result<(), ParamError> {
        check((0.0..=1.0).contains(&self.p_detect), "p_detect", self.p_detect)?;
        check(self.mu_fa >= 0.0 && self.mu_fa.is_finite(), "mu_fa", self.mu_fa)?;
        check(self.fa_range_max > 0.0 && self.fa_range_max.is_finite(), "fa_range_max", self.fa_range_max)?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", self.sigma)
    }
}

/// Ground truth of a synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plan: FloorPlan,
    pub anchors: AnchorMap,
    /// True agent position at steps 1, 2, ...
    pub trajectory: Vec<Vec2>,
    pub generator: GeneratorModel,
}

impl Scenario {
    pub fn num_steps(&self) -> usize {
        self.trajectory.len()
    }

    /// True agent velocity at step `n` (1-based) by finite differences.
    pub fn velocity(&self, n: usize, dt: f64) -> Vec2 {
        let t = &self.trajectory;
        if t.len() < 2 {
            return Vec2::zeros();
        }
        let i = (n - 1).min(t.len() - 2);
        (t[i + 1] - t[i]) / dt
    }
}

/// One generated time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Measurements per anchor.
    pub measurements: Vec<Vec<Measurement>>,
    /// Number of negative noisy ranges clipped to zero.
    pub clipped: usize,
}

/// Measurements of all anchors at step `n` (1-based).
pub fn generate_frame<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Frame {
    let g = &scenario.generator;
    let p = scenario.trajectory[n - 1];
    let reported = g.sigma.max(MIN_REPORTED_SIGMA);
    let clutter = (g.mu_fa > 0.0).then(|| Poisson::new(g.mu_fa).expect("positive clutter rate"));
    let mut clipped = 0;
    let mut measurements = Vec::with_capacity(scenario.anchors.num_pas());
    for j in 0..scenario.anchors.num_pas() {
        let mut frame = Vec::new();
        for a in scenario.anchors.features(j) {
            if rng.random::<f64>() < g.p_detect {
                let mut z = (p - a).norm() + g.sigma * rng.sample::<f64, _>(StandardNormal);
                if z < 0.0 {
                    z = 0.0;
                    clipped += 1;
                }
                frame.push(Measurement { z, sigma: reported });
            }
        }
        if let Some(pois) = &clutter {
            let count = pois.sample(rng) as usize;
            for _ in 0..count {
                frame.push(Measurement {
                    z: rng.random::<f64>() * g.fa_range_max,
                    sigma: reported,
                });
            }
        }
        frame.shuffle(rng);
        measurements.push(frame);
    }
    Frame { measurements, clipped }
}

//! Probabilistic building blocks shared by the filter and the simulator:
//! agent motion, feature survival, the range likelihood, the clutter density
//! and the two factor families of the joint posterior (`g` for legacy
//! features, `h` for new features).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::geometry::Vec2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Smallest clutter intensity (per meter) used in likelihood ratios.
pub const CLUTTER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub p: Vec2,
    pub v: Vec2,
}

impl AgentState {
    pub fn new(p: Vec2, v: Vec2) -> Self {
        Self { p, v }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Near constant-velocity motion with white acceleration noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Driving-noise standard deviation in m/s^2.
    pub sigma_w: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self { dt: 1.0, sigma_w: 0.01 }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", self.dt)?;
        check(self.sigma_w >= 0.0 && self.sigma_w.is_finite(), "sigma_w", self.sigma_w)
    }
}

/// Survival and regularization noise of (static) map features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureDynamicsParams {
    pub p_survival: f64,
    /// Standard deviation of the per-step position jitter in meters.
    pub sigma_a: f64,
}

impl Default for FeatureDynamicsParams {
    fn default() -> Self {
        Self { p_survival: 0.999, sigma_a: 1e-4 }
    }
}

impl FeatureDynamicsParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.p_survival > 0.0 && self.p_survival <= 1.0, "p_survival", self.p_survival)?;
        check(self.sigma_a >= 0.0 && self.sigma_a.is_finite(), "sigma_a", self.sigma_a)
    }
}

/// Detection, clutter and noise assumptions of the filter for one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub p_detect: f64,
    /// Mean number of false alarms per anchor and step.
    pub mu_fa: f64,
    /// Upper end of the uniform clutter range density.
    pub fa_range_max: f64,
    /// Range standard deviation assumed by the filter. `None` uses the
    /// per-measurement value carried in the data.
    pub sigma_meas: Option<f64>,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { p_detect: 0.95, mu_fa: 1.0, fa_range_max: 30.0, sigma_meas: Some(0.15) }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.p_detect > 0.0 && self.p_detect <= 1.0, "p_detect", self.p_detect)?;
        check(self.mu_fa >= 0.0 && self.mu_fa.is_finite(), "mu_fa", self.mu_fa)?;
        check(self.fa_range_max > 0.0 && self.fa_range_max.is_finite(), "fa_range_max", self.fa_range_max)?;
        if let Some(s) = self.sigma_meas {
            check(s > 0.0 && s.is_finite(), "sigma_meas", s)?;
        }
        Ok(())
    }

    /// Uniform false-alarm density on `[0, fa_range_max]`.
    pub fn clutter_density(&self, z: f64) -> f64 {
        if (0.0..=self.fa_range_max).contains(&z) {
            1.0 / self.fa_range_max
        } else {
            0.0
        }
    }

    /// `mu_fa * f_fa(z)`, the clutter intensity at range `z`.
    pub fn clutter_intensity(&self, z: f64) -> f64 {
        self.mu_fa * self.clutter_density(z)
    }

    /// Denominator of the likelihood ratios: the clutter intensity, floored
    /// at [`CLUTTER_FLOOR`] so that ranges outside the clutter support and
    /// clutter-free sensors keep finite ratios.
    pub fn clutter_normalizer(&self, z: f64) -> f64 {
        self.clutter_intensity(z).max(CLUTTER_FLOOR)
    }

    pub fn effective_sigma(&self, m: &Measurement) -> f64 {
        self.sigma_meas.unwrap_or(m.sigma)
    }
}

/// Detection probability as a function of agent and feature position.
pub trait DetectionProbability {
    fn detection_probability(&self, agent: &Vec2, feature: &Vec2) -> f64;

    /// `Some(p)` when the probability does not depend on geometry.
    fn constant(&self) -> Option<f64> {
        None
    }
}

impl DetectionProbability for SensorModel {
    fn detection_probability(&self, _agent: &Vec2, _feature: &Vec2) -> f64 {
        self.p_detect
    }

    fn constant(&self) -> Option<f64> {
        Some(self.p_detect)
    }
}

/// One range measurement with its standard deviation, both in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: f64,
    pub sigma: f64,
}

impl Measurement {
    pub fn new(z: f64, sigma: f64) -> Result<Self, ParamError> {
        let m = Self { z, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.z >= 0.0 && self.z.is_finite(), "z", self.z)?;
        check(self.sigma > 0.0 && self.sigma.is_finite(), "sigma", self.sigma)
    }
}

/// Applies the constant-velocity transition with an explicit acceleration
/// sample `w`.
pub fn motion_transition(x: &AgentState, params: &MotionParams, w: Vec2) -> AgentState {
    let dt = params.dt;
    AgentState {
        p: x.p + x.v * dt + w * (0.5 * dt * dt),
        v: x.v + w * dt,
    }
}

pub fn motion_transition_sample<R: Rng + ?Sized>(x: &AgentState, params: &MotionParams, rng: &mut R) -> AgentState {
    let w = if params.sigma_w > 0.0 {
        Vec2::new(
            params.sigma_w * rng.sample::<f64, _>(StandardNormal),
            params.sigma_w * rng.sample::<f64, _>(StandardNormal),
        )
    } else {
        Vec2::zeros()
    };
    motion_transition(x, params, w)
}

/// Particle belief of one feature: positions with normalized weights plus
/// the probability that the feature exists. The nonexistence mass is the
/// complement and is never represented as a pdf.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBelief {
    pub particles: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub existence: f64,
}

impl FeatureBelief {
    pub fn uniform(particles: Vec<Vec2>, existence: f64) -> Self {
        let n = particles.len().max(1);
        let weights = vec![1.0 / n as f64; particles.len()];
        Self { particles, weights, existence }
    }

    pub fn nonexistence(&self) -> f64 {
        1.0 - self.existence
    }

    /// Weighted mean position (MMSE estimate given existence).
    pub fn mean(&self) -> Vec2 {
        self.particles
            .iter()
            .zip(&self.weights)
            .fold(Vec2::zeros(), |acc, (p, w)| acc + p * *w)
    }
}

/// Prediction of a feature belief through survival and the jittered static
/// transition. The dying mass moves into the nonexistence channel.
pub fn feature_transition<R: Rng + ?Sized>(
    belief: &FeatureBelief,
    params: &FeatureDynamicsParams,
    rng: &mut R,
) -> FeatureBelief {
    let particles = if params.sigma_a > 0.0 {
        belief
            .particles
            .iter()
            .map(|p| {
                p + Vec2::new(
                    params.sigma_a * rng.sample::<f64, _>(StandardNormal),
                    params.sigma_a * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect()
    } else {
        belief.particles.clone()
    };
    FeatureBelief {
        particles,
        weights: belief.weights.clone(),
        existence: params.p_survival * belief.existence,
    }
}

/// Gaussian density of observing range `z` when the true distance is `dist`.
#[inline]
pub fn range_pdf(z: f64, sigma: f64, dist: f64) -> f64 {
    let u = (z - dist) / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * u * u).exp()
}

/// `f(z | x, a)` with the measurement's own standard deviation.
pub fn range_likelihood(z: &Measurement, x: &AgentState, a: &Vec2) -> f64 {
    range_pdf(z.z, z.sigma, (x.p - a).norm())
}

/// Factor linking a legacy feature to its feature-oriented association
/// variable `c` (0 = missed detection, `m >= 1` = measurement `m`, 1-based).
pub fn g_factor(
    x: &AgentState,
    a: &Vec2,
    exists: bool,
    c: usize,
    frame: &[Measurement],
    sensor: &SensorModel,
) -> f64 {
    if !exists {
        return if c == 0 { 1.0 } else { 0.0 };
    }
    let pd = sensor.detection_probability(&x.p, a);
    if c == 0 {
        return 1.0 - pd;
    }
    let z = &frame[c - 1];
    let sigma = sensor.effective_sigma(z);
    pd * range_pdf(z.z, sigma, (x.p - a).norm()) / sensor.clutter_normalizer(z.z)
}

/// Factor linking a new feature (created by measurement `z`) to its
/// measurement-oriented association variable `b` (0 = not associated with
/// any legacy feature). `birth_intensity(a, x)` evaluates `mu_n * f_n(a | x)`.
///
/// For `exists == false` the factor is the dummy pdf, whose total mass 1 is
/// returned.
pub fn h_factor<F>(
    x: &AgentState,
    a: &Vec2,
    exists: bool,
    b: usize,
    z: &Measurement,
    sensor: &SensorModel,
    birth_intensity: F,
) -> f64
where
    F: Fn(&Vec2, &AgentState) -> f64,
{
    if !exists {
        return 1.0;
    }
    if b != 0 {
        return 0.0;
    }
    let lambda = birth_intensity(a, x);
    if lambda == 0.0 {
        return 0.0;
    }
    let sigma = sensor.effective_sigma(z);
    lambda * range_pdf(z.z, sigma, (x.p - a).norm()) / sensor.clutter_normalizer(z.z)
}

pub(crate) fn check(ok: bool, name: &'static str, value: f64) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { name, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(px: f64, py: f64, vx: f64, vy: f64) -> AgentState {
        AgentState::new(Vec2::new(px, py), Vec2::new(vx, vy))
    }

    #[test]
    fn motion_substitution() {
        let params = MotionParams { dt: 1.0, sigma_w: 0.0 };
        let next = motion_transition(&agent(0.0, 0.0, 1.0, 0.0), &params, Vec2::zeros());
        assert_eq!(next, agent(1.0, 0.0, 1.0, 0.0));
        let next = motion_transition(&agent(0.0, 0.0, 0.0, 0.0), &params, Vec2::new(0.02, 0.0));
        assert_relative_eq!(next.p.x, 0.01, epsilon = 1e-15);
        assert_relative_eq!(next.v.x, 0.02, epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_motion_is_deterministic_and_linear() {
        let params = MotionParams { dt: 0.5, sigma_w: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = agent(1.0, 2.0, 0.3, -0.1);
        let b = agent(-4.0, 0.5, 0.0, 0.7);
        let fa = motion_transition_sample(&a, &params, &mut rng);
        let fb = motion_transition_sample(&b, &params, &mut rng);
        let sum = AgentState::new(a.p + b.p, a.v + b.v);
        let fsum = motion_transition_sample(&sum, &params, &mut rng);
        assert_relative_eq!(fsum.p, fa.p + fb.p, epsilon = 1e-12);
        assert_relative_eq!(fsum.v, fa.v + fb.v, epsilon = 1e-12);
        assert_eq!(motion_transition_sample(&a, &params, &mut rng), fa);
    }

    #[test]
    fn motion_position_variance_matches_closed_form() {
        // var(p_x) = (dt^2/2)^2 sigma_w^2 = 0.25e-4 for dt = 1, sigma_w = 0.01
        let params = MotionParams { dt: 1.0, sigma_w: 0.01 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = agent(0.0, 0.0, 0.0, 0.0);
        let n = 1_000_000;
        let (mut s, mut s2, mut cov_pv) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = motion_transition_sample(&x0, &params, &mut rng);
            s += x.p.x;
            s2 += x.p.x * x.p.x;
            cov_pv += x.p.x * x.v.x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert_relative_eq!(var, 2.5e-5, max_relative = 0.02);
        // cross term dt^3/2 * sigma_w^2
        assert_relative_eq!(cov_pv / n as f64, 5e-5, max_relative = 0.02);
    }

    #[test]
    fn feature_transition_masses() {
        let params = FeatureDynamicsParams { p_survival: 0.999, sigma_a: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = FeatureBelief::uniform(vec![Vec2::new(1.0, 2.0), Vec2::new(3.0, 4.0)], 1.0);
        let out = feature_transition(&b, &params, &mut rng);
        assert_relative_eq!(out.existence, 0.999, epsilon = 1e-15);
        assert_relative_eq!(out.nonexistence(), 0.001, epsilon = 1e-12);
        assert_eq!(out.particles, b.particles);

        let half = FeatureBelief::uniform(vec![Vec2::zeros()], 0.5);
        let out = feature_transition(&half, &params, &mut rng);
        assert_relative_eq!(out.nonexistence(), 0.5005, epsilon = 1e-12);
        assert!((out.existence + out.nonexistence() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_transition_jitter() {
        let params = FeatureDynamicsParams { p_survival: 1.0, sigma_a: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = FeatureBelief::uniform(vec![Vec2::zeros(); 20_000], 0.7);
        let out = feature_transition(&b, &params, &mut rng);
        let var = out.particles.iter().map(|p| p.x * p.x).sum::<f64>() / 20_000.0;
        assert_relative_eq!(var, 0.01, max_relative = 0.05);
        assert_eq!(out.existence, 0.7);
    }

    #[test]
    fn range_likelihood_values() {
        let x = agent(0.0, 0.0, 0.0, 0.0);
        let a = Vec2::new(3.0, 4.0);
        let peak = range_likelihood(&Measurement::new(5.0, 0.1).unwrap(), &x, &a);
        assert_relative_eq!(peak, 3.989_422_804_014_327, epsilon = 1e-12);
        let one_sigma = range_likelihood(&Measurement::new(5.1, 0.1).unwrap(), &x, &a);
        assert_relative_eq!(one_sigma, 2.419_707_245_191_434, epsilon = 1e-9);
    }

    #[test]
    fn range_likelihood_integrates_to_one() {
        // composite Simpson on [0, 30] with the mode at 5 m
        let x = agent(0.0, 0.0, 0.0, 0.0);
        let a = Vec2::new(3.0, 4.0);
        let n = 60_000;
        let h = 30.0 / n as f64;
        let f = |z: f64| range_likelihood(&Measurement { z, sigma: 0.1 }, &x, &a);
        let mut acc = f(0.0) + f(30.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    fn sensor() -> SensorModel {
        SensorModel { p_detect: 0.95, mu_fa: 1.0, fa_range_max: 30.0, sigma_meas: None }
    }

    #[test]
    fn g_factor_branches() {
        let s = sensor();
        let x = agent(0.0, 0.0, 0.0, 0.0);
        let a = Vec2::new(3.0, 4.0);
        let frame = [Measurement::new(5.0, 0.1).unwrap()];
        assert_relative_eq!(g_factor(&x, &a, true, 0, &frame, &s), 0.05, epsilon = 1e-15);
        // 0.95 * 3.98942 * 30
        assert_relative_eq!(g_factor(&x, &a, true, 1, &frame, &s), 113.698_549_914_408_3, epsilon = 1e-9);
        assert_eq!(g_factor(&x, &a, false, 1, &frame, &s), 0.0);
        assert_eq!(g_factor(&x, &a, false, 0, &frame, &s), 1.0);
    }

    #[test]
    fn h_factor_branches() {
        let s = sensor();
        let x = agent(0.0, 0.0, 0.0, 0.0);
        let a = Vec2::new(3.0, 4.0);
        let z = Measurement::new(5.0, 0.1).unwrap();
        assert_eq!(h_factor(&x, &a, true, 2, &z, &s, |_, _| 0.01), 0.0);
        assert_eq!(h_factor(&x, &a, true, 0, &z, &s, |_, _| 0.0), 0.0);
        // 0.01 * 3.98942 * 30
        assert_relative_eq!(h_factor(&x, &a, true, 0, &z, &s, |_, _| 0.01), 1.196_826_841_204_298, epsilon = 1e-12);
        assert_eq!(h_factor(&x, &a, false, 0, &z, &s, |_, _| 0.01), 1.0);
    }

    #[test]
    fn validation() {
        assert!(Measurement::new(-1.0, 0.1).is_err());
        assert!(Measurement::new(1.0, 0.0).is_err());
        assert!(MotionParams { dt: 0.0, sigma_w: 0.1 }.validate().is_err());
        assert!(FeatureDynamicsParams { p_survival: 0.0, sigma_a: 0.0 }.validate().is_err());
        assert!(SensorModel { p_detect: 1.5, ..sensor() }.validate().is_err());
        assert!(sensor().validate().is_ok());
    }

    #[test]
    fn clutter_density_support() {
        let s = sensor();
        assert_relative_eq!(s.clutter_density(12.0), 1.0 / 30.0);
        assert_eq!(s.clutter_density(31.0), 0.0);
        assert_eq!(s.clutter_density(-0.1), 0.0);
    }
}

//! Zero-measurement PHD filter for the features of one anchor that have
//! not been detected yet.
//!
//! The intensity is carried on a stratified lattice over the ROI disk: one
//! particle per lattice cell, and the weight of a particle is the mass of
//! its home cell. Point evaluation of the intensity divides the cell weight
//! by the cell area inside the disk. Uniform birth mass is added cell-wise,
//! so the particle budget never grows and no resampling is required.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::ParamError;
use crate::geometry::{FloorPlan, Vec2};
use crate::models::{AgentState, DetectionProbability, FeatureDynamicsParams};

const AREA_SUBSAMPLES: usize = 16;
const MAX_REJECTION_TRIES: usize = 64;

/// Cell structure of the ROI disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    center: Vec2,
    radius: f64,
    cell: f64,
    half: i64,
    /// Lattice index of each grid cell, `usize::MAX` when the cell misses the disk.
    lookup: Vec<usize>,
    /// Grid coordinates of each lattice cell.
    coords: Vec<(i64, i64)>,
    /// Area of each lattice cell inside the disk.
    areas: Vec<f64>,
    total_area: f64,
}

impl Lattice {
    /// Builds a lattice with roughly `budget` cells over the ROI of `plan`.
    /// Cell edges are aligned with the ROI center.
    pub fn new(plan: &FloorPlan, budget: usize) -> Result<Self, ParamError> {
        if budget == 0 {
            return Err(ParamError::Invalid("intensity particle budget must be positive".into()));
        }
        let radius = plan.roi_radius;
        let cell = (plan.roi_area() / budget as f64).sqrt();
        let half = (radius / cell).ceil() as i64;
        let side = (2 * half) as usize;
        let mut lookup = vec![usize::MAX; side * side];
        let mut coords = Vec::new();
        let mut areas = Vec::new();
        for gy in -half..half {
            for gx in -half..half {
                let area = cell_disk_area(gx, gy, cell, radius);
                if area > 0.0 {
                    lookup[((gy + half) as usize) * side + (gx + half) as usize] = coords.len();
                    coords.push((gx, gy));
                    areas.push(area);
                }
            }
        }
        let total_area = areas.iter().sum();
        Ok(Self {
            center: plan.roi_center,
            radius,
            cell,
            half,
            lookup,
            coords,
            areas,
            total_area,
        })
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Lattice index of the cell containing `a`, if `a` lies in the disk.
    pub fn locate(&self, a: &Vec2) -> Option<usize> {
        let d = a - self.center;
        if d.norm_squared() > self.radius * self.radius {
            return None;
        }
        let gx = (d.x / self.cell).floor() as i64;
        let gy = (d.y / self.cell).floor() as i64;
        if gx < -self.half || gx >= self.half || gy < -self.half || gy >= self.half {
            return None;
        }
        let side = (2 * self.half) as usize;
        let idx = self.lookup[((gy + self.half) as usize) * side + (gx + self.half) as usize];
        (idx != usize::MAX).then_some(idx)
    }

    fn sample_in_cell<R: Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> Vec2 {
        let (gx, gy) = self.coords[idx];
        let r2 = self.radius * self.radius;
        let mut last = Vec2::zeros();
        for _ in 0..MAX_REJECTION_TRIES {
            let d = Vec2::new(
                (gx as f64 + rng.random::<f64>()) * self.cell,
                (gy as f64 + rng.random::<f64>()) * self.cell,
            );
            if d.norm_squared() <= r2 {
                return self.center + d;
            }
            last = d;
        }
        // sliver cell: pull the last draw onto the disk
        self.center + last * (self.radius / last.norm()) * (1.0 - 1e-12)
    }

    /// Per-cell masses of a uniform density with total mass `mass`.
    fn uniform_masses(&self, mass: f64) -> impl Iterator<Item = f64> + '_ {
        self.areas.iter().map(move |a| mass * a / self.total_area)
    }
}

fn cell_disk_area(gx: i64, gy: i64, cell: f64, radius: f64) -> f64 {
    let r2 = radius * radius;
    let corners = [(gx, gy), (gx + 1, gy), (gx, gy + 1), (gx + 1, gy + 1)];
    let inside = corners
        .iter()
        .filter(|(x, y)| {
            let (px, py) = (*x as f64 * cell, *y as f64 * cell);
            px * px + py * py <= r2
        })
        .count();
    if inside == 4 {
        return cell * cell;
    }
    // nearest point of the cell to the center decides whether it touches the disk
    let nx = (0.0f64).clamp(gx as f64 * cell, (gx + 1) as f64 * cell);
    let ny = (0.0f64).clamp(gy as f64 * cell, (gy + 1) as f64 * cell);
    if nx * nx + ny * ny > r2 {
        return 0.0;
    }
    let h = cell / AREA_SUBSAMPLES as f64;
    let mut count = 0usize;
    for sy in 0..AREA_SUBSAMPLES {
        for sx in 0..AREA_SUBSAMPLES {
            let px = gx as f64 * cell + (sx as f64 + 0.5) * h;
            let py = gy as f64 * cell + (sy as f64 + 0.5) * h;
            if px * px + py * py <= r2 {
                count += 1;
            }
        }
    }
    count as f64 * h * h
}

/// Weighted particle representation of the undetected-feature intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct UndetectedIntensity {
    lattice: Lattice,
    /// One particle per lattice cell; empty while the intensity is zero
    /// and no birth has occurred.
    pub particles: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl UndetectedIntensity {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Intensity value at `a` (expected undetected features per square meter).
    pub fn density(&self, a: &Vec2) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        match self.lattice.locate(a) {
            Some(idx) => self.weights[idx] / self.lattice.areas[idx],
            None => 0.0,
        }
    }

    fn populate<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.particles = (0..self.lattice.len()).map(|i| self.lattice.sample_in_cell(i, rng)).collect();
        self.weights = vec![0.0; self.lattice.len()];
    }
}

/// Expected number and spatial density of features detected for the
/// first time at the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthInfo {
    pub mu_n: f64,
    /// `integral P_d(x_bar, a) lambda(a) da` at the predicted mean agent position.
    normalizer: f64,
}

impl BirthInfo {
    pub fn none() -> Self {
        Self { mu_n: 0.0, normalizer: 0.0 }
    }

    /// `mu_n * f_n(a | x)`.
    pub fn intensity_at<D: DetectionProbability + ?Sized>(
        &self,
        lambda: &UndetectedIntensity,
        pd: &D,
        a: &Vec2,
        x: &AgentState,
    ) -> f64 {
        if self.mu_n <= 0.0 || self.normalizer <= 0.0 {
            return 0.0;
        }
        let dens = lambda.density(a);
        if dens == 0.0 {
            return 0.0;
        }
        self.mu_n * pd.detection_probability(&x.p, a) * dens / self.normalizer
    }
}

/// Uniform intensity of mass `mu_initial` over the ROI.
pub fn phd_init<R: Rng + ?Sized>(
    plan: &FloorPlan,
    mu_initial: f64,
    budget: usize,
    rng: &mut R,
) -> Result<UndetectedIntensity, ParamError> {
    if !(mu_initial >= 0.0 && mu_initial.is_finite()) {
        return Err(ParamError::OutOfRange { name: "mu_initial", value: mu_initial });
    }
    let mut out = UndetectedIntensity {
        lattice: Lattice::new(plan, budget)?,
        particles: Vec::new(),
        weights: Vec::new(),
    };
    if mu_initial > 0.0 {
        out.populate(rng);
        out.weights = out.lattice.uniform_masses(mu_initial).collect();
    }
    Ok(out)
}

/// Survival, static jitter and uniform birth of total mass `mu_birth`.
pub fn phd_predict<R: Rng + ?Sized>(
    intensity: &UndetectedIntensity,
    dynamics: &FeatureDynamicsParams,
    mu_birth: f64,
    rng: &mut R,
) -> UndetectedIntensity {
    let mut out = intensity.clone();
    if out.is_empty() {
        if mu_birth <= 0.0 {
            return out;
        }
        out.populate(rng);
    }
    for w in &mut out.weights {
        *w *= dynamics.p_survival;
    }
    if dynamics.sigma_a > 0.0 {
        for p in &mut out.particles {
            p.x += dynamics.sigma_a * rng.sample::<f64, _>(StandardNormal);
            p.y += dynamics.sigma_a * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if mu_birth > 0.0 {
        let births: Vec<f64> = out.lattice.uniform_masses(mu_birth).collect();
        for (w, b) in out.weights.iter_mut().zip(births) {
            *w += b;
        }
    }
    out
}

/// Agent-averaged detection probability `E_alpha[P_d(x, a)]` for each
/// intensity particle. At most `max_agent_samples` agent particles are used.
fn mean_detection<D: DetectionProbability + ?Sized>(
    intensity: &UndetectedIntensity,
    agents: &[AgentState],
    agent_weights: &[f64],
    pd: &D,
    max_agent_samples: usize,
) -> Vec<f64> {
    if let Some(p) = pd.constant() {
        return vec![p; intensity.particles.len()];
    }
    let stride = agents.len().div_ceil(max_agent_samples.max(1)).max(1);
    let picked: Vec<usize> = (0..agents.len()).step_by(stride).collect();
    let wsum: f64 = picked.iter().map(|&i| agent_weights[i]).sum();
    intensity
        .particles
        .iter()
        .map(|a| {
            if wsum <= 0.0 {
                return 0.0;
            }
            picked
                .iter()
                .map(|&i| agent_weights[i] * pd.detection_probability(&agents[i].p, a))
                .sum::<f64>()
                / wsum
        })
        .collect()
}

/// Birth statistics for the current step from the predicted intensity and
/// the predicted agent particles.
pub fn birth_info<D: DetectionProbability + ?Sized>(
    predicted: &UndetectedIntensity,
    agents: &[AgentState],
    agent_weights: &[f64],
    pd: &D,
    max_agent_samples: usize,
) -> BirthInfo {
    if predicted.is_empty() || predicted.mass() <= 0.0 {
        return BirthInfo::none();
    }
    let pbar = mean_detection(predicted, agents, agent_weights, pd, max_agent_samples);
    let mu_n: f64 = predicted.weights.iter().zip(&pbar).map(|(w, p)| w * p).sum();
    let normalizer = match pd.constant() {
        Some(p) => p * predicted.mass(),
        None => {
            let wsum: f64 = agent_weights.iter().sum();
            let mean = agents
                .iter()
                .zip(agent_weights)
                .fold(Vec2::zeros(), |acc, (x, w)| acc + x.p * *w)
                / wsum;
            predicted
                .particles
                .iter()
                .zip(&predicted.weights)
                .map(|(a, w)| w * pd.detection_probability(&mean, a))
                .sum()
        }
    };
    BirthInfo { mu_n, normalizer }
}

/// Missed-detection update: every weight is scaled by `1 - E_alpha[P_d]`.
pub fn phd_update<D: DetectionProbability + ?Sized>(
    predicted: &UndetectedIntensity,
    agents: &[AgentState],
    agent_weights: &[f64],
    pd: &D,
    max_agent_samples: usize,
) -> UndetectedIntensity {
    let mut out = predicted.clone();
    let pbar = mean_detection(predicted, agents, agent_weights, pd, max_agent_samples);
    for (w, p) in out.weights.iter_mut().zip(pbar) {
        *w *= 1.0 - p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SensorModel;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan(radius: f64) -> FloorPlan {
        FloorPlan {
            walls: vec![],
            roi_center: Vec2::new(1.0, -2.0),
            roi_radius: radius,
        }
    }

    fn sensor(pd: f64) -> SensorModel {
        SensorModel {
            p_detect: pd,
            ..SensorModel::default()
        }
    }

    fn agent() -> (Vec<AgentState>, Vec<f64>) {
        (vec![AgentState::new(Vec2::new(1.0, -2.0), Vec2::zeros())], vec![1.0])
    }

    struct HalfPlane {
        left: f64,
        right: f64,
        split: f64,
    }

    impl DetectionProbability for HalfPlane {
        fn detection_probability(&self, _agent: &Vec2, feature: &Vec2) -> f64 {
            if feature.x < self.split {
                self.left
            } else {
                self.right
            }
        }
    }

    #[test]
    fn init_mass_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lam = phd_init(&plan(30.0), 6.0, 10_000, &mut rng).unwrap();
        assert_relative_eq!(lam.mass(), 6.0, epsilon = 1e-12);
        assert!((lam.particles.len() as f64 - 10_000.0).abs() < 300.0);
        assert!(lam.particles.iter().all(|p| (p - Vec2::new(1.0, -2.0)).norm() <= 30.0));
        let empty = phd_init(&plan(30.0), 0.0, 10_000, &mut rng).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.mass(), 0.0);
    }

    #[test]
    fn lattice_area_close_to_disk() {
        let lat = Lattice::new(&plan(30.0), 10_000).unwrap();
        let disk = std::f64::consts::PI * 900.0;
        assert!((lat.total_area - disk).abs() / disk < 1e-3);
    }

    #[test]
    fn density_integrates_to_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lam = phd_init(&plan(5.0), 2.0, 2_000, &mut rng).unwrap();
        let uniform = 2.0 / (std::f64::consts::PI * 25.0);
        // interior density equals mass over disk area
        assert!((lam.density(&Vec2::new(1.0, -2.0)) - uniform).abs() / uniform < 1e-3);
        // midpoint quadrature over the bounding square
        let h = 0.02;
        let mut total = 0.0;
        let mut y = -5.0 + h / 2.0;
        while y < 5.0 {
            let mut x = -5.0 + h / 2.0;
            while x < 5.0 {
                total += lam.density(&Vec2::new(1.0 + x, -2.0 + y)) * h * h;
                x += h;
            }
            y += h;
        }
        assert!((total - 2.0).abs() < 2e-3, "integral {total}");
        assert_eq!(lam.density(&Vec2::new(7.0, -2.0)), 0.0);
    }

    #[test]
    fn init_particles_pass_chi_square_uniformity() {
        // 10^6 particles on a square ROI inscribed region: test on a 10x10 grid
        // over the square inscribed in the disk.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let radius = 30.0;
        let lam = phd_init(&plan(radius), 1.0, 1_000_000, &mut rng).unwrap();
        let half = radius / std::f64::consts::SQRT_2;
        let mut counts = [0usize; 100];
        let mut n = 0usize;
        for p in &lam.particles {
            let d = p - Vec2::new(1.0, -2.0);
            if d.x.abs() < half && d.y.abs() < half {
                let ix = ((d.x + half) / (2.0 * half) * 10.0) as usize;
                let iy = ((d.y + half) / (2.0 * half) * 10.0) as usize;
                counts[iy.min(9) * 10 + ix.min(9)] += 1;
                n += 1;
            }
        }
        let expected = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 99 degrees of freedom
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    #[test]
    fn predict_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lam = phd_init(&plan(30.0), 6.0, 5_000, &mut rng).unwrap();
        let p = phd_predict(&lam, &FeatureDynamicsParams::default(), 1e-4, &mut rng);
        assert_relative_eq!(p.mass(), 5.9941, epsilon = 1e-12);
        let still = FeatureDynamicsParams {
            p_survival: 1.0,
            sigma_a: 0.0,
        };
        let q = phd_predict(&lam, &still, 0.0, &mut rng);
        assert_relative_eq!(q.mass(), 6.0, epsilon = 1e-12);
        assert_eq!(q.particles, lam.particles);
    }

    #[test]
    fn birth_into_empty_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lam = phd_init(&plan(30.0), 0.0, 5_000, &mut rng).unwrap();
        let p = phd_predict(&lam, &FeatureDynamicsParams::default(), 1e-4, &mut rng);
        assert_relative_eq!(p.mass(), 1e-4, epsilon = 1e-15);
        let q = phd_predict(&lam, &FeatureDynamicsParams::default(), 0.0, &mut rng);
        assert!(q.is_empty());
    }

    #[test]
    fn birth_info_constant_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lam = phd_init(&plan(30.0), 6.0, 5_000, &mut rng).unwrap();
        let (xs, ws) = agent();
        let info = birth_info(&lam, &xs, &ws, &sensor(0.95), 64);
        assert_relative_eq!(info.mu_n, 5.7, epsilon = 1e-12);
        let a = Vec2::new(3.0, 4.0);
        let expected = 5.7 * lam.density(&a) / 6.0;
        assert_relative_eq!(info.intensity_at(&lam, &sensor(0.95), &a, &xs[0]), expected, epsilon = 1e-15);
        let none = birth_info(&lam, &xs, &ws, &sensor(0.0), 64);
        assert_eq!(none.mu_n, 0.0);
        assert_eq!(none.intensity_at(&lam, &sensor(0.0), &a, &xs[0]), 0.0);
    }

    #[test]
    fn birth_info_two_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = plan(10.0);
        let lam = phd_init(&p, 4.0, 4_000, &mut rng).unwrap();
        // split along the vertical line through the ROI center, which is a cell edge
        let pd = HalfPlane {
            left: 0.9,
            right: 0.3,
            split: 1.0,
        };
        let (xs, ws) = agent();
        let info = birth_info(&lam, &xs, &ws, &pd, 64);
        // symmetric lattice: half of the mass on each side
        assert_relative_eq!(info.mu_n, 0.9 * 2.0 + 0.3 * 2.0, epsilon = 1e-9);
        // f_n integrates to one: sum over particles of f_n * cell area
        let x = &xs[0];
        let total: f64 = lam
            .particles
            .iter()
            .zip(&lam.lattice.areas)
            .map(|(a, area)| info.intensity_at(&lam, &pd, a, x) * area)
            .sum();
        assert_relative_eq!(total / info.mu_n, 1.0, epsilon = 1e-9);
        let upd = phd_update(&lam, &xs, &ws, &pd, 64);
        assert_relative_eq!(upd.mass(), 2.0 * 0.1 + 2.0 * 0.7, epsilon = 1e-9);
    }

    #[test]
    fn update_scales_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lam = phd_init(&plan(30.0), 6.0, 5_000, &mut rng).unwrap();
        let (xs, ws) = agent();
        assert_relative_eq!(phd_update(&lam, &xs, &ws, &sensor(0.95), 64).mass(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(phd_update(&lam, &xs, &ws, &sensor(0.0), 64).mass(), 6.0, epsilon = 1e-12);
        let still = FeatureDynamicsParams {
            p_survival: 1.0,
            sigma_a: 0.0,
        };
        let mut cur = lam;
        for _ in 0..2 {
            cur = phd_update(&phd_predict(&cur, &still, 0.0, &mut rng), &xs, &ws, &sensor(0.5), 64);
        }
        assert_relative_eq!(cur.mass(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn mass_law_and_jitter_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = plan(30.0);
        let mut lam = phd_init(&p, 6.0, 2_000, &mut rng).unwrap();
        let dyn_ = FeatureDynamicsParams {
            p_survival: 0.999,
            sigma_a: 1e-2,
        };
        let (xs, ws) = agent();
        let n = 40;
        for _ in 0..n {
            lam = phd_update(&phd_predict(&lam, &dyn_, 0.0, &mut rng), &xs, &ws, &sensor(0.2), 64);
            assert!(lam.weights.iter().all(|w| *w >= 0.0));
        }
        let expected = 6.0 * (0.999f64 * 0.8).powi(n);
        assert!((lam.mass() - expected).abs() < 1e-9);
        let bound = 30.0 + 3.0 * 1e-2 * n as f64;
        assert!(lam.particles.iter().all(|a| (a - p.roi_center).norm() <= bound));
    }
}

//! The per-step BP-SLAM filter.
//!
//! One call to [`Filter::step`] runs the full message schedule for one time
//! step: prediction, measurement evaluation for legacy and new features,
//! iterative data association per anchor, measurement updates, beliefs,
//! resampling, detection and pruning, and the undetected-feature intensity
//! update.
//!
//! Particles are stacked: agent particle `i` is paired with particle `i` of
//! every feature, and each variable keeps its own weights. Double integrals
//! over agent and feature states are approximated along the pairs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::da::{self, DaInputs, DaOutputs};
use crate::error::{FilterError, ParamError};
use crate::geometry::{FloorPlan, Vec2};
use crate::models::{
    check, feature_transition, motion_transition_sample, range_pdf, AgentState, DetectionProbability,
    FeatureBelief, FeatureDynamicsParams, Measurement, MotionParams, SensorModel,
};
use crate::phd::{birth_info, phd_init, phd_predict, phd_update, BirthInfo, UndetectedIntensity};
use crate::resample::{effective_sample_size, normalize, normalize_log, systematic_indices};
use crate::rng::{keyed_stream, stream, Purpose};
use nalgebra::DMatrix;

const AGENT_STREAM: usize = 0xffff;

/// Tuning and model parameters of the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub n_particles: usize,
    /// Existence probability above which a feature is reported as detected.
    pub p_det: f64,
    /// Existence probability at or below which a feature is removed.
    pub p_prun: f64,
    pub da_tolerance: f64,
    pub da_max_iterations: usize,
    /// Use the vector-message form of the association solver.
    pub da_direct: bool,
    pub motion: MotionParams,
    pub dynamics: FeatureDynamicsParams,
    pub sensor: SensorModel,
    /// Expected number of features born per step (uniform on the ROI).
    pub mu_birth: f64,
    /// Initial expected number of undetected features per anchor.
    pub mu_initial: f64,
    /// Lattice budget of the undetected-feature intensity per anchor.
    pub intensity_particles: usize,
    /// Resample a feature when its effective sample size is at or below this
    /// fraction of the particle count.
    pub resample_ess_fraction: f64,
    /// Agent particles used to average a position-dependent detection
    /// probability in the intensity filter.
    pub intensity_agent_samples: usize,
    /// Feature particles each agent particle is paired with when evaluating
    /// legacy features; 1 gives the plain stacked pairing.
    pub pair_partners: usize,
    /// Features whose position spread (RMS distance from the mean, m) is at
    /// or above this value are updated but do not weight the agent.
    pub anchor_spread: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            p_det: 0.5,
            p_prun: 1e-4,
            da_tolerance: da::DEFAULT_TOLERANCE,
            da_max_iterations: da::DEFAULT_MAX_ITERATIONS,
            da_direct: false,
            motion: MotionParams::default(),
            dynamics: FeatureDynamicsParams::default(),
            sensor: SensorModel::default(),
            mu_birth: 1e-4,
            mu_initial: 6.0,
            intensity_particles: 10_000,
            resample_ess_fraction: 0.5,
            intensity_agent_samples: 64,
            pair_partners: 4,
            anchor_spread: 0.2,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.n_particles >= 1, "n_particles", self.n_particles as f64)?;
        check(self.p_prun > 0.0 && self.p_prun <= self.p_det, "p_prun", self.p_prun)?;
        check(self.p_det < 1.0, "p_det", self.p_det)?;
        check(self.da_tolerance > 0.0, "da_tolerance", self.da_tolerance)?;
        check(self.da_max_iterations >= 1, "da_max_iterations", self.da_max_iterations as f64)?;
        check(self.mu_birth >= 0.0 && self.mu_birth.is_finite(), "mu_birth", self.mu_birth)?;
        check(self.mu_initial >= 0.0 && self.mu_initial.is_finite(), "mu_initial", self.mu_initial)?;
        check(self.intensity_particles >= 1, "intensity_particles", self.intensity_particles as f64)?;
        check(
            (0.0..=1.0).contains(&self.resample_ess_fraction),
            "resample_ess_fraction",
            self.resample_ess_fraction,
        )?;
        check(self.anchor_spread > 0.0, "anchor_spread", self.anchor_spread)?;
        check(self.pair_partners >= 1, "pair_partners", self.pair_partners as f64)?;
        check(self.intensity_agent_samples >= 1, "intensity_agent_samples", self.intensity_agent_samples as f64)?;
        self.motion.validate()?;
        self.dynamics.validate()?;
        self.sensor.validate()
    }
}

/// Prior information at the first time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPrior {
    /// Center of the uniform agent prior.
    pub agent_center: AgentState,
    /// Half width of the uniform prior of every agent state component
    /// (m for position, m/s for velocity).
    pub agent_half_width: f64,
    pub pa_positions: Vec<Vec2>,
    /// Standard deviation of the Gaussian PA position priors.
    pub pa_sigma: f64,
    /// Floor plan whose ROI carries the undetected-feature intensities.
    pub plan: FloorPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: u64,
    pub belief: FeatureBelief,
}

/// Map state of one anchor: legacy features and the undetected intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTrack {
    pub features: Vec<Feature>,
    pub intensity: UndetectedIntensity,
    next_id: u64,
}

impl AnchorTrack {
    /// Appends a feature with a fresh identifier and returns the identifier.
    pub fn add_feature(&mut self, belief: FeatureBelief) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.features.push(Feature { id, belief });
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEstimate {
    pub id: u64,
    pub existence: f64,
    pub position: Vec2,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorReport {
    /// Retained features after pruning.
    pub features: Vec<FeatureEstimate>,
    pub n_measurements: usize,
    pub n_new: usize,
    pub n_pruned: usize,
    pub da_iterations: usize,
    pub da_converged: bool,
    pub mu_n: f64,
    pub undetected_mass: f64,
}

impl AnchorReport {
    pub fn detected(&self) -> impl Iterator<Item = &FeatureEstimate> {
        self.features.iter().filter(|f| f.detected)
    }

    pub fn n_detected(&self) -> usize {
        self.detected().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// MMSE estimate of the agent state.
    pub agent: AgentState,
    pub anchors: Vec<AnchorReport>,
    pub agent_ess: f64,
}

/// Per-feature quantities of the legacy measurement evaluation.
#[derive(Debug, Clone)]
struct LegacyTerms {
    /// Partner offsets: pair `q = s * n + i` joins agent particle `i` with
    /// feature particle `(i + s * stride) % n`.
    partners: usize,
    stride: usize,
    /// Normalized pair weights.
    omega: Vec<f64>,
    /// `1 - P_d` per pair.
    miss: Vec<f64>,
    /// `P_d f(z_m | x, a) / (mu_FA f_FA(z_m))`, measurement-major.
    lik: Vec<f64>,
    mass: f64,
    alpha: f64,
}

#[derive(Debug, Clone)]
struct NewbornTerms {
    particles: Vec<Vec2>,
    /// Unnormalized importance weights.
    weights: Vec<f64>,
    /// `xi_m(0) - 1`.
    ratio: f64,
}

/// Measurement evaluation of one anchor: the association inputs and the
/// particle quantities the update reuses.
#[derive(Debug, Clone)]
pub struct AnchorEvaluation {
    pub inputs: DaInputs,
    legacy: Vec<LegacyTerms>,
    newborn: Vec<NewbornTerms>,
}

/// BP-SLAM filter state.
#[derive(Debug, Clone)]
pub struct Filter {
    params: FilterParams,
    seed: u64,
    /// Number of completed steps.
    step: usize,
    pub agents: Vec<AgentState>,
    pub agent_weights: Vec<f64>,
    pub anchors: Vec<AnchorTrack>,
    birth: Vec<BirthInfo>,
    predicted: bool,
}

impl Filter {
    pub fn new(params: FilterParams, prior: &FilterPrior, seed: u64) -> Result<Self, FilterError> {
        params.validate()?;
        if prior.pa_positions.is_empty() {
            return Err(ParamError::Invalid("at least one physical anchor is required".into()).into());
        }
        check(prior.agent_half_width >= 0.0, "agent_half_width", prior.agent_half_width)?;
        check(prior.pa_sigma >= 0.0, "pa_sigma", prior.pa_sigma)?;
        let n = params.n_particles;
        let mut rng = stream(seed, 0, AGENT_STREAM, Purpose::Init);
        let h = prior.agent_half_width;
        let c = prior.agent_center;
        let agents = (0..n)
            .map(|_| {
                let mut u = || if h > 0.0 { rng.random_range(-h..h) } else { 0.0 };
                AgentState::new(c.p + Vec2::new(u(), u()), c.v + Vec2::new(u(), u()))
            })
            .collect();
        let mut anchors = Vec::with_capacity(prior.pa_positions.len());
        for (j, pa) in prior.pa_positions.iter().enumerate() {
            let mut rng = stream(seed, 0, j, Purpose::Init);
            let particles = (0..n).map(|_| pa + gaussian2(&mut rng, prior.pa_sigma)).collect();
            let intensity = phd_init(&prior.plan, params.mu_initial, params.intensity_particles, &mut rng)?;
            let mut track = AnchorTrack {
                features: Vec::new(),
                intensity,
                next_id: 0,
            };
            track.add_feature(FeatureBelief::uniform(particles, 1.0));
            anchors.push(track);
        }
        Ok(Self {
            birth: vec![BirthInfo::none(); anchors.len()],
            params,
            seed,
            step: 0,
            agents,
            agent_weights: vec![1.0 / n as f64; n],
            anchors,
            predicted: false,
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    /// Number of completed steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn birth(&self, j: usize) -> BirthInfo {
        self.birth[j]
    }

    /// Weighted mean of the agent particles.
    pub fn agent_estimate(&self) -> AgentState {
        let (p, v) = self
            .agents
            .iter()
            .zip(&self.agent_weights)
            .fold((Vec2::zeros(), Vec2::zeros()), |(p, v), (x, w)| (p + x.p * *w, v + x.v * *w));
        AgentState::new(p, v)
    }

    /// Prediction to the next time step. The priors describe the first
    /// step, so the first call only prepares the birth statistics.
    pub fn predict(&mut self) {
        if self.predicted {
            return;
        }
        let n = self.step + 1;
        if self.step > 0 {
            let mut rng = stream(self.seed, n, AGENT_STREAM, Purpose::AgentPredict);
            let motion = self.params.motion;
            for x in &mut self.agents {
                *x = motion_transition_sample(x, &motion, &mut rng);
            }
            for (j, track) in self.anchors.iter_mut().enumerate() {
                let mut rng = stream(self.seed, n, j, Purpose::FeaturePredict);
                for f in &mut track.features {
                    f.belief = feature_transition(&f.belief, &self.params.dynamics, &mut rng);
                }
                let mut rng = stream(self.seed, n, j, Purpose::Intensity);
                track.intensity = phd_predict(&track.intensity, &self.params.dynamics, self.params.mu_birth, &mut rng);
            }
        }
        for (j, track) in self.anchors.iter().enumerate() {
            self.birth[j] = birth_info(
                &track.intensity,
                &self.agents,
                &self.agent_weights,
                &self.params.sensor,
                self.params.intensity_agent_samples,
            );
        }
        self.predicted = true;
    }

    /// Measurement evaluation for legacy and new features of anchor `j`
    /// against the predicted state.
    pub fn evaluate_anchor(&self, j: usize, frame: &[Measurement]) -> AnchorEvaluation {
        let sensor = &self.params.sensor;
        let track = &self.anchors[j];
        let n = self.agents.len();
        let (nk, nm) = (track.features.len(), frame.len());

        let mut beta = DMatrix::<f64>::zeros(nk, nm + 1);
        let mut legacy = Vec::with_capacity(nk);
        let partners = self.params.pair_partners.min(n).max(1);
        let stride = n / partners;
        let np = n * partners;
        for (k, f) in track.features.iter().enumerate() {
            let b = &f.belief;
            let mut omega = Vec::with_capacity(np);
            let mut miss = Vec::with_capacity(np);
            let mut dist = Vec::with_capacity(np);
            for s in 0..partners {
                for (i, (x, wx)) in self.agents.iter().zip(&self.agent_weights).enumerate() {
                    let ia = (i + s * stride) % n;
                    let a = &b.particles[ia];
                    omega.push(wx * b.weights[ia]);
                    miss.push(1.0 - sensor.detection_probability(&x.p, a));
                    dist.push((x.p - a).norm());
                }
            }
            if normalize(&mut omega) <= 0.0 {
                omega.fill(1.0 / np as f64);
            }
            let mut lik = vec![0.0; nm * np];
            for (m, z) in frame.iter().enumerate() {
                let sigma = sensor.effective_sigma(z);
                let inv_clutter = 1.0 / sensor.clutter_normalizer(z.z);
                let row = &mut lik[m * np..(m + 1) * np];
                let mut acc = 0.0;
                for q in 0..np {
                    let v = (1.0 - miss[q]) * range_pdf(z.z, sigma, dist[q]) * inv_clutter;
                    row[q] = v;
                    acc += omega[q] * v;
                }
                beta[(k, m + 1)] = b.existence * acc;
            }
            let alpha = 1.0 - b.existence;
            let miss_mean: f64 = omega.iter().zip(&miss).map(|(w, q)| w * q).sum();
            beta[(k, 0)] = b.existence * miss_mean + alpha;
            if beta.row(k).iter().all(|v| *v <= 0.0) {
                beta[(k, 0)] = f64::MIN_POSITIVE;
            }
            legacy.push(LegacyTerms {
                partners,
                stride,
                omega,
                miss,
                lik,
                mass: b.existence,
                alpha,
            });
        }

        let mut xi = DMatrix::<f64>::from_element(nm, nk + 1, 1.0);
        let mut newborn = Vec::with_capacity(nm);
        for (m, z) in frame.iter().enumerate() {
            let terms = self.sample_newborn(j, z);
            xi[(m, 0)] = 1.0 + terms.ratio;
            newborn.push(terms);
        }
        AnchorEvaluation {
            inputs: DaInputs { beta, xi },
            legacy,
            newborn,
        }
    }

    // Range-ring proposal: agent particle i, uniform bearing, range around z.
    fn sample_newborn(&self, j: usize, z: &Measurement) -> NewbornTerms {
        let birth = self.birth[j];
        if birth.mu_n <= 0.0 {
            return NewbornTerms {
                particles: Vec::new(),
                weights: Vec::new(),
                ratio: 0.0,
            };
        }
        let sensor = &self.params.sensor;
        let sigma = sensor.effective_sigma(z);
        let key = z.z.to_bits() ^ z.sigma.to_bits().rotate_left(17);
        let mut rng = keyed_stream(self.seed, self.step + 1, j, Purpose::NewFeatures, key);
        let bearing = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let intensity = &self.anchors[j].intensity;
        let n = self.agents.len();
        let mut particles = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (x, wx) in self.agents.iter().zip(&self.agent_weights) {
            let theta = bearing.sample(&mut rng);
            let r = z.z + sigma * rng.sample::<f64, _>(StandardNormal);
            let (s, c) = theta.sin_cos();
            let a = x.p + Vec2::new(c, s) * r.abs();
            let v = if r > 0.0 {
                birth.intensity_at(intensity, sensor, &a, x) * std::f64::consts::TAU * r
            } else {
                0.0
            };
            particles.push(a);
            weights.push(wx * v);
        }
        let total: f64 = weights.iter().sum();
        NewbornTerms {
            particles,
            weights,
            ratio: total / sensor.clutter_normalizer(z.z),
        }
    }

    /// Runs the association solver on an evaluation.
    pub fn solve_da(&self, eval: &AnchorEvaluation) -> Result<DaOutputs, FilterError> {
        let p = &self.params;
        let out = if p.da_direct {
            da::da_iterate_direct(&eval.inputs, p.da_tolerance, p.da_max_iterations)?
        } else {
            da::da_iterate(&eval.inputs, p.da_tolerance, p.da_max_iterations)?
        };
        Ok(out)
    }

    /// Processes the measurement frames of one time step (one frame per
    /// anchor).
    pub fn step(&mut self, frames: &[Vec<Measurement>]) -> Result<StepReport, FilterError> {
        if frames.len() != self.anchors.len() {
            return Err(FilterError::AnchorCount {
                expected: self.anchors.len(),
                got: frames.len(),
            });
        }
        self.predict();
        let n_step = self.step + 1;
        let n = self.agents.len();

        let mut log_w: Vec<f64> = self.agent_weights.iter().map(|w| w.ln()).collect();
        let mut reports = Vec::with_capacity(self.anchors.len());
        let mut updated_tracks = Vec::with_capacity(self.anchors.len());
        for (j, frame) in frames.iter().enumerate() {
            let eval = self.evaluate_anchor(j, frame);
            let out = self.solve_da(&eval)?;
            let track = &self.anchors[j];
            let mut features = Vec::with_capacity(track.features.len() + frame.len());

            for (k, (f, terms)) in track.features.iter().zip(&eval.legacy).enumerate() {
                let eta = out.eta.row(k);
                let np = terms.omega.len();
                let mut g = Vec::with_capacity(np);
                for q in 0..np {
                    let mut v = eta[0] * terms.miss[q];
                    for m in 0..frame.len() {
                        v += eta[m + 1] * terms.lik[m * np + q];
                    }
                    g.push(v);
                }
                let missed = eta[0] * terms.alpha;
                let wa = &f.belief.weights;
                let anchors_agent = spread(&f.belief) < self.params.anchor_spread;
                let mut weights = vec![0.0; n];
                for i in 0..n {
                    let (mut num, mut den) = (0.0, 0.0);
                    for s in 0..terms.partners {
                        let q = s * n + i;
                        let ia = (i + s * terms.stride) % n;
                        num += wa[ia] * g[q];
                        den += wa[ia];
                        weights[ia] += terms.omega[q] * g[q];
                    }
                    if anchors_agent {
                        let message = if den > 0.0 { num / den } else { 0.0 };
                        log_w[i] += (terms.mass * message + missed).ln();
                    }
                }
                let mass1 = terms.mass * normalize(&mut weights);
                let total = mass1 + missed;
                let existence = if total > 0.0 { (mass1 / total).clamp(0.0, 1.0) } else { 0.0 };
                if mass1 <= 0.0 {
                    weights.clone_from(wa);
                }
                features.push(Feature {
                    id: f.id,
                    belief: FeatureBelief {
                        particles: f.belief.particles.clone(),
                        weights,
                        existence,
                    },
                });
            }

            let mut newborn = Vec::new();
            for (m, terms) in eval.newborn.into_iter().enumerate() {
                if terms.ratio <= 0.0 {
                    continue;
                }
                let s = out.sigma_out.row(m);
                let phi1 = s[0] * terms.ratio;
                let phi0: f64 = s.sum();
                let existence = phi1 / (phi1 + phi0);
                let mut weights = terms.weights;
                normalize(&mut weights);
                newborn.push(FeatureBelief {
                    particles: terms.particles,
                    weights,
                    existence,
                });
            }

            let intensity = phd_update(
                &track.intensity,
                &self.agents,
                &self.agent_weights,
                &self.params.sensor,
                self.params.intensity_agent_samples,
            );
            reports.push(AnchorReport {
                features: Vec::new(),
                n_measurements: frame.len(),
                n_new: newborn.len(),
                n_pruned: 0,
                da_iterations: out.iterations,
                da_converged: out.converged,
                mu_n: self.birth[j].mu_n,
                undetected_mass: intensity.mass(),
            });
            updated_tracks.push((features, newborn, intensity));
        }

        let mut weights = Vec::with_capacity(n);
        if !normalize_log(&log_w, &mut weights) {
            return Err(FilterError::Divergence {
                step: n_step,
                what: "agent",
                detail: format!("{n} particles, {} anchors", self.anchors.len()),
            });
        }
        self.agent_weights = weights;
        let agent = self.agent_estimate();
        let agent_ess = effective_sample_size(&self.agent_weights);
        // The agent is resampled every step: feature weights are updated
        // with pair weights that include the agent weights, so carrying
        // non-uniform agent weights into the next step would count them twice.
        let mut rng = stream(self.seed, n_step, AGENT_STREAM, Purpose::Resample);
        let idx = systematic_indices(&self.agent_weights, n, &mut rng);
        self.agents = idx.iter().map(|&i| self.agents[i]).collect();
        self.agent_weights = vec![1.0 / n as f64; n];
        let threshold = self.params.resample_ess_fraction * n as f64;

        for (j, ((mut features, newborn, intensity), report)) in
            updated_tracks.into_iter().zip(reports.iter_mut()).enumerate()
        {
            let track = &mut self.anchors[j];
            track.intensity = intensity;
            for belief in newborn {
                let id = track.next_id;
                track.next_id += 1;
                features.push(Feature { id, belief });
            }
            for f in &mut features {
                if effective_sample_size(&f.belief.weights) <= threshold {
                    let mut rng = keyed_stream(self.seed, n_step, j, Purpose::Resample, f.id);
                    let idx = systematic_indices(&f.belief.weights, n, &mut rng);
                    f.belief.particles = idx.iter().map(|&i| f.belief.particles[i]).collect();
                    f.belief.weights = vec![1.0 / n as f64; n];
                }
            }
            let (estimates, pruned) = detect_prune(&mut features, self.params.p_det, self.params.p_prun);
            track.features = features;
            report.features = estimates;
            report.n_pruned = pruned;
        }

        self.step = n_step;
        self.predicted = false;
        Ok(StepReport {
            step: n_step,
            agent,
            anchors: reports,
            agent_ess,
        })
    }
}

/// Root-mean-square distance of a belief's particles from its mean.
pub fn spread(belief: &FeatureBelief) -> f64 {
    let mean = belief.mean();
    belief
        .particles
        .iter()
        .zip(&belief.weights)
        .map(|(p, w)| w * (p - mean).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Removes features with existence probability at or below `p_prun` and
/// returns MMSE estimates of the rest, flagging those above `p_det`.
pub fn detect_prune(features: &mut Vec<Feature>, p_det: f64, p_prun: f64) -> (Vec<FeatureEstimate>, usize) {
    let before = features.len();
    features.retain(|f| f.belief.existence > p_prun);
    let estimates = features
        .iter()
        .map(|f| FeatureEstimate {
            id: f.id,
            existence: f.belief.existence,
            position: f.belief.mean(),
            detected: f.belief.existence > p_det,
        })
        .collect();
    (estimates, before - features.len())
}

fn gaussian2<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec2 {
    Vec2::new(
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
    )
}

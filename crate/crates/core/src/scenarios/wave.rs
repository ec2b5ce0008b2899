//! Standing-wave field observed along short space-time trajectories.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    assemble, invalid, piece_patches, stream, BurstShape, BurstSpec, CalibrationPlan, ModalityPlan, Piece, Rect,
    ScenarioError,
};
use crate::model::{FusionDataset, GroundTruth, LatentPoint};
use crate::rigidity::{check_patch_rigidity, required_common_sensors};

/// `u(x, t) = cos(2πx/140) · cos(2πt/440)`.
pub fn wave_eval(x: f64, t: f64) -> f64 {
    (2.0 * PI * x / 140.0).cos() * (2.0 * PI * t / 440.0).cos()
}

/// An observer records `samples` equispaced values of `u` along the
/// segment `center + δ·direction`, `δ ∈ [−half_length, half_length]`.
///
/// `u` varies on scales of 140 in space and 440 in time, so trajectories
/// must be long compared with the sampled domain to resolve both latent
/// directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub modality_id: usize,
    /// Space-time direction `(x, t)`; normalized before use.
    pub direction: [f64; 2],
    pub half_length: f64,
    pub samples: usize,
    /// Union of `(x, t)` boxes.
    pub domain: Vec<Rect>,
}

impl ObserverConfig {
    pub fn unit_direction(&self) -> [f64; 2] {
        let n = self.direction[0].hypot(self.direction[1]);
        [self.direction[0] / n, self.direction[1] / n]
    }

    /// Observation of the trajectory centered at `center`.
    pub fn observe(&self, center: &[f64]) -> Vec<f64> {
        let v = self.unit_direction();
        let n = self.samples;
        (0..n)
            .map(|i| {
                let delta = if n == 1 {
                    0.0
                } else {
                    -self.half_length + 2.0 * self.half_length * i as f64 / (n - 1) as f64
                };
                wave_eval(center[0] + delta * v[0], center[1] + delta * v[1])
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.domain.iter().any(|r| r.contains(x))
    }

    fn area(r: &Rect) -> f64 {
        r.lo.iter().zip(&r.hi).map(|(lo, hi)| hi - lo).product()
    }

    fn sample(&self, rng: &mut impl Rng) -> LatentPoint {
        let total: f64 = self.domain.iter().map(Self::area).sum();
        let mut pick = rng.random_range(0.0..total);
        for r in &self.domain {
            let a = Self::area(r);
            if pick < a {
                return r.sample(rng);
            }
            pick -= a;
        }
        self.domain[self.domain.len() - 1].sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub observers: Vec<ObserverConfig>,
    pub points_per_modality: usize,
    pub burst_size: usize,
    pub sigma: f64,
    pub burst_shape: BurstShape,
    pub calibration_per_pair: usize,
}

fn r(x: [f64; 2], t: [f64; 2]) -> Rect {
    Rect::new(&[x[0], t[0]], &[x[1], t[1]])
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            observers: vec![
                // a slow traveller; an observer moving through space alone
                // sees time only through a 1e-4 relative change of amplitude
                ObserverConfig {
                    modality_id: 1,
                    direction: [0.1, 1.0],
                    half_length: 150.0,
                    samples: 7,
                    domain: vec![r([0.0, 3.5], [1.0, 1.4]), r([3.5, 5.0], [1.0, 1.2])],
                },
                // a stationary observer
                ObserverConfig {
                    modality_id: 2,
                    direction: [0.0, 1.0],
                    half_length: 50.0,
                    samples: 7,
                    domain: vec![r([2.0, 4.5], [1.0, 1.4]), r([4.5, 6.2], [1.15, 1.4])],
                },
                ObserverConfig {
                    modality_id: 3,
                    direction: [1.0, 1.0],
                    half_length: 100.0,
                    samples: 7,
                    domain: vec![r([2.5, 6.2], [1.0, 1.25]), r([4.0, 6.2], [1.25, 1.4])],
                },
            ],
            points_per_modality: 500,
            burst_size: 50,
            sigma: 0.02,
            burst_shape: BurstShape::Gaussian,
            calibration_per_pair: 3,
        }
    }
}

fn overlap(a: &Rect, b: &Rect) -> bool {
    (0..a.dim()).all(|i| a.lo[i].max(b.lo[i]) < a.hi[i].min(b.hi[i]))
}

impl WaveConfig {
    pub fn validate(&self, prefix: &str) -> Result<(), ScenarioError> {
        if self.observers.len() < 2 {
            return Err(invalid(format!("{prefix}.wave.observers"), "at least two observers are required"));
        }
        let need = required_common_sensors(2);
        for (o, obs) in self.observers.iter().enumerate() {
            let f = |name: &str| format!("{prefix}.wave.observers[{o}].{name}");
            if obs.samples < need {
                return Err(invalid(
                    f("samples"),
                    format!("{} samples per trajectory cannot embed a 2-dimensional domain; need at least {need}", obs.samples),
                ));
            }
            if !(obs.direction[0].hypot(obs.direction[1]) > 0.0) {
                return Err(invalid(f("direction"), "must be non-zero"));
            }
            if !(obs.half_length > 0.0) {
                return Err(invalid(f("half_length"), "must be positive"));
            }
            if obs.domain.is_empty() {
                return Err(invalid(f("domain"), "domain has no boxes"));
            }
            for (j, rect) in obs.domain.iter().enumerate() {
                rect.validate(&format!("{}[{j}]", f("domain")))?;
                if rect.dim() != 2 || ObserverConfig::area(rect) <= 0.0 {
                    return Err(invalid(format!("{}[{j}]", f("domain")), "must be a planar box with positive area"));
                }
            }
            if self.observers[..o].iter().any(|p| p.modality_id == obs.modality_id) {
                return Err(invalid(f("modality_id"), format!("duplicate modality id {}", obs.modality_id)));
            }
        }
        for a in 0..self.observers.len() {
            for b in (a + 1)..self.observers.len() {
                let meets = self.observers[a]
                    .domain
                    .iter()
                    .any(|ra| self.observers[b].domain.iter().any(|rb| overlap(ra, rb)));
                if !meets {
                    return Err(invalid(
                        format!("{prefix}.wave.observers"),
                        format!("domains of observers {} and {} do not intersect", a, b),
                    ));
                }
            }
        }
        if self.points_per_modality == 0 {
            return Err(invalid(format!("{prefix}.points"), "must be at least 1"));
        }
        if self.burst_size < 2 {
            return Err(invalid(format!("{prefix}.burst_size"), "must be at least 2"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("{prefix}.sigma"), format!("must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// One modality per observer type.
pub fn make_wave_scenario(cfg: &WaveConfig, seed: u64) -> Result<(FusionDataset, GroundTruth), ScenarioError> {
    cfg.validate("scenario")?;
    let mut plans = Vec::with_capacity(cfg.observers.len());
    for obs in &cfg.observers {
        let mut rng = stream(seed, obs.modality_id as u64);
        let pieces: Vec<Piece> = obs.domain.iter().map(|r| Piece { rect: r.clone(), count: 0 }).collect();
        let labels = piece_patches(&pieces);
        let patch_of = {
            let labels = labels.clone();
            move |x: &[f64]| obs.domain.iter().position(|r| r.contains(x)).map(|i| labels[i]).unwrap_or(0)
        };
        let centers = (0..cfg.points_per_modality)
            .map(|_| {
                let c = obs.sample(&mut rng);
                let p = patch_of(&c);
                (c, p)
            })
            .collect();
        plans.push(ModalityPlan {
            modality_id: obs.modality_id,
            ambient_dim: obs.samples,
            domain: super::describe_domain(&pieces),
            centers,
            observe: Box::new(move |x| obs.observe(x)),
            patch_of: Box::new(patch_of),
        });
    }
    let mut calibration = Vec::new();
    let mut rng = stream(seed, 500);
    for a in 0..cfg.observers.len() {
        for b in (a + 1)..cfg.observers.len() {
            let (oa, ob) = (&cfg.observers[a], &cfg.observers[b]);
            let mut found = 0;
            let mut tries = 0;
            while found < cfg.calibration_per_pair && tries < 1_000_000 {
                tries += 1;
                let c = oa.sample(&mut rng);
                if ob.contains(&c) {
                    calibration.push(CalibrationPlan {
                        center: c,
                        modality_a: oa.modality_id,
                        modality_b: ob.modality_id,
                    });
                    found += 1;
                }
            }
        }
    }
    let burst = BurstSpec {
        size: cfg.burst_size,
        sigma: cfg.sigma,
        shape: cfg.burst_shape,
    };
    let (ds, truth) = assemble(2, "wave", burst, &plans, &calibration, seed)?;
    let report = check_patch_rigidity(&ds, Some(&truth));
    if !report.verdict {
        return Err(ScenarioError::NotRigid {
            reason: format!(
                "observer patches: components {:?}, deficits {:?}",
                report.components, report.deficits
            ),
            report: Box::new(report),
        });
    }
    Ok((ds, truth))
}

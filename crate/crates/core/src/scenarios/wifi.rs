//! Synthetic indoor floor with twelve transmitters observed in triplets.

use serde::{Deserialize, Serialize};

use super::{assemble, invalid, stream, BurstShape, BurstSpec, CalibrationPlan, ModalityPlan, ScenarioError};
use crate::model::{FusionDataset, GroundTruth, LatentPoint};
use crate::rigidity::check_patch_rigidity;

const MAX_TRIES: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WifiConfig {
    /// Floor extent `(width, height)`; the floor is `[0, w] x [0, h]`.
    pub floor: [f64; 2],
    pub transmitters: Vec<[f64; 2]>,
    pub decay: f64,
    pub threshold: f64,
    /// One-based transmitter indices of each modality.
    pub triplets: Vec<[usize; 3]>,
    pub points_per_modality: usize,
    pub burst_size: usize,
    pub sigma: f64,
    pub burst_shape: BurstShape,
    pub calibration_per_pair: usize,
    /// Centers keep this many `σ` away from every threshold circle, so
    /// bursts rarely straddle the cut-off.
    pub edge_margin_sigmas: f64,
}

impl Default for WifiConfig {
    fn default() -> Self {
        Self {
            floor: [400.0, 300.0],
            transmitters: vec![
                [50.0, 110.0],
                [50.0, 190.0],
                [350.0, 100.0],
                [350.0, 200.0],
                [130.0, 250.0],
                [120.0, 150.0],
                [210.0, 150.0],
                [290.0, 150.0],
                [200.0, 250.0],
                [170.0, 210.0],
                [170.0, 80.0],
                [250.0, 220.0],
            ],
            decay: 100.0,
            threshold: 0.05,
            triplets: vec![[1, 2, 6], [5, 9, 10], [6, 7, 11], [3, 4, 8], [7, 8, 12]],
            points_per_modality: 500,
            // Bursts sit tens of units apart at these counts; narrower or
            // smaller bursts leave the map between them unconstrained.
            burst_size: 100,
            sigma: 6.0,
            burst_shape: BurstShape::Gaussian,
            calibration_per_pair: 3,
            edge_margin_sigmas: 3.0,
        }
    }
}

/// Thresholded signal strengths `g_i(x)` of every transmitter.
pub fn wifi_signal_eval(x: &[f64], cfg: &WifiConfig) -> Vec<f64> {
    cfg.transmitters
        .iter()
        .map(|mu| {
            let r2 = (x[0] - mu[0]).powi(2) + (x[1] - mu[1]).powi(2);
            let s = (-r2 / (cfg.decay * cfg.decay)).exp();
            if s >= cfg.threshold {
                s
            } else {
                0.0
            }
        })
        .collect()
}

impl WifiConfig {
    /// Distance at which a signal drops to the threshold.
    pub fn threshold_radius(&self) -> f64 {
        self.decay * (1.0 / self.threshold).ln().sqrt()
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ScenarioError> {
        let f = |name: &str| format!("{prefix}.wifi.{name}");
        if self.transmitters.len() != 12 {
            return Err(invalid(f("transmitters"), format!("expected 12 positions, got {}", self.transmitters.len())));
        }
        if !(self.floor[0] > 0.0 && self.floor[1] > 0.0) {
            return Err(invalid(f("floor"), "width and height must be positive"));
        }
        if !(self.decay > 0.0) {
            return Err(invalid(f("decay"), "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(f("threshold"), "must lie in (0, 1)"));
        }
        if self.triplets.is_empty() {
            return Err(invalid(f("triplets"), "at least one triplet is required"));
        }
        for (t, tri) in self.triplets.iter().enumerate() {
            if tri.iter().any(|&i| i == 0 || i > 12) || tri[0] == tri[1] || tri[0] == tri[2] || tri[1] == tri[2] {
                return Err(invalid(
                    format!("{}[{t}]", f("triplets")),
                    format!("{tri:?} must name 3 distinct transmitters in 1..=12"),
                ));
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
        if !(self.edge_margin_sigmas >= 0.0) {
            return Err(invalid(f("edge_margin_sigmas"), "must be non-negative"));
        }
        Ok(())
    }

    fn on_floor(&self, x: &[f64]) -> bool {
        (0.0..=self.floor[0]).contains(&x[0]) && (0.0..=self.floor[1]).contains(&x[1])
    }

    /// All three signals of triplet `t` exceed the threshold with margin.
    pub fn in_domain(&self, t: usize, x: &[f64]) -> bool {
        let radius = self.threshold_radius() - self.edge_margin_sigmas * self.sigma;
        self.on_floor(x)
            && self.triplets[t].iter().all(|&i| {
                let mu = self.transmitters[i - 1];
                ((x[0] - mu[0]).powi(2) + (x[1] - mu[1]).powi(2)).sqrt() <= radius
            })
    }

    fn label(&self, t: usize) -> String {
        let [a, b, c] = self.triplets[t];
        format!("({a},{b},{c})")
    }
}

fn rejection_sample(
    cfg: &WifiConfig,
    accept: impl Fn(&[f64]) -> bool,
    count: usize,
    rng: &mut impl rand::Rng,
) -> Option<Vec<LatentPoint>> {
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        if tries >= MAX_TRIES && out.is_empty() {
            return None;
        }
        tries += 1;
        let x = vec![rng.random_range(0.0..cfg.floor[0]), rng.random_range(0.0..cfg.floor[1])];
        if accept(&x) {
            out.push(x);
        }
    }
    Some(out)
}

/// One modality per triplet, observing the three thresholded signals.
pub fn make_wifi_scenario(cfg: &WifiConfig, seed: u64) -> Result<(FusionDataset, GroundTruth), ScenarioError> {
    cfg.validate("scenario")?;
    let k = cfg.triplets.len();
    let mut plans = Vec::with_capacity(k);
    for t in 0..k {
        let mut rng = stream(seed, t as u64 + 1);
        let centers = rejection_sample(cfg, |x| cfg.in_domain(t, x), cfg.points_per_modality, &mut rng)
            .ok_or_else(|| ScenarioError::EmptyDomain(format!("domain of triplet {}", cfg.label(t))))?;
        let tri = cfg.triplets[t];
        plans.push(ModalityPlan {
            modality_id: t + 1,
            ambient_dim: 3,
            domain: format!("all of transmitters {} above {}", cfg.label(t), cfg.threshold),
            centers: centers.into_iter().map(|c| (c, 0)).collect(),
            observe: Box::new(move |x| {
                let g = wifi_signal_eval(x, cfg);
                tri.iter().map(|&i| g[i - 1]).collect()
            }),
            patch_of: Box::new(|_| 0),
        });
    }

    let mut calibration = Vec::new();
    let mut rng = stream(seed, 500);
    for a in 0..k {
        for b in (a + 1)..k {
            let shared = rejection_sample(
                cfg,
                |x| cfg.in_domain(a, x) && cfg.in_domain(b, x),
                cfg.calibration_per_pair,
                &mut rng,
            );
            for center in shared.unwrap_or_default() {
                calibration.push(CalibrationPlan {
                    center,
                    modality_a: a + 1,
                    modality_b: b + 1,
                });
            }
        }
    }

    let burst = BurstSpec {
        size: cfg.burst_size,
        sigma: cfg.sigma,
        shape: cfg.burst_shape,
    };
    let (ds, truth) = assemble(2, "wifi", burst, &plans, &calibration, seed)?;
    let report = check_patch_rigidity(&ds, Some(&truth));
    if !report.verdict {
        let failing: Vec<String> = report
            .deficits
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(v, _)| format!("triplet {}", cfg.label(v)))
            .collect();
        let reason = if report.connected {
            format!("too few calibration links for {}", failing.join(", "))
        } else {
            let comps: Vec<String> = report
                .components
                .iter()
                .map(|c| c.iter().map(|&v| cfg.label(v)).collect::<Vec<_>>().join(" "))
                .collect();
            format!("triplet domains split into disconnected groups [{}]", comps.join("] ["))
        };
        return Err(ScenarioError::NotRigid {
            reason,
            report: Box::new(report),
        });
    }
    Ok((ds, truth))
}

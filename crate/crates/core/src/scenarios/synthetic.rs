//! Planar scenarios observed through the two cosine modalities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{
    assemble, describe_domain, invalid, piece_patches, stream, BurstShape, BurstSpec, CalibrationPlan, ModalityPlan,
    Piece, Rect, ScenarioError, ScenarioKind,
};
use crate::model::{FusionDataset, GroundTruth};

/// `f¹(x) = (x₁, cos(2π·0.3·x₁) + x₂)`, `f²(x) = (x₁, cos(π/2 + 2π·0.3·x₁) + x₂)`.
pub fn cosine_modality_eval(x: &[f64], which: u8) -> [f64; 2] {
    let phase = if which == 2 { PI / 2.0 } else { 0.0 };
    [x[0], (phase + 2.0 * PI * 0.3 * x[0]).cos() + x[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticFn {
    Cosine1,
    Cosine2,
    Identity,
}

impl SyntheticFn {
    pub fn eval(self, x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticFn::Cosine1 => cosine_modality_eval(x, 1).to_vec(),
            SyntheticFn::Cosine2 => cosine_modality_eval(x, 2).to_vec(),
            SyntheticFn::Identity => x.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModality {
    pub modality_id: usize,
    pub function: SyntheticFn,
    pub domain: Vec<Piece>,
}

/// `count` latent centers drawn from `region` and observed by both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub modalities: [usize; 2],
    pub region: Rect,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub scenario: String,
    pub modalities: Vec<SyntheticModality>,
    pub burst_size: usize,
    pub sigma: f64,
    #[serde(default)]
    pub burst_shape: BurstShape,
    pub calibration: Vec<CalibrationSpec>,
}

fn rect(x: [f64; 2], y: [f64; 2]) -> Rect {
    Rect::new(&[x[0], y[0]], &[x[1], y[1]])
}

fn piece(x: [f64; 2], y: [f64; 2], count: usize) -> Piece {
    Piece { rect: rect(x, y), count }
}

fn cosine_pair(first: Vec<Piece>, second: Vec<Piece>) -> Vec<SyntheticModality> {
    vec![
        SyntheticModality {
            modality_id: 1,
            function: SyntheticFn::Cosine1,
            domain: first,
        },
        SyntheticModality {
            modality_id: 2,
            function: SyntheticFn::Cosine2,
            domain: second,
        },
    ]
}

fn calib(region: Rect) -> CalibrationSpec {
    CalibrationSpec {
        modalities: [1, 2],
        region,
        count: 3,
    }
}

impl SyntheticConfig {
    /// Default layout of each planar scenario (500 centers per piece,
    /// `M = 100`, `σ = 0.1`, 3 calibration centers per intersection).
    pub fn preset(kind: ScenarioKind) -> Result<Self, ScenarioError> {
        let n = 500;
        let (modalities, calibration) = match kind {
            ScenarioKind::SameDomain => (
                cosine_pair(vec![piece([0.0, PI], [0.0, PI], n)], vec![piece([0.0, PI], [0.0, PI], n)]),
                vec![calib(rect([0.0, PI], [0.0, PI]))],
            ),
            ScenarioKind::Overlap => (
                cosine_pair(
                    vec![piece([0.0, PI], [0.0, PI], n)],
                    vec![piece([PI / 2.0, 1.5 * PI], [0.0, PI], n)],
                ),
                vec![calib(rect([PI / 2.0, PI], [0.0, PI]))],
            ),
            ScenarioKind::Patchy => (
                cosine_pair(
                    vec![piece([0.0, PI], [0.0, PI], n), piece([2.0 * PI, 3.0 * PI], [0.0, PI], n)],
                    vec![piece([PI / 2.0, 2.5 * PI], [0.0, PI], n)],
                ),
                vec![
                    calib(rect([PI / 2.0, PI], [0.0, PI])),
                    calib(rect([2.0 * PI, 2.5 * PI], [0.0, PI])),
                ],
            ),
            ScenarioKind::FrenchFlag => (
                cosine_pair(
                    vec![
                        piece([0.0, PI], [0.0, 2.0 * PI], n),
                        piece([2.0 * PI, 3.0 * PI], [0.0, 2.0 * PI], n),
                    ],
                    vec![piece([0.75 * PI, 2.25 * PI], [0.0, 2.0 * PI], n)],
                ),
                vec![
                    calib(rect([0.75 * PI, PI], [0.0, 2.0 * PI])),
                    calib(rect([2.0 * PI, 2.25 * PI], [0.0, 2.0 * PI])),
                ],
            ),
            other => {
                return Err(invalid(
                    "scenario.kind",
                    format!("{} is not a planar cosine scenario", other.name()),
                ))
            }
        };
        Ok(Self {
            scenario: kind.name().to_string(),
            modalities,
            burst_size: 100,
            sigma: 0.1,
            burst_shape: BurstShape::Gaussian,
            calibration,
        })
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ScenarioError> {
        if self.burst_size < 2 {
            return Err(invalid(format!("{prefix}.burst_size"), format!("must be at least 2, got {}", self.burst_size)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("{prefix}.sigma"), format!("must be positive, got {}", self.sigma)));
        }
        if self.modalities.is_empty() {
            return Err(invalid(format!("{prefix}.modalities"), "at least one modality is required"));
        }
        for (k, m) in self.modalities.iter().enumerate() {
            if self.modalities[..k].iter().any(|o| o.modality_id == m.modality_id) {
                return Err(invalid(
                    format!("{prefix}.modalities[{k}].modality_id"),
                    format!("duplicate modality id {}", m.modality_id),
                ));
            }
            if m.domain.is_empty() {
                return Err(invalid(format!("{prefix}.modalities[{k}].domain"), "domain has no pieces"));
            }
            for (j, p) in m.domain.iter().enumerate() {
                let field = format!("{prefix}.modalities[{k}].domain[{j}]");
                p.rect.validate(&format!("{field}.rect"))?;
                if p.rect.dim() != 2 {
                    return Err(invalid(format!("{field}.rect"), "cosine scenarios are planar"));
                }
                if p.count == 0 {
                    return Err(invalid(format!("{field}.count"), "must be at least 1"));
                }
            }
        }
        for (c, spec) in self.calibration.iter().enumerate() {
            let field = format!("{prefix}.calibration[{c}]");
            spec.region.validate(&format!("{field}.region"))?;
            let [a, b] = spec.modalities;
            if a == b {
                return Err(invalid(format!("{field}.modalities"), "must name two different modalities"));
            }
            for id in [a, b] {
                let m = self
                    .modalities
                    .iter()
                    .find(|m| m.modality_id == id)
                    .ok_or_else(|| invalid(format!("{field}.modalities"), format!("unknown modality {id}")))?;
                if !m.domain.iter().any(|p| p.rect.covers(&spec.region)) {
                    return Err(invalid(
                        format!("{field}.region"),
                        format!(
                            "region {} is not inside the domain of modality {id} ({}); the intersection is empty there",
                            spec.region,
                            describe_domain(&m.domain)
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Samples a planar scenario: centers uniform in each domain piece,
/// calibration centers uniform in their regions.
pub fn make_synthetic_scenario(config: &SyntheticConfig, seed: u64) -> Result<(FusionDataset, GroundTruth), ScenarioError> {
    config.validate("scenario")?;
    let mut plans = Vec::with_capacity(config.modalities.len());
    for m in &config.modalities {
        let mut rng = stream(seed, m.modality_id as u64);
        let labels = piece_patches(&m.domain);
        let mut centers = Vec::new();
        for (p, l) in m.domain.iter().zip(&labels) {
            for _ in 0..p.count {
                centers.push((p.rect.sample(&mut rng), *l));
            }
        }
        let function = m.function;
        let domain = m.domain.clone();
        plans.push(ModalityPlan {
            modality_id: m.modality_id,
            ambient_dim: 2,
            domain: describe_domain(&m.domain),
            centers,
            observe: Box::new(move |x| function.eval(x)),
            patch_of: Box::new(move |x| {
                domain
                    .iter()
                    .position(|p| p.rect.contains(x))
                    .map(|i| labels[i])
                    .unwrap_or(0)
            }),
        });
    }
    let mut calibration = Vec::new();
    let mut rng = stream(seed, 500);
    for spec in &config.calibration {
        for _ in 0..spec.count {
            calibration.push(CalibrationPlan {
                center: spec.region.sample(&mut rng),
                modality_a: spec.modalities[0],
                modality_b: spec.modalities[1],
            });
        }
    }
    assemble(
        2,
        &config.scenario,
        BurstSpec {
            size: config.burst_size,
            sigma: config.sigma,
            shape: config.burst_shape,
        },
        &plans,
        &calibration,
        seed,
    )
}

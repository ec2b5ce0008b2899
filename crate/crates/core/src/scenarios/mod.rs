//! Seeded generators for the latent domains, modality functions, bursts and
//! calibration links of every experiment.
//!
//! Every generator is a pure function of its configuration and seed.

pub mod point_case;
pub mod synthetic;
pub mod wave;
pub mod wifi;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Burst, CalibrationLink, FusionDataset, GroundTruth, LatentPoint, ModalityData, ModalityTruth};
use crate::rigidity::{disconnected_subgraphs, Graph, RigidityError, RigidityReport};

pub use point_case::{make_point_case, PointCaseConfig, PointCaseOutput};
pub use synthetic::{cosine_modality_eval, make_synthetic_scenario, CalibrationSpec, SyntheticConfig, SyntheticFn, SyntheticModality};
pub use wave::{make_wave_scenario, wave_eval, ObserverConfig, WaveConfig};
pub use wifi::{make_wifi_scenario, wifi_signal_eval, WifiConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{0} is empty")]
    EmptyDomain(String),
    #[error("observation graph is not rigid: {reason}")]
    NotRigid { reason: String, report: Box<RigidityReport> },
    #[error(transparent)]
    Rigidity(#[from] RigidityError),
}

pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Axis-aligned box `[lo, hi]` in latent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: &[f64], hi: &[f64]) -> Self {
        Self {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    /// `other ⊆ self`.
    pub fn covers(&self, other: &Rect) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Closed boxes sharing at least one point.
    pub fn touches(&self, other: &Rect) -> bool {
        other.dim() == self.dim() && (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn sample(&self, rng: &mut impl Rng) -> LatentPoint {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }

    pub fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(invalid(field, "lo and hi must be non-empty and of equal length"));
        }
        if self.lo.iter().chain(&self.hi).any(|v| !v.is_finite()) {
            return Err(invalid(field, "bounds must be finite"));
        }
        if self.lo.iter().zip(&self.hi).any(|(lo, hi)| lo > hi) {
            return Err(invalid(field, "lo must not exceed hi"));
        }
        Ok(())
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| format!("[{lo:.4}, {hi:.4}]"))
            .collect();
        write!(f, "{}", parts.join(" x "))
    }
}

/// One box of a domain with the number of burst centers drawn from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub rect: Rect,
    pub count: usize,
}

/// Patch label of each piece: pieces whose boxes touch (transitively)
/// share a label.
pub fn piece_patches(pieces: &[Piece]) -> Vec<usize> {
    let mut g = Graph::new(pieces.len());
    for i in 0..pieces.len() {
        for j in (i + 1)..pieces.len() {
            if pieces[i].rect.touches(&pieces[j].rect) {
                g.add_edge(i, j, 1);
            }
        }
    }
    let mut labels = vec![0; pieces.len()];
    for (c, comp) in disconnected_subgraphs(&g).iter().enumerate() {
        for &v in comp {
            labels[v] = c;
        }
    }
    labels
}

pub fn describe_domain(pieces: &[Piece]) -> String {
    pieces.iter().map(|p| p.rect.to_string()).collect::<Vec<_>>().join(" ∪ ")
}

/// Latent burst distribution. Both have per-coordinate variance `σ²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurstShape {
    #[default]
    Gaussian,
    /// Uniform in a ball of radius `σ √(d + 2)`.
    UniformBall,
}

/// `m` independent latent draws around `center`.
pub fn sample_burst(
    center: &[f64],
    sigma: f64,
    m: usize,
    shape: BurstShape,
    rng: &mut impl Rng,
) -> Result<Vec<LatentPoint>, ScenarioError> {
    if m < 2 {
        return Err(invalid("burst_size", format!("a burst needs at least 2 samples, got {m}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let d = center.len();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let offset: Vec<f64> = match shape {
            BurstShape::Gaussian => z.iter().map(|v| v * sigma).collect(),
            BurstShape::UniformBall => {
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let u: f64 = rng.random();
                let r = sigma * ((d + 2) as f64).sqrt() * u.powf(1.0 / d as f64);
                z.iter().map(|v| v / norm * r).collect()
            }
        };
        out.push(center.iter().zip(&offset).map(|(c, o)| c + o).collect());
    }
    Ok(out)
}

/// Independent stream seed for `(seed, stream)` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, id))
}

/// Noise settings shared by all modalities of one scenario.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BurstSpec {
    pub size: usize,
    pub sigma: f64,
    pub shape: BurstShape,
}

/// One modality ready for sampling.
pub(crate) struct ModalityPlan<'a> {
    pub modality_id: usize,
    pub ambient_dim: usize,
    pub domain: String,
    /// Burst centers with their patch labels.
    pub centers: Vec<(LatentPoint, usize)>,
    pub observe: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
    /// Patch label of a calibration center.
    pub patch_of: Box<dyn Fn(&[f64]) -> usize + 'a>,
}

/// A latent point observed by two modalities.
pub(crate) struct CalibrationPlan {
    pub center: LatentPoint,
    pub modality_a: usize,
    pub modality_b: usize,
}

/// Samples every burst and appends calibration bursts after the regular
/// ones, modality by modality.
pub(crate) fn assemble(
    intrinsic_dim: usize,
    scenario: &str,
    burst: BurstSpec,
    plans: &[ModalityPlan<'_>],
    calibration: &[CalibrationPlan],
    seed: u64,
) -> Result<(FusionDataset, GroundTruth), ScenarioError> {
    let mut modalities = Vec::with_capacity(plans.len());
    let mut truths = Vec::with_capacity(plans.len());
    let mut calib_index: Vec<Vec<usize>> = vec![Vec::new(); calibration.len()];
    for plan in plans {
        let mut rng = stream(seed, 1000 + plan.modality_id as u64);
        let mut centers = plan.centers.clone();
        for (c, link) in calibration.iter().enumerate() {
            if link.modality_a == plan.modality_id || link.modality_b == plan.modality_id {
                calib_index[c].push(centers.len());
                centers.push((link.center.clone(), (plan.patch_of)(&link.center)));
            }
        }
        let mut bursts = Vec::with_capacity(centers.len());
        for (i, (center, _)) in centers.iter().enumerate() {
            let latent = sample_burst(center, burst.sigma, burst.size, burst.shape, &mut rng)?;
            let samples: Vec<Vec<f64>> = latent.iter().map(|x| (plan.observe)(x)).collect();
            if let Some(bad) = samples.iter().find(|s| s.len() != plan.ambient_dim) {
                return Err(invalid(
                    "scenario",
                    format!(
                        "modality {} returned {} values, expected {}",
                        plan.modality_id,
                        bad.len(),
                        plan.ambient_dim
                    ),
                ));
            }
            bursts.push(Burst { burst_id: i, samples });
        }
        modalities.push(ModalityData {
            modality_id: plan.modality_id,
            ambient_dim: plan.ambient_dim,
            sigma: burst.sigma,
            bursts,
        });
        truths.push(ModalityTruth {
            modality_id: plan.modality_id,
            domain: plan.domain.clone(),
            centers: centers.iter().map(|(c, _)| c.clone()).collect(),
            patches: centers.iter().map(|(_, p)| *p).collect(),
        });
    }
    let mut links = Vec::with_capacity(calibration.len());
    for (c, link) in calibration.iter().enumerate() {
        let idx = &calib_index[c];
        if idx.len() != 2 || link.modality_a == link.modality_b {
            return Err(invalid(
                "calibration",
                format!(
                    "link between modalities {} and {} does not name two distinct generated modalities",
                    link.modality_a, link.modality_b
                ),
            ));
        }
        // plans are visited in order, so idx follows plan order
        let pos = |id: usize| plans.iter().position(|p| p.modality_id == id).unwrap_or(usize::MAX);
        let (ia, ib) = if pos(link.modality_a) < pos(link.modality_b) {
            (idx[0], idx[1])
        } else {
            (idx[1], idx[0])
        };
        links.push(CalibrationLink::new(ia, ib, link.modality_a, link.modality_b));
    }
    Ok((
        FusionDataset {
            intrinsic_dim,
            modalities,
            calibration: links,
        },
        GroundTruth {
            intrinsic_dim,
            scenario: scenario.to_string(),
            modalities: truths,
        },
    ))
}

/// Which generator a configuration selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SameDomain,
    Overlap,
    Patchy,
    FrenchFlag,
    Wifi,
    Wave,
    PointCase,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SameDomain => "same_domain",
            ScenarioKind::Overlap => "overlap",
            ScenarioKind::Patchy => "patchy",
            ScenarioKind::FrenchFlag => "french_flag",
            ScenarioKind::Wifi => "wifi",
            ScenarioKind::Wave => "wave",
            ScenarioKind::PointCase => "point_case",
        }
    }
}

/// Scenario section of an experiment: a kind plus optional overrides of
/// that kind's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Burst centers per domain piece (synthetic), per modality (Wi-Fi,
    /// wave) or per point type (point case).
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub burst_size: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub burst_shape: Option<BurstShape>,
    /// Calibration centers per intersection region or modality pair.
    #[serde(default)]
    pub calibration_count: Option<usize>,
    /// Full synthetic layout; replaces the kind's preset when given.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub wifi: Option<WifiConfig>,
    #[serde(default)]
    pub wave: Option<WaveConfig>,
    #[serde(default)]
    pub point_case: Option<PointCaseConfig>,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            points: None,
            burst_size: None,
            sigma: None,
            burst_shape: None,
            calibration_count: None,
            synthetic: None,
            wifi: None,
            wave: None,
            point_case: None,
        }
    }

    fn check_common(&self) -> Result<(), ScenarioError> {
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("scenario.sigma", format!("must be positive, got {s}")));
            }
        }
        if let Some(m) = self.burst_size {
            if m < 2 {
                return Err(invalid("scenario.burst_size", format!("must be at least 2, got {m}")));
            }
        }
        if self.points == Some(0) {
            return Err(invalid("scenario.points", "must be at least 1"));
        }
        Ok(())
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig, ScenarioError> {
        let mut cfg = match &self.synthetic {
            Some(c) => c.clone(),
            None => SyntheticConfig::preset(self.kind)?,
        };
        if let Some(n) = self.points {
            for m in &mut cfg.modalities {
                for p in &mut m.domain {
                    p.count = n;
                }
            }
        }
        if let Some(m) = self.burst_size {
            cfg.burst_size = m;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(b) = self.burst_shape {
            cfg.burst_shape = b;
        }
        if let Some(c) = self.calibration_count {
            for spec in &mut cfg.calibration {
                spec.count = c;
            }
        }
        Ok(cfg)
    }

    pub fn wifi_config(&self) -> WifiConfig {
        let mut cfg = self.wifi.clone().unwrap_or_default();
        if let Some(n) = self.points {
            cfg.points_per_modality = n;
        }
        if let Some(m) = self.burst_size {
            cfg.burst_size = m;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(b) = self.burst_shape {
            cfg.burst_shape = b;
        }
        if let Some(c) = self.calibration_count {
            cfg.calibration_per_pair = c;
        }
        cfg
    }

    pub fn wave_config(&self) -> WaveConfig {
        let mut cfg = self.wave.clone().unwrap_or_default();
        if let Some(n) = self.points {
            cfg.points_per_modality = n;
        }
        if let Some(m) = self.burst_size {
            cfg.burst_size = m;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(b) = self.burst_shape {
            cfg.burst_shape = b;
        }
        if let Some(c) = self.calibration_count {
            cfg.calibration_per_pair = c;
        }
        cfg
    }

    pub fn point_case_config(&self) -> PointCaseConfig {
        let mut cfg = self.point_case.clone().unwrap_or_default();
        if let Some(n) = self.points {
            cfg.points_per_type = [n; 3];
        }
        if let Some(m) = self.burst_size {
            cfg.burst_size = m;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(b) = self.burst_shape {
            cfg.burst_shape = b;
        }
        cfg
    }

    /// Checks every field that can be checked without generating data.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.check_common()?;
        match self.kind {
            ScenarioKind::SameDomain | ScenarioKind::Overlap | ScenarioKind::Patchy | ScenarioKind::FrenchFlag => {
                self.synthetic_config()?.validate("scenario")
            }
            ScenarioKind::Wifi => self.wifi_config().validate("scenario"),
            ScenarioKind::Wave => self.wave_config().validate("scenario"),
            ScenarioKind::PointCase => self.point_case_config().validate("scenario"),
        }
    }
}

/// Runs the generator selected by `config`.
pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<(FusionDataset, GroundTruth), ScenarioError> {
    config.validate()?;
    match config.kind {
        ScenarioKind::SameDomain | ScenarioKind::Overlap | ScenarioKind::Patchy | ScenarioKind::FrenchFlag => {
            make_synthetic_scenario(&config.synthetic_config()?, seed)
        }
        ScenarioKind::Wifi => make_wifi_scenario(&config.wifi_config(), seed),
        ScenarioKind::Wave => make_wave_scenario(&config.wave_config(), seed),
        ScenarioKind::PointCase => make_point_case(&config.point_case_config(), seed).map(|o| (o.dataset, o.truth)),
    }
}

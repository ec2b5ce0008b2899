//! Pairwise-distance isometry error and its CSV rows.

use std::io::Write;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Point counts up to which every pair is used.
pub const ALL_PAIRS_LIMIT: usize = 2000;
/// Upper bound on sampled pairs for larger point sets.
pub const MAX_SAMPLED_PAIRS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometrySummary {
    /// RMSE of `|d_emb − d_lat|` over the pairs.
    pub rmse: f64,
    /// `rmse` divided by the mean latent pair distance.
    pub relative_rmse: f64,
    pub max_error: f64,
    pub mean_latent_distance: f64,
    pub n_pairs: usize,
    /// `(latent distance, embedded distance)` for every evaluated pair.
    #[serde(skip)]
    pub pairs: Vec<(f64, f64)>,
}

impl IsometrySummary {
    /// Summary of `(latent, embedded)` distance pairs; empty input gives
    /// zero errors and an infinite relative RMSE.
    pub fn from_pairs(pairs: Vec<(f64, f64)>) -> Self {
        let count = pairs.len().max(1) as f64;
        let mut sq = 0.0;
        let mut max_error: f64 = 0.0;
        let mut lat_sum = 0.0;
        for &(l, e) in &pairs {
            let err = (e - l).abs();
            sq += err * err;
            max_error = max_error.max(err);
            lat_sum += l;
        }
        let rmse = (sq / count).sqrt();
        let mean_latent_distance = lat_sum / count;
        let relative_rmse = if mean_latent_distance > 0.0 {
            rmse / mean_latent_distance
        } else {
            f64::INFINITY
        };
        Self {
            rmse,
            relative_rmse,
            max_error,
            mean_latent_distance,
            n_pairs: pairs.len(),
            pairs,
        }
    }
}

fn dist(a: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(a.row(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Compares pairwise distances between `embedded` and `latent` rows.
///
/// Up to [`ALL_PAIRS_LIMIT`] points every pair is used; beyond that
/// `min(max_pairs, MAX_SAMPLED_PAIRS)` pairs are drawn with a seeded RNG.
/// No rescaling is applied.
pub fn isometry_error(
    embedded: ArrayView2<f64>,
    latent: ArrayView2<f64>,
    max_pairs: usize,
    seed: u64,
) -> Result<IsometrySummary, EvalError> {
    let n = embedded.nrows();
    if n != latent.nrows() {
        return Err(EvalError::CountMismatch {
            embedded: n,
            latent: latent.nrows(),
        });
    }
    if n < 2 {
        return Err(EvalError::TooFewPoints(n));
    }
    let mut pairs = Vec::new();
    if n <= ALL_PAIRS_LIMIT {
        pairs.reserve(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((dist(latent, i, j), dist(embedded, i, j)));
            }
        }
    } else {
        let count = max_pairs.clamp(1, MAX_SAMPLED_PAIRS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pairs.reserve(count);
        while pairs.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                pairs.push((dist(latent, i, j), dist(embedded, i, j)));
            }
        }
    }
    Ok(IsometrySummary::from_pairs(pairs))
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub max_error: f64,
    pub n_pairs: usize,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(scenario: &str, method: &str, summary: &IsometrySummary, seed: u64) -> Self {
        Self {
            scenario: scenario.to_string(),
            method: method.to_string(),
            rmse: summary.rmse,
            relative_rmse: summary.relative_rmse,
            max_error: summary.max_error,
            n_pairs: summary.n_pairs,
            seed,
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPair {
    pub latent: f64,
    pub embedded: f64,
}

pub fn write_scatter_csv<W: Write>(out: W, pairs: &[(f64, f64)]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for &(latent, embedded) in pairs {
        w.serialize(ScatterPair { latent, embedded })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_scatter_csv<R: std::io::Read>(input: R) -> Result<Vec<(f64, f64)>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<ScatterPair>()
        .map(|p| p.map(|p| (p.latent, p.embedded)).map_err(EvalError::from))
        .collect()
}

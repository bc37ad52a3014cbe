use std::f64::consts::PI;

use super::{MotionParams, PointMatch};

/// Gaussian kernel density of `samples` evaluated at `at`.
pub fn gaussian_kde_density(samples: &[f64], bandwidth: f64, at: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    let inv_2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    norm * samples
        .iter()
        .map(|&d| (-(at - d) * (at - d) * inv_2h2).exp())
        .sum::<f64>()
}

/// Drops matches whose displacement length is improbable under a Gaussian
/// KDE of all displacement lengths.
///
/// Each density is divided by the largest density among the matches, so the
/// retained set is `{ m : density(d_m) / max_density >= eta }`. With fewer
/// than two matches the input is returned unchanged.
pub fn filter_matches_kde(matches: &[PointMatch], params: &MotionParams) -> Vec<PointMatch> {
    if matches.len() < 2 {
        return matches.to_vec();
    }
    let distances: Vec<f64> = matches.iter().map(PointMatch::distance).collect();
    let density: Vec<f64> = distances
        .iter()
        .map(|&d| gaussian_kde_density(&distances, params.kde_bandwidth, d))
        .collect();
    let max = density.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return matches.to_vec();
    }
    matches
        .iter()
        .zip(&density)
        .filter(|(_, &p)| p / max >= params.eta)
        .map(|(m, _)| *m)
        .collect()
}

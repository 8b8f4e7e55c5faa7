//! Nodal domains `sign(psi_l)` and their estimation error.

use ndarray::ArrayView1;

use crate::eigen::SpectralDecomposition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NodalMap {
    /// `-1`, `0` or `+1`; zero only for exact zeros of the eigenvector.
    pub signs: Vec<i8>,
    pub ell: usize,
    pub epsilon: f64,
}

impl NodalMap {
    pub fn from_values(values: ArrayView1<'_, f64>, ell: usize, epsilon: f64) -> Self {
        let signs = values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        NodalMap { signs, ell, epsilon }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn flipped(&self) -> NodalMap {
        NodalMap {
            signs: self.signs.iter().map(|s| -s).collect(),
            ..self.clone()
        }
    }
}

pub fn nodal_map(dec: &SpectralDecomposition, ell: usize) -> Result<NodalMap> {
    if ell > dec.q {
        return Err(Error::param(format!(
            "eigenvector {ell} exceeds decomposition order {}",
            dec.q
        )));
    }
    Ok(NodalMap::from_values(dec.psi.column(ell), ell, dec.epsilon))
}

/// Disagreement rate between two sign maps, minimized over a global flip.
pub fn nodal_error(estimate: &NodalMap, reference: &NodalMap) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::param(format!(
            "nodal maps have different lengths {} and {}",
            estimate.len(),
            reference.len()
        )));
    }
    let n = estimate.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (mut same, mut opposite) = (0usize, 0usize);
    for (a, b) in estimate.signs.iter().zip(&reference.signs) {
        if a != b {
            same += 1;
        }
        if *a != -b {
            opposite += 1;
        }
    }
    Ok(same.min(opposite) as f64 / n as f64)
}

/// `P(0 < |psi| <= delta)` for each `delta`, where `weights` carries the
/// probability mass of each grid point.
pub fn noise_exponent_curve(
    psi: ArrayView1<'_, f64>,
    weights: ArrayView1<'_, f64>,
    deltas: &[f64],
) -> Result<Vec<f64>> {
    if psi.len() != weights.len() {
        return Err(Error::param("one weight per eigenfunction value is required"));
    }
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return Err(Error::param("weights must have positive total mass"));
    }
    Ok(deltas
        .iter()
        .map(|&delta| {
            psi.iter()
                .zip(weights.iter())
                .filter(|(v, _)| **v != 0.0 && v.abs() <= delta)
                .map(|(_, w)| *w)
                .sum::<f64>()
                / total
        })
        .collect())
}

/// Least-squares line through `(log delta, log P)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    /// Estimated noise exponent.
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits the noise exponent on `lo <= delta <= hi`, skipping zero masses.
/// `None` when fewer than two usable points remain.
pub fn fit_noise_exponent(deltas: &[f64], curve: &[f64], lo: f64, hi: f64) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .zip(curve)
        .filter(|(d, p)| **d >= lo && **d <= hi && **d > 0.0 && **p > 0.0)
        .map(|(d, p)| (d.ln(), p.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(LogLogFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    })
}

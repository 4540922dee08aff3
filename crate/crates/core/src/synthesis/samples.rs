//! Frequency sample sets and their adaptive refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{sigma_max, I};
use crate::lti::{eval_transfer, lower_lft, FeedbackSign, PlantResponse};
use crate::statespace::StateSpace;

/// How a sample entered the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleOrigin {
    Initial,
    Adaptive,
}

/// Sorted, deduplicated frequencies at which the loss is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    points: Vec<f64>,
    origins: Vec<SampleOrigin>,
    generation: usize,
}

const DEDUP_GAP: f64 = 1e-12;

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl SampleSet {
    /// Builds a set from arbitrary frequencies, sorting them and dropping
    /// near-duplicates. Returns `None` when nothing is left.
    pub fn new(points: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut pts: Vec<f64> = points.into_iter().filter(|w| w.is_finite() && *w >= 0.0).collect();
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| relative_gap(*a, *b) < DEDUP_GAP);
        if pts.is_empty() {
            return None;
        }
        let origins = vec![SampleOrigin::Initial; pts.len()];
        Some(Self {
            points: pts,
            origins,
            generation: 0,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn origins(&self) -> &[SampleOrigin] {
        &self.origins
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest relative distance from `omega` to a member of the set.
    pub fn nearest_gap(&self, omega: f64) -> f64 {
        let i = self.points.partition_point(|&p| p < omega);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.points.get(j))
            .map(|&p| relative_gap(p, omega))
            .fold(f64::INFINITY, f64::min)
    }

    /// Inserts `omega` when it is at least `min_gap` (relative) away from
    /// every existing point.
    pub fn insert(&mut self, omega: f64, origin: SampleOrigin, min_gap: f64) -> bool {
        if !omega.is_finite() || omega < 0.0 || self.nearest_gap(omega) < min_gap.max(DEDUP_GAP) {
            return false;
        }
        let i = self.points.partition_point(|&p| p < omega);
        self.points.insert(i, omega);
        self.origins.insert(i, origin);
        true
    }
}

/// Parameters of the audit-grid refinement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub audit_points: usize,
    /// Local maxima above `γ (1 - audit_slack)` are candidates.
    pub audit_slack: f64,
    /// Minimum relative distance of a new sample to existing ones.
    pub min_gap: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            omega_min: 1e-3,
            omega_max: 1e3,
            audit_points: 1000,
            audit_slack: 0.02,
            min_gap: 1e-3,
        }
    }
}

/// `σ_max` of the closed loop at `omega`.
pub fn closed_loop_sigma_max(plant: &dyn PlantResponse, ctrl: &StateSpace, sign: FeedbackSign, omega: f64) -> Result<f64> {
    let pe = plant.evaluate(omega)?;
    let k = eval_transfer(ctrl, I * omega)?;
    Ok(sigma_max(&lower_lft(&pe, &k, sign)?))
}

/// Adds the local maximizers of the closed-loop `σ_max` curve that come
/// close to or exceed `γ`.
///
/// The curve is evaluated on an audit grid. For models each interior local
/// maximum is refined by a parabola through its grid neighbours in `log ω`;
/// tabulated plants keep the grid point itself. Points are only added, never
/// removed. Returns the number of points added.
pub fn update_samples(
    samples: &mut SampleSet,
    plant: &dyn PlantResponse,
    ctrl: &StateSpace,
    sign: FeedbackSign,
    gamma: f64,
    cfg: &SamplingConfig,
) -> Result<usize> {
    let grid = plant.grid(cfg.omega_min, cfg.omega_max, cfg.audit_points);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&w| closed_loop_sigma_max(plant, ctrl, sign, w))
        .collect::<Result<_>>()?;
    let threshold = gamma * (1.0 - cfg.audit_slack);
    let refine = plant.model().is_some();
    let n = grid.len();
    let mut added = 0;
    for i in 0..n {
        let v = values[i];
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { values[i + 1] } else { f64::NEG_INFINITY };
        if !(v > threshold && v >= left && v >= right) {
            continue;
        }
        let mut omega = grid[i];
        if refine && i > 0 && i + 1 < n {
            omega = parabolic_peak(
                [grid[i - 1].ln(), grid[i].ln(), grid[i + 1].ln()],
                [left, v, right],
            )
            .exp();
        }
        if samples.insert(omega, SampleOrigin::Adaptive, cfg.min_gap) {
            added += 1;
        }
    }
    samples.generation += 1;
    Ok(added)
}

/// Abscissa of the vertex of the parabola through three points, clamped to
/// the outer two.
fn parabolic_peak(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if !(curv < 0.0) {
        return x[1];
    }
    let vertex = 0.5 * (x[0] + x[1]) - d1 / (2.0 * curv);
    vertex.clamp(x[0], x[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_deduplicated() {
        let s = SampleSet::new([3.0, 1.0, 2.0, 1.0 + 1e-15]).unwrap();
        assert_eq!(s.points(), &[1.0, 2.0, 3.0]);
        assert!(SampleSet::new([]).is_none());
    }

    #[test]
    fn insert_respects_gap() {
        let mut s = SampleSet::new([1.0, 2.0]).unwrap();
        assert!(!s.insert(1.0005, SampleOrigin::Adaptive, 1e-3));
        assert!(s.insert(1.5, SampleOrigin::Adaptive, 1e-3));
        assert_eq!(s.points(), &[1.0, 1.5, 2.0]);
        assert_eq!(s.origins()[1], SampleOrigin::Adaptive);
    }

    #[test]
    fn parabola_vertex() {
        // y = -(x - 0.3)²
        let f = |x: f64| -(x - 0.3) * (x - 0.3);
        let v = parabolic_peak([0.0, 0.5, 1.0], [f(0.0), f(0.5), f(1.0)]);
        assert!((v - 0.3).abs() < 1e-14);
    }
}

//! Epanechnikov-kernel local linear regression, leave-one-out bandwidth
//! selection and kernel density estimation.

use rayon::prelude::*;

use crate::linalg::{sample_sd, sorted_copy, sorted_quantile};

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local linear estimates at a single evaluation point, one entry per
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub levels: Vec<f64>,
    /// `NaN` when the local design is degenerate (fewer than two distinct
    /// support points in the window).
    pub slopes: Vec<f64>,
    /// Observations with positive kernel weight.
    pub neighbors: usize,
}

/// Regressor sorted ascending together with any number of responses.
#[derive(Debug, Clone)]
pub struct SortedSample {
    x: Vec<f64>,
    ys: Vec<Vec<f64>>,
    /// `order[k]` is the original row of the k-th sorted observation.
    order: Vec<usize>,
}

impl SortedSample {
    pub fn new(x: &[f64], ys: &[&[f64]]) -> Self {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        Self {
            x: order.iter().map(|&i| x[i]).collect(),
            ys: ys
                .iter()
                .map(|y| order.iter().map(|&i| y[i]).collect())
                .collect(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn range(&self) -> f64 {
        match (self.x.first(), self.x.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    fn window(&self, at: f64, h: f64) -> (usize, usize) {
        let lo = self.x.partition_point(|&v| v <= at - h);
        let hi = self.x.partition_point(|&v| v < at + h);
        (lo, hi.max(lo))
    }

    /// Number of observations with positive kernel weight at `at`.
    pub fn neighbors(&self, at: f64, h: f64) -> usize {
        let (lo, hi) = self.window(at, h);
        self.x[lo..hi]
            .iter()
            .filter(|&&v| ((v - at) / h).abs() < 1.0)
            .count()
    }

    /// Local linear fit of every response at `at`, optionally leaving out the
    /// observation at sorted position `exclude`.
    pub fn fit_at(&self, at: f64, h: f64, exclude: Option<usize>) -> LocalFit {
        let (lo, hi) = self.window(at, h);
        let m = self.ys.len();
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let mut t0 = vec![0.0; m];
        let mut t1 = vec![0.0; m];
        let mut neighbors = 0;
        for k in lo..hi {
            if Some(k) == exclude {
                continue;
            }
            let d = self.x[k] - at;
            let w = epanechnikov(d / h);
            if w <= 0.0 {
                continue;
            }
            neighbors += 1;
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            for (j, y) in self.ys.iter().enumerate() {
                t0[j] += w * y[k];
                t1[j] += w * d * y[k];
            }
        }
        let det = s0 * s2 - s1 * s1;
        let degenerate = !(det > 1e-12 * s0 * s2) || neighbors < 2;
        let (levels, slopes) = if s0 <= 0.0 {
            (vec![f64::NAN; m], vec![f64::NAN; m])
        } else if degenerate {
            (t0.iter().map(|t| t / s0).collect(), vec![f64::NAN; m])
        } else {
            (
                (0..m).map(|j| (s2 * t0[j] - s1 * t1[j]) / det).collect(),
                (0..m).map(|j| (s0 * t1[j] - s1 * t0[j]) / det).collect(),
            )
        };
        LocalFit {
            levels,
            slopes,
            neighbors,
        }
    }

    /// Local linear fits evaluated at arbitrary points, in parallel.
    pub fn fit_many(&self, points: &[f64], h: f64) -> Vec<LocalFit> {
        points
            .par_iter()
            .map(|&p| self.fit_at(p, h, None))
            .collect()
    }

    /// Fitted conditional means of every response at every sample point,
    /// returned in the original row order: `out[j][i]`.
    pub fn smooth_at_samples(&self, h: f64) -> Vec<Vec<f64>> {
        let fits: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|k| self.fit_at(self.x[k], h, None).levels)
            .collect();
        let mut out = vec![vec![0.0; self.len()]; self.ys.len()];
        for (k, levels) in fits.into_iter().enumerate() {
            for (j, v) in levels.into_iter().enumerate() {
                out[j][self.order[k]] = v;
            }
        }
        out
    }

    /// Leave-one-out cross-validation criterion (mean squared prediction
    /// error) for response `j`. Infinite if some observation has no
    /// neighbours once left out.
    pub fn loo_cv(&self, j: usize, h: f64) -> f64 {
        let errs: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|k| {
                let fit = self.fit_at(self.x[k], h, Some(k));
                let e = self.ys[j][k] - fit.levels[j];
                if e.is_finite() {
                    e * e
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        errs.iter().sum::<f64>() / self.len() as f64
    }
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Bandwidth minimizing the leave-one-out criterion for response `j`, with
/// the full `(bandwidth, score)` path.
pub fn select_bandwidth(
    sample: &SortedSample,
    j: usize,
    candidates: &[f64],
) -> (f64, Vec<(f64, f64)>) {
    let path: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&h| (h, sample.loo_cv(j, h)))
        .collect();
    let best = path
        .iter()
        .filter(|(_, s)| s.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or_else(
            || *candidates.last().expect("non-empty candidates"),
            |(h, _)| *h,
        );
    (best, path)
}

/// Rule-of-thumb bandwidth for an Epanechnikov density estimate.
pub fn rule_of_thumb_bandwidth(samples: &[f64]) -> Option<f64> {
    if samples.iter().all(|&v| v == samples[0]) {
        return None;
    }
    let sd = sample_sd(samples)?;
    let sorted = sorted_copy(samples);
    let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    let h = 2.345 * spread * (samples.len() as f64).powf(-0.2);
    (h > 0.0).then_some(h)
}

/// Epanechnikov kernel density of sorted `samples` at each point.
pub fn kde(sorted_samples: &[f64], points: &[f64], h: f64) -> Vec<f64> {
    let n = sorted_samples.len() as f64;
    points
        .iter()
        .map(|&p| {
            let lo = sorted_samples.partition_point(|&v| v <= p - h);
            let hi = sorted_samples.partition_point(|&v| v < p + h);
            sorted_samples[lo..hi.max(lo)]
                .iter()
                .map(|&v| epanechnikov((v - p) / h))
                .sum::<f64>()
                / (n * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_function_exactly() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.25 * v).collect();
        let s = SortedSample::new(&x, &[&y]);
        for h in [0.02, 0.05, 0.1, 0.3, 1.0] {
            for at in [0.1, 0.33, 0.5, 0.77, 0.9] {
                let f = s.fit_at(at, h, None);
                assert!((f.levels[0] - (1.5 - 2.25 * at)).abs() < 1e-10);
                assert!((f.slopes[0] + 2.25).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smoothing_returns_original_order() {
        let x = vec![0.9, 0.1, 0.5, 0.3, 0.7];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let s = SortedSample::new(&x, &[&y]);
        let out = s.smooth_at_samples(0.5);
        for (a, b) in out[0].iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cv_prefers_smoothing_for_linear_signal() {
        let x: Vec<f64> = (0..300).map(|i| i as f64 / 300.0).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let s = SortedSample::new(&x, &[&y]);
        let grid = geometric_grid(0.01, 0.5, 10);
        let (h, path) = select_bandwidth(&s, 0, &grid);
        assert_eq!(path.len(), 10);
        assert!(h > 0.1);
    }

    #[test]
    fn tiny_bandwidth_has_infinite_cv() {
        let x = vec![0.0, 0.5, 1.0];
        let y = vec![1.0, 2.0, 3.0];
        let s = SortedSample::new(&x, &[&y]);
        assert!(s.loo_cv(0, 0.1).is_infinite());
    }

    #[test]
    fn kde_integrates_to_one() {
        let samples: Vec<f64> = (0..500).map(|i| 0.3 + 0.4 * (i as f64 / 499.0)).collect();
        let h = rule_of_thumb_bandwidth(&samples).unwrap();
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let dens = kde(&samples, &grid, h);
        let integral: f64 = dens.windows(2).map(|w| 0.5 * (w[0] + w[1]) / 2000.0).sum();
        assert!((integral - 1.0).abs() < 1e-3);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(0.05, 0.5, 10);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[9] - 0.5).abs() < 1e-12);
    }
}

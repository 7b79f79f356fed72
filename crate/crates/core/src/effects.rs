//! Treatment parameters as weighted averages of an MTE curve.
//!
//! Every weight function lives on the curve's grid, is zero outside the
//! common support and is normalized so that its trapezoid integral over the
//! support equals one. Since `V` is uniform and independent of the
//! instruments, the weights for the treated at `v` are proportional to
//! `Pr(P > v)`, for the untreated to `Pr(P <= v)`, for a policy to the change
//! in `Pr(P > v)` and, for a marginal policy change, to the density of `P`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kde, rule_of_thumb_bandwidth};
use crate::linalg::{mean, sorted_copy};
use crate::mte::MteCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Ate,
    Att,
    Atu,
    Prte,
    Mprte,
}

impl EffectKind {
    pub const ALL: [EffectKind; 5] = [Self::Ate, Self::Att, Self::Atu, Self::Prte, Self::Mprte];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ate => "ate",
            Self::Att => "att",
            Self::Atu => "atu",
            Self::Prte => "prte",
            Self::Mprte => "mprte",
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

/// Evaluation grid plus the common-support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportGrid {
    pub points: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SupportGrid {
    pub fn full(points: Vec<f64>) -> Self {
        let mask = vec![true; points.len()];
        Self { points, mask }
    }

    pub fn of_curve(curve: &MteCurve) -> Self {
        Self {
            points: curve.v_grid.clone(),
            mask: curve.in_support.clone(),
        }
    }

    /// Trapezoid integral of `f` over adjacent in-support grid points.
    pub fn trapezoid(&self, f: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 1..self.points.len() {
            if self.mask[i - 1] && self.mask[i] {
                total += 0.5 * (f[i - 1] + f[i]) * (self.points[i] - self.points[i - 1]);
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightFunction {
    pub kind: EffectKind,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Share of the parameter's weight mass lying outside the support grid.
    pub truncated_mass: f64,
}

fn normalize(
    kind: EffectKind,
    grid: &SupportGrid,
    raw: Vec<f64>,
    total_mass: f64,
) -> Result<WeightFunction> {
    if !grid.mask.iter().any(|&m| m) {
        return Err(Error::NoCommonSupport);
    }
    let raw: Vec<f64> = raw
        .into_iter()
        .zip(&grid.mask)
        .map(|(w, &m)| if m { w } else { 0.0 })
        .collect();
    let mass = grid.trapezoid(&raw);
    if !(mass > 0.0) {
        return Err(Error::Numerical(format!(
            "{kind} weights have no mass on the support"
        )));
    }
    Ok(WeightFunction {
        kind,
        grid: grid.points.clone(),
        weights: raw.iter().map(|w| w / mass).collect(),
        truncated_mass: (1.0 - mass / total_mass).max(0.0),
    })
}

/// Share of `sorted` strictly greater than `v`.
fn survival(sorted: &[f64], v: f64) -> f64 {
    let below = sorted.partition_point(|&p| p <= v);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

pub fn weights_ate(grid: &SupportGrid) -> Result<WeightFunction> {
    normalize(EffectKind::Ate, grid, vec![1.0; grid.points.len()], 1.0)
}

pub fn weights_att(scores: &[f64], grid: &SupportGrid) -> Result<WeightFunction> {
    if scores.is_empty() {
        return Err(Error::Insufficient("no propensity scores".into()));
    }
    let sorted = sorted_copy(scores);
    if sorted.last().is_some_and(|&p| p <= grid.points[0]) {
        return Err(Error::Insufficient("no treated mass on the grid".into()));
    }
    let raw = grid.points.iter().map(|&v| survival(&sorted, v)).collect();
    normalize(EffectKind::Att, grid, raw, mean(scores))
}

pub fn weights_atu(scores: &[f64], grid: &SupportGrid) -> Result<WeightFunction> {
    if scores.is_empty() {
        return Err(Error::Insufficient("no propensity scores".into()));
    }
    let sorted = sorted_copy(scores);
    let raw = grid
        .points
        .iter()
        .map(|&v| 1.0 - survival(&sorted, v))
        .collect();
    normalize(EffectKind::Atu, grid, raw, 1.0 - mean(scores))
}

/// Weights for the people a policy moves from `base` to `policy` scores.
pub fn weights_prte(base: &[f64], policy: &[f64], grid: &SupportGrid) -> Result<WeightFunction> {
    if base.len() != policy.len() || base.is_empty() {
        return Err(Error::InvalidInput(
            "base and policy scores must be aligned and non-empty".into(),
        ));
    }
    let shift = mean(policy) - mean(base);
    if shift.abs() < 1e-8 {
        return Err(Error::NoOneInduced(shift));
    }
    let (b, p) = (sorted_copy(base), sorted_copy(policy));
    let raw: Vec<f64> = grid
        .points
        .iter()
        .map(|&v| (survival(&p, v) - survival(&b, v)) / shift)
        .collect();
    if let Some((v, w)) = grid.points.iter().zip(&raw).find(|(_, &w)| w < -1e-8) {
        return Err(Error::InvalidInput(format!(
            "policy is not monotone: negative weight {w:e} at v = {v}"
        )));
    }
    let raw = raw.into_iter().map(|w| w.max(0.0)).collect();
    normalize(EffectKind::Prte, grid, raw, 1.0)
}

/// Weights for a marginal policy change: the density of the scores.
pub fn weights_mprte(scores: &[f64], grid: &SupportGrid) -> Result<WeightFunction> {
    let h = rule_of_thumb_bandwidth(scores)
        .ok_or_else(|| Error::Insufficient("propensity scores are degenerate".into()))?;
    let raw = kde(&sorted_copy(scores), &grid.points, h);
    normalize(EffectKind::Mprte, grid, raw, 1.0)
}

/// Trapezoid integral of `curve × weights` over the support.
pub fn integrate(curve: &MteCurve, w: &WeightFunction) -> Result<f64> {
    if curve.v_grid.len() != w.grid.len()
        || curve
            .v_grid
            .iter()
            .zip(&w.grid)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::InvalidInput(
            "curve and weights use different grids".into(),
        ));
    }
    let grid = SupportGrid::of_curve(curve);
    let prod: Vec<f64> = curve
        .values
        .iter()
        .zip(&w.weights)
        .zip(&curve.in_support)
        .map(|((m, w), &s)| if s { m * w } else { 0.0 })
        .collect();
    Ok(grid.trapezoid(&prod))
}

pub fn prte(curve: &MteCurve, base: &[f64], policy: &[f64]) -> Result<f64> {
    integrate(
        curve,
        &weights_prte(base, policy, &SupportGrid::of_curve(curve))?,
    )
}

pub fn mprte(curve: &MteCurve, base: &[f64]) -> Result<f64> {
    integrate(curve, &weights_mprte(base, &SupportGrid::of_curve(curve))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub hpd: Option<(f64, f64)>,
    pub truncated_mass: f64,
}

/// Point estimates (and optionally intervals) for the requested parameters,
/// all from one curve and one support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreatmentEffects {
    pub values: BTreeMap<EffectKind, Estimate>,
    pub support: (f64, f64),
}

impl TreatmentEffects {
    pub fn get(&self, kind: EffectKind) -> Option<f64> {
        self.values.get(&kind).map(|e| e.estimate)
    }
}

/// ATE, ATT, ATU and MPRTE from `scores`, plus PRTE when policy scores are
/// supplied.
pub fn treatment_effects(
    curve: &MteCurve,
    scores: &[f64],
    policy: Option<&[f64]>,
) -> Result<TreatmentEffects> {
    let grid = SupportGrid::of_curve(curve);
    let mut weights = vec![
        weights_ate(&grid)?,
        weights_att(scores, &grid)?,
        weights_atu(scores, &grid)?,
        weights_mprte(scores, &grid)?,
    ];
    if let Some(p) = policy {
        weights.push(weights_prte(scores, p, &grid)?);
    }
    let mut values = BTreeMap::new();
    for w in &weights {
        values.insert(
            w.kind,
            Estimate {
                estimate: integrate(curve, w)?,
                hpd: None,
                truncated_mass: w.truncated_mass,
            },
        );
    }
    let inside: Vec<f64> = curve.support_values().map(|(v, _)| v).collect();
    Ok(TreatmentEffects {
        values,
        support: (inside[0], *inside.last().expect("non-empty support")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mte::default_v_grid;

    #[test]
    fn ate_weights_uniform_on_window() {
        let points = default_v_grid();
        let mask = points
            .iter()
            .map(|&v| (0.2..=0.8 + 1e-12).contains(&v))
            .collect();
        let grid = SupportGrid { points, mask };
        let w = weights_ate(&grid).unwrap();
        assert!((grid.trapezoid(&w.weights) - 1.0).abs() < 1e-12);
        let inside: Vec<f64> = w.weights.iter().copied().filter(|&x| x > 0.0).collect();
        assert!(inside.iter().all(|x| (x - inside[0]).abs() < 1e-12));
        assert_eq!(w.weights[0], 0.0);
    }

    #[test]
    fn point_mass_scores() {
        let grid = SupportGrid::full(default_v_grid());
        let scores = vec![0.5; 10];
        let att = weights_att(&scores, &grid).unwrap();
        let atu = weights_atu(&scores, &grid).unwrap();
        for (i, &v) in grid.points.iter().enumerate() {
            if v < 0.5 - 1e-12 {
                assert!(att.weights[i] > 0.0 && atu.weights[i] == 0.0);
            } else {
                assert!(att.weights[i] == 0.0 && atu.weights[i] > 0.0);
            }
        }
    }

    #[test]
    fn integrate_v_squared() {
        let points: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let curve = MteCurve::from_fn(points.clone(), |v| v * v);
        let w = weights_ate(&SupportGrid::full(points)).unwrap();
        assert!((integrate(&curve, &w).unwrap() - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let curve = MteCurve::from_fn(default_v_grid(), |v| v);
        let w = weights_ate(&SupportGrid::full(vec![0.1, 0.2])).unwrap();
        assert!(integrate(&curve, &w).is_err());
    }

    #[test]
    fn null_policy_induces_no_one() {
        let curve = MteCurve::from_fn(default_v_grid(), |v| v);
        let base = vec![0.2, 0.4, 0.6];
        assert!(matches!(
            prte(&curve, &base, &base),
            Err(Error::NoOneInduced(_))
        ));
    }

    #[test]
    fn non_monotone_policy_rejected() {
        let curve = MteCurve::from_fn(default_v_grid(), |v| v);
        assert!(prte(&curve, &[0.2, 0.6], &[0.45, 0.45]).is_err());
    }

    #[test]
    fn degenerate_scores_rejected_for_mprte() {
        let curve = MteCurve::from_fn(default_v_grid(), |v| v);
        assert!(mprte(&curve, &[0.4; 20]).is_err());
    }
}

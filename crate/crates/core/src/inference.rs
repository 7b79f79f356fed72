//! Pairs and cluster bootstrap over an arbitrary estimation recipe, and
//! highest-density intervals from the resulting draws.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{format_cell, Dataset};
use crate::error::{Error, Result};
use crate::linalg::sorted_copy;

pub const DEFAULT_REPLICATES: usize = 250;
pub const MIN_REPLICATES: usize = 50;
const MAX_FAILURE_SHARE: f64 = 0.2;

/// Generator for replicate `r`: ChaCha20 seeded with the master seed, on
/// stream `r`. Replicates are therefore independent of scheduling order.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Row indices for one resample. With clusters, whole clusters (ordered by
/// id) are drawn with replacement and their rows concatenated; otherwise
/// rows are drawn with replacement.
pub fn resample_indices(
    data: &Dataset,
    cluster: Option<&str>,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<usize>> {
    let n = data.n_rows();
    match cluster {
        None => Ok((0..n).map(|_| rng.random_range(0..n)).collect()),
        Some(name) => {
            let ids = data.column(name)?;
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, id) in ids.iter().enumerate() {
                groups.entry(ordered_bits(*id)).or_default().push(i);
            }
            let groups: Vec<Vec<usize>> = groups.into_values().collect();
            let g = groups.len();
            let mut rows = Vec::with_capacity(n);
            for _ in 0..g {
                rows.extend_from_slice(&groups[rng.random_range(0..g)]);
            }
            Ok(rows)
        }
    }
}

/// Bit pattern whose unsigned order matches the numeric order of `x`.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapDraws {
    /// Finite replicate estimates per parameter, in replicate order.
    pub draws: BTreeMap<String, Vec<f64>>,
    /// Replicate index of each draw, per parameter.
    pub replicates: BTreeMap<String, Vec<usize>>,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    pub failure_modes: BTreeMap<String, usize>,
}

impl BootstrapDraws {
    pub fn hpd(&self, parameter: &str, level: f64) -> Result<(f64, f64)> {
        let d = self
            .draws
            .get(parameter)
            .ok_or_else(|| Error::InvalidInput(format!("no draws for `{parameter}`")))?;
        hpd_interval(d, level)
    }

    /// Long-format audit dump: `replicate, parameter, value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replicate", "parameter", "value"])?;
        let mut rows: Vec<(usize, &str, f64)> = Vec::new();
        for (name, values) in &self.draws {
            for (r, v) in self.replicates[name].iter().zip(values) {
                rows.push((*r, name, *v));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
        for (r, name, v) in rows {
            w.write_record([r.to_string(), name.to_string(), format_cell(v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reruns `recipe` on `b` resamples of `data`. Replicates whose recipe errors
/// are counted and excluded; more than 20% failures is an error. A non-finite
/// value drops only that parameter from that replicate.
pub fn bootstrap<F>(
    data: &Dataset,
    b: usize,
    cluster: Option<&str>,
    seed: u64,
    recipe: F,
) -> Result<BootstrapDraws>
where
    F: Fn(&Dataset) -> Result<BTreeMap<String, f64>> + Sync,
{
    if b < MIN_REPLICATES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_REPLICATES} bootstrap replicates, got {b}"
        )));
    }
    if let Some(c) = cluster {
        data.column(c)?;
    }
    let results: Vec<Result<BTreeMap<String, f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let rows = resample_indices(data, cluster, &mut rng)?;
            recipe(&data.take_rows(&rows))
        })
        .collect();

    let mut draws: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut replicates: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut failure_modes: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(values) => {
                for (k, v) in values.into_iter().filter(|(_, v)| v.is_finite()) {
                    replicates.entry(k.clone()).or_default().push(r);
                    draws.entry(k).or_default().push(v);
                }
            }
            Err(e) => {
                failures += 1;
                *failure_modes.entry(failure_label(&e)).or_default() += 1;
            }
        }
    }
    if failures as f64 > MAX_FAILURE_SHARE * b as f64 {
        let modes: Vec<String> = failure_modes
            .iter()
            .map(|(m, c)| format!("{m} ({c})"))
            .collect();
        return Err(Error::Numerical(format!(
            "{failures} of {b} bootstrap replicates failed: {}",
            modes.join("; ")
        )));
    }
    Ok(BootstrapDraws {
        draws,
        replicates,
        b,
        seed,
        failures,
        failure_modes,
    })
}

fn failure_label(e: &Error) -> String {
    let s = e.to_string();
    // group by message prefix so per-replicate numbers do not split modes
    s.split(|c: char| c.is_ascii_digit())
        .next()
        .unwrap_or(&s)
        .trim()
        .to_string()
}

/// Shortest window of consecutive sorted draws containing `ceil(level · n)`
/// of them; ties go to the window with the lowest lower bound.
pub fn hpd_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.len() < 10 {
        return Err(Error::Insufficient(format!(
            "need at least 10 draws, got {}",
            draws.len()
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1]")));
    }
    if draws.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite draw".into()));
    }
    let sorted = sorted_copy(draws);
    let m = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=sorted.len() - m {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + m - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_interval() {
        assert_eq!(hpd_interval(&[2.5; 40], 0.95).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn ladder_takes_earliest_window() {
        let d: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(hpd_interval(&d, 0.95).unwrap(), (1.0, 95.0));
    }

    #[test]
    fn too_few_draws() {
        assert!(hpd_interval(&[1.0; 9], 0.95).is_err());
    }

    #[test]
    fn replicate_streams_differ() {
        let a: u64 = replicate_rng(7, 0).random();
        let b: u64 = replicate_rng(7, 1).random();
        let c: u64 = replicate_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn ordered_bits_is_monotone() {
        let xs = [-3.5, -1.0, -0.0, 0.0, 2.0, 1e9];
        for w in xs.windows(2) {
            assert!(ordered_bits(w[0]) <= ordered_bits(w[1]));
        }
    }
}

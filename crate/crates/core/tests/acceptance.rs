//! Acceptance criteria 1–8. Each criterion prints one line; the test fails if
//! any criterion fails. Criterion 8 needs the IFLS replication extract and is
//! skipped unless `MTEKIT_IFLS_CONFIG` points to a JSON file describing it.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::time::Instant;

use mtekit::data::{ColumnRole, Dataset, Role};
use mtekit::effects::{
    integrate, prte, treatment_effects, weights_ate, weights_att, weights_atu, weights_mprte,
    weights_prte, EffectKind, SupportGrid,
};
use mtekit::inference::{bootstrap, hpd_interval, replicate_rng};
use mtekit::kernel::SortedSample;
use mtekit::linear::{fit_2sls, fit_ols, InstrumentSet, SeType};
use mtekit::mte::{fit_partially_linear, k_derivative, MteCurve, MteOptions};
use mtekit::normal::fit_normal_selection;
use mtekit::pipeline::{self, policy_scores, PipelineOptions};
use mtekit::selection::{fit_logit, propensity, PropensityScores};
use mtekit::simulation::{
    generate, preset, true_mte, Distribution, RoyModelSpec, SelectionIndex, Variable,
};
use mtekit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution as _, StandardNormal};
use serde::Deserialize;

const SEED: u64 = 2024;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: String) -> Self {
        Self {
            passed: Some(passed),
            detail,
        }
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn fine_grid() -> Vec<f64> {
    (1..1000).map(|i| i as f64 / 1000.0).collect()
}

fn curve_on_support(curve: &MteCurve, f: impl Fn(f64) -> f64) -> MteCurve {
    let values = curve
        .v_grid
        .iter()
        .zip(&curve.in_support)
        .map(|(&v, &s)| if s { f(v) } else { f64::NAN })
        .collect();
    MteCurve::new(curve.v_grid.clone(), values, curve.in_support.clone()).unwrap()
}

fn criterion_1() -> Outcome {
    let spec = preset("selection-on-gains").unwrap();
    let sim = generate(&spec, 20_000, SEED).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let fit = pool
        .install(|| pipeline::run(&sim.data, &PipelineOptions::default()))
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let x = fit.plm.covariate_means.clone();
    let truth = |v: f64| true_mte(&spec, &x, v).unwrap();
    let sup = fit
        .curve
        .support_values()
        .filter(|(v, _)| (0.2..=0.8 + 1e-9).contains(v))
        .map(|(v, m)| (m - truth(v)).abs())
        .fold(0.0, f64::max);
    let true_curve = curve_on_support(&fit.curve, truth);
    let true_effects = treatment_effects(&true_curve, &fit.scores.values, None).unwrap();
    let mut gaps = Vec::new();
    for kind in [EffectKind::Ate, EffectKind::Att, EffectKind::Atu] {
        gaps.push((
            kind,
            (fit.effects.get(kind).unwrap() - true_effects.get(kind).unwrap()).abs(),
        ));
    }
    let ok = sup <= 0.05 && gaps.iter().all(|(_, g)| *g <= 0.03) && elapsed < 60.0;
    let gap_text: Vec<String> = gaps
        .iter()
        .map(|(k, g)| format!("|{k} err| {g:.4}"))
        .collect();
    Outcome::check(
        ok,
        format!(
            "sup-norm {sup:.4} (<= 0.05), {} (<= 0.03), {elapsed:.1}s single-threaded (< 60s)",
            gap_text.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let spec = preset("homogeneous").unwrap();
    let sim = generate(&spec, 10_000, SEED).unwrap();
    let truth = spec.alpha1 - spec.alpha0;
    let data = &sim.data;
    let ols = fit_ols(data, "y", &names(&["s", "x1"]), SeType::RobustHc1, None).unwrap();
    let iv = fit_2sls(
        data,
        "y",
        "s",
        &InstrumentSet::from_columns(data, &names(&["z1"])).unwrap(),
        &names(&["x1"]),
        SeType::RobustHc1,
        None,
    )
    .unwrap();
    let (bo, so) = ols.coefficient("s").unwrap();
    let (bi, si) = iv.coefficient("s").unwrap();
    let fit = pipeline::run(data, &PipelineOptions::default()).unwrap();
    let (lo, hi) = fit
        .curve
        .support_values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, m)| {
            (a.min(m), b.max(m))
        });
    let zo = (bo - truth).abs() / so;
    let zi = (bi - truth).abs() / si;
    Outcome::check(
        zo > 3.0 && zi <= 3.0 && hi - lo <= 0.05,
        format!(
            "OLS off by {zo:.1} SE (> 3), 2SLS off by {zi:.2} SE (<= 3), curve range {:.4} (<= 0.05)",
            hi - lo
        ),
    )
}

fn normal_dgp() -> RoyModelSpec {
    let normal = |name: &str| Variable {
        name: name.into(),
        distribution: Distribution::Normal { mean: 0.0, sd: 1.0 },
    };
    let (s1, s0, r1, r0) = (1.0_f64, 0.8_f64, 0.4_f64, -0.3_f64);
    RoyModelSpec {
        name: "normal".into(),
        alpha0: 1.0,
        alpha1: 1.5,
        covariates: vec![normal("x1")],
        instruments: vec![normal("z1")],
        beta0: vec![0.5],
        beta1: vec![0.8],
        lambda: SelectionIndex {
            intercept: 0.2,
            covariates: vec![0.4],
            instruments: vec![0.8],
        },
        sigma: [
            [s1 * s1, 0.2 * s1 * s0, r1 * s1],
            [0.2 * s1 * s0, s0 * s0, r0 * s0],
            [r1 * s1, r0 * s0, 1.0],
        ],
    }
}

fn criterion_3() -> Outcome {
    let spec = normal_dgp();
    let (s1, s0) = (spec.sigma[0][0].sqrt(), spec.sigma[1][1].sqrt());
    let mut truth: BTreeMap<String, f64> = BTreeMap::new();
    truth.insert("gamma[(intercept)]".into(), spec.lambda.intercept);
    truth.insert("gamma[x1]".into(), spec.lambda.covariates[0]);
    truth.insert("gamma[z1]".into(), spec.lambda.instruments[0]);
    truth.insert("beta1[(intercept)]".into(), spec.alpha1);
    truth.insert("beta1[x1]".into(), spec.beta1[0]);
    truth.insert("beta0[(intercept)]".into(), spec.alpha0);
    truth.insert("beta0[x1]".into(), spec.beta0[0]);
    truth.insert("sigma1".into(), s1);
    truth.insert("sigma0".into(), s0);
    truth.insert("rho1".into(), spec.sigma[0][2] / s1);
    truth.insert("rho0".into(), spec.sigma[1][2] / s0);

    let reps = 100;
    let mut covered: BTreeMap<String, usize> = truth.keys().map(|k| (k.clone(), 0)).collect();
    let mut failures = 0;
    for r in 0..reps {
        let sim = generate(&spec, 5000, SEED + r).unwrap();
        match fit_normal_selection(&sim.data) {
            Ok(fit) => {
                for p in fit.parameters() {
                    if (p.estimate - truth[&p.name]).abs() <= 3.0 * p.se {
                        *covered.get_mut(&p.name).unwrap() += 1;
                    }
                }
            }
            Err(_) => failures += 1,
        }
    }
    let worst = covered.iter().min_by_key(|(_, c)| **c).unwrap();
    Outcome::check(
        covered.values().all(|&c| c >= 90),
        format!(
            "{} parameters, worst coverage {} = {}/{reps} (>= 90), {failures} fits failed",
            covered.len(),
            worst.0,
            worst.1
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let grid = SupportGrid::full(fine_grid());
    let mut worst_mass: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut worst_constant: f64 = 0.0;
    for _ in 0..20 {
        let (a, b) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
        let beta: Beta<f64> = Beta::new(a, b).unwrap();
        let n = rng.random_range(200..2000);
        let scores: Vec<f64> = (0..n)
            .map(|_| beta.sample(&mut rng).clamp(1e-6, 1.0 - 1e-6))
            .collect();
        let shift = rng.random_range(0.05..0.5);
        let policy: Vec<f64> = scores.iter().map(|p| p + shift * (1.0 - p)).collect();
        let coefs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let freq = rng.random_range(1.0..6.0);
        let f = |v: f64| coefs[0] + coefs[1] * v + coefs[2] * v * v + coefs[3] * (freq * v).sin();
        let curve = MteCurve::from_fn(grid.points.clone(), f);

        let weights = [
            weights_ate(&grid).unwrap(),
            weights_att(&scores, &grid).unwrap(),
            weights_atu(&scores, &grid).unwrap(),
            weights_mprte(&scores, &grid).unwrap(),
            weights_prte(&scores, &policy, &grid).unwrap(),
        ];
        for w in &weights {
            worst_mass = worst_mass.max((grid.trapezoid(&w.weights) - 1.0).abs());
        }
        let ep = scores.iter().sum::<f64>() / n as f64;
        let (ate, att, atu) = (
            integrate(&curve, &weights[0]).unwrap(),
            integrate(&curve, &weights[1]).unwrap(),
            integrate(&curve, &weights[2]).unwrap(),
        );
        worst_identity = worst_identity.max((ep * att + (1.0 - ep) * atu - ate).abs());

        let c = coefs[0];
        let flat = MteCurve::from_fn(grid.points.clone(), |_| c);
        for w in &weights {
            worst_constant = worst_constant.max((integrate(&flat, w).unwrap() - c).abs());
        }
    }
    Outcome::check(
        worst_mass <= 1e-6 && worst_identity <= 1e-3 && worst_constant <= 1e-6,
        format!(
            "20 draws: max |mass - 1| {worst_mass:.1e} (<= 1e-6), max identity gap {worst_identity:.1e} (<= 1e-3), max constant-curve gap {worst_constant:.1e} (<= 1e-6)"
        ),
    )
}

/// Scores uniform on (0, 1), treatment drawn with probability equal to the
/// score and `y = k(p) + noise`.
fn k_dataset(k: impl Fn(f64) -> f64, n: usize, seed: u64) -> (Dataset, PropensityScores) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let pi: f64 = rng.random_range(0.005..0.995);
        let e: f64 = rng.sample(StandardNormal);
        p.push(pi);
        s.push(f64::from(u8::from(rng.random::<f64>() < pi)));
        y.push(k(pi) + 0.1 * e);
    }
    let data = Dataset::from_columns(vec![
        (ColumnRole::new("s", Role::Treatment), s),
        (ColumnRole::new("y", Role::Outcome), y),
    ])
    .unwrap();
    (data, PropensityScores::new(p).unwrap())
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let x: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
    let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
    let sample = SortedSample::new(&x, &[&y]);
    let mut worst_linear: f64 = 0.0;
    for h in [0.03, 0.07, 0.15, 0.3, 0.6] {
        for v in (5..=95).map(|i| i as f64 / 100.0) {
            let fit = sample.fit_at(v, h, None);
            worst_linear = worst_linear.max((fit.levels[0] - (a + b * v)).abs());
            worst_linear = worst_linear.max((fit.slopes[0] - b).abs());
        }
    }

    let mut k_errors = Vec::new();
    // None: interior grid, at least one slope bandwidth inside the support
    type Check = (
        &'static str,
        fn(f64) -> f64,
        fn(f64) -> f64,
        Option<(f64, f64)>,
    );
    let checks: [Check; 2] = [
        ("P^2", |p| p * p, |v| 2.0 * v, None),
        ("sin P", f64::sin, f64::cos, Some((0.2, 0.8))),
    ];
    for (label, k, dk, window) in checks {
        let (data, scores) = k_dataset(k, 20_000, SEED);
        let fit = fit_partially_linear(&data, &scores, &MteOptions::default()).unwrap();
        let (s_lo, s_hi) = fit.support;
        let hd = fit.derivative_bandwidth;
        let (lo, hi) = window.unwrap_or((s_lo + hd, s_hi - hd));
        let grid: Vec<f64> = fit
            .grid
            .iter()
            .copied()
            .filter(|v| *v >= lo.max(s_lo) - 1e-9 && *v <= hi.min(s_hi) + 1e-9)
            .collect();
        let err = k_derivative(&fit, &grid)
            .iter()
            .zip(&grid)
            .map(|(d, v)| d.map_or(f64::INFINITY, |d| (d - dk(*v)).abs()))
            .fold(0.0, f64::max);
        k_errors.push((label, err, grid.len(), (lo.max(s_lo), hi.min(s_hi))));
    }
    let text: Vec<String> = k_errors
        .iter()
        .map(|(l, e, m, (a, b))| {
            format!("K = {l}: max |K' err| {e:.4} over {m} points in [{a:.3}, {b:.3}]")
        })
        .collect();
    Outcome::check(
        worst_linear <= 1e-8 && k_errors.iter().all(|(_, e, m, _)| *m > 0 && *e <= 0.05),
        format!(
            "linear reproduction error {worst_linear:.1e} (<= 1e-8), {} (<= 0.05)",
            text.join(", ")
        ),
    )
}

fn logit_grid_search(data: &Dataset) -> (f64, f64) {
    let s = data.treatment();
    let z = data.column("z").unwrap();
    let ll = |a: f64, b: f64| -> f64 {
        s.iter()
            .zip(z)
            .map(|(&si, &zi)| {
                let e = a + b * zi;
                if si == 1.0 {
                    -(1.0 + (-e).exp()).ln()
                } else {
                    -(1.0 + e.exp()).ln()
                }
            })
            .sum()
    };
    let (mut best, mut centre, mut step) = ((0.0, 0.0), (0.0, 0.0), 0.5);
    // successively refined 41 x 41 grids
    for _ in 0..12 {
        let mut best_ll = f64::NEG_INFINITY;
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (centre.0 + i as f64 * step, centre.1 + j as f64 * step);
                let v = ll(a, b);
                if v > best_ll {
                    best_ll = v;
                    best = (a, b);
                }
            }
        }
        centre = best;
        step /= 5.0;
    }
    best
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let n = 400;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let s: Vec<f64> = z
        .iter()
        .map(|zi: &f64| {
            f64::from(u8::from(
                rng.random::<f64>() < 1.0 / (1.0 + (-(0.3 + 0.9 * zi)).exp()),
            ))
        })
        .collect();
    let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 2.0 * s[i] + u[i] + 0.5 * z[i] * z[i])
        .collect();
    let data = Dataset::from_columns(vec![
        (ColumnRole::new("z", Role::Instrument), z.clone()),
        (ColumnRole::new("s", Role::Treatment), s.clone()),
        (ColumnRole::new("y", Role::Outcome), y.clone()),
    ])
    .unwrap();

    let logit = fit_logit(&data, &names(&["z"])).unwrap();
    let grid = logit_grid_search(&data);
    let logit_gap = (logit.coefficients[0] - grid.0)
        .abs()
        .max((logit.coefficients[1] - grid.1).abs());

    let iv = fit_2sls(
        &data,
        "y",
        "s",
        &InstrumentSet::from_columns(&data, &names(&["z"])).unwrap(),
        &[],
        SeType::Classical,
        None,
    )
    .unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cov = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (mean(a), mean(b));
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() - 1) as f64
    };
    let wald = cov(&z, &y) / cov(&z, &s);
    let wald_gap = (iv.coefficient("s").unwrap().0 - wald).abs();

    let draws: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
    let hpd = hpd_interval(&draws, 0.95).unwrap();
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let m = (0.95_f64 * 1000.0).ceil() as usize;
    let mut brute = (f64::NAN, f64::NAN);
    let mut width = f64::INFINITY;
    for i in 0..=1000 - m {
        let w = sorted[i + m - 1] - sorted[i];
        if w < width {
            width = w;
            brute = (sorted[i], sorted[i + m - 1]);
        }
    }
    let hpd_exact = hpd == brute;

    let small = Dataset::from_columns(vec![
        (ColumnRole::new("s", Role::Treatment), vec![0.0, 1.0, 1.0]),
        (ColumnRole::new("y", Role::Outcome), vec![1.5, -2.0, 7.25]),
    ])
    .unwrap();
    let recipe = |d: &Dataset| -> mtekit::Result<BTreeMap<String, f64>> {
        let y = d.outcome()?;
        Ok(BTreeMap::from([(
            "mean".to_string(),
            y.iter().sum::<f64>() / y.len() as f64,
        )]))
    };
    let draws = bootstrap(&small, 100, None, SEED, recipe).unwrap();
    let yv = [1.5, -2.0, 7.25];
    let reference: Vec<f64> = (0..100)
        .map(|r| {
            let mut rng = replicate_rng(SEED, r);
            let picks: Vec<f64> = (0..3).map(|_| yv[rng.random_range(0..3)]).collect();
            picks.iter().sum::<f64>() / 3.0
        })
        .collect();
    let bootstrap_exact = draws.draws["mean"]
        .iter()
        .zip(&reference)
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && draws.draws["mean"].len() == 100;

    Outcome::check(
        logit_gap <= 1e-3 && wald_gap <= 1e-10 && hpd_exact && bootstrap_exact,
        format!(
            "logit vs grid search {logit_gap:.1e} (<= 1e-3), 2SLS vs Wald ratio {wald_gap:.1e} (<= 1e-10), HPD exact: {hpd_exact}, bootstrap bit-identical: {bootstrap_exact}"
        ),
    )
}

fn criterion_7() -> Outcome {
    // two types: half at P = 0.2, half at P = 0.6; the policy moves the
    // first type to 0.4, so Pr(P > v) rises by 1/2 for v in [0.2, 0.4)
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let curve = MteCurve::from_fn(grid.clone(), |v| 1.0 - v);
    let base = [0.2, 0.6];
    let policy = [0.4, 0.6];
    let got = prte(&curve, &base, &policy).unwrap();
    // constant weight on [0.2, 0.4), trapezoid rule on the 0.01 grid
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..grid.len() {
        let w = |v: f64| {
            if v > 0.2 - 1e-12 && v < 0.4 - 1e-12 {
                1.0
            } else {
                0.0
            }
        };
        let (a, b) = (grid[i - 1], grid[i]);
        num += 0.5 * (w(a) * (1.0 - a) + w(b) * (1.0 - b)) * (b - a);
        den += 0.5 * (w(a) + w(b)) * (b - a);
    }
    let hand = num / den;
    let toy_exact = (got - hand).abs() <= 1e-12;

    let null = matches!(prte(&curve, &base, &base), Err(Error::NoOneInduced(_)));

    let spec = preset("paper-like").unwrap();
    let sim = generate(&spec, 5000, SEED).unwrap();
    let regs = pipeline::first_stage_regressors(&sim.data).unwrap();
    let logit = fit_logit(&sim.data, &regs).unwrap();
    let before = propensity(&logit, &sim.data).unwrap().mean();
    let after = policy_scores(&logit, &sim.data, "distance", 0.15).unwrap();
    let after = after.iter().sum::<f64>() / after.len() as f64;
    Outcome::check(
        toy_exact && null && after > before && logit.coefficient("distance").unwrap() < 0.0,
        format!(
            "toy PRTE {got:.6} vs hand {hand:.6}, null policy rejected: {null}, mean P {before:.4} -> {after:.4} after 15% distance cut"
        ),
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IflsConfig {
    data: String,
    roles: Vec<ColumnRole>,
    food_groups: Option<mtekit::data::FoodGroupMap>,
    schooling: String,
    distance: String,
}

fn criterion_8() -> Outcome {
    let Ok(path) = std::env::var("MTEKIT_IFLS_CONFIG") else {
        return Outcome {
            passed: None,
            detail: "replication extract not supplied (set MTEKIT_IFLS_CONFIG)".into(),
        };
    };
    type Checks = (Vec<(String, f64, f64)>, f64);
    let run = || -> mtekit::Result<Checks> {
        let cfg: IflsConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        let raw = mtekit::load_csv(&cfg.data, &cfg.roles)?;
        let map = cfg
            .food_groups
            .unwrap_or_else(mtekit::data::FoodGroupMap::standard);
        let data = mtekit::data::build_food_outcomes(&raw, &map)?;
        let covariates = data.covariate_names();
        let mut regs = vec![cfg.schooling.clone()];
        regs.extend(covariates.iter().cloned());
        let mut rows = Vec::new();
        for (outcome, ols_target, iv_target) in [
            (mtekit::data::LOG_HEALTHY, 0.315, 0.330),
            (mtekit::data::LOG_UNHEALTHY, -0.228, -0.269),
        ] {
            let d = data.with_outcome(outcome)?;
            let ols = fit_ols(&d, outcome, &regs, SeType::RobustHc1, None)?;
            let iv = fit_2sls(
                &d,
                outcome,
                &cfg.schooling,
                &InstrumentSet::from_columns(&d, std::slice::from_ref(&cfg.distance))?,
                &covariates,
                SeType::RobustHc1,
                None,
            )?;
            rows.push((
                format!("OLS {outcome}"),
                ols.coefficient(&cfg.schooling).unwrap().0,
                ols_target,
            ));
            rows.push((
                format!("IV {outcome}"),
                iv.coefficient(&cfg.schooling).unwrap().0,
                iv_target,
            ));
        }
        let logit = fit_logit(&data, &pipeline::first_stage_regressors(&data)?)?;
        Ok((rows, logit.coefficient(&cfg.distance).unwrap_or(f64::NAN)))
    };
    match run() {
        Ok((rows, distance)) => {
            let ok = rows.iter().all(|(_, got, want)| (got - want).abs() <= 0.01)
                && (distance + 0.223).abs() <= 0.005;
            let text: Vec<String> = rows
                .iter()
                .map(|(l, g, w)| format!("{l} {g:.3} (target {w})"))
                .collect();
            Outcome::check(
                ok,
                format!(
                    "{}, distance {distance:.4} (target -0.223)",
                    text.join(", ")
                ),
            )
        }
        Err(e) => Outcome::check(false, format!("could not run on the supplied extract: {e}")),
    }
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("oracle recovery (semiparametric)", criterion_1),
        ("homogeneous-effects null", criterion_2),
        ("normal-model self-consistency", criterion_3),
        ("weighting identities", criterion_4),
        ("local-linear exactness", criterion_5),
        ("small-instance oracles", criterion_6),
        ("PRTE machinery", criterion_7),
        ("replication extract", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (title, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let status = match outcome.passed {
            Some(true) => "PASS",
            Some(false) => {
                failed.push(i + 1);
                "FAIL"
            }
            None => "SKIP",
        };
        let _ = writeln!(
            std::io::stderr(),
            "criterion {} [{status}] {title}: {}",
            i + 1,
            outcome.detail
        );
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

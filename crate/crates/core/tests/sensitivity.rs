mod common;

use medtransport::dgp::{apply_missingness, Mechanism, MissingnessSpec};
use medtransport::math::quantile;
use medtransport::nuisance::*;
use medtransport::rng::derive_seed;
use medtransport::sensitivity::*;
use medtransport::*;
use proptest::prelude::*;

fn masked(n: usize, seed: u64) -> ObservationTable {
    let t = generate(&StructuralParams::default(), n, n, seed).unwrap();
    let spec = MissingnessSpec::calibrated(Mechanism::Mnar, 0, 0.3);
    apply_missingness(&t, &spec, seed + 1).unwrap().0
}

fn fitter() -> ParametricFitter {
    ParametricFitter { options: NuisanceOptions::default() }
}

fn config(n_bootstrap: usize, seed: u64) -> SensitivityConfig {
    SensitivityConfig { n_bootstrap, seed, ..Default::default() }
}

#[test]
fn zero_r2_collapses_family() {
    let w = [0.1, 0.4, 0.2, 0.9, 0.0];
    let s = sensitivity_bounds(&w, 0.0).unwrap();
    assert_eq!(s.scale_factors(FAMILY_SIZE), vec![1.0]);
    assert_eq!(s.scale_member(1.0).weights, w.to_vec());
}

#[test]
fn endpoint_scale_factor_closed_form() {
    let s = sensitivity_bounds(&[1.0, 2.0, 3.0], 0.75).unwrap();
    assert!((s.c_max - 2.0).abs() < 1e-15);
    let f = s.scale_factors(FAMILY_SIZE);
    assert_eq!(f.len(), FAMILY_SIZE);
    assert_eq!(f[0], 1.0);
    assert!((f[FAMILY_SIZE - 1] - 2.0).abs() < 1e-15);
}

#[test]
fn endpoint_variance_ratio_without_clipping() {
    let w = [2.0, 2.5, 3.0, 3.5, 4.0];
    for r2 in [0.1, 0.5, 0.75] {
        let s = sensitivity_bounds(&w, r2).unwrap();
        let m = s.scale_member(s.c_max);
        assert!(!m.clipped);
        assert!((s.variance_ratio(&m.weights) - 1.0 / (1.0 - r2)).abs() < 1e-9);
    }
}

#[test]
fn directional_members_reach_variance_bound() {
    let base = [0.3, 0.8, 0.5, 1.2, 0.9, 0.4];
    let q = [0.2, 0.9, 0.1, 0.7, 0.4, 0.8];
    let u = orthogonal_direction(&base, &q).unwrap();
    let s = sensitivity_bounds(&base, 0.6).unwrap();
    for sign in [1.0, -1.0] {
        let m = s.directional_member(s.c_max, &u, sign);
        assert!((s.variance_ratio(&m.weights) - 1.0 / 0.4).abs() < 1e-9);
        let mean: f64 = m.weights.iter().sum::<f64>() / m.weights.len() as f64;
        assert!((mean - s.mean).abs() < 1e-12);
    }
}

#[test]
fn degenerate_and_out_of_domain_inputs() {
    assert!(matches!(sensitivity_bounds(&[0.5, 0.5, 0.5], 0.2), Err(Error::DegenerateWeights)));
    assert!(matches!(sensitivity_bounds(&[0.1, 0.5], 1.0), Err(Error::Domain(_))));
    assert!(matches!(sensitivity_bounds(&[0.1, 0.5], -0.1), Err(Error::Domain(_))));
    assert!(matches!(sensitivity_bounds(&[-0.1, 0.5], 0.1), Err(Error::Domain(_))));
    assert_eq!(tan_interval(1.0).unwrap(), (1.0, 1.0));
    assert!(tan_interval(0.5).is_err());
}

#[test]
fn config_validation() {
    assert!(SensitivityConfig::default().validate().is_ok());
    let bad = SensitivityConfig { r2_grid: vec![0.2, 0.1], ..Default::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = SensitivityConfig { r2_grid: vec![0.2, 1.0], ..Default::default() };
    assert!(matches!(bad.validate(), Err(Error::Domain(_))));
    assert!(config(99, 0).validate().is_err());
    let bad = SensitivityConfig { lambda: Some(0.9), ..Default::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_r2_bounds_equal_point() {
    let t = masked(2000, 1);
    let fit = fit_nuisance(&t, &NuisanceOptions::default()).unwrap();
    let b = bounded_sie(&fit, &t, 0, 0.0).unwrap();
    let sie = estimate_sie(&fit, &t, Some(0)).unwrap();
    assert_eq!(b.lower, b.point);
    assert_eq!(b.upper, b.point);
    assert!((b.point - sie.point).abs() < 1e-12);
}

#[test]
fn complete_group_stays_significant() {
    let t = masked(5000, 2);
    let fit = fit_nuisance(&t, &NuisanceOptions::default()).unwrap();
    let b = bounded_sie(&fit, &t, 1, 0.9).unwrap();
    assert!(b.lower > 0.0, "{b:?}");
    assert_eq!(b.lower, b.point);
    let u = bounded_sie_unconditional(&fit, &t, 1, 0.9).unwrap();
    assert!(u.lower < b.lower && u.upper > b.upper);
}

#[test]
fn intervals_are_nested() {
    let t = masked(3000, 3);
    let fit = fit_nuisance(&t, &NuisanceOptions::default()).unwrap();
    let a = bounded_sie(&fit, &t, 0, 0.3).unwrap();
    let b = bounded_sie(&fit, &t, 0, 0.6).unwrap();
    assert!(b.lower <= a.lower && a.upper <= b.upper, "{a:?} {b:?}");
    assert!(a.lower < a.point && a.point < a.upper);
}

#[test]
fn zero_r2_ci_is_percentile_bootstrap_of_sie() {
    let t = masked(800, 4);
    let cfg = config(100, 17);
    let (lo, hi) = ci_alpha(&fitter(), &t, 0, 0.0, &cfg).unwrap();
    let sies: Vec<f64> = (0..cfg.n_bootstrap as u64)
        .map(|b| {
            let boot = stratified_resample(&t, derive_seed(derive_seed(cfg.seed, b), 0));
            let fit = fit_nuisance(&boot, &NuisanceOptions::default()).unwrap();
            estimate_sie(&fit, &boot, Some(0)).unwrap().point
        })
        .collect();
    assert!((lo - quantile(&sies, 0.025)).abs() < 1e-12);
    assert!((hi - quantile(&sies, 0.975)).abs() < 1e-12);
}

#[test]
fn stratified_resample_preserves_strata() {
    let t = masked(500, 5);
    let b = stratified_resample(&t, 9);
    for s in 0..2 {
        for w in 0..2 {
            assert_eq!(b.count(Some(s), Some(w)), t.count(Some(s), Some(w)));
        }
    }
    assert_eq!(b, stratified_resample(&t, 9));
}

#[test]
fn large_bias_ci_spans_null() {
    let t = masked(2000, 6);
    let (lo, hi) = ci_alpha(&fitter(), &t, 0, 0.9, &config(100, 3)).unwrap();
    assert!(lo <= 0.0 && hi >= 0.0, "({lo}, {hi})");
}

#[test]
fn sweep_is_deterministic_and_nested() {
    let t = masked(800, 7);
    let grid = SweepGrid::R2(vec![0.0, 0.3, 0.6, 0.9]);
    let cfg = SensitivityConfig { lambda: Some(1.0), ..config(100, 5) };
    let a = sweep(&fitter(), &t, &grid, &cfg).unwrap();
    let b = sweep(&fitter(), &t, &grid, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.points.len(), 8);
    assert_eq!(a.curve.nesting_violations(), 0);
    for p in &a.curve.points {
        assert!(p.sie_lower <= p.sie_upper);
        assert!(p.ci_low <= p.sie_lower && p.ci_high >= p.sie_upper);
        if p.group_w == 1 {
            assert_eq!(p.r2_applied, 0.0);
        }
    }
    for c in &a.crossings {
        if let Some(r) = c.r2_star {
            assert!([0.0, 0.3, 0.6, 0.9].contains(&r));
        }
    }
    let tan = a.diagnostics.tan.unwrap();
    assert_eq!(tan.lambda, 1.0);
    // any nontrivial member leaves the λ = 1 interval
    assert!(!tan.within_bounds);
}

#[test]
fn zero_missingness_grid_reproduces_baseline() {
    let t = generate(&StructuralParams::default(), 1500, 1500, 8).unwrap();
    let specs: Vec<MissingnessSpec> = (0..3).map(|_| MissingnessSpec::new(Mechanism::Mcar, 800.0, 0)).collect();
    let cfg = config(100, 2);
    let res = sweep(&fitter(), &t, &SweepGrid::Missingness { specs, seed: 4 }, &cfg).unwrap();
    assert!(res.diagnostics.realized_missing.iter().all(|&f| f == 0.0));
    let fit = fit_nuisance(&t, &NuisanceOptions::default()).unwrap();
    let base = estimate_sie(&fit, &t, Some(0)).unwrap();
    let w0: Vec<&CurvePoint> = res.curve.group(0).collect();
    assert_eq!(w0.len(), 3);
    for p in &w0 {
        assert_eq!(p.r2, 0.0);
        assert!((p.sie_point - base.point).abs() < 1e-12);
        assert_eq!(p.sie_lower, p.sie_point);
        assert_eq!(p.ci_low, w0[0].ci_low);
    }
    if w0[0].ci_low > 0.0 {
        assert_eq!(res.crossings[0].r2_star, None);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_members_keep_mean_and_nonnegativity(
        w in prop::collection::vec(0.0f64..10.0, 3..40),
        r2 in 0.0f64..0.99,
    ) {
        prop_assume!(medtransport::math::variance(&w) > 1e-6);
        let s = sensitivity_bounds(&w, r2).unwrap();
        for c in s.scale_factors(FAMILY_SIZE) {
            let m = s.scale_member(c);
            prop_assert!(m.weights.iter().all(|&v| v >= 0.0));
            let mean = m.weights.iter().sum::<f64>() / m.weights.len() as f64;
            prop_assert!((mean - s.mean).abs() < 1e-9 * (1.0 + s.mean));
            if !m.clipped {
                prop_assert!(s.variance_ratio(&m.weights) <= 1.0 / (1.0 - r2) + 1e-9);
            }
        }
    }

    #[test]
    fn family_is_nested_in_r2(
        w in prop::collection::vec(0.0f64..10.0, 3..40),
        r1 in 0.0f64..0.98,
        gap in 0.0f64..0.5,
    ) {
        prop_assume!(medtransport::math::variance(&w) > 1e-6);
        let r2 = (r1 + gap).min(0.99);
        let a = sensitivity_bounds(&w, r1).unwrap();
        let b = sensitivity_bounds(&w, r2).unwrap();
        prop_assert!(a.c_max <= b.c_max);
    }

    #[test]
    fn orthogonal_direction_is_orthogonal(
        pairs in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0), 4..40),
    ) {
        let base: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let q: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Some(u) = orthogonal_direction(&base, &q) {
            let mb = base.iter().sum::<f64>() / base.len() as f64;
            let su: f64 = u.iter().sum();
            let sb: f64 = u.iter().zip(&base).map(|(x, b)| x * (b - mb)).sum();
            prop_assert!(su.abs() < 1e-8);
            prop_assert!(sb.abs() < 1e-8 * (1.0 + base.iter().map(|b| b * b).sum::<f64>()).sqrt() * u.len() as f64);
            prop_assert!((medtransport::math::variance(&u) - 1.0).abs() < 1e-9);
        }
    }
}

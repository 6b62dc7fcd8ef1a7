mod common;

use common::*;
use medtransport::dgp::*;
use medtransport::{Error, ObservationTable};

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn big() -> ObservationTable {
    generate(&StructuralParams::default(), 500_000, 500_000, 11).unwrap()
}

#[test]
fn treatment_is_fair_coin() {
    let t = big();
    let p = t.iter().filter(|r| r.a == 1).count() as f64 / t.len() as f64;
    assert!((p - 0.5).abs() < 0.002, "{p}");
}

#[test]
fn mediator_mean_matches_linear_chain() {
    let t = big();
    let c: Vec<f64> = t.iter().filter(|r| r.w == 1 && r.a == 1).map(|r| r.c_true.unwrap()).collect();
    let m = c.iter().sum::<f64>() / c.len() as f64;
    assert!((m - (1.5 * 0.7 + 0.2)).abs() < 0.01, "{m}");
}

#[test]
fn degenerate_constant_mediator() {
    let p = StructuralParams {
        coef_c_given_r: 0.0,
        noise_sd_c: 0.0,
        coef_c_given_w1: 0.0,
        coef_c_given_w0: 0.0,
        ..Default::default()
    };
    let t = generate(&p, 100, 100, 1).unwrap();
    assert!(t.iter().all(|r| r.c_true == Some(0.0) && r.c_obs == Some(0.0)));
}

#[test]
fn generated_rows_have_expected_layout() {
    let (t, rep) = generate_with_report(&StructuralParams::default(), 300, 200, 4).unwrap();
    assert_eq!(t.count(Some(1), None), 300);
    assert_eq!(t.count(Some(0), None), 200);
    assert!(t.iter().all(|r| r.m() == 1 && r.c_obs == r.c_true));
    // about half of target rows draw a negative W probability
    assert!(rep.w_clamped > 50);
}

#[test]
fn mnar_lambda_zero_is_fair_coin_in_group() {
    let t = big();
    let spec = MissingnessSpec { environment: None, ..MissingnessSpec::new(Mechanism::Mnar, 0.0, 0) };
    let (m, rep) = apply_missingness(&t, &spec, 3).unwrap();
    assert!((rep.realized_fraction - 0.5).abs() < 0.003);
    assert_eq!(m.missing_fraction(None, Some(1)), 0.0);
}

#[test]
fn mnar_calibration_hits_target_and_spares_other_group() {
    let t = generate(&StructuralParams::default(), 5000, 5000, 2).unwrap();
    let spec = MissingnessSpec::calibrated(Mechanism::Mnar, 0, 0.3);
    let (m, rep) = apply_missingness(&t, &spec, 9).unwrap();
    let f = m.missing_fraction(Some(0), Some(0));
    assert!((0.295..=0.305).contains(&f), "{f}");
    assert_eq!(f, rep.realized_fraction);
    assert_eq!(m.missing_fraction(None, Some(1)), 0.0);
    assert_eq!(m.missing_fraction(Some(1), None), 0.0);
    for (a, b) in t.iter().zip(m.iter()) {
        assert!(b.c_obs.is_none() || b.c_obs == a.c_obs);
    }
}

#[test]
fn calibration_reaches_high_proportions_with_negative_lambda() {
    let t = generate(&StructuralParams::default(), 2000, 5000, 5).unwrap();
    let (_, rep) = apply_missingness(&t, &MissingnessSpec::calibrated(Mechanism::Mnar, 0, 0.8), 1).unwrap();
    assert!(rep.lambda < 0.0);
    assert!((rep.realized_fraction - 0.8).abs() <= 0.005);
}

#[test]
fn calibration_fails_on_empty_group() {
    let p = StructuralParams { w_noise_sd: 0.0, ..Default::default() };
    // no target row has W = 1
    let t = generate(&p, 100, 100, 1).unwrap();
    let err = apply_missingness(&t, &MissingnessSpec::calibrated(Mechanism::Mcar, 1, 1.0), 1).unwrap_err();
    assert!(matches!(err, Error::Calibration(_)));
}

#[test]
fn mcar_is_uncorrelated_with_mediator() {
    let t = generate(&StructuralParams::default(), 1, 100_000, 8).unwrap();
    let spec = MissingnessSpec::calibrated(Mechanism::Mcar, 0, 0.2);
    let (m, _) = apply_missingness(&t, &spec, 2).unwrap();
    let rows: Vec<_> = m.iter().filter(|r| r.w == 0).collect();
    let mm: Vec<f64> = rows.iter().map(|r| r.m() as f64).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.c_true.unwrap()).collect();
    let r = corr(&mm, &c);
    assert!(r.abs() < 3.0 / (rows.len() as f64).sqrt() && r.abs() < 0.01, "{r}");
}

#[test]
fn mnar_depends_on_mediator() {
    let t = generate(&StructuralParams::default(), 1, 100_000, 8).unwrap();
    let (m, _) = apply_missingness(&t, &MissingnessSpec::new(Mechanism::Mnar, 1.0, 0), 2).unwrap();
    let rows: Vec<_> = m.iter().filter(|r| r.w == 0).collect();
    let mm: Vec<f64> = rows.iter().map(|r| r.m() as f64).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.c_true.unwrap()).collect();
    assert!(corr(&mm, &c) > 0.05);
}

#[test]
fn mar_ignores_mediator_given_intermediate() {
    let t = generate(&StructuralParams::default(), 1, 50_000, 8).unwrap();
    let (m, rep) = apply_missingness(&t, &MissingnessSpec::calibrated(Mechanism::Mar, 0, 0.4), 2).unwrap();
    assert!((rep.realized_fraction - 0.4).abs() <= 0.005);
    assert!(m.iter().all(|r| r.w == 1 || r.s == 1 || r.c_obs.is_none() || r.c_obs == r.c_true));
}

#[test]
fn real_data_mode_keeps_existing_missingness() {
    let t = generate(&StructuralParams::default(), 10, 500, 8).unwrap();
    let rows: Vec<_> = t
        .iter()
        .map(|r| {
            let mut r = *r;
            r.c_true = None;
            if r.id % 7 == 0 {
                r.c_obs = None;
            }
            r
        })
        .collect();
    let t = ObservationTable::new(rows).unwrap();
    let (m, _) = apply_missingness(&t, &MissingnessSpec::new(Mechanism::Mnar, 0.5, 0), 3).unwrap();
    for (a, b) in t.iter().zip(m.iter()) {
        if a.c_obs.is_none() {
            assert!(b.c_obs.is_none());
        }
    }
}

#[test]
fn oracle_matches_quadrature_truth() {
    let p = StructuralParams::default();
    let o = oracle_effects(&p, 1_000_000, 1).unwrap();
    for (w, (sde, sie)) in [(0u8, TRUTH_W0), (1, TRUTH_W1)] {
        let g = o.group(w);
        assert!(g.sie_se < 0.005 && g.sde_se < 0.005);
        assert!((g.sie - sie).abs() < 3.0 * g.sie_se, "w={w} {} vs {sie}", g.sie);
        assert!((g.sde - sde).abs() < 3.0 * g.sde_se, "w={w} {} vs {sde}", g.sde);
    }
}

#[test]
fn oracle_without_mediated_path_is_null() {
    let mut p = StructuralParams::default();
    p.outcome_coefs.c = 0.0;
    let o = oracle_effects(&p, 100_000, 2).unwrap();
    for g in &o.groups {
        assert!(g.sie.abs() <= 2.0 * g.sie_se.max(1e-15));
    }
}

#[test]
fn oracle_stable_when_doubling_draws() {
    let p = StructuralParams::default();
    let a = oracle_effects(&p, 200_000, 5).unwrap();
    let b = oracle_effects(&p, 400_000, 6).unwrap();
    for w in 0..2u8 {
        let (x, y) = (a.group(w), b.group(w));
        let se = (x.sie_se.powi(2) + y.sie_se.powi(2)).sqrt();
        assert!((x.sie - y.sie).abs() < 3.0 * se);
    }
}

#[test]
fn oracle_rejects_small_draw_counts() {
    assert!(matches!(oracle_effects(&StructuralParams::default(), 1000, 1), Err(Error::Config(_))));
}

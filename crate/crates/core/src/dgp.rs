//! Synthetic data from the structural model, missingness mechanisms and a brute-force oracle.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_pdf, sd, sigmoid, std_normal_cdf};
use crate::rng::seeded;
use crate::table::{Observation, ObservationTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeCoefs {
    pub a: f64,
    pub c: f64,
    pub w: f64,
}

/// Constants of the structural equations.
///
/// ```text
/// A ~ Bern(p_treat)
/// W ~ Bern(clamp(w_source_shift·S + N(0, w_noise_sd)))
/// R = coef_r_given_a·A + N(0, noise_sd_r)
/// C = coef_c_given_r·R + coef_c_given_w1·W + coef_c_given_w0·(1 − W) + N(0, noise_sd_c)
/// Y ~ Bern(σ(outcome_intercept + a·A + c·C + w·W))
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralParams {
    pub p_treat: f64,
    pub w_source_shift: f64,
    pub w_noise_sd: f64,
    pub coef_r_given_a: f64,
    pub noise_sd_r: f64,
    pub coef_c_given_r: f64,
    pub coef_c_given_w1: f64,
    pub coef_c_given_w0: f64,
    pub noise_sd_c: f64,
    pub outcome_intercept: f64,
    pub outcome_coefs: OutcomeCoefs,
}

impl Default for StructuralParams {
    fn default() -> Self {
        Self {
            p_treat: 0.5,
            w_source_shift: 0.5,
            w_noise_sd: 0.1,
            coef_r_given_a: 0.7,
            noise_sd_r: 0.5,
            coef_c_given_r: 1.5,
            coef_c_given_w1: 0.2,
            coef_c_given_w0: 0.8,
            noise_sd_c: 0.5,
            outcome_intercept: 0.0,
            outcome_coefs: OutcomeCoefs { a: 0.2, c: 2.5, w: -0.7 },
        }
    }
}

impl StructuralParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.p_treat,
            self.w_source_shift,
            self.w_noise_sd,
            self.coef_r_given_a,
            self.noise_sd_r,
            self.coef_c_given_r,
            self.coef_c_given_w1,
            self.coef_c_given_w0,
            self.noise_sd_c,
            self.outcome_intercept,
            self.outcome_coefs.a,
            self.outcome_coefs.c,
            self.outcome_coefs.w,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("structural parameters must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::Config(format!("p_treat = {} outside [0, 1]", self.p_treat)));
        }
        for (name, v) in [
            ("w_noise_sd", self.w_noise_sd),
            ("noise_sd_r", self.noise_sd_r),
            ("noise_sd_c", self.noise_sd_c),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} is negative")));
            }
        }
        Ok(())
    }

    fn c_shift(&self, w: u8) -> f64 {
        if w == 1 {
            self.coef_c_given_w1
        } else {
            self.coef_c_given_w0
        }
    }

    fn outcome_lp(&self, a: f64, c: f64, w: f64) -> f64 {
        self.outcome_intercept
            + self.outcome_coefs.a * a
            + self.outcome_coefs.c * c
            + self.outcome_coefs.w * w
    }

    /// P(W = 1 | S = s) under the clamped construction.
    pub fn p_w1(&self, s: u8) -> f64 {
        let mu = self.w_source_shift * s as f64;
        let sigma = self.w_noise_sd;
        if sigma == 0.0 {
            return mu.clamp(0.0, 1.0);
        }
        let (lo, hi) = (-mu / sigma, (1.0 - mu) / sigma);
        let (plo, phi) = (std_normal_cdf(lo), std_normal_cdf(hi));
        mu * (phi - plo) + sigma * (normal_pdf(lo, 0.0, 1.0) - normal_pdf(hi, 0.0, 1.0)) + (1.0 - phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Rows whose W success probability was clamped into [0, 1].
    pub w_clamped: usize,
}

pub fn generate(
    params: &StructuralParams,
    n_source: usize,
    n_target: usize,
    seed: u64,
) -> Result<ObservationTable> {
    generate_with_report(params, n_source, n_target, seed).map(|(t, _)| t)
}

pub fn generate_with_report(
    params: &StructuralParams,
    n_source: usize,
    n_target: usize,
    seed: u64,
) -> Result<(ObservationTable, GenerationReport)> {
    params.validate()?;
    if n_source == 0 || n_target == 0 {
        return Err(Error::Config("n_source and n_target must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let mut report = GenerationReport::default();
    let mut rows = Vec::with_capacity(n_source + n_target);
    for i in 0..n_source + n_target {
        let s: u8 = (i < n_source) as u8;
        let a = (rng.random::<f64>() < params.p_treat) as u8;
        let z: f64 = rng.sample(StandardNormal);
        let pw_raw = params.w_source_shift * s as f64 + params.w_noise_sd * z;
        let pw = pw_raw.clamp(0.0, 1.0);
        report.w_clamped += (pw != pw_raw) as usize;
        let w = (rng.random::<f64>() < pw) as u8;
        let zr: f64 = rng.sample(StandardNormal);
        let r = params.coef_r_given_a * a as f64 + params.noise_sd_r * zr;
        let zc: f64 = rng.sample(StandardNormal);
        let c = params.coef_c_given_r * r + params.c_shift(w) + params.noise_sd_c * zc;
        let py = sigmoid(params.outcome_lp(a as f64, c, w as f64));
        let y = (rng.random::<f64>() < py) as u8;
        rows.push(Observation { id: i as u64, s, a, w, r, c_true: Some(c), c_obs: Some(c), y });
    }
    Ok((ObservationTable::new(rows)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

/// Which rows lose their mediator and how strongly missingness depends on data.
///
/// Affected rows (W = `target_group`, and S = `environment` when set) are observed with
/// probability σ(λ·z), where z = 1 (MCAR), z = A + R (MAR) or z = C (MNAR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    #[serde(default)]
    pub lambda: f64,
    pub target_group: u8,
    #[serde(default)]
    pub target_proportion: Option<f64>,
    #[serde(default = "default_environment")]
    pub environment: Option<u8>,
}

fn default_environment() -> Option<u8> {
    Some(0)
}

impl MissingnessSpec {
    pub fn new(mechanism: Mechanism, lambda: f64, target_group: u8) -> Self {
        Self { mechanism, lambda, target_group, target_proportion: None, environment: Some(0) }
    }

    pub fn calibrated(mechanism: Mechanism, target_group: u8, proportion: f64) -> Self {
        Self {
            mechanism,
            lambda: 0.0,
            target_group,
            target_proportion: Some(proportion),
            environment: Some(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::Config("missingness lambda must be finite".into()));
        }
        if self.target_group > 1 || self.environment.is_some_and(|e| e > 1) {
            return Err(Error::Config("target_group and environment must be 0 or 1".into()));
        }
        if let Some(p) = self.target_proportion {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("target_proportion = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn affects(&self, row: &Observation) -> bool {
        row.w == self.target_group && self.environment.map_or(true, |e| row.s == e)
    }

    fn score(&self, row: &Observation) -> f64 {
        match self.mechanism {
            Mechanism::Mcar => 1.0,
            Mechanism::Mar => row.a as f64 + row.r,
            Mechanism::Mnar => row.c_true.or(row.c_obs).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessReport {
    pub lambda: f64,
    /// Missing fraction among affected-eligible rows after masking.
    pub realized_fraction: f64,
    pub eligible_rows: usize,
    pub iterations: usize,
}

const CALIBRATION_TOL: f64 = 0.005;
const CALIBRATION_MAX_ITER: usize = 60;
const LAMBDA_BRACKET: f64 = 200.0;

pub fn apply_missingness(
    table: &ObservationTable,
    spec: &MissingnessSpec,
    seed: u64,
) -> Result<(ObservationTable, MissingnessReport)> {
    spec.validate()?;
    let mut rng = seeded(seed);
    // One uniform per row keeps realized masks nested across λ.
    let draws: Vec<f64> = (0..table.len()).map(|_| rng.random::<f64>()).collect();
    let eligible: Vec<usize> =
        (0..table.len()).filter(|&i| spec.affects(&table.rows()[i])).collect();
    let scores: Vec<f64> = eligible.iter().map(|&i| spec.score(&table.rows()[i])).collect();
    let already: Vec<bool> = eligible.iter().map(|&i| table.rows()[i].c_obs.is_none()).collect();

    let fraction = |lambda: f64| -> f64 {
        if eligible.is_empty() {
            return 0.0;
        }
        let k = eligible
            .iter()
            .zip(&scores)
            .zip(&already)
            .filter(|((&i, &z), &gone)| gone || draws[i] >= sigmoid(lambda * z))
            .count();
        k as f64 / eligible.len() as f64
    };

    let (lambda, iterations) = match spec.target_proportion {
        None => (spec.lambda, 0),
        Some(target) => {
            if eligible.is_empty() {
                return Err(Error::Calibration(format!(
                    "no rows in target group {} to receive missingness",
                    spec.target_group
                )));
            }
            calibrate(&fraction, target)?
        }
    };

    let mut rows = table.rows().to_vec();
    for (&i, &z) in eligible.iter().zip(&scores) {
        if draws[i] >= sigmoid(lambda * z) {
            rows[i].c_obs = None;
        }
    }
    let report = MissingnessReport {
        lambda,
        realized_fraction: fraction(lambda),
        eligible_rows: eligible.len(),
        iterations,
    };
    Ok((ObservationTable::new(rows)?, report))
}

fn calibrate(fraction: &dyn Fn(f64) -> f64, target: f64) -> Result<(f64, usize)> {
    let (mut lo, mut hi) = (-LAMBDA_BRACKET, LAMBDA_BRACKET);
    let (flo, fhi) = (fraction(lo), fraction(hi));
    for (lam, f) in [(0.0, fraction(0.0)), (lo, flo), (hi, fhi)] {
        if (f - target).abs() <= CALIBRATION_TOL {
            return Ok((lam, 0));
        }
    }
    if (flo - target).signum() == (fhi - target).signum() {
        return Err(Error::Calibration(format!(
            "missing proportion {target} unreachable; achievable range [{:.3}, {:.3}]",
            flo.min(fhi),
            flo.max(fhi)
        )));
    }
    let lo_above = flo > target;
    for it in 1..=CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f = fraction(mid);
        if (f - target).abs() <= CALIBRATION_TOL {
            return Ok((mid, it));
        }
        if (f > target) == lo_above {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach missing proportion {target} within {CALIBRATION_TOL}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOracle {
    pub w: u8,
    /// E[Y(a, g_{a*})] for (a, a*) = (0,0), (1,0), (1,1).
    pub psi_00: f64,
    pub psi_10: f64,
    pub psi_11: f64,
    pub sde: f64,
    pub sie: f64,
    pub sde_se: f64,
    pub sie_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEffects {
    pub n_mc: usize,
    pub groups: Vec<GroupOracle>,
    /// P(W = 1 | S = 0).
    pub p_w1_target: f64,
    pub sde_marginal: f64,
    pub sie_marginal: f64,
}

impl OracleEffects {
    pub fn group(&self, w: u8) -> &GroupOracle {
        &self.groups[w as usize]
    }
}

/// Monte-Carlo truth in the target environment, drawing the mediator from its structural
/// conditional under A = a* and plugging it into the outcome equation under A = a.
pub fn oracle_effects(params: &StructuralParams, n_mc: usize, seed: u64) -> Result<OracleEffects> {
    params.validate()?;
    if n_mc < 100_000 {
        return Err(Error::Config(format!("oracle n_mc = {n_mc} below 100000")));
    }
    let mut groups = Vec::with_capacity(2);
    for w in 0..2u8 {
        let mut rng = seeded(crate::rng::derive_seed(seed, w as u64));
        let mut sde = Vec::with_capacity(n_mc);
        let mut sie = Vec::with_capacity(n_mc);
        let (mut s00, mut s10, mut s11) = (0.0, 0.0, 0.0);
        for _ in 0..n_mc {
            let zr: f64 = rng.sample(StandardNormal);
            let zc: f64 = rng.sample(StandardNormal);
            let c_of = |a_star: f64| {
                let r = params.coef_r_given_a * a_star + params.noise_sd_r * zr;
                params.coef_c_given_r * r + params.c_shift(w) + params.noise_sd_c * zc
            };
            let (c0, c1) = (c_of(0.0), c_of(1.0));
            let p00 = sigmoid(params.outcome_lp(0.0, c0, w as f64));
            let p10 = sigmoid(params.outcome_lp(1.0, c0, w as f64));
            let p11 = sigmoid(params.outcome_lp(1.0, c1, w as f64));
            s00 += p00;
            s10 += p10;
            s11 += p11;
            sde.push(p10 - p00);
            sie.push(p11 - p10);
        }
        let n = n_mc as f64;
        let (psi_00, psi_10, psi_11) = (s00 / n, s10 / n, s11 / n);
        groups.push(GroupOracle {
            w,
            psi_00,
            psi_10,
            psi_11,
            sde: psi_10 - psi_00,
            sie: psi_11 - psi_10,
            sde_se: sd(&sde) / n.sqrt(),
            sie_se: sd(&sie) / n.sqrt(),
        });
    }
    let p1 = params.p_w1(0);
    Ok(OracleEffects {
        n_mc,
        sde_marginal: (1.0 - p1) * groups[0].sde + p1 * groups[1].sde,
        sie_marginal: (1.0 - p1) * groups[0].sie + p1 * groups[1].sie,
        p_w1_target: p1,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_w_probability_matches_simulation() {
        let p = StructuralParams::default();
        // E[clamp(N(0, 0.1))] = 0.1·φ(0)
        assert!((p.p_w1(0) - 0.1 * normal_pdf(0.0, 0.0, 1.0)).abs() < 1e-12);
        let t = generate(&p, 1, 200_000, 3).unwrap();
        let frac = t.iter().filter(|r| r.s == 0 && r.w == 1).count() as f64 / 200_000.0;
        assert!((frac - p.p_w1(0)).abs() < 0.002);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = StructuralParams::default();
        assert_eq!(generate(&p, 50, 50, 9).unwrap(), generate(&p, 50, 50, 9).unwrap());
        assert_ne!(generate(&p, 50, 50, 9).unwrap(), generate(&p, 50, 50, 10).unwrap());
    }

    #[test]
    fn zero_sizes_and_bad_params_are_rejected() {
        let p = StructuralParams::default();
        assert!(matches!(generate(&p, 0, 5, 1), Err(Error::Config(_))));
        let bad = StructuralParams { coef_r_given_a: f64::NAN, ..p };
        assert!(matches!(generate(&bad, 5, 5, 1), Err(Error::Config(_))));
    }
}

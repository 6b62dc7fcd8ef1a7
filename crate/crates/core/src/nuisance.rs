//! Parametric nuisance models: logistic and linear-Gaussian regressions, and the
//! stochastic mediator intervention g* built from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_pdf, sd, sigmoid};
use crate::rng::{derive_seed, seeded, stratified_normals};
use crate::table::{Column, Observation, ObservationTable};

pub const DENSITY_FLOOR: f64 = 1e-300;
const SCORE_TOL: f64 = 1e-8;
const MAX_IRLS_ITER: usize = 100;
const SEPARATION_ETA: f64 = 35.0;

/// Rows usable for a model: all needed columns present.
fn design(
    rows: &[Observation],
    target: Column,
    predictors: &[Column],
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let mut used = Vec::new();
    let mut data = Vec::new();
    let mut y = Vec::new();
    'rows: for (i, row) in rows.iter().enumerate() {
        let Some(t) = target.value(row) else { continue };
        let start = data.len();
        data.push(1.0);
        for p in predictors {
            match p.value(row) {
                Some(v) => data.push(v),
                None => {
                    data.truncate(start);
                    continue 'rows;
                }
            }
        }
        y.push(t);
        used.push(i);
    }
    let k = predictors.len() + 1;
    let x = DMatrix::from_row_slice(used.len(), k, &data);
    (x, DVector::from_vec(y), used)
}

fn row_vector(row: &Observation, predictors: &[Column]) -> Option<Vec<f64>> {
    let mut x = Vec::with_capacity(predictors.len() + 1);
    x.push(1.0);
    for p in predictors {
        x.push(p.value(row)?);
    }
    Some(x)
}

fn check_rank(xtx: &DMatrix<f64>, what: &str) -> Result<()> {
    // Scale to unit diagonal so the check is insensitive to column units.
    let d: Vec<f64> = (0..xtx.nrows()).map(|i| xtx[(i, i)].max(0.0).sqrt()).collect();
    if d.contains(&0.0) {
        return Err(Error::SingularDesign(format!("{what}: constant-zero column")));
    }
    let scaled = DMatrix::from_fn(xtx.nrows(), xtx.ncols(), |i, j| xtx[(i, j)] / (d[i] * d[j]));
    let sv = scaled.singular_values();
    let max = sv.max();
    if sv.min() <= 1e-10 * max {
        return Err(Error::SingularDesign(format!("{what}: rank-deficient design")));
    }
    Ok(())
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularDesign(format!("{what}: matrix not positive definite")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub predictors: Vec<Column>,
    /// Intercept first, then one per predictor.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub deviance: f64,
    pub ridge: f64,
    pub n_used: usize,
    /// Inverse of the penalized information matrix at the solution (row-major).
    #[serde(skip)]
    pub information_inv: Vec<f64>,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    /// `x` excludes the intercept.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }

    pub fn predict_row(&self, row: &Observation) -> Option<f64> {
        row_vector(row, &self.predictors).map(|x| sigmoid(self.linear_predictor(&x)))
    }

    fn information_inv(&self) -> DMatrix<f64> {
        let k = self.coefficients.len();
        DMatrix::from_row_slice(k, k, &self.information_inv)
    }
}

/// Maximum-likelihood logistic regression by iteratively reweighted least squares.
/// `ridge` penalizes all coefficients except the intercept.
pub fn fit_logistic(
    rows: &[Observation],
    outcome: Column,
    predictors: &[Column],
    ridge: f64,
) -> Result<LogisticFit> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge = {ridge} must be finite and >= 0")));
    }
    let (x, y, _) = design(rows, outcome, predictors);
    let context = format!("{} on {} rows", outcome.name(), y.len());
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("logistic outcome {} is not binary", outcome.name())));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::NonConvergence { iterations: 0, context: format!("{context}: outcome has a single value (separation)") });
    }
    let n = y.len();
    let k = x.ncols();
    if ridge == 0.0 {
        check_rank(&(x.transpose() * &x), &context)?;
    }
    let mut penalty = DMatrix::<f64>::identity(k, k) * ridge;
    penalty[(0, 0)] = 0.0;

    let mut beta = DVector::<f64>::zeros(k);
    let ybar = ones as f64 / n as f64;
    beta[0] = (ybar / (1.0 - ybar)).ln();

    let eval = |beta: &DVector<f64>| -> (DVector<f64>, f64) {
        let eta = &x * beta;
        let mut dev = 0.0;
        for (e, yi) in eta.iter().zip(y.iter()) {
            // −2 log-likelihood, computed stably
            let ll = if *yi == 1.0 { -softplus(-e) } else { -softplus(*e) };
            dev -= 2.0 * ll;
        }
        dev += (beta.transpose() * &penalty * beta)[(0, 0)];
        (eta, dev)
    };

    let (mut eta, mut dev) = eval(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::<f64>::zeros(k, k);
    for it in 0..=MAX_IRLS_ITER {
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&p).map(|(yi, pi)| yi - pi));
        let grad = x.transpose() * resid - &penalty * &beta;
        let mut xw = x.clone();
        for (i, pi) in p.iter().enumerate() {
            let wt = pi * (1.0 - pi);
            xw.row_mut(i).scale_mut(wt);
        }
        info = x.transpose() * xw + &penalty;
        iterations = it;
        if grad.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        if it == MAX_IRLS_ITER {
            break;
        }
        let Some(chol) = info.clone().cholesky() else {
            return Err(Error::NonConvergence { iterations: it, context: format!("{context}: information matrix singular") });
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let (e2, d2) = eval(&cand);
            if d2 <= dev + 1e-12 * dev.abs().max(1.0) || t < 1e-8 {
                beta = cand;
                eta = e2;
                dev = d2;
                break;
            }
            t *= 0.5;
        }
    }
    if ridge == 0.0 && (!converged || eta.iter().any(|e| e.abs() > SEPARATION_ETA)) {
        return Err(Error::NonConvergence { iterations, context: format!("{context}: perfect or quasi separation") });
    }
    let info_inv = invert_spd(&info, &context)?;
    Ok(LogisticFit {
        predictors: predictors.to_vec(),
        coefficients: beta.iter().copied().collect(),
        converged,
        n_iterations: iterations,
        deviance: dev,
        ridge,
        n_used: n,
        information_inv: info_inv.transpose().iter().copied().collect(),
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConditionalFit {
    pub predictors: Vec<Column>,
    pub coefficients: Vec<f64>,
    pub residual_sd: f64,
    pub n_used: usize,
    pub rss: f64,
    /// (X'X)⁻¹, row-major.
    #[serde(skip)]
    pub xtx_inv: Vec<f64>,
}

impl GaussianConditionalFit {
    pub fn is_degenerate(&self) -> bool {
        !(self.residual_sd > 0.0)
    }

    /// `x` excludes the intercept.
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn density(&self, value: f64, x: &[f64]) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::DegenerateDensity(format!(
                "residual sd is zero in model with predictors {:?}",
                self.predictors
            )));
        }
        Ok(normal_pdf(value, self.mean(x), self.residual_sd))
    }

    fn xtx_inv(&self) -> DMatrix<f64> {
        let k = self.coefficients.len();
        DMatrix::from_row_slice(k, k, &self.xtx_inv)
    }
}

/// Ordinary least squares with residual SD √(RSS/(n − p − 1)).
pub fn fit_gaussian_conditional(
    rows: &[Observation],
    target: Column,
    predictors: &[Column],
) -> Result<GaussianConditionalFit> {
    let (x, y, _) = design(rows, target, predictors);
    let n = y.len();
    let p = predictors.len();
    let context = format!("{} on {:?} ({} rows)", target.name(), predictors, n);
    if n < p + 2 {
        return Err(Error::EmptyStratum(format!("{context}: need at least {} rows", p + 2)));
    }
    let xtx = x.transpose() * &x;
    check_rank(&xtx, &context)?;
    let xtx_inv = invert_spd(&xtx, &context)?;
    let beta = &xtx_inv * (x.transpose() * &y);
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let scale = sd(y.as_slice()).max(1.0);
    let mut residual_sd = (rss / (n - p - 1) as f64).sqrt();
    if residual_sd <= 1e-10 * scale {
        residual_sd = 0.0;
    }
    Ok(GaussianConditionalFit {
        predictors: predictors.to_vec(),
        coefficients: beta.iter().copied().collect(),
        residual_sd,
        n_used: n,
        rss,
        xtx_inv: xtx_inv.transpose().iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediatorType {
    #[default]
    Continuous,
    Binary,
}

/// Form of the density ratio in the targeting weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightForm {
    /// g*(C) / p(C | A=a, W, S=1), the intermediate integrated out.
    #[default]
    Marginal,
    /// g*(C)·P_R(R|a,W,S=0) / (P_C(C|a,R,W,S=1)·P_R(R|a,W,S=1)).
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceOptions {
    pub ridge: f64,
    pub truncation_quantile: f64,
    pub n_mc: usize,
    pub mediator_type: MediatorType,
    pub weight_form: WeightForm,
    pub mc_seed: u64,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            truncation_quantile: 0.999,
            n_mc: 1000,
            mediator_type: MediatorType::Continuous,
            weight_form: WeightForm::Marginal,
            mc_seed: 0x5eed,
        }
    }
}

impl NuisanceOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge = {} must be >= 0", self.ridge)));
        }
        if !(self.truncation_quantile > 0.0 && self.truncation_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "truncation_quantile = {} outside (0, 1]",
                self.truncation_quantile
            )));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MediatorModel {
    Gaussian(GaussianConditionalFit),
    Binary(LogisticFit),
}

impl MediatorModel {
    pub fn coefficients(&self) -> &[f64] {
        match self {
            MediatorModel::Gaussian(g) => &g.coefficients,
            MediatorModel::Binary(l) => &l.coefficients,
        }
    }

    /// P(C = c | A = a, R = r) (density or mass).
    pub fn conditional(&self, c: f64, a: f64, r: f64) -> Result<f64> {
        match self {
            MediatorModel::Gaussian(g) => g.density(c, &[a, r]),
            MediatorModel::Binary(l) => {
                let p = l.predict(&[a, r]);
                Ok(if c == 1.0 { p } else { 1.0 - p })
            }
        }
    }
}

/// Common standard-normal draws used by every g* of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardDraws {
    pub z_r: Vec<f64>,
    pub z_c: Vec<f64>,
}

impl StandardDraws {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let z_r = stratified_normals(n, &mut rng);
        let z_c = stratified_normals(n, &mut rng);
        Self { z_r, z_c }
    }
}

/// Mediator predictors: C ~ 1 + A + R within each (S, W) stratum.
pub const MEDIATOR_PREDICTORS: [Column; 2] = [Column::A, Column::R];
/// Intermediate predictors: R ~ 1 + A + W within each environment.
pub const INTERMEDIATE_PREDICTORS: [Column; 2] = [Column::A, Column::W];
/// Outcome predictors: Y ~ 1 + A + C + W on source rows.
pub const OUTCOME_PREDICTORS: [Column; 3] = [Column::A, Column::C, Column::W];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub options: NuisanceOptions,
    pub outcome_model: LogisticFit,
    /// Indexed `[s][w]`; `None` when the stratum has no usable mediator rows.
    pub mediator_models: [[Option<MediatorModel>; 2]; 2],
    /// Indexed by `s`.
    pub intermediate_models: [GaussianConditionalFit; 2],
    /// P(A = 1 | S = 1).
    pub treatment_marginal: f64,
    /// P(S = 0).
    pub selection_marginal: f64,
    pub draws: StandardDraws,
}

/// Anything that turns a table into a [`NuisanceFit`]; the bootstrap refits through this.
pub trait NuisanceFitter: Sync {
    fn fit(&self, table: &ObservationTable) -> Result<NuisanceFit>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParametricFitter {
    pub options: NuisanceOptions,
}

impl NuisanceFitter for ParametricFitter {
    fn fit(&self, table: &ObservationTable) -> Result<NuisanceFit> {
        fit_nuisance(table, &self.options)
    }
}

fn subset(table: &ObservationTable, pred: impl Fn(&Observation) -> bool) -> Vec<Observation> {
    table.iter().filter(|r| pred(r)).copied().collect()
}

pub fn fit_nuisance(table: &ObservationTable, options: &NuisanceOptions) -> Result<NuisanceFit> {
    options.validate()?;
    let n = table.len();
    let n_source = table.count(Some(1), None);
    if n_source == 0 || n_source == n {
        return Err(Error::Positivity(if n_source == 0 { "P_S(S=1)".into() } else { "P_S(S=0)".into() }));
    }
    let source = subset(table, |r| r.s == 1);
    let outcome_model = fit_logistic(&source, Column::Y, &OUTCOME_PREDICTORS, options.ridge)?;

    if options.mediator_type == MediatorType::Binary
        && table.iter().any(|r| r.c_obs.is_some_and(|c| c != 0.0 && c != 1.0))
    {
        return Err(Error::Data("mediator declared binary but C takes values other than 0/1".into()));
    }
    let mut mediator_models: [[Option<MediatorModel>; 2]; 2] = Default::default();
    for s in 0..2u8 {
        for w in 0..2u8 {
            let rows = subset(table, |r| r.s == s && r.w == w && r.c_obs.is_some());
            if rows.is_empty() {
                continue;
            }
            let model = match options.mediator_type {
                MediatorType::Continuous => {
                    MediatorModel::Gaussian(fit_gaussian_conditional(&rows, Column::C, &MEDIATOR_PREDICTORS)?)
                }
                MediatorType::Binary => {
                    MediatorModel::Binary(fit_logistic(&rows, Column::C, &MEDIATOR_PREDICTORS, options.ridge)?)
                }
            };
            mediator_models[s as usize][w as usize] = Some(model);
        }
    }
    let intermediate_models = [
        fit_gaussian_conditional(&subset(table, |r| r.s == 0), Column::R, &INTERMEDIATE_PREDICTORS)?,
        fit_gaussian_conditional(&source, Column::R, &INTERMEDIATE_PREDICTORS)?,
    ];
    let treatment_marginal = source.iter().filter(|r| r.a == 1).count() as f64 / n_source as f64;
    let selection_marginal = (n - n_source) as f64 / n as f64;
    Ok(NuisanceFit {
        options: *options,
        outcome_model,
        mediator_models,
        intermediate_models,
        treatment_marginal,
        selection_marginal,
        draws: StandardDraws::new(options.n_mc, derive_seed(options.mc_seed, 0)),
    })
}

impl NuisanceFit {
    pub fn mediator_model(&self, s: u8, w: u8) -> Result<&MediatorModel> {
        self.mediator_models[s as usize][w as usize]
            .as_ref()
            .ok_or_else(|| Error::EmptyStratum(format!("no complete mediator rows with S={s}, W={w}")))
    }

    /// P_A(a | S = 1).
    pub fn p_treatment(&self, a: u8) -> f64 {
        if a == 1 {
            self.treatment_marginal
        } else {
            1.0 - self.treatment_marginal
        }
    }

    /// Outcome probability Q̄_Y(a, c, w) before targeting.
    pub fn outcome_lp(&self, a: f64, c: f64, w: f64) -> f64 {
        self.outcome_model.linear_predictor(&[1.0, a, c, w])
    }

    /// P(R = r | A = a, W = w, S = s).
    pub fn intermediate_density(&self, r: f64, a: u8, w: u8, s: u8) -> Result<f64> {
        self.intermediate_models[s as usize].density(r, &[a as f64, w as f64])
    }
}

/// g*_{C | a*, s, w}: the mediator law under treatment a*, mixed over the intermediate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MediatorIntervention {
    /// Exact Gaussian mixture N(mean, sd) with equally weighted draws for integration.
    Gaussian { mean: f64, sd: f64, draws: Vec<f64> },
    /// Two-point law on {0, 1}.
    Binary { p1: f64 },
}

impl MediatorIntervention {
    pub fn density(&self, c: f64) -> f64 {
        match self {
            MediatorIntervention::Gaussian { mean, sd, .. } => normal_pdf(c, *mean, *sd),
            MediatorIntervention::Binary { p1 } => {
                if c == 1.0 {
                    *p1
                } else if c == 0.0 {
                    1.0 - p1
                } else {
                    0.0
                }
            }
        }
    }

    /// Support points with their probabilities.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            MediatorIntervention::Gaussian { draws, .. } => {
                let w = 1.0 / draws.len() as f64;
                draws.iter().map(|&c| (c, w)).collect()
            }
            MediatorIntervention::Binary { p1 } => vec![(0.0, 1.0 - p1), (1.0, *p1)],
        }
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            MediatorIntervention::Gaussian { draws, .. } => {
                draws.iter().map(|&c| f(c)).sum::<f64>() / draws.len() as f64
            }
            MediatorIntervention::Binary { p1 } => (1.0 - p1) * f(0.0) + p1 * f(1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MediatorIntervention::Gaussian { draws, .. } => crate::math::mean(draws),
            MediatorIntervention::Binary { p1 } => *p1,
        }
    }
}

pub fn mediator_intervention_density(
    fit: &NuisanceFit,
    a_star: u8,
    s: u8,
    w: u8,
) -> Result<MediatorIntervention> {
    let inter = &fit.intermediate_models[s as usize];
    if inter.is_degenerate() {
        return Err(Error::DegenerateDensity(format!("intermediate model for S={s} has zero residual sd")));
    }
    let a = a_star as f64;
    let mu_r = inter.mean(&[a, w as f64]);
    let sd_r = inter.residual_sd;
    let draws = &fit.draws;
    match fit.mediator_model(s, w)? {
        MediatorModel::Gaussian(med) => {
            if med.is_degenerate() {
                return Err(Error::DegenerateDensity(format!("mediator model for S={s}, W={w} has zero residual sd")));
            }
            let b = &med.coefficients;
            let base = b[0] + b[1] * a;
            let mean = base + b[2] * mu_r;
            let sd = (med.residual_sd.powi(2) + (b[2] * sd_r).powi(2)).sqrt();
            let c = draws
                .z_r
                .iter()
                .zip(&draws.z_c)
                .map(|(zr, zc)| base + b[2] * (mu_r + sd_r * zr) + med.residual_sd * zc)
                .collect();
            Ok(MediatorIntervention::Gaussian { mean, sd, draws: c })
        }
        MediatorModel::Binary(med) => {
            let p1 = draws.z_r.iter().map(|zr| med.predict(&[a, mu_r + sd_r * zr])).sum::<f64>()
                / draws.z_r.len() as f64;
            Ok(MediatorIntervention::Binary { p1 })
        }
    }
}

/// Influence functions of the linear-Gaussian parameters (coefficients, then residual sd),
/// scaled to the full table of `n_total` rows. Rows outside the fitting set contribute zero.
pub fn gaussian_influence(fit: &GaussianConditionalFit, x: &[f64], y: f64, n_total: usize) -> Vec<f64> {
    let k = fit.coefficients.len();
    let inv = fit.xtx_inv();
    let e = y - fit.linear(x);
    let xv = DVector::from_column_slice(x);
    let coef = inv * xv * (e * n_total as f64);
    let n_used = fit.n_used as f64;
    let sigma2_if = (n_total as f64 / n_used) * (e * e - fit.rss / n_used);
    let sigma = fit.residual_sd;
    let mut out = Vec::with_capacity(k + 1);
    out.extend(coef.iter());
    out.push(if sigma > 0.0 { sigma2_if / (2.0 * sigma) } else { 0.0 });
    out
}

/// Influence functions of logistic coefficients from the penalized score.
pub fn logistic_influence(fit: &LogisticFit, x: &[f64], y: f64, n_total: usize) -> Vec<f64> {
    let inv = fit.information_inv();
    let p = sigmoid(fit.linear_predictor(x));
    let mut score = DVector::from_column_slice(x) * (y - p);
    for j in 1..score.len() {
        score[j] -= fit.ridge * fit.coefficients[j] / fit.n_used as f64;
    }
    (inv * score * n_total as f64).iter().copied().collect()
}

impl GaussianConditionalFit {
    /// Linear predictor for a full design row (intercept included).
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

/// Design row (with intercept) of a row for the given predictors.
pub fn design_row(row: &Observation, predictors: &[Column]) -> Option<Vec<f64>> {
    row_vector(row, predictors)
}

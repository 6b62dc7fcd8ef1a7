//! Targeted estimation of transported stochastic direct and indirect effects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, quantile, sd, sigmoid};
use crate::nuisance::{
    design_row, gaussian_influence, logistic_influence, mediator_intervention_density,
    MediatorIntervention, MediatorModel, NuisanceFit, WeightForm, DENSITY_FLOOR,
    INTERMEDIATE_PREDICTORS, MEDIATOR_PREDICTORS,
};
use crate::table::{Observation, ObservationTable};

const SCORE_TOL: f64 = 1e-8;
const MAX_FLUCTUATION_ITER: usize = 200;
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingWeights {
    /// One entry per table row; zero outside the indicator.
    pub h: Vec<f64>,
    pub n_nonzero: usize,
    pub n_truncated: usize,
    pub threshold: f64,
    /// P_A(a | S=1)·P_S(S=0), the normalizing constant of `h`.
    pub normalizer: f64,
}

fn floor(v: f64) -> f64 {
    if v.is_nan() {
        DENSITY_FLOOR
    } else {
        v.max(DENSITY_FLOOR)
    }
}

fn in_group(row: &Observation, group: Option<u8>) -> bool {
    group.map_or(true, |w| row.w == w)
}

/// Targeting weights H for the (a, a*) intervention, restricted to W = `group` when set.
pub fn compute_targeting_weights(
    fit: &NuisanceFit,
    table: &ObservationTable,
    a: u8,
    a_star: u8,
    group: Option<u8>,
) -> Result<TargetingWeights> {
    let p_a = fit.p_treatment(a);
    if p_a <= 0.0 {
        return Err(Error::Positivity(format!("P_A({a} | S=1)")));
    }
    if fit.selection_marginal <= 0.0 {
        return Err(Error::Positivity("P_S(S=0)".into()));
    }
    let normalizer = p_a * fit.selection_marginal;
    let mut g_star: [Option<MediatorIntervention>; 2] = Default::default();
    let mut g_source: [Option<MediatorIntervention>; 2] = Default::default();
    let mut h = vec![0.0; table.len()];
    for (i, row) in table.iter().enumerate() {
        if row.s != 1 || row.a != a || !in_group(row, group) {
            continue;
        }
        let Some(c) = row.c_obs else { continue };
        let w = row.w as usize;
        if g_star[w].is_none() {
            g_star[w] = Some(mediator_intervention_density(fit, a_star, 0, row.w)?);
        }
        let num = floor(g_star[w].as_ref().unwrap().density(c));
        let ratio = match fit.options.weight_form {
            WeightForm::Marginal => {
                if g_source[w].is_none() {
                    g_source[w] = Some(mediator_intervention_density(fit, a, 1, row.w)?);
                }
                num / floor(g_source[w].as_ref().unwrap().density(c))
            }
            WeightForm::Joint => {
                let pr_target = floor(fit.intermediate_density(row.r, a, row.w, 0)?);
                let pr_source = floor(fit.intermediate_density(row.r, a, row.w, 1)?);
                let pc = floor(fit.mediator_model(1, row.w)?.conditional(c, a as f64, row.r)?);
                num * pr_target / (pc * pr_source)
            }
        };
        h[i] = ratio / normalizer;
    }
    let nonzero: Vec<f64> = h.iter().copied().filter(|&v| v > 0.0).collect();
    let mut threshold = f64::INFINITY;
    let mut n_truncated = 0;
    if !nonzero.is_empty() && fit.options.truncation_quantile < 1.0 {
        threshold = quantile(&nonzero, fit.options.truncation_quantile);
        for v in h.iter_mut() {
            if *v > threshold {
                *v = threshold;
                n_truncated += 1;
            }
        }
    }
    Ok(TargetingWeights { h, n_nonzero: nonzero.len(), n_truncated, threshold, normalizer })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetedOutcome {
    pub epsilon: f64,
    /// Σ H·(Y − Q̄*_Y) at the solution.
    pub score: f64,
    pub iterations: usize,
}

impl TargetedOutcome {
    /// Q̄*_Y(a, c, w) = σ(logit Q̄⁰_Y + ε).
    pub fn predict(&self, fit: &NuisanceFit, a: f64, c: f64, w: f64) -> f64 {
        sigmoid(fit.outcome_lp(a, c, w) + self.epsilon)
    }
}

/// Solves Σ hᵢ (yᵢ − σ(oᵢ + ε)) = 0 for ε by safeguarded Newton.
pub fn solve_fluctuation(offsets: &[f64], y: &[f64], h: &[f64]) -> Result<TargetedOutcome> {
    if h.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Targeting("weights must be nonnegative".into()));
    }
    if !h.iter().any(|&v| v > 0.0) {
        return Err(Error::Targeting("all targeting weights are zero".into()));
    }
    let score = |e: f64| -> (f64, f64) {
        let (mut s, mut d) = (0.0, 0.0);
        for ((o, yi), hi) in offsets.iter().zip(y).zip(h) {
            if *hi > 0.0 {
                let p = sigmoid(o + e);
                s += hi * (yi - p);
                d += hi * p * (1.0 - p);
            }
        }
        (s, d)
    };
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut e = 0.0;
    for it in 0..MAX_FLUCTUATION_ITER {
        let (s, d) = score(e);
        if s.abs() < SCORE_TOL {
            return Ok(TargetedOutcome { epsilon: e, score: s, iterations: it });
        }
        // Score is decreasing in ε.
        if s > 0.0 {
            lo = e;
        } else {
            hi = e;
        }
        let mut next = if d > 0.0 { e + s / d } else { f64::NAN };
        if !(next.is_finite() && next > lo && next < hi) {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + (lo.abs() + 1.0),
                _ => hi - (hi.abs() + 1.0),
            };
        }
        if next.abs() > 1e6 || (hi - lo) < 1e-15 * (1.0 + e.abs()) && it > 0 {
            break;
        }
        e = next;
    }
    let (s, _) = score(e);
    if s.abs() < SCORE_TOL {
        return Ok(TargetedOutcome { epsilon: e, score: s, iterations: MAX_FLUCTUATION_ITER });
    }
    Err(Error::Targeting(format!("fluctuation score not solved (|score| = {:.3e})", s.abs())))
}

/// Offset-logistic fluctuation of the initial outcome fit with weights `h`.
pub fn target_outcome_model(fit: &NuisanceFit, table: &ObservationTable, h: &[f64]) -> Result<TargetedOutcome> {
    if h.len() != table.len() {
        return Err(Error::Targeting("weight vector length differs from table".into()));
    }
    let mut offsets = Vec::new();
    let mut ys = Vec::new();
    let mut hs = Vec::new();
    for (row, &hi) in table.iter().zip(h) {
        if hi == 0.0 {
            continue;
        }
        let Some(c) = row.c_obs else {
            return Err(Error::Targeting("positive weight on a row with missing mediator".into()));
        };
        offsets.push(fit.outcome_lp(row.a as f64, c, row.w as f64));
        ys.push(row.y as f64);
        hs.push(hi);
    }
    solve_fluctuation(&offsets, &ys, &hs)
}

/// Q̄*_C for each row: the targeted outcome at A = a averaged over g*.
pub fn marginalize(
    fit: &NuisanceFit,
    targeted: &TargetedOutcome,
    g_star: &MediatorIntervention,
    rows: &[Observation],
    a: u8,
) -> Vec<f64> {
    let mut memo: [Option<f64>; 2] = [None, None];
    rows.iter()
        .map(|row| {
            *memo[row.w as usize].get_or_insert_with(|| {
                g_star.expectation(|c| targeted.predict(fit, a as f64, c, row.w as f64))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetingDiagnostics {
    pub group_w: u8,
    pub n_weighted: usize,
    pub n_truncated: usize,
    pub epsilon: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub a: u8,
    pub a_star: u8,
    pub group_w: Option<u8>,
    pub psi: f64,
    #[serde(skip)]
    pub eic_values: Vec<f64>,
    pub se: f64,
    pub targeting: Vec<TargetingDiagnostics>,
}

impl PsiEstimate {
    pub fn mean_eic(&self) -> f64 {
        mean(&self.eic_values)
    }
}

/// Targeted fit of one (a, a*, w) cell. `eic` is empty unless requested.
#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub psi: f64,
    pub targeted: TargetedOutcome,
    pub g_star: MediatorIntervention,
    pub eic: Vec<f64>,
    pub diagnostics: TargetingDiagnostics,
}

pub(crate) fn fit_cell(
    fit: &NuisanceFit,
    table: &ObservationTable,
    a: u8,
    a_star: u8,
    w: u8,
    with_eic: bool,
) -> Result<Cell> {
    let target_rows: Vec<Observation> = table.iter().filter(|r| r.s == 0 && r.w == w).copied().collect();
    if target_rows.is_empty() {
        return Err(Error::EmptyStratum(format!("no target rows with W={w}")));
    }
    let g_star = mediator_intervention_density(fit, a_star, 0, w)?;
    let weights = compute_targeting_weights(fit, table, a, a_star, Some(w))?;
    let targeted = target_outcome_model(fit, table, &weights.h)?;
    let qc = marginalize(fit, &targeted, &g_star, &target_rows, a);
    let psi = mean(&qc);
    let diagnostics = TargetingDiagnostics {
        group_w: w,
        n_weighted: weights.n_nonzero,
        n_truncated: weights.n_truncated,
        epsilon: targeted.epsilon,
        score: targeted.score,
    };
    let eic = if with_eic {
        cell_eic(fit, table, a, a_star, w, &weights, &targeted, &g_star, psi, &qc)?
    } else {
        Vec::new()
    };
    Ok(Cell { psi, targeted, g_star, eic, diagnostics })
}

#[allow(clippy::too_many_arguments)]
fn cell_eic(
    fit: &NuisanceFit,
    table: &ObservationTable,
    a: u8,
    a_star: u8,
    w: u8,
    weights: &TargetingWeights,
    targeted: &TargetedOutcome,
    g_star: &MediatorIntervention,
    psi: f64,
    qc: &[f64],
) -> Result<Vec<f64>> {
    let n = table.len();
    let nf = n as f64;
    let mut eic = vec![0.0; n];

    // D_Y: weighted residuals among source rows in the cell, with a mean-one density ratio.
    let weighted: Vec<usize> = (0..n).filter(|&i| weights.h[i] > 0.0).collect();
    let h_bar = weighted.iter().map(|&i| weights.h[i]).sum::<f64>() / weighted.len() as f64;
    let pi_cell = weighted.len() as f64 / nf;
    for &i in &weighted {
        let row = &table.rows()[i];
        let q = targeted.predict(fit, a as f64, row.c_obs.unwrap(), w as f64);
        eic[i] += weights.h[i] / h_bar * (row.y as f64 - q) / pi_cell;
    }

    // D_R: target rows of the group.
    let pi_target = qc.len() as f64 / nf;
    let mut k = 0;
    for (i, row) in table.iter().enumerate() {
        if row.s == 0 && row.w == w {
            eic[i] += (qc[k] - psi) / pi_target;
            k += 1;
        }
    }

    // D_g: first-order effect of estimating g* in the target environment.
    let (grad_med, grad_inter) = gstar_gradient(fit, targeted, g_star, a, a_star, w)?;
    let med = fit.mediator_model(0, w)?;
    let inter = &fit.intermediate_models[0];
    for (i, row) in table.iter().enumerate() {
        if row.s != 0 {
            continue;
        }
        let xi = design_row(row, &INTERMEDIATE_PREDICTORS).unwrap();
        let inf = gaussian_influence(inter, &xi, row.r, n);
        eic[i] += dot(&grad_inter, &inf);
        if row.w == w {
            if let Some(c) = row.c_obs {
                let xm = design_row(row, &MEDIATOR_PREDICTORS).unwrap();
                let inf = match med {
                    MediatorModel::Gaussian(g) => gaussian_influence(g, &xm, c, n),
                    MediatorModel::Binary(l) => logistic_influence(l, &xm, c, n),
                };
                eic[i] += dot(&grad_med, &inf);
            }
        }
    }
    Ok(eic)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ∂ψ/∂θ for the target mediator model (coefficients then σ_C for the Gaussian case) and the
/// target intermediate model (coefficients then σ_R).
fn gstar_gradient(
    fit: &NuisanceFit,
    targeted: &TargetedOutcome,
    g_star: &MediatorIntervention,
    a: u8,
    a_star: u8,
    w: u8,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let inter = &fit.intermediate_models[0];
    let mu_r = inter.mean(&[a_star as f64, w as f64]);
    let sd_r = inter.residual_sd;
    let z_r = &fit.draws.z_r;
    let z_c = &fit.draws.z_c;
    let m = z_r.len() as f64;
    let ast = a_star as f64;
    let beta_c = fit.outcome_model.coefficients[2];
    match (fit.mediator_model(0, w)?, g_star) {
        (MediatorModel::Gaussian(med), MediatorIntervention::Gaussian { draws, .. }) => {
            let b_r = med.coefficients[2];
            let mut gm = vec![0.0; 4];
            let mut gi = vec![0.0; 4];
            for j in 0..draws.len() {
                let q = targeted.predict(fit, a as f64, draws[j], w as f64);
                let slope = q * (1.0 - q) * beta_c / m;
                let r = mu_r + sd_r * z_r[j];
                gm[0] += slope;
                gm[1] += slope * ast;
                gm[2] += slope * r;
                gm[3] += slope * z_c[j];
                gi[0] += slope * b_r;
                gi[1] += slope * b_r * ast;
                gi[2] += slope * b_r * w as f64;
                gi[3] += slope * b_r * z_r[j];
            }
            Ok((gm, gi))
        }
        (MediatorModel::Binary(med), MediatorIntervention::Binary { .. }) => {
            let dq = targeted.predict(fit, a as f64, 1.0, w as f64) - targeted.predict(fit, a as f64, 0.0, w as f64);
            let b_r = med.coefficients[2];
            let mut gm = vec![0.0; 3];
            let mut gi = vec![0.0; 4];
            for &z in z_r {
                let r = mu_r + sd_r * z;
                let p = med.predict(&[ast, r]);
                let slope = dq * p * (1.0 - p) / m;
                gm[0] += slope;
                gm[1] += slope * ast;
                gm[2] += slope * r;
                gi[0] += slope * b_r;
                gi[1] += slope * b_r * ast;
                gi[2] += slope * b_r * w as f64;
                gi[3] += slope * b_r * z;
            }
            Ok((gm, gi))
        }
        _ => Err(Error::DegenerateDensity("mediator model and g* representation disagree".into())),
    }
}

fn se_of(eic: &[f64]) -> f64 {
    sd(eic) / (eic.len() as f64).sqrt()
}

/// Groups with at least one target row.
fn target_groups(table: &ObservationTable) -> Vec<u8> {
    (0..2u8).filter(|&w| table.count(Some(0), Some(w)) > 0).collect()
}

/// ψ(a, g*_{a*}) among target rows (W = `group` when set), with its EIC.
pub fn estimate_psi(
    fit: &NuisanceFit,
    table: &ObservationTable,
    a: u8,
    a_star: u8,
    group: Option<u8>,
) -> Result<PsiEstimate> {
    if let Some(w) = group {
        let cell = fit_cell(fit, table, a, a_star, w, true)?;
        return Ok(PsiEstimate {
            a,
            a_star,
            group_w: group,
            psi: cell.psi,
            se: se_of(&cell.eic),
            eic_values: cell.eic,
            targeting: vec![cell.diagnostics],
        });
    }
    let groups = target_groups(table);
    if groups.is_empty() {
        return Err(Error::EmptyStratum("no target rows".into()));
    }
    let n = table.len();
    let n_target = table.count(Some(0), None) as f64;
    let cells = groups
        .iter()
        .map(|&w| fit_cell(fit, table, a, a_star, w, true))
        .collect::<Result<Vec<_>>>()?;
    let shares: Vec<f64> = groups.iter().map(|&w| table.count(Some(0), Some(w)) as f64 / n_target).collect();
    let psi: f64 = cells.iter().zip(&shares).map(|(c, s)| c.psi * s).sum();
    let mut eic = vec![0.0; n];
    for (cell, s) in cells.iter().zip(&shares) {
        for (e, v) in eic.iter_mut().zip(&cell.eic) {
            *e += s * v;
        }
    }
    let p_target = n_target / n as f64;
    for (i, row) in table.iter().enumerate() {
        if row.s == 0 {
            let k = groups.iter().position(|&w| w == row.w).unwrap();
            eic[i] += (cells[k].psi - psi) / p_target;
        }
    }
    Ok(PsiEstimate {
        a,
        a_star,
        group_w: None,
        psi,
        se: se_of(&eic),
        eic_values: eic,
        targeting: cells.iter().map(|c| c.diagnostics).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EffectKind {
    Sde,
    Sie,
}

/// Densities g*_{a*}(C) at the target complete-case rows of a group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightsUsed {
    pub row_ids: Vec<u64>,
    /// (a*, g*_{a*}(Cᵢ)) for each intervention arm of the contrast.
    pub arms: Vec<(u8, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub group_w: Option<u8>,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(skip)]
    pub eic_values: Vec<f64>,
    #[serde(skip)]
    pub weights_used: WeightsUsed,
}

fn contrast(kind: EffectKind, group: Option<u8>, hi: &PsiEstimate, lo: &PsiEstimate, weights_used: WeightsUsed) -> EffectEstimate {
    let eic: Vec<f64> = hi.eic_values.iter().zip(&lo.eic_values).map(|(x, y)| x - y).collect();
    let point = hi.psi - lo.psi;
    let se = se_of(&eic);
    EffectEstimate {
        kind,
        group_w: group,
        point,
        se,
        ci_low: point - Z_975 * se,
        ci_high: point + Z_975 * se,
        eic_values: eic,
        weights_used,
    }
}

fn weights_used(fit: &NuisanceFit, table: &ObservationTable, group: Option<u8>, arms: &[u8]) -> Result<WeightsUsed> {
    let rows: Vec<&Observation> = table
        .iter()
        .filter(|r| r.s == 0 && in_group(r, group) && r.c_obs.is_some())
        .collect();
    let mut out = WeightsUsed { row_ids: rows.iter().map(|r| r.id).collect(), arms: Vec::new() };
    for &a_star in arms {
        let mut g: [Option<MediatorIntervention>; 2] = Default::default();
        let mut vals = Vec::with_capacity(rows.len());
        for r in &rows {
            let w = r.w as usize;
            if g[w].is_none() {
                g[w] = Some(mediator_intervention_density(fit, a_star, 0, r.w)?);
            }
            vals.push(g[w].as_ref().unwrap().density(r.c_obs.unwrap()));
        }
        out.arms.push((a_star, vals));
    }
    Ok(out)
}

/// ψ(1, g₀) − ψ(0, g₀).
pub fn estimate_sde(fit: &NuisanceFit, table: &ObservationTable, group: Option<u8>) -> Result<EffectEstimate> {
    let hi = estimate_psi(fit, table, 1, 0, group)?;
    let lo = estimate_psi(fit, table, 0, 0, group)?;
    Ok(contrast(EffectKind::Sde, group, &hi, &lo, weights_used(fit, table, group, &[0])?))
}

/// ψ(1, g₁) − ψ(1, g₀).
pub fn estimate_sie(fit: &NuisanceFit, table: &ObservationTable, group: Option<u8>) -> Result<EffectEstimate> {
    let hi = estimate_psi(fit, table, 1, 1, group)?;
    let lo = estimate_psi(fit, table, 1, 0, group)?;
    Ok(contrast(EffectKind::Sie, group, &hi, &lo, weights_used(fit, table, group, &[1, 0])?))
}

/// The three ψ values behind SDE and SIE, sharing ψ(1, g₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffects {
    pub group_w: Option<u8>,
    pub psi_00: PsiEstimate,
    pub psi_10: PsiEstimate,
    pub psi_11: PsiEstimate,
    pub sde: EffectEstimate,
    pub sie: EffectEstimate,
}

pub fn estimate_effects(fit: &NuisanceFit, table: &ObservationTable, group: Option<u8>) -> Result<GroupEffects> {
    let psi_00 = estimate_psi(fit, table, 0, 0, group)?;
    let psi_10 = estimate_psi(fit, table, 1, 0, group)?;
    let psi_11 = estimate_psi(fit, table, 1, 1, group)?;
    let sde = contrast(EffectKind::Sde, group, &psi_10, &psi_00, weights_used(fit, table, group, &[0])?);
    let sie = contrast(EffectKind::Sie, group, &psi_11, &psi_10, weights_used(fit, table, group, &[1, 0])?);
    Ok(GroupEffects { group_w: group, psi_00, psi_10, psi_11, sde, sie })
}

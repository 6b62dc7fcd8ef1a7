//! Variance-based sensitivity analysis of the transported indirect effect to missing
//! mediator data: the σ(R²) weight family, bounded SIE*, bootstrap CI(α) and sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{apply_missingness, MissingnessSpec};
use crate::error::{Error, Result};
use crate::math::{mean, quantile, variance};
use crate::nuisance::{mediator_intervention_density, NuisanceFit, NuisanceFitter};
use crate::rng::{derive_seed, seeded};
use crate::table::{Observation, ObservationTable};
use crate::tmle::fit_cell;

pub const FAMILY_SIZE: usize = 21;
const MAX_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub r2_grid: Vec<f64>,
    /// Tan ratio bound, reported as a diagnostic.
    pub lambda: Option<f64>,
    pub alpha: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Apply R² also to groups without missing mediator rows.
    pub apply_to_complete_groups: bool,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            r2_grid: (0..=18).map(|k| k as f64 / 20.0).collect(),
            lambda: None,
            alpha: 0.05,
            n_bootstrap: 500,
            seed: 0,
            apply_to_complete_groups: false,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.r2_grid)?;
        if let Some(l) = self.lambda {
            if !(l >= 1.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda = {l} must be >= 1")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.n_bootstrap < 100 {
            return Err(Error::Config(format!("n_bootstrap = {} below 100", self.n_bootstrap)));
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("r2 grid is empty".into()));
    }
    for (i, &r) in grid.iter().enumerate() {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Domain(format!("r2 = {r} outside [0, 1)")));
        }
        if i > 0 && r <= grid[i - 1] {
            return Err(Error::Config("r2 grid must be strictly increasing".into()));
        }
    }
    Ok(())
}

/// The admissible weights around w̄ whose variance ratio is at most 1/(1 − R²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySet {
    pub base: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub r2: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub c: f64,
    pub weights: Vec<f64>,
    pub clipped: bool,
}

pub fn sensitivity_bounds(weights_observed: &[f64], r2: f64) -> Result<SensitivitySet> {
    if !(0.0..1.0).contains(&r2) {
        return Err(Error::Domain(format!("r2 = {r2} outside [0, 1)")));
    }
    if weights_observed.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::Domain("observed weights must be finite and nonnegative".into()));
    }
    let var = variance(weights_observed);
    if !(var > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(SensitivitySet {
        base: weights_observed.to_vec(),
        mean: mean(weights_observed),
        sd: var.sqrt(),
        r2,
        c_max: 1.0 / (1.0 - r2).sqrt(),
    })
}

impl SensitivitySet {
    /// `k` equally spaced scale factors on [1, c_max].
    pub fn scale_factors(&self, k: usize) -> Vec<f64> {
        if self.r2 == 0.0 || k < 2 {
            return vec![1.0];
        }
        (0..k).map(|i| 1.0 + (self.c_max - 1.0) * i as f64 / (k - 1) as f64).collect()
    }

    /// mean + c·(w̄ − mean), clipped at 0 and rescaled to the mean of w̄.
    pub fn scale_member(&self, c: f64) -> Member {
        if c == 1.0 {
            return Member { c, weights: self.base.clone(), clipped: false };
        }
        let mut w: Vec<f64> = self.base.iter().map(|b| self.mean + c * (b - self.mean)).collect();
        let clipped = w.iter().any(|&v| v < 0.0);
        if clipped {
            for v in w.iter_mut() {
                *v = v.max(0.0);
            }
            let m = mean(&w);
            if m > 0.0 {
                let s = self.mean / m;
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
        }
        Member { c, weights: w, clipped }
    }

    /// w̄ + sign·sd(w̄)·√(c² − 1)·u for a unit-variance direction u orthogonal to w̄ and 1.
    /// The residual term is not clipped; `clipped` flags members with negative entries.
    pub fn directional_member(&self, c: f64, u: &[f64], sign: f64) -> Member {
        let k = sign * self.sd * (c * c - 1.0).max(0.0).sqrt();
        let w: Vec<f64> = self.base.iter().zip(u).map(|(b, ui)| b + k * ui).collect();
        let clipped = w.iter().any(|&v| v < 0.0);
        Member { c, weights: w, clipped }
    }

    pub fn variance_ratio(&self, weights: &[f64]) -> f64 {
        variance(weights) / (self.sd * self.sd)
    }
}

/// Component of `q` orthogonal to the constant and to `base`, scaled to unit variance.
pub fn orthogonal_direction(base: &[f64], q: &[f64]) -> Option<Vec<f64>> {
    let mb = mean(base);
    let mq = mean(q);
    let bc: Vec<f64> = base.iter().map(|v| v - mb).collect();
    let mut u: Vec<f64> = q.iter().map(|v| v - mq).collect();
    let bb: f64 = bc.iter().map(|v| v * v).sum();
    if bb > 0.0 {
        let ub: f64 = u.iter().zip(&bc).map(|(x, y)| x * y).sum();
        for (x, y) in u.iter_mut().zip(&bc) {
            *x -= ub / bb * y;
        }
    }
    let s = variance(&u).sqrt();
    let scale = q.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if !(s > 1e-10 * scale) {
        return None;
    }
    Some(u.iter().map(|v| v / s).collect())
}

/// Sensitivity ingredients of one intervention arm a* for the indirect effect.
#[derive(Debug, Clone)]
struct Arm {
    psi: f64,
    set: SensitivitySet,
    q: Vec<f64>,
    direction: Option<Vec<f64>>,
    base_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftRange {
    pub min: f64,
    pub max: f64,
    pub clipped: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl Arm {
    fn new(fit: &NuisanceFit, table: &ObservationTable, a_star: u8, w: u8) -> Result<Self> {
        let cell = fit_cell(fit, table, 1, a_star, w, false)?;
        let cc: Vec<f64> = table
            .iter()
            .filter(|r| r.s == 0 && r.w == w)
            .filter_map(|r| r.c_obs)
            .collect();
        if cc.len() < 2 {
            return Err(Error::EmptyStratum(format!("fewer than 2 complete target rows with W={w}")));
        }
        let base: Vec<f64> = cc.iter().map(|&c| cell.g_star.density(c)).collect();
        let q: Vec<f64> = cc.iter().map(|&c| cell.targeted.predict(fit, 1.0, c, w as f64)).collect();
        let set = sensitivity_bounds(&base, 0.0)?;
        let direction = orthogonal_direction(&base, &q);
        let base_total = base.iter().sum();
        Ok(Self { psi: cell.psi, set, q, direction, base_total })
    }

    fn shift(&self, weights: &[f64]) -> f64 {
        weights
            .iter()
            .zip(&self.set.base)
            .zip(&self.q)
            .map(|((w, b), q)| (w - b) * q)
            .sum::<f64>()
            / self.base_total
    }

    fn range(&self, r2: f64) -> ShiftRange {
        let mut out = ShiftRange { min: 0.0, max: 0.0, clipped: 0, ratio_min: 1.0, ratio_max: 1.0 };
        if r2 == 0.0 {
            return out;
        }
        let set = SensitivitySet { r2, c_max: 1.0 / (1.0 - r2).sqrt(), ..self.set.clone() };
        for c in set.scale_factors(FAMILY_SIZE).into_iter().skip(1) {
            let mut members = vec![set.scale_member(c)];
            if let Some(u) = &self.direction {
                members.push(set.directional_member(c, u, 1.0));
                members.push(set.directional_member(c, u, -1.0));
            }
            for m in members {
                let d = self.shift(&m.weights);
                out.min = out.min.min(d);
                out.max = out.max.max(d);
                out.clipped += m.clipped as usize;
                for (w, b) in m.weights.iter().zip(&set.base) {
                    if *b > 0.0 {
                        out.ratio_min = out.ratio_min.min(w / b);
                        out.ratio_max = out.ratio_max.max(w / b);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieBounds {
    pub group_w: u8,
    pub r2: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub clipped_members: usize,
    /// Extremes of w(c)/w̄ over the family, for the Tan-ratio diagnostic.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Both arms of the indirect effect in one group, reusable across R² values.
struct GroupSensitivity {
    w: u8,
    treated: Arm,
    control: Arm,
}

impl GroupSensitivity {
    fn new(fit: &NuisanceFit, table: &ObservationTable, w: u8) -> Result<Self> {
        Ok(Self { w, treated: Arm::new(fit, table, 1, w)?, control: Arm::new(fit, table, 0, w)? })
    }

    fn point(&self) -> f64 {
        self.treated.psi - self.control.psi
    }

    fn bounds(&self, r2: f64) -> SieBounds {
        let t = self.treated.range(r2);
        let c = self.control.range(r2);
        SieBounds {
            group_w: self.w,
            r2,
            point: self.point(),
            lower: (self.treated.psi + t.min) - (self.control.psi + c.max),
            upper: (self.treated.psi + t.max) - (self.control.psi + c.min),
            clipped_members: t.clipped + c.clipped,
            ratio_min: t.ratio_min.min(c.ratio_min),
            ratio_max: t.ratio_max.max(c.ratio_max),
        }
    }

    /// Bounds along an increasing grid, as a running envelope (σ(R²) sets are nested).
    fn curve(&self, r2s: &[f64]) -> Vec<SieBounds> {
        let mut out: Vec<SieBounds> = Vec::with_capacity(r2s.len());
        for &r2 in r2s {
            let mut b = self.bounds(r2);
            if let Some(prev) = out.last() {
                b.lower = b.lower.min(prev.lower);
                b.upper = b.upper.max(prev.upper);
            }
            out.push(b);
        }
        out
    }
}

/// inf/sup of SIE* over σ(R²) for group `w`. A group without missing mediator rows in the
/// target has w̄ = w*, so its sensitivity set is {w̄} whatever `r2`.
pub fn bounded_sie(fit: &NuisanceFit, table: &ObservationTable, group_w: u8, r2: f64) -> Result<SieBounds> {
    let applied = if group_has_missing(table, group_w) { r2 } else { 0.0 };
    let mut b = bounded_sie_applied(fit, table, group_w, r2, applied)?;
    b.r2 = r2;
    Ok(b)
}

/// Like [`bounded_sie`] but applies `r2` to the group unconditionally.
pub fn bounded_sie_unconditional(
    fit: &NuisanceFit,
    table: &ObservationTable,
    group_w: u8,
    r2: f64,
) -> Result<SieBounds> {
    bounded_sie_applied(fit, table, group_w, r2, r2)
}

fn bounded_sie_applied(
    fit: &NuisanceFit,
    table: &ObservationTable,
    group_w: u8,
    r2: f64,
    applied: f64,
) -> Result<SieBounds> {
    if !(0.0..1.0).contains(&r2) {
        return Err(Error::Domain(format!("r2 = {r2} outside [0, 1)")));
    }
    Ok(GroupSensitivity::new(fit, table, group_w)?.bounds(applied))
}

/// Resample rows with replacement within each (S, W) stratum.
pub fn stratified_resample(table: &ObservationTable, seed: u64) -> ObservationTable {
    use rand::Rng;
    let mut rng = seeded(seed);
    let mut strata: [Vec<usize>; 4] = Default::default();
    for (i, r) in table.iter().enumerate() {
        strata[(r.s * 2 + r.w) as usize].push(i);
    }
    let mut rows: Vec<Observation> = Vec::with_capacity(table.len());
    for idx in &strata {
        for _ in 0..idx.len() {
            rows.push(table.rows()[idx[rng.random_range(0..idx.len())]]);
        }
    }
    ObservationTable::new(rows).expect("resampled rows are valid")
}

/// Per replicate and group, the (lower, upper) curve along the grid.
type Replicate = Vec<Vec<(f64, f64)>>;

fn bootstrap(
    fitter: &dyn NuisanceFitter,
    table: &ObservationTable,
    groups: &[u8],
    grids: &[Vec<f64>],
    config: &SensitivityConfig,
) -> Result<(Vec<Replicate>, usize)> {
    let results: Vec<Result<(Replicate, usize)>> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut last = None;
            for attempt in 0..=MAX_RETRIES {
                let seed = derive_seed(derive_seed(config.seed, b as u64), attempt as u64);
                let boot = stratified_resample(table, seed);
                let rep = fitter.fit(&boot).and_then(|fit| {
                    groups
                        .iter()
                        .zip(grids)
                        .map(|(&w, grid)| {
                            let g = GroupSensitivity::new(&fit, &boot, w)?;
                            Ok(g.curve(grid).iter().map(|s| (s.lower, s.upper)).collect())
                        })
                        .collect::<Result<Replicate>>()
                });
                match rep {
                    Ok(r) => return Ok((r, attempt)),
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::Bootstrap(format!(
                "replicate {b} failed after {MAX_RETRIES} retries: {}",
                last.unwrap()
            )))
        })
        .collect();
    let mut reps = Vec::with_capacity(results.len());
    let mut retries = 0;
    for r in results {
        let (rep, k) = r?;
        retries += k;
        reps.push(rep);
    }
    Ok((reps, retries))
}

fn percentile_ci(reps: &[Replicate], g: usize, k: usize, alpha: f64) -> (f64, f64) {
    let lows: Vec<f64> = reps.iter().map(|r| r[g][k].0).collect();
    let highs: Vec<f64> = reps.iter().map(|r| r[g][k].1).collect();
    (quantile(&lows, alpha / 2.0), quantile(&highs, 1.0 - alpha / 2.0))
}

/// CI(α) = [q_{α/2}(replicate infima), q_{1−α/2}(replicate suprema)] by stratified bootstrap.
pub fn ci_alpha(
    fitter: &dyn NuisanceFitter,
    table: &ObservationTable,
    group_w: u8,
    r2: f64,
    config: &SensitivityConfig,
) -> Result<(f64, f64)> {
    let cfg = SensitivityConfig { r2_grid: vec![r2], ..config.clone() };
    cfg.validate()?;
    let applied = if cfg.apply_to_complete_groups || group_has_missing(table, group_w) { r2 } else { 0.0 };
    let (reps, _) = bootstrap(fitter, table, &[group_w], &[vec![applied]], &cfg)?;
    Ok(percentile_ci(&reps, 0, 0, cfg.alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub group_w: u8,
    /// Grid value as requested: an R² value or a missingness proportion.
    pub grid_value: f64,
    /// Sensitivity parameter reported for the point.
    pub r2: f64,
    /// R² actually applied to the group (0 for groups without missing mediators).
    pub r2_applied: f64,
    pub sie_point: f64,
    pub sie_lower: f64,
    pub sie_upper: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub contains_null: bool,
    pub clipped_members: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub points: Vec<CurvePoint>,
}

impl SensitivityCurve {
    pub fn group(&self, w: u8) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(move |p| p.group_w == w)
    }

    /// Count of adjacent grid pairs (per group) whose intervals are not nested.
    pub fn nesting_violations(&self) -> usize {
        let mut v = 0;
        for w in 0..2u8 {
            let pts: Vec<&CurvePoint> = self.group(w).collect();
            for p in pts.windows(2) {
                if p[1].sie_lower > p[0].sie_lower
                    || p[1].sie_upper < p[0].sie_upper
                    || p[1].ci_low > p[0].ci_low
                    || p[1].ci_high < p[0].ci_high
                {
                    v += 1;
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullCrossing {
    pub group_w: u8,
    pub r2_star: Option<f64>,
    pub grid_value_star: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanDiagnostic {
    pub lambda: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub within_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub n_bootstrap: usize,
    pub bootstrap_retries: usize,
    pub clipped_members: usize,
    pub tan: Option<TanDiagnostic>,
    /// Realized missing fraction per grid point (missingness sweeps only).
    pub realized_missing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub curve: SensitivityCurve,
    pub crossings: Vec<NullCrossing>,
    pub diagnostics: SweepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepGrid {
    R2(Vec<f64>),
    Missingness { specs: Vec<MissingnessSpec>, seed: u64 },
}

fn target_groups(table: &ObservationTable) -> Vec<u8> {
    (0..2u8).filter(|&w| table.count(Some(0), Some(w)) > 0).collect()
}

fn group_has_missing(table: &ObservationTable, w: u8) -> bool {
    table.iter().any(|r| r.s == 0 && r.w == w && r.c_obs.is_none())
}

/// Analysis of one table at the given R² values; returns curve points in (group, grid) order.
fn analyze_grid(
    fitter: &dyn NuisanceFitter,
    table: &ObservationTable,
    r2s: &[f64],
    grid_values: &[f64],
    config: &SensitivityConfig,
) -> Result<(Vec<CurvePoint>, usize, (f64, f64))> {
    let fit = fitter.fit(table)?;
    let groups = target_groups(table);
    let grids: Vec<Vec<f64>> = groups
        .iter()
        .map(|&w| {
            if config.apply_to_complete_groups || group_has_missing(table, w) {
                r2s.to_vec()
            } else {
                vec![0.0; r2s.len()]
            }
        })
        .collect();
    let mut curves = Vec::new();
    let mut ratios = (1.0f64, 1.0f64);
    for (&w, grid) in groups.iter().zip(&grids) {
        let c = GroupSensitivity::new(&fit, table, w)?.curve(grid);
        for b in &c {
            ratios = (ratios.0.min(b.ratio_min), ratios.1.max(b.ratio_max));
        }
        curves.push(c);
    }
    let (reps, retries) = bootstrap(fitter, table, &groups, &grids, config)?;
    let mut points = Vec::new();
    for (g, &w) in groups.iter().enumerate() {
        for k in 0..r2s.len() {
            let b = &curves[g][k];
            let (lo, hi) = percentile_ci(&reps, g, k, config.alpha);
            let (ci_low, ci_high) = (lo.min(b.lower), hi.max(b.upper));
            points.push(CurvePoint {
                group_w: w,
                grid_value: grid_values[k],
                r2: r2s[k],
                r2_applied: grids[g][k],
                sie_point: b.point,
                sie_lower: b.lower,
                sie_upper: b.upper,
                ci_low,
                ci_high,
                contains_null: ci_low <= 0.0 && ci_high >= 0.0,
                clipped_members: b.clipped_members,
            });
        }
    }
    Ok((points, retries, ratios))
}

/// 1 − var(w̄ on complete cases)/var(w* on all rows), per arm, maximum over arms, in [0, 0.99].
pub fn empirical_r2(
    fit_masked: &NuisanceFit,
    fit_full: &NuisanceFit,
    masked: &ObservationTable,
    w: u8,
) -> Result<f64> {
    let rows: Vec<&Observation> = masked.iter().filter(|r| r.s == 0 && r.w == w).collect();
    let mut best: f64 = 0.0;
    for a_star in [1u8, 0] {
        let g_obs = mediator_intervention_density(fit_masked, a_star, 0, w)?;
        let g_true = mediator_intervention_density(fit_full, a_star, 0, w)?;
        let obs: Vec<f64> = rows.iter().filter_map(|r| r.c_obs).map(|c| g_obs.density(c)).collect();
        let all: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.c_true.or(r.c_obs))
            .map(|c| g_true.density(c))
            .collect();
        let v_all = variance(&all);
        if v_all > 0.0 && obs.len() > 1 {
            best = best.max(1.0 - variance(&obs) / v_all);
        }
    }
    Ok(best.clamp(0.0, 0.99))
}

fn crossings(points: &[CurvePoint]) -> Vec<NullCrossing> {
    let mut out = Vec::new();
    for w in 0..2u8 {
        let pts: Vec<&CurvePoint> = points.iter().filter(|p| p.group_w == w).collect();
        if pts.is_empty() {
            continue;
        }
        let first = pts.iter().find(|p| p.contains_null);
        out.push(NullCrossing {
            group_w: w,
            r2_star: first.map(|p| p.r2),
            grid_value_star: first.map(|p| p.grid_value),
        });
    }
    out
}

/// Full sensitivity curve over an R² grid or a missingness-proportion grid.
pub fn sweep(
    fitter: &dyn NuisanceFitter,
    table: &ObservationTable,
    grid: &SweepGrid,
    config: &SensitivityConfig,
) -> Result<SweepResult> {
    let cfg_check = SensitivityConfig { r2_grid: vec![0.0], ..config.clone() };
    cfg_check.validate()?;
    let mut diagnostics = SweepDiagnostics {
        n_bootstrap: config.n_bootstrap,
        bootstrap_retries: 0,
        clipped_members: 0,
        tan: None,
        realized_missing: Vec::new(),
    };
    let mut ratios = (1.0f64, 1.0f64);
    let points = match grid {
        SweepGrid::R2(r2s) => {
            validate_grid(r2s)?;
            let (pts, retries, r) = analyze_grid(fitter, table, r2s, r2s, config)?;
            diagnostics.bootstrap_retries = retries;
            ratios = r;
            pts
        }
        SweepGrid::Missingness { specs, seed } => {
            if specs.is_empty() {
                return Err(Error::Config("missingness grid is empty".into()));
            }
            let truth = table.has_truth();
            let full_fit = if truth {
                let restored: Vec<Observation> =
                    table.iter().map(|r| Observation { c_obs: r.c_true, ..*r }).collect();
                Some((fitter.fit(&ObservationTable::new(restored.clone())?)?, ()))
            } else {
                None
            };
            let mut all = Vec::new();
            for (k, spec) in specs.iter().enumerate() {
                let (masked, report) = apply_missingness(table, spec, derive_seed(*seed, k as u64))?;
                diagnostics.realized_missing.push(report.realized_fraction);
                let grid_value = spec.target_proportion.unwrap_or(report.realized_fraction);
                let r2 = match &full_fit {
                    Some((ff, _)) => {
                        let fm = fitter.fit(&masked)?;
                        empirical_r2(&fm, ff, &masked, spec.target_group)?
                    }
                    None => grid_value.min(0.99),
                };
                let (pts, retries, r) = analyze_grid(fitter, &masked, &[r2], &[grid_value], config)?;
                diagnostics.bootstrap_retries += retries;
                ratios = (ratios.0.min(r.0), ratios.1.max(r.1));
                all.extend(pts);
            }
            all.sort_by_key(|p| p.group_w);
            all
        }
    };
    diagnostics.clipped_members = points.iter().map(|p| p.clipped_members).sum();
    diagnostics.tan = config.lambda.map(|lambda| TanDiagnostic {
        lambda,
        ratio_min: ratios.0,
        ratio_max: ratios.1,
        within_bounds: ratios.0 >= 1.0 / lambda && ratios.1 <= lambda,
    });
    Ok(SweepResult { crossings: crossings(&points), curve: SensitivityCurve { points }, diagnostics })
}

/// Admissible interval for w*/w̄ under Tan's bound.
pub fn tan_interval(lambda: f64) -> Result<(f64, f64)> {
    if !(lambda >= 1.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be >= 1")));
    }
    Ok((1.0 / lambda, lambda))
}

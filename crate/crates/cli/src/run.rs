use std::path::{Path, PathBuf};

use medtransport::dgp::{apply_missingness, generate_with_report, oracle_effects, MissingnessReport, OracleEffects};
use medtransport::rng::derive_seed;
use medtransport::sensitivity::{CurvePoint, NullCrossing, SweepDiagnostics};
use medtransport::tmle::{EffectEstimate, GroupEffects, PsiEstimate};
use medtransport::{estimate_effects, sweep, NuisanceFitter, ObservationTable, ParametricFitter, SweepGrid};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::data::{load_csv, write_csv};
use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.csv";
pub const RESULTS_FILE: &str = "results.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const ORACLE_FILE: &str = "oracle.json";

/// Seed streams derived from the run seed.
const STREAM_GENERATE: u64 = 1;
const STREAM_MISSINGNESS: u64 = 2;
const STREAM_ORACLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub origin: String,
    pub n_rows: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Missing mediator fraction among target rows, per W group.
    pub target_missing: [f64; 2],
    pub w_clamped: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub a: u8,
    pub a_star: u8,
    pub psi: f64,
    pub se: f64,
    pub mean_eic: f64,
    pub epsilon: f64,
    pub n_weighted: usize,
    pub n_truncated: usize,
}

impl From<&PsiEstimate> for PsiSummary {
    fn from(p: &PsiEstimate) -> Self {
        let d = p.targeting.iter().fold((0.0, 0, 0), |acc, t| (t.epsilon, acc.1 + t.n_weighted, acc.2 + t.n_truncated));
        Self {
            a: p.a,
            a_star: p.a_star,
            psi: p.psi,
            se: p.se,
            mean_eic: p.mean_eic(),
            epsilon: d.0,
            n_weighted: d.1,
            n_truncated: d.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group_w: u8,
    pub sde: EffectEstimate,
    pub sie: EffectEstimate,
    pub psi: Vec<PsiSummary>,
}

impl From<&GroupEffects> for GroupResult {
    fn from(g: &GroupEffects) -> Self {
        Self {
            group_w: g.group_w.unwrap_or(0),
            sde: g.sde.clone(),
            sie: g.sie.clone(),
            psi: [&g.psi_00, &g.psi_10, &g.psi_11].into_iter().map(PsiSummary::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub curve: Vec<CurvePoint>,
    pub crossings: Vec<NullCrossing>,
    pub diagnostics: SweepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub data: Option<DataSummary>,
    pub missingness: Option<MissingnessReport>,
    pub effects: Vec<GroupResult>,
    pub sensitivity: Option<SensitivityResult>,
    pub oracle: Option<OracleEffects>,
}

/// Everything a run produces, before any file is written.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub document: ResultDocument,
    pub dataset: Option<ObservationTable>,
}

fn summary(table: &ObservationTable, origin: &str, w_clamped: Option<usize>, warnings: Vec<String>) -> DataSummary {
    DataSummary {
        origin: origin.into(),
        n_rows: table.len(),
        n_source: table.count(Some(1), None),
        n_target: table.count(Some(0), None),
        target_missing: [table.missing_fraction(Some(0), Some(0)), table.missing_fraction(Some(0), Some(1))],
        w_clamped,
        warnings,
    }
}

fn target_groups(table: &ObservationTable) -> Vec<u8> {
    (0..2u8).filter(|&w| table.count(Some(0), Some(w)) > 0).collect()
}

pub fn compute(cfg: &RunConfig) -> CliResult<Artifacts> {
    cfg.validate()?;
    let mut doc = ResultDocument {
        tool: "medtransport".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        data: None,
        missingness: None,
        effects: Vec::new(),
        sensitivity: None,
        oracle: None,
    };
    let simulated = cfg.data.input.is_none();
    if cfg.mode == Mode::Oracle || (cfg.oracle.include && simulated) {
        doc.oracle = Some(oracle_effects(&cfg.dgp, cfg.oracle.n_mc, derive_seed(cfg.seed, STREAM_ORACLE))?);
    }
    if cfg.mode == Mode::Oracle {
        return Ok(Artifacts { document: doc, dataset: None });
    }

    let (mut table, origin, clamped, warnings) = match &cfg.data.input {
        Some(path) => {
            let loaded = load_csv(path)?;
            (loaded.table, "csv", None, loaded.warnings)
        }
        None => {
            let (t, rep) = generate_with_report(
                &cfg.dgp,
                cfg.data.n_source,
                cfg.data.n_target,
                derive_seed(cfg.seed, STREAM_GENERATE),
            )?;
            (t, "simulated", Some(rep.w_clamped), Vec::new())
        }
    };

    let specs = cfg.missingness.as_ref().map(|m| m.specs()).unwrap_or_default();
    let missingness_grid = cfg.mode == Mode::Sweep && specs.len() > 1;
    if specs.len() == 1 {
        let (masked, report) = apply_missingness(&table, &specs[0], derive_seed(cfg.seed, STREAM_MISSINGNESS))?;
        table = masked;
        doc.missingness = Some(report);
    }
    doc.data = Some(summary(&table, origin, clamped, warnings));

    if cfg.mode == Mode::Simulate {
        return Ok(Artifacts { document: doc, dataset: Some(table) });
    }

    let fitter = ParametricFitter { options: cfg.nuisance };
    let fit = fitter.fit(&table)?;
    for w in target_groups(&table) {
        doc.effects.push(GroupResult::from(&estimate_effects(&fit, &table, Some(w))?));
    }

    let grid = if missingness_grid {
        SweepGrid::Missingness { specs, seed: derive_seed(cfg.seed, STREAM_MISSINGNESS) }
    } else if cfg.mode == Mode::Analyze {
        SweepGrid::R2(vec![cfg.sensitivity.analyze_r2])
    } else {
        SweepGrid::R2(cfg.sensitivity.r2_grid.clone())
    };
    let res = sweep(&fitter, &table, &grid, &cfg.sensitivity_config())?;
    doc.sensitivity = Some(SensitivityResult {
        curve: res.curve.points,
        crossings: res.crossings,
        diagnostics: res.diagnostics,
    });
    Ok(Artifacts { document: doc, dataset: None })
}

/// Runs `compute` inside a pool sized by MEDTRANSPORT_THREADS (0 or unset = automatic).
pub fn compute_with_env_threads(cfg: &RunConfig) -> CliResult<Artifacts> {
    let threads = match std::env::var("MEDTRANSPORT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("MEDTRANSPORT_THREADS = {v:?} is not a count")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| compute(cfg))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Write { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Write { path: path.to_path_buf(), source: e.into() })?;
    text.push('\n');
    std::fs::write(path, text).map_err(write_err(path))
}

pub fn write_curve(points: &[CurvePoint], path: &Path) -> CliResult<()> {
    let werr = |e: csv::Error| CliError::Write { path: path.to_path_buf(), source: e.into() };
    let mut out = csv::Writer::from_path(path).map_err(werr)?;
    out.write_record(["group_w", "r2", "sie_lower", "sie_upper", "ci_low", "ci_high", "contains_null"])
        .map_err(werr)?;
    for p in points {
        out.write_record([
            p.group_w.to_string(),
            p.r2.to_string(),
            p.sie_lower.to_string(),
            p.sie_upper.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
            p.contains_null.to_string(),
        ])
        .map_err(werr)?;
    }
    out.flush().map_err(write_err(path))
}

/// Writes the mode's files into `out_dir` and returns their paths.
pub fn write_artifacts(art: &Artifacts, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let doc = &art.document;
    let mut files = Vec::new();
    if let Some(t) = &art.dataset {
        let p = out_dir.join(DATASET_FILE);
        write_csv(t, &p, doc.config.data.keep_truth)?;
        files.push(p);
    }
    if let Some(o) = &doc.oracle {
        let p = out_dir.join(ORACLE_FILE);
        write_json(o, &p)?;
        files.push(p);
    }
    if let Some(s) = &doc.sensitivity {
        if doc.config.mode == Mode::Sweep {
            let p = out_dir.join(CURVE_FILE);
            write_curve(&s.curve, &p)?;
            files.push(p);
        }
    }
    let p = out_dir.join(RESULTS_FILE);
    write_json(doc, &p)?;
    files.push(p);
    Ok(files)
}

pub fn run(cfg: &RunConfig) -> CliResult<(ResultDocument, Vec<PathBuf>)> {
    let art = compute_with_env_threads(cfg)?;
    let files = write_artifacts(&art, &cfg.output.out_dir)?;
    Ok((art.document, files))
}

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use medtransport::dgp::{Mechanism, MissingnessSpec};
use medtransport::{NuisanceOptions, SensitivityConfig, StructuralParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Oracle,
    Analyze,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV input; when absent, data are simulated from `[dgp]`.
    pub input: Option<PathBuf>,
    pub n_source: usize,
    pub n_target: usize,
    /// Write the true mediator as a C_TRUE column in simulate mode.
    pub keep_truth: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { input: None, n_source: 5000, n_target: 5000, keep_truth: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSection {
    pub mechanism: Mechanism,
    #[serde(default)]
    pub target_group: u8,
    /// Fixed λ; takes precedence over `proportions`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// One proportion to calibrate to, or several to sweep over in sweep mode.
    #[serde(default)]
    pub proportions: Vec<f64>,
    /// Also mask source rows of the target group.
    #[serde(default)]
    pub all_environments: bool,
}

impl MissingnessSection {
    pub fn specs(&self) -> Vec<MissingnessSpec> {
        let environment = if self.all_environments { None } else { Some(0) };
        if let Some(lambda) = self.lambda {
            return vec![MissingnessSpec { environment, ..MissingnessSpec::new(self.mechanism, lambda, self.target_group) }];
        }
        self.proportions
            .iter()
            .map(|&p| MissingnessSpec {
                environment,
                ..MissingnessSpec::calibrated(self.mechanism, self.target_group, p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub r2_grid: Vec<f64>,
    /// R² used by analyze mode.
    pub analyze_r2: f64,
    pub lambda: Option<f64>,
    pub alpha: f64,
    pub n_bootstrap: usize,
    pub apply_to_complete_groups: bool,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        let d = SensitivityConfig::default();
        Self {
            r2_grid: d.r2_grid,
            analyze_r2: 0.1,
            lambda: d.lambda,
            alpha: d.alpha,
            n_bootstrap: d.n_bootstrap,
            apply_to_complete_groups: d.apply_to_complete_groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n_mc: usize,
    /// Attach oracle truth to analyze/sweep results on simulated data.
    pub include: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { n_mc: 1_000_000, include: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub dgp: StructuralParams,
    #[serde(default)]
    pub missingness: Option<MissingnessSection>,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub nuisance: NuisanceOptions,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Parser)]
#[command(name = "medtransport", version, about = "Transported stochastic mediation effects with MNAR sensitivity curves")]
pub struct Flags {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// TOML (or JSON) run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated R² values.
    #[arg(long)]
    pub r2_grid: Option<String>,
    /// `none`, `<mechanism>:<p>[,<p>...]` or `<mechanism>:lambda=<value>`.
    #[arg(long)]
    pub missingness: Option<String>,
    #[arg(long)]
    pub target_group: Option<u8>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub keep_truth: bool,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| config_err(format!("not a number: {v:?}"))))
        .collect()
}

pub fn parse_missingness(s: &str) -> CliResult<Option<MissingnessSection>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (mech, rest) = s
        .split_once(':')
        .ok_or_else(|| config_err(format!("missingness {s:?}: expected <mechanism>:<value>")))?;
    let mechanism = match mech.to_ascii_lowercase().as_str() {
        "mcar" => Mechanism::Mcar,
        "mar" => Mechanism::Mar,
        "mnar" => Mechanism::Mnar,
        other => return Err(config_err(format!("unknown missingness mechanism {other:?}"))),
    };
    let mut section =
        MissingnessSection { mechanism, target_group: 0, lambda: None, proportions: Vec::new(), all_environments: false };
    match rest.strip_prefix("lambda=") {
        Some(l) => section.lambda = Some(l.trim().parse().map_err(|_| config_err(format!("bad lambda {l:?}")))?),
        None => section.proportions = parse_list(rest)?,
    }
    Ok(Some(section))
}

fn read_config_value(path: &Path) -> CliResult<serde_json::Value> {
    let text =
        std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

impl RunConfig {
    /// Reads the config file (if any) and applies flag overrides; flags win.
    pub fn resolve(flags: &Flags) -> CliResult<Self> {
        let mut cfg = match &flags.config {
            Some(path) => {
                let mut value = read_config_value(path)?;
                if let (Some(mode), Some(obj)) = (flags.mode, value.as_object_mut()) {
                    obj.insert("mode".into(), serde_json::to_value(mode).map_err(config_err)?);
                }
                serde_json::from_value::<RunConfig>(value)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            None => {
                let mode = flags.mode.ok_or_else(|| config_err("no mode given (use --mode or a config file)"))?;
                RunConfig::new(mode)
            }
        };
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            seed: 0,
            data: DataSection::default(),
            dgp: StructuralParams::default(),
            missingness: None,
            sensitivity: SensitivitySection::default(),
            nuisance: NuisanceOptions::default(),
            oracle: OracleSection::default(),
            output: OutputSection::default(),
        }
    }

    fn apply_flags(&mut self, f: &Flags) -> CliResult<()> {
        if let Some(m) = f.mode {
            self.mode = m;
        }
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(p) = &f.input {
            self.data.input = Some(p.clone());
        }
        if let Some(p) = &f.out_dir {
            self.output.out_dir = p.clone();
        }
        if let Some(g) = &f.r2_grid {
            self.sensitivity.r2_grid = parse_list(g)?;
        }
        if let Some(m) = &f.missingness {
            self.missingness = parse_missingness(m)?;
        }
        if let Some(g) = f.target_group {
            match &mut self.missingness {
                Some(m) => m.target_group = g,
                None => return Err(config_err("--target-group needs a missingness specification")),
            }
        }
        if let Some(a) = f.alpha {
            self.sensitivity.alpha = a;
        }
        if let Some(b) = f.bootstrap {
            self.sensitivity.n_bootstrap = b;
        }
        if let Some(n) = f.n_mc {
            self.nuisance.n_mc = n;
        }
        if f.keep_truth {
            self.data.keep_truth = true;
        }
        Ok(())
    }

    pub fn sensitivity_config(&self) -> SensitivityConfig {
        let s = &self.sensitivity;
        SensitivityConfig {
            r2_grid: s.r2_grid.clone(),
            lambda: s.lambda,
            alpha: s.alpha,
            n_bootstrap: s.n_bootstrap,
            seed: self.seed,
            apply_to_complete_groups: s.apply_to_complete_groups,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dgp.validate()?;
        self.nuisance.validate()?;
        if matches!(self.mode, Mode::Analyze | Mode::Sweep) {
            self.sensitivity_config().validate()?;
            if !(0.0..1.0).contains(&self.sensitivity.analyze_r2) {
                return Err(config_err(format!("analyze_r2 = {} outside [0, 1)", self.sensitivity.analyze_r2)));
            }
        }
        if let Some(p) = &self.data.input {
            if self.mode == Mode::Simulate || self.mode == Mode::Oracle {
                return Err(config_err(format!("input file is not used in {:?} mode", self.mode)));
            }
            if !p.is_file() {
                return Err(config_err(format!("input file {} does not exist", p.display())));
            }
        } else if self.data.n_source == 0 || self.data.n_target == 0 {
            return Err(config_err("n_source and n_target must be positive"));
        }
        if let Some(m) = &self.missingness {
            let specs = m.specs();
            if specs.is_empty() {
                return Err(config_err("missingness needs lambda or at least one proportion"));
            }
            for s in &specs {
                s.validate()?;
            }
            if specs.len() > 1 && self.mode != Mode::Sweep {
                return Err(config_err("several missingness proportions are only allowed in sweep mode"));
            }
        }
        if self.oracle.n_mc < 100_000 && (self.mode == Mode::Oracle || self.oracle.include) {
            return Err(config_err(format!("oracle n_mc = {} below 100000", self.oracle.n_mc)));
        }
        Ok(())
    }
}

//! Config-driven experiment grids: data source × method × γ, with CSV
//! output and a run manifest.
//!
//! Every output except `time_vs_gamma.csv` and `speedup.csv` is a pure
//! function of the config (which includes the seed).

mod io;
mod output;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::Aggregation;
use crate::error::{Error, Result};
use crate::evaluation::{run_replicated, DataSource, DnnProcedure, EvalReport, Procedure};
use crate::rng::SeededRng;
use crate::simgen::simulation_spec;
use crate::tuning::{
    cv_tune, default_grid, default_oracle_k, matched_bnn_ratio, TuneFamily, TuneResult, DEFAULT_FOLDS,
};
use crate::weights::{
    bridge_k_majority, bridge_k_weighted, bridge_l_majority, bridge_l_weighted, WeightScheme,
};

pub use io::{load_csv, split_test, test_size, CsvOptions, LabelColumn, Standardizer, MAX_TEST_SIZE};
pub use output::{
    emit_constants, read_risk_csv, read_speedup_csv, speedup_rows, table1, write_outputs, CisRow, RiskRow,
    SpeedupRow, TimeRow, CIS_FILE, MANIFEST_FILE, RISK_FILE, SPEEDUP_FILE, TIME_FILE, TUNING_FILE,
};

const PILOT_STREAM: u64 = 0x7069_6c6f;
const REPLICATION_STREAM: u64 = 0x7265_706c;

/// A classifier in the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "oracle-knn")]
    OracleKnn,
    #[serde(rename = "oracle-ownn")]
    OracleOwnn,
    #[serde(rename = "oracle-bnn")]
    OracleBnn,
    #[serde(rename = "m-dnn-k")]
    MDnnK,
    #[serde(rename = "w-dnn-k")]
    WDnnK,
    #[serde(rename = "m-dnn-ownn")]
    MDnnOwnn,
    #[serde(rename = "w-dnn-ownn")]
    WDnnOwnn,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::OracleKnn,
        Method::OracleOwnn,
        Method::OracleBnn,
        Method::MDnnK,
        Method::WDnnK,
        Method::MDnnOwnn,
        Method::WDnnOwnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OracleKnn => "oracle-knn",
            Method::OracleOwnn => "oracle-ownn",
            Method::OracleBnn => "oracle-bnn",
            Method::MDnnK => "m-dnn-k",
            Method::WDnnK => "w-dnn-k",
            Method::MDnnOwnn => "m-dnn-ownn",
            Method::WDnnOwnn => "w-dnn-ownn",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Method::OracleKnn | Method::OracleOwnn | Method::OracleBnn)
    }

    fn uses_ownn(self) -> bool {
        matches!(self, Method::OracleOwnn | Method::MDnnOwnn | Method::WDnnOwnn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// How the oracle BNN ratio is chosen when `bnn_q` is not given.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnnRule {
    /// Cross-validated over `q = 1/m` for the default count grid.
    #[default]
    Cv,
    /// Derived from the (tuned) OWNN cutoff by matching the bias-variance
    /// balance; see [`matched_bnn_ratio`].
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Simulation,
    Csv,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_test() -> usize {
    MAX_TEST_SIZE
}

fn default_true() -> bool {
    true
}

/// Flat experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceKind,
    /// Simulation design (1, 2 or 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Training size `N` for simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    /// Test size for simulations. CSV data always use `min(1000, N/5)`.
    #[serde(default = "default_test")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    /// Header name, or zero-based index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default)]
    pub standardize: bool,
    pub methods: Vec<Method>,
    pub gammas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Oracle `K`; defaults to `⌈N^{0.7}⌉` unless `tune_k` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_k: Option<usize>,
    #[serde(default)]
    pub tune_k: bool,
    /// Oracle OWNN cutoff; tuned by cross-validation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ownn_m: Option<usize>,
    /// Bagging ratio for oracle BNN; tuned by cross-validation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bnn_q: Option<f64>,
    #[serde(default)]
    pub bnn_rule: BnnRule,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Estimate classification instability as well as risk.
    #[serde(default)]
    pub cis: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. A relative `csv_path` is resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(csv), Some(dir)) = (&config.csv_path, path.parent()) {
            if csv.is_relative() {
                config.csv_path = Some(dir.join(csv));
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        if self.gammas.is_empty() {
            return fail("gammas must not be empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return fail(format!("gamma {g} is outside [0, 1]"));
        }
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be at least 2".into());
        }
        if self.oracle_k == Some(0) || self.ownn_m == Some(0) {
            return fail("oracle_k and ownn_m must be at least 1".into());
        }
        if let Some(q) = self.bnn_q {
            if !(q > 0.0 && q < 1.0) {
                return fail(format!("bnn_q {q} is outside (0, 1)"));
            }
        }
        match self.source {
            SourceKind::Simulation => {
                if self.simulation.is_none() || self.dim.is_none() || self.n_train.is_none() {
                    return fail("simulation source needs simulation, dim and n_train".into());
                }
                if self.n_train < Some(2) || self.n_test == 0 {
                    return fail("n_train must be at least 2 and n_test at least 1".into());
                }
            }
            SourceKind::Csv => {
                if self.csv_path.is_none() || self.label_column.is_none() {
                    return fail("csv source needs csv_path and label_column".into());
                }
            }
        }
        Ok(())
    }

    /// Builds the data source (loading the CSV if needed).
    pub fn data_source(&self) -> Result<DataSource> {
        self.validate()?;
        match self.source {
            SourceKind::Simulation => Ok(DataSource::Simulation {
                spec: simulation_spec(self.simulation.unwrap_or(1), self.dim.unwrap_or(1))?,
                n_train: self.n_train.unwrap_or(0),
                n_test: self.n_test,
            }),
            SourceKind::Csv => {
                let options = CsvOptions {
                    label_column: LabelColumn::parse(self.label_column.as_deref().unwrap_or("")),
                    positive_label: self.positive_label.clone(),
                    has_header: self.has_header,
                };
                let data = load_csv(self.csv_path.as_deref().unwrap_or(Path::new("")), &options)?;
                Ok(DataSource::Fixed {
                    data,
                    standardize: self.standardize,
                })
            }
        }
    }
}

/// Oracle parameters the grid is bridged from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub k: usize,
    pub ownn_m: Option<usize>,
    pub bnn_q: Option<f64>,
}

/// Number of shards for exponent `gamma`: `round(N^γ)` clamped to `[1, N]`.
pub fn shards_for(n: usize, gamma: f64) -> usize {
    ((n as f64).powf(gamma).round() as usize).clamp(1, n.max(1))
}

/// The procedure for one grid cell, with the name and value of its local
/// parameter.
pub fn cell_procedure(
    method: Method,
    s: usize,
    d: usize,
    oracle: &OracleParams,
) -> Result<(DnnProcedure, &'static str, f64)> {
    let need_m = || {
        oracle
            .ownn_m
            .ok_or_else(|| Error::Config("OWNN cutoff was neither given nor tuned".into()))
    };
    let dist = |mode, scheme| DnnProcedure {
        mode,
        shards: s,
        scheme,
    };
    Ok(match method {
        Method::OracleKnn => (
            DnnProcedure::oracle(WeightScheme::UniformK { k: oracle.k }),
            "k",
            oracle.k as f64,
        ),
        Method::OracleOwnn => {
            let m = need_m()?;
            (DnnProcedure::oracle(WeightScheme::Ownn { m }), "l", m as f64)
        }
        Method::OracleBnn => {
            let q = oracle
                .bnn_q
                .ok_or_else(|| Error::Config("BNN ratio was neither given nor tuned".into()))?;
            (DnnProcedure::oracle(WeightScheme::BnnGeometric { q }), "q", q)
        }
        Method::MDnnK => {
            let k = bridge_k_majority(oracle.k, s, d);
            (dist(Aggregation::Majority, WeightScheme::UniformK { k }), "k", k as f64)
        }
        Method::WDnnK => {
            let k = bridge_k_weighted(oracle.k, s);
            (dist(Aggregation::Weighted, WeightScheme::UniformK { k }), "k", k as f64)
        }
        Method::MDnnOwnn => {
            let l = bridge_l_majority(need_m()?, s, d);
            (dist(Aggregation::Majority, WeightScheme::Ownn { m: l }), "l", l as f64)
        }
        Method::WDnnOwnn => {
            let l = bridge_l_weighted(need_m()?, s);
            (dist(Aggregation::Weighted, WeightScheme::Ownn { m: l }), "l", l as f64)
        }
    })
}

/// A grid cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub gamma: f64,
    pub error: String,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub oracle: OracleParams,
    pub tuning: Vec<TuneResult>,
    /// Successful cells, γ-major in config order.
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The training sample used to tune oracle parameters: one draw of size
/// `N` (simulations) or the training part of one split (fixed data).
pub fn pilot_sample(source: &DataSource, rng: &SeededRng) -> Result<Dataset> {
    Ok(source.draw(&rng.substream(PILOT_STREAM), false)?.train)
}

/// Resolves the oracle parameters, tuning by cross-validation on a pilot
/// sample whatever the config leaves open and the methods need.
pub fn resolve_oracle(
    config: &ExperimentConfig,
    source: &DataSource,
    rng: &SeededRng,
) -> Result<(OracleParams, Vec<TuneResult>)> {
    let n = source.train_size();
    let d = source.dim();
    let wants = |f: fn(Method) -> bool| config.methods.iter().any(|&m| f(m));
    let need_k = config.oracle_k.is_none() && config.tune_k;
    let need_q = config.bnn_q.is_none() && wants(|m| m == Method::OracleBnn);
    let matched = need_q && config.bnn_rule == BnnRule::Matched;
    let need_m = config.ownn_m.is_none() && (wants(Method::uses_ownn) || matched);
    let mut tuning = Vec::new();
    let pilot = if need_k || need_m || need_q {
        Some(pilot_sample(source, rng)?)
    } else {
        None
    };
    let mut tune = |family: TuneFamily, tag: u64| -> Result<f64> {
        let pilot = pilot.as_ref().expect("pilot drawn when tuning");
        let grid = default_grid(family, pilot.len(), d, config.cv_folds);
        let mut r = rng.derive(&[PILOT_STREAM, tag]);
        let result = cv_tune(pilot, family, &grid, config.cv_folds, &mut r)?;
        log::info!("tuned {family:?}: {} (cv risk {:.4})", result.selected, {
            let i = result.grid.iter().position(|g| *g == result.selected).unwrap_or(0);
            result.cv_risk[i]
        });
        let v = result.selected;
        tuning.push(result);
        Ok(v)
    };
    let k = match config.oracle_k {
        Some(k) => k,
        None if need_k => tune(TuneFamily::Knn, 1)? as usize,
        None => default_oracle_k(n),
    };
    let ownn_m = match config.ownn_m {
        Some(m) => Some(m),
        None if need_m => Some(tune(TuneFamily::Ownn, 2)? as usize),
        None => None,
    };
    let bnn_q = match config.bnn_q {
        Some(q) => Some(q),
        None if matched => {
            let m = ownn_m.expect("cutoff resolved before the ratio");
            let q = matched_bnn_ratio(m.min(n), n, d)?;
            log::info!("matched BNN ratio for m = {m}: {q}");
            Some(q)
        }
        None if need_q => Some(tune(TuneFamily::Bnn, 3)?),
        None => None,
    };
    Ok((
        OracleParams {
            k: k.clamp(1, n.max(1)),
            ownn_m: ownn_m.map(|m| m.clamp(1, n.max(1))),
            bnn_q,
        },
        tuning,
    ))
}

struct Cell {
    method: Method,
    gamma: f64,
    s: usize,
    param: &'static str,
    param_value: f64,
    procedure: Result<usize>,
}

/// Runs the full grid.
///
/// All cells share the replication data (common random numbers), and cells
/// that resolve to the same procedure (for example every oracle across γ)
/// are fitted once. A cell that fails is recorded in `failures` and the
/// rest of the grid proceeds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let source = config.data_source()?;
    run_experiment_with(config, &source)
}

/// [`run_experiment`] on an already loaded data source.
pub fn run_experiment_with(config: &ExperimentConfig, source: &DataSource) -> Result<ExperimentOutcome> {
    config.validate()?;
    let rng = SeededRng::new(config.seed, 0);
    let n = source.train_size();
    let d = source.dim();
    let (oracle, tuning) = resolve_oracle(config, source, &rng)?;
    log::info!("N = {n}, d = {d}, oracle K = {}", oracle.k);

    let mut unique: Vec<DnnProcedure> = Vec::new();
    let mut cells = Vec::new();
    for &gamma in &config.gammas {
        let s = shards_for(n, gamma);
        for &method in &config.methods {
            let (s, built) = if method.is_oracle() {
                (1, cell_procedure(method, 1, d, &oracle))
            } else {
                (s, cell_procedure(method, s, d, &oracle))
            };
            let (procedure, param, param_value) = match built {
                Ok((mut p, name, v)) => {
                    if p.shards == 1 {
                        p.mode = Aggregation::Weighted;
                    }
                    let idx = unique.iter().position(|u| *u == p).unwrap_or_else(|| {
                        unique.push(p);
                        unique.len() - 1
                    });
                    (Ok(idx), name, v)
                }
                Err(e) => (Err(e), "", f64::NAN),
            };
            let shard_size = n / s;
            if param_value.is_finite() && param != "q" && param_value > shard_size as f64 {
                log::warn!(
                    "[{method} γ={gamma}] local {param} = {param_value} exceeds shard size {shard_size}; clamped"
                );
            }
            cells.push(Cell {
                method,
                gamma,
                s,
                param,
                param_value: if param == "q" {
                    param_value
                } else {
                    param_value.min(shard_size as f64)
                },
                procedure,
            });
        }
    }

    let procs: Vec<&dyn Procedure> = unique.iter().map(|p| p as &dyn Procedure).collect();
    let results = run_replicated(
        &procs,
        source,
        config.replications,
        config.cis,
        &rng.substream(REPLICATION_STREAM),
    )?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for cell in cells {
        let outcome = cell
            .procedure
            .map_err(|e| e.to_string())
            .and_then(|i| results[i].as_ref().map_err(|e| e.to_string()).cloned());
        match outcome {
            Ok(stats) => reports.push(EvalReport {
                method: cell.method.name().to_string(),
                gamma: cell.gamma,
                s: cell.s,
                n: n / cell.s,
                d,
                big_n: n,
                param: cell.param.to_string(),
                param_value: cell.param_value,
                stats,
            }),
            Err(e) => {
                log::error!("[{} γ={}] cell failed: {e}", cell.method, cell.gamma);
                failures.push(CellFailure {
                    method: cell.method,
                    gamma: cell.gamma,
                    error: e,
                });
            }
        }
    }
    Ok(ExperimentOutcome {
        config: config.clone(),
        oracle,
        tuning,
        reports,
        failures,
    })
}

/// Per-method reports keyed by γ, for lookups in tests and reports.
pub fn by_method(reports: &[EvalReport]) -> BTreeMap<String, Vec<&EvalReport>> {
    let mut map: BTreeMap<String, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        map.entry(r.method.clone()).or_default().push(r);
    }
    map
}

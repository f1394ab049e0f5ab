//! CSV tables, the run manifest and the plain-text summary table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{ExperimentOutcome, Method};
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::theory::{figure1_table, write_constants_csv};

pub const RISK_FILE: &str = "risk_vs_gamma.csv";
pub const TIME_FILE: &str = "time_vs_gamma.csv";
pub const CIS_FILE: &str = "cis_table.csv";
pub const SPEEDUP_FILE: &str = "speedup.csv";
pub const TUNING_FILE: &str = "tuning.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One line of `risk_vs_gamma.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub method: String,
    pub gamma: f64,
    pub s: usize,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub param: String,
    pub param_value: f64,
    pub replications: usize,
    pub risk: f64,
    pub risk_se: Option<f64>,
    pub bayes_risk: Option<f64>,
    pub regret: Option<f64>,
    pub regret_se: Option<f64>,
    pub dropped: usize,
}

impl From<&EvalReport> for RiskRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            method: r.method.clone(),
            gamma: r.gamma,
            s: r.s,
            n: r.n,
            d: r.d,
            big_n: r.big_n,
            param: r.param.clone(),
            param_value: r.param_value,
            replications: r.stats.replications,
            risk: r.stats.risk.mean,
            risk_se: r.stats.risk.stderr,
            bayes_risk: r.stats.bayes_risk.map(|b| b.mean),
            regret: r.stats.regret.map(|b| b.mean),
            regret_se: r.stats.regret.and_then(|b| b.stderr),
            dropped: r.stats.dropped,
        }
    }
}

/// One line of `time_vs_gamma.csv`. Times are per replication, in seconds,
/// along the critical path (slowest shard plus coordinator work).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub method: String,
    pub gamma: f64,
    pub s: usize,
    pub n: usize,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub per_query_seconds: f64,
    /// Total work summed over shards.
    pub serial_seconds: f64,
}

impl From<&EvalReport> for TimeRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            method: r.method.clone(),
            gamma: r.gamma,
            s: r.s,
            n: r.n,
            fit_seconds: r.stats.fit_seconds,
            predict_seconds: r.stats.predict_seconds,
            per_query_seconds: r.stats.per_query_seconds,
            serial_seconds: r.stats.serial_seconds,
        }
    }
}

/// One line of `cis_table.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CisRow {
    pub method: String,
    pub gamma: f64,
    pub s: usize,
    pub cis: f64,
    pub cis_se: Option<f64>,
}

/// One line of `speedup.csv`: oracle k-NN time over the slower of M-DNN(k)
/// and W-DNN(k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub gamma: f64,
    pub s: usize,
    pub oracle_seconds: f64,
    pub m_dnn_seconds: Option<f64>,
    pub w_dnn_seconds: Option<f64>,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TuneRow {
    family: String,
    value: f64,
    cv_risk: f64,
    cv_se: f64,
    selected: bool,
}

fn total_seconds(r: &EvalReport) -> f64 {
    r.stats.fit_seconds + r.stats.predict_seconds
}

/// Speedup rows for every γ that has oracle k-NN and at least one of
/// M-DNN(k), W-DNN(k).
pub fn speedup_rows(reports: &[EvalReport]) -> Vec<SpeedupRow> {
    let find = |m: Method, g: f64| reports.iter().find(|r| r.method == m.name() && r.gamma == g);
    let mut gammas: Vec<f64> = reports.iter().map(|r| r.gamma).collect();
    gammas.dedup();
    let mut seen = Vec::new();
    let mut rows = Vec::new();
    for g in gammas {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let Some(oracle) = find(Method::OracleKnn, g) else {
            continue;
        };
        let m = find(Method::MDnnK, g);
        let w = find(Method::WDnnK, g);
        let slowest = m.iter().chain(w.iter()).map(|r| total_seconds(r)).fold(None, |a: Option<f64>, t| {
            Some(a.map_or(t, |a| a.max(t)))
        });
        let Some(slowest) = slowest else {
            continue;
        };
        rows.push(SpeedupRow {
            gamma: g,
            s: m.or(w).map_or(1, |r| r.s),
            oracle_seconds: total_seconds(oracle),
            m_dnn_seconds: m.map(total_seconds),
            w_dnn_seconds: w.map(total_seconds),
            speedup: total_seconds(oracle) / slowest,
        });
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    // Header written explicitly so empty tables still carry their schema.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(csv_io)?;
    for row in rows {
        w.serialize(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub const RISK_HEADER: [&str; 15] = [
    "method", "gamma", "s", "n", "d", "N", "param", "param_value", "replications", "risk",
    "risk_se", "bayes_risk", "regret", "regret_se", "dropped",
];
pub const TIME_HEADER: [&str; 8] = [
    "method", "gamma", "s", "n", "fit_seconds", "predict_seconds", "per_query_seconds",
    "serial_seconds",
];
pub const CIS_HEADER: [&str; 5] = ["method", "gamma", "s", "cis", "cis_se"];
pub const SPEEDUP_HEADER: [&str; 6] = [
    "gamma", "s", "oracle_seconds", "m_dnn_seconds", "w_dnn_seconds", "speedup",
];
const TUNE_HEADER: [&str; 5] = ["family", "value", "cv_risk", "cv_se", "selected"];

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    package: &'static str,
    package_version: &'static str,
    seed: u64,
    config: &'a super::ExperimentConfig,
    oracle: &'a super::OracleParams,
    cells_ok: usize,
    failures: &'a [super::CellFailure],
    outputs: Vec<&'static str>,
    /// Files whose content depends on wall-clock timing.
    nondeterministic: Vec<&'static str>,
}

/// Writes every table and the manifest into `dir` (created if needed).
/// Returns the written paths.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let reports = &outcome.reports;
    let risk: Vec<RiskRow> = reports.iter().map(RiskRow::from).collect();
    let time: Vec<TimeRow> = reports.iter().map(TimeRow::from).collect();
    let cis: Vec<CisRow> = reports
        .iter()
        .filter_map(|r| {
            r.stats.cis.map(|c| CisRow {
                method: r.method.clone(),
                gamma: r.gamma,
                s: r.s,
                cis: c.mean,
                cis_se: c.stderr,
            })
        })
        .collect();
    let tune: Vec<TuneRow> = outcome
        .tuning
        .iter()
        .flat_map(|t| {
            (0..t.grid.len()).map(move |i| TuneRow {
                family: format!("{:?}", t.family).to_lowercase(),
                value: t.grid[i],
                cv_risk: t.cv_risk[i],
                cv_se: t.cv_stderr[i],
                selected: t.grid[i] == t.selected,
            })
        })
        .collect();

    write_csv(&dir.join(RISK_FILE), &RISK_HEADER, &risk)?;
    write_csv(&dir.join(TIME_FILE), &TIME_HEADER, &time)?;
    write_csv(&dir.join(CIS_FILE), &CIS_HEADER, &cis)?;
    write_csv(&dir.join(SPEEDUP_FILE), &SPEEDUP_HEADER, &speedup_rows(reports))?;
    write_csv(&dir.join(TUNING_FILE), &TUNE_HEADER, &tune)?;

    let outputs = vec![RISK_FILE, TIME_FILE, CIS_FILE, SPEEDUP_FILE, TUNING_FILE];
    let manifest = Manifest {
        format: "dnn-run-manifest",
        version: 1,
        package: env!("CARGO_PKG_NAME"),
        package_version: env!("CARGO_PKG_VERSION"),
        seed: outcome.config.seed,
        config: &outcome.config,
        oracle: &outcome.oracle,
        cells_ok: reports.len(),
        failures: &outcome.failures,
        outputs: outputs.clone(),
        nondeterministic: vec![TIME_FILE, SPEEDUP_FILE],
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;

    Ok(outputs
        .into_iter()
        .chain([MANIFEST_FILE])
        .map(|f| dir.join(f))
        .collect())
}

/// Writes the constants table for `dims` to `path`.
pub fn emit_constants(dims: impl IntoIterator<Item = usize>, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_constants_csv(&figure1_table(dims), file)
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                row: i + 2,
                column: "-".into(),
                cause: e.to_string(),
            })
        })
        .collect()
}

pub fn read_risk_csv(path: &Path) -> Result<Vec<RiskRow>> {
    read_csv(path)
}

pub fn read_speedup_csv(path: &Path) -> Result<Vec<SpeedupRow>> {
    read_csv(path)
}

/// Markdown table with one row per γ: each method's mean risk (standard
/// error) and the speedup factor when available.
pub fn table1(risk: &[RiskRow], speedup: &[SpeedupRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in risk {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let gammas: BTreeSet<u64> = risk.iter().map(|r| r.gamma.to_bits()).collect();
    let mut gammas: Vec<f64> = gammas.into_iter().map(f64::from_bits).collect();
    gammas.sort_by(f64::total_cmp);

    let mut out = String::new();
    let _ = writeln!(out, "| gamma | s | {} | speedup |", methods.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(methods.len() + 3));
    for g in gammas {
        let s = risk
            .iter()
            .filter(|r| r.gamma == g && !r.method.starts_with("oracle"))
            .map(|r| r.s)
            .max()
            .unwrap_or(1);
        let cells: Vec<String> = methods
            .iter()
            .map(|m| {
                risk.iter()
                    .find(|r| r.gamma == g && r.method == *m)
                    .map_or("-".into(), |r| match r.risk_se {
                        Some(se) => format!("{:.4} ({:.4})", r.risk, se),
                        None => format!("{:.4}", r.risk),
                    })
            })
            .collect();
        let speed = speedup
            .iter()
            .find(|x| x.gamma == g)
            .map_or("-".into(), |x| format!("{:.2}", x.speedup));
        let _ = writeln!(out, "| {g} | {s} | {} | {speed} |", cells.join(" | "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_experiment, ExperimentConfig};

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
source = "simulation"
simulation = 1
dim = 2
n_train = 200
n_test = 50
methods = ["oracle-knn", "m-dnn-k", "w-dnn-k"]
gammas = [0.0, 0.3]
replications = 2
seed = 4
cis = true
"#,
        )
        .unwrap()
    }

    #[test]
    fn outputs_have_fixed_headers_and_rerun_identically() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&config()).unwrap();
        write_outputs(&out, &dir.path().join("a")).unwrap();
        write_outputs(&run_experiment(&config()).unwrap(), &dir.path().join("b")).unwrap();
        for f in [RISK_FILE, CIS_FILE, TUNING_FILE, MANIFEST_FILE] {
            let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
        let risk = std::fs::read_to_string(dir.path().join("a").join(RISK_FILE)).unwrap();
        assert_eq!(risk.lines().next().unwrap(), RISK_HEADER.join(","));
        assert_eq!(risk.lines().count(), 7);
        let rows = read_risk_csv(&dir.path().join("a").join(RISK_FILE)).unwrap();
        assert_eq!(rows.len(), 6);
        let speed = read_speedup_csv(&dir.path().join("a").join(SPEEDUP_FILE)).unwrap();
        assert_eq!(speed.len(), 2);
        let table = table1(&rows, &speed);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("w-dnn-k"));
    }

    #[test]
    fn constants_file_has_one_row_per_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        emit_constants(1..=30, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 31);
    }
}

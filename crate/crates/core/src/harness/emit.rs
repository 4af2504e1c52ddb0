//! Result files: per-run CSV, a JSON summary and plot data.
//!
//! CSV schema (v1), one row per observation:
//! `function,policy,seed,step,x,y,regret,elapsed-ms`. Coordinates of `x`
//! are joined with `;`. Reals are written with 17 significant digits so a
//! re-read reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::PolicyKind;
use crate::error::{Error, Result};
use crate::harness::regret::{plot_points, Observation, RegretTrace, ResultTable};

pub const CSV_HEADER: [&str; 8] = [
    "function",
    "policy",
    "seed",
    "step",
    "x",
    "y",
    "regret",
    "elapsed-ms",
];

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOTDATA_FILE: &str = "plotdata.csv";
pub const SCHEMA_VERSION: u32 = 1;

/// `<function>__<policy>.csv`
pub fn results_file_name(function: &str, policy: PolicyKind) -> String {
    format!("{function}__{policy}.csv")
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::invalid(format!("line {line}: bad {what} {field:?}")))
}

/// Writes every observation of `traces` to one CSV file.
pub fn write_csv(path: &Path, traces: &[RegretTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for t in traces {
        for o in &t.observations {
            let x: Vec<String> = o.x.iter().map(|&v| real(v)).collect();
            w.write_record([
                t.function.clone(),
                t.policy.to_string(),
                t.seed.to_string(),
                o.step.to_string(),
                x.join(";"),
                real(o.y),
                real(o.regret),
                format!("{:.3}", o.elapsed_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], regrouping rows into traces in
/// order of first appearance.
pub fn read_csv(path: &Path) -> Result<Vec<RegretTrace>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::invalid(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut traces: Vec<RegretTrace> = Vec::new();
    let mut index: BTreeMap<(String, String, u64), usize> = BTreeMap::new();
    for record in r.records() {
        let rec = record?;
        let line = rec.position().map_or(0, |p| p.line());
        let policy: PolicyKind = rec[1].parse()?;
        let seed: u64 = rec[2]
            .parse()
            .map_err(|_| Error::invalid(format!("line {line}: bad seed {:?}", &rec[2])))?;
        let step: usize = rec[3]
            .parse()
            .map_err(|_| Error::invalid(format!("line {line}: bad step {:?}", &rec[3])))?;
        let x = rec[4]
            .split(';')
            .map(|v| parse_real(v, "coordinate", line))
            .collect::<Result<Vec<f64>>>()?;
        let obs = Observation {
            step,
            x,
            y: parse_real(&rec[5], "y", line)?,
            regret: parse_real(&rec[6], "regret", line)?,
            elapsed_ms: parse_real(&rec[7], "elapsed-ms", line)?,
        };
        let key = (rec[0].to_string(), policy.to_string(), seed);
        let i = *index.entry(key).or_insert_with(|| {
            traces.push(RegretTrace {
                function: rec[0].to_string(),
                policy,
                seed,
                observations: Vec::new(),
                error: None,
            });
            traces.len() - 1
        });
        traces[i].observations.push(obs);
    }
    Ok(traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeedError {
    seed: u64,
    error: String,
}

fn errors_file_name(function: &str, policy: PolicyKind) -> String {
    format!("{function}__{policy}.errors.json")
}

/// Writes one CSV per (function, policy) into `dir`, plus an
/// `.errors.json` next to it when some seed stopped early.
/// Returns the CSV paths written.
pub fn write_results(dir: &Path, traces: &[RegretTrace]) -> Result<Vec<PathBuf>> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to write"));
    }
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(String, String), Vec<RegretTrace>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.function.clone(), t.policy.to_string()))
            .or_default()
            .push(t.clone());
    }
    let mut written = Vec::new();
    for group in groups.values() {
        let (function, policy) = (&group[0].function, group[0].policy);
        let path = dir.join(results_file_name(function, policy));
        write_csv(&path, group)?;
        written.push(path);
        let errors: Vec<SeedError> = group
            .iter()
            .filter_map(|t| {
                t.error.as_ref().map(|e| SeedError {
                    seed: t.seed,
                    error: e.clone(),
                })
            })
            .collect();
        let err_path = dir.join(errors_file_name(function, policy));
        if errors.is_empty() {
            if err_path.exists() {
                fs::remove_file(&err_path)?;
            }
        } else {
            fs::write(&err_path, serde_json::to_string_pretty(&errors)?)?;
        }
    }
    Ok(written)
}

/// Loads every `*__*.csv` result file in `dir`, with recorded seed errors.
pub fn load_dir(dir: &Path) -> Result<Vec<RegretTrace>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains("__"))
        })
        .collect();
    paths.sort();
    let mut traces = Vec::new();
    for path in paths {
        let mut group = read_csv(&path)?;
        let err_path = path.with_extension("errors.json");
        if err_path.exists() {
            let errors: Vec<SeedError> = serde_json::from_str(&fs::read_to_string(&err_path)?)?;
            for e in errors {
                match group.iter_mut().find(|t| t.seed == e.seed) {
                    Some(t) => t.error = Some(e.error),
                    None => log::warn!("{}: seed {} has no rows", err_path.display(), e.seed),
                }
            }
        }
        traces.append(&mut group);
    }
    if traces.is_empty() {
        return Err(Error::invalid(format!("no result files in {}", dir.display())));
    }
    Ok(traces)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub table: ResultTable,
    /// Seeds excluded from the table because they stopped early.
    #[serde(default)]
    pub errors: Vec<String>,
}

impl Summary {
    pub fn new(table: ResultTable, traces: &[RegretTrace]) -> Self {
        let errors = traces
            .iter()
            .filter_map(|t| {
                t.error
                    .as_ref()
                    .map(|e| format!("{}/{} seed {}: {e}", t.function, t.policy, t.seed))
            })
            .collect();
        Self {
            version: SCHEMA_VERSION,
            table,
            errors,
        }
    }
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(path)
}

/// Per-step mean regret and standard error:
/// `function,policy,step,mean-regret,std-error,seeds`.
pub fn write_plotdata(path: &Path, traces: &[RegretTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["function", "policy", "step", "mean-regret", "std-error", "seeds"])?;
    for p in plot_points(traces) {
        w.write_record([
            p.function,
            p.policy.to_string(),
            p.step.to_string(),
            real(p.mean_regret),
            real(p.std_error),
            p.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text rendering of a table, one row per (function, policy).
pub fn render_table(table: &ResultTable) -> String {
    let mut out = String::new();
    let Some(first) = table.rows.first() else {
        return "(empty table)\n".into();
    };
    let mut header = format!("{:<14} {:<8} {:>5}", "function", "policy", "seeds");
    for w in &first.windows {
        header += &format!(" {:>18}", format!("{}-{}", w.start, w.end));
    }
    header += &format!(" {:>18}\n", "final");
    out += &header;
    for row in &table.rows {
        out += &format!("{:<14} {:<8} {:>5}", row.function, row.policy.as_str(), row.seeds);
        for w in &row.windows {
            out += &format!(" {:>18}", format!("{:.2} ± {:.2}", w.mean, w.std_error));
        }
        out += &format!(
            " {:>18}\n",
            format!("{:.4} ± {:.4}", row.final_regret, row.final_regret_std_error)
        );
    }
    out
}

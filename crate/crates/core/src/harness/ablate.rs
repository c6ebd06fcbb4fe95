use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use super::run::{load_teacher, run_distill_tagged, run_train_teacher, write_atomic};
use crate::error::{Result, TfdError};
use crate::metrics::budgeted_best;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted config path.
    pub key: String,
    pub values: Vec<Value>,
}

/// Cartesian grid over config overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    /// Metric reported per budget; minimized.
    #[serde(default = "default_metric")]
    pub metric: String,
    /// Overrides `eval.budgets` of the base config.
    #[serde(default)]
    pub budgets: Option<Vec<usize>>,
}

fn default_metric() -> String {
    "eval/frechet".to_string()
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TfdError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(TfdError::Config("ablation grid needs at least one axis, each with values".into()));
        }
        if self.budgets.as_ref().is_some_and(Vec::is_empty) {
            return Err(TfdError::Config("ablation budgets list is empty".into()));
        }
        Ok(())
    }

    /// Axis assignments of every cell, first axis varying slowest.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut out = vec![Vec::new()];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut cell = prefix.clone();
                        cell.push((axis.key.clone(), v.clone()));
                        cell
                    })
                })
                .collect();
        }
        out
    }
}

/// One table entry: a cell's budgeted-best metric at one budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: usize,
    pub hash: String,
    pub axes: Vec<(String, Value)>,
    pub budget: usize,
    pub best: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub metric: String,
    pub axis_keys: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// Cells skipped because an earlier cell had the same config hash.
    pub duplicates: usize,
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,hash,");
        for k in &self.axis_keys {
            out.push_str(&csv_field(&Value::String(k.clone())));
            out.push(',');
        }
        out.push_str("budget,best,status\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},", r.cell, &r.hash[..12]));
            for (_, v) in &r.axes {
                out.push_str(&csv_field(v));
                out.push(',');
            }
            let best = r.best.map(|b| b.to_string()).unwrap_or_default();
            let status = match &r.error {
                Some(e) => csv_field(&Value::String(format!("error: {e}"))),
                None => "ok".to_string(),
            };
            out.push_str(&format!("{},{best},{status}\n", r.budget));
        }
        out
    }
}

/// Runs every distinct cell of `grid` on top of `base` and writes
/// `ablation.csv` under `base.out`. Teachers are shared between cells that
/// agree on the teacher-relevant settings. A failing cell is recorded in
/// the table and the grid continues.
pub fn run_ablation(base: &RunConfig, grid: &GridSpec) -> Result<AblationTable> {
    grid.validate()?;
    let budgets = grid.budgets.clone().unwrap_or_else(|| base.eval.budgets.clone());
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut duplicates = 0;
    for (index, assignment) in grid.cells().into_iter().enumerate() {
        let (mut cfg, failure) = match base.with_values(&assignment) {
            Ok(c) => (c, None),
            Err(e) => (base.clone(), Some(e.to_string())),
        };
        let hash = cfg.hash();
        if failure.is_none() && !seen.insert(hash.clone()) {
            duplicates += 1;
            continue;
        }
        let result = match failure {
            Some(e) => Err(e),
            None => run_cell(base, &mut cfg, &hash, &assignment, &grid.metric, &budgets).map_err(|e| e.to_string()),
        };
        for &budget in &budgets {
            let (best, error) = match &result {
                Ok(table) => (table.get(&budget).copied(), None),
                Err(e) => (None, Some(e.clone())),
            };
            rows.push(AblationRow {
                cell: index,
                hash: hash.clone(),
                axes: assignment.clone(),
                budget,
                best,
                error,
            });
        }
    }
    let table = AblationTable {
        metric: grid.metric.clone(),
        axis_keys: grid.axes.iter().map(|a| a.key.clone()).collect(),
        rows,
        duplicates,
    };
    write_atomic(&base.out.join("ablation.csv"), table.to_csv().as_bytes())?;
    Ok(table)
}

fn run_cell(
    base: &RunConfig,
    cfg: &mut RunConfig,
    hash: &str,
    assignment: &[(String, Value)],
    metric: &str,
    budgets: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let teacher_path: PathBuf = base.out.join("teachers").join(format!("{}.ckpt", &cfg.teacher_hash()[..16]));
    if load_teacher(&teacher_path, cfg).is_err() {
        let mut tcfg = cfg.clone();
        tcfg.out = base.out.join("teachers").join(&cfg.teacher_hash()[..16]);
        run_train_teacher(&tcfg)?;
        std::fs::copy(tcfg.out.join("teacher.ckpt"), &teacher_path)?;
    }
    cfg.out = base.out.join("cells").join(&hash[..12]);
    let tags = assignment.iter().cloned().collect();
    let outcome = run_distill_tagged(cfg, &teacher_path, false, Some(tags))?;
    let trace = outcome.log.series(metric);
    if trace.is_empty() {
        return Err(TfdError::Config(format!("metric `{metric}` was never logged")));
    }
    budgeted_best(&trace, budgets)
}

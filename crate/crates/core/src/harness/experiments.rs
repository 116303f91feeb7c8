//! Multi-run experiments: ablations, hyperparameter sweeps, and rankings.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::{write_csv, CsvRow};
use super::config::{ExperimentConfig, SweepParam, Variant};
use super::run::{run_in, Aggregate, Execution, SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const ABLATION_FILE: &str = "ablation.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARE_FILE: &str = "compare.csv";

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub status: String,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub delta_sp_mean: Option<f64>,
    pub delta_sp_std: Option<f64>,
    pub delta_sp_median: Option<f64>,
    pub delta_eo_mean: Option<f64>,
    pub delta_eo_std: Option<f64>,
    pub schema_version: u32,
}

impl CsvRow for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "label",
        "status",
        "auc_mean",
        "auc_std",
        "delta_sp_mean",
        "delta_sp_std",
        "delta_sp_median",
        "delta_eo_mean",
        "delta_eo_std",
        "schema_version",
    ];
}

impl SummaryRow {
    fn new(label: String, outcome: &Result<Aggregate>) -> Self {
        let (status, a) = match outcome {
            Ok(a) if a.auc.is_none() => ("failed".to_string(), Some(a)),
            Ok(a) if a.partial => ("partial".to_string(), Some(a)),
            Ok(a) => ("ok".to_string(), Some(a)),
            Err(e) => (format!("failed: {e}"), None),
        };
        let pick = |f: fn(&Aggregate) -> Option<f64>| a.and_then(f);
        SummaryRow {
            label,
            status,
            auc_mean: pick(|a| a.auc.map(|s| s.mean)),
            auc_std: pick(|a| a.auc.map(|s| s.std)),
            delta_sp_mean: pick(|a| a.delta_sp.map(|s| s.mean)),
            delta_sp_std: pick(|a| a.delta_sp.map(|s| s.std)),
            delta_sp_median: pick(|a| a.delta_sp.map(|s| s.median)),
            delta_eo_mean: pick(|a| a.delta_eo.map(|s| s.mean)),
            delta_eo_std: pick(|a| a.delta_eo.map(|s| s.std)),
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// Runs `cfg` once per variant under `out_dir/<variant>` and writes
/// `ablation.csv`. All variants share seeds, data and initialization.
pub fn ablate(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    out_dir: &Path,
    mode: Execution,
) -> Result<Vec<(Variant, Result<Aggregate>)>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to ablate".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(Variant, Result<Aggregate>)> = variants
        .iter()
        .map(|&v| {
            let c = ExperimentConfig { variant: v, name: v.to_string(), ..cfg.clone() };
            (v, run_in(&c, &out_dir.join(v.name()), mode))
        })
        .collect();
    write_csv(&out_dir.join(ABLATION_FILE), results.iter().map(|(v, r)| SummaryRow::new(v.to_string(), r)))?;
    Ok(results)
}

/// One axis of a sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl std::str::FromStr for GridAxis {
    type Err = Error;

    /// `lambda=5,10,15,20`
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) =
            s.split_once('=').ok_or_else(|| Error::Config(format!("grid axis `{s}` must look like `lambda=5,10`")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("grid value `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridAxis { param: name.trim().parse()?, values })
    }
}

#[derive(Debug)]
pub struct SweepCell {
    pub index: usize,
    pub values: Vec<(SweepParam, f64)>,
    pub dir: PathBuf,
    pub outcome: Result<Aggregate>,
}

fn cartesian(axes: &[GridAxis]) -> Vec<Vec<(SweepParam, f64)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((axis.param, v));
                    p
                })
            })
            .collect()
    })
}

/// Runs every grid cell under `out_dir/cell_<i>` and writes `sweep.csv`
/// with one row per cell, the axis values leading. A failing cell is
/// recorded and the sweep moves on.
pub fn sweep(cfg: &ExperimentConfig, axes: &[GridAxis], out_dir: &Path, mode: Execution) -> Result<Vec<SweepCell>> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].iter().any(|b| b.param == a.param) {
            return Err(Error::Config(format!("`{}` appears twice in the grid", a.param.name())));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells: Vec<SweepCell> = cartesian(axes)
        .into_iter()
        .enumerate()
        .map(|(index, values)| {
            let mut c = ExperimentConfig { name: format!("cell_{index}"), ..cfg.clone() };
            for &(p, v) in &values {
                c.set_param(p, v);
            }
            let dir = out_dir.join(&c.name);
            let outcome = run_in(&c, &dir, mode);
            SweepCell { index, values, dir, outcome }
        })
        .collect();
    write_sweep_csv(&out_dir.join(SWEEP_FILE), axes, &cells)?;
    Ok(cells)
}

fn write_sweep_csv(path: &Path, axes: &[GridAxis], cells: &[SweepCell]) -> Result<()> {
    let parse = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(parse)?;
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| a.param.name().to_string()));
    header.extend(SummaryRow::HEADER.iter().skip(1).map(|s| s.to_string()));
    w.write_record(&header).map_err(parse)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for c in cells {
        let row = SummaryRow::new(String::new(), &c.outcome);
        let mut rec = vec![c.index.to_string()];
        rec.extend(c.values.iter().map(|(_, v)| v.to_string()));
        rec.push(row.status);
        rec.extend(
            [
                row.auc_mean,
                row.auc_std,
                row.delta_sp_mean,
                row.delta_sp_std,
                row.delta_sp_median,
                row.delta_eo_mean,
                row.delta_eo_std,
            ]
            .map(opt),
        );
        rec.push(row.schema_version.to_string());
        w.write_record(&rec).map_err(parse)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ranks `values` from 1; `higher_is_better` flips the order. Ties share
/// the mean of the ranks they span.
pub fn average_ranks(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| if higher_is_better { -values[i] } else { values[i] };
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && key(order[end]) == key(order[k]) {
            end += 1;
        }
        let r = (k + 1 + end) as f64 / 2.0;
        for &i in &order[k..end] {
            ranks[i] = r;
        }
        k = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: String,
    pub variant: String,
    pub auc: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
    pub rank_auc: f64,
    pub rank_delta_sp: f64,
    pub rank_delta_eo: f64,
    pub avg_rank: f64,
    pub schema_version: u32,
}

impl CsvRow for CompareRow {
    const HEADER: &'static [&'static str] = &[
        "run",
        "variant",
        "auc",
        "delta_sp",
        "delta_eo",
        "rank_auc",
        "rank_delta_sp",
        "rank_delta_eo",
        "avg_rank",
        "schema_version",
    ];
}

/// Ranks runs per metric on their mean test values (AUC descending, the
/// fairness gaps ascending) and averages the three ranks.
pub fn compare(runs: &[(String, Aggregate)]) -> Result<Vec<CompareRow>> {
    if runs.len() < 2 {
        return Err(Error::Comparison("need at least two runs".into()));
    }
    let (_, first) = &runs[0];
    let mut means = Vec::new();
    for (label, a) in runs {
        if a.dataset != first.dataset || a.backbone != first.backbone {
            return Err(Error::Comparison(format!(
                "{label} is {}/{}, expected {}/{}",
                a.dataset, a.backbone, first.dataset, first.backbone
            )));
        }
        match (a.auc, a.delta_sp, a.delta_eo) {
            (Some(x), Some(y), Some(z)) => means.push([x.mean, y.mean, z.mean]),
            _ => return Err(Error::Comparison(format!("{label} has no completed seeds"))),
        }
    }
    let col = |k: usize| means.iter().map(|m| m[k]).collect::<Vec<_>>();
    let r_auc = average_ranks(&col(0), true);
    let r_sp = average_ranks(&col(1), false);
    let r_eo = average_ranks(&col(2), false);
    Ok(runs
        .iter()
        .enumerate()
        .map(|(i, (label, a))| CompareRow {
            run: label.clone(),
            variant: a.variant.clone(),
            auc: means[i][0],
            delta_sp: means[i][1],
            delta_eo: means[i][2],
            rank_auc: r_auc[i],
            rank_delta_sp: r_sp[i],
            rank_delta_eo: r_eo[i],
            avg_rank: (r_auc[i] + r_sp[i] + r_eo[i]) / 3.0,
            schema_version: SCHEMA_VERSION,
        })
        .collect())
}

/// Reads each run directory's aggregate and ranks them.
pub fn compare_dirs(dirs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    let runs = dirs.iter().map(|d| Ok((d.display().to_string(), Aggregate::read(d)?))).collect::<Result<Vec<_>>>()?;
    compare(&runs)
}

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> Result<()> {
    write_csv(path, rows.iter().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::Summary;

    fn agg(dataset: &str, auc: f64, sp: f64, eo: f64) -> Aggregate {
        let s = |m| Some(Summary { mean: m, std: 0.0, median: m });
        Aggregate {
            schema_version: SCHEMA_VERSION,
            version: String::new(),
            name: String::new(),
            variant: "full".into(),
            dataset: dataset.into(),
            backbone: "gcn".into(),
            config_hash: String::new(),
            seeds: vec![0],
            per_seed: vec![],
            failed: vec![],
            partial: false,
            auc: s(auc),
            delta_sp: s(sp),
            delta_eo: s(eo),
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.3, 0.2], false), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[0.3, 0.1, 0.2], true), vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn dominating_run_ranks_first() {
        let rows = compare(&[("a".into(), agg("d", 0.9, 0.1, 0.1)), ("b".into(), agg("d", 0.8, 0.2, 0.3))]).unwrap();
        assert_eq!((rows[0].avg_rank, rows[1].avg_rank), (1.0, 2.0));
    }

    #[test]
    fn self_comparison_ties() {
        let a = agg("d", 0.7, 0.1, 0.2);
        let rows = compare(&[("a".into(), a.clone()), ("a2".into(), a)]).unwrap();
        assert!(rows.iter().all(|r| r.avg_rank == 1.5));
    }

    #[test]
    fn three_runs_match_hand_ranking() {
        let rows = compare(&[
            ("x".into(), agg("d", 0.70, 0.05, 0.10)),
            ("y".into(), agg("d", 0.75, 0.10, 0.10)),
            ("z".into(), agg("d", 0.65, 0.02, 0.20)),
        ])
        .unwrap();
        // auc: y1 x2 z3; sp: z1 x2 y3; eo: x,y 1.5, z3.
        let avg: Vec<f64> = rows.iter().map(|r| r.avg_rank).collect();
        assert_eq!(avg, vec![(2.0 + 2.0 + 1.5) / 3.0, (1.0 + 3.0 + 1.5) / 3.0, (3.0 + 1.0 + 3.0) / 3.0]);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let r = compare(&[("a".into(), agg("d", 0.7, 0.1, 0.1)), ("b".into(), agg("e", 0.7, 0.1, 0.1))]);
        assert!(matches!(r, Err(Error::Comparison(_))));
        assert!(matches!(compare(&[("a".into(), agg("d", 0.7, 0.1, 0.1))]), Err(Error::Comparison(_))));
    }

    #[test]
    fn grid_axis_parsing_and_product() {
        let a: GridAxis = "lambda=5,10".parse().unwrap();
        let b: GridAxis = "beta=0.1,1,2".parse().unwrap();
        assert_eq!(a.values, vec![5.0, 10.0]);
        assert_eq!(cartesian(&[a, b]).len(), 6);
        assert!("mu=1".parse::<GridAxis>().is_err());
        assert!("lambda".parse::<GridAxis>().is_err());
    }
}

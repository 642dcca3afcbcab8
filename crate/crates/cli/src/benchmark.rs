//! Suite sweeps: every cell over `--seeds` seeds, aggregated to mean and std.

use std::path::Path;

use inn_core::dataio::{load_suite, RunConfig};
use inn_core::nets::ModelKind;
use inn_core::objectives::MetricReport;
use inn_core::pipeline::{evaluate, SplitName};
use inn_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{io_err, train_into, write_json, CliError, CliResult};
use crate::BenchmarkArgs;

const METRICS: [&str; 4] = ["rmse", "picp", "pinaw", "cwc"];

#[derive(Debug, Clone, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRow {
    pub cell: String,
    pub dataset: String,
    pub model: String,
    pub strategy: String,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub status: String,
    pub rmse: Option<MeanStd>,
    pub picp: Option<MeanStd>,
    pub pinaw: Option<MeanStd>,
    pub cwc: Option<MeanStd>,
    pub error: Option<String>,
}

/// Sample mean and standard deviation, `std = 0` for a single value.
pub fn mean_std(v: &[f64]) -> MeanStd {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    MeanStd { mean, std }
}

fn one_run(cfg: &RunConfig, dir: &Path) -> CliResult<MetricReport> {
    let (_, out) = train_into(cfg, dir)?;
    let ev = evaluate(&out.model, &out.prepared.series, SplitName::Test)?;
    write_json(&dir.join("metrics.json"), &ev.metrics)?;
    Ok(ev.metrics)
}

fn model_label(cfg: &RunConfig) -> String {
    let kind = match cfg.model.kind {
        ModelKind::Lstm => "ilstm",
        ModelKind::Node => "inode",
        ModelKind::Feedforward => "inn",
    };
    format!("{kind}-{}", cfg.model.hidden.len())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[CellRow]) -> String {
    let mut out = String::from("cell,dataset,model,strategy,alpha,seeds,status");
    for m in METRICS {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push_str(",error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            csv_field(&r.cell),
            csv_field(&r.dataset),
            r.model,
            r.strategy,
            r.alpha,
            r.seeds.len(),
            r.status
        ));
        for m in [&r.rmse, &r.picp, &r.pinaw, &r.cwc] {
            match m {
                Some(ms) => out.push_str(&format!(",{},{}", ms.mean, ms.std)),
                None => out.push_str(",,"),
            }
        }
        out.push_str(&format!(",{}\n", csv_field(r.error.as_deref().unwrap_or(""))));
    }
    out
}

pub fn run(a: BenchmarkArgs) -> CliResult {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let suite = load_suite(&a.suite)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let stem = a.suite.file_stem().and_then(|s| s.to_str()).unwrap_or("suite");
        a.output_root.join(format!("benchmark-{stem}"))
    });
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;

    let cells: Vec<(String, RunConfig)> = (0..suite.cells.len()).map(|i| suite.cell(i)).collect::<Result<_, Error>>()?;
    let tasks: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..a.seeds).map(move |s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", a.jobs)))?;
    let results: Vec<CliResult<MetricReport>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, s)| {
                let (name, base) = &cells[c];
                let mut cfg = base.clone();
                cfg.seed = base.seed + s;
                one_run(&cfg, &out.join(name).join(format!("seed{}", cfg.seed)))
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(cells.len());
    for (c, (name, cfg)) in cells.iter().enumerate() {
        let runs: Vec<&CliResult<MetricReport>> =
            tasks.iter().zip(&results).filter(|((tc, _), _)| *tc == c).map(|(_, r)| r).collect();
        let seeds: Vec<u64> = (0..a.seeds).map(|s| cfg.seed + s).collect();
        let mut row = CellRow {
            cell: name.clone(),
            dataset: cfg.dataset.label(),
            model: model_label(cfg),
            strategy: cfg.strategy.to_string(),
            alpha: cfg.alpha,
            seeds,
            status: "ok".into(),
            rmse: None,
            picp: None,
            pinaw: None,
            cwc: None,
            error: None,
        };
        let errors: Vec<String> = runs.iter().filter_map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
        if errors.is_empty() {
            let ms: Vec<&MetricReport> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
            let col = |f: fn(&MetricReport) -> f64| Some(mean_std(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()));
            row.rmse = col(|m| m.rmse);
            row.picp = col(|m| m.picp);
            row.pinaw = col(|m| m.pinaw);
            row.cwc = col(|m| m.cwc);
        } else {
            eprintln!("cell {name} failed: {}", errors[0]);
            row.status = "failed".into();
            row.error = Some(errors.join("; "));
        }
        rows.push(row);
    }

    let csv_path = out.join("results.csv");
    std::fs::write(&csv_path, to_csv(&rows)).map_err(|e| io_err(&csv_path, e))?;
    write_json(&out.join("results.json"), &rows)?;
    println!("{}", csv_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        let m = mean_std(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[5.0]).std, 0.0);
    }

    #[test]
    fn csv_quotes_errors_and_leaves_failed_metrics_empty() {
        let row = CellRow {
            cell: "c".into(),
            dataset: "d".into(),
            model: "inode-1".into(),
            strategy: "joint".into(),
            alpha: 0.9,
            seeds: vec![0],
            status: "failed".into(),
            rmse: None,
            picp: None,
            pinaw: None,
            cwc: None,
            error: Some("bad, \"file\"".into()),
        };
        let csv = to_csv(&[row]);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("c,d,inode-1,joint,0.9,1,failed,,,,,,,,,"));
        assert!(line.ends_with("\"bad, \"\"file\"\"\""));
    }
}

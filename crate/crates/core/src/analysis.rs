//! Parameter elasticity `|hi - lo| / |theta|` and heatmap export.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalMatrix;
use crate::nets::{CrispParams, IntervalParams, ModelSpec, TensorRole};

/// Denominator guard for near-zero parameters.
pub const ELASTICITY_EPS: f64 = 1e-8;

/// Elementwise elasticity. Entries whose parameter is below the guard while
/// the interval has nonzero width are flagged and stored as 0.
pub fn elasticity_matrix(theta: &Array2<f64>, iv: &IntervalMatrix) -> Result<(Array2<f64>, Array2<bool>)> {
    if theta.dim() != iv.dim() {
        return Err(Error::shape("elasticity", format!("{:?} parameter vs {:?} interval", theta.dim(), iv.dim())));
    }
    let w = iv.width();
    let mut values = Array2::zeros(theta.dim());
    let mut unbounded = Array2::from_elem(theta.dim(), false);
    for ((idx, &t), &wd) in theta.indexed_iter().zip(w.iter()) {
        let wd = wd.abs();
        if t.abs() < ELASTICITY_EPS && wd > 0.0 {
            unbounded[idx] = true;
        } else {
            values[idx] = wd / t.abs().max(ELASTICITY_EPS);
        }
    }
    Ok((values, unbounded))
}

/// Set-level elasticity with Frobenius norms; `None` when unbounded.
pub fn set_elasticity(theta: &Array2<f64>, iv: &IntervalMatrix) -> Result<Option<f64>> {
    if theta.dim() != iv.dim() {
        return Err(Error::shape("elasticity", format!("{:?} parameter vs {:?} interval", theta.dim(), iv.dim())));
    }
    let wn = iv.width().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tn = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if tn < ELASTICITY_EPS && wn > 0.0 {
        return Ok(None);
    }
    Ok(Some(wn / tn.max(ELASTICITY_EPS)))
}

/// Column sums of an `out x in` elasticity matrix.
pub fn channelwise(values: &Array2<f64>) -> Vec<f64> {
    values.columns().into_iter().map(|c| c.iter().sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_id: String,
    pub strategy: String,
    pub seed: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorElasticity {
    pub name: String,
    pub values: Array2<f64>,
    pub unbounded: Array2<bool>,
    pub set_level: Option<f64>,
}

/// One layer block: rows are output channels, columns are input channels
/// followed by recurrent channels and the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Array2<f64>,
    pub unbounded: Array2<bool>,
}

impl Heatmap {
    pub fn channelwise(&self) -> Vec<f64> {
        channelwise(&self.values)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec!["output".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("unbounded".into());
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![row.clone()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            let flagged: Vec<&str> =
                self.columns.iter().enumerate().filter(|&(j, _)| self.unbounded[[i, j]]).map(|(_, c)| c.as_str()).collect();
            rec.push(flagged.join(";"));
            w.write_record(&rec).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn channelwise_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["channel", "elasticity", "unbounded"]).map_err(csv_err)?;
        for (j, (c, v)) in self.columns.iter().zip(self.channelwise()).enumerate() {
            let n = self.unbounded.column(j).iter().filter(|&&b| b).count();
            w.write_record([c.clone(), v.to_string(), n.to_string()]).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Parses a heatmap CSV as written by [`Heatmap::to_csv`].
pub fn parse_heatmap(text: &str, name: &str) -> Result<Heatmap> {
    let err = |row: usize, reason: String| Error::Csv { path: name.to_string(), row, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| err(1, e.to_string()))?,
        None => return Err(err(0, "missing header".into())),
    };
    let width = header.len();
    if width < 3 || &header[0] != "output" || &header[width - 1] != "unbounded" {
        return Err(err(1, "header must read `output,<channels...>,unbounded`".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).take(width - 2).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut flat = Vec::new();
    let mut flags = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() != width {
            return Err(err(row, format!("ragged row: {} columns, expected {width}", rec.len())));
        }
        rows.push(rec[0].to_string());
        for j in 1..width - 1 {
            let v: f64 = rec[j].parse().map_err(|_| err(row, format!("non-numeric cell `{}`", &rec[j])))?;
            if !(v >= 0.0) || v.is_infinite() {
                return Err(err(row, format!("elasticity must be finite and nonnegative, got `{}`", &rec[j])));
            }
            flat.push(v);
        }
        let marked: Vec<&str> = rec[width - 1].split(';').filter(|s| !s.is_empty()).collect();
        for m in &marked {
            if !columns.iter().any(|c| c == m) {
                return Err(err(row, format!("unknown channel `{m}` in unbounded list")));
            }
        }
        flags.extend(columns.iter().map(|c| marked.contains(&c.as_str())));
    }
    let shape = (rows.len(), columns.len());
    Ok(Heatmap {
        name: name.to_string(),
        rows,
        columns,
        values: Array2::from_shape_vec(shape, flat).expect("row-major cells"),
        unbounded: Array2::from_shape_vec(shape, flags).expect("row-major flags"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityReport {
    pub meta: ReportMeta,
    pub tensors: Vec<TensorElasticity>,
    pub heatmaps: Vec<Heatmap>,
}

/// First-layer input labels with output lags first, then input lags.
pub fn input_labels(spec: &ModelSpec) -> (Vec<String>, Vec<usize>) {
    let labels = spec.lags.labels();
    let nu = spec.lags.n_x + 1;
    let order: Vec<usize> = (nu..labels.len()).chain(0..nu).collect();
    (order.iter().map(|&i| labels[i].clone()).collect(), order)
}

fn block_name(tensor: &str) -> String {
    if let Some((layer, rest)) = tensor.split_once('.') {
        if let Some(gate) = rest.split_once('_').map(|(_, g)| g) {
            return format!("{layer}.{gate}");
        }
        return layer.to_string();
    }
    tensor.to_string()
}

pub fn analyze(spec: &ModelSpec, theta: &CrispParams, iv: &IntervalParams, meta: ReportMeta) -> Result<ElasticityReport> {
    theta.check(spec)?;
    if iv.tensors.len() != theta.tensors.len() {
        return Err(Error::shape("analyze", "interval and crisp parameter counts differ"));
    }
    let layout = spec.layout();
    let mut tensors = Vec::with_capacity(layout.len());
    for ((info, t), i) in layout.iter().zip(&theta.tensors).zip(&iv.tensors) {
        let (values, unbounded) = elasticity_matrix(t, i)?;
        tensors.push(TensorElasticity { name: info.name.clone(), values, unbounded, set_level: set_elasticity(t, i)? });
    }
    let (first, order) = input_labels(spec);
    let mut heatmaps = Vec::new();
    let mut block: Vec<usize> = Vec::new();
    for (k, info) in layout.iter().enumerate() {
        block.push(k);
        if info.role != TensorRole::Bias {
            continue;
        }
        let rows: Vec<String> = if info.is_output {
            if spec.outputs == 1 { vec!["y(k)".into()] } else { (0..spec.outputs).map(|i| format!("out[{i}]")).collect() }
        } else {
            (0..info.rows).map(|i| format!("h{}[{i}]", info.layer)).collect()
        };
        let mut columns = Vec::new();
        let mut parts = Vec::new();
        let mut flags = Vec::new();
        for &b in &block {
            let ti = &layout[b];
            let te = &tensors[b];
            match ti.role {
                TensorRole::Weight if ti.layer == 0 && !ti.is_output => {
                    columns.extend(first.iter().cloned());
                    parts.push(te.values.select(ndarray::Axis(1), &order));
                    flags.push(te.unbounded.select(ndarray::Axis(1), &order));
                }
                role => {
                    match role {
                        TensorRole::Weight => columns.extend((0..ti.cols).map(|j| format!("h{}[{j}]", ti.layer - 1))),
                        TensorRole::Recurrent => columns.extend((0..ti.cols).map(|j| format!("h{}[{j}](k-1)", ti.layer))),
                        TensorRole::Bias => columns.push("bias".into()),
                    }
                    parts.push(te.values.clone());
                    flags.push(te.unbounded.clone());
                }
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let fviews: Vec<_> = flags.iter().map(|p| p.view()).collect();
        heatmaps.push(Heatmap {
            name: block_name(&info.name),
            rows,
            columns,
            values: ndarray::concatenate(ndarray::Axis(1), &views).map_err(|e| Error::shape("analyze", e.to_string()))?,
            unbounded: ndarray::concatenate(ndarray::Axis(1), &fviews).map_err(|e| Error::shape("analyze", e.to_string()))?,
        });
        block.clear();
    }
    Ok(ElasticityReport { meta, tensors, heatmaps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub layer: String,
    pub heatmap: String,
    pub channelwise: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapIndex {
    pub meta: ReportMeta,
    pub files: Vec<IndexEntry>,
    /// Set-level elasticity per tensor; `null` when unbounded.
    pub set_level: Vec<(String, Option<f64>)>,
}

/// Writes one heatmap and one channelwise CSV per layer plus `index.json`.
pub fn export_heatmap(report: &ElasticityReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.heatmaps.is_empty() {
        return Err(Error::Empty("elasticity report has no layers"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for h in &report.heatmaps {
        let heat = format!("{}.csv", h.name);
        let chan = format!("{}.channelwise.csv", h.name);
        for (file, body) in [(&heat, h.to_csv()?), (&chan, h.channelwise_csv()?)] {
            let p = dir.join(file);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        files.push(IndexEntry { layer: h.name.clone(), heatmap: heat, channelwise: chan });
    }
    let index = HeatmapIndex {
        meta: report.meta.clone(),
        files,
        set_level: report.tensors.iter().map(|t| (t.name.clone(), t.set_level)).collect(),
    };
    let p = dir.join("index.json");
    std::fs::write(&p, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

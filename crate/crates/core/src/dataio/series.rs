use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measured input/output sequence `{(u(k), ŷ(k))}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub name: String,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::shape("series", format!("u has {} samples, y has {}", u.len(), y.len())));
        }
        if let Some(v) = u.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::arg("series", format!("non-finite sample {v}")));
        }
        Ok(RawSeries { name: name.into(), u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> RawSeries {
        RawSeries { name: self.name.clone(), u: self.u[start..end].to_vec(), y: self.y[start..end].to_vec() }
    }
}

/// Parses two numeric columns `u, y`, one row per sample. A first row with a
/// non-numeric cell is taken as a header; `#` starts a comment line.
pub fn parse_csv(bytes: &[u8], name: &str) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let err = |row: usize, reason: String| Error::Csv { path: name.to_string(), row, reason };
    let (mut u, mut y) = (Vec::new(), Vec::new());
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < 2 {
            return Err(err(row, format!("expected at least 2 columns, found {}", rec.len())));
        }
        let parsed: Vec<Option<f64>> = rec.iter().take(2).map(|c| c.parse::<f64>().ok()).collect();
        if row == 1 && parsed.iter().any(Option::is_none) {
            width = Some(rec.len());
            continue;
        }
        match width {
            Some(w) if w != rec.len() => return Err(err(row, format!("ragged row: {} columns, expected {w}", rec.len()))),
            None => width = Some(rec.len()),
            _ => {}
        }
        for (col, v) in parsed.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {}
                Some(v) => return Err(err(row, format!("non-finite value {v} in column {}", col + 1))),
                None => return Err(err(row, format!("non-numeric cell `{}` in column {}", &rec[col], col + 1))),
            }
        }
        u.push(parsed[0].unwrap());
        y.push(parsed[1].unwrap());
    }
    if u.is_empty() {
        return Err(Error::Csv { path: name.to_string(), row: 0, reason: "no data rows".into() });
    }
    RawSeries::new(name, u, y)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    parse_csv(&bytes, name).map_err(|e| match e {
        Error::Csv { row, reason, .. } => Error::Csv { path: path.display().to_string(), row, reason },
        other => other,
    })
}

/// Writes `u,y` with a header.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["u", "y"]).map_err(io)?;
    for (u, y) in series.u.iter().zip(&series.y) {
        w.write_record([u.to_string(), y.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train/validation/test percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = SplitFractions { train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0 && *p <= 100.0)) {
            return Err(Error::arg("split", format!("percentages must lie in [0, 100], got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 100.0).abs() > 1e-9 {
            return Err(Error::arg("split", format!("percentages must sum to 100, got {total}")));
        }
        Ok(())
    }

    /// Segment lengths: rounded train and validation, remainder to test.
    pub fn lengths(&self, k: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let train = ((k as f64) * self.train / 100.0).round() as usize;
        let val = (((k as f64) * self.val / 100.0).round() as usize).min(k - train.min(k));
        let train = train.min(k);
        Ok((train, val, k - train - val))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: RawSeries,
    pub val: RawSeries,
    pub test: RawSeries,
}

/// Contiguous chronological split.
pub fn split(series: &RawSeries, fractions: &SplitFractions) -> Result<Splits> {
    let (a, b, _) = fractions.lengths(series.len())?;
    Ok(Splits {
        train: series.slice(0, a),
        val: series.slice(a, a + b),
        test: series.slice(a + b, series.len()),
    })
}

/// z-score statistics, fitted on the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean_u: f64,
    pub std_u: f64,
    pub mean_y: f64,
    pub std_y: f64,
    /// Number of training samples the statistics came from.
    pub fitted_samples: usize,
}

fn mean_std(v: &[f64], what: &'static str) -> Result<(f64, f64)> {
    if v.is_empty() {
        return Err(Error::Empty(what));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std < 1e-12 * mean.abs().max(1.0) {
        return Err(Error::ZeroStd(what));
    }
    Ok((mean, std))
}

/// Population mean and standard deviation of the training split.
pub fn zscore_fit(train: &RawSeries) -> Result<NormalizationStats> {
    let (mean_u, std_u) = mean_std(&train.u, "u")?;
    let (mean_y, std_y) = mean_std(&train.y, "y")?;
    Ok(NormalizationStats { mean_u, std_u, mean_y, std_y, fitted_samples: train.len() })
}

impl NormalizationStats {
    pub fn apply(&self, s: &RawSeries) -> RawSeries {
        RawSeries {
            name: s.name.clone(),
            u: s.u.iter().map(|v| (v - self.mean_u) / self.std_u).collect(),
            y: s.y.iter().map(|v| self.norm_y(*v)).collect(),
        }
    }

    pub fn norm_u(&self, v: f64) -> f64 {
        (v - self.mean_u) / self.std_u
    }

    pub fn norm_y(&self, v: f64) -> f64 {
        (v - self.mean_y) / self.std_y
    }

    pub fn invert_u(&self, v: f64) -> f64 {
        v * self.std_u + self.mean_u
    }

    pub fn invert_y(&self, v: f64) -> f64 {
        v * self.std_y + self.mean_y
    }

    pub fn invert(&self, s: &RawSeries) -> RawSeries {
        RawSeries {
            name: s.name.clone(),
            u: s.u.iter().map(|v| self.invert_u(*v)).collect(),
            y: s.y.iter().map(|v| self.invert_y(*v)).collect(),
        }
    }

    /// Inverts an output interval endpointwise.
    pub fn invert_interval(&self, lo: f64, hi: f64) -> (f64, f64) {
        (self.invert_y(lo), self.invert_y(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_examples() {
        let s = parse_csv(b"1,2\n3,4\n5,6", "t").unwrap();
        assert_eq!((s.u, s.y), (vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]));
        let s = parse_csv(b"u,y\n1,2\n3,4\n", "t").unwrap();
        assert_eq!(s.len(), 2);
        let s = parse_csv(b"# comment\n u , y \n 1 , 2 \n\n3,4\n", "t").unwrap();
        assert_eq!(s.y, vec![2.0, 4.0]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let e = parse_csv(b"1,2\n3,NaN\n", "t").unwrap_err();
        assert!(matches!(e, Error::Csv { row: 2, .. }), "{e}");
        let e = parse_csv(b"1,2\n3,abc\n", "t").unwrap_err();
        assert!(matches!(e, Error::Csv { row: 2, .. }));
        let e = parse_csv(b"1,2\n3,4,5\n", "t").unwrap_err();
        assert!(e.to_string().contains("ragged"), "{e}");
        assert!(parse_csv(b"1\n2\n", "t").is_err());
        assert!(parse_csv(b"u,y\n", "t").is_err());
        assert!(parse_csv(b"", "t").is_err());
        assert!(parse_csv(b"1,inf\n", "t").is_err());
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plant.csv");
        let s = RawSeries::new("plant", vec![0.5, -1.25, 3.0], vec![1.0 / 3.0, 2.0, -7.5e-9]).unwrap();
        write_csv(&s, &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), s);
        let e = load_csv(dir.path().join("missing.csv")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }

    #[test]
    fn split_examples() {
        let s = RawSeries::new("s", vec![0.0; 1000], vec![0.0; 1000]).unwrap();
        let f = SplitFractions::new(40.0, 10.0, 50.0).unwrap();
        let sp = split(&s, &f).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (400, 100, 500));
        let s10 = s.slice(0, 10);
        let sp = split(&s10, &SplitFractions::new(50.0, 50.0, 0.0).unwrap()).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (5, 5, 0));
        assert!(SplitFractions::new(40.0, 10.0, 49.0).is_err());
        assert!(SplitFractions::new(110.0, -10.0, 0.0).is_err());
    }

    #[test]
    fn split_is_contiguous() {
        let s = RawSeries::new("s", (0..17).map(f64::from).collect(), (0..17).map(f64::from).collect()).unwrap();
        let sp = split(&s, &SplitFractions::new(60.0, 20.0, 20.0).unwrap()).unwrap();
        let joined: Vec<f64> = sp.train.u.iter().chain(&sp.val.u).chain(&sp.test.u).copied().collect();
        assert_eq!(joined, s.u);
    }

    #[test]
    fn zscore_examples() {
        let s = RawSeries::new("s", vec![1.0, 2.0, 3.0, 6.0], vec![-1.0, 0.0, 4.0, 9.0]).unwrap();
        let st = zscore_fit(&s).unwrap();
        let n = st.apply(&s);
        let m: f64 = n.y.iter().sum::<f64>() / 4.0;
        let v: f64 = n.y.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
        let back = st.invert(&n);
        for (a, b) in back.y.iter().zip(&s.y) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = RawSeries::new("c", vec![1.0; 3], vec![2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(zscore_fit(&c), Err(Error::ZeroStd("u"))));
        let (lo, hi) = st.invert_interval(-1.0, 1.0);
        assert!(lo < hi);
    }

    proptest! {
        #[test]
        fn zscore_round_trip(xs in proptest::collection::vec(-1e3..1e3f64, 2..50), probe in -1e4..1e4f64) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.5 + 1.0).collect();
            let s = RawSeries::new("p", xs, ys).unwrap();
            if let Ok(st) = zscore_fit(&s) {
                prop_assert!((st.invert_y(st.norm_y(probe)) - probe).abs() <= 1e-12 * probe.abs().max(1.0));
                prop_assert!((st.invert_u(st.norm_u(probe)) - probe).abs() <= 1e-12 * probe.abs().max(1.0));
            }
        }

        #[test]
        fn split_lengths_partition(k in 0usize..2000, a in 0u32..=100, b in 0u32..=100) {
            prop_assume!(a + b <= 100);
            let f = SplitFractions::new(a as f64, b as f64, (100 - a - b) as f64).unwrap();
            let (x, y, z) = f.lengths(k).unwrap();
            prop_assert_eq!(x + y + z, k);
            prop_assert_eq!(f.lengths(k).unwrap(), (x, y, z));
        }
    }
}

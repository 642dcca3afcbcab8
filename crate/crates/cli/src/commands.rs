use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use inn_core::analysis::{analyze as analyze_model, export_heatmap, ReportMeta};
use inn_core::dataio::{generate, load_config, load_csv, write_csv, RunConfig, Strategy, SyntheticConfig};
use inn_core::model::{load_model, Model};
use inn_core::nets::{ModelKind, Trick};
use inn_core::pipeline::{evaluate, train as train_run, RunOutput};
use inn_core::{Error, ErrorClass};
use serde::Serialize;

use crate::manifest::{self, RunManifest};
use crate::{AnalyzeArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io { path: path.to_path_buf(), source: e })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) -> CliResult {
    if let Some(s) = &a.strategy {
        cfg.strategy = s.parse::<Strategy>().map_err(usage)?;
    }
    if let Some(m) = &a.model {
        cfg.model.kind = m.parse::<ModelKind>().map_err(usage)?;
    }
    if let Some(t) = &a.trick {
        cfg.trick = t.parse::<Trick>().map_err(usage)?;
    }
    if let Some(alpha) = a.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")));
        }
        cfg.alpha = alpha;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(())
}

pub fn run_name(cfg: &RunConfig) -> String {
    let kind = match cfg.model.kind {
        ModelKind::Lstm => "ilstm",
        ModelKind::Node => "inode",
        ModelKind::Feedforward => "inn",
    };
    format!("{}-{}{}-{}-s{}", cfg.dataset.label(), kind, cfg.model.hidden.len(), cfg.strategy, cfg.seed)
}

/// Trains `cfg` into `out` and returns the manifest that was written.
pub fn train_into(cfg: &RunConfig, out: &Path) -> CliResult<(RunManifest, RunOutput)> {
    let started = manifest::now_unix();
    let input_hash = manifest::input_hash(cfg)?;
    let output = train_run(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = vec!["model.json".to_string()];
    let model_path = out.join("model.json");
    std::fs::write(&model_path, output.model.to_json()? + "\n").map_err(|e| io_err(&model_path, e))?;
    for (i, rec) in output.records.iter().enumerate() {
        let name = if output.records.len() == 1 { "epochs.jsonl".to_string() } else { format!("epochs.{i}.jsonl") };
        let p = out.join(&name);
        let f = File::create(&p).map_err(|e| io_err(&p, e))?;
        rec.write_jsonl(BufWriter::new(f))?;
        files.push(name);
    }
    files.push("manifest.json".into());
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seed: cfg.seed,
        input_hash,
        output_dir: out.to_path_buf(),
        model_digest: output.model.digest()?,
        files,
        started_unix: started,
        finished_unix: manifest::now_unix(),
    };
    write_json(&out.join("manifest.json"), &m)?;
    Ok((m, output))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    output_dir: &'a Path,
    model_digest: &'a str,
    input_hash: &'a str,
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = match (&a.config, &a.manifest) {
        (Some(p), _) => load_config(p)?,
        (None, Some(p)) => manifest::load(p)?.config,
        (None, None) => return Err(CliError::Usage("--config or --manifest is required".into())),
    };
    apply_overrides(&mut cfg, &a)?;
    let out = a.out.clone().unwrap_or_else(|| a.output_root.join(run_name(&cfg)));
    let (m, _) = train_into(&cfg, &out)?;
    let summary = TrainSummary { output_dir: &out, model_digest: &m.model_digest, input_hash: &m.input_hash };
    println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let series = load_csv(&a.data)?;
    let ev = evaluate(&model, &series, a.split)?;
    println!("{}", serde_json::to_string_pretty(&ev.metrics).map_err(Error::from)?);
    Ok(())
}

/// Index of the first sample of `which` within the full series.
fn split_offset(model: &Model, len: usize, which: inn_core::pipeline::SplitName) -> CliResult<usize> {
    use inn_core::pipeline::SplitName;
    let (a, b, _) = model.split.lengths(len)?;
    Ok(match which {
        SplitName::Train => 0,
        SplitName::Val => a,
        SplitName::Test => a + b,
    })
}

pub fn predict(a: PredictArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let series = load_csv(&a.data)?;
    let ev = evaluate(&model, &series, a.split)?;
    let offset = split_offset(&model, series.len(), a.split)?;
    let n = &model.normalization;
    let mut text = String::from("k,u,y_true,y,y_lo,y_hi\n");
    let p = &ev.prediction;
    for i in 0..p.len() {
        let (lo, hi) = n.invert_interval(p.lo[i], p.hi[i]);
        let y = n.invert_y(p.y[i]);
        text.push_str(&format!("{},{},{},{},{},{}\n", offset + i, ev.raw.u[i], ev.raw.y[i], y, lo, hi));
    }
    std::fs::write(&a.out, text).map_err(|e| io_err(&a.out, e))
}

pub fn analyze(a: AnalyzeArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let (theta, iv) = model.interval_params()?;
    let meta = ReportMeta {
        model_id: model.digest()?,
        strategy: model.training.strategy.to_string(),
        seed: model.training.seed,
        alpha: model.spec.alpha,
    };
    let report = analyze_model(&model.spec, &theta, &iv, meta)?;
    let written: Vec<PathBuf> = export_heatmap(&report, &a.out)?;
    println!("{}", serde_json::to_string(&written).map_err(Error::from)?);
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        length: a.length.unwrap_or(d.length),
        seed: a.seed.unwrap_or(d.seed),
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        amplitude: a.amplitude.unwrap_or(d.amplitude),
        hold_min: a.hold_min.unwrap_or(d.hold_min),
        hold_max: a.hold_max.unwrap_or(d.hold_max),
        ..d
    };
    let series = generate(&cfg).map_err(usage)?;
    write_csv(&series, &a.out)?;
    Ok(())
}

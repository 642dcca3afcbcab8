use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Crisp,
    Margins,
    Joint,
    Baseline,
}

/// One line of the epoch log; losses are epoch means over mini-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rqr_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pareto: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    /// Scales at the end of the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<[f64; 2]>,
    pub seconds: f64,
}

impl EpochRecord {
    pub(crate) fn new(stage: Stage, epoch: usize) -> Self {
        EpochRecord { stage, epoch, mse: None, rqr_w: None, pareto: None, grad: None, nll: None, kl: None, scales: None, seconds: 0.0 }
    }
}

/// Where a returned snapshot came from; epoch 0 means the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// Scales after every joint iteration.
    pub scale_history: Vec<[f64; 2]>,
    pub best_theta: Option<Snapshot>,
    pub best_margins: Option<Snapshot>,
}

impl TrainRecord {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::Format(format!("writing epoch log: {e}")))?;
        }
        Ok(())
    }
}

/// Tracks the argmin of a per-epoch loss together with its parameters.
#[derive(Debug, Clone)]
pub(crate) struct Best<T> {
    pub value: T,
    pub snapshot: Snapshot,
}

impl<T: Clone> Best<T> {
    pub fn initial(stage: Stage, value: &T) -> Self {
        Best { value: value.clone(), snapshot: Snapshot { stage, epoch: 0, loss: f64::INFINITY } }
    }

    pub fn offer(&mut self, epoch: usize, loss: f64, value: &T) {
        if loss < self.snapshot.loss {
            self.value = value.clone();
            self.snapshot.epoch = epoch;
            self.snapshot.loss = loss;
        }
    }

    pub fn into_parts(self) -> (T, Option<Snapshot>) {
        let snap = (self.snapshot.epoch > 0).then_some(self.snapshot);
        (self.value, snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_skips_absent_losses() {
        let mut r = TrainRecord::default();
        let mut e = EpochRecord::new(Stage::Crisp, 1);
        e.mse = Some(0.5);
        r.epochs.push(e);
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.lines().count(), 1);
        assert!(line.contains("\"mse\":0.5") && !line.contains("rqr_w"));
        let back: EpochRecord = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, r.epochs[0]);
    }

    #[test]
    fn best_keeps_first_minimum() {
        let mut b = Best::initial(Stage::Crisp, &0);
        assert!(b.clone().into_parts().1.is_none());
        for (e, l) in [(1, 3.0), (2, 1.0), (3, 1.0), (4, 2.0)] {
            b.offer(e, l, &e);
        }
        let (v, s) = b.into_parts();
        assert_eq!(v, 2);
        assert_eq!(s.unwrap().loss, 1.0);
    }
}

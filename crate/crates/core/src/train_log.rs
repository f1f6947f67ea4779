use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: u32,
    pub lr: f64,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss over the whole training set before the first update.
    pub initial_loss: f64,
    pub val_metric_name: String,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,lr,train_loss,val_<metric>`; epoch 0 carries the initial loss.
    pub fn to_csv(&self) -> String {
        let mut s = format!("epoch,lr,train_loss,val_{}\n", self.val_metric_name);
        let _ = writeln!(s, "0,,{:.9e},", self.initial_loss);
        for e in &self.epochs {
            let val = e.val_metric.map(|v| format!("{v:.9e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.9e},{:.9e},{}", e.epoch, e.lr, e.train_loss, val);
        }
        s
    }
}

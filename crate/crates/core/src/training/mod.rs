//! Joint training of a CTR base model with the auxiliary interest task.
//!
//! Each batch runs the main backward pass, then the auxiliary pass with the
//! interest loss scaled by λ, then mixes the two auxiliary-segment gradients
//! with δ and takes one optimizer step.

mod checkpoint;
mod config;
pub mod gradcheck;
mod model;
mod trainer;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{OptimizerChoice, TrainConfig};
pub use model::{JointGrads, JointModel, JointMoments};
pub use trainer::{sample_negatives, AuxPlan, StepLosses, Trainer, STREAM_AUX, STREAM_INIT, STREAM_SHUFFLE};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::auc;

/// `l_main + λ·l_iacn`.
pub fn joint_loss(l_main: f64, l_iacn: f64, lambda: f64) -> f64 {
    l_main + lambda * l_iacn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    pub iacn_loss: f64,
    pub total_loss: f64,
    pub valid_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub base_model: String,
    pub iacn: bool,
    pub lambda: f64,
    pub delta: f64,
    pub dataset: String,
    /// Validation AUC before the first update.
    pub init_valid_auc: f64,
    pub epochs: Vec<EpochRecord>,
    pub test_auc: Option<f64>,
    pub steps: u64,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Same report with timing and paths cleared, for determinism checks.
    pub fn metrics_only(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            checkpoint: None,
            ..self.clone()
        }
    }

    pub fn final_valid_auc(&self) -> f64 {
        self.epochs.last().map_or(self.init_valid_auc, |e| e.valid_auc)
    }
}

pub fn evaluate(model: &JointModel, samples: &[Sample]) -> Result<f64> {
    let scores = model.predict(samples);
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    auc(&scores, &labels)
}

/// Trains for `config.epochs` epochs, evaluating validation AUC after each
/// one and test AUC at the end when a test split exists.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<(TrainReport, Trainer)> {
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` needs non-empty train and validation splits",
            data.tag
        )));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(config, &data.vocab)?;
    let init_valid_auc = evaluate(&trainer.model, &data.valid)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = trainer.epoch_order(data.train.len());
        let (mut main, mut iacn, mut total) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let l = trainer.train_step(&batch)?;
            main += l.main;
            iacn += l.iacn;
            total += l.total;
            batches += 1;
        }
        let nb = batches as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            main_loss: main / nb,
            iacn_loss: iacn / nb,
            total_loss: total / nb,
            valid_auc: evaluate(&trainer.model, &data.valid)?,
        };
        log::info!(
            "epoch {}: loss {:.5} (main {:.5}, interest {:.5}), valid auc {:.4}",
            record.epoch,
            record.total_loss,
            record.main_loss,
            record.iacn_loss,
            record.valid_auc
        );
        epochs.push(record);
    }
    let test_auc = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&trainer.model, &data.test)?)
    };
    let report = TrainReport {
        seed: config.seed,
        base_model: config.base_model.to_string(),
        iacn: config.iacn,
        lambda: config.lambda,
        delta: config.delta,
        dataset: data.tag.clone(),
        init_valid_auc,
        epochs,
        test_auc,
        steps: trainer.optimizer.step,
        wall_seconds: start.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok((report, trainer))
}

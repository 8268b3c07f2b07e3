use serde::{Deserialize, Serialize};

use crate::capsule::UpdateMode;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::models::BaseModelKind;
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected adam or sgd)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_model: BaseModelKind,
    /// Attach the auxiliary interest task. When off, the auxiliary segment
    /// is trained by the main loss alone.
    pub iacn: bool,
    pub lambda: f64,
    pub delta: f64,
    pub p: u32,
    pub routing_iterations: usize,
    pub routing_mode: UpdateMode,
    pub logit_init_sigma: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub num_negatives: usize,
    pub d_orig: usize,
    /// Auxiliary segment width; equals the capsule dimension h.
    pub d_aux: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerChoice,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_model: BaseModelKind::Din,
            iacn: true,
            lambda: 1.0,
            delta: 0.3,
            p: 2,
            routing_iterations: 3,
            routing_mode: UpdateMode::Assign,
            logit_init_sigma: 1.0,
            k_min: 1,
            k_max: 8,
            num_negatives: 10,
            d_orig: 16,
            d_aux: 16,
            max_len: 20,
            batch_size: 64,
            epochs: 5,
            learning_rate: 1e-4,
            optimizer: OptimizerChoice::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn h(&self) -> usize {
        self.d_aux
    }

    pub fn item_dim(&self) -> usize {
        self.d_orig + self.d_aux
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerChoice::Adam => OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
        }
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = Self::default();
        let d_aux: Option<usize> = kv.take("d_aux")?;
        let h: Option<usize> = kv.take("h")?;
        let d_aux = match (d_aux, h) {
            (Some(a), Some(h)) if a != h => {
                return Err(Error::Config(format!(
                    "d_aux ({a}) must equal the capsule dimension h ({h})"
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => d.d_aux,
        };
        let cfg = Self {
            base_model: kv.take_or("base_model", d.base_model)?,
            iacn: kv.take_or("iacn", d.iacn)?,
            lambda: kv.take_or("lambda", d.lambda)?,
            delta: kv.take_or("delta", d.delta)?,
            p: kv.take_or("p", d.p)?,
            routing_iterations: kv.take_or("routing_iterations", d.routing_iterations)?,
            routing_mode: kv.take_or("routing_mode", d.routing_mode)?,
            logit_init_sigma: kv.take_or("logit_init_sigma", d.logit_init_sigma)?,
            k_min: kv.take_or("k_min", d.k_min)?,
            k_max: kv.take_or("k_max", d.k_max)?,
            num_negatives: kv.take_or("num_negatives", d.num_negatives)?,
            d_orig: kv.take_or("d_orig", d.d_orig)?,
            d_aux,
            max_len: kv.take_or("max_len", d.max_len)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            learning_rate: kv.take_or("learning_rate", d.learning_rate)?,
            optimizer: kv.take_or("optimizer", d.optimizer)?,
            adam_beta1: kv.take_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.take_or("adam_beta2", d.adam_beta2)?,
            adam_eps: kv.take_or("adam_eps", d.adam_eps)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field as `key = value`; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        format!(
            "base_model = {}\niacn = {}\nlambda = {}\ndelta = {}\np = {}\n\
             routing_iterations = {}\nrouting_mode = {}\nlogit_init_sigma = {}\n\
             k_min = {}\nk_max = {}\nnum_negatives = {}\nd_orig = {}\nd_aux = {}\n\
             max_len = {}\nbatch_size = {}\nepochs = {}\nlearning_rate = {}\n\
             optimizer = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\nseed = {}\n",
            self.base_model,
            self.iacn,
            self.lambda,
            self.delta,
            self.p,
            self.routing_iterations,
            self.routing_mode,
            self.logit_init_sigma,
            self.k_min,
            self.k_max,
            self.num_negatives,
            self.d_orig,
            self.d_aux,
            self.max_len,
            self.batch_size,
            self.epochs,
            self.learning_rate,
            self.optimizer,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return fail(format!("delta {} outside [0, 1]", self.delta));
        }
        if self.p == 0 {
            return fail("p must be at least 1".into());
        }
        if self.p % 2 == 1 {
            log::warn!(
                "odd attention exponent p = {}: negative scores keep their sign",
                self.p
            );
        }
        if self.routing_iterations == 0 {
            return fail("routing_iterations must be at least 1".into());
        }
        if !(self.logit_init_sigma.is_finite() && self.logit_init_sigma > 0.0) {
            return fail(format!(
                "logit_init_sigma must be positive, got {}",
                self.logit_init_sigma
            ));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return fail(format!(
                "need 1 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            ));
        }
        if self.num_negatives == 0 {
            return fail("num_negatives must be at least 1".into());
        }
        if self.d_orig == 0 || self.d_aux == 0 {
            return fail("embedding dimensions must be positive".into());
        }
        if self.max_len == 0 || self.batch_size == 0 {
            return fail("max_len and batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.delta, c.p), (1.0, 0.3, 2));
        assert_eq!((c.batch_size, c.epochs, c.learning_rate), (64, 5, 1e-4));
        assert_eq!(c.routing_iterations, 3);
        assert_eq!(c.num_negatives, 10);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            base_model: BaseModelKind::WideDeep,
            delta: 0.7,
            learning_rate: 3.3e-4,
            routing_mode: UpdateMode::Accumulate,
            optimizer: OptimizerChoice::Sgd,
            seed: 99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "delta = 1.5",
            "lambda = -1",
            "p = 0",
            "k_min = 4\nk_max = 2",
            "d_aux = 8\nh = 16",
            "routing_iterations = 0",
            "learning_rate = 0",
            "unknown_key = 3",
            "base_model = dien",
            "routing_mode = sometimes",
        ] {
            let err = TrainConfig::from_kv_str(text).unwrap_err();
            assert!(err.is_configuration(), "{text}: {err}");
        }
        assert_eq!(TrainConfig::from_kv_str("h = 8").unwrap().d_aux, 8);
    }
}

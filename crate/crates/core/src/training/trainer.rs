use std::collections::BTreeSet;

use crate::capsule::{dynamic_routing, interest_backward, num_capsules, InterestExample};
use crate::data::{Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::math::{sigmoid, DenseMatrix, Rng};
use crate::models::{bce_loss, CtrInput};
use crate::optim::Optimizer;

use super::model::{JointGrads, JointModel, JointMoments};
use super::{joint_loss, TrainConfig};

/// Independent random streams derived from the run seed. Keeping them apart
/// lets a run with the auxiliary task and one without it share the same
/// initialization and batch order.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_AUX: u64 = 3;

const MAX_NEGATIVE_ATTEMPTS: usize = 10_000;

/// Auxiliary-task inputs drawn for one positive sample: the frozen routing
/// coefficients and the sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPlan {
    /// Index into the batch.
    pub sample: usize,
    pub coefficients: DenseMatrix,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub main: f64,
    pub iacn: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: JointModel,
    pub grads: JointGrads,
    pub moments: JointMoments,
    pub optimizer: Optimizer,
    pub(crate) shuffle_rng: Rng,
    pub(crate) aux_rng: Rng,
}

impl Trainer {
    pub fn new(config: &TrainConfig, vocab: &Vocabulary) -> Result<Self> {
        let root = Rng::new(config.seed);
        let mut init = root.fork(STREAM_INIT);
        let model = JointModel::new(config, vocab, &mut init)?;
        Ok(Self::from_model(config, model))
    }

    pub fn from_model(config: &TrainConfig, model: JointModel) -> Self {
        let root = Rng::new(config.seed);
        Self {
            config: config.clone(),
            grads: model.new_grads(),
            moments: model.new_moments(),
            optimizer: Optimizer::new(config.optimizer_kind(), config.learning_rate),
            shuffle_rng: root.fork(STREAM_SHUFFLE),
            aux_rng: root.fork(STREAM_AUX),
            model,
        }
    }

    /// δ applied at the mixing step. Without the auxiliary task the
    /// auxiliary segment takes the full main-loss gradient.
    pub fn effective_delta(&self) -> f64 {
        if self.config.iacn {
            self.config.delta
        } else {
            1.0
        }
    }

    /// Forward and backward of the mean BCE over `batch`. Fills the
    /// original-segment, `aux_from_main`, profile and base-model gradients.
    pub fn main_pass(&mut self, batch: &[&Sample]) -> f64 {
        let model = &self.model;
        let grads = &mut self.grads;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            let e = model.embed_sample(s);
            let (logit, cache) = model.forward(s, &e);
            let y = f64::from(s.label);
            let p = sigmoid(logit);
            loss += bce_loss(p, y);
            let x = CtrInput {
                behaviours: &e.behaviours,
                candidate: &e.candidate,
                profile: model.profiles.lookup(s.profile),
                candidate_id: s.candidate,
            };
            let g = model.base.backward(&x, &cache, (p - y) * scale, &mut grads.base);
            for (i, &b) in e.behaviour_ids.iter().enumerate() {
                add_main(model, grads, b, g.behaviours.row(i));
            }
            add_main(model, grads, s.candidate, &g.candidate);
            grads.profiles.add(model.profiles.resolve(s.profile), &g.profile);
        }
        loss * scale
    }

    /// Routes every positive sample and draws its negatives.
    pub fn plan_auxiliary(&mut self, batch: &[&Sample]) -> Result<Vec<AuxPlan>> {
        let mut plans = Vec::new();
        for (idx, s) in batch.iter().enumerate() {
            if s.label != 1 {
                continue;
            }
            let ids = s.recent(self.config.max_len);
            let vecs: Vec<Vec<f64>> = ids.iter().map(|&b| self.model.embed_aux(b)).collect();
            let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
            let k = num_capsules(ids.len(), self.config.k_min, self.config.k_max)?;
            let routed = dynamic_routing(&refs, &self.model.routing, k, &mut self.aux_rng)?;
            let negatives = sample_negatives(
                s,
                self.model.num_items(),
                self.config.num_negatives,
                &mut self.aux_rng,
            )?;
            plans.push(AuxPlan {
                sample: idx,
                coefficients: routed.coefficients,
                negatives,
            });
        }
        Ok(plans)
    }

    /// Forward and backward of λ times the mean interest loss over the
    /// planned positives. Fills only `aux_from_auxiliary` and the gradient
    /// of `M`. Returns the unscaled mean loss.
    pub fn auxiliary_pass(&mut self, batch: &[&Sample], plans: &[AuxPlan]) -> f64 {
        if plans.is_empty() {
            return 0.0;
        }
        let model = &self.model;
        let grads = &mut self.grads;
        let scale = self.config.lambda / plans.len() as f64;
        let mut total = 0.0;
        for plan in plans {
            let s = batch[plan.sample];
            let ids = s.recent(self.config.max_len);
            let beh: Vec<Vec<f64>> = ids.iter().map(|&b| model.embed_aux(b)).collect();
            let cand = model.embed_aux(s.candidate);
            let negs: Vec<Vec<f64>> = plan.negatives.iter().map(|&n| model.embed_aux(n)).collect();
            let example = InterestExample {
                behaviours: beh.iter().map(Vec::as_slice).collect(),
                candidate: &cand,
                negatives: negs.iter().map(Vec::as_slice).collect(),
            };
            let (loss, g) = interest_backward(
                &model.routing.m,
                &example,
                &plan.coefficients,
                self.config.p,
                scale,
                &mut grads.m,
            );
            total += loss;
            for (&b, gb) in ids.iter().zip(&g.behaviours) {
                add_auxiliary(model, grads, b, gb);
            }
            add_auxiliary(model, grads, s.candidate, &g.candidate);
            for (&n, gn) in plan.negatives.iter().zip(&g.negatives) {
                add_auxiliary(model, grads, n, gn);
            }
        }
        total / plans.len() as f64
    }

    /// Both backward passes into freshly zeroed buffers, without mixing or
    /// updating.
    pub fn accumulate(&mut self, batch: &[&Sample]) -> Result<StepLosses> {
        self.grads.zero();
        let main = self.main_pass(batch);
        let iacn = if self.config.iacn {
            let plans = self.plan_auxiliary(batch)?;
            self.auxiliary_pass(batch, &plans)
        } else {
            0.0
        };
        let lambda = if self.config.iacn { self.config.lambda } else { 0.0 };
        let total = joint_loss(main, iacn, lambda);
        if !total.is_finite() {
            let users: Vec<usize> = batch.iter().map(|s| s.user).collect();
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (main {main}, interest {iacn}); batch users {users:?}",
                self.optimizer.step + 1
            )));
        }
        Ok(StepLosses { main, iacn, total })
    }

    /// Mixes the auxiliary-segment gradients and applies one optimizer step.
    pub fn mix_and_apply(&mut self) -> Result<()> {
        self.grads.mix(self.effective_delta())?;
        self.optimizer.begin_step();
        self.model.apply(&self.grads, &mut self.moments, &self.optimizer)
    }

    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepLosses> {
        let losses = self.accumulate(batch)?;
        self.mix_and_apply()?;
        Ok(losses)
    }

    /// A shuffled visiting order over `n` samples.
    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle_rng.shuffle(&mut order);
        order
    }
}

fn add_main(model: &JointModel, grads: &mut JointGrads, item: usize, g: &[f64]) {
    let (row, cat) = model.rows_of(item);
    grads.items.add_main(row, g);
    grads.categories.add_main(cat, g);
}

fn add_auxiliary(model: &JointModel, grads: &mut JointGrads, item: usize, g: &[f64]) {
    let (row, cat) = model.rows_of(item);
    grads.items.add_auxiliary(row, g);
    grads.categories.add_auxiliary(cat, g);
}

/// Uniform negatives over the item vocabulary, excluding the positive and
/// every behaviour item of the sample.
pub fn sample_negatives(
    sample: &Sample,
    num_items: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let excluded: BTreeSet<usize> = sample
        .behaviours
        .iter()
        .copied()
        .chain(std::iter::once(sample.candidate))
        .filter(|&i| i < num_items)
        .collect();
    if excluded.len() >= num_items {
        return Err(Error::Config(format!(
            "no negatives available: all {num_items} items are excluded for user {}",
            sample.user
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let neg = (0..MAX_NEGATIVE_ATTEMPTS)
            .map(|_| rng.below(num_items))
            .find(|i| !excluded.contains(i))
            .ok_or_else(|| Error::Config("negative sampling did not converge".into()))?;
        out.push(neg);
    }
    if out.contains(&sample.candidate) {
        return Err(Error::MaskingViolation(sample.candidate));
    }
    Ok(out)
}

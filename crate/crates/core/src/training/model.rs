use crate::capsule::RoutingParams;
use crate::data::{Sample, Vocabulary};
use crate::embeddings::{DualEmbeddingTable, DualMoments, EmbeddingTable, GradientBuffers, RowGradients};
use crate::error::{Error, Result};
use crate::math::{sigmoid, DenseMatrix, Rng};
use crate::models::{BaseCache, BaseGrads, BaseModel, BaseMoments, CtrInput};
use crate::optim::{Moments, Optimizer};

use super::TrainConfig;

/// Every trainable parameter of the joint model.
///
/// An item's embedding is its own dual row plus the dual row of its
/// category, so `e(i) = E_items[i] + E_categories[cat(i)]` and both tables
/// keep the original/auxiliary split.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub items: DualEmbeddingTable,
    pub categories: DualEmbeddingTable,
    pub item_category: Vec<usize>,
    pub profiles: EmbeddingTable,
    pub base: BaseModel,
    pub routing: RoutingParams,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct JointGrads {
    pub items: GradientBuffers,
    pub categories: GradientBuffers,
    pub profiles: RowGradients,
    pub base: BaseGrads,
    pub m: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub items: DualMoments,
    pub categories: DualMoments,
    pub profiles: Moments,
    pub base: BaseMoments,
    pub m: Moments,
}

/// Embedded main-task inputs of one sample.
pub(crate) struct Embedded {
    pub behaviour_ids: Vec<usize>,
    pub behaviours: DenseMatrix,
    pub candidate: Vec<f64>,
}

impl JointModel {
    /// Draws all parameters from `rng` in a fixed order: items, categories,
    /// profiles, base model, routing map.
    pub fn new(config: &TrainConfig, vocab: &Vocabulary, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        vocab.validate()?;
        let items = DualEmbeddingTable::new(vocab.num_items(), config.d_orig, config.d_aux, rng);
        let categories = DualEmbeddingTable::new(vocab.num_categories(), config.d_orig, config.d_aux, rng);
        let profiles = EmbeddingTable::new(vocab.num_users(), config.d_orig, rng);
        let base = BaseModel::new(
            config.base_model,
            config.item_dim(),
            config.d_orig,
            vocab.num_items(),
            rng,
        );
        let init = RoutingParams::init(config.h(), rng);
        let routing = RoutingParams::new(
            init.m,
            config.routing_iterations,
            config.logit_init_sigma,
            config.routing_mode,
        )?;
        Ok(Self {
            items,
            categories,
            item_category: vocab.item_category.clone(),
            profiles,
            base,
            routing,
            max_len: config.max_len,
        })
    }

    pub fn d_orig(&self) -> usize {
        self.items.d_orig()
    }

    pub fn d_aux(&self) -> usize {
        self.items.d_aux()
    }

    pub fn num_items(&self) -> usize {
        self.items.item_count()
    }

    /// Item and category rows for an item id.
    pub fn rows_of(&self, item: usize) -> (usize, usize) {
        let row = self.items.resolve(item);
        let cat = self
            .item_category
            .get(row)
            .copied()
            .unwrap_or(self.categories.oov_index());
        (row, self.categories.resolve(cat))
    }

    pub fn embed_into(&self, item: usize, out: &mut [f64]) {
        let (row, cat) = self.rows_of(item);
        let d_orig = self.d_orig();
        let (o, a) = out.split_at_mut(d_orig);
        for ((dst, x), y) in o
            .iter_mut()
            .zip(self.items.lookup_orig(row))
            .zip(self.categories.lookup_orig(cat))
        {
            *dst = x + y;
        }
        for ((dst, x), y) in a
            .iter_mut()
            .zip(self.items.lookup_aux(row))
            .zip(self.categories.lookup_aux(cat))
        {
            *dst = x + y;
        }
    }

    pub fn embed(&self, item: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.items.dim()];
        self.embed_into(item, &mut v);
        v
    }

    /// Auxiliary segment of an item embedding (the capsule-space vector).
    pub fn embed_aux(&self, item: usize) -> Vec<f64> {
        let (row, cat) = self.rows_of(item);
        self.items
            .lookup_aux(row)
            .iter()
            .zip(self.categories.lookup_aux(cat))
            .map(|(x, y)| x + y)
            .collect()
    }

    pub(crate) fn embed_sample(&self, sample: &Sample) -> Embedded {
        let ids = sample.recent(self.max_len).to_vec();
        let d = self.items.dim();
        let mut behaviours = DenseMatrix::zeros(ids.len(), d);
        for (i, &b) in ids.iter().enumerate() {
            self.embed_into(b, behaviours.row_mut(i));
        }
        Embedded {
            behaviour_ids: ids,
            behaviours,
            candidate: self.embed(sample.candidate),
        }
    }

    pub(crate) fn forward(&self, sample: &Sample, e: &Embedded) -> (f64, BaseCache) {
        let x = CtrInput {
            behaviours: &e.behaviours,
            candidate: &e.candidate,
            profile: self.profiles.lookup(sample.profile),
            candidate_id: sample.candidate,
        };
        self.base.forward(&x)
    }

    pub fn logit(&self, sample: &Sample) -> f64 {
        let e = self.embed_sample(sample);
        self.forward(sample, &e).0
    }

    /// Click probability; deterministic for frozen parameters.
    pub fn predict_ctr(&self, sample: &Sample) -> f64 {
        sigmoid(self.logit(sample))
    }

    pub fn predict(&self, samples: &[Sample]) -> Vec<f64> {
        samples.iter().map(|s| self.predict_ctr(s)).collect()
    }

    pub fn new_grads(&self) -> JointGrads {
        JointGrads {
            items: GradientBuffers::for_table(&self.items),
            categories: GradientBuffers::for_table(&self.categories),
            profiles: self.profiles.new_gradients(),
            base: self.base.new_grads(),
            m: DenseMatrix::zeros(self.routing.h(), self.routing.h()),
        }
    }

    pub fn new_moments(&self) -> JointMoments {
        JointMoments {
            items: DualMoments::for_table(&self.items),
            categories: DualMoments::for_table(&self.categories),
            profiles: self.profiles.new_moments(),
            base: self.base.new_moments(),
            m: Moments::zeros(self.routing.m.as_slice().len()),
        }
    }

    /// One optimizer step over every parameter group. The auxiliary
    /// gradients must already be mixed.
    pub fn apply(&mut self, grads: &JointGrads, moments: &mut JointMoments, opt: &Optimizer) -> Result<()> {
        self.items
            .apply_sparse_update(&grads.items, &mut moments.items, opt)?;
        self.categories
            .apply_sparse_update(&grads.categories, &mut moments.categories, opt)?;
        self.profiles
            .apply_sparse_update(&grads.profiles, &mut moments.profiles, opt);
        self.base.apply_update(&grads.base, &mut moments.base, opt);
        if grads.m.as_slice().iter().any(|&g| g != 0.0) {
            opt.update(
                self.routing.m.as_mut_slice(),
                grads.m.as_slice(),
                &mut moments.m.m,
                &mut moments.m.v,
            );
        }
        Ok(())
    }

    /// Named parameter tensors, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("items.orig".into(), self.items.orig().as_slice()),
            ("items.aux".into(), self.items.aux().as_slice()),
            ("categories.orig".into(), self.categories.orig().as_slice()),
            ("categories.aux".into(), self.categories.aux().as_slice()),
            ("profiles".into(), self.profiles.matrix().as_slice()),
            ("routing.m".into(), self.routing.m.as_slice()),
        ];
        for (i, t) in self.base.dense_tensors().into_iter().enumerate() {
            out.push((format!("base.{i}"), t));
        }
        if let BaseModel::WideDeep(w) = &self.base {
            out.push(("base.wide".into(), w.wide.matrix().as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let (io, ia) = self.items.segments_mut();
        let (co, ca) = self.categories.segments_mut();
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("items.orig".into(), io.as_mut_slice()),
            ("items.aux".into(), ia.as_mut_slice()),
            ("categories.orig".into(), co.as_mut_slice()),
            ("categories.aux".into(), ca.as_mut_slice()),
            ("profiles".into(), self.profiles.matrix_mut().as_mut_slice()),
            ("routing.m".into(), self.routing.m.as_mut_slice()),
        ];
        match &mut self.base {
            BaseModel::Din(m) => {
                for (i, t) in m.tensors_mut().into_iter().enumerate() {
                    out.push((format!("base.{i}"), t));
                }
            }
            BaseModel::WideDeep(w) => {
                for (i, t) in w.head.tensors_mut().into_iter().enumerate() {
                    out.push((format!("base.{i}"), t));
                }
                out.push(("base.wide".into(), w.wide.matrix_mut().as_mut_slice()));
            }
        }
        out
    }

    /// Checks that the vocabulary sizes match this model's tables.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let ok = self.items.item_count() == vocab.num_items()
            && self.categories.item_count() == vocab.num_categories()
            && self.profiles.oov_index() == vocab.num_users()
            && self.item_category == vocab.item_category;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "dataset vocabulary ({} users, {} items, {} categories) does not match the model",
                vocab.num_users(),
                vocab.num_items(),
                vocab.num_categories()
            )))
        }
    }
}

impl JointGrads {
    pub fn zero(&mut self) {
        self.items.zero();
        self.categories.zero();
        self.profiles.clear();
        self.base.zero();
        self.m.fill(0.0);
    }

    pub fn mix(&mut self, delta: f64) -> Result<()> {
        self.items.mix(delta)?;
        self.categories.mix(delta)
    }
}

impl JointMoments {
    /// Named moment tensors, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, m) in self.groups() {
            out.push((format!("adam.m.{name}"), m.m.as_slice()));
            out.push((format!("adam.v.{name}"), m.v.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (name, m) in self.groups_mut() {
            out.push((format!("adam.m.{name}"), m.m.as_mut_slice()));
            out.push((format!("adam.v.{name}"), m.v.as_mut_slice()));
        }
        out
    }

    fn groups(&self) -> Vec<(String, &Moments)> {
        let mut g: Vec<(String, &Moments)> = vec![
            ("items.orig".into(), &self.items.orig),
            ("items.aux".into(), &self.items.aux),
            ("categories.orig".into(), &self.categories.orig),
            ("categories.aux".into(), &self.categories.aux),
            ("profiles".into(), &self.profiles),
            ("routing.m".into(), &self.m),
        ];
        g.extend(
            self.base
                .dense
                .iter()
                .enumerate()
                .map(|(i, m)| (format!("base.{i}"), m)),
        );
        g.extend(self.base.wide.iter().map(|w| ("base.wide".to_string(), w)));
        g
    }

    fn groups_mut(&mut self) -> Vec<(String, &mut Moments)> {
        let mut g: Vec<(String, &mut Moments)> = vec![
            ("items.orig".into(), &mut self.items.orig),
            ("items.aux".into(), &mut self.items.aux),
            ("categories.orig".into(), &mut self.categories.orig),
            ("categories.aux".into(), &mut self.categories.aux),
            ("profiles".into(), &mut self.profiles),
            ("routing.m".into(), &mut self.m),
        ];
        g.extend(
            self.base
                .dense
                .iter_mut()
                .enumerate()
                .map(|(i, m)| (format!("base.{i}"), m)),
        );
        g.extend(self.base.wide.iter_mut().map(|w| ("base.wide".to_string(), w)));
        g
    }
}

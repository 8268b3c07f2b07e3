//! CTR base models consuming the concatenated item embeddings.

mod din;
mod mlp;
mod wide_deep;

pub use din::{DinCache, DinModel, ATTENTION_HIDDEN, ATTENTION_TENSORS, HEAD_HIDDEN};
pub use mlp::{Linear, Mlp, MlpCache};
pub use wide_deep::{PooledBaseline, PooledCache, PooledGrads};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, Rng};
use crate::optim::{Moments, Optimizer};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModelKind {
    Din,
    WideDeep,
}

impl BaseModelKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseModelKind::Din => "din",
            BaseModelKind::WideDeep => "wide_deep",
        }
    }
}

impl std::str::FromStr for BaseModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "din" => Ok(BaseModelKind::Din),
            "wide_deep" => Ok(BaseModelKind::WideDeep),
            other => Err(Error::Config(format!(
                "unknown base model `{other}` (expected din or wide_deep)"
            ))),
        }
    }
}

impl std::fmt::Display for BaseModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Embedded inputs of one sample.
#[derive(Debug, Clone, Copy)]
pub struct CtrInput<'a> {
    /// n × d behaviour embeddings, oldest first.
    pub behaviours: &'a DenseMatrix,
    pub candidate: &'a [f64],
    pub profile: &'a [f64],
    pub candidate_id: usize,
}

/// Gradients with respect to a sample's embedded inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub behaviours: DenseMatrix,
    pub candidate: Vec<f64>,
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel {
    Din(DinModel),
    WideDeep(PooledBaseline),
}

#[derive(Debug, Clone)]
pub enum BaseGrads {
    Din(DinModel),
    WideDeep(PooledGrads),
}

#[derive(Debug, Clone)]
pub enum BaseCache {
    Din(DinCache),
    WideDeep(PooledCache),
}

/// Optimizer moments for a base model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMoments {
    pub dense: Vec<Moments>,
    /// Wide weights (wide+deep only).
    pub wide: Option<Moments>,
}

impl BaseModel {
    pub fn new(
        kind: BaseModelKind,
        item_dim: usize,
        profile_dim: usize,
        item_count: usize,
        rng: &mut Rng,
    ) -> Self {
        match kind {
            BaseModelKind::Din => BaseModel::Din(DinModel::new(item_dim, profile_dim, rng)),
            BaseModelKind::WideDeep => {
                BaseModel::WideDeep(PooledBaseline::new(item_dim, profile_dim, item_count, rng))
            }
        }
    }

    pub fn kind(&self) -> BaseModelKind {
        match self {
            BaseModel::Din(_) => BaseModelKind::Din,
            BaseModel::WideDeep(_) => BaseModelKind::WideDeep,
        }
    }

    pub fn new_grads(&self) -> BaseGrads {
        match self {
            BaseModel::Din(m) => BaseGrads::Din(m.zeros_like()),
            BaseModel::WideDeep(m) => BaseGrads::WideDeep(m.new_grads()),
        }
    }

    pub fn new_moments(&self) -> BaseMoments {
        BaseMoments {
            dense: self
                .dense_tensors()
                .iter()
                .map(|t| Moments::zeros(t.len()))
                .collect(),
            wide: match self {
                BaseModel::Din(_) => None,
                BaseModel::WideDeep(m) => Some(m.wide.new_moments()),
            },
        }
    }

    /// Dense parameter tensors in a fixed order.
    pub fn dense_tensors(&self) -> Vec<&[f64]> {
        match self {
            BaseModel::Din(m) => m.tensors(),
            BaseModel::WideDeep(m) => m.head.tensors(),
        }
    }

    pub fn dense_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            BaseModel::Din(m) => m.tensors_mut(),
            BaseModel::WideDeep(m) => m.head.tensors_mut(),
        }
    }

    pub fn forward(&self, x: &CtrInput<'_>) -> (f64, BaseCache) {
        match self {
            BaseModel::Din(m) => {
                let (l, c) = m.forward(x);
                (l, BaseCache::Din(c))
            }
            BaseModel::WideDeep(m) => {
                let (l, c) = m.forward(x);
                (l, BaseCache::WideDeep(c))
            }
        }
    }

    pub fn logit(&self, x: &CtrInput<'_>) -> f64 {
        self.forward(x).0
    }

    pub fn backward(
        &self,
        x: &CtrInput<'_>,
        cache: &BaseCache,
        d_logit: f64,
        grads: &mut BaseGrads,
    ) -> InputGrads {
        match (self, cache, grads) {
            (BaseModel::Din(m), BaseCache::Din(c), BaseGrads::Din(g)) => m.backward(x, c, d_logit, g),
            (BaseModel::WideDeep(m), BaseCache::WideDeep(c), BaseGrads::WideDeep(g)) => {
                m.backward(x, c, d_logit, g)
            }
            _ => panic!("base model, cache and gradients disagree on the model kind"),
        }
    }

    pub fn apply_update(&mut self, grads: &BaseGrads, state: &mut BaseMoments, opt: &Optimizer) {
        match (self, grads) {
            (BaseModel::Din(m), BaseGrads::Din(g)) => {
                update_dense(m.tensors_mut(), g.tensors(), &mut state.dense, opt)
            }
            (BaseModel::WideDeep(m), BaseGrads::WideDeep(g)) => {
                let wide = state.wide.as_mut().expect("wide moments");
                m.apply_update(g, &mut state.dense, wide, opt)
            }
            _ => panic!("base model and gradients disagree on the model kind"),
        }
    }
}

impl BaseGrads {
    pub fn dense_tensors(&self) -> Vec<&[f64]> {
        match self {
            BaseGrads::Din(m) => m.tensors(),
            BaseGrads::WideDeep(g) => g.head.tensors(),
        }
    }

    pub fn zero(&mut self) {
        match self {
            BaseGrads::Din(m) => m.tensors_mut().into_iter().for_each(|t| t.fill(0.0)),
            BaseGrads::WideDeep(g) => {
                g.head.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
                g.wide.clear();
            }
        }
    }
}

pub(crate) fn update_dense(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    state: &mut [Moments],
    opt: &Optimizer,
) {
    for ((p, g), st) in params.into_iter().zip(grads).zip(state.iter_mut()) {
        opt.update(p, g, &mut st.m, &mut st.v);
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

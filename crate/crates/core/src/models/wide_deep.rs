//! Mean-pooled deep tower plus a per-item linear (wide) term.

use crate::embeddings::{EmbeddingTable, RowGradients};
use crate::math::{DenseMatrix, Rng};
use crate::optim::{Moments, Optimizer};

use super::din::HEAD_HIDDEN;
use super::mlp::{Mlp, MlpCache};
use super::{CtrInput, InputGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct PooledBaseline {
    pub head: Mlp,
    /// One scalar weight per candidate item (the one-hot linear term).
    pub wide: EmbeddingTable,
}

#[derive(Debug, Clone)]
pub struct PooledGrads {
    pub head: Mlp,
    pub wide: RowGradients,
}

#[derive(Debug, Clone)]
pub struct PooledCache {
    mean: Vec<f64>,
    head_cache: MlpCache,
}

impl PooledBaseline {
    pub fn new(item_dim: usize, profile_dim: usize, item_count: usize, rng: &mut Rng) -> Self {
        let head = Mlp::new(
            &[2 * item_dim + profile_dim, HEAD_HIDDEN[0], HEAD_HIDDEN[1], 1],
            rng,
        );
        Self {
            head,
            wide: EmbeddingTable::zeros(item_count, 1),
        }
    }

    pub fn new_grads(&self) -> PooledGrads {
        PooledGrads {
            head: self.head.zeros_like(),
            wide: self.wide.new_gradients(),
        }
    }

    pub fn forward(&self, x: &CtrInput<'_>) -> (f64, PooledCache) {
        let n = x.behaviours.rows();
        let d = x.behaviours.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, e) in mean.iter_mut().zip(x.behaviours.row(i)) {
                *m += e;
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut head_in = mean.clone();
        head_in.extend_from_slice(x.candidate);
        head_in.extend_from_slice(x.profile);
        let (out, head_cache) = self.head.forward(&head_in);
        let wide = self.wide.lookup(x.candidate_id)[0];
        (out[0] + wide, PooledCache { mean, head_cache })
    }

    pub fn backward(
        &self,
        x: &CtrInput<'_>,
        cache: &PooledCache,
        d_logit: f64,
        grads: &mut PooledGrads,
    ) -> InputGrads {
        let d = cache.mean.len();
        let n = x.behaviours.rows();
        let d_in = self.head.backward(&cache.head_cache, &[d_logit], &mut grads.head);
        let inv = 1.0 / n as f64;
        let mut d_beh = DenseMatrix::zeros(n, d);
        for i in 0..n {
            for (db, dm) in d_beh.row_mut(i).iter_mut().zip(&d_in[..d]) {
                *db = dm * inv;
            }
        }
        grads.wide.add(self.wide.resolve(x.candidate_id), &[d_logit]);
        InputGrads {
            behaviours: d_beh,
            candidate: d_in[d..2 * d].to_vec(),
            profile: d_in[2 * d..].to_vec(),
        }
    }

    pub fn apply_update(
        &mut self,
        grads: &PooledGrads,
        head_state: &mut [Moments],
        wide_state: &mut Moments,
        opt: &Optimizer,
    ) {
        super::update_dense(self.head.tensors_mut(), grads.head.tensors(), head_state, opt);
        self.wide.apply_sparse_update(&grads.wide, wide_state, opt);
    }
}

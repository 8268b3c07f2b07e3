//! DIN-style attention pooling followed by an MLP head.

// Index loops walk several parallel buffers at once.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::math::{dot, softmax_backward, softmax_in_place, DenseMatrix, Rng};

use super::mlp::{Linear, Mlp, MlpCache};
use super::{CtrInput, InputGrads};

pub const ATTENTION_HIDDEN: usize = 32;
pub const HEAD_HIDDEN: [usize; 2] = [64, 32];
/// Attention hidden weight, hidden bias and scoring vector.
pub const ATTENTION_TENSORS: usize = 3;

/// Attention unit over `[e_i ∥ e_t ∥ e_i⊙e_t ∥ e_i−e_t]` plus an MLP head on
/// `[pooled ∥ e_t ∥ profile]`.
///
/// The scoring layer has no bias: softmax ignores a shift shared by all
/// behaviours, so such a bias would never receive a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DinModel {
    pub attention: Linear,
    pub score: Vec<f64>,
    pub head: Mlp,
}

impl DinModel {
    pub fn new(item_dim: usize, profile_dim: usize, rng: &mut Rng) -> Self {
        let attention = Linear::new(4 * item_dim, ATTENTION_HIDDEN, rng);
        let score = Linear::new(ATTENTION_HIDDEN, 1, rng).weight.row(0).to_vec();
        let head = Mlp::new(
            &[2 * item_dim + profile_dim, HEAD_HIDDEN[0], HEAD_HIDDEN[1], 1],
            rng,
        );
        Self {
            attention,
            score,
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            attention: Linear::zeros(self.attention.input_dim(), self.attention.output_dim()),
            score: vec![0.0; self.score.len()],
            head: self.head.zeros_like(),
        }
    }

    pub fn item_dim(&self) -> usize {
        self.attention.input_dim() / 4
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![
            self.attention.weight.as_slice(),
            self.attention.bias.as_slice(),
            self.score.as_slice(),
        ];
        t.extend(self.head.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![
            self.attention.weight.as_mut_slice(),
            self.attention.bias.as_mut_slice(),
            self.score.as_mut_slice(),
        ];
        t.extend(self.head.tensors_mut());
        t
    }

    /// Softmax-normalized attention weights and the pooled vector.
    pub fn attention_pool(
        &self,
        behaviours: &DenseMatrix,
        candidate: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if behaviours.rows() == 0 {
            return Err(Error::Domain("attention pooling over an empty sequence".into()));
        }
        if behaviours.cols() != self.item_dim() || candidate.len() != self.item_dim() {
            return Err(Error::dim(
                "din_attention_pool",
                behaviours.shape(),
                (candidate.len(), self.item_dim()),
            ));
        }
        let fwd = AttentionForward::run(self, behaviours, candidate);
        Ok((fwd.weights, fwd.pooled))
    }

    pub fn forward(&self, x: &CtrInput<'_>) -> (f64, DinCache) {
        let att = AttentionForward::run(self, x.behaviours, x.candidate);
        let mut head_in = att.pooled.clone();
        head_in.extend_from_slice(x.candidate);
        head_in.extend_from_slice(x.profile);
        let (out, head_cache) = self.head.forward(&head_in);
        (out[0], DinCache { att, head_cache })
    }

    pub fn backward(
        &self,
        x: &CtrInput<'_>,
        cache: &DinCache,
        d_logit: f64,
        grads: &mut DinModel,
    ) -> InputGrads {
        let d = self.item_dim();
        let n = x.behaviours.rows();
        let d_head_in = self.head.backward(&cache.head_cache, &[d_logit], &mut grads.head);
        let d_pooled = &d_head_in[..d];
        let mut d_cand = d_head_in[d..2 * d].to_vec();
        let d_profile = d_head_in[2 * d..].to_vec();

        let att = &cache.att;
        // pooled = Σ_i w_i e_i
        let mut d_beh = DenseMatrix::zeros(n, d);
        let mut d_w = vec![0.0; n];
        for i in 0..n {
            let e = x.behaviours.row(i);
            d_w[i] = dot(e, d_pooled);
            let w = att.weights[i];
            for (db, dp) in d_beh.row_mut(i).iter_mut().zip(d_pooled) {
                *db += w * dp;
            }
        }
        let d_scores = softmax_backward(&att.weights, &d_w);
        att.backward(self, x, &d_scores, &mut d_beh, &mut d_cand, grads);

        InputGrads {
            behaviours: d_beh,
            candidate: d_cand,
            profile: d_profile,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DinCache {
    att: AttentionForward,
    head_cache: MlpCache,
}

/// Forward state of the attention unit for one sample.
///
/// The first layer `W1 = [A B C D]` acts on `[e_i, e_t, e_i⊙e_t, e_i−e_t]`,
/// which equals `(A + D + C·diag(e_t)) e_i + (B − D) e_t`. The effective
/// matrix and the candidate term are computed once per sample.
#[derive(Debug, Clone)]
struct AttentionForward {
    w_eff: DenseMatrix,
    /// Post-ReLU hidden activations (n × hidden).
    hidden: DenseMatrix,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

impl AttentionForward {
    fn run(model: &DinModel, behaviours: &DenseMatrix, cand: &[f64]) -> Self {
        let d = model.item_dim();
        let l1 = &model.attention;
        let hdim = l1.output_dim();
        let n = behaviours.rows();

        let mut w_eff = DenseMatrix::zeros(hdim, d);
        let mut b_eff = l1.bias.clone();
        for r in 0..hdim {
            let w = l1.weight.row(r);
            let (a, rest) = w.split_at(d);
            let (b, rest) = rest.split_at(d);
            let (c, dd) = rest.split_at(d);
            let row = w_eff.row_mut(r);
            for k in 0..d {
                row[k] = a[k] + dd[k] + c[k] * cand[k];
                b_eff[r] += (b[k] - dd[k]) * cand[k];
            }
        }

        let mut hidden = DenseMatrix::zeros(n, hdim);
        let mut scores = vec![0.0; n];
        for i in 0..n {
            let e = behaviours.row(i);
            let hrow = hidden.row_mut(i);
            for (r, hv) in hrow.iter_mut().enumerate() {
                *hv = (dot(w_eff.row(r), e) + b_eff[r]).max(0.0);
            }
            scores[i] = dot(&model.score, hrow);
        }
        softmax_in_place(&mut scores);
        let weights = scores;
        let mut pooled = vec![0.0; d];
        for (i, w) in weights.iter().enumerate() {
            for (p, e) in pooled.iter_mut().zip(behaviours.row(i)) {
                *p += w * e;
            }
        }
        Self {
            w_eff,
            hidden,
            weights,
            pooled,
        }
    }

    fn backward(
        &self,
        model: &DinModel,
        x: &CtrInput<'_>,
        d_scores: &[f64],
        d_beh: &mut DenseMatrix,
        d_cand: &mut [f64],
        grads: &mut DinModel,
    ) {
        let d = model.item_dim();
        let l1 = &model.attention;
        let hdim = l1.output_dim();
        let cand = x.candidate;

        // Σ_i g_i e_iᵀ and Σ_i g_i, with g_i the gradient at the hidden pre-activation.
        let mut g_outer = DenseMatrix::zeros(hdim, d);
        let mut g_sum = vec![0.0; hdim];
        let mut g = vec![0.0; hdim];
        for (i, &ds) in d_scores.iter().enumerate() {
            let hrow = self.hidden.row(i);
            for (gw, hv) in grads.score.iter_mut().zip(hrow) {
                *gw += ds * hv;
            }
            for r in 0..hdim {
                g[r] = if hrow[r] > 0.0 { ds * model.score[r] } else { 0.0 };
            }
            let e = x.behaviours.row(i);
            g_outer.add_outer(1.0, &g, e);
            for (s, gv) in g_sum.iter_mut().zip(&g) {
                *s += gv;
            }
            self.w_eff.add_matvec_t_into(&g, d_beh.row_mut(i));
        }

        let g1 = &mut grads.attention;
        for r in 0..hdim {
            let w = l1.weight.row(r);
            let (_, rest) = w.split_at(d);
            let (b, rest) = rest.split_at(d);
            let (c, dd) = rest.split_at(d);
            let go = g_outer.row(r);
            let gs = g_sum[r];
            let grow = g1.weight.row_mut(r);
            for k in 0..d {
                grow[k] += go[k];
                grow[d + k] += gs * cand[k];
                grow[2 * d + k] += go[k] * cand[k];
                grow[3 * d + k] += go[k] - gs * cand[k];
                d_cand[k] += gs * (b[k] - dd[k]) + c[k] * go[k];
            }
            g1.bias[r] += gs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the attention unit on the 4d-wide input.
    fn naive_scores(model: &DinModel, beh: &DenseMatrix, cand: &[f64]) -> Vec<f64> {
        (0..beh.rows())
            .map(|i| {
                let e = beh.row(i);
                let mut input = e.to_vec();
                input.extend_from_slice(cand);
                input.extend(e.iter().zip(cand).map(|(a, b)| a * b));
                input.extend(e.iter().zip(cand).map(|(a, b)| a - b));
                let hidden: Vec<f64> = model
                    .attention
                    .forward(&input)
                    .iter()
                    .map(|h| h.max(0.0))
                    .collect();
                dot(&model.score, &hidden)
            })
            .collect()
    }

    fn random_rows(n: usize, d: usize, rng: &mut Rng) -> DenseMatrix {
        DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn factored_attention_matches_direct_form() {
        let mut rng = Rng::new(12);
        let model = DinModel::new(6, 3, &mut rng);
        let beh = random_rows(5, 6, &mut rng);
        let cand: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut expected = naive_scores(&model, &beh, &cand);
        softmax_in_place(&mut expected);
        let (w, _) = model.attention_pool(&beh, &cand).unwrap();
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_cases() {
        let mut rng = Rng::new(1);
        let model = DinModel::new(4, 2, &mut rng);
        let cand = [0.1, 0.2, 0.3, 0.4];

        let one = DenseMatrix::from_rows(&[vec![1.0, -1.0, 0.5, 2.0]]).unwrap();
        assert_eq!(model.attention_pool(&one, &cand).unwrap().1, one.row(0).to_vec());

        let v = vec![0.3, -0.7, 1.1, 0.0];
        let twin = DenseMatrix::from_rows(&[v.clone(), v.clone()]).unwrap();
        let pooled = model.attention_pool(&twin, &cand).unwrap().1;
        for (a, b) in pooled.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }

        let mut flat = model.clone();
        flat.attention.weight.as_mut_slice().fill(0.0);
        flat.attention.bias.fill(0.0);
        flat.score.fill(0.0);
        let beh = random_rows(3, 4, &mut rng);
        let (w, pooled) = flat.attention_pool(&beh, &cand).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        for k in 0..4 {
            let mean = (beh.get(0, k) + beh.get(1, k) + beh.get(2, k)) / 3.0;
            assert!((pooled[k] - mean).abs() < 1e-15);
        }

        assert!(matches!(
            model.attention_pool(&DenseMatrix::zeros(0, 4), &cand),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = Rng::new(2);
        let model = DinModel::new(4, 2, &mut rng);
        let beh = random_rows(6, 4, &mut rng);
        let cand: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let mut order: Vec<usize> = (0..6).collect();
        rng.shuffle(&mut order);
        let permuted =
            DenseMatrix::from_rows(&order.iter().map(|&i| beh.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let a = model.attention_pool(&beh, &cand).unwrap().1;
        let b = model.attention_pool(&permuted, &cand).unwrap().1;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

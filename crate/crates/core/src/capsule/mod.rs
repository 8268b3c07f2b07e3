//! Interest-aware capsule network: routing a user's behaviour embeddings
//! into K interest capsules, attending them with the candidate item, and
//! scoring the candidate against sampled negatives.
//!
//! The backward pass treats the final routing coefficients as constants, so
//! gradients reach `M` and the item embeddings only through the last
//! `s_j = Σ_i a_ij M c_i`.

mod attention;
mod routing;

pub use attention::{iacn_loss, label_aware_attention, score_interest_item, Attention, LabeledItem};
pub use routing::{
    dynamic_routing, init_logits, num_capsules, route_from_logits, routing_logit, squash, InterestCapsules,
    RoutingOutput, RoutingParams, UpdateMode,
};

use crate::math::{dot, softmax_backward, softmax_in_place, DenseMatrix};
use attention::{attend, sampled_softmax_nll};
use routing::{capsules_from, squash_backward, transform};

/// One positive example for the interest loss, in auxiliary-embedding space.
#[derive(Debug, Clone)]
pub struct InterestExample<'a> {
    pub behaviours: Vec<&'a [f64]>,
    /// Label item; it is both the attention query and the positive.
    pub candidate: &'a [f64],
    pub negatives: Vec<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestGradients {
    pub behaviours: Vec<Vec<f64>>,
    pub candidate: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Interest loss with routing coefficients held fixed.
pub fn interest_loss_frozen(
    m: &DenseMatrix,
    example: &InterestExample<'_>,
    coefficients: &DenseMatrix,
    p: u32,
) -> f64 {
    let x = transform(&example.behaviours, m).expect("shapes checked by caller");
    let (u, _) = capsules_from(&x, coefficients, m.rows());
    let att = attend(&u, example.candidate, p);
    let vectors: Vec<&[f64]> = std::iter::once(example.candidate)
        .chain(example.negatives.iter().copied())
        .collect();
    sampled_softmax_nll(&att.attended, &vectors)
}

/// Loss and gradients of `scale · interest_loss_frozen`. The gradient with
/// respect to `M` is accumulated into `d_m`; the returned loss is unscaled.
pub fn interest_backward(
    m: &DenseMatrix,
    example: &InterestExample<'_>,
    coefficients: &DenseMatrix,
    p: u32,
    scale: f64,
    d_m: &mut DenseMatrix,
) -> (f64, InterestGradients) {
    let h = m.rows();
    let n = example.behaviours.len();
    let x = transform(&example.behaviours, m).expect("shapes checked by caller");
    let (u, s) = capsules_from(&x, coefficients, h);
    let k = u.len();
    let cand = example.candidate;
    let att = attend(&u, cand, p);

    let vectors: Vec<&[f64]> = std::iter::once(cand)
        .chain(example.negatives.iter().copied())
        .collect();
    let mut probs: Vec<f64> = vectors.iter().map(|v| dot(v, &att.attended)).collect();
    let loss = {
        let lse = crate::math::log_sum_exp(&probs);
        lse - probs[0]
    };
    softmax_in_place(&mut probs);
    // d(loss)/d(logit_k) = softmax_k − [k = 0]
    let mut dlogit: Vec<f64> = probs.iter().map(|q| scale * q).collect();
    dlogit[0] -= scale;

    let mut d_attended = vec![0.0; h];
    let mut d_cand = vec![0.0; h];
    let mut d_negs = Vec::with_capacity(example.negatives.len());
    for (kk, (v, &g)) in vectors.iter().zip(&dlogit).enumerate() {
        for (da, vv) in d_attended.iter_mut().zip(v.iter()) {
            *da += g * vv;
        }
        let dv: Vec<f64> = att.attended.iter().map(|a| g * a).collect();
        if kk == 0 {
            d_cand = dv;
        } else {
            d_negs.push(dv);
        }
    }

    // attended = Σ_j w_j u_j
    let mut d_u: Vec<Vec<f64>> = att
        .weights
        .iter()
        .map(|w| d_attended.iter().map(|d| w * d).collect())
        .collect();
    let d_w: Vec<f64> = u.iter().map(|uj| dot(uj, &d_attended)).collect();
    let d_z = softmax_backward(&att.weights, &d_w);
    // z_j = t_j^p, t_j = u_jᵀ ĉ
    for j in 0..k {
        let d_t = d_z[j] * p as f64 * att.dots[j].powi(p as i32 - 1);
        if d_t != 0.0 {
            for (du, c) in d_u[j].iter_mut().zip(cand) {
                *du += d_t * c;
            }
            for (dc, uu) in d_cand.iter_mut().zip(&u[j]) {
                *dc += d_t * uu;
            }
        }
    }

    let d_s: Vec<Vec<f64>> = s
        .iter()
        .zip(&d_u)
        .map(|(sj, duj)| squash_backward(sj, duj))
        .collect();

    let mut d_behaviours = Vec::with_capacity(n);
    let mut d_x = vec![0.0; h];
    for (i, c) in example.behaviours.iter().enumerate() {
        d_x.fill(0.0);
        for (j, dsj) in d_s.iter().enumerate() {
            let a = coefficients.get(i, j);
            for (dx, ds) in d_x.iter_mut().zip(dsj) {
                *dx += a * ds;
            }
        }
        d_m.add_outer(1.0, &d_x, c);
        let mut dc = vec![0.0; c.len()];
        m.add_matvec_t_into(&d_x, &mut dc);
        d_behaviours.push(dc);
    }

    (
        loss,
        InterestGradients {
            behaviours: d_behaviours,
            candidate: d_cand,
            negatives: d_negs,
        },
    )
}

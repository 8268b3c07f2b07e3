//! Label-aware attention over interest capsules and the sampled-softmax
//! interest loss.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::math::{dot, log_sum_exp, softmax_in_place};

use super::routing::InterestCapsules;

static ODD_POWER_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `u_jᵀ ĉ` for each capsule.
    pub dots: Vec<f64>,
    /// softmax over `(u_jᵀ ĉ)^p`.
    pub weights: Vec<f64>,
    /// `Σ_j w_j u_j`.
    pub attended: Vec<f64>,
}

/// Attends the capsules with the candidate as query: weights are the softmax
/// of the raw signed power `(u_jᵀ ĉ)^p`.
///
/// An odd `p` with a negative dot product is computed as-is; a warning is
/// logged once per process.
pub fn label_aware_attention(caps: &InterestCapsules, candidate: &[f64], p: u32) -> Result<Attention> {
    if candidate.len() != caps.h() {
        return Err(Error::dim(
            "label_aware_attention",
            caps.matrix().shape(),
            (candidate.len(), 1),
        ));
    }
    if p < 1 {
        return Err(Error::Config("attention exponent p must be >= 1".into()));
    }
    Ok(attend(&caps.columns(), candidate, p))
}

pub(crate) fn attend(caps: &[Vec<f64>], candidate: &[f64], p: u32) -> Attention {
    let dots: Vec<f64> = caps.iter().map(|u| dot(u, candidate)).collect();
    if p % 2 == 1 && dots.iter().any(|&d| d < 0.0) && !ODD_POWER_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("odd attention exponent p={p} with negative scores; signed powers used as-is");
    }
    let mut weights: Vec<f64> = dots.iter().map(|d| d.powi(p as i32)).collect();
    softmax_in_place(&mut weights);
    let h = candidate.len();
    let mut attended = vec![0.0; h];
    for (w, u) in weights.iter().zip(caps) {
        for (a, x) in attended.iter_mut().zip(u) {
            *a += w * x;
        }
    }
    Attention {
        dots,
        weights,
        attended,
    }
}

/// Scores `candidateᵀ u_j` for every capsule.
pub fn score_interest_item(caps: &InterestCapsules, candidate: &[f64]) -> Result<Vec<f64>> {
    if candidate.len() != caps.h() {
        return Err(Error::dim(
            "score_interest_item",
            caps.matrix().shape(),
            (candidate.len(), 1),
        ));
    }
    Ok(caps.columns().iter().map(|u| dot(u, candidate)).collect())
}

/// An item id with its auxiliary embedding.
#[derive(Debug, Clone, Copy)]
pub struct LabeledItem<'a> {
    pub id: usize,
    pub vector: &'a [f64],
}

/// Sampled-softmax negative log-likelihood of the positive item given the
/// attended interest `i_u`.
pub fn iacn_loss(attended: &[f64], positive: LabeledItem<'_>, negatives: &[LabeledItem<'_>]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Config("interest loss needs at least one negative".into()));
    }
    if let Some(neg) = negatives.iter().find(|n| n.id == positive.id) {
        return Err(Error::MaskingViolation(neg.id));
    }
    let h = attended.len();
    for v in std::iter::once(&positive).chain(negatives) {
        if v.vector.len() != h {
            return Err(Error::dim("iacn_loss", (h, 1), (v.vector.len(), 1)));
        }
    }
    let vectors: Vec<&[f64]> = std::iter::once(positive.vector)
        .chain(negatives.iter().map(|n| n.vector))
        .collect();
    Ok(sampled_softmax_nll(attended, &vectors))
}

/// `logsumexp(vₖᵀ i_u) − v₀ᵀ i_u` where `v₀` is the positive.
pub(crate) fn sampled_softmax_nll(attended: &[f64], vectors: &[&[f64]]) -> f64 {
    let logits: Vec<f64> = vectors.iter().map(|v| dot(v, attended)).collect();
    log_sum_exp(&logits) - logits[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm;

    fn caps(cols: &[Vec<f64>]) -> InterestCapsules {
        InterestCapsules::from_columns(cols).unwrap()
    }

    #[test]
    fn single_capsule_passes_through() {
        let c = caps(&[vec![0.2, -0.4, 0.1]]);
        let a = label_aware_attention(&c, &[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(a.weights, vec![1.0]);
        assert_eq!(a.attended, vec![0.2, -0.4, 0.1]);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let c = caps(&[vec![0.5, 0.0], vec![0.0, 0.5]]);
        let a = label_aware_attention(&c, &[1.0, 1.0], 2).unwrap();
        assert_eq!(a.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn large_power_approaches_hard_attention() {
        let c = caps(&[vec![0.5, 0.1, 0.0], vec![0.1, 0.45, 0.2], vec![-0.3, 0.0, 0.6]]);
        // Dots far from each other and above one in magnitude.
        let cand = [4.0, 1.0, -1.0];
        let a = label_aware_attention(&c, &cand, 64).unwrap();
        let best = a
            .dots
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.powi(64).total_cmp(&y.1.powi(64)))
            .unwrap()
            .0;
        let diff: Vec<f64> = a
            .attended
            .iter()
            .zip(c.capsule(best))
            .map(|(x, y)| x - y)
            .collect();
        assert!(norm(&diff) < 1e-6, "{:?}", a);
    }

    #[test]
    fn odd_power_still_computes() {
        let c = caps(&[vec![0.5, 0.0], vec![-0.5, 0.0]]);
        let a = label_aware_attention(&c, &[1.0, 0.0], 1).unwrap();
        assert!(a.weights[0] > a.weights[1]);
        assert!(label_aware_attention(&c, &[1.0, 0.0], 0).is_err());
        assert!(label_aware_attention(&c, &[1.0], 2).is_err());
    }

    #[test]
    fn interest_scores() {
        let c = caps(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(score_interest_item(&c, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        let q = vec![0.6, 0.0];
        let c2 = caps(&[q.clone(), vec![0.0, 0.3]]);
        assert!((score_interest_item(&c2, &q).unwrap()[0] - 0.36).abs() < 1e-15);
        assert_eq!(score_interest_item(&c, &[1.0, 2.0]).unwrap().len(), 3);
    }

    #[test]
    fn loss_cases() {
        let iu = [1.0, 0.0];
        let pos = [40.0, 0.0];
        let neg = [5.0, 0.0];
        let l = iacn_loss(
            &iu,
            LabeledItem { id: 0, vector: &pos },
            &[
                LabeledItem { id: 1, vector: &neg },
                LabeledItem { id: 2, vector: &neg },
            ],
        )
        .unwrap();
        assert!(l < 1e-12);

        let same = [0.5, 0.5];
        let l = iacn_loss(
            &iu,
            LabeledItem { id: 0, vector: &same },
            &[LabeledItem { id: 1, vector: &same }],
        )
        .unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = iacn_loss(
            &iu,
            LabeledItem { id: 0, vector: &same },
            &[
                LabeledItem { id: 1, vector: &same },
                LabeledItem { id: 2, vector: &same },
            ],
        )
        .unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn masking_violation() {
        let v = [0.1, 0.2];
        let err = iacn_loss(
            &v,
            LabeledItem { id: 7, vector: &v },
            &[LabeledItem { id: 7, vector: &v }],
        );
        assert!(matches!(err, Err(Error::MaskingViolation(7))));
        assert!(iacn_loss(&v, LabeledItem { id: 7, vector: &v }, &[]).is_err());
    }
}

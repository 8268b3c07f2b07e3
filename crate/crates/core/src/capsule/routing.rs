//! Behaviour-to-interest dynamic routing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm, softmax_in_place, DenseMatrix, Rng};

/// How routing logits evolve between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// `b_ij = u_jᵀ M c_i`
    #[default]
    Assign,
    /// `b_ij += u_jᵀ M c_i`
    Accumulate,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "assign" => Ok(UpdateMode::Assign),
            "accumulate" => Ok(UpdateMode::Accumulate),
            other => Err(Error::Config(format!("unknown routing mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateMode::Assign => "assign",
            UpdateMode::Accumulate => "accumulate",
        })
    }
}

/// Shared bilinear map plus routing schedule.
///
/// `M` serves both as the behaviour-to-interest transform (`M c_i`) and in
/// the logit `u_jᵀ M c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingParams {
    pub m: DenseMatrix,
    pub iterations: usize,
    pub logit_init_sigma: f64,
    pub update_mode: UpdateMode,
}

impl RoutingParams {
    pub fn new(
        m: DenseMatrix,
        iterations: usize,
        logit_init_sigma: f64,
        update_mode: UpdateMode,
    ) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::dim("RoutingParams", m.shape(), (m.cols(), m.cols())));
        }
        if iterations < 1 {
            return Err(Error::Config("routing needs at least one iteration".into()));
        }
        if logit_init_sigma.is_nan() || logit_init_sigma <= 0.0 {
            return Err(Error::Config(format!(
                "logit_init_sigma must be positive, got {logit_init_sigma}"
            )));
        }
        Ok(Self {
            m,
            iterations,
            logit_init_sigma,
            update_mode,
        })
    }

    /// `M` drawn from N(0, 1/h), three iterations, assign mode.
    pub fn init(h: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (h as f64).sqrt();
        let data = (0..h * h).map(|_| rng.normal() * scale).collect();
        Self::new(
            DenseMatrix::from_vec(h, h, data).expect("sized"),
            3,
            1.0,
            UpdateMode::Assign,
        )
        .expect("valid defaults")
    }

    pub fn h(&self) -> usize {
        self.m.rows()
    }
}

/// K interest vectors, stored as the columns of an h × K matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestCapsules {
    capsules: DenseMatrix,
}

impl InterestCapsules {
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Config("need at least one capsule".into()));
        }
        Ok(Self {
            capsules: DenseMatrix::from_rows(cols)?.transpose(),
        })
    }

    pub fn h(&self) -> usize {
        self.capsules.rows()
    }

    pub fn k(&self) -> usize {
        self.capsules.cols()
    }

    pub fn capsule(&self, j: usize) -> Vec<f64> {
        self.capsules.col(j)
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|j| self.capsule(j)).collect()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.capsules
    }
}

/// `(‖s‖² / (1 + ‖s‖²)) · s/‖s‖`, with the zero vector mapped to zero.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let scale = squash_scale(norm(s));
    s.iter().map(|x| x * scale).collect()
}

/// Factor `g(r) = r / (1 + r²)` so that `squash(s) = g(‖s‖)·s`.
#[inline]
fn squash_scale(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r / (1.0 + r * r)
    }
}

/// Vector–Jacobian product of `squash` at `s` with upstream gradient `du`.
pub(crate) fn squash_backward(s: &[f64], du: &[f64]) -> Vec<f64> {
    let r = norm(s);
    if r == 0.0 {
        return vec![0.0; s.len()];
    }
    let r2 = r * r;
    let g = r / (1.0 + r2);
    // (dg/dr) / r
    let k = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2) * r);
    let sd = dot(s, du);
    s.iter().zip(du).map(|(si, di)| g * di + k * sd * si).collect()
}

/// `K = clamp(floor(log₂ n), k_min, k_max)`.
pub fn num_capsules(seq_len: usize, k_min: usize, k_max: usize) -> Result<usize> {
    if seq_len == 0 {
        return Err(Error::Domain("number of capsules for an empty sequence".into()));
    }
    if k_min < 1 || k_min > k_max {
        return Err(Error::Config(format!(
            "capsule bounds must satisfy 1 <= k_min <= k_max, got [{k_min}, {k_max}]"
        )));
    }
    Ok((seq_len.ilog2() as usize).clamp(k_min, k_max))
}

/// Routing logit `u_jᵀ M c_i`.
pub fn routing_logit(u: &[f64], m: &DenseMatrix, c: &[f64]) -> Result<f64> {
    let mc = m.matvec(c)?;
    if u.len() != mc.len() {
        return Err(Error::dim("routing_logit", (u.len(), 1), m.shape()));
    }
    Ok(dot(u, &mc))
}

/// Initial routing logits, n × K, drawn row by row from N(0, σ²).
pub fn init_logits(n: usize, k: usize, sigma: f64, rng: &mut Rng) -> DenseMatrix {
    let data = (0..n * k).map(|_| rng.normal() * sigma).collect();
    DenseMatrix::from_vec(n, k, data).expect("sized")
}

/// Everything routing produced for one user.
#[derive(Debug, Clone)]
pub struct RoutingOutput {
    pub capsules: InterestCapsules,
    /// `M c_i` for each behaviour (n × h).
    pub transformed: DenseMatrix,
    /// Coupling coefficients of the final iteration (n × K); gradients treat
    /// them as constants.
    pub coefficients: DenseMatrix,
    /// Coefficients of every iteration, oldest first.
    pub history: Vec<DenseMatrix>,
}

/// Dynamic routing from `behaviours` (each in R^h) onto `k` capsules.
pub fn dynamic_routing(
    behaviours: &[&[f64]],
    params: &RoutingParams,
    k: usize,
    rng: &mut Rng,
) -> Result<RoutingOutput> {
    if behaviours.is_empty() {
        return Err(Error::Domain("dynamic routing over zero behaviours".into()));
    }
    if k < 1 {
        return Err(Error::Config("dynamic routing needs K >= 1".into()));
    }
    let logits = init_logits(behaviours.len(), k, params.logit_init_sigma, rng);
    route_from_logits(behaviours, params, logits)
}

/// Deterministic routing given the initial logits.
pub fn route_from_logits(
    behaviours: &[&[f64]],
    params: &RoutingParams,
    mut logits: DenseMatrix,
) -> Result<RoutingOutput> {
    let n = behaviours.len();
    let h = params.h();
    if n == 0 {
        return Err(Error::Domain("dynamic routing over zero behaviours".into()));
    }
    if logits.rows() != n || logits.cols() < 1 {
        return Err(Error::dim(
            "route_from_logits",
            logits.shape(),
            (n, logits.cols()),
        ));
    }
    let k = logits.cols();
    let transformed = transform(behaviours, &params.m)?;

    let mut history = Vec::with_capacity(params.iterations);
    let mut caps: Vec<Vec<f64>> = Vec::new();
    for iter in 0..params.iterations {
        let mut coeffs = logits.clone();
        for i in 0..n {
            softmax_in_place(coeffs.row_mut(i));
        }
        caps = capsules_from(&transformed, &coeffs, h).0;
        if iter + 1 < params.iterations {
            for i in 0..n {
                let x = transformed.row(i);
                for (j, u) in caps.iter().enumerate() {
                    let b = dot(u, x);
                    let cell = &mut logits.row_mut(i)[j];
                    match params.update_mode {
                        UpdateMode::Assign => *cell = b,
                        UpdateMode::Accumulate => *cell += b,
                    }
                }
            }
        }
        history.push(coeffs);
    }
    debug_assert_eq!(caps.len(), k);
    Ok(RoutingOutput {
        capsules: InterestCapsules::from_columns(&caps)?,
        transformed,
        coefficients: history.last().expect("iterations >= 1").clone(),
        history,
    })
}

/// `M c_i` for every behaviour, as rows.
pub(crate) fn transform(behaviours: &[&[f64]], m: &DenseMatrix) -> Result<DenseMatrix> {
    let h = m.rows();
    let mut out = DenseMatrix::zeros(behaviours.len(), h);
    for (i, c) in behaviours.iter().enumerate() {
        if c.len() != m.cols() {
            return Err(Error::dim("dynamic_routing", (c.len(), 1), m.shape()));
        }
        m.matvec_into(c, out.row_mut(i));
    }
    Ok(out)
}

/// Capsules `u_j = squash(Σ_i a_ij x_i)`; also returns the pre-squash `s_j`.
pub(crate) fn capsules_from(
    transformed: &DenseMatrix,
    coeffs: &DenseMatrix,
    h: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = coeffs.cols();
    let mut s = vec![vec![0.0; h]; k];
    for i in 0..transformed.rows() {
        let x = transformed.row(i);
        for (j, sj) in s.iter_mut().enumerate() {
            let a = coeffs.get(i, j);
            for (dst, xv) in sj.iter_mut().zip(x) {
                *dst += a * xv;
            }
        }
    }
    let u = s.iter().map(|sj| squash(sj)).collect();
    (u, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn squash_cases() {
        assert_eq!(squash(&[0.0, 0.0]), vec![0.0, 0.0]);
        let unit = [0.6, 0.8];
        assert!(close(&squash(&unit), &[0.3, 0.4], 1e-15));
        let out = squash(&[3.0, 4.0]);
        assert!(close(&out, &[15.0 / 26.0, 20.0 / 26.0], 1e-15));
        assert!((norm(&out) - 25.0 / 26.0).abs() < 1e-15);
        assert!((out[0] - 0.5769).abs() < 1e-4 && (out[1] - 0.7692).abs() < 1e-4);
    }

    #[test]
    fn squash_backward_matches_central_differences() {
        let s = [0.7, -1.3, 0.2];
        let du = [0.5, 0.1, -2.0];
        let analytic = squash_backward(&s, &du);
        for i in 0..3 {
            let eps = 1e-6;
            let mut p = s;
            p[i] += eps;
            let mut m = s;
            m[i] -= eps;
            let f = |v: &[f64]| dot(&squash(v), &du);
            let numeric = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((analytic[i] - numeric).abs() < 1e-8);
        }
        assert_eq!(squash_backward(&[0.0; 3], &du), vec![0.0; 3]);
    }

    #[test]
    fn capsule_count_rule() {
        assert_eq!(num_capsules(10, 1, 8).unwrap(), 3);
        assert_eq!(num_capsules(20, 1, 8).unwrap(), 4);
        assert_eq!(num_capsules(1, 1, 8).unwrap(), 1);
        assert_eq!(num_capsules(1 << 12, 1, 8).unwrap(), 8);
        assert_eq!(num_capsules(3, 2, 2).unwrap(), 2);
        assert!(matches!(num_capsules(0, 1, 8), Err(Error::Domain(_))));
        assert!(matches!(num_capsules(4, 3, 2), Err(Error::Config(_))));
    }

    #[test]
    fn logit_examples() {
        let id = DenseMatrix::identity(2);
        assert_eq!(routing_logit(&[1.0, 0.0], &id, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(routing_logit(&[0.0, 1.0], &id, &[1.0, 0.0]).unwrap(), 0.0);
        let d = DenseMatrix::from_diag(&[1.0, 2.0]);
        assert_eq!(routing_logit(&[1.0, 2.0], &d, &[3.0, 1.0]).unwrap(), 7.0);
        assert!(routing_logit(&[1.0], &d, &[3.0, 1.0]).is_err());
    }

    #[test]
    fn single_behaviour_single_capsule_is_squashed_transform() {
        let mut rng = Rng::new(4);
        let params = RoutingParams::init(3, &mut rng);
        let c = [0.3, -0.9, 1.4];
        let out = dynamic_routing(&[&c], &params, 1, &mut rng).unwrap();
        let expected = squash(&params.m.matvec(&c).unwrap());
        assert!(close(&out.capsules.capsule(0), &expected, 1e-15));
    }

    #[test]
    fn zero_map_gives_zero_capsules() {
        let params = RoutingParams::new(DenseMatrix::zeros(2, 2), 3, 1.0, UpdateMode::Assign).unwrap();
        let bs = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let refs: Vec<&[f64]> = bs.iter().map(|b| &b[..]).collect();
        let out = dynamic_routing(&refs, &params, 2, &mut Rng::new(0)).unwrap();
        assert!(out.capsules.matrix().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn routing_errors() {
        let params = RoutingParams::init(2, &mut Rng::new(0));
        assert!(matches!(
            dynamic_routing(&[], &params, 1, &mut Rng::new(0)),
            Err(Error::Domain(_))
        ));
        let b = [1.0, 1.0];
        assert!(matches!(
            dynamic_routing(&[&b], &params, 0, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
        assert!(RoutingParams::new(DenseMatrix::identity(2), 0, 1.0, UpdateMode::Assign).is_err());
        assert!(RoutingParams::new(DenseMatrix::identity(2), 3, 0.0, UpdateMode::Assign).is_err());
        assert!(RoutingParams::new(DenseMatrix::zeros(2, 3), 3, 1.0, UpdateMode::Assign).is_err());
    }

    #[test]
    fn modes_differ_but_both_normalize() {
        let mut rng = Rng::new(8);
        let mut params = RoutingParams::init(4, &mut rng);
        let bs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let refs: Vec<&[f64]> = bs.iter().map(Vec::as_slice).collect();
        let a = dynamic_routing(&refs, &params, 3, &mut Rng::new(1)).unwrap();
        params.update_mode = UpdateMode::Accumulate;
        let b = dynamic_routing(&refs, &params, 3, &mut Rng::new(1)).unwrap();
        assert_ne!(a.capsules, b.capsules);
        for out in [&a, &b] {
            assert_eq!(out.history.len(), 3);
            for coeffs in &out.history {
                for i in 0..5 {
                    let s: f64 = coeffs.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let params = RoutingParams::init(4, &mut Rng::new(2));
        let bs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, 0.2, -0.3, 0.05]).collect();
        let refs: Vec<&[f64]> = bs.iter().map(Vec::as_slice).collect();
        let a = dynamic_routing(&refs, &params, 2, &mut Rng::new(77)).unwrap();
        let b = dynamic_routing(&refs, &params, 2, &mut Rng::new(77)).unwrap();
        let bits = |o: &RoutingOutput| -> Vec<u64> {
            o.capsules
                .matrix()
                .as_slice()
                .iter()
                .map(|x| x.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    proptest! {
        #[test]
        fn squash_range_and_direction(s in prop::collection::vec(-100.0f64..100.0, 1..16)) {
            let out = squash(&s);
            let n = norm(&out);
            prop_assert!((0.0..1.0).contains(&n));
            let ns = norm(&s);
            if ns > 0.0 && n > 0.0 {
                let cos = dot(&out, &s) / (n * ns);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn capsule_norms_below_one(
            n in 1usize..8,
            k in 1usize..4,
            seed in 0u64..1000,
        ) {
            let mut rng = Rng::new(seed);
            let params = RoutingParams::init(4, &mut rng);
            let bs: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| 3.0 * rng.normal()).collect()).collect();
            let refs: Vec<&[f64]> = bs.iter().map(Vec::as_slice).collect();
            let out = dynamic_routing(&refs, &params, k, &mut rng).unwrap();
            prop_assert_eq!(out.capsules.matrix().shape(), (4, k));
            for j in 0..k {
                prop_assert!(norm(&out.capsules.capsule(j)) < 1.0);
            }
        }
    }
}

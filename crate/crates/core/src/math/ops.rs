use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax. Panics in debug builds on empty input.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    debug_assert!(!v.is_empty());
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Backward of `w = softmax(z)`: given `dL/dw`, returns `dL/dz`.
pub(crate) fn softmax_backward(w: &[f64], dw: &[f64]) -> Vec<f64> {
    let inner: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
    w.iter().zip(dw).map(|(wi, dwi)| wi * (dwi - inner)).collect()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

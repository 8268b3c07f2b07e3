use crate::math::{dot, DenseMatrix, Rng};

/// Fully connected layer `y = W x + b`, with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: DenseMatrix::from_vec(output, input, data).expect("sized"),
            bias: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, r) in out.iter_mut().zip(0..self.weight.rows()) {
            *o += dot(self.weight.row(r), x);
        }
        out
    }
}

/// ReLU MLP; the final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `widths = [input, hidden…, output]`.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let next = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.pre.push(z);
        }
        (h, cache)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (dv, z) in d.iter_mut().zip(&cache.pre[i]) {
                    if *z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            g.weight.add_outer(1.0, &d, &cache.inputs[i]);
            for (gb, dv) in g.bias.iter_mut().zip(&d) {
                *gb += dv;
            }
            let mut dx = vec![0.0; layer.input_dim()];
            layer.weight.add_matvec_t_into(&d, &mut dx);
            d = dx;
        }
        d
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::finite_difference_check;

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let mlp = Mlp::new(&[5, 7, 4, 1], &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (out, cache) = mlp.forward(&x);
        assert_eq!(out.len(), 1);
        let mut grads = mlp.zeros_like();
        let dx = mlp.backward(&cache, &[1.0], &mut grads);

        let mut flat: Vec<f64> = mlp.tensors().concat();
        let analytic: Vec<f64> = grads.tensors().concat();
        let rebuild = |flat: &[f64]| {
            let mut m = mlp.clone();
            let mut off = 0;
            for t in m.tensors_mut() {
                t.copy_from_slice(&flat[off..off + t.len()]);
                off += t.len();
            }
            m.forward(&x).0[0]
        };
        let r = finite_difference_check(rebuild, &mut flat, &analytic, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let mut xs = x.clone();
        let r = finite_difference_check(|v| mlp.forward(v).0[0], &mut xs, &dx, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}

use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softmax_in_place, Matrix, ParamVector};
use crate::error::dim_check;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Softmax,
    Sigmoid,
}

/// Architecture of one network, without its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpShape {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }
}

/// Fully connected network. Hidden layers use `activation`, the last layer
/// goes through `head`.
///
/// Parameters are laid out layer by layer: the `out x in` weight matrix in
/// row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: ParamVector,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    /// `acts[0]` is the input, `acts[l]` the output of layer `l` (post activation / head).
    acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds at least the input")
    }
}

/// Gradient of `<output, output_grad>` with respect to parameters and inputs.
#[derive(Debug, Clone)]
pub struct GradResult {
    pub value: f64,
    pub param_grad: ParamVector,
    pub input_grad: Matrix,
}

impl Mlp {
    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, head: OutputHead, rng_seed: u64) -> Result<Self> {
        let mut rng = rng::child(rng_seed, 0);
        Self::init_with(layer_sizes, activation, head, &mut rng)
    }

    pub fn init_with<R: Rng>(layer_sizes: &[usize], activation: Activation, head: OutputHead, rng: &mut R) -> Result<Self> {
        let shape = MlpShape {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            head,
        };
        shape.validate()?;
        let mut values = Vec::with_capacity(shape.param_count());
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                values.push(rng.random_range(-bound..bound));
            }
            values.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            shape,
            params: ParamVector::from_vec(values),
        })
    }

    pub fn from_params(shape: MlpShape, params: ParamVector) -> Result<Self> {
        shape.validate()?;
        dim_check("mlp params", shape.param_count(), params.len())?;
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.shape.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        dim_check("mlp params", self.params.len(), params.len())?;
        if !params.is_finite() {
            return Err(Error::NonFinite("mlp params".into()));
        }
        self.params = params;
        Ok(())
    }

    /// `params -= eta * grad`.
    pub fn descend(&mut self, eta: f64, grad: &ParamVector) -> Result<()> {
        dim_check("mlp gradient", self.params.len(), grad.len())?;
        self.params.axpy(-eta, grad);
        if !self.params.is_finite() {
            return Err(Error::NonFinite("mlp params after update".into()));
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.shape.hash(&mut h);
        for v in self.params.as_slice() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let (out, cache) = self.forward_batch(&Matrix::row_vector(x))?;
        Ok((out.row(0).to_vec(), cache))
    }

    /// Forward pass over a batch whose rows are samples.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        dim_check("mlp input", self.input_dim(), x.cols())?;
        let n = x.rows();
        let sizes = &self.shape.layer_sizes;
        let p = self.params.as_slice();
        let n_layers = sizes.len() - 1;
        let mut acts = Vec::with_capacity(sizes.len());
        acts.push(x.clone());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = &p[offset..offset + fan_in * fan_out];
            let b = &p[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let input = &acts[l];
            let mut z = Matrix::zeros(n, fan_out);
            for r in 0..n {
                let xr = input.row(r);
                let zr = z.row_mut(r);
                for o in 0..fan_out {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    zr[o] = b[o] + super::dot(wr, xr);
                }
            }
            if l + 1 < n_layers {
                for v in z.as_mut_slice() {
                    *v = match self.shape.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    };
                }
            } else {
                match self.shape.head {
                    OutputHead::Linear => {}
                    OutputHead::Sigmoid => z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v)),
                    OutputHead::Softmax => (0..n).for_each(|r| softmax_in_place(z.row_mut(r))),
                }
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                fingerprint: self.fingerprint(),
                acts,
            },
        ))
    }

    /// Exact reverse-mode gradient of `sum_{r,c} output[r][c] * output_grad[r][c]`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<GradResult> {
        if cache.fingerprint != self.fingerprint() || cache.acts.len() != self.shape.layer_sizes.len() {
            return Err(Error::StaleCache);
        }
        let out = cache.output();
        dim_check("output gradient rows", out.rows(), output_grad.rows())?;
        dim_check("output gradient cols", out.cols(), output_grad.cols())?;
        let n = out.rows();
        let value = super::dot(out.as_slice(), output_grad.as_slice());
        let sizes = &self.shape.layer_sizes;
        let n_layers = sizes.len() - 1;
        let p = self.params.as_slice();
        let mut grad = vec![0.0; p.len()];

        // gradient wrt pre-activation of the last layer
        let mut delta = output_grad.clone();
        match self.shape.head {
            OutputHead::Linear => {}
            OutputHead::Sigmoid => {
                for (d, y) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *d *= y * (1.0 - y);
                }
            }
            OutputHead::Softmax => {
                for r in 0..n {
                    let y = out.row(r);
                    let s = super::dot(delta.row(r), y);
                    for (d, yi) in delta.row_mut(r).iter_mut().zip(y) {
                        *d = yi * (*d - s);
                    }
                }
            }
        }

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += (sizes[l] + 1) * sizes[l + 1];
        }

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let offset = offsets[l];
            let input = &cache.acts[l];
            {
                let (gw, gb) = grad[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..n {
                    let dr = delta.row(r);
                    let xr = input.row(r);
                    for o in 0..fan_out {
                        let d = dr[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let gwr = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for (g, x) in gwr.iter_mut().zip(xr) {
                            *g += d * x;
                        }
                    }
                }
            }
            let w = &p[offset..offset + fan_in * fan_out];
            let mut prev = Matrix::zeros(n, fan_in);
            for r in 0..n {
                let dr = delta.row(r);
                let pr = prev.row_mut(r);
                for o in 0..fan_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pv, wv) in pr.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *pv += d * wv;
                    }
                }
            }
            if l > 0 {
                // through the hidden activation that produced acts[l]
                let a = &cache.acts[l];
                for (g, av) in prev.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *g *= match self.shape.activation {
                        Activation::Relu => {
                            if *av > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Tanh => 1.0 - av * av,
                    };
                }
            }
            delta = prev;
        }

        Ok(GradResult {
            value,
            param_grad: ParamVector::from_vec(grad),
            input_grad: delta,
        })
    }
}

/// Concatenates the parameters of several networks.
pub fn flatten_params(networks: &[Mlp]) -> ParamVector {
    let mut out = Vec::with_capacity(networks.iter().map(|n| n.params.len()).sum());
    for n in networks {
        out.extend_from_slice(n.params.as_slice());
    }
    ParamVector::from_vec(out)
}

/// Inverse of [`flatten_params`] for the given shapes.
pub fn unflatten_params(pv: &ParamVector, shapes: &[MlpShape]) -> Result<Vec<Mlp>> {
    let total: usize = shapes.iter().map(MlpShape::param_count).sum();
    dim_check("flattened params", total, pv.len())?;
    let mut offset = 0;
    let mut nets = Vec::with_capacity(shapes.len());
    for s in shapes {
        let len = s.param_count();
        let params = ParamVector::from_vec(pv.as_slice()[offset..offset + len].to_vec());
        nets.push(Mlp::from_params(s.clone(), params)?);
        offset += len;
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::super::{finite_diff_gradient, relative_error};
    use super::*;

    #[test]
    fn param_count_and_determinism() {
        let a = Mlp::init(&[2, 4, 2], Activation::Relu, OutputHead::Softmax, 7).unwrap();
        assert_eq!(a.params().len(), 22);
        let b = Mlp::init(&[2, 4, 2], Activation::Relu, OutputHead::Softmax, 7).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(&[2, 4, 2], Activation::Relu, OutputHead::Softmax, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_layer_sizes() {
        assert!(Mlp::init(&[2], Activation::Relu, OutputHead::Linear, 0).is_err());
        assert!(Mlp::init(&[2, 0, 1], Activation::Relu, OutputHead::Linear, 0).is_err());
    }

    #[test]
    fn zero_input_gives_biases() {
        let m = Mlp::init(&[2, 2], Activation::Relu, OutputHead::Linear, 3).unwrap();
        let (out, _) = m.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let shape = MlpShape {
            layer_sizes: vec![2, 2],
            activation: Activation::Relu,
            head: OutputHead::Linear,
        };
        let m = Mlp::from_params(shape, ParamVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(m.forward(&[3.0, 4.0]).unwrap().0, vec![3.0, 4.0]);
        assert!(m.forward(&[3.0]).is_err());
    }

    #[test]
    fn softmax_head_normalised() {
        let m = Mlp::init(&[3, 5, 4], Activation::Tanh, OutputHead::Softmax, 1).unwrap();
        let (out, _) = m.forward(&[0.3, -2.0, 5.0]).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn hand_evaluated_tanh_net() {
        // 1 -> 1 (tanh) -> 1 linear: y = w2 * tanh(w1 x + b1) + b2
        let shape = MlpShape {
            layer_sizes: vec![1, 1, 1],
            activation: Activation::Tanh,
            head: OutputHead::Linear,
        };
        let m = Mlp::from_params(shape, ParamVector::from_vec(vec![0.5, 0.1, -2.0, 0.3])).unwrap();
        let x = 1.2;
        let expected = -2.0 * (0.5 * x + 0.1_f64).tanh() + 0.3;
        let (out, _) = m.forward(&[x]).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_row_gradient_is_input() {
        let m = Mlp::init(&[3, 2], Activation::Relu, OutputHead::Linear, 5).unwrap();
        let x = [0.7, -1.1, 2.0];
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &Matrix::row_vector(&[1.0, 0.0])).unwrap();
        assert_eq!(&g.param_grad.as_slice()[0..3], &x);
        assert_eq!(g.param_grad.as_slice()[6], 1.0);
        assert!(g.param_grad.as_slice()[3..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_grad_gives_zero() {
        let m = Mlp::init(&[3, 4, 2], Activation::Tanh, OutputHead::Softmax, 5).unwrap();
        let (_, cache) = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.param_grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = Mlp::init(&[2, 3, 1], Activation::Tanh, OutputHead::Sigmoid, 5).unwrap();
        let (_, cache) = m.forward(&[0.1, 0.2]).unwrap();
        let step = ParamVector::from_vec(vec![0.01; m.params().len()]);
        m.descend(1.0, &step).unwrap();
        assert!(matches!(m.backward(&cache, &Matrix::zeros(1, 1)), Err(Error::StaleCache)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act, head) in [
            (1, Activation::Tanh, OutputHead::Softmax),
            (2, Activation::Tanh, OutputHead::Sigmoid),
            (3, Activation::Relu, OutputHead::Linear),
        ] {
            let m = Mlp::init(&[3, 6, 5, 2], act, head, seed).unwrap();
            let x = Matrix::from_rows(&[vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9]]).unwrap();
            let og = Matrix::from_rows(&[vec![0.4, -1.3], vec![2.0, 0.1]]).unwrap();
            let (_, cache) = m.forward_batch(&x).unwrap();
            let g = m.backward(&cache, &og).unwrap();
            let shape = m.shape().clone();
            let f = |p: &ParamVector| {
                let net = Mlp::from_params(shape.clone(), p.clone()).unwrap();
                let (out, _) = net.forward_batch(&x).unwrap();
                super::super::dot(out.as_slice(), og.as_slice())
            };
            let num = finite_diff_gradient(f, m.params(), 1e-5).unwrap();
            assert!(relative_error(g.param_grad.as_slice(), num.as_slice()) < 1e-4);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let a = Mlp::init(&[2, 4, 2], Activation::Relu, OutputHead::Softmax, 1).unwrap();
        let b = Mlp::init(&[2, 2, 2], Activation::Tanh, OutputHead::Linear, 2).unwrap();
        assert_eq!(b.params().len(), 12);
        let c = Mlp::init(&[4, 2], Activation::Tanh, OutputHead::Linear, 2).unwrap();
        let flat = flatten_params(&[a.clone(), c.clone()]);
        assert_eq!(flat.len(), 32);
        let shapes = vec![a.shape().clone(), c.shape().clone()];
        let back = unflatten_params(&flat, &shapes).unwrap();
        assert_eq!(back, vec![a, c]);
        assert!(flatten_params(&[]).is_empty());
        assert!(unflatten_params(&ParamVector::zeros(3), &shapes).is_err());
    }
}

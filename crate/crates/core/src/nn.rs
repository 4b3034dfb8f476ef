//! Fully connected network with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat buffer so that optimizers, moving averages
//! and checkpoints treat them uniformly. Layer `l` occupies a weight block
//! of shape `in_l x out_l` (row-major, applied as `X W`) followed by a bias
//! of length `out_l`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use crate::error::{IfmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x sigmoid(x)`.
    Silu,
    Tanh,
}

impl Activation {
    /// Stable identifier used in checkpoints.
    pub fn id(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Tanh),
            _ => Err(IfmError::InvalidValue(format!("unknown activation id {id}"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Architecture of a multilayer perceptron; parameters are passed in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
}

/// Activations recorded by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    /// Inputs of each layer (the network input first).
    inputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.pre.last().expect("network has a layer").view()
    }
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        if sizes.contains(&0) {
            return Err(IfmError::InvalidValue(format!("layer widths must be positive, got {sizes:?}")));
        }
        Ok(Self { sizes, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offsets of layer `l`'s weight block and bias within the flat buffer.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for
    /// weights and biases alike.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        params
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (w, b) = self.offsets(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (
            ArrayView2::from_shape((i, o), &params[w..b]).expect("weight block shape"),
            ArrayView1::from(&params[b..b + o]),
        )
    }

    fn check(&self, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(IfmError::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        if x.ncols() != self.input_dim() {
            return Err(IfmError::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    fn affine(&self, params: &[f64], l: usize, a: &ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.layer(params, l);
        let mut z = a.dot(&w);
        z += &b;
        z
    }

    /// Network output for a batch of rows.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(params, &x)?;
        let act = self.activation;
        let mut a = self.affine(params, 0, &x);
        for l in 1..self.layers() {
            a.mapv_inplace(|v| act.apply(v));
            a = self.affine(params, l, &a.view());
        }
        Ok(a)
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Tape> {
        self.check(params, &x)?;
        let act = self.activation;
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let z = self.affine(params, l, &inputs[l].view());
            if l + 1 < self.layers() {
                inputs.push(z.mapv(|v| act.apply(v)));
            }
            pre.push(z);
        }
        Ok(Tape { pre, inputs })
    }

    /// Writes `dLoss/dparams` into `grad` given `dLoss/doutput`.
    pub fn backward(&self, params: &[f64], tape: &Tape, grad_out: ArrayView2<f64>, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(IfmError::DimensionMismatch { expected: self.param_count(), got: grad.len() });
        }
        let act = self.activation;
        let mut delta = grad_out.to_owned();
        for l in (0..self.layers()).rev() {
            let (w_off, b_off) = self.offsets(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            {
                let (gw, gb) = grad[w_off..b_off + o].split_at_mut(b_off - w_off);
                let mut gw = ArrayViewMut2::from_shape((i, o), gw).expect("weight block shape");
                general_mat_mul(1.0, &tape.inputs[l].t(), &delta, 0.0, &mut gw);
                for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = s;
                }
            }
            if l > 0 {
                let (w, _) = self.layer(params, l);
                let mut prev = delta.dot(&w.t());
                Zip::from(&mut prev).and(&tape.pre[l - 1]).for_each(|d, &z| *d *= act.derivative(z));
                delta = prev;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;

    #[test]
    fn parameter_layout() {
        let m = Mlp::new(3, &[4, 5], 3, Activation::Silu).unwrap();
        assert_eq!(m.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 3 + 3);
        assert_eq!(m.offsets(1), (16, 36));
        assert!(Mlp::new(3, &[0], 3, Activation::Silu).is_err());
    }

    #[test]
    fn forward_matches_scalar_evaluation() {
        let m = Mlp::new(2, &[3], 1, Activation::Silu).unwrap();
        let p = m.init(&mut rng_from_seed(1));
        let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.7]).unwrap();
        let got = m.forward(&p, x.view()).unwrap()[[0, 0]];
        let mut want = p[3 * 2 + 3 + 3];
        for j in 0..3 {
            let z = 0.3 * p[j] - 0.7 * p[3 + j] + p[6 + j];
            want += Activation::Silu.apply(z) * p[9 + j];
        }
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for z in [-5.0, -0.3, 0.0, 0.8, 6.0] {
            for act in [Activation::Silu, Activation::Tanh] {
                let fd = (act.apply(z + 1e-6) - act.apply(z - 1e-6)) / 2e-6;
                assert!((fd - act.derivative(z)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = Mlp::new(3, &[4, 4], 3, Activation::Silu).unwrap();
        let mut rng = rng_from_seed(4);
        let p = m.init(&mut rng);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &[f64]| {
            let y = m.forward(p, x.view()).unwrap();
            (&y - &t).mapv(|v| v * v).sum()
        };
        let tape = m.forward_tape(&p, x.view()).unwrap();
        let g_out = (&tape.output() - &t) * 2.0;
        let mut g = vec![0.0; m.param_count()];
        m.backward(&p, &tape, g_out.view(), &mut g).unwrap();
        for i in 0..p.len() {
            let mut hi = p.clone();
            hi[i] += 1e-5;
            let mut lo = p.clone();
            lo[i] -= 1e-5;
            let fd = (loss(&hi) - loss(&lo)) / 2e-5;
            assert!((fd - g[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {i}: {fd} vs {}", g[i]);
        }
    }
}

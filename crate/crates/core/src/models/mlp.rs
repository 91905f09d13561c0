use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{ProbModel, Task};
use crate::rng::RngStream;
use crate::scalar::{ln_2pi, sigmoid, softplus, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Real>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
        }
    }
}

/// Output likelihood attached to the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head<T> {
    /// Gaussian with known noise variance on every output.
    Gaussian { noise_var: T },
    /// Single logit, Bernoulli likelihood.
    Bernoulli,
    /// One logit per class, categorical likelihood.
    Softmax,
}

/// Keep-masks for the inputs of each layer; `None` leaves that layer untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub layers: Vec<Option<Vec<bool>>>,
}

/// Fully connected network `NN_θ(x)` with a likelihood head.
///
/// Parameters are laid out layer by layer as the row-major weight matrix
/// (`out × in`) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    head: Head<T>,
    offsets: Vec<usize>,
}

impl<T: Real> Mlp<T> {
    /// `sizes = [input, hidden.., output]` with at least one hidden layer.
    pub fn new(sizes: Vec<usize>, activation: Activation, head: Head<T>) -> Result<Self> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(Error::invalid("an MLP needs input, output and at least one non-empty hidden layer"));
        }
        let out = *sizes.last().unwrap();
        match head {
            Head::Gaussian { noise_var } if !(noise_var > T::zero()) => {
                return Err(Error::invalid("noise variance must be positive"));
            }
            Head::Bernoulli if out != 1 => return Err(Error::invalid("Bernoulli head needs one output")),
            Head::Softmax if out < 2 => return Err(Error::invalid("softmax head needs at least two outputs")),
            _ => {}
        }
        let mut offsets = vec![0];
        for w in sizes.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        Ok(Self { sizes, activation, head, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head<T> {
        self.head
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Zero-mean Gaussian initial weights with the given standard deviation.
    pub fn init_params(&self, std: f64, rng: &mut RngStream) -> Vec<T> {
        (0..self.param_dim_inner()).map(|_| T::lit(std * rng.standard_normal())).collect()
    }

    fn param_dim_inner(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Draws keep-masks where each unit is dropped with probability `p`.
    /// Hidden-layer inputs are always masked; the network input only when
    /// `mask_input` is set.
    pub fn sample_masks(&self, p: f64, mask_input: bool, rng: &mut RngStream) -> DropoutMasks {
        let layers = (0..self.n_layers())
            .map(|l| {
                (l > 0 || mask_input).then(|| (0..self.sizes[l]).map(|_| !rng.bernoulli(p)).collect())
            })
            .collect();
        DropoutMasks { layers }
    }

    /// Forward pass; returns per-layer inputs (after masking) and pre-activations.
    fn forward(&self, theta: &[T], x: &[T], masks: Option<&DropoutMasks>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            if let Some(Some(m)) = masks.map(|m| &m.layers[l]) {
                a.iter_mut().zip(m).for_each(|(v, &keep)| {
                    if !keep {
                        *v = T::zero()
                    }
                });
            }
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &theta[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &theta[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let z: Vec<T> = (0..n_out)
                .map(|j| b[j] + w[j * n_in..(j + 1) * n_in].iter().zip(&a).map(|(&wi, &ai)| wi * ai).sum::<T>())
                .collect();
            let next = if l + 1 < self.n_layers() { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        (inputs, pre)
    }

    /// Raw network output (regression mean or logits).
    pub fn output(&self, theta: &[T], x: &[T], masks: Option<&DropoutMasks>) -> Result<Vec<T>> {
        check_dim(self.param_dim_inner(), theta.len())?;
        check_dim(self.sizes[0], x.len())?;
        Ok(self.forward(theta, x, masks).1.pop().unwrap())
    }

    /// Head-transformed output: mean for regression, class probabilities otherwise.
    pub fn predict_masked(&self, theta: &[T], x: &[T], masks: Option<&DropoutMasks>) -> Result<Vec<T>> {
        let z = self.output(theta, x, masks)?;
        Ok(match self.head {
            Head::Gaussian { .. } => z,
            Head::Bernoulli => {
                let p = sigmoid(z[0]);
                vec![T::one() - p, p]
            }
            Head::Softmax => softmax(&z),
        })
    }

    /// Per-row log-likelihood with optional dropout masks, shared between the
    /// forward and backward pass.
    pub fn row_log_lik_masked(
        &self,
        theta: &[T],
        x: &[T],
        y: &[T],
        masks: Option<&DropoutMasks>,
        grad: Option<&mut [T]>,
    ) -> T {
        let (inputs, pre) = self.forward(theta, x, masks);
        let z = pre.last().unwrap();
        let (ll, dz) = match self.head {
            Head::Gaussian { noise_var } => {
                let mut ll = T::zero();
                let dz: Vec<T> = z
                    .iter()
                    .zip(y)
                    .map(|(&zi, &yi)| {
                        let r = yi - zi;
                        ll -= T::half() * (ln_2pi::<T>() + noise_var.ln() + r * r / noise_var);
                        r / noise_var
                    })
                    .collect();
                (ll, dz)
            }
            Head::Bernoulli => (y[0] * z[0] - softplus(z[0]), vec![y[0] - sigmoid(z[0])]),
            Head::Softmax => {
                let c = y[0].to_usize().unwrap_or(0);
                let p = softmax(z);
                let lse = log_sum_exp(z);
                let dz = p.iter().enumerate().map(|(j, &pj)| if j == c { T::one() - pj } else { -pj }).collect();
                (z[c] - lse, dz)
            }
        };
        let Some(g) = grad else { return ll };

        let mut delta = dz;
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let a = &inputs[l];
            for j in 0..n_out {
                for i in 0..n_in {
                    g[off + j * n_in + i] = delta[j] * a[i];
                }
                g[off + n_in * n_out + j] = delta[j];
            }
            if l == 0 {
                break;
            }
            let w = &theta[off..off + n_in * n_out];
            let mut da: Vec<T> = (0..n_in).map(|i| (0..n_out).map(|j| w[j * n_in + i] * delta[j]).sum()).collect();
            if let Some(Some(m)) = masks.map(|m| &m.layers[l]) {
                da.iter_mut().zip(m).for_each(|(v, &keep)| {
                    if !keep {
                        *v = T::zero()
                    }
                });
            }
            let z_prev = &pre[l - 1];
            delta = da
                .iter()
                .zip(z_prev)
                .zip(a)
                .map(|((&d, &zp), &ap)| d * self.activation.derivative(zp, ap))
                .collect();
        }
        ll
    }
}

fn log_sum_exp<T: Real>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

impl<T: Real> ProbModel<T> for Mlp<T> {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn param_dim(&self) -> usize {
        self.param_dim_inner()
    }

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn task(&self) -> Task {
        match self.head {
            Head::Gaussian { .. } => Task::Regression,
            Head::Bernoulli => Task::BinaryClassification,
            Head::Softmax => Task::Multiclass { classes: *self.sizes.last().unwrap() },
        }
    }

    fn target_dim(&self) -> usize {
        match self.head {
            Head::Gaussian { .. } => *self.sizes.last().unwrap(),
            _ => 1,
        }
    }

    fn row_log_lik(&self, theta: &[T], x: &[T], y: &[T], grad: Option<&mut [T]>) -> T {
        self.row_log_lik_masked(theta, x, y, None, grad)
    }

    fn predict(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        self.predict_masked(theta, x, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::Dataset;

    fn regression_net() -> Mlp<f64> {
        Mlp::new(vec![2, 8, 1], Activation::Tanh, Head::Gaussian { noise_var: 0.5 }).unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(ProbModel::<f64>::param_dim(&regression_net()), 2 * 8 + 8 + 8 + 1);
        assert!(Mlp::<f64>::new(vec![2, 1], Activation::Relu, Head::Bernoulli).is_err());
        assert!(Mlp::<f64>::new(vec![2, 3, 2], Activation::Relu, Head::Bernoulli).is_err());
    }

    #[test]
    fn zero_weights_output_equals_output_bias() {
        let net = regression_net();
        let mut theta = vec![0.0; ProbModel::<f64>::param_dim(&net)];
        *theta.last_mut().unwrap() = 0.7;
        for x in [[0.0, 0.0], [5.0, -3.0], [1e3, 2.0]] {
            assert_eq!(net.predict(&theta, &x).unwrap(), vec![0.7]);
        }
    }

    #[test]
    fn size_mismatch_is_reported() {
        let net = regression_net();
        let d = Dataset::new(Matrix::from_rows(&[vec![1.0, 2.0]]), Matrix::from_rows(&[vec![0.0]]), Task::Regression).unwrap();
        assert!(matches!(net.log_lik(&[0.0; 3], &d), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let net = Mlp::new(vec![3, 4, 3], Activation::Relu, Head::Softmax).unwrap();
        let theta = net.init_params(1.0, &mut RngStream::new(4));
        let p = net.predict(&theta, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_keep_masks_match_unmasked_pass() {
        let net = regression_net();
        let theta = net.init_params(0.5, &mut RngStream::new(5));
        let masks = net.sample_masks(0.0, true, &mut RngStream::new(6));
        let a = net.output(&theta, &[0.2, 0.9], None).unwrap();
        let b = net.output(&theta, &[0.2, 0.9], Some(&masks)).unwrap();
        assert_eq!(a, b);
    }
}

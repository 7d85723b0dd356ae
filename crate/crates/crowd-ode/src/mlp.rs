use crate::error::{Error, Result};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network shape: `sizes[0]` inputs through hidden layers to
/// `sizes.last()` outputs. Hidden layers use tanh; the output layer is
/// linear.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix in
/// row-major `[out][in]` order, then the biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig(
                "network layer sizes must be >= 1".into(),
            ));
        }
        Ok(MlpSpec {
            sizes: sizes.to_vec(),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offset of layer `l`'s weight block in the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
            + if l > 0 {
                self.sizes[l - 1] * self.sizes[l] + self.sizes[l]
            } else {
                0
            }
    }

    /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_params());
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for _ in 0..n_in * n_out {
                theta.push(dist.sample(rng));
            }
            for _ in 0..n_out {
                theta.push(0.0);
            }
        }
        theta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Evaluates the network, storing every layer's post-activation in
    /// `tape` (tape.layers[0] is the input copy, tape.layers[L] the output).
    pub fn forward(&self, theta: &[f64], input: &[f64], tape: &mut MlpTape) -> Result<()> {
        self.check_theta(theta)?;
        if input.len() != self.n_inputs() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} inputs, got {}",
                self.n_inputs(),
                input.len()
            )));
        }
        tape.layers.resize(self.sizes.len(), Vec::new());
        tape.layers[0].clear();
        tape.layers[0].extend_from_slice(input);

        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &theta[offset..offset + n_in * n_out];
            let biases = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;

            let (done, rest) = tape.layers.split_at_mut(l + 1);
            let x = &done[l];
            let out = &mut rest[0];
            out.clear();
            out.resize(n_out, 0.0);
            let last = l + 1 == self.n_layers();
            for (o, out_o) in out.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                *out_o = if last { acc } else { acc.tanh() };
            }
        }
        Ok(())
    }

    /// Reverse pass over a tape produced by `forward` with the same theta.
    ///
    /// `grad_theta` is accumulated into (so per-sample contributions sum);
    /// `grad_input` is overwritten with the input cotangent.
    pub fn backward(
        &self,
        theta: &[f64],
        tape: &MlpTape,
        cot_output: &[f64],
        grad_theta: &mut [f64],
        grad_input: &mut [f64],
    ) -> Result<()> {
        self.check_theta(theta)?;
        if grad_theta.len() != theta.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer holds {}, expected {}",
                grad_theta.len(),
                theta.len()
            )));
        }
        if cot_output.len() != self.n_outputs() || grad_input.len() != self.n_inputs() {
            return Err(Error::ShapeMismatch(
                "cotangent shapes do not match the network".into(),
            ));
        }
        if tape.layers.len() != self.sizes.len()
            || tape
                .layers
                .iter()
                .zip(&self.sizes)
                .any(|(buf, &s)| buf.len() != s)
        {
            return Err(Error::ShapeMismatch(
                "tape does not match the network shape".into(),
            ));
        }

        let mut cot: Vec<f64> = cot_output.to_vec();
        let mut cot_prev: Vec<f64> = Vec::new();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = self.layer_offset(l);
            let x = &tape.layers[l];
            let a = &tape.layers[l + 1];
            let last = l + 1 == self.n_layers();

            cot_prev.clear();
            cot_prev.resize(n_in, 0.0);
            let (gw, gb) = grad_theta[offset..offset + n_in * n_out + n_out]
                .split_at_mut(n_in * n_out);
            let weights = &theta[offset..offset + n_in * n_out];
            for o in 0..n_out {
                // Hidden layers are tanh; d tanh = 1 - a^2 from the stored
                // post-activation.
                let cz = if last {
                    cot[o]
                } else {
                    cot[o] * (1.0 - a[o] * a[o])
                };
                gb[o] += cz;
                let row_w = &weights[o * n_in..(o + 1) * n_in];
                let row_g = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row_g[i] += cz * x[i];
                    cot_prev[i] += cz * row_w[i];
                }
            }
            std::mem::swap(&mut cot, &mut cot_prev);
        }
        grad_input.copy_from_slice(&cot);
        Ok(())
    }
}

/// Reusable buffer of per-layer activations.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub layers: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

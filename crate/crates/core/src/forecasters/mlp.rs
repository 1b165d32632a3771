//! Single-hidden-layer perceptron shared by the shallow one-step model and
//! the batch corrector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parameters are stored flat in the order hidden weights (row-major,
/// `hidden x inputs`), hidden biases, output weights (row-major,
/// `outputs x hidden`), output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    pub fn parameter_count_for(inputs: usize, hidden: usize, outputs: usize) -> usize {
        (inputs + 1) * hidden + (hidden + 1) * outputs
    }

    pub fn zeroed(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Mlp {
            inputs,
            hidden,
            outputs,
            params: vec![0.0; Self::parameter_count_for(inputs, hidden, outputs)],
        }
    }

    /// Glorot-uniform weights from a seeded stream, zero biases.
    pub fn seeded(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut net = Self::zeroed(inputs, hidden, outputs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt();
        let (w1, _, w2, _) = net.offsets();
        for p in &mut net.params[w1..w1 + hidden * inputs] {
            *p = rng.random_range(-a1..a1);
        }
        for p in &mut net.params[w2..w2 + outputs * hidden] {
            *p = rng.random_range(-a2..a2);
        }
        net
    }

    pub fn from_params(inputs: usize, hidden: usize, outputs: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::parameter_count_for(inputs, hidden, outputs);
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(Mlp {
            inputs,
            hidden,
            outputs,
            params,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.inputs, self.hidden, self.outputs)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|j| {
                let row = &params[w1 + j * self.inputs..w1 + (j + 1) * self.inputs];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[b1 + j];
                sigmoid(z)
            })
            .collect()
    }

    fn output_from_hidden(&self, params: &[f64], h: &[f64]) -> Vec<f64> {
        let (_, _, w2, b2) = self.offsets();
        (0..self.outputs)
            .map(|o| {
                let row = &params[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                row.iter().zip(h).map(|(w, a)| w * a).sum::<f64>() + params[b2 + o]
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::ShapeMismatch {
                expected: self.inputs,
                actual: x.len(),
            });
        }
        let h = self.hidden_activations(&self.params, x);
        Ok(self.output_from_hidden(&self.params, &h))
    }

    fn loss_with(&self, params: &[f64], inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let n = inputs.len().max(1) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let h = self.hidden_activations(params, x);
                let y = self.output_from_hidden(params, &h);
                y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / (2.0 * n)
    }

    /// Half mean squared error over the samples.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        self.loss_with(&self.params, inputs, targets)
    }

    /// Loss and its analytic gradient with respect to the flat parameters.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<f64>) {
        Self::loss_and_gradient_at(self, &self.params, inputs, targets)
    }

    fn loss_and_gradient_at(
        &self,
        params: &[f64],
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> (f64, Vec<f64>) {
        let (w1, b1, w2, b2) = self.offsets();
        let n = inputs.len().max(1) as f64;
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let h = self.hidden_activations(params, x);
            let y = self.output_from_hidden(params, &h);
            let delta_out: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
            loss += delta_out.iter().map(|d| d * d).sum::<f64>();

            let mut back = vec![0.0; self.hidden];
            for (o, d) in delta_out.iter().enumerate() {
                grad[b2 + o] += d;
                let row = w2 + o * self.hidden;
                for j in 0..self.hidden {
                    grad[row + j] += d * h[j];
                    back[j] += d * params[row + j];
                }
            }
            for j in 0..self.hidden {
                let dz = back[j] * h[j] * (1.0 - h[j]);
                grad[b1 + j] += dz;
                let row = w1 + j * self.inputs;
                for (i, xi) in x.iter().enumerate() {
                    grad[row + i] += dz * xi;
                }
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        (loss / (2.0 * n), grad)
    }

    /// Full-batch gradient descent. A step that raises the training loss is
    /// rejected and the step size halved; accepted steps grow it by
    /// `cfg.growth`. With a validation set, the parameters with the lowest
    /// validation loss are kept and training stops after `cfg.patience`
    /// accepted epochs without improvement.
    pub fn train(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        validation: Option<(&[Vec<f64>], &[Vec<f64>])>,
        cfg: &TrainConfig,
    ) -> Result<TrainReport> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for (x, t) in inputs.iter().zip(targets) {
            if x.len() != self.inputs {
                return Err(Error::ShapeMismatch { expected: self.inputs, actual: x.len() });
            }
            if t.len() != self.outputs {
                return Err(Error::ShapeMismatch { expected: self.outputs, actual: t.len() });
            }
        }

        let (mut loss, mut grad) = self.loss_and_gradient(inputs, targets);
        if !loss.is_finite() {
            return Err(Error::Divergence("initial loss is not finite".into()));
        }
        let mut lr = cfg.learning_rate;
        let mut history = vec![loss];
        let mut best_val = validation.map(|(vx, vt)| self.loss(vx, vt));
        let mut best_params = self.params.clone();
        let mut since_best = 0;
        let mut iterations = 0;

        while history.len() <= cfg.max_epochs && iterations < cfg.max_epochs * 8 {
            iterations += 1;
            let candidate: Vec<f64> = self.params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            let (cand_loss, cand_grad) = self.loss_and_gradient_at(&candidate, inputs, targets);
            if cand_loss.is_finite() && cand_loss <= loss {
                self.params = candidate;
                loss = cand_loss;
                grad = cand_grad;
                history.push(loss);
                lr *= cfg.growth;
                if let (Some((vx, vt)), Some(best)) = (validation, best_val.as_mut()) {
                    let v = self.loss(vx, vt);
                    if v < *best {
                        *best = v;
                        best_params.clone_from(&self.params);
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if since_best >= cfg.patience {
                            break;
                        }
                    }
                }
                if grad.iter().all(|g| g.abs() < cfg.gradient_tolerance) {
                    break;
                }
            } else {
                lr *= 0.5;
                if lr < cfg.min_learning_rate {
                    break;
                }
            }
        }

        if best_val.is_some() {
            self.params = best_params;
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence("parameters became non-finite".into()));
        }
        let final_loss = self.loss(inputs, targets);
        Ok(TrainReport {
            epochs: history.len() - 1,
            final_loss,
            validation_loss: best_val,
            loss_history: history,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub growth: f64,
    pub min_learning_rate: f64,
    pub patience: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 2000,
            learning_rate: 0.5,
            growth: 1.1,
            min_learning_rate: 1e-12,
            patience: 200,
            gradient_tolerance: 1e-10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub validation_loss: Option<f64>,
    /// Training loss after each accepted epoch, starting with the initial loss.
    pub loss_history: Vec<f64>,
}

/// Affine map of the training range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MinMax { min, max }
    }

    fn range(&self) -> f64 {
        let r = self.max - self.min;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / self.range()
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * self.range() + self.min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_formula() {
        let net = Mlp::seeded(15, 8, 1, 1);
        assert_eq!(net.parameter_count(), 16 * 8 + 9);
        assert_eq!(Mlp::parameter_count_for(96, 48, 96), 97 * 48 + 49 * 96);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::zeroed(3, 4, 2);
        let n = net.parameter_count();
        net.params_mut()[n - 2] = 1.5;
        net.params_mut()[n - 1] = -0.25;
        assert_eq!(net.forward(&[9.0, -3.0, 2.0]).unwrap(), vec![1.5, -0.25]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::zeroed(3, 4, 1);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::ShapeMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn accepted_losses_never_increase() {
        let mut net = Mlp::seeded(2, 5, 1, 3);
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, (i % 3) as f64 / 3.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.3 * x[0] + 0.5 * x[1] * x[1]]).collect();
        let cfg = TrainConfig { max_epochs: 300, ..TrainConfig::default() };
        let report = net.train(&xs, &ys, None, &cfg).unwrap();
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_loss < report.loss_history[0]);
    }

    #[test]
    fn scaler_round_trip() {
        let s = MinMax::fit(&[2.0, 6.0, 4.0]);
        assert_eq!(s.scale(4.0), 0.5);
        assert_eq!(s.unscale(s.scale(5.5)), 5.5);
        let flat = MinMax::fit(&[3.0, 3.0]);
        assert_eq!(flat.unscale(flat.scale(3.0)), 3.0);
    }
}

use crate::error::{Error, Result};
use crate::series::{build_features, LagWindowSpec};

use super::mlp::{MinMax, Mlp, TrainConfig};
use super::{check_shape, BaseForecaster, Features, FitReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNetConfig {
    pub hidden: usize,
    /// Min-max scale inputs and target using the training range. Predictions
    /// are always returned in data units.
    pub scale: bool,
    pub train: TrainConfig,
}

impl Default for ShallowNetConfig {
    fn default() -> Self {
        ShallowNetConfig {
            hidden: 8,
            scale: true,
            train: TrainConfig::default(),
        }
    }
}

/// One-hidden-layer sigmoid network predicting one step from a lag window.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNet {
    lag_spec: LagWindowSpec,
    net: Mlp,
    scaler: Option<MinMax>,
}

fn lag_samples(buffer: &[f64], range: std::ops::Range<usize>, spec: &LagWindowSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    range
        .map(|t| {
            let x: Vec<f64> = build_features(buffer, t, spec)
                .expect("caller guarantees history")
                .into_iter()
                .flatten()
                .collect();
            (x, vec![buffer[t]])
        })
        .unzip()
}

impl ShallowNet {
    pub fn from_parts(lag_spec: LagWindowSpec, net: Mlp, scaler: Option<MinMax>) -> Result<Self> {
        let (inputs, _, outputs) = net.dims();
        if inputs != lag_spec.total_lags() || outputs != 1 {
            return Err(Error::ShapeMismatch {
                expected: lag_spec.total_lags(),
                actual: inputs,
            });
        }
        Ok(ShallowNet { lag_spec, net, scaler })
    }

    /// Fits on `train`; when `validation` is given (the segment immediately
    /// after `train`), it drives early stopping.
    pub fn fit(
        train: &[f64],
        validation: Option<&[f64]>,
        lag_spec: &LagWindowSpec,
        cfg: &ShallowNetConfig,
    ) -> Result<(Self, FitReport)> {
        let max_lag = lag_spec.max_lag();
        if train.len() <= max_lag {
            return Err(Error::TooShort {
                len: train.len(),
                needed: max_lag + 1,
            });
        }
        let scaler = cfg.scale.then(|| MinMax::fit(train));
        let scale = |v: f64| scaler.map_or(v, |s| s.scale(v));

        let mut buffer: Vec<f64> = train.iter().copied().map(scale).collect();
        let (xs, ys) = lag_samples(&buffer, max_lag..train.len(), lag_spec);
        let val = validation.filter(|v| !v.is_empty()).map(|v| {
            buffer.extend(v.iter().copied().map(scale));
            lag_samples(&buffer, train.len()..buffer.len(), lag_spec)
        });

        let mut net = Mlp::seeded(lag_spec.total_lags(), cfg.hidden, 1, cfg.train.seed);
        let report = net.train(
            &xs,
            &ys,
            val.as_ref().map(|(vx, vy)| (vx.as_slice(), vy.as_slice())),
            &cfg.train,
        )?;
        Ok((
            ShallowNet {
                lag_spec: lag_spec.clone(),
                net,
                scaler,
            },
            FitReport {
                final_loss: report.final_loss,
                epochs: report.epochs,
                ridge_lambda: None,
                validation_loss: report.validation_loss,
            },
        ))
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn scaler(&self) -> Option<MinMax> {
        self.scaler
    }
}

impl BaseForecaster for ShallowNet {
    fn name(&self) -> &'static str {
        "shallow-net"
    }

    fn lag_spec(&self) -> &LagWindowSpec {
        &self.lag_spec
    }

    fn predict_one(&self, features: &Features) -> Result<f64> {
        check_shape(&self.lag_spec, features)?;
        let x: Vec<f64> = features
            .lags
            .iter()
            .flatten()
            .map(|&v| self.scaler.map_or(v, |s| s.scale(v)))
            .collect();
        let y = self.net.forward(&x)?[0];
        Ok(self.scaler.map_or(y, |s| s.unscale(y)))
    }

    fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchCorrectorConfig {
    pub horizon: usize,
    pub hidden: usize,
    pub scale: bool,
    pub train: TrainConfig,
}

impl Default for BatchCorrectorConfig {
    fn default() -> Self {
        BatchCorrectorConfig {
            horizon: 96,
            hidden: 48,
            scale: true,
            train: TrainConfig::default(),
        }
    }
}

/// Shallow network mapping a whole round of raw predictions to a round of
/// corrected predictions in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCorrector {
    net: Mlp,
    scaler: Option<MinMax>,
}

impl BatchCorrector {
    pub fn from_parts(net: Mlp, scaler: Option<MinMax>) -> Result<Self> {
        let (inputs, _, outputs) = net.dims();
        if inputs != outputs {
            return Err(Error::ShapeMismatch {
                expected: inputs,
                actual: outputs,
            });
        }
        Ok(BatchCorrector { net, scaler })
    }

    /// All weights and biases zero: the output is the output-bias vector.
    pub fn zeroed(horizon: usize, hidden: usize) -> Self {
        BatchCorrector {
            net: Mlp::zeroed(horizon, hidden, horizon),
            scaler: None,
        }
    }

    /// Trains on pairs of (raw round forecast, realized round values).
    pub fn train(raw: &[Vec<f64>], real: &[Vec<f64>], cfg: &BatchCorrectorConfig) -> Result<(Self, FitReport)> {
        if raw.is_empty() || raw.len() != real.len() {
            return Err(Error::InvalidArgument(format!(
                "{} raw rounds for {} real rounds",
                raw.len(),
                real.len()
            )));
        }
        let scaler = cfg.scale.then(|| {
            let all: Vec<f64> = raw.iter().chain(real).flatten().copied().collect();
            MinMax::fit(&all)
        });
        let scale_round = |r: &Vec<f64>| -> Vec<f64> { r.iter().map(|&v| scaler.map_or(v, |s| s.scale(v))).collect() };
        let xs: Vec<Vec<f64>> = raw.iter().map(scale_round).collect();
        let ys: Vec<Vec<f64>> = real.iter().map(scale_round).collect();
        let mut net = Mlp::seeded(cfg.horizon, cfg.hidden, cfg.horizon, cfg.train.seed);
        let report = net.train(&xs, &ys, None, &cfg.train)?;
        Ok((
            BatchCorrector { net, scaler },
            FitReport {
                final_loss: report.final_loss,
                epochs: report.epochs,
                ridge_lambda: None,
                validation_loss: None,
            },
        ))
    }

    pub fn horizon(&self) -> usize {
        self.net.dims().0
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn scaler(&self) -> Option<MinMax> {
        self.scaler
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    pub fn correct_batch(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.horizon() {
            return Err(Error::ShapeMismatch {
                expected: self.horizon(),
                actual: raw.len(),
            });
        }
        let x: Vec<f64> = raw.iter().map(|&v| self.scaler.map_or(v, |s| s.scale(v))).collect();
        let y = self.net.forward(&x)?;
        Ok(y.into_iter().map(|v| self.scaler.map_or(v, |s| s.unscale(v))).collect())
    }
}

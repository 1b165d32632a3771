//! One-step base forecasters and the batch-corrector baseline.
//!
//! Every base model implements [`BaseForecaster`]: given the lag windows
//! for a target step it returns the raw one-step prediction. Multi-step
//! forecasts are produced by the engine, which feeds predictions back into
//! the history buffer.

mod linear;
pub mod mlp;
mod shallow;

use std::fmt::Write as _;
use std::path::Path;

pub use linear::LinearAr;
pub use mlp::{MinMax, Mlp, TrainConfig, TrainReport};
pub use shallow::{BatchCorrector, BatchCorrectorConfig, ShallowNet, ShallowNetConfig};

use crate::error::{Error, Result};
use crate::series::LagWindowSpec;

/// Lag windows for one target step. `target` is the index of the step being
/// predicted in the session's history buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub target: usize,
    pub lags: Vec<Vec<f64>>,
}

impl Features {
    pub fn new(target: usize, lags: Vec<Vec<f64>>) -> Self {
        Features { target, lags }
    }
}

pub trait BaseForecaster: Send + Sync {
    fn name(&self) -> &'static str;

    fn lag_spec(&self) -> &LagWindowSpec;

    /// Raw one-step prediction. Deterministic for fixed parameters and
    /// features.
    fn predict_one(&self, features: &Features) -> Result<f64>;

    /// Number of fitted parameters, including biases.
    fn parameter_count(&self) -> usize;
}

pub(crate) fn check_shape(spec: &LagWindowSpec, features: &Features) -> Result<()> {
    if features.lags.len() != spec.sets().len() {
        return Err(Error::ShapeMismatch {
            expected: spec.sets().len(),
            actual: features.lags.len(),
        });
    }
    for (set, got) in spec.sets().iter().zip(&features.lags) {
        if set.len() != got.len() {
            return Err(Error::ShapeMismatch {
                expected: set.len(),
                actual: got.len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean squared error on the training samples (half-MSE for networks).
    pub final_loss: f64,
    pub epochs: usize,
    /// Set when the normal equations were singular and a ridge term was used.
    pub ridge_lambda: Option<f64>,
    pub validation_loss: Option<f64>,
}

/// Repeats the value observed one period earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalNaive {
    period: usize,
    lag_spec: LagWindowSpec,
}

impl SeasonalNaive {
    pub fn new(period: usize) -> Result<Self> {
        if period < 1 {
            return Err(Error::Config("seasonal naive needs period >= 1".into()));
        }
        Ok(SeasonalNaive {
            period,
            lag_spec: LagWindowSpec::new(vec![vec![period]])?,
        })
    }

    /// Nothing to estimate; only checks one full cycle of history exists.
    pub fn fit(train: &[f64], period: usize) -> Result<(Self, FitReport)> {
        if train.len() < period {
            return Err(Error::TooShort {
                len: train.len(),
                needed: period,
            });
        }
        Ok((
            SeasonalNaive::new(period)?,
            FitReport {
                final_loss: 0.0,
                epochs: 0,
                ridge_lambda: None,
                validation_loss: None,
            },
        ))
    }

    pub fn period(&self) -> usize {
        self.period
    }
}

impl BaseForecaster for SeasonalNaive {
    fn name(&self) -> &'static str {
        "seasonal-naive"
    }

    fn lag_spec(&self) -> &LagWindowSpec {
        &self.lag_spec
    }

    fn predict_one(&self, features: &Features) -> Result<f64> {
        check_shape(&self.lag_spec, features)?;
        Ok(features.lags[0][0])
    }

    fn parameter_count(&self) -> usize {
        0
    }
}

/// Synthetic reference predictor: returns a known reference value for the
/// target step plus a constant bias. Used to build controlled error
/// scenarios, e.g. `PV(t) = RV(t) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedOracle {
    reference: Vec<f64>,
    bias: f64,
    lag_spec: LagWindowSpec,
}

impl BiasedOracle {
    pub fn new(reference: Vec<f64>, bias: f64) -> Self {
        BiasedOracle {
            reference,
            bias,
            lag_spec: LagWindowSpec::new(vec![vec![1]]).expect("static lag spec"),
        }
    }
}

impl BaseForecaster for BiasedOracle {
    fn name(&self) -> &'static str {
        "biased-oracle"
    }

    fn lag_spec(&self) -> &LagWindowSpec {
        &self.lag_spec
    }

    fn predict_one(&self, features: &Features) -> Result<f64> {
        self.reference
            .get(features.target)
            .map(|v| v + self.bias)
            .ok_or(Error::InsufficientHistory {
                t: features.target,
                lag: 0,
            })
    }

    fn parameter_count(&self) -> usize {
        0
    }
}

/// A fitted model that can be saved to and loaded from the flat text format.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    SeasonalNaive(SeasonalNaive),
    LinearAr(LinearAr),
    ShallowNet(ShallowNet),
}

impl FittedModel {
    fn inner(&self) -> &dyn BaseForecaster {
        match self {
            FittedModel::SeasonalNaive(m) => m,
            FittedModel::LinearAr(m) => m,
            FittedModel::ShallowNet(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Versioned text: a magic line, `key=value` header lines, then one
    /// parameter per line in row-major order with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::from(MODEL_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "name={}", self.name());
        let params: Vec<f64> = match self {
            FittedModel::SeasonalNaive(m) => {
                let _ = writeln!(out, "period={}", m.period());
                Vec::new()
            }
            FittedModel::LinearAr(m) => {
                let _ = writeln!(out, "lags={}", m.lag_spec());
                let _ = writeln!(out, "dims={}", m.coefficients().len() + 1);
                std::iter::once(m.intercept()).chain(m.coefficients().iter().copied()).collect()
            }
            FittedModel::ShallowNet(m) => {
                let (i, h, o) = m.network().dims();
                let _ = writeln!(out, "lags={}", m.lag_spec());
                let _ = writeln!(out, "dims={i},{h},{o}");
                match m.scaler() {
                    Some(s) => {
                        let _ = writeln!(out, "scaler={},{}", fmt_param(s.min), fmt_param(s.max));
                    }
                    None => {
                        let _ = writeln!(out, "scaler=none");
                    }
                }
                m.network().params().to_vec()
            }
        };
        let _ = writeln!(out, "params={}", params.len());
        for p in params {
            out.push_str(&fmt_param(p));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(Error::Format("missing model header".into()));
        }
        let mut header = std::collections::BTreeMap::new();
        let mut params = Vec::new();
        let mut expected_params = None;
        for line in lines {
            if let Some(n) = expected_params {
                if params.len() < n {
                    params.push(parse_param(line)?);
                    continue;
                }
                if !line.trim().is_empty() {
                    return Err(Error::Format("trailing content after parameters".into()));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            if k == "params" {
                expected_params = Some(v.parse().map_err(|_| Error::Format("bad params count".into()))?);
            } else {
                header.insert(k.to_string(), v.to_string());
            }
        }
        let n = expected_params.ok_or_else(|| Error::Format("missing params line".into()))?;
        if params.len() != n {
            return Err(Error::Format(format!("expected {n} parameters, found {}", params.len())));
        }
        let get = |k: &str| {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("missing {k}")))
        };
        match get("name")? {
            "seasonal-naive" => {
                let period = get("period")?.parse().map_err(|_| Error::Format("bad period".into()))?;
                Ok(FittedModel::SeasonalNaive(SeasonalNaive::new(period)?))
            }
            "linear-ar" => {
                let lags: LagWindowSpec = get("lags")?.parse()?;
                if params.is_empty() {
                    return Err(Error::Format("linear model without parameters".into()));
                }
                let intercept = params[0];
                Ok(FittedModel::LinearAr(LinearAr::new(lags, intercept, params[1..].to_vec())?))
            }
            "shallow-net" => {
                let lags: LagWindowSpec = get("lags")?.parse()?;
                let dims: Vec<usize> = get("dims")?
                    .split(',')
                    .map(|d| d.parse().map_err(|_| Error::Format("bad dims".into())))
                    .collect::<Result<_>>()?;
                let [i, h, o] = dims[..] else {
                    return Err(Error::Format("shallow net needs three dims".into()));
                };
                let scaler = match get("scaler")? {
                    "none" => None,
                    s => {
                        let (a, b) = s.split_once(',').ok_or_else(|| Error::Format("bad scaler".into()))?;
                        Some(MinMax {
                            min: parse_param(a)?,
                            max: parse_param(b)?,
                        })
                    }
                };
                let net = Mlp::from_params(i, h, o, params)?;
                Ok(FittedModel::ShallowNet(ShallowNet::from_parts(lags, net, scaler)?))
            }
            other => Err(Error::Format(format!("unknown model {other:?}"))),
        }
    }
}

const MODEL_MAGIC: &str = "pidboost-model v1";

pub(crate) fn fmt_param(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_param(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("non-finite parameter {s:?}")));
    }
    Ok(v)
}

impl BaseForecaster for FittedModel {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn lag_spec(&self) -> &LagWindowSpec {
        self.inner().lag_spec()
    }

    fn predict_one(&self, features: &Features) -> Result<f64> {
        self.inner().predict_one(features)
    }

    fn parameter_count(&self) -> usize {
        self.inner().parameter_count()
    }
}

//! PID-style output correction for iterative multi-step forecasting of
//! periodic time series.
//!
//! A one-step base forecaster ([`forecasters::BaseForecaster`]) is run
//! recursively over a round of steps. Each raw prediction is corrected with
//! a control term computed from the errors observed one period earlier
//! ([`booster`]), and the corrected value is fed back as history for the
//! following steps ([`engine`]). Gains are found by coordinate grid search
//! ([`tuner`]) and runs are scored with MAE, MAPE and AIC ([`eval`]).

pub mod booster;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod forecasters;
pub mod series;
pub mod tuner;

pub use booster::{BoosterState, ControlTerms, DerivativeMode, PidGains, StepRecord};
pub use engine::{run_backtest, BacktestConfig, ForecastRun, ForecastSession, InitContext, InitStrategy};
pub use error::{Error, Result};
pub use forecasters::{BaseForecaster, Features, FittedModel};
pub use series::{LagWindowSpec, Series, SplitSpec};

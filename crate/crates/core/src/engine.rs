//! Iterative multi-step prediction with optional PID correction.
//!
//! A session owns a working history buffer. During a round each corrected
//! prediction is appended to the buffer so later steps of the same round
//! condition on it; when the real values of the round arrive they replace
//! the predictions in the buffer.

use serde::{Deserialize, Serialize};

use crate::booster::{BoosterState, ControlTerms, DerivativeMode, PidGains, StepRecord};
use crate::error::{Error, Result};
use crate::forecasters::{BaseForecaster, BatchCorrector, Features};
use crate::series::build_features;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    Zero,
    TrainMae,
    #[default]
    Warmup,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(InitStrategy::Zero),
            "train-mae" | "train_mae" => Ok(InitStrategy::TrainMae),
            "warmup" => Ok(InitStrategy::Warmup),
            other => Err(Error::Config(format!("unknown init strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitStrategy::Zero => "zero",
            InitStrategy::TrainMae => "train-mae",
            InitStrategy::Warmup => "warmup",
        })
    }
}

/// Data the initialization strategies may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct InitContext<'a> {
    pub train_mae: Option<f64>,
    /// Real values following the history, at least one period long.
    pub held_back: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub errors: Vec<f64>,
    pub mae: f64,
}

pub struct ForecastSession<'a> {
    base: &'a dyn BaseForecaster,
    buffer: Vec<f64>,
    booster: Option<BoosterState>,
    period: usize,
    horizon: usize,
    round: usize,
    pending: usize,
    log: Vec<StepRecord>,
}

impl<'a> ForecastSession<'a> {
    /// A session predicting `horizon` steps per round after `history`.
    /// Without a booster, predictions are plain iterative forecasts.
    pub fn new(
        base: &'a dyn BaseForecaster,
        history: &[f64],
        period: usize,
        horizon: usize,
        booster: Option<BoosterState>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let max_lag = base.lag_spec().max_lag();
        if history.len() < max_lag {
            return Err(Error::InsufficientHistory {
                t: history.len(),
                lag: max_lag,
            });
        }
        if let Some(b) = &booster {
            if b.period() != period {
                return Err(Error::InvalidArgument(format!(
                    "booster period {} differs from session period {period}",
                    b.period()
                )));
            }
        }
        Ok(ForecastSession {
            base,
            buffer: history.to_vec(),
            booster,
            period,
            horizon,
            round: 0,
            pending: 0,
            log: Vec::new(),
        })
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    pub fn booster(&self) -> Option<&BoosterState> {
        self.booster.as_ref()
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn raw_prediction(&self) -> Result<(usize, f64)> {
        let t = self.buffer.len();
        let lags = build_features(&self.buffer, t, self.base.lag_spec())?;
        let pv = self.base.predict_one(&Features::new(t, lags))?;
        if !pv.is_finite() {
            return Err(Error::Divergence(format!("base forecaster returned {pv} at step {t}")));
        }
        Ok((t, pv))
    }

    /// Seeds the controller error memory. Warmup consumes one period of
    /// `held_back` values, which are logged as warmup records and end up in
    /// the history buffer. Unboosted sessions run the same warmup round
    /// without correction so their logs stay aligned.
    pub fn initialize(&mut self, strategy: InitStrategy, ctx: InitContext<'_>) -> Result<()> {
        match strategy {
            InitStrategy::Zero => {
                if let Some(b) = self.booster.as_mut() {
                    b.initialize_zero();
                }
                Ok(())
            }
            InitStrategy::TrainMae => {
                let mae = ctx.train_mae.ok_or(Error::MissingContext("train-mae strategy needs a training MAE"))?;
                if let Some(b) = self.booster.as_mut() {
                    b.initialize_constant(mae)?;
                }
                Ok(())
            }
            InitStrategy::Warmup => {
                let held = ctx
                    .held_back
                    .ok_or(Error::MissingContext("warmup strategy needs held-back data"))?;
                if held.len() < self.period {
                    return Err(Error::TooShort {
                        len: held.len(),
                        needed: self.period,
                    });
                }
                self.warmup(&held[..self.period])
            }
        }
    }

    fn warmup(&mut self, reals: &[f64]) -> Result<()> {
        if self.pending != 0 {
            return Err(Error::InvalidArgument("cannot warm up with a round pending".into()));
        }
        let start = self.buffer.len();
        if let Some(b) = self.booster.as_mut() {
            b.begin_warmup();
        }
        for (k, &rv) in reals.iter().enumerate() {
            let (t, pv) = self.raw_prediction()?;
            let mut rec = match self.booster.as_mut() {
                Some(b) => {
                    let mut rec = b.warmup_correct(t, pv)?;
                    b.warmup_observe(rv)?;
                    rec.k = k;
                    rec
                }
                None => plain_record(t, k, pv, true),
            };
            rec.round = self.round;
            rec.observe(rv);
            self.buffer.push(rec.p);
            self.log.push(rec);
        }
        self.buffer[start..].copy_from_slice(reals);
        self.round += 1;
        Ok(())
    }

    /// Predicts one round of `horizon` steps. Each corrected value is
    /// written back to the buffer before the next step is predicted.
    pub fn predict_round(&mut self) -> Result<Vec<f64>> {
        if self.pending != 0 {
            return Err(Error::InvalidArgument("previous round not yet observed".into()));
        }
        let mut out = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            let (t, pv) = self.raw_prediction()?;
            let mut rec = match self.booster.as_mut() {
                Some(b) => b.correct(t, pv, k)?,
                None => plain_record(t, k, pv, false),
            };
            rec.round = self.round;
            self.buffer.push(rec.p);
            self.log.push(rec);
            out.push(rec.p);
            self.pending += 1;
        }
        Ok(out)
    }

    /// Reveals the real values of the pending round. Errors feed the
    /// controller and the reals replace the predictions in the buffer.
    pub fn observe_round(&mut self, real_values: &[f64]) -> Result<RoundSummary> {
        if self.pending == 0 || real_values.len() != self.pending {
            return Err(Error::ShapeMismatch {
                expected: self.pending,
                actual: real_values.len(),
            });
        }
        if real_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("real values must be finite".into()));
        }
        if let Some(b) = self.booster.as_mut() {
            b.finalize_round(real_values)?;
        }
        let start = self.log.len() - self.pending;
        let errors: Vec<f64> = self.log[start..]
            .iter_mut()
            .zip(real_values)
            .map(|(rec, &rv)| rec.observe(rv))
            .collect();
        let buf_start = self.buffer.len() - self.pending;
        self.buffer[buf_start..].copy_from_slice(real_values);
        self.pending = 0;
        self.round += 1;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
        Ok(RoundSummary { errors, mae })
    }

    pub fn into_log(self) -> Vec<StepRecord> {
        self.log
    }
}

fn plain_record(t: usize, k: usize, pv: f64, warmup: bool) -> StepRecord {
    StepRecord {
        t,
        round: 0,
        k,
        warmup,
        pv,
        u: 0.0,
        p: pv,
        rv: None,
        e: None,
        terms: ControlTerms::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub period: usize,
    pub horizon: usize,
    /// `None` runs the plain iterative forecaster with no controller.
    pub gains: Option<PidGains>,
    pub init: InitStrategy,
    pub train_mae: Option<f64>,
    pub derivative: DerivativeMode,
    pub max_rounds: Option<usize>,
}

impl BacktestConfig {
    pub fn new(period: usize, gains: Option<PidGains>) -> Self {
        BacktestConfig {
            period,
            horizon: period,
            gains,
            init: InitStrategy::Warmup,
            train_mae: None,
            derivative: DerivativeMode::RoundLocal,
            max_rounds: None,
        }
    }
}

/// Complete log of a backtest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRun {
    pub period: usize,
    pub horizon: usize,
    pub gains: Option<PidGains>,
    pub init: InitStrategy,
    pub records: Vec<StepRecord>,
}

impl ForecastRun {
    /// Non-warmup records with a known real value.
    pub fn scored(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| !r.warmup && r.e.is_some())
    }

    pub fn warmup_steps(&self) -> usize {
        self.records.iter().filter(|r| r.warmup).count()
    }

    /// CSV with columns `t,pv,u,p,rv,e`, one row per step.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["t", "pv", "u", "p", "rv", "e"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.t.to_string(),
                format!("{}", r.pv),
                format!("{}", r.u),
                format!("{}", r.p),
                opt(r.rv),
                opt(r.e),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Walks `evaluation` round by round after `history`: predict a round, then
/// reveal its real values. With warmup initialization the first period of
/// `evaluation` is consumed by the warmup round. Trailing values that do not
/// fill a round are ignored.
pub fn run_backtest(
    base: &dyn BaseForecaster,
    history: &[f64],
    evaluation: &[f64],
    cfg: &BacktestConfig,
) -> Result<ForecastRun> {
    let booster = cfg
        .gains
        .map(|g| BoosterState::new(cfg.period, g).map(|b| b.with_derivative_mode(cfg.derivative)))
        .transpose()?;
    let mut session = ForecastSession::new(base, history, cfg.period, cfg.horizon, booster)?;

    let warm = if cfg.init == InitStrategy::Warmup { cfg.period } else { 0 };
    let available = evaluation.len().saturating_sub(warm) / cfg.horizon;
    if available == 0 {
        return Err(Error::TooShort {
            len: evaluation.len(),
            needed: warm + cfg.horizon,
        });
    }
    let rounds = cfg.max_rounds.map_or(available, |m| m.min(available));

    session.initialize(
        cfg.init,
        InitContext {
            train_mae: cfg.train_mae,
            held_back: Some(evaluation),
        },
    )?;
    for r in 0..rounds {
        session.predict_round()?;
        let start = warm + r * cfg.horizon;
        session.observe_round(&evaluation[start..start + cfg.horizon])?;
    }
    Ok(ForecastRun {
        period: cfg.period,
        horizon: cfg.horizon,
        gains: cfg.gains,
        init: cfg.init,
        records: session.into_log(),
    })
}

/// Plain iterative rounds over `segment`: (raw round forecast, real round)
/// pairs, the training material for a [`BatchCorrector`].
pub fn raw_round_pairs(
    base: &dyn BaseForecaster,
    history: &[f64],
    segment: &[f64],
    horizon: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut session = ForecastSession::new(base, history, horizon.max(2), horizon, None)?;
    let mut raw = Vec::new();
    let mut real = Vec::new();
    for chunk in segment.chunks_exact(horizon) {
        raw.push(session.predict_round()?);
        session.observe_round(chunk)?;
        real.push(chunk.to_vec());
    }
    Ok((raw, real))
}

/// Replaces each scored round of a plain run with the batch corrector's
/// output. The correction is recorded as `u = p - pv`.
pub fn apply_batch_corrector(run: &ForecastRun, corrector: &BatchCorrector) -> Result<ForecastRun> {
    if corrector.horizon() != run.horizon {
        return Err(Error::ShapeMismatch {
            expected: run.horizon,
            actual: corrector.horizon(),
        });
    }
    let mut records = run.records.clone();
    let first_scored = run.warmup_steps();
    for chunk in records[first_scored..].chunks_mut(run.horizon) {
        if chunk.len() != run.horizon {
            break;
        }
        let raw: Vec<f64> = chunk.iter().map(|r| r.p).collect();
        let corrected = corrector.correct_batch(&raw)?;
        for (rec, p) in chunk.iter_mut().zip(corrected) {
            rec.p = p;
            rec.u = p - rec.pv;
            if let Some(rv) = rec.rv {
                rec.e = Some(p - rv);
            }
        }
    }
    Ok(ForecastRun {
        records,
        gains: None,
        ..run.clone()
    })
}

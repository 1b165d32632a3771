//! PID-style correction of iterative predictions using period-delayed error
//! feedback.
//!
//! Real values for a round of predictions only arrive after the whole round
//! has been forecast, so the controller cannot see the error of the step it
//! is correcting. It uses the error observed one period earlier instead:
//!
//! ```text
//! u(t) = -Kp e(t-T) - Ki sum(e(x), x = start of previous round ..= t-T) - Kd (e(t-T) - e(t-T-1))
//! P(t) = PV(t) + u(t)
//! e(t) = P(t) - RV(t)
//! ```
//!
//! The sum restarts with every round. Rounds and steps are 0-indexed, so at
//! step `k` of a round the proportional term reads `prev_round_errors[k]`
//! and the sum covers `prev_round_errors[0..=k]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::{fmt_param, parse_param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub const ZERO: PidGains = PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
    };

    /// Gains with each component in `[0, 1]`.
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self> {
        for (name, g) in [("kp", kp), ("ki", ki), ("kd", kd)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidGains(format!("{name}={g} outside [0, 1]")));
            }
        }
        Ok(PidGains { kp, ki, kd })
    }

    /// As [`PidGains::new`], additionally requiring `ki < kp` and `kd < kp`
    /// whenever `kp > 0`.
    pub fn constrained(kp: f64, ki: f64, kd: f64) -> Result<Self> {
        let gains = PidGains::new(kp, ki, kd)?;
        gains.check_ordering()?;
        Ok(gains)
    }

    pub fn check_ordering(&self) -> Result<()> {
        if self.kp > 0.0 && (self.ki >= self.kp || self.kd >= self.kp) {
            return Err(Error::InvalidGains(format!(
                "ki={} and kd={} must be below kp={}",
                self.ki, self.kd, self.kp
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.kp == 0.0 && self.ki == 0.0 && self.kd == 0.0
    }
}

impl std::str::FromStr for PidGains {
    type Err = Error;

    /// `"kp,ki,kd"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidGains(format!("cannot parse {s:?}")))?;
        match parts[..] {
            [kp, ki, kd] => PidGains::new(kp, ki, kd),
            _ => Err(Error::InvalidGains(format!("expected kp,ki,kd, got {s:?}"))),
        }
    }
}

/// How the derivative term is formed at the first step of a round, where
/// `e(t-T-1)` lies in the round before the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Backward difference against zero at `k = 0`.
    #[default]
    RoundLocal,
    /// Use the last error of the round before the previous one.
    CrossBoundary,
}

impl DerivativeMode {
    fn as_str(self) -> &'static str {
        match self {
            DerivativeMode::RoundLocal => "round-local",
            DerivativeMode::CrossBoundary => "cross-boundary",
        }
    }
}

impl std::str::FromStr for DerivativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round-local" => Ok(DerivativeMode::RoundLocal),
            "cross-boundary" => Ok(DerivativeMode::CrossBoundary),
            other => Err(Error::Config(format!("unknown derivative mode {other:?}"))),
        }
    }
}

/// The un-weighted inputs of the control law for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlTerms {
    /// `e(t-T)`, or `e(t-1)` during warmup.
    pub lagged_error: f64,
    /// The running error sum, reset each round.
    pub integral: f64,
    /// Backward difference of the lagged error.
    pub difference: f64,
}

impl ControlTerms {
    pub fn control(&self, gains: &PidGains) -> f64 {
        -gains.kp * self.lagged_error - gains.ki * self.integral - gains.kd * self.difference
    }
}

/// One predicted step. `p = pv + u`; once the real value is known,
/// `e = p - rv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub round: usize,
    pub k: usize,
    pub warmup: bool,
    pub pv: f64,
    pub u: f64,
    pub p: f64,
    pub rv: Option<f64>,
    pub e: Option<f64>,
    pub terms: ControlTerms,
}

impl StepRecord {
    pub(crate) fn observe(&mut self, rv: f64) -> f64 {
        let e = self.p - rv;
        self.rv = Some(rv);
        self.e = Some(e);
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Warmup {
    errors: Vec<f64>,
    pending: Option<f64>,
}

/// Controller memory for one forecast session.
#[derive(Debug, Clone, PartialEq)]
pub struct BoosterState {
    period: usize,
    gains: PidGains,
    derivative: DerivativeMode,
    round_index: usize,
    /// Errors of the previous round, indexed by position in the cycle.
    prev_round_errors: Vec<f64>,
    /// Last error of the round before the previous one.
    older_error: f64,
    integral: f64,
    step: usize,
    phase_start: usize,
    pending: Vec<f64>,
    initialized: bool,
    warmup: Option<Warmup>,
}

impl BoosterState {
    pub fn new(period: usize, gains: PidGains) -> Result<Self> {
        if period < 2 {
            return Err(Error::InvalidArgument(format!("period must be >= 2, got {period}")));
        }
        Ok(BoosterState {
            period,
            gains,
            derivative: DerivativeMode::RoundLocal,
            round_index: 0,
            prev_round_errors: vec![0.0; period],
            older_error: 0.0,
            integral: 0.0,
            step: 0,
            phase_start: 0,
            pending: Vec::new(),
            initialized: false,
            warmup: None,
        })
    }

    pub fn with_derivative_mode(mut self, mode: DerivativeMode) -> Self {
        self.derivative = mode;
        self
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn gains(&self) -> PidGains {
        self.gains
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivative
    }

    pub fn round_index(&self) -> usize {
        self.round_index
    }

    pub fn prev_round_errors(&self) -> &[f64] {
        &self.prev_round_errors
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Steps corrected so far in the current round.
    pub fn step_in_round(&self) -> usize {
        self.step
    }

    pub fn pending(&self) -> &[f64] {
        &self.pending
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Strategy (i): all-zero errors, so the first round is uncorrected.
    pub fn initialize_zero(&mut self) {
        self.initialize_with(vec![0.0; self.period]);
    }

    /// Strategy (ii): every error set to a constant, typically the training MAE.
    pub fn initialize_constant(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument("initial error must be finite".into()));
        }
        self.initialize_with(vec![value; self.period]);
        Ok(())
    }

    /// Seeds the error memory directly, e.g. from a previous session.
    pub fn initialize_errors(&mut self, errors: Vec<f64>) -> Result<()> {
        if errors.len() != self.period {
            return Err(Error::ShapeMismatch {
                expected: self.period,
                actual: errors.len(),
            });
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("initial errors must be finite".into()));
        }
        self.initialize_with(errors);
        Ok(())
    }

    fn initialize_with(&mut self, errors: Vec<f64>) {
        self.prev_round_errors = errors;
        self.older_error = 0.0;
        self.integral = 0.0;
        self.step = 0;
        self.phase_start = 0;
        self.pending.clear();
        self.round_index = 0;
        self.initialized = true;
        self.warmup = None;
    }

    /// Strategy (iii): starts a warmup round over held-back data. Each step
    /// is corrected with immediate (lag-1) feedback via
    /// [`warmup_correct`](Self::warmup_correct) and its real value revealed
    /// with [`warmup_observe`](Self::warmup_observe). After one full period
    /// the warmup errors become the previous-round errors.
    pub fn begin_warmup(&mut self) {
        self.initialized = false;
        self.warmup = Some(Warmup {
            errors: Vec::with_capacity(self.period),
            pending: None,
        });
    }

    pub fn warmup_in_progress(&self) -> bool {
        self.warmup.is_some()
    }

    /// Warmup control law with `e(-1) = e(-2) = 0`:
    /// `u(t) = -Kp e(t-1) - Ki sum(e(0..t)) - Kd (e(t-1) - e(t-2))`.
    pub fn warmup_correct(&mut self, t: usize, pv: f64) -> Result<StepRecord> {
        let gains = self.gains;
        let warm = self.warmup.as_mut().ok_or(Error::MissingContext("warmup not started"))?;
        if warm.pending.is_some() {
            return Err(Error::StepOutOfOrder {
                expected: warm.errors.len() + 1,
                actual: warm.errors.len(),
            });
        }
        let k = warm.errors.len();
        let last = warm.errors.last().copied().unwrap_or(0.0);
        let before = if k >= 2 { warm.errors[k - 2] } else { 0.0 };
        let terms = ControlTerms {
            lagged_error: last,
            integral: warm.errors.iter().sum(),
            difference: last - before,
        };
        let u = terms.control(&gains);
        let p = pv + u;
        warm.pending = Some(p);
        Ok(StepRecord {
            t,
            round: 0,
            k,
            warmup: true,
            pv,
            u,
            p,
            rv: None,
            e: None,
            terms,
        })
    }

    /// Reveals the real value of the last warmup step; returns its error.
    pub fn warmup_observe(&mut self, rv: f64) -> Result<f64> {
        if !rv.is_finite() {
            return Err(Error::InvalidArgument("real value must be finite".into()));
        }
        let warm = self.warmup.as_mut().ok_or(Error::MissingContext("warmup not started"))?;
        let p = warm.pending.take().ok_or(Error::MissingContext("no warmup step pending"))?;
        let e = p - rv;
        warm.errors.push(e);
        if warm.errors.len() == self.period {
            let errors = std::mem::take(&mut warm.errors);
            self.initialize_with(errors);
        }
        Ok(e)
    }

    /// Control term for step `k` of the current round. Steps must be taken
    /// in order; each call advances the round and adds `e(t-T)` to the
    /// running sum.
    pub fn compute_control(&mut self, k: usize) -> Result<(f64, ControlTerms)> {
        if !self.initialized {
            return Err(Error::Uninitialized);
        }
        if k != self.step {
            return Err(Error::StepOutOfOrder {
                expected: self.step,
                actual: k,
            });
        }
        let t_len = self.period;
        let phase = (self.phase_start + k) % t_len;
        let lagged = self.prev_round_errors[phase];
        self.integral += lagged;
        let previous = if k == 0 {
            match self.derivative {
                DerivativeMode::RoundLocal => 0.0,
                DerivativeMode::CrossBoundary => {
                    if phase == 0 {
                        self.older_error
                    } else {
                        self.prev_round_errors[phase - 1]
                    }
                }
            }
        } else {
            self.prev_round_errors[(phase + t_len - 1) % t_len]
        };
        let terms = ControlTerms {
            lagged_error: lagged,
            integral: self.integral,
            difference: lagged - previous,
        };
        self.step += 1;
        Ok((terms.control(&self.gains), terms))
    }

    /// Corrects one raw prediction: `P = PV + u`. The corrected value is
    /// held until [`finalize_round`](Self::finalize_round).
    pub fn correct(&mut self, t: usize, pv: f64, k: usize) -> Result<StepRecord> {
        let (u, terms) = self.compute_control(k)?;
        let p = pv + u;
        self.pending.push(p);
        Ok(StepRecord {
            t,
            round: self.round_index,
            k,
            warmup: false,
            pv,
            u,
            p,
            rv: None,
            e: None,
            terms,
        })
    }

    /// Computes `e = P - RV` for every pending step. The errors replace the
    /// previous-round memory, the running sum is reset and the round
    /// counter advances.
    pub fn finalize_round(&mut self, real_values: &[f64]) -> Result<Vec<f64>> {
        if !self.initialized {
            return Err(Error::Uninitialized);
        }
        if self.pending.is_empty() || real_values.len() != self.pending.len() {
            return Err(Error::ShapeMismatch {
                expected: self.pending.len(),
                actual: real_values.len(),
            });
        }
        if real_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("real values must be finite".into()));
        }
        let errors: Vec<f64> = self.pending.iter().zip(real_values).map(|(p, r)| p - r).collect();
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("round produced non-finite errors".into()));
        }
        let t_len = self.period;
        let next_start = (self.phase_start + errors.len()) % t_len;
        self.older_error = self.prev_round_errors[(next_start + t_len - 1) % t_len];
        for (j, e) in errors.iter().enumerate() {
            self.prev_round_errors[(self.phase_start + j) % t_len] = *e;
        }
        self.phase_start = next_start;
        self.integral = 0.0;
        self.step = 0;
        self.pending.clear();
        self.round_index += 1;
        Ok(errors)
    }

    /// Versioned `key=value` text record of the full controller state.
    pub fn to_snapshot(&self) -> Result<String> {
        if self.warmup.is_some() {
            return Err(Error::InvalidArgument("cannot snapshot during warmup".into()));
        }
        let join = |v: &[f64]| v.iter().map(|x| fmt_param(*x)).collect::<Vec<_>>().join(",");
        let mut out = String::from(SNAPSHOT_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "period={}", self.period);
        let _ = writeln!(
            out,
            "gains={},{},{}",
            fmt_param(self.gains.kp),
            fmt_param(self.gains.ki),
            fmt_param(self.gains.kd)
        );
        let _ = writeln!(out, "derivative={}", self.derivative.as_str());
        let _ = writeln!(out, "round={}", self.round_index);
        let _ = writeln!(out, "initialized={}", self.initialized);
        let _ = writeln!(out, "step={}", self.step);
        let _ = writeln!(out, "phase={}", self.phase_start);
        let _ = writeln!(out, "integral={}", fmt_param(self.integral));
        let _ = writeln!(out, "older_error={}", fmt_param(self.older_error));
        let _ = writeln!(out, "prev_errors={}", join(&self.prev_round_errors));
        let _ = writeln!(out, "pending={}", join(&self.pending));
        Ok(out)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SNAPSHOT_MAGIC) {
            return Err(Error::Format("missing booster snapshot header".into()));
        }
        let map: std::collections::BTreeMap<&str, &str> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| Error::Format(format!("bad line {l:?}"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Format(format!("missing {k}")));
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let list = |k: &str| -> Result<Vec<f64>> {
            let raw = get(k)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',').map(parse_param).collect()
        };
        let g = list("gains")?;
        let [kp, ki, kd] = g[..] else {
            return Err(Error::Format("gains need three values".into()));
        };
        let period = int("period")?;
        let mut state = BoosterState::new(period, PidGains::new(kp, ki, kd)?)?;
        state.derivative = get("derivative")?.parse()?;
        state.round_index = int("round")?;
        state.initialized = get("initialized")? == "true";
        state.step = int("step")?;
        state.phase_start = int("phase")?;
        state.integral = parse_param(get("integral")?)?;
        state.older_error = parse_param(get("older_error")?)?;
        state.prev_round_errors = list("prev_errors")?;
        state.pending = list("pending")?;
        if state.prev_round_errors.len() != period || state.phase_start >= period {
            return Err(Error::Format("error memory does not match period".into()));
        }
        if state.pending.len() != state.step {
            return Err(Error::Format("pending predictions do not match step counter".into()));
        }
        Ok(state)
    }
}

const SNAPSHOT_MAGIC: &str = "pidboost-booster v1";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_with(errors: &[f64], gains: PidGains) -> BoosterState {
        let mut s = BoosterState::new(errors.len(), gains).unwrap();
        s.initialize_errors(errors.to_vec()).unwrap();
        s
    }

    #[test]
    fn gains_validation() {
        assert!(PidGains::new(0.4, 0.01, 0.001).is_ok());
        assert!(PidGains::constrained(0.4, 0.01, 0.001).is_ok());
        assert!(PidGains::constrained(0.5, 0.001, 0.001).is_ok());
        assert!(PidGains::constrained(0.0, 0.0, 0.0).is_ok());
        assert!(PidGains::new(1.1, 0.0, 0.0).is_err());
        assert!(PidGains::new(0.5, -0.1, 0.0).is_err());
        assert!(PidGains::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(PidGains::constrained(0.1, 0.2, 0.0).is_err());
        assert!(PidGains::constrained(0.1, 0.0, 0.1).is_err());
        assert_eq!("0.4, 0.01, 0.001".parse::<PidGains>().unwrap().ki, 0.01);
    }

    #[test]
    fn zero_gains_give_zero_control() {
        let mut s = state_with(&[3.0, -7.0, 1e6], PidGains::ZERO);
        for k in 0..3 {
            assert_eq!(s.compute_control(k).unwrap().0, 0.0);
        }
    }

    #[test]
    fn hand_evaluated_control_terms() {
        let gains = PidGains::new(0.5, 0.1, 0.1).unwrap();
        let mut s = state_with(&[2.0, -1.0, 0.5], gains);
        let (u0, _) = s.compute_control(0).unwrap();
        assert!((u0 - -1.4).abs() < 1e-12, "u0 = {u0}");
        let (u1, terms) = s.compute_control(1).unwrap();
        assert!((u1 - 0.7).abs() < 1e-12, "u1 = {u1}");
        assert_eq!(terms.integral, 1.0);
        assert_eq!(s.integral(), 1.0);
    }

    #[test]
    fn uninitialized_and_out_of_order() {
        let mut s = BoosterState::new(3, PidGains::ZERO).unwrap();
        assert!(matches!(s.compute_control(0), Err(Error::Uninitialized)));
        s.initialize_zero();
        assert!(matches!(
            s.compute_control(1),
            Err(Error::StepOutOfOrder { expected: 0, actual: 1 })
        ));
    }

    #[test]
    fn correct_adds_control() {
        let gains = PidGains::new(0.5, 0.1, 0.1).unwrap();
        let mut s = state_with(&[2.0, -1.0, 0.5], gains);
        let rec = s.correct(10, 100.0, 0).unwrap();
        assert!((rec.p - 98.6).abs() < 1e-12);
        assert_eq!(rec.p, rec.pv + rec.u);
        assert_eq!(s.pending(), &[rec.p]);
    }

    #[test]
    fn finalize_computes_errors_and_resets() {
        let gains = PidGains::new(0.3, 0.2, 0.1).unwrap();
        let mut s = BoosterState::new(2, gains).unwrap();
        s.initialize_zero();
        s.correct(0, 11.0, 0).unwrap();
        s.correct(1, 9.0, 1).unwrap();
        let e = s.finalize_round(&[10.0, 10.0]).unwrap();
        assert_eq!(e, vec![1.0, -1.0]);
        assert_eq!(s.prev_round_errors(), &[1.0, -1.0]);
        assert_eq!(s.integral(), 0.0);
        assert_eq!(s.round_index(), 1);

        s.correct(2, 10.0, 0).unwrap();
        assert!(matches!(s.finalize_round(&[1.0, 2.0]), Err(Error::ShapeMismatch { .. })));
        assert!(s.finalize_round(&[f64::NAN]).is_err());
    }

    #[test]
    fn exact_round_silences_controller() {
        let gains = PidGains::new(0.9, 0.5, 0.4).unwrap();
        let mut s = BoosterState::new(2, gains).unwrap();
        s.initialize_constant(5.0).unwrap();
        let a = s.correct(0, 20.0, 0).unwrap();
        let b = s.correct(1, 30.0, 1).unwrap();
        s.finalize_round(&[a.p, b.p]).unwrap();
        assert_eq!(s.prev_round_errors(), &[0.0, 0.0]);
        for k in 0..2 {
            assert_eq!(s.correct(2 + k, 1.0, k).unwrap().u, 0.0);
        }
    }

    #[test]
    fn zero_strategy_is_inert() {
        let mut s = BoosterState::new(4, PidGains::new(1.0, 0.5, 0.5).unwrap()).unwrap();
        s.initialize_zero();
        for k in 0..4 {
            assert_eq!(s.correct(k, 3.0, k).unwrap().u, 0.0);
        }
    }

    #[test]
    fn train_mae_strategy_fills_constant() {
        let mut s = BoosterState::new(96, PidGains::new(0.4, 0.01, 0.001).unwrap()).unwrap();
        s.initialize_constant(3.82).unwrap();
        assert!(s.prev_round_errors().iter().all(|&e| e == 3.82));
        assert_eq!(s.prev_round_errors().len(), 96);
    }

    #[test]
    fn warmup_uses_lag_one_feedback() {
        let gains = PidGains::new(0.5, 0.1, 0.2).unwrap();
        let mut s = BoosterState::new(3, gains).unwrap();
        s.begin_warmup();
        let r0 = s.warmup_correct(0, 12.0).unwrap();
        assert_eq!(r0.u, 0.0);
        assert_eq!(s.warmup_observe(10.0).unwrap(), 2.0);
        let r1 = s.warmup_correct(1, 12.0).unwrap();
        // e(0)=2: -0.5*2 - 0.1*2 - 0.2*(2-0)
        assert!((r1.u - -1.6).abs() < 1e-12);
        let e1 = s.warmup_observe(10.0).unwrap();
        assert!((e1 - 0.4).abs() < 1e-12);
        let r2 = s.warmup_correct(2, 12.0).unwrap();
        // -0.5*0.4 - 0.1*(2+0.4) - 0.2*(0.4-2)
        assert!((r2.u - (-0.2 - 0.24 + 0.32)).abs() < 1e-12);
        assert!(!s.is_initialized());
        s.warmup_observe(10.0).unwrap();
        assert!(s.is_initialized());
        assert_eq!(s.prev_round_errors()[0], 2.0);
    }

    #[test]
    fn warmup_requires_alternating_calls() {
        let mut s = BoosterState::new(3, PidGains::ZERO).unwrap();
        assert!(s.warmup_correct(0, 1.0).is_err());
        s.begin_warmup();
        assert!(s.warmup_observe(1.0).is_err());
        s.warmup_correct(0, 1.0).unwrap();
        assert!(s.warmup_correct(1, 1.0).is_err());
    }

    #[test]
    fn cross_boundary_derivative_uses_older_round() {
        let gains = PidGains::new(0.0, 0.0, 1.0).unwrap();
        let mut s = BoosterState::new(2, gains)
            .unwrap()
            .with_derivative_mode(DerivativeMode::CrossBoundary);
        s.initialize_errors(vec![1.0, 4.0]).unwrap();
        s.correct(0, 0.0, 0).unwrap();
        s.correct(1, 0.0, 1).unwrap();
        // first round after init: older error is 0
        s.finalize_round(&[0.0, 0.0]).unwrap();
        // previous round errors now [u0, u1] = [-1, -3]; older error = 4
        let rec = s.correct(2, 0.0, 0).unwrap();
        assert_eq!(rec.terms.difference, -1.0 - 4.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let gains = PidGains::new(0.4, 0.01, 0.001).unwrap();
        let mut s = state_with(&[0.1, -0.2, 1.0 / 3.0], gains);
        s.correct(0, 5.0, 0).unwrap();
        let text = s.to_snapshot().unwrap();
        let back = BoosterState::from_snapshot(&text).unwrap();
        assert_eq!(back, s);
        assert!(BoosterState::from_snapshot("nope").is_err());
    }

    proptest! {
        #[test]
        fn integral_tracks_prefix_sum(errors in prop::collection::vec(-5.0f64..5.0, 2..12), steps in 0usize..12) {
            let gains = PidGains::new(0.5, 0.2, 0.1).unwrap();
            let mut s = state_with(&errors, gains);
            let steps = steps.min(errors.len());
            for k in 0..steps {
                s.compute_control(k).unwrap();
            }
            let expected: f64 = errors[..steps].iter().sum();
            prop_assert!((s.integral() - expected).abs() < 1e-12);
        }

        #[test]
        fn bounded_errors_give_bounded_control(
            errors in prop::collection::vec(-5.0f64..5.0, 2..12),
            kp in 0.0f64..=1.0, ki in 0.0f64..=1.0, kd in 0.0f64..=1.0,
        ) {
            let gains = PidGains::new(kp, ki, kd).unwrap();
            let m = errors.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            let bound = kp * m + ki * errors.len() as f64 * m + 2.0 * kd * m;
            let mut s = state_with(&errors, gains);
            for k in 0..errors.len() {
                let (u, _) = s.compute_control(k).unwrap();
                prop_assert!(u.abs() <= bound + 1e-12);
            }
        }

        #[test]
        fn error_recursion_identity(
            errors in prop::collection::vec(-5.0f64..5.0, 2..10),
            kp in 0.0f64..=1.0, ki in 0.0f64..=1.0, kd in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let gains = PidGains::new(kp, ki, kd).unwrap();
            let mut s = state_with(&errors, gains);
            let n = errors.len();
            let pv: Vec<f64> = (0..n).map(|i| ((seed + i as u64) % 17) as f64).collect();
            let rv: Vec<f64> = (0..n).map(|i| ((seed * 3 + i as u64) % 11) as f64).collect();
            for k in 0..n {
                s.correct(k, pv[k], k).unwrap();
            }
            let e = s.finalize_round(&rv).unwrap();
            let mut sum = 0.0;
            for k in 0..n {
                sum += errors[k];
                let prev = if k == 0 { 0.0 } else { errors[k - 1] };
                let decomposed = (pv[k] - rv[k]) - kp * errors[k] - ki * sum - kd * (errors[k] - prev);
                prop_assert!((e[k] - decomposed).abs() < 1e-12);
            }
        }
    }
}

//! Coordinate grid search over the controller gains.
//!
//! `kp` is swept first with `ki = kd = 0`, then `ki` with the chosen `kp`,
//! then `kd`. Every candidate is scored by a full boosted backtest over the
//! validation segment with warmup initialization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::booster::{DerivativeMode, PidGains};
use crate::engine::{run_backtest, BacktestConfig, InitStrategy};
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::forecasters::BaseForecaster;

/// Inclusive arithmetic grid `start, start + step, ... <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub max: f64,
}

impl Grid {
    pub fn new(start: f64, step: f64, max: f64) -> Result<Self> {
        if !(step > 0.0) || !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&max) || start > max {
            return Err(Error::Config(format!("bad grid start={start} step={step} max={max}")));
        }
        Ok(Grid { start, step, max })
    }

    pub fn single(value: f64) -> Result<Self> {
        Grid::new(value, 1.0, value)
    }

    /// Candidate values, rounded to 12 decimals so repeated addition does
    /// not drift.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u64;
        loop {
            let v = ((self.start + i as f64 * self.step) * 1e12).round() / 1e12;
            if v > self.max + 1e-12 {
                break;
            }
            out.push(v);
            i += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mae,
    Mape,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Objective::Mae),
            "mape" => Ok(Objective::Mape),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSpec {
    pub kp_grid: Grid,
    pub ki_grid: Grid,
    pub kd_grid: Grid,
    pub objective: Objective,
    pub horizon: usize,
    /// Scored validation rounds; `None` uses every full round available.
    pub rounds: Option<usize>,
    /// Drop `ki`/`kd` candidates not strictly below the chosen `kp`.
    pub enforce_ordering: bool,
    /// Stop a `ki`/`kd` sweep after this many consecutive candidates that
    /// do not improve on the best objective.
    pub patience: usize,
    pub derivative: DerivativeMode,
}

impl TuneSpec {
    pub fn new(horizon: usize) -> Self {
        TuneSpec {
            kp_grid: Grid { start: 0.1, step: 0.1, max: 1.0 },
            ki_grid: Grid { start: 0.0001, step: 0.0001, max: 1.0 },
            kd_grid: Grid { start: 0.0001, step: 0.0001, max: 1.0 },
            objective: Objective::Mae,
            horizon,
            rounds: None,
            enforce_ordering: true,
            patience: 50,
            derivative: DerivativeMode::RoundLocal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Guard,
    Kp,
    Ki,
    Kd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub gains: PidGains,
    /// `+inf` when the candidate produced a non-finite score.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: PidGains,
    pub best_objective: f64,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
    /// Whether the ki / kd sweeps stopped before exhausting their grids.
    pub stopped_early: [bool; 2],
}

impl TuneResult {
    /// CSV with columns `kp,ki,kd,objective,rank`; rank 1 is the best, ties
    /// share order by lexicographic gains.
    pub fn write_trace_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut order: Vec<usize> = (0..self.trace.len()).collect();
        order.sort_by(|&a, &b| compare_entries(&self.trace[a], &self.trace[b]));
        let mut rank = vec![0; self.trace.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r + 1;
        }
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["kp", "ki", "kd", "objective", "rank"])?;
        for (entry, r) in self.trace.iter().zip(rank) {
            out.write_record([
                format!("{}", entry.gains.kp),
                format!("{}", entry.gains.ki),
                format!("{}", entry.gains.kd),
                format!("{}", entry.objective),
                r.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn lex(g: &PidGains) -> [f64; 3] {
    [g.kp, g.ki, g.kd]
}

fn compare_entries(a: &TraceEntry, b: &TraceEntry) -> std::cmp::Ordering {
    a.objective
        .total_cmp(&b.objective)
        .then_with(|| {
            lex(&a.gains)
                .iter()
                .zip(lex(&b.gains).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

struct Evaluator<'a> {
    base: &'a dyn BaseForecaster,
    history: &'a [f64],
    validation: &'a [f64],
    period: usize,
    spec: &'a TuneSpec,
}

impl Evaluator<'_> {
    fn score(&self, gains: PidGains) -> f64 {
        let cfg = BacktestConfig {
            period: self.period,
            horizon: self.spec.horizon,
            gains: Some(gains),
            init: InitStrategy::Warmup,
            train_mae: None,
            derivative: self.spec.derivative,
            max_rounds: self.spec.rounds,
        };
        let value = run_backtest(self.base, self.history, self.validation, &cfg)
            .and_then(|run| compute_metrics(&run))
            .map(|m| match self.spec.objective {
                Objective::Mae => m.mae,
                Objective::Mape => m.mape,
            });
        match value {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }

    fn score_all(&self, candidates: &[PidGains]) -> Vec<f64> {
        candidates.par_iter().map(|g| self.score(*g)).collect()
    }

    /// Sweeps `candidates` in order, chunked so chunks run in parallel while
    /// the early-stopping point stays identical to a sequential sweep.
    fn sweep(&self, stage: Stage, candidates: &[PidGains], mut best: f64, trace: &mut Vec<TraceEntry>) -> bool {
        let chunk = self.spec.patience.max(1);
        let mut since_improvement = 0;
        for block in candidates.chunks(chunk) {
            for (gains, objective) in block.iter().zip(self.score_all(block)) {
                trace.push(TraceEntry { stage, gains: *gains, objective });
                if objective < best {
                    best = objective;
                    since_improvement = 0;
                } else {
                    since_improvement += 1;
                    if since_improvement >= self.spec.patience {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn best_of<'a>(entries: impl Iterator<Item = &'a TraceEntry>) -> Option<&'a TraceEntry> {
    entries.min_by(|a, b| compare_entries(a, b))
}

/// Tunes gains for `base` on `validation`, which must directly follow
/// `history`. The zero-gain guard is always evaluated, so the result never
/// scores worse than no correction.
pub fn tune(
    base: &dyn BaseForecaster,
    history: &[f64],
    validation: &[f64],
    period: usize,
    spec: &TuneSpec,
) -> Result<TuneResult> {
    if spec.horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let needed = period + spec.horizon;
    if validation.len() < needed || validation.len() < 2 * period {
        return Err(Error::TooShort {
            len: validation.len(),
            needed: needed.max(2 * period),
        });
    }
    let eval = Evaluator {
        base,
        history,
        validation,
        period,
        spec,
    };
    let mut trace = Vec::new();

    let mut kp_candidates = vec![PidGains::ZERO];
    kp_candidates.extend(spec.kp_grid.values().into_iter().map(|kp| PidGains { kp, ki: 0.0, kd: 0.0 }));
    for (i, (gains, objective)) in kp_candidates.iter().zip(eval.score_all(&kp_candidates)).enumerate() {
        let stage = if i == 0 { Stage::Guard } else { Stage::Kp };
        trace.push(TraceEntry { stage, gains: *gains, objective });
    }
    let best_kp = *best_of(trace.iter()).expect("guard is always present");

    let allowed = |v: f64, kp: f64| !spec.enforce_ordering || kp == 0.0 || v < kp;
    let kp = best_kp.gains.kp;
    let ki_candidates: Vec<PidGains> = spec
        .ki_grid
        .values()
        .into_iter()
        .filter(|&ki| ki > 0.0 && allowed(ki, kp))
        .map(|ki| PidGains { kp, ki, kd: 0.0 })
        .collect();
    let ki_stopped = eval.sweep(Stage::Ki, &ki_candidates, best_kp.objective, &mut trace);
    let best_ki = *best_of(trace.iter().filter(|e| e.gains.kp == kp && e.gains.kd == 0.0))
        .expect("kp stage entry present");

    let ki = best_ki.gains.ki;
    let kd_candidates: Vec<PidGains> = spec
        .kd_grid
        .values()
        .into_iter()
        .filter(|&kd| kd > 0.0 && allowed(kd, kp))
        .map(|kd| PidGains { kp, ki, kd })
        .collect();
    let kd_stopped = eval.sweep(Stage::Kd, &kd_candidates, best_ki.objective, &mut trace);

    let best = *best_of(trace.iter()).expect("trace not empty");
    if !best.objective.is_finite() {
        return Err(Error::Divergence("every candidate produced a non-finite objective".into()));
    }
    Ok(TuneResult {
        best: best.gains,
        best_objective: best.objective,
        evaluations: trace.len(),
        trace,
        stopped_early: [ki_stopped, kd_stopped],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecasters::BiasedOracle;

    fn signal(period: usize, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 80.0 + 15.0 * (2.0 * std::f64::consts::PI * (i % period) as f64 / period as f64).sin())
            .collect()
    }

    #[test]
    fn grid_values() {
        let g = Grid::new(0.1, 0.1, 1.0).unwrap();
        let v = g.values();
        assert_eq!(v.len(), 10);
        assert_eq!(v[2], 0.3);
        assert_eq!(v[9], 1.0);
        assert_eq!(Grid::new(0.0001, 0.0001, 0.001).unwrap().values().len(), 10);
        assert!(Grid::new(0.5, 0.0, 1.0).is_err());
        assert!(Grid::new(0.5, 0.1, 1.5).is_err());
    }

    #[test]
    fn degenerate_grids_return_their_gains() {
        let period = 6;
        let data = signal(period, 60);
        let oracle = BiasedOracle::new(data.clone(), 1.0);
        let spec = TuneSpec {
            kp_grid: Grid::single(0.4).unwrap(),
            ki_grid: Grid::single(0.01).unwrap(),
            kd_grid: Grid::single(0.001).unwrap(),
            ..TuneSpec::new(period)
        };
        let res = tune(&oracle, &data[..36], &data[36..], period, &spec).unwrap();
        assert_eq!(res.best, PidGains { kp: 0.4, ki: 0.01, kd: 0.001 });
        assert_eq!(res.trace.len(), 4);
    }

    #[test]
    fn constant_bias_prefers_largest_kp() {
        let period = 6;
        let data = signal(period, 60);
        let oracle = BiasedOracle::new(data.clone(), 2.0);
        let spec = TuneSpec {
            ki_grid: Grid::single(0.0).unwrap(),
            kd_grid: Grid::single(0.0).unwrap(),
            ..TuneSpec::new(period)
        };
        let res = tune(&oracle, &data[..30], &data[30..], period, &spec).unwrap();
        assert_eq!(res.best.kp, 1.0);
        assert_eq!(res.trace.len(), 11);
    }

    #[test]
    fn exact_predictor_ties_break_to_zero() {
        let period = 4;
        let data = signal(period, 40);
        let oracle = BiasedOracle::new(data.clone(), 0.0);
        let spec = TuneSpec {
            ki_grid: Grid::new(0.01, 0.01, 0.05).unwrap(),
            kd_grid: Grid::new(0.01, 0.01, 0.05).unwrap(),
            ..TuneSpec::new(period)
        };
        let res = tune(&oracle, &data[..20], &data[20..], period, &spec).unwrap();
        assert_eq!(res.best, PidGains::ZERO);
        assert_eq!(res.best_objective, 0.0);
        assert!(res.trace.iter().all(|e| e.objective == 0.0));
    }

    #[test]
    fn validation_too_short() {
        let period = 4;
        let data = signal(period, 20);
        let oracle = BiasedOracle::new(data.clone(), 0.0);
        assert!(matches!(
            tune(&oracle, &data[..16], &data[16..], period, &TuneSpec::new(period)),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn trace_csv_ranks() {
        let res = TuneResult {
            best: PidGains::ZERO,
            best_objective: 1.0,
            trace: vec![
                TraceEntry { stage: Stage::Guard, gains: PidGains::ZERO, objective: 2.0 },
                TraceEntry { stage: Stage::Kp, gains: PidGains { kp: 0.1, ki: 0.0, kd: 0.0 }, objective: 1.0 },
            ],
            evaluations: 2,
            stopped_early: [false, false],
        };
        let mut buf = Vec::new();
        res.write_trace_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "kp,ki,kd,objective,rank\n0,0,0,2,2\n0.1,0,0,1,1\n");
    }
}

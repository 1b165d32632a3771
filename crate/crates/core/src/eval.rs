//! Accuracy and complexity metrics, histograms and reports.

use std::time::Instant;

use serde::Serialize;

use crate::engine::{ForecastRun, ForecastSession};
use crate::error::{Error, Result};

/// Controller parameters added to a model's tunable variable count.
pub const BOOSTER_PARAMETERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub steps: usize,
    pub mae: f64,
    /// Population standard deviation of the signed error.
    pub std: f64,
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    /// Steps left out of the MAPE because the real value was zero.
    pub mape_excluded: usize,
    pub rss: f64,
}

/// MAE, signed-error standard deviation and MAPE over the scored steps.
pub fn compute_metrics(run: &ForecastRun) -> Result<Metrics> {
    let pairs: Vec<(f64, f64)> = run
        .scored()
        .map(|r| (r.e.expect("scored"), r.rv.expect("scored")))
        .collect();
    metrics_from_errors(&pairs)
}

/// Metrics for `(error, real value)` pairs.
pub fn metrics_from_errors(pairs: &[(f64, f64)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no scored steps".into()));
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(e, _)| e.abs()).sum::<f64>() / n;
    let mean = pairs.iter().map(|(e, _)| e).sum::<f64>() / n;
    let var = pairs.iter().map(|(e, _)| (e - mean).powi(2)).sum::<f64>() / n;
    let rss = pairs.iter().map(|(e, _)| e * e).sum::<f64>();
    let mut pct = 0.0;
    let mut counted = 0usize;
    for (e, rv) in pairs {
        if *rv != 0.0 {
            pct += e.abs() / rv.abs();
            counted += 1;
        }
    }
    let mape = if counted > 0 { 100.0 * pct / counted as f64 } else { f64::NAN };
    Ok(Metrics {
        steps: pairs.len(),
        mae,
        std: var.sqrt(),
        mape,
        mape_excluded: pairs.len() - counted,
        rss,
    })
}

/// Population standard deviation of the absolute error.
pub fn abs_error_std(run: &ForecastRun) -> Result<f64> {
    let abs: Vec<f64> = run.scored().map(|r| r.e.expect("scored").abs()).collect();
    if abs.is_empty() {
        return Err(Error::InvalidArgument("no scored steps".into()));
    }
    let n = abs.len() as f64;
    let mean = abs.iter().sum::<f64>() / n;
    Ok((abs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AicInput {
    /// Tunable variables of the system.
    pub w: usize,
    /// Number of scored samples.
    pub n: usize,
    pub rss: f64,
}

/// Small-sample corrected AIC:
/// `n ln(RSS / n) + 2w + 2w(w + 1) / (n - w - 1)`.
/// A zero RSS yields negative infinity.
pub fn compute_aic(input: &AicInput) -> Result<f64> {
    let AicInput { w, n, rss } = *input;
    if n <= w + 1 {
        return Err(Error::InvalidArgument(format!("AIC needs n > w + 1, got n={n}, w={w}")));
    }
    if !(rss >= 0.0) {
        return Err(Error::InvalidArgument(format!("RSS must be non-negative, got {rss}")));
    }
    let (n, w) = (n as f64, w as f64);
    Ok(n * (rss / n).ln() + 2.0 * w + 2.0 * w * (w + 1.0) / (n - w - 1.0))
}

/// Tunable variable count of a base model, plus the three gains when the
/// controller is active.
pub fn system_parameters(base_parameters: usize, boosted: bool) -> usize {
    base_parameters + if boosted { BOOSTER_PARAMETERS } else { 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtStats {
    pub repetitions: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Mean wall-clock time of `predict_round` over `repetitions` fresh
/// sessions. Session construction and initialization are not timed.
pub fn measure_ext<'a, F>(mut factory: F, repetitions: usize) -> Result<ExtStats>
where
    F: FnMut() -> Result<ForecastSession<'a>>,
{
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut session = factory()?;
        let start = Instant::now();
        session.predict_round()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ExtStats {
        repetitions,
        mean_ms: mean,
        std_ms: std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Bin `i` covers `[i * width, (i + 1) * width)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| i as f64 * self.bin_width).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["lower", "upper", "count"])?;
        let edges = self.edges();
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([format!("{}", edges[i]), format!("{}", edges[i + 1]), c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Right-open bins of width `bin_width` starting at zero.
pub fn histogram(abs_errors: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    if let Some(bad) = abs_errors.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("absolute error {bad} out of range")));
    }
    let mut counts = Vec::new();
    for v in abs_errors {
        let bin = (v / bin_width).floor() as usize;
        if bin >= counts.len() {
            counts.resize(bin + 1, 0);
        }
        counts[bin] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

/// Metrics and complexity of one run, as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub mae: f64,
    pub std: f64,
    pub mape: f64,
    pub mape_excluded: usize,
    pub steps: usize,
    pub aic: Option<f64>,
    pub aic_input: AicInput,
    pub ext: Option<ExtStats>,
    pub histogram: Histogram,
}

/// Builds a report for `run`; `parameters` is the tunable variable count
/// (including the gains when the run was boosted).
pub fn evaluate(label: &str, run: &ForecastRun, parameters: usize, bin_width: f64) -> Result<EvalReport> {
    let m = compute_metrics(run)?;
    let aic_input = AicInput {
        w: parameters,
        n: m.steps,
        rss: m.rss,
    };
    let abs: Vec<f64> = run.scored().map(|r| r.e.expect("scored").abs()).collect();
    Ok(EvalReport {
        label: label.to_string(),
        mae: m.mae,
        std: m.std,
        mape: m.mape,
        mape_excluded: m.mape_excluded,
        steps: m.steps,
        aic: compute_aic(&aic_input).ok(),
        aic_input,
        ext: None,
        histogram: histogram(&abs, bin_width)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::{ControlTerms, StepRecord};
    use crate::engine::InitStrategy;
    use proptest::prelude::*;

    fn run_from(errors: &[f64], reals: &[f64]) -> ForecastRun {
        let records = errors
            .iter()
            .zip(reals)
            .enumerate()
            .map(|(t, (e, rv))| StepRecord {
                t,
                round: 0,
                k: t,
                warmup: false,
                pv: rv + e,
                u: 0.0,
                p: rv + e,
                rv: Some(*rv),
                e: Some(*e),
                terms: ControlTerms::default(),
            })
            .collect();
        ForecastRun {
            period: 2,
            horizon: 2,
            gains: None,
            init: InitStrategy::Zero,
            records,
        }
    }

    #[test]
    fn hand_computed_metrics() {
        let m = compute_metrics(&run_from(&[1.0, -1.0], &[10.0, 10.0])).unwrap();
        assert_eq!((m.mae, m.std, m.mape), (1.0, 1.0, 10.0));
        let m = compute_metrics(&run_from(&[0.0, 0.0, 0.0], &[5.0, 6.0, 7.0])).unwrap();
        assert_eq!((m.mae, m.std, m.mape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_reals_are_excluded_from_mape() {
        let m = compute_metrics(&run_from(&[1.0, 2.0], &[0.0, 10.0])).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert_eq!(m.mape, 20.0);
        assert_eq!(m.mae, 1.5);
    }

    #[test]
    fn empty_run_is_an_error() {
        assert!(compute_metrics(&run_from(&[], &[])).is_err());
    }

    #[test]
    fn aic_values() {
        let aic = compute_aic(&AicInput { w: 2, n: 10, rss: 10.0 }).unwrap();
        assert!((aic - (4.0 + 12.0 / 7.0)).abs() < 1e-12);
        assert!((aic - 5.7142857).abs() < 1e-7);
        assert_eq!(compute_aic(&AicInput { w: 0, n: 37, rss: 37.0 }).unwrap(), 0.0);
        assert_eq!(compute_aic(&AicInput { w: 1, n: 10, rss: 0.0 }).unwrap(), f64::NEG_INFINITY);
        assert!(compute_aic(&AicInput { w: 9, n: 10, rss: 1.0 }).is_err());
        assert_eq!(system_parameters(137, true) - system_parameters(137, false), 3);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.5, 1.5, 1.6], 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.edges(), vec![0.0, 1.0, 2.0]);
        assert!(histogram(&[], 1.0).unwrap().counts.is_empty());
        assert!(histogram(&[1.0], 0.0).is_err());
        assert!(histogram(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn single_repetition_ext() {
        use crate::engine::ForecastSession;
        use crate::forecasters::SeasonalNaive;
        let naive = SeasonalNaive::new(3).unwrap();
        let history = [1.0, 2.0, 3.0];
        let stats = measure_ext(|| ForecastSession::new(&naive, &history, 3, 3, None), 1).unwrap();
        assert_eq!(stats.repetitions, 1);
        assert_eq!(stats.std_ms, 0.0);
        assert!(stats.mean_ms >= 0.0);
        assert!(measure_ext(|| ForecastSession::new(&naive, &history, 3, 3, None), 0).is_err());
    }

    proptest! {
        #[test]
        fn aic_increases_with_w(n in 5usize..200, rss in 0.01f64..1e4) {
            for w in 0..n.saturating_sub(3) {
                let a = compute_aic(&AicInput { w, n, rss }).unwrap();
                let b = compute_aic(&AicInput { w: w + 1, n, rss }).unwrap();
                prop_assert!(b > a);
            }
        }

        #[test]
        fn mae_bounded_by_rms(errors in prop::collection::vec(-50.0f64..50.0, 1..100)) {
            let reals = vec![1.0; errors.len()];
            let m = compute_metrics(&run_from(&errors, &reals)).unwrap();
            prop_assert!(m.mae <= (m.rss / m.steps as f64).sqrt() + 1e-12);
        }

        #[test]
        fn histogram_matches_recount(values in prop::collection::vec(0.0f64..20.0, 0..300), width in 0.1f64..5.0) {
            let h = histogram(&values, width).unwrap();
            prop_assert_eq!(h.total(), values.len());
            for (i, c) in h.counts.iter().enumerate() {
                let lo = i as f64 * width;
                let hi = (i + 1) as f64 * width;
                let brute = values.iter().filter(|v| (**v / width).floor() as usize == i).count();
                prop_assert_eq!(*c, brute, "bin [{}, {})", lo, hi);
            }
        }
    }
}

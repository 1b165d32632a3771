use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pidboost::config::Config;
use pidboost::engine::{apply_batch_corrector, raw_round_pairs, InitContext};
use pidboost::eval::{evaluate, measure_ext, system_parameters};
use pidboost::forecasters::{
    BatchCorrector, BatchCorrectorConfig, LinearAr, SeasonalNaive, ShallowNet, ShallowNetConfig, TrainConfig,
};
use pidboost::series::{
    build_features, format_timestamp, ingest_csv, split, DuplicatePolicy, IngestOptions, Splits,
};
use pidboost::tuner::{tune, Grid, Objective, TuneSpec};
use pidboost::{
    run_backtest, BacktestConfig, BaseForecaster, BoosterState, DerivativeMode, Error, Features, FittedModel,
    ForecastSession, InitStrategy, LagWindowSpec, PidGains, Result, Series, SplitSpec,
};

#[derive(Parser)]
#[command(name = "pidboost", version, about = "PID-corrected iterative forecasting of periodic series")]
struct Cli {
    /// Flat key=value file supplying defaults for any long option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw CSV and write it as a normalized series.
    Ingest(IngestArgs),
    /// Fit a base forecaster on the training split.
    Fit(FitArgs),
    /// Grid-search controller gains on the validation split.
    Tune(TuneArgs),
    /// Forecast the rounds following the end of the series.
    Predict(PredictArgs),
    /// Walk the test split round by round and write the run log.
    Backtest(BacktestArgs),
    /// Compare boosted and unboosted backtests and write a JSON report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SeriesArgs {
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    value_col: Option<String>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    value_col: Option<String>,
    #[arg(long)]
    unit: Option<String>,
    /// Keep the first of duplicated timestamps instead of failing.
    #[arg(long)]
    keep_first_duplicates: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    series: SeriesArgs,
    /// seasonal-naive, linear-ar or shallow-net.
    #[arg(long)]
    model: Option<String>,
    /// Lag sets, e.g. "1-5;23-25".
    #[arg(long)]
    lags: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct GainArgs {
    /// "kp,ki,kd".
    #[arg(long)]
    gains: Option<String>,
    /// key=value file with kp, ki and kd, as written by `tune`.
    #[arg(long)]
    gains_file: Option<PathBuf>,
    /// zero, train-mae or warmup.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    train_mae: Option<f64>,
    /// round-local or cross-boundary.
    #[arg(long)]
    derivative: Option<String>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// start:step:max
    #[arg(long)]
    kp_grid: Option<String>,
    #[arg(long)]
    ki_grid: Option<String>,
    #[arg(long)]
    kd_grid: Option<String>,
    /// mae or mape.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Where to write the chosen gains.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    gains: GainArgs,
    #[arg(long)]
    output: PathBuf,
    /// Write the controller state so the session can resume once reals arrive.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gains: GainArgs,
    /// Run the plain iterative forecaster without correction.
    #[arg(long)]
    no_boost: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    gains: GainArgs,
    #[arg(long)]
    bin_width: Option<f64>,
    /// Time predict_round over this many repetitions (makes the report
    /// non-reproducible).
    #[arg(long)]
    ext_reps: Option<usize>,
    /// Also train and score a batch corrector with this hidden width.
    #[arg(long)]
    spnn_hidden: Option<usize>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Per-step error trace CSV.
    #[arg(long)]
    errors: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let body = json!({ "error": { "category": err.category(), "message": err.to_string() } });
        eprintln!("{body}");
        std::process::exit(err.exit_code());
    }
}

struct Ctx {
    cfg: Config,
}

impl Ctx {
    fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.cfg.parse_value(key),
        }
    }

    fn pick_or<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.pick(cli, key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<T> {
        self.pick(cli, key)?
            .ok_or_else(|| Error::Config(format!("missing required option --{}", key.replace('_', "-"))))
    }

    fn load_series(&self, args: &SeriesArgs) -> Result<Series> {
        let path: PathBuf = self.require(args.series.clone(), "series")?;
        let period = self.require(args.period, "period")?;
        let opts = IngestOptions::new(
            &self.pick_or(args.time_col.clone(), "time_col", "timestamp".to_string())?,
            &self.pick_or(args.value_col.clone(), "value_col", "value".to_string())?,
            period,
        );
        Ok(ingest_csv(path, &opts)?.0)
    }

    fn splits(&self, series: &Series, raw: Option<String>) -> Result<(SplitSpec, Splits)> {
        let spec: SplitSpec = self.pick_or(raw.map(|s| s.parse()).transpose()?, "split", SplitSpec::new(0.8, 0.1, 0.1)?)?;
        Ok((spec, split(series, &spec)?))
    }

    fn gains(&self, args: &GainArgs) -> Result<PidGains> {
        if let Some(g) = &args.gains {
            return g.parse();
        }
        if let Some(path) = &args.gains_file {
            let file = Config::load(path)?;
            return gains_from_config(&file)?.ok_or_else(|| Error::Config("gains file lacks kp/ki/kd".into()));
        }
        if let Some(g) = self.cfg.get("gains") {
            return g.parse();
        }
        Ok(gains_from_config(&self.cfg)?.unwrap_or(PidGains::ZERO))
    }

    fn init(&self, args: &GainArgs) -> Result<InitStrategy> {
        self.pick_or(args.init.as_deref().map(str::parse).transpose()?, "init", InitStrategy::Warmup)
    }

    fn derivative(&self, args: &GainArgs) -> Result<DerivativeMode> {
        self.pick_or(
            args.derivative.as_deref().map(str::parse).transpose()?,
            "derivative",
            DerivativeMode::RoundLocal,
        )
    }
}

fn gains_from_config(cfg: &Config) -> Result<Option<PidGains>> {
    match (cfg.parse_value::<f64>("kp")?, cfg.parse_value::<f64>("ki")?, cfg.parse_value::<f64>("kd")?) {
        (Some(kp), Some(ki), Some(kd)) => Ok(Some(PidGains::new(kp, ki, kd)?)),
        (None, None, None) => Ok(None),
        _ => Err(Error::Config("kp, ki and kd must be given together".into())),
    }
}

fn parse_grid(raw: &str) -> Result<Grid> {
    let parts: Vec<f64> = raw
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad grid {raw:?}")))?;
    match parts[..] {
        [v] => Grid::single(v),
        [start, step, max] => Grid::new(start, step, max),
        _ => Err(Error::Config(format!("grid must be start:step:max, got {raw:?}"))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("json value");
    // a closed pipe on stdout is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        cfg: match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        },
    };
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&ctx, args),
        Command::Fit(args) => cmd_fit(&ctx, args),
        Command::Tune(args) => cmd_tune(&ctx, args),
        Command::Predict(args) => cmd_predict(&ctx, args),
        Command::Backtest(args) => cmd_backtest(&ctx, args),
        Command::Report(args) => cmd_report(&ctx, args),
    }
}

fn cmd_ingest(ctx: &Ctx, args: IngestArgs) -> Result<()> {
    let mut opts = IngestOptions::new(
        &ctx.pick_or(args.time_col, "time_col", "timestamp".to_string())?,
        &ctx.pick_or(args.value_col, "value_col", "value".to_string())?,
        ctx.require(args.period, "period")?,
    );
    opts.unit_label = ctx.pick_or(args.unit, "unit", String::new())?;
    if args.keep_first_duplicates {
        opts.duplicates = DuplicatePolicy::KeepFirst;
    }
    let (series, report) = ingest_csv(&args.input, &opts)?;
    series.save_csv(&args.output)?;
    print_json(&json!({
        "rows_read": report.rows_read,
        "length": series.len(),
        "period": series.period(),
        "interval_seconds": series.interval(),
        "interpolated": report.interpolated,
        "duplicates_dropped": report.duplicates_dropped,
        "hash": series.content_hash(),
    }));
    Ok(())
}

fn cmd_fit(ctx: &Ctx, args: FitArgs) -> Result<()> {
    let series = ctx.load_series(&args.series)?;
    let period = series.period();
    let (_, parts) = ctx.splits(&series, args.split)?;
    let kind = ctx.pick_or(args.model, "model", "linear-ar".to_string())?;
    let lags: LagWindowSpec = match ctx.pick(args.lags, "lags")? {
        Some(raw) => raw.parse::<LagWindowSpec>()?,
        None => LagWindowSpec::recent_and_seasonal(period)?,
    };
    let (model, report) = match kind.as_str() {
        "seasonal-naive" => {
            let (m, r) = SeasonalNaive::fit(parts.train.values(), period)?;
            (FittedModel::SeasonalNaive(m), r)
        }
        "linear-ar" => {
            let (m, r) = LinearAr::fit(parts.train.values(), &lags)?;
            (FittedModel::LinearAr(m), r)
        }
        "shallow-net" => {
            let defaults = ShallowNetConfig::default();
            let cfg = ShallowNetConfig {
                hidden: ctx.pick_or(args.hidden, "hidden", defaults.hidden)?,
                train: TrainConfig {
                    max_epochs: ctx.pick_or(args.epochs, "epochs", defaults.train.max_epochs)?,
                    seed: ctx.pick_or(args.seed, "seed", defaults.train.seed)?,
                    ..defaults.train
                },
                ..defaults
            };
            let (m, r) = ShallowNet::fit(parts.train.values(), Some(parts.validation.values()), &lags, &cfg)?;
            (FittedModel::ShallowNet(m), r)
        }
        other => return Err(Error::Config(format!("unknown model {other:?}"))),
    };
    model.save(&args.output)?;
    print_json(&json!({
        "model": model.name(),
        "lags": model.lag_spec().to_string(),
        "parameters": model.parameter_count(),
        "final_loss": report.final_loss,
        "epochs": report.epochs,
        "ridge_lambda": report.ridge_lambda,
        "validation_loss": report.validation_loss,
    }));
    Ok(())
}

fn in_sample_mae(model: &dyn BaseForecaster, values: &[f64]) -> Result<f64> {
    let spec = model.lag_spec();
    let mut total = 0.0;
    let mut count = 0;
    for t in spec.max_lag()..values.len() {
        let f = Features::new(t, build_features(values, t, spec)?);
        total += (model.predict_one(&f)? - values[t]).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::TooShort { len: values.len(), needed: spec.max_lag() + 1 });
    }
    Ok(total / count as f64)
}

fn cmd_tune(ctx: &Ctx, args: TuneArgs) -> Result<()> {
    let series = ctx.load_series(&args.series)?;
    let period = series.period();
    let (_, parts) = ctx.splits(&series, args.model.split)?;
    let model = FittedModel::load(&args.model.model)?;
    let mut spec = TuneSpec::new(ctx.pick_or(args.model.horizon, "horizon", period)?);
    if let Some(g) = ctx.pick::<String>(args.kp_grid, "kp_grid")? {
        spec.kp_grid = parse_grid(&g)?;
    }
    if let Some(g) = ctx.pick::<String>(args.ki_grid, "ki_grid")? {
        spec.ki_grid = parse_grid(&g)?;
    }
    if let Some(g) = ctx.pick::<String>(args.kd_grid, "kd_grid")? {
        spec.kd_grid = parse_grid(&g)?;
    }
    spec.objective = ctx.pick_or(args.objective.as_deref().map(Objective::from_str).transpose()?, "objective", Objective::Mae)?;
    spec.rounds = ctx.pick(args.rounds, "rounds")?;
    spec.patience = ctx.pick_or(args.patience, "patience", spec.patience)?;

    let result = tune(&model, parts.train.values(), parts.validation.values(), period, &spec)?;
    if let Some(path) = &args.trace {
        result.write_trace_csv(create(path)?)?;
    }
    if let Some(path) = &args.output {
        let g = result.best;
        write_text(path, &format!("kp={}\nki={}\nkd={}\n", g.kp, g.ki, g.kd))?;
    }
    print_json(&json!({
        "best": result.best,
        "best_objective": result.best_objective,
        "objective": spec.objective,
        "evaluations": result.evaluations,
        "stopped_early": result.stopped_early,
    }));
    Ok(())
}

fn cmd_predict(ctx: &Ctx, args: PredictArgs) -> Result<()> {
    let series = ctx.load_series(&args.series)?;
    let period = series.period();
    let model = FittedModel::load(&args.model)?;
    let horizon = ctx.pick_or(args.horizon, "horizon", period)?;
    let gains = ctx.gains(&args.gains)?;
    let init = ctx.init(&args.gains)?;
    let values = series.values();

    let (history, held_back) = if init == InitStrategy::Warmup {
        if values.len() < period {
            return Err(Error::TooShort { len: values.len(), needed: period });
        }
        values.split_at(values.len() - period)
    } else {
        (values, &[][..])
    };
    let train_mae = match (init, ctx.pick(args.gains.train_mae, "train_mae")?) {
        (InitStrategy::TrainMae, None) => Some(in_sample_mae(&model, values)?),
        (_, mae) => mae,
    };
    let booster = BoosterState::new(period, gains)?.with_derivative_mode(ctx.derivative(&args.gains)?);
    let mut session = ForecastSession::new(&model, history, period, horizon, Some(booster))?;
    session.initialize(init, InitContext { train_mae, held_back: Some(held_back) })?;
    session.predict_round()?;

    let interval = series.interval().unwrap_or(0);
    let last = *series.timestamps().last().expect("non-empty series");
    let mut out = csv::Writer::from_writer(create(&args.output)?);
    out.write_record(["timestamp", "pv", "u", "p"])?;
    for (i, rec) in session.log().iter().filter(|r| !r.warmup).enumerate() {
        out.write_record([
            format_timestamp(last + interval * (i as i64 + 1)),
            format!("{}", rec.pv),
            format!("{}", rec.u),
            format!("{}", rec.p),
        ])?;
    }
    out.flush().map_err(|e| Error::Io { path: args.output.clone(), source: e })?;
    if let Some(path) = &args.state_out {
        let state = session.booster().expect("boosted session").to_snapshot()?;
        write_text(path, &state)?;
    }
    Ok(())
}

struct Prepared {
    series: Series,
    split: SplitSpec,
    parts: Splits,
    model: FittedModel,
    cfg: BacktestConfig,
}

fn prepare(ctx: &Ctx, series_args: &SeriesArgs, model_args: &ModelArgs, gain_args: &GainArgs) -> Result<Prepared> {
    let series = ctx.load_series(series_args)?;
    let period = series.period();
    let (split, parts) = ctx.splits(&series, model_args.split.clone())?;
    let model = FittedModel::load(&model_args.model)?;
    let init = ctx.init(gain_args)?;
    let train_mae = match (init, ctx.pick(gain_args.train_mae, "train_mae")?) {
        (InitStrategy::TrainMae, None) => Some(in_sample_mae(&model, parts.train.values())?),
        (_, mae) => mae,
    };
    let cfg = BacktestConfig {
        period,
        horizon: ctx.pick_or(model_args.horizon, "horizon", period)?,
        gains: Some(ctx.gains(gain_args)?),
        init,
        train_mae,
        derivative: ctx.derivative(gain_args)?,
        max_rounds: None,
    };
    Ok(Prepared { series, split, parts, model, cfg })
}

fn history_of(parts: &Splits) -> Vec<f64> {
    [parts.train.values(), parts.validation.values()].concat()
}

fn cmd_backtest(ctx: &Ctx, args: BacktestArgs) -> Result<()> {
    let mut prep = prepare(ctx, &args.series, &args.model, &args.gains)?;
    if args.no_boost {
        prep.cfg.gains = None;
    }
    let history = history_of(&prep.parts);
    let run = run_backtest(&prep.model, &history, prep.parts.test.values(), &prep.cfg)?;
    run.write_csv(create(&args.output)?)?;
    Ok(())
}

fn cmd_report(ctx: &Ctx, args: ReportArgs) -> Result<()> {
    let prep = prepare(ctx, &args.series, &args.model, &args.gains)?;
    let bin_width = ctx.pick_or(args.bin_width, "bin_width", 1.0)?;
    let history = history_of(&prep.parts);
    let test = prep.parts.test.values();
    let base_params = prep.model.parameter_count();

    let plain_cfg = BacktestConfig { gains: None, ..prep.cfg.clone() };
    let plain = run_backtest(&prep.model, &history, test, &plain_cfg)?;
    let boosted = run_backtest(&prep.model, &history, test, &prep.cfg)?;
    let mut plain_report = evaluate("unboosted", &plain, system_parameters(base_params, false), bin_width)?;
    let mut boosted_report = evaluate("boosted", &boosted, system_parameters(base_params, true), bin_width)?;

    if let Some(reps) = ctx.pick(args.ext_reps, "ext_reps")? {
        let period = prep.cfg.period;
        let horizon = prep.cfg.horizon;
        let gains = prep.cfg.gains.unwrap_or(PidGains::ZERO);
        plain_report.ext = Some(measure_ext(|| ForecastSession::new(&prep.model, &history, period, horizon, None), reps)?);
        boosted_report.ext = Some(measure_ext(
            || {
                let mut b = BoosterState::new(period, gains)?;
                b.initialize_zero();
                ForecastSession::new(&prep.model, &history, period, horizon, Some(b))
            },
            reps,
        )?);
    }

    let mut runs = vec![plain_report, boosted_report];
    if let Some(hidden) = ctx.pick(args.spnn_hidden, "spnn_hidden")? {
        let horizon = prep.cfg.horizon;
        let train = prep.parts.train.values();
        let max_lag = prep.model.lag_spec().max_lag();
        if train.len() <= max_lag + horizon {
            return Err(Error::TooShort { len: train.len(), needed: max_lag + horizon + 1 });
        }
        let (raw, real) = raw_round_pairs(&prep.model, &train[..max_lag], &train[max_lag..], horizon)?;
        let cfg = BatchCorrectorConfig { horizon, hidden, ..BatchCorrectorConfig::default() };
        let (corrector, _) = BatchCorrector::train(&raw, &real, &cfg)?;
        let spnn = apply_batch_corrector(&plain, &corrector)?;
        runs.push(evaluate(
            "batch-corrector",
            &spnn,
            system_parameters(base_params, false) + corrector.parameter_count(),
            bin_width,
        )?);
    }

    let improvement = |a: f64, b: f64| if a != 0.0 { 100.0 * (a - b) / a } else { 0.0 };
    let report = json!({
        "dataset": {
            "hash": prep.series.content_hash(),
            "length": prep.series.len(),
            "period": prep.series.period(),
            "unit": prep.series.unit_label(),
        },
        "config": {
            "model": prep.model.name(),
            "model_parameters": base_params,
            "lags": prep.model.lag_spec().to_string(),
            "horizon": prep.cfg.horizon,
            "split": [prep.split.train, prep.split.validation, prep.split.test],
            "gains": prep.cfg.gains,
            "init": prep.cfg.init,
            "train_mae": prep.cfg.train_mae,
            "derivative": prep.cfg.derivative,
            "bin_width": bin_width,
        },
        "runs": runs,
        "improvement_pct": {
            "mae": improvement(runs[0].mae, runs[1].mae),
            "mape": improvement(runs[0].mape, runs[1].mape),
        },
    });
    let mut out = create(&args.output)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::Io { path: args.output.clone(), source: e })?;

    if let Some(path) = &args.histogram {
        runs[1].histogram.write_csv(create(path)?)?;
    }
    if let Some(path) = &args.errors {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["t", "rv", "p_unboosted", "p_boosted", "e_unboosted", "e_boosted"])?;
        for (a, b) in plain.scored().zip(boosted.scored()) {
            w.write_record([
                a.t.to_string(),
                format!("{}", a.rv.unwrap_or(f64::NAN)),
                format!("{}", a.p),
                format!("{}", b.p),
                format!("{}", a.e.unwrap_or(f64::NAN)),
                format!("{}", b.e.unwrap_or(f64::NAN)),
            ])?;
        }
        w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
    }
    Ok(())
}

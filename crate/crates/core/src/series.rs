//! Periodic time series: the data model, CSV ingestion and serialization,
//! chronological splitting and lag-window feature construction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Uniformly sampled observations of a periodic process.
///
/// Timestamps are epoch seconds, strictly increasing with a constant
/// interval. The period is the number of samples per seasonal cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    timestamps: Vec<i64>,
    values: Vec<f64>,
    period: usize,
    unit_label: String,
}

impl Series {
    pub fn new(
        timestamps: Vec<i64>,
        values: Vec<f64>,
        period: usize,
        unit_label: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSeries("series is empty".into()));
        }
        if timestamps.len() != values.len() {
            return Err(Error::InvalidSeries(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if period < 2 {
            return Err(Error::InvalidSeries(format!("period must be >= 2, got {period}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at index {i}")));
        }
        if timestamps.len() > 1 {
            let step = timestamps[1] - timestamps[0];
            if step <= 0 {
                return Err(Error::InvalidSeries("timestamps not increasing".into()));
            }
            if let Some(w) = timestamps.windows(2).position(|w| w[1] - w[0] != step) {
                return Err(Error::InvalidSeries(format!(
                    "non-uniform spacing at index {}",
                    w + 1
                )));
            }
        }
        Ok(Series {
            timestamps,
            values,
            period,
            unit_label: unit_label.into(),
        })
    }

    /// Builds a series on a synthetic clock starting at `start` with a fixed
    /// interval in seconds.
    pub fn from_values(values: Vec<f64>, period: usize, start: i64, interval: i64) -> Result<Self> {
        if interval <= 0 {
            return Err(Error::InvalidSeries("interval must be positive".into()));
        }
        let timestamps = (0..values.len() as i64).map(|i| start + i * interval).collect();
        Series::new(timestamps, values, period, "")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn unit_label(&self) -> &str {
        &self.unit_label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sampling interval in seconds, `None` for a single observation.
    pub fn interval(&self) -> Option<i64> {
        (self.timestamps.len() > 1).then(|| self.timestamps[1] - self.timestamps[0])
    }

    pub fn with_unit_label(mut self, label: impl Into<String>) -> Self {
        self.unit_label = label.into();
        self
    }

    /// Contiguous sub-series over `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Series> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {}..{} out of bounds for length {}",
                range.start,
                range.end,
                self.len()
            )));
        }
        Ok(Series {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range].to_vec(),
            period: self.period,
            unit_label: self.unit_label.clone(),
        })
    }

    /// SHA-256 over timestamps and the exact bit patterns of the values.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.period as u64).to_le_bytes());
        for (ts, v) in self.timestamps.iter().zip(&self.values) {
            hasher.update(ts.to_le_bytes());
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Serializes to the same CSV dialect accepted by [`ingest_csv`] with
    /// columns `timestamp,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["timestamp", "value"])?;
        for (ts, v) in self.timestamps.iter().zip(&self.values) {
            out.write_record([format_timestamp(*ts), format!("{v}")])?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Formats epoch seconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_timestamp(ts: i64) -> String {
    match DateTime::from_timestamp(ts, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

/// Parses an ISO-8601 timestamp. Offsets are honored; naive times are UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    const NAIVE: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in NAIVE {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    #[default]
    Reject,
    KeepFirst,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub time_column: String,
    pub value_column: String,
    pub period: usize,
    pub unit_label: String,
    pub duplicates: DuplicatePolicy,
}

impl IngestOptions {
    pub fn new(time_column: &str, value_column: &str, period: usize) -> Self {
        IngestOptions {
            time_column: time_column.to_string(),
            value_column: value_column.to_string(),
            period,
            unit_label: String::new(),
            duplicates: DuplicatePolicy::Reject,
        }
    }
}

/// What ingestion had to repair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Indices (in the returned series) of values filled by interpolation.
    pub interpolated: Vec<usize>,
    pub duplicates_dropped: usize,
}

struct Row {
    line: u64,
    ts: i64,
    value: f64,
}

pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<(Series, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), opts)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    opts: &IngestOptions,
) -> Result<(Series, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let time_idx = column(&opts.time_column)?;
    let value_idx = column(&opts.value_column)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_ts = record.get(time_idx).ok_or_else(|| Error::MalformedRow {
            line,
            message: "missing timestamp field".into(),
        })?;
        let raw_value = record.get(value_idx).ok_or_else(|| Error::MalformedRow {
            line,
            message: "missing value field".into(),
        })?;
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::MalformedRow {
            line,
            message: format!("unparseable timestamp {raw_ts:?}"),
        })?;
        let value: f64 = raw_value.parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("unparseable value {raw_value:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::NonFinite { line });
        }
        rows.push(Row { line, ts, value });
    }
    let rows_read = rows.len();
    if rows.is_empty() {
        return Err(Error::InvalidSeries("no data rows".into()));
    }

    rows.sort_by_key(|r| r.ts);
    let mut deduped: Vec<Row> = Vec::with_capacity(rows.len());
    let mut duplicates_dropped = 0;
    for row in rows {
        if let Some(last) = deduped.last() {
            if last.ts == row.ts {
                match opts.duplicates {
                    DuplicatePolicy::Reject => {
                        return Err(Error::DuplicateTimestamp {
                            line: row.line.max(last.line),
                            timestamp: format_timestamp(row.ts),
                        })
                    }
                    DuplicatePolicy::KeepFirst => {
                        duplicates_dropped += 1;
                        continue;
                    }
                }
            }
        }
        deduped.push(row);
    }

    let step = deduped
        .windows(2)
        .map(|w| w[1].ts - w[0].ts)
        .min()
        .unwrap_or(1);

    let mut timestamps = Vec::with_capacity(deduped.len());
    let mut values = Vec::with_capacity(deduped.len());
    let mut interpolated = Vec::new();
    for (i, row) in deduped.iter().enumerate() {
        if i > 0 {
            let prev = &deduped[i - 1];
            let diff = row.ts - prev.ts;
            if diff == 2 * step {
                interpolated.push(values.len());
                timestamps.push(prev.ts + step);
                values.push(0.5 * (prev.value + row.value));
            } else if diff != step {
                return Err(Error::Spacing {
                    line: row.line,
                    after: format_timestamp(prev.ts),
                    gap_steps: diff / step - 1,
                });
            }
        }
        timestamps.push(row.ts);
        values.push(row.value);
    }

    let series = Series::new(timestamps, values, opts.period, opts.unit_label.clone())?;
    Ok((
        series,
        IngestReport {
            rows_read,
            interpolated,
            duplicates_dropped,
        },
    ))
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        for (name, f) in [("train", train), ("validation", validation), ("test", test)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} fraction {f} not in (0, 1)")));
            }
        }
        if ((train + validation + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}, expected 1",
                train + validation + test
            )));
        }
        Ok(SplitSpec {
            train,
            validation,
            test,
        })
    }

    /// Segment lengths for `n` observations: validation and test take the
    /// floor of their share, train takes the remainder.
    pub fn lengths(&self, n: usize) -> (usize, usize, usize) {
        // tolerance keeps e.g. 0.29 * 100 from flooring to 28
        let share = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let validation = share(self.validation);
        let test = share(self.test);
        (n - validation - test, validation, test)
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split {s:?}")))?;
        match parts.as_slice() {
            [a, b, c] => SplitSpec::new(*a, *b, *c),
            _ => Err(Error::Config(format!("split needs three fractions, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Series,
    pub validation: Series,
    pub test: Series,
}

/// Chronological train/validation/test partition.
pub fn split(series: &Series, spec: &SplitSpec) -> Result<Splits> {
    let n = series.len();
    let needed = 3 * series.period();
    if n < needed {
        return Err(Error::TooShort { len: n, needed });
    }
    let (train, validation, test) = spec.lengths(n);
    if validation == 0 || test == 0 {
        return Err(Error::TooShort { len: n, needed });
    }
    Ok(Splits {
        train: series.slice(0..train)?,
        validation: series.slice(train..train + validation)?,
        test: series.slice(train + validation..n)?,
    })
}

/// One or more ordered lag sets; each lag counts steps back from the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagWindowSpec {
    sets: Vec<Vec<usize>>,
}

impl LagWindowSpec {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Config("lag spec has no lag sets".into()));
        }
        for set in &sets {
            if set.is_empty() {
                return Err(Error::Config("empty lag set".into()));
            }
            if set.contains(&0) {
                return Err(Error::Config("lags must be >= 1".into()));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate lag in set {set:?}")));
            }
        }
        Ok(LagWindowSpec { sets })
    }

    /// Three five-wide windows: the latest steps, around one period back and
    /// around two periods back. For a period of 96 this is
    /// `{1..5}, {94..98}, {190..194}`.
    pub fn recent_and_seasonal(period: usize) -> Result<Self> {
        if period < 3 {
            return Err(Error::Config("seasonal windows need period >= 3".into()));
        }
        LagWindowSpec::new(vec![
            (1..=5).collect(),
            (period - 2..=period + 2).collect(),
            (2 * period - 2..=2 * period + 2).collect(),
        ])
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn max_lag(&self) -> usize {
        self.sets.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn total_lags(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

impl fmt::Display for LagWindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sets: Vec<String> = self
            .sets
            .iter()
            .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect();
        write!(f, "{}", sets.join(";"))
    }
}

/// Parses `"1-5;94-98;190-194"` or `"1,2,3;24"`: sets separated by `;`,
/// entries by `,`, inclusive ranges with `-`.
impl FromStr for LagWindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad lag spec {s:?}"));
        let mut sets = Vec::new();
        for set in s.split(';') {
            let mut lags = Vec::new();
            for item in set.split(',').map(str::trim).filter(|i| !i.is_empty()) {
                match item.split_once('-') {
                    Some((a, b)) => {
                        let a: usize = a.trim().parse().map_err(|_| bad())?;
                        let b: usize = b.trim().parse().map_err(|_| bad())?;
                        if a > b {
                            return Err(bad());
                        }
                        lags.extend(a..=b);
                    }
                    None => lags.push(item.parse().map_err(|_| bad())?),
                }
            }
            sets.push(lags);
        }
        LagWindowSpec::new(sets)
    }
}

/// Reads `values[t - lag]` for every lag of every set, in listed order.
/// Never touches index `t` or later.
pub fn build_features(values: &[f64], t: usize, spec: &LagWindowSpec) -> Result<Vec<Vec<f64>>> {
    let max_lag = spec.max_lag();
    if max_lag > t {
        return Err(Error::InsufficientHistory { t, lag: max_lag });
    }
    if t > values.len() {
        return Err(Error::InsufficientHistory { t, lag: 1 });
    }
    Ok(spec
        .sets()
        .iter()
        .map(|set| set.iter().map(|&lag| values[t - lag]).collect())
        .collect())
}

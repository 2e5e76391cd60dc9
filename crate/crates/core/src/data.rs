//! Pressure-drop ingestion and preprocessing.
//!
//! Series are read from CSV, trimmed at both ends, and standardized: time is
//! mapped onto `[0, 1]` using the trimmed extent and the response is centred
//! and scaled to unit sample standard deviation. The inverse transforms are
//! kept in [`ScalingInfo`] so that fitted curves can be reported in the
//! original units.
//!
//! Times are always carried in minutes. Numeric time columns are taken to be
//! minutes already; ISO-8601 timestamps are converted to minutes elapsed since
//! the first valid row.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{BnmrError, Result};

pub const DEFAULT_TIME_COLUMN: &str = "time";
pub const DEFAULT_VALUE_COLUMN: &str = "pressure_drop";
pub const DEFAULT_TRIM_START_MIN: f64 = 30.0;
pub const DEFAULT_TRIM_END_MIN: f64 = 5.0;

/// An ordered `(time, value)` series, time in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub value: Vec<f64>,
    /// Rows dropped at load time because a field was missing or unparseable.
    pub dropped_rows: usize,
    /// Rows folded into an earlier row with the same timestamp.
    pub merged_duplicates: usize,
    pub trim_start: f64,
    pub trim_end: f64,
}

impl TimeSeries {
    /// Build from raw pairs. Timestamps must be nondecreasing; repeated
    /// timestamps are averaged.
    pub fn from_pairs(time: &[f64], value: &[f64]) -> Result<Self> {
        if time.len() != value.len() {
            return Err(BnmrError::DimensionMismatch {
                expected: time.len(),
                actual: value.len(),
            });
        }
        let offending: Vec<usize> = time
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0])
            .map(|(i, _)| i + 1)
            .collect();
        if !offending.is_empty() {
            return Err(BnmrError::Data(format!(
                "timestamps decrease at rows {offending:?}"
            )));
        }
        let mut out_t: Vec<f64> = Vec::with_capacity(time.len());
        let mut out_v: Vec<f64> = Vec::with_capacity(time.len());
        let mut counts: Vec<usize> = Vec::with_capacity(time.len());
        let mut merged = 0;
        for (&t, &v) in time.iter().zip(value) {
            if out_t.last() == Some(&t) {
                *out_v.last_mut().unwrap() += v;
                *counts.last_mut().unwrap() += 1;
                merged += 1;
            } else {
                out_t.push(t);
                out_v.push(v);
                counts.push(1);
            }
        }
        for (v, &c) in out_v.iter_mut().zip(&counts) {
            *v /= c as f64;
        }
        if merged > 0 {
            log::info!("averaged {merged} rows sharing a timestamp");
        }
        Ok(Self {
            time: out_t,
            value: out_v,
            dropped_rows: 0,
            merged_duplicates: merged,
            trim_start: 0.0,
            trim_end: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.time.first(), self.time.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

enum TimeFormat {
    Minutes,
    Timestamp,
}

fn parse_timestamp(field: &str) -> Option<NaiveDateTime> {
    let f = field.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(f) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(f, fmt).ok())
}

/// Read a `(time, value)` series from a CSV file with a header row.
pub fn load_timeseries(path: impl AsRef<Path>, time_column: &str, value_column: &str) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| BnmrError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| BnmrError::csv(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BnmrError::Data(format!("{}: no column named '{name}'", path.display())))
    };
    let t_idx = find(time_column)?;
    let v_idx = find(value_column)?;

    let mut format: Option<TimeFormat> = None;
    let mut origin: Option<NaiveDateTime> = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(|e| BnmrError::csv(path, e))?;
        let (Some(t_raw), Some(v_raw)) = (record.get(t_idx), record.get(v_idx)) else {
            dropped += 1;
            continue;
        };
        if is_missing(t_raw) || is_missing(v_raw) {
            dropped += 1;
            continue;
        }
        let Ok(v) = v_raw.parse::<f64>() else {
            dropped += 1;
            continue;
        };
        if format.is_none() {
            format = Some(if t_raw.parse::<f64>().is_ok() {
                TimeFormat::Minutes
            } else {
                TimeFormat::Timestamp
            });
        }
        let t = match format {
            Some(TimeFormat::Minutes) => t_raw.parse::<f64>().ok(),
            Some(TimeFormat::Timestamp) => parse_timestamp(t_raw).map(|dt| {
                let start = *origin.get_or_insert(dt);
                (dt - start).num_milliseconds() as f64 / 60_000.0
            }),
            None => unreachable!(),
        };
        match t {
            Some(t) if t.is_finite() && v.is_finite() => {
                times.push(t);
                values.push(v);
            }
            _ => dropped += 1,
        }
    }
    if times.is_empty() {
        return Err(BnmrError::Data(format!("{}: no valid rows", path.display())));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    let mut series = TimeSeries::from_pairs(&times, &values)
        .map_err(|e| BnmrError::Data(format!("{}: {e}", path.display())))?;
    series.dropped_rows = dropped;
    Ok(series)
}

/// Keep observations with `t0 + trim_start ≤ t ≤ t_end - trim_end` (minutes).
pub fn trim_series(series: &TimeSeries, trim_start: f64, trim_end: f64) -> Result<TimeSeries> {
    if trim_start < 0.0 || trim_end < 0.0 {
        return Err(BnmrError::Data("trim durations must be nonnegative".into()));
    }
    if series.is_empty() || series.duration() <= trim_start + trim_end {
        return Err(BnmrError::Data(format!(
            "series spans {} min, not more than the {} min being trimmed",
            series.duration(),
            trim_start + trim_end
        )));
    }
    let lo = series.time[0] + trim_start;
    let hi = series.time[series.len() - 1] - trim_end;
    let (time, value): (Vec<f64>, Vec<f64>) = series
        .time
        .iter()
        .zip(&series.value)
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(&t, &v)| (t, v))
        .unzip();
    Ok(TimeSeries {
        time,
        value,
        dropped_rows: series.dropped_rows,
        merged_duplicates: series.merged_duplicates,
        trim_start: series.trim_start + trim_start,
        trim_end: series.trim_end + trim_end,
    })
}

/// Inverse transforms from the standardized scale back to the data's units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub trim_start: f64,
    pub trim_end: f64,
}

impl ScalingInfo {
    pub fn identity() -> Self {
        Self {
            y_mean: 0.0,
            y_sd: 1.0,
            x_min: 0.0,
            x_max: 1.0,
            trim_start: 0.0,
            trim_end: 0.0,
        }
    }

    pub fn x_range(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn to_original_x(&self, x: f64) -> f64 {
        self.x_min + x * self.x_range()
    }

    pub fn to_unit_x(&self, t: f64) -> f64 {
        (t - self.x_min) / self.x_range()
    }

    pub fn to_original_y(&self, y: f64) -> f64 {
        self.y_mean + self.y_sd * y
    }

    pub fn to_standard_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_sd
    }

    /// Multiplier taking `df/dx` on the standardized scale to original units.
    pub fn slope_factor(&self) -> f64 {
        self.y_sd / self.x_range()
    }
}

/// A standardized series ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub scaling: ScalingInfo,
    pub filter_mass: Option<f64>,
    pub flow_rate: Option<f64>,
}

fn mean_and_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|y| (y - mean) * (y - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Map time to `[0, 1]` and the response to mean zero, unit sample sd.
pub fn standardize(series: &TimeSeries, filter_mass: Option<f64>, flow_rate: Option<f64>) -> Result<Dataset> {
    if series.len() < 3 {
        return Err(BnmrError::Data(format!(
            "need at least 3 observations, have {}",
            series.len()
        )));
    }
    let x_min = series.time[0];
    let x_max = series.time[series.len() - 1];
    if !(x_max > x_min) {
        return Err(BnmrError::Data("time axis has zero extent".into()));
    }
    let (y_mean, y_sd) = mean_and_sd(&series.value);
    if !(y_sd > 0.0) || !y_sd.is_finite() {
        return Err(BnmrError::Data(
            "degenerate series: response has zero variance".into(),
        ));
    }
    let scaling = ScalingInfo {
        y_mean,
        y_sd,
        x_min,
        x_max,
        trim_start: series.trim_start,
        trim_end: series.trim_end,
    };
    let x = series
        .time
        .iter()
        .map(|&t| scaling.to_unit_x(t).clamp(0.0, 1.0))
        .collect();
    let y = series.value.iter().map(|&v| scaling.to_standard_y(v)).collect();
    let data = Dataset {
        x,
        y,
        scaling,
        filter_mass,
        flow_rate,
    };
    data.check()?;
    Ok(data)
}

impl Dataset {
    /// Standardize raw `(x, y)` pairs, sorting by `x` first.
    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(BnmrError::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        standardize(&TimeSeries::from_pairs(&xs, &ys)?, None, None)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(BnmrError::DimensionMismatch {
                expected: self.x.len(),
                actual: self.y.len(),
            });
        }
        if self.x.windows(2).any(|w| w[1] < w[0]) {
            return Err(BnmrError::Data("x must be nondecreasing".into()));
        }
        if self.x.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(BnmrError::Data("x must lie in [0, 1]".into()));
        }
        let (m, s) = mean_and_sd(&self.y);
        if m.abs() >= 1e-10 || (s - 1.0).abs() >= 1e-10 {
            return Err(BnmrError::Data(format!(
                "response is not standardized (mean {m}, sd {s})"
            )));
        }
        Ok(())
    }

    /// Response values in the original units.
    pub fn original_y(&self) -> Vec<f64> {
        self.y.iter().map(|&y| self.scaling.to_original_y(y)).collect()
    }

    pub fn original_x(&self) -> Vec<f64> {
        self.x.iter().map(|&x| self.scaling.to_original_x(x)).collect()
    }
}

/// Optional sidecar metadata for a sample, stored as flat `key = value` TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMetadata {
    pub filter_mass_ug: Option<f64>,
    pub flow_rate_lpm: Option<f64>,
    pub sample_id: Option<String>,
}

impl SampleMetadata {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BnmrError::io(path, e))?;
        toml::from_str(&text).map_err(|e| BnmrError::Data(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        let mut map = BTreeMap::new();
        if let Some(m) = self.filter_mass_ug {
            map.insert("filter_mass_ug", toml::Value::Float(m));
        }
        if let Some(f) = self.flow_rate_lpm {
            map.insert("flow_rate_lpm", toml::Value::Float(f));
        }
        if let Some(id) = &self.sample_id {
            map.insert("sample_id", toml::Value::String(id.clone()));
        }
        toml::to_string(&map).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn blank_values_are_dropped_and_counted() {
        let f = write_csv("time,pressure_drop\n0,1.0\n0.5,\n1,2.0\n");
        let s = load_timeseries(f.path(), "time", "pressure_drop").unwrap();
        assert_eq!(s.time, vec![0.0, 1.0]);
        assert_eq!(s.value, vec![1.0, 2.0]);
        assert_eq!(s.dropped_rows, 1);
    }

    #[test]
    fn numeric_minutes_are_kept_verbatim() {
        let f = write_csv("time,pressure_drop\n12.5,1\n13.0,2\n13.5,3\n");
        let s = load_timeseries(f.path(), "time", "pressure_drop").unwrap();
        assert_eq!(s.time, vec![12.5, 13.0, 13.5]);
    }

    #[test]
    fn iso_timestamps_become_elapsed_minutes() {
        let f = write_csv("stamp,dp\n2019-03-01T10:00:00,1\n2019-03-01T10:00:30,2\n2019-03-01 10:01:30,3\n");
        let s = load_timeseries(f.path(), "stamp", "dp").unwrap();
        assert_eq!(s.time, vec![0.0, 0.5, 1.5]);
    }

    #[test]
    fn out_of_order_timestamps_are_an_error() {
        let f = write_csv("time,pressure_drop\n0,1\n2,2\n1,3\n3,4\n");
        let err = load_timeseries(f.path(), "time", "pressure_drop").unwrap_err();
        assert!(err.to_string().contains("[2]"), "{err}");
    }

    #[test]
    fn missing_file_and_columns_are_reported() {
        let err = load_timeseries("/no/such/file.csv", "time", "pressure_drop").unwrap_err();
        assert!(err.to_string().contains("/no/such/file.csv"));
        let f = write_csv("t,v\n0,1\n");
        assert!(load_timeseries(f.path(), "time", "v").is_err());
        let empty = write_csv("time,pressure_drop\n0,\n");
        assert!(load_timeseries(empty.path(), "time", "pressure_drop").is_err());
    }

    #[test]
    fn duplicate_timestamps_are_averaged() {
        let s = TimeSeries::from_pairs(&[0.0, 1.0, 1.0, 2.0], &[1.0, 2.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.time, vec![0.0, 1.0, 2.0]);
        assert_eq!(s.value, vec![1.0, 3.0, 5.0]);
        assert_eq!(s.merged_duplicates, 1);
    }

    #[test]
    fn eight_hour_series_keeps_seven_hours_twenty_five() {
        let time: Vec<f64> = (0..=960).map(|i| i as f64 * 0.5).collect();
        let value: Vec<f64> = time.iter().map(|t| t * 0.01).collect();
        let s = TimeSeries::from_pairs(&time, &value).unwrap();
        let t = trim_series(&s, DEFAULT_TRIM_START_MIN, DEFAULT_TRIM_END_MIN).unwrap();
        assert_eq!(t.duration(), 7.0 * 60.0 + 25.0);
        assert_eq!(t.time[0], 30.0);
        assert_eq!(*t.time.last().unwrap(), 475.0);
    }

    #[test]
    fn zero_trim_is_identity_and_short_series_fail() {
        let time: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let s = TimeSeries::from_pairs(&time, &time).unwrap();
        let same = trim_series(&s, 0.0, 0.0).unwrap();
        assert_eq!(same.time, s.time);
        assert_eq!(trim_series(&same, 0.0, 0.0).unwrap(), same);
        assert!(trim_series(&s, DEFAULT_TRIM_START_MIN, DEFAULT_TRIM_END_MIN).is_err());
    }

    #[test]
    fn standardize_small_examples() {
        let s = TimeSeries::from_pairs(&[10.0, 20.0, 30.0], &[1.0, 2.0, 3.0]).unwrap();
        let d = standardize(&s, None, None).unwrap();
        assert_eq!(d.x, vec![0.0, 0.5, 1.0]);
        assert_eq!(d.y, vec![-1.0, 0.0, 1.0]);
        assert_eq!(d.scaling.y_sd, 1.0);
        for (orig, back) in s.value.iter().zip(d.original_y()) {
            assert!((orig - back).abs() < 1e-12);
        }
        for (orig, back) in s.time.iter().zip(d.original_x()) {
            assert!((orig - back).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let flat = TimeSeries::from_pairs(&[0.0, 1.0, 2.0], &[4.0, 4.0, 4.0]).unwrap();
        assert!(standardize(&flat, None, None)
            .unwrap_err()
            .to_string()
            .contains("degenerate"));
        let short = TimeSeries::from_pairs(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!(standardize(&short, None, None).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let meta = SampleMetadata {
            filter_mass_ug: Some(480.0),
            flow_rate_lpm: Some(1.0),
            sample_id: Some("run-3".into()),
        };
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(meta.to_toml().as_bytes()).unwrap();
        assert_eq!(SampleMetadata::load(f.path()).unwrap(), meta);
    }
}

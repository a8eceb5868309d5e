//! Raw per-minute measurements: CSV ingestion, missing-value handling,
//! weekday-mean removal and smoothing to functional samples.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::farma::{self, FarmaModel};
use crate::fnspace::{smooth_to_basis, BasisSpec, FunctionSample, FunctionSeries, DEFAULT_GRID_SIZE};

/// One day of measurements after gap filling. `missing[i]` marks values that
/// were interpolated rather than observed.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDayRecord {
    pub date: NaiveDate,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl RawDayRecord {
    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Debug)]
pub struct IngestConfig {
    pub grid_size: usize,
    /// Days with a larger fraction of missing minutes are dropped.
    pub max_missing_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            max_missing_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedDay {
    pub date: NaiveDate,
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub records: Vec<RawDayRecord>,
    pub dropped: Vec<DroppedDay>,
}

impl Ingested {
    pub fn input_days(&self) -> usize {
        self.records.len() + self.dropped.len()
    }
}

pub fn ingest(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Ingested> {
    let f = std::fs::File::open(path)?;
    ingest_reader(f, config)
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Read `date,minute,value[,lane,count]` rows. Values of several lanes for
/// the same minute are averaged, weighted by `count` when present.
pub fn ingest_reader<R: Read>(reader: R, config: &IngestConfig) -> Result<Ingested> {
    if config.grid_size == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Format("empty input".into()));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci_date), Some(ci_min), Some(ci_val)) = (col("date"), col("minute"), col("value")) else {
        return Err(parse_err(1, "header must contain date,minute,value"));
    };
    let ci_lane = col("lane");
    let ci_count = col("count");

    // (weighted sum, total weight) per minute
    type Acc = Vec<Option<(f64, f64)>>;
    let mut days: BTreeMap<NaiveDate, Acc> = BTreeMap::new();
    let mut seen: BTreeMap<(NaiveDate, usize, String), u64> = BTreeMap::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows += 1;
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(line, "missing field"));
        let date = NaiveDate::parse_from_str(field(ci_date)?, "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date: {e}")))?;
        let minute: usize = field(ci_min)?
            .parse()
            .map_err(|_| parse_err(line, "minute must be a nonnegative integer"))?;
        if minute >= config.grid_size {
            return Err(parse_err(
                line,
                format!("minute {minute} outside 0..{}", config.grid_size),
            ));
        }
        let lane = match ci_lane {
            Some(i) => field(i)?.to_string(),
            None => String::new(),
        };
        if let Some(prev) = seen.insert((date, minute, lane), line) {
            return Err(parse_err(line, format!("duplicate entry (first seen on line {prev})")));
        }
        let raw = field(ci_val)?;
        let acc = days.entry(date).or_insert_with(|| vec![None; config.grid_size]);
        if raw.is_empty() {
            continue;
        }
        let value: f64 = raw.parse().map_err(|_| parse_err(line, format!("bad value {raw:?}")))?;
        if !value.is_finite() {
            return Err(parse_err(line, "value must be finite"));
        }
        let weight = match ci_count {
            Some(i) => {
                let c: f64 = field(i)?
                    .parse()
                    .map_err(|_| parse_err(line, "bad count"))?;
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(parse_err(line, "count must be nonnegative"));
                }
                c
            }
            None => 1.0,
        };
        if weight == 0.0 {
            continue;
        }
        let slot = acc[minute].get_or_insert((0.0, 0.0));
        slot.0 += weight * value;
        slot.1 += weight;
    }
    if rows == 0 {
        return Err(Error::Format("no data rows".into()));
    }

    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for (date, acc) in days {
        let observed: Vec<Option<f64>> = acc
            .iter()
            .map(|s| s.map(|(sum, w)| sum / w))
            .collect();
        let missing = observed.iter().filter(|v| v.is_none()).count();
        if missing as f64 > config.max_missing_fraction * config.grid_size as f64
            || missing == config.grid_size
        {
            dropped.push(DroppedDay { date, missing });
            continue;
        }
        let (values, mask) = interpolate(&observed);
        records.push(RawDayRecord {
            date,
            values,
            missing: mask,
        });
    }
    Ok(Ingested { records, dropped })
}

/// Linear interpolation across interior gaps; leading and trailing gaps take
/// the nearest observed value.
pub fn interpolate(observed: &[Option<f64>]) -> (Vec<f64>, Vec<bool>) {
    let n = observed.len();
    let mask: Vec<bool> = observed.iter().map(|v| v.is_none()).collect();
    let known: Vec<usize> = (0..n).filter(|&i| observed[i].is_some()).collect();
    let mut values = vec![0.0; n];
    if known.is_empty() {
        return (values, mask);
    }
    for (i, v) in values.iter_mut().enumerate() {
        *v = match observed[i] {
            Some(x) => x,
            None => {
                let right = known.partition_point(|&k| k < i);
                if right == 0 {
                    observed[known[0]].unwrap()
                } else if right == known.len() {
                    observed[known[known.len() - 1]].unwrap()
                } else {
                    let (a, b) = (known[right - 1], known[right]);
                    let (ya, yb) = (observed[a].unwrap(), observed[b].unwrap());
                    ya + (yb - ya) * (i - a) as f64 / (b - a) as f64
                }
            }
        };
    }
    (values, mask)
}

/// Write records as `date,minute,value`, leaving interpolated minutes empty
/// so that reading the file back reproduces the records.
pub fn write_raw_csv<W: Write>(records: &[RawDayRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "minute", "value"])?;
    for r in records {
        let date = r.date.format("%Y-%m-%d").to_string();
        for (m, (v, miss)) in r.values.iter().zip(&r.missing).enumerate() {
            let val = if *miss { String::new() } else { v.to_string() };
            w.write_record([date.as_str(), &m.to_string(), &val])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessOptions {
    pub weekday_mean: bool,
    pub weekdays_only: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            weekday_mean: true,
            weekdays_only: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeekdayMean {
    pub weekday: Weekday,
    pub days: usize,
    pub mean: FunctionSample,
}

/// Descriptive variance-drift screen: mean squared norm of the centred data
/// in consecutive windows.
#[derive(Clone, Debug)]
pub struct VarianceDrift {
    pub window: usize,
    pub window_variances: Vec<f64>,
    /// Largest over smallest window variance.
    pub max_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct PreprocessReport {
    pub input_days: usize,
    pub kept: usize,
    pub dropped_missing: usize,
    pub dropped_weekend: usize,
    pub interpolated_values: usize,
    pub dates: Vec<NaiveDate>,
    pub weekday_means: Vec<WeekdayMean>,
    pub drift: VarianceDrift,
}

impl PreprocessReport {
    pub fn dropped(&self) -> usize {
        self.dropped_missing + self.dropped_weekend
    }
}

/// Smooth each kept day onto `basis` and optionally remove weekends and the
/// per-weekday mean. The series is labelled `1..=N` in date order.
pub fn preprocess(
    data: &Ingested,
    opts: PreprocessOptions,
    basis: &Arc<BasisSpec>,
) -> Result<(FunctionSeries, PreprocessReport)> {
    let mut kept: Vec<&RawDayRecord> = Vec::new();
    let mut dropped_weekend = 0;
    for r in &data.records {
        if opts.weekdays_only && matches!(r.date.weekday(), Weekday::Sat | Weekday::Sun) {
            dropped_weekend += 1;
        } else {
            kept.push(r);
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: kept.len() });
    }
    let mut samples = kept
        .iter()
        .map(|r| {
            if r.values.len() != basis.grid().len() {
                return Err(Error::Dimension(format!(
                    "day {} has {} values, basis grid has {}",
                    r.date,
                    r.values.len(),
                    basis.grid().len()
                )));
            }
            smooth_to_basis(&r.values, basis)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut weekday_means = Vec::new();
    if opts.weekday_mean {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in kept.iter().enumerate() {
            groups.entry(r.date.weekday().num_days_from_monday()).or_default().push(i);
        }
        for (_, idx) in groups {
            let mut mean = basis.zero().into_coeffs();
            for &i in &idx {
                mean += samples[i].coeffs();
            }
            mean /= idx.len() as f64;
            let mean = FunctionSample::new(mean, basis)?;
            for &i in &idx {
                samples[i] = samples[i].sub(&mean)?;
            }
            weekday_means.push(WeekdayMean {
                weekday: kept[idx[0]].date.weekday(),
                days: idx.len(),
                mean,
            });
        }
    }

    let series = FunctionSeries::new(basis, 1, samples)?;
    let drift = variance_drift(&series, 4);
    let report = PreprocessReport {
        input_days: data.input_days(),
        kept: kept.len(),
        dropped_missing: data.dropped.len(),
        dropped_weekend,
        interpolated_values: kept.iter().map(|r| r.missing_count()).sum(),
        dates: kept.iter().map(|r| r.date).collect(),
        weekday_means,
        drift,
    };
    Ok((series, report))
}

/// Split the series into `windows` consecutive blocks (at least two samples
/// each) and compare their variances.
pub fn variance_drift(series: &FunctionSeries, windows: usize) -> VarianceDrift {
    let n = series.len();
    let w = windows.max(1).min(n / 2).max(1);
    let size = n / w;
    let mean = series.mean();
    let vars: Vec<f64> = (0..w)
        .map(|b| {
            let end = if b + 1 == w { n } else { (b + 1) * size };
            let chunk = &series.samples()[b * size..end];
            chunk
                .iter()
                .map(|s| s.sub(&mean).map(|e| e.norm_squared()).unwrap_or(f64::NAN))
                .sum::<f64>()
                / chunk.len() as f64
        })
        .collect();
    let max = vars.iter().cloned().fold(f64::MIN, f64::max);
    let min = vars.iter().cloned().fold(f64::MAX, f64::min);
    VarianceDrift {
        window: size,
        window_variances: vars,
        max_ratio: if min > 0.0 { max / min } else { f64::INFINITY },
    }
}

/// Parameters of the synthetic per-minute generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub start: NaiveDate,
    pub days: usize,
    /// Daily profile added to every day, as basis coordinates.
    pub level: Vec<f64>,
    /// Extra constant offset per weekday, Monday first.
    pub weekday_offsets: [f64; 7],
    /// Standard deviation of i.i.d. measurement noise per minute.
    pub measurement_sd: f64,
    /// Probability that a minute is reported as missing.
    pub missing_rate: f64,
    pub burn_in: usize,
}

impl SynthConfig {
    pub fn new(start: NaiveDate, days: usize) -> Self {
        Self {
            start,
            days,
            level: vec![],
            weekday_offsets: [0.0; 7],
            measurement_sd: 0.0,
            missing_rate: 0.0,
            burn_in: farma::DEFAULT_BURN_IN,
        }
    }
}

/// Per-minute data whose smoothed daily curves follow `model`, shifted by a
/// level profile and weekday offsets, on consecutive calendar days.
pub fn synth_raw_days<R: Rng + ?Sized>(
    model: &FarmaModel,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<Vec<RawDayRecord>> {
    let basis = model.basis();
    let sim = farma::simulate(model, config.days, config.burn_in, rng)?;
    let level = if config.level.is_empty() {
        basis.zero()
    } else {
        let mut c = vec![0.0; basis.size()];
        for (dst, src) in c.iter_mut().zip(&config.level) {
            *dst = *src;
        }
        FunctionSample::from_slice(&c, basis)?
    };
    let level_grid = level.eval_grid();
    let mut out = Vec::with_capacity(config.days);
    for (i, x) in sim.series.samples().iter().enumerate() {
        let date = config.start + Duration::days(i as i64);
        let off = config.weekday_offsets[date.weekday().num_days_from_monday() as usize];
        let curve = x.eval_grid();
        let mut observed = Vec::with_capacity(curve.len());
        for (v, l) in curve.iter().zip(level_grid.iter()) {
            let noise: f64 = if config.measurement_sd > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                config.measurement_sd * z
            } else {
                0.0
            };
            let miss = config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate;
            observed.push(if miss { None } else { Some(v + l + off + noise) });
        }
        if observed.iter().all(|v| v.is_none()) {
            observed[0] = Some(curve[0] + level_grid[0] + off);
        }
        let (values, missing) = interpolate(&observed);
        out.push(RawDayRecord { date, values, missing });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(grid: usize) -> IngestConfig {
        IngestConfig {
            grid_size: grid,
            max_missing_fraction: 0.2,
        }
    }

    #[test]
    fn two_days_well_formed() {
        let mut s = String::from("date,minute,value\n");
        for d in ["2014-01-06", "2014-01-07"] {
            for m in 0..10 {
                s += &format!("{d},{m},{}\n", m as f64 * 1.5);
            }
        }
        let ing = ingest_reader(s.as_bytes(), &cfg(10)).unwrap();
        assert_eq!(ing.records.len(), 2);
        assert!(ing.dropped.is_empty());
        assert_eq!(ing.records[1].values[3], 4.5);
    }

    #[test]
    fn heavy_missing_day_is_dropped() {
        let mut s = String::from("date,minute,value\n");
        for m in 0..10 {
            let v = if m < 3 { String::new() } else { "1".into() };
            s += &format!("2014-01-06,{m},{v}\n");
        }
        let ing = ingest_reader(s.as_bytes(), &cfg(10)).unwrap();
        assert!(ing.records.is_empty());
        assert_eq!(ing.dropped, vec![DroppedDay { date: NaiveDate::from_ymd_opt(2014, 1, 6).unwrap(), missing: 3 }]);
    }

    #[test]
    fn gap_is_interpolated_linearly() {
        let obs = [Some(60.0), None, None, None, Some(72.0)];
        let (v, m) = interpolate(&obs);
        assert_eq!(v, vec![60.0, 63.0, 66.0, 69.0, 72.0]);
        assert_eq!(m, vec![false, true, true, true, false]);
        let (v, _) = interpolate(&[None, Some(2.0), None]);
        assert_eq!(v, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn lanes_are_count_weighted() {
        let s = "date,minute,value,lane,count\n2014-01-06,0,100,1,3\n2014-01-06,0,80,2,1\n2014-01-06,1,90,1,1\n";
        let ing = ingest_reader(s.as_bytes(), &cfg(2)).unwrap();
        assert_eq!(ing.records[0].values, vec![95.0, 90.0]);
    }

    #[test]
    fn malformed_rows_report_line() {
        let s = "date,minute,value\n2014-01-06,0,1\n2014-01-06,x,1\n";
        match ingest_reader(s.as_bytes(), &cfg(2)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(ingest_reader("".as_bytes(), &cfg(2)).is_err());
        assert!(ingest_reader("date,minute,value\n".as_bytes(), &cfg(2)).is_err());
        let dup = "date,minute,value\n2014-01-06,0,1\n2014-01-06,0,2\n";
        assert!(matches!(ingest_reader(dup.as_bytes(), &cfg(2)), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn constant_days_become_zero() {
        let basis = BasisSpec::fourier_uniform(5, 16).unwrap();
        let start = NaiveDate::from_ymd_opt(2014, 1, 6).unwrap();
        let records = (0..7)
            .map(|i| RawDayRecord {
                date: start + Duration::days(i),
                values: vec![3.25; 16],
                missing: vec![false; 16],
            })
            .collect();
        let data = Ingested { records, dropped: vec![] };
        let (s, rep) = preprocess(&data, PreprocessOptions::default(), &basis).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(rep.dropped_weekend, 2);
        assert_eq!(rep.kept + rep.dropped(), rep.input_days);
        assert!(s.samples().iter().all(|x| x.norm() < 1e-12));
    }
}

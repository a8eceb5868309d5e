//! File formats: series CSV, model TOML, error tables, bound reports and
//! fitted VARMA models.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farma::FarmaModel;
use crate::fnspace::{BasisKind, BasisSpec, FunctionSample, FunctionSeries};
use crate::forecast::{BoundReport, ErrorRow, ErrorTable};
use crate::hsop::KernelOperator;
use crate::varma::VarmaModel;

fn parse_header_fields(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse { line: 1, msg: "expected a '#key=value,...' header".into() })?;
    body.split(',')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("malformed header field {kv:?}"),
            })?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn header_value<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("header lacks {key}") })
}

fn parse_usize(s: &str, line: u64, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} {s:?}") })
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} {s:?}") })
}

/// `#basis=fourier,K=..,grid=..` followed by `day,coeff_index,value` rows.
pub fn write_series<W: Write>(series: &FunctionSeries, mut writer: W) -> Result<()> {
    let b = series.basis();
    writeln!(writer, "#basis={},K={},grid={}", b.kind().name(), b.size(), b.grid().len())?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "coeff_index", "value"])?;
    for (i, s) in series.samples().iter().enumerate() {
        let day = series.index_of(i).to_string();
        for (k, v) in s.coeffs().iter().enumerate() {
            w.write_record([day.as_str(), &k.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_series<R: Read>(reader: R) -> Result<FunctionSeries> {
    let mut reader = BufReader::new(reader);
    let mut first = String::new();
    if reader.read_line(&mut first)? == 0 {
        return Err(Error::Format("empty series file".into()));
    }
    let fields = parse_header_fields(&first)?;
    let kind = BasisKind::parse(header_value(&fields, "basis")?)?;
    let k = parse_usize(header_value(&fields, "K")?, 1, "K")?;
    let grid = parse_usize(header_value(&fields, "grid")?, 1, "grid")?;
    let basis = match kind {
        BasisKind::Fourier => BasisSpec::fourier_uniform(k, grid)?,
    };

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut days: Vec<(i64, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        // the basis header occupies one line before the csv reader starts
        let line = rec.position().map(|p| p.line() + 1).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::Parse { line, msg: "expected day,coeff_index,value".into() });
        }
        let day: i64 = rec[0]
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad day {:?}", &rec[0]) })?;
        let idx = parse_usize(&rec[1], line, "coeff_index")?;
        let v = parse_f64(&rec[2], line, "value")?;
        if idx >= k {
            return Err(Error::Parse { line, msg: format!("coeff_index {idx} ≥ K = {k}") });
        }
        if days.last().map(|(d, _)| *d) != Some(day) {
            if let Some((prev, _)) = days.last() {
                if day != prev + 1 {
                    return Err(Error::Parse { line, msg: format!("day {day} does not follow {prev}") });
                }
            }
            days.push((day, vec![None; k]));
        }
        let slot = &mut days.last_mut().expect("pushed").1[idx];
        if slot.is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate coefficient {idx} for day {day}") });
        }
        *slot = Some(v);
    }
    let start = days.first().map(|(d, _)| *d).ok_or_else(|| Error::Format("series has no rows".into()))?;
    let samples = days
        .into_iter()
        .map(|(day, c)| {
            let c: Option<Vec<f64>> = c.into_iter().collect();
            let c = c.ok_or_else(|| Error::Format(format!("day {day} lacks coefficients")))?;
            FunctionSample::new(DVector::from_vec(c), &basis)
        })
        .collect::<Result<Vec<_>>>()?;
    FunctionSeries::new(&basis, start, samples)
}

pub fn save_series(series: &FunctionSeries, path: impl AsRef<Path>) -> Result<()> {
    write_series(series, std::fs::File::create(path)?)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<FunctionSeries> {
    read_series(std::fs::File::open(path)?)
}

/// On-disk form of a [`FarmaModel`]; operators are row-major `K·K` lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub basis: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub grid: usize,
    pub p: usize,
    pub q: usize,
    #[serde(default)]
    pub phi: Vec<Vec<f64>>,
    #[serde(default)]
    pub theta: Vec<Vec<f64>>,
    pub noise_cov: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(v: &[f64], k: usize, what: &str) -> Result<DMatrix<f64>> {
    if v.len() != k * k {
        return Err(Error::Format(format!("{what} has {} entries, expected {}", v.len(), k * k)));
    }
    Ok(DMatrix::from_row_slice(k, k, v))
}

impl ModelFile {
    pub fn from_model(m: &FarmaModel) -> Self {
        let b = m.basis();
        Self {
            basis: b.kind().name().to_string(),
            k: b.size(),
            grid: b.grid().len(),
            p: m.p(),
            q: m.q(),
            phi: m.phis().iter().map(|o| row_major(o.mat())).collect(),
            theta: m.thetas().iter().map(|o| row_major(o.mat())).collect(),
            noise_cov: row_major(m.noise_cov().mat()),
        }
    }

    pub fn to_model(&self) -> Result<FarmaModel> {
        if self.phi.len() != self.p || self.theta.len() != self.q {
            return Err(Error::Format(format!(
                "p = {}, q = {} but {} phi and {} theta operators given",
                self.p,
                self.q,
                self.phi.len(),
                self.theta.len()
            )));
        }
        let basis: Arc<BasisSpec> = match BasisKind::parse(&self.basis)? {
            BasisKind::Fourier => BasisSpec::fourier_uniform(self.k, self.grid)?,
        };
        let op = |v: &Vec<f64>, what: &str| KernelOperator::new(from_row_major(v, self.k, what)?, &basis);
        let phis = self.phi.iter().map(|v| op(v, "phi")).collect::<Result<Vec<_>>>()?;
        let thetas = self.theta.iter().map(|v| op(v, "theta")).collect::<Result<Vec<_>>>()?;
        FarmaModel::new(phis, thetas, op(&self.noise_cov, "noise_cov")?)
    }
}

pub fn model_to_string(m: &FarmaModel) -> Result<String> {
    toml::to_string(&ModelFile::from_model(m)).map_err(|e| Error::Format(e.to_string()))
}

pub fn model_from_str(s: &str) -> Result<FarmaModel> {
    let f: ModelFile = toml::from_str(s).map_err(|e| Error::Format(format!("model file: {e}")))?;
    f.to_model()
}

pub fn save_model(m: &FarmaModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(m)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FarmaModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

/// `d,p,q,rmse,mae`; failed cells are written as NaN.
pub fn write_table<W: Write>(table: &ErrorTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d", "p", "q", "rmse", "mae"])?;
    for r in &table.rows {
        w.write_record([
            r.d.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(reader: R) -> Result<Vec<ErrorRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 5 {
            return Err(Error::Parse { line, msg: "expected d,p,q,rmse,mae".into() });
        }
        out.push(ErrorRow {
            d: parse_usize(&rec[0], line, "d")?,
            p: parse_usize(&rec[1], line, "p")?,
            q: parse_usize(&rec[2], line, "q")?,
            rmse: parse_f64(&rec[3], line, "rmse")?,
            mae: parse_f64(&rec[4], line, "mae")?,
            failure: None,
        });
    }
    Ok(out)
}

/// `d,sigma2,gamma,empirical_mse,se`, followed by the squared-g bound and the
/// score predictor gap.
pub fn write_bounds<W: Write>(reports: &[BoundReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d", "sigma2", "gamma", "empirical_mse", "se", "gamma_squared", "predictor_gap"])?;
    for r in reports {
        w.write_record([
            r.d.to_string(),
            r.sigma2.to_string(),
            r.gamma.to_string(),
            r.empirical_mse.to_string(),
            r.se.to_string(),
            r.gamma_squared.to_string(),
            r.predictor_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a bounds file.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub d: usize,
    pub sigma2: f64,
    pub gamma: f64,
    pub empirical_mse: f64,
    pub se: f64,
}

pub fn read_bounds<R: Read>(reader: R) -> Result<Vec<BoundRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 5 {
            return Err(Error::Parse { line, msg: "expected d,sigma2,gamma,empirical_mse,se".into() });
        }
        out.push(BoundRow {
            d: parse_usize(&rec[0], line, "d")?,
            sigma2: parse_f64(&rec[1], line, "sigma2")?,
            gamma: parse_f64(&rec[2], line, "gamma")?,
            empirical_mse: parse_f64(&rec[3], line, "empirical_mse")?,
            se: parse_f64(&rec[4], line, "se")?,
        });
    }
    Ok(out)
}

/// Fitted score model: `#d=,p=,q=,stationary=,spectral_radius=` then
/// `matrix,lag,row,col,value` rows for `phi`, `theta` and `sigma`.
pub fn write_varma<W: Write>(m: &VarmaModel, mut writer: W) -> Result<()> {
    let diag = m.diagnostics();
    writeln!(
        writer,
        "#d={},p={},q={},stationary={},spectral_radius={}",
        m.d(),
        m.p(),
        m.q(),
        diag.stationary,
        diag.spectral_radius
    )?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["matrix", "lag", "row", "col", "value"])?;
    let mut put = |name: &str, lag: usize, a: &DMatrix<f64>| -> Result<()> {
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                w.write_record([name, &lag.to_string(), &r.to_string(), &c.to_string(), &a[(r, c)].to_string()])?;
            }
        }
        Ok(())
    };
    for (i, a) in m.phis().iter().enumerate() {
        put("phi", i + 1, a)?;
    }
    for (j, a) in m.thetas().iter().enumerate() {
        put("theta", j + 1, a)?;
    }
    put("sigma", 0, m.sigma())?;
    w.flush()?;
    Ok(())
}

pub fn read_varma<R: Read>(reader: R) -> Result<VarmaModel> {
    let mut reader = BufReader::new(reader);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let fields = parse_header_fields(&first)?;
    let d = parse_usize(header_value(&fields, "d")?, 1, "d")?;
    let p = parse_usize(header_value(&fields, "p")?, 1, "p")?;
    let q = parse_usize(header_value(&fields, "q")?, 1, "q")?;
    let mut phis = vec![DMatrix::zeros(d, d); p];
    let mut thetas = vec![DMatrix::zeros(d, d); q];
    let mut sigma = DMatrix::zeros(d, d);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() + 1).unwrap_or(0);
        if rec.len() != 5 {
            return Err(Error::Parse { line, msg: "expected matrix,lag,row,col,value".into() });
        }
        let lag = parse_usize(&rec[1], line, "lag")?;
        let r = parse_usize(&rec[2], line, "row")?;
        let c = parse_usize(&rec[3], line, "col")?;
        let v = parse_f64(&rec[4], line, "value")?;
        let target = match (&rec[0], lag) {
            ("phi", l) if (1..=p).contains(&l) => &mut phis[l - 1],
            ("theta", l) if (1..=q).contains(&l) => &mut thetas[l - 1],
            ("sigma", 0) => &mut sigma,
            (name, l) => return Err(Error::Parse { line, msg: format!("unexpected entry {name} lag {l}") }),
        };
        if r >= d || c >= d {
            return Err(Error::Parse { line, msg: format!("index ({r},{c}) outside {d}x{d}") });
        }
        target[(r, c)] = v;
    }
    VarmaModel::new(phis, thetas, sigma)
}

//! File formats and run configuration.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the in-memory values bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::counterfactuals::{DecisionMode, Pooling, WelfareCurve};
use crate::diagnostics::MomentMode;
use crate::error::{Error, Result};
use crate::estimator::{EstimationResult, EstimatorConfig, OptimizerConfig, SmoothingConfig};
use crate::model::{clamp_risk, PatientCase, PhysicianParams};

pub const PATIENTS_HEADER: [&str; 5] = ["physician_id", "patient_id", "risk", "y", "d"];

pub const ESTIMATES_HEADER: [&str; 13] = [
    "physician_id", "n", "beta", "sigma_xi", "sigma_eta", "loglik", "converged", "beta_lo", "beta_hi", "sxi_lo",
    "sxi_hi", "seta_lo", "seta_hi",
];

pub const WELFARE_HEADER: [&str; 4] = ["beta_s", "w_policy1", "w_policy2", "w_policy3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub smoothing: SmoothingConfig,
    pub optimizer: OptimizerConfig,
    pub min_observations: usize,
    pub bootstrap_reps: usize,
    pub welfare_grid_step: f64,
    pub decision_mode: DecisionMode,
    pub moment_mode: MomentMode,
    pub pooling: Pooling,
    /// Increment of `sigma_xi` in the sensitivity sweep.
    pub sensitivity_step: f64,
    pub sensitivity_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            smoothing: SmoothingConfig::default(),
            optimizer: OptimizerConfig::default(),
            min_observations: 100,
            bootstrap_reps: 200,
            welfare_grid_step: 0.01,
            decision_mode: DecisionMode::Expected,
            moment_mode: MomentMode::Expected,
            pooling: Pooling::Pooled,
            sensitivity_step: 1.0,
            sensitivity_grid: (0..=20).map(|k| k as f64).collect(),
        }
    }
}

impl RunConfig {
    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            smoothing: self.smoothing,
            optimizer: self.optimizer,
            min_observations: self.min_observations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if !(self.optimizer.grad_tol > 0.0) || self.optimizer.max_iter == 0 {
            return Err(Error::Config("optimizer needs grad_tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// SHA-256 of the JSON form of `value`, hex encoded.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex(&Sha256::digest(json))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Provenance written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub notes: BTreeMap<String, String>,
}

impl RunMetadata {
    pub fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash,
            notes: BTreeMap::new(),
        }
    }

    pub fn note(mut self, key: &str, value: impl Into<String>) -> Self {
        self.notes.insert(key.to_string(), value.into());
        self
    }
}

pub fn metadata_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn write_metadata(output: &Path, meta: &RunMetadata) -> Result<()> {
    write_json(&metadata_path(output), meta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPatients {
    pub cases: Vec<PatientCase>,
    /// Rows whose risk was moved into the admissible range.
    pub clamped: usize,
}

fn record_error(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Record { path: path.to_string(), line, message: message.into() }
}

fn parse_flag(s: &str, name: &str, path: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(record_error(path, line, format!("{name} must be 0 or 1, got {other:?}"))),
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], path: &str) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(record_error(path, 1, format!("expected header {}, got {}", expected.join(","), got.join(","))));
    }
    Ok(())
}

/// Reads patients from any reader; `path` only labels diagnostics.
pub fn read_patients<R: Read>(reader: R, path: &str) -> Result<ParsedPatients> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &PATIENTS_HEADER, path)?;
    let mut cases = Vec::new();
    let mut clamped = 0;
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            record_error(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(record_error(path, line, format!("expected 5 fields, got {}", rec.len())));
        }
        let physician_id = rec[0].trim().to_string();
        let patient_id = rec[1].trim().to_string();
        if physician_id.is_empty() || patient_id.is_empty() {
            return Err(record_error(path, line, "empty identifier"));
        }
        let risk: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| record_error(path, line, format!("risk is not a number: {:?}", &rec[2])))?;
        if !(0.0..=1.0).contains(&risk) {
            return Err(record_error(path, line, format!("risk outside [0, 1]: {risk}")));
        }
        let (risk, moved) = clamp_risk(risk);
        clamped += usize::from(moved);
        let y = parse_flag(&rec[3], "y", path, line)?;
        let d = parse_flag(&rec[4], "d", path, line)?;
        if !seen.insert((physician_id.clone(), patient_id.clone())) {
            return Err(record_error(path, line, format!("duplicate patient {physician_id}/{patient_id}")));
        }
        cases.push(PatientCase::new(physician_id, patient_id, risk, y, d).map_err(|e| record_error(path, line, e.to_string()))?);
    }
    Ok(ParsedPatients { cases, clamped })
}

pub fn parse_patients_csv(path: &Path) -> Result<ParsedPatients> {
    read_patients(File::open(path)?, &path.display().to_string())
}

pub fn write_patients<W: Write>(writer: W, cases: &[PatientCase]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PATIENTS_HEADER)?;
    for c in cases {
        w.write_record([
            c.physician_id.as_str(),
            c.patient_id.as_str(),
            &c.risk().to_string(),
            if c.y { "1" } else { "0" },
            if c.d { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_patients_csv(path: &Path, cases: &[PatientCase]) -> Result<()> {
    write_patients(File::create(path)?, cases)
}

/// One row of the estimates file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub physician_id: String,
    pub n: usize,
    pub params: PhysicianParams,
    pub loglik: f64,
    pub converged: bool,
    /// `(lo, hi)` for beta, sigma_xi and sigma_eta, when bootstrapped.
    pub intervals: Option<[(f64, f64); 3]>,
}

impl From<&EstimationResult> for EstimateRow {
    fn from(r: &EstimationResult) -> Self {
        Self {
            physician_id: r.physician_id.clone(),
            n: r.n_obs,
            params: r.params,
            loglik: r.loglik,
            converged: r.converged,
            intervals: r.bootstrap.as_ref().map(|b| {
                [(b.beta.lo, b.beta.hi), (b.sigma_xi.lo, b.sigma_xi.hi), (b.sigma_eta.lo, b.sigma_eta.hi)]
            }),
        }
    }
}

pub fn write_estimates<W: Write>(writer: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ESTIMATES_HEADER)?;
    for r in rows {
        let mut fields = vec![
            r.physician_id.clone(),
            r.n.to_string(),
            r.params.beta().to_string(),
            r.params.sigma_xi().to_string(),
            r.params.sigma_eta().to_string(),
            r.loglik.to_string(),
            if r.converged { "1" } else { "0" }.to_string(),
        ];
        match r.intervals {
            Some(iv) => fields.extend(iv.iter().flat_map(|(lo, hi)| [lo.to_string(), hi.to_string()])),
            None => fields.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates_csv(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    write_estimates(File::create(path)?, rows)
}

pub fn read_estimates<R: Read>(reader: R, path: &str) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &ESTIMATES_HEADER, path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != ESTIMATES_HEADER.len() {
            return Err(record_error(path, line, format!("expected 13 fields, got {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| record_error(path, line, format!("{} is not a number: {:?}", ESTIMATES_HEADER[k], &rec[k])))
        };
        let n = rec[1]
            .trim()
            .parse()
            .map_err(|_| record_error(path, line, format!("n is not a count: {:?}", &rec[1])))?;
        let params = PhysicianParams::new(num(2)?, num(3)?, num(4)?).map_err(|e| record_error(path, line, e.to_string()))?;
        let intervals = if (7..13).all(|k| rec[k].trim().is_empty()) {
            None
        } else {
            Some([(num(7)?, num(8)?), (num(9)?, num(10)?), (num(11)?, num(12)?)])
        };
        rows.push(EstimateRow {
            physician_id: rec[0].trim().to_string(),
            n,
            params,
            loglik: num(5)?,
            converged: parse_flag(&rec[6], "converged", path, line)?,
            intervals,
        });
    }
    Ok(rows)
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<EstimateRow>> {
    read_estimates(File::open(path)?, &path.display().to_string())
}

pub fn params_by_physician(rows: &[EstimateRow]) -> BTreeMap<String, PhysicianParams> {
    rows.iter().map(|r| (r.physician_id.clone(), r.params)).collect()
}

/// Welfare curve with one column per policy; undefined points are empty.
pub fn write_welfare<W: Write>(writer: W, curve: &WelfareCurve) -> Result<()> {
    if curve.values.len() != 3 {
        return Err(Error::Domain("welfare file expects three policies".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(WELFARE_HEADER)?;
    for (g, bs) in curve.grid.iter().enumerate() {
        let mut fields = vec![bs.to_string()];
        fields.extend(curve.values.iter().map(|v| v[g].map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_welfare_csv(path: &Path, curve: &WelfareCurve) -> Result<()> {
    write_welfare(File::create(path)?, curve)
}

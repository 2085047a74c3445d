//! Shared data model: sibling-pair records, datasets, generator parameters,
//! and estimator result containers.
//!
//! A [`FamilyRecord`] holds one family's observed exposures and outcomes plus
//! the optional latent state written by the simulator. Estimators must never
//! read the latent fields; only oracle routines and true-weight construction
//! do. Datasets are immutable after construction and safe to share across
//! workers.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Latent per-family state stored by the simulator for oracle use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// Confounder draw.
    pub u: f64,
    /// Family-level outcome intercept.
    pub alpha: f64,
    /// Gaussian component of `alpha`.
    pub alpha_tilde: f64,
}

/// One sibling pair: binary exposures and real outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub family_id: u64,
    pub x1: u8,
    pub x2: u8,
    pub y1: f64,
    pub y2: f64,
    pub latent: Option<LatentState>,
}

impl FamilyRecord {
    pub fn new(family_id: u64, x1: u8, x2: u8, y1: f64, y2: f64) -> Self {
        Self { family_id, x1, x2, y1, y2, latent: None }
    }

    /// Family mean exposure, `(x1 + x2) / 2`.
    pub fn xbar(&self) -> f64 {
        (f64::from(self.x1) + f64::from(self.x2)) / 2.0
    }

    pub fn is_discordant(&self) -> bool {
        self.x1 != self.x2
    }

    /// The same family with sibling labels exchanged.
    pub fn swapped(&self) -> Self {
        Self { x1: self.x2, x2: self.x1, y1: self.y2, y2: self.y1, ..*self }
    }
}

/// An ordered collection of families plus free-form provenance metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<FamilyRecord>,
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(records: Vec<FamilyRecord>) -> Self {
        Self { records, meta: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copy with all latent state removed. Estimator outputs must be
    /// identical on the stripped copy; tests assert this.
    pub fn strip_latent(&self) -> Dataset {
        Dataset {
            records: self.records.iter().map(|r| FamilyRecord { latent: None, ..*r }).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Copy with sibling labels exchanged in every family.
    pub fn swap_siblings(&self) -> Dataset {
        Dataset {
            records: self.records.iter().map(FamilyRecord::swapped).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Latent `alpha` per family, if present for all families.
    pub fn latent_alpha(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.latent.map(|l| l.alpha)).collect()
    }

    /// Writes `family_id,x1,x2,y1,y2[,u,alpha,alpha_tilde]` CSV. Floats are
    /// printed in shortest round-trip form, so write-read cycles are exact
    /// and equal inputs produce byte-identical files.
    pub fn write_csv<W: Write>(&self, writer: W, with_latent: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if with_latent {
            w.write_record(["family_id", "x1", "x2", "y1", "y2", "u", "alpha", "alpha_tilde"])?;
        } else {
            w.write_record(["family_id", "x1", "x2", "y1", "y2"])?;
        }
        for r in &self.records {
            let base = [
                r.family_id.to_string(),
                r.x1.to_string(),
                r.x2.to_string(),
                r.y1.to_string(),
                r.y2.to_string(),
            ];
            if with_latent {
                let l = r.latent.ok_or_else(|| {
                    Error::Invalid(format!("family {} has no latent state", r.family_id))
                })?;
                let mut rec = base.to_vec();
                rec.push(l.u.to_string());
                rec.push(l.alpha.to_string());
                rec.push(l.alpha_tilde.to_string());
                w.write_record(&rec)?;
            } else {
                w.write_record(&base)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path, with_latent: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), with_latent)
    }

    /// Reads the dataset CSV, with or without the latent columns.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let with_latent = match cols.as_slice() {
            ["family_id", "x1", "x2", "y1", "y2"] => false,
            ["family_id", "x1", "x2", "y1", "y2", "u", "alpha", "alpha_tilde"] => true,
            other => {
                return Err(Error::Parse(format!("unexpected dataset header: {}", other.join(","))))
            }
        };
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |i: usize| -> Result<&str> {
                row.get(i).ok_or_else(|| Error::Parse(format!("row {}: missing column {i}", line + 2)))
            };
            let parse_f64 = |i: usize| -> Result<f64> {
                field(i)?.parse().map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            let parse_int = |i: usize| -> Result<u64> {
                field(i)?.parse().map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            let mut rec = FamilyRecord::new(
                parse_int(0)?,
                parse_int(1)?.try_into().map_err(|_| {
                    Error::Parse(format!("row {}: exposure out of range", line + 2))
                })?,
                parse_int(2)?.try_into().map_err(|_| {
                    Error::Parse(format!("row {}: exposure out of range", line + 2))
                })?,
                parse_f64(3)?,
                parse_f64(4)?,
            );
            if with_latent {
                rec.latent = Some(LatentState {
                    u: parse_f64(5)?,
                    alpha: parse_f64(6)?,
                    alpha_tilde: parse_f64(7)?,
                });
            }
            records.push(rec);
        }
        Ok(Dataset::new(records))
    }

    pub fn read_csv_path(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// A validation finding; any finding makes the dataset invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    EmptyDataset,
    DuplicateFamilyId(u64),
    NonBinaryExposure { family_id: u64, sibling: u8, value: u8 },
    NonFiniteOutcome { family_id: u64, sibling: u8 },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyDataset => write!(f, "empty dataset"),
            Finding::DuplicateFamilyId(id) => write!(f, "duplicate family_id {id}"),
            Finding::NonBinaryExposure { family_id, sibling, value } => {
                write!(f, "family {family_id}: x{sibling} = {value} is not binary")
            }
            Finding::NonFiniteOutcome { family_id, sibling } => {
                write!(f, "family {family_id}: y{sibling} is not finite")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Report-only structural validation: duplicate ids, non-binary exposures,
/// non-finite outcomes, emptiness.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut findings = Vec::new();
    if d.is_empty() {
        findings.push(Finding::EmptyDataset);
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &d.records {
        if !seen.insert(r.family_id) {
            findings.push(Finding::DuplicateFamilyId(r.family_id));
        }
        for (sibling, x) in [(1u8, r.x1), (2, r.x2)] {
            if x > 1 {
                findings.push(Finding::NonBinaryExposure { family_id: r.family_id, sibling, value: x });
            }
        }
        for (sibling, y) in [(1u8, r.y1), (2, r.y2)] {
            if !y.is_finite() {
                findings.push(Finding::NonFiniteOutcome { family_id: r.family_id, sibling });
            }
        }
    }
    ValidationReport { findings }
}

/// The exposure-discordant families, order preserved.
pub fn discordant_subset(d: &Dataset) -> Dataset {
    Dataset {
        records: d.records.iter().filter(|r| r.is_discordant()).copied().collect(),
        meta: d.meta.clone(),
    }
}

/// All parameters of the sibling-pair generating model.
///
/// `beta_b` appears in the published parameter table but not in the
/// generating equations; the simulator ignores it (it only enters the fitted
/// between-within model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpParams {
    pub n_families: usize,
    pub b_lambda: f64,
    pub sigma_u: f64,
    pub b_alpha: f64,
    pub b_x: f64,
    pub pi_x: f64,
    pub tau: f64,
    pub mu: f64,
    pub beta_b: f64,
    pub beta_w: f64,
    pub beta_d: f64,
    pub beta_c: f64,
    pub sigma: f64,
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_families == 0 {
            return Err(Error::Invalid("n_families must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_x) {
            return Err(Error::Invalid(format!("pi_x = {} outside [0, 1]", self.pi_x)));
        }
        for (name, v) in [("sigma_u", self.sigma_u), ("tau", self.tau), ("sigma", self.sigma)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Invalid(format!("{name} = {v} must be >= 0")));
            }
        }
        for (name, v) in [
            ("b_lambda", self.b_lambda),
            ("b_alpha", self.b_alpha),
            ("b_x", self.b_x),
            ("mu", self.mu),
            ("beta_b", self.beta_b),
            ("beta_w", self.beta_w),
            ("beta_d", self.beta_d),
            ("beta_c", self.beta_c),
        ] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("{name} = {v} must be finite")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: DgpParams = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: DgpParams = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Loads parameters from a `.toml` or `.json` file, deciding by
    /// extension (TOML when in doubt).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("DgpParams serializes to TOML")
    }
}

/// Why an estimate is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingReason {
    Nonconvergence,
    ZeroInverseWeight,
    EmptyArm,
    InsufficientData,
}

impl fmt::Display for MissingReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MissingReason::Nonconvergence => "nonconvergence",
            MissingReason::ZeroInverseWeight => "zero_inverse_weight",
            MissingReason::EmptyArm => "empty_arm",
            MissingReason::InsufficientData => "insufficient_data",
        };
        f.write_str(s)
    }
}

/// Free-form numeric diagnostics plus the missing-rule that fired, if any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub missing_reason: Option<MissingReason>,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
}

impl Diagnostics {
    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// Estimate, standard error, and provenance of one estimator run. A missing
/// estimate always records why in `diagnostics.missing_reason`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub converged: bool,
    pub n_used: usize,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn missing(reason: MissingReason, n_used: usize) -> Self {
        FitResult {
            estimate: None,
            std_error: None,
            converged: !matches!(reason, MissingReason::Nonconvergence),
            n_used,
            diagnostics: Diagnostics { missing_reason: Some(reason), values: BTreeMap::new() },
        }
    }

    pub fn is_missing(&self) -> bool {
        self.estimate.is_none()
    }
}

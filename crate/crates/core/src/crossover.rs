//! Two-period within-family cross-over model and its estimators.
//!
//! Each family randomises one sibling to arm 1 (exposed then unexposed) and
//! the other to arm 2 (unexposed then exposed). Outcomes follow
//!
//! `Y_ijp = mu + pi*[p-1] + beta*[(2-A)(2-p) + (A-1)(p-1)]
//!          + lambda_{2-A}*[p-1] + alpha_i + s_ij + eps_ijp`
//!
//! so a carry-over of exposure (`lambda_1`) or of non-exposure (`lambda_0`)
//! contaminates period 2. The period-difference analysis estimates
//! `beta + (lambda_0 - lambda_1)/2`; substituting the cosibling's period-2
//! observation for the missing first period doubles the carry-over term to
//! `beta + (lambda_0 - lambda_1)`, which is exactly the aliasing a sibling
//! comparison inherits when interference is present.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Diagnostics, FitResult, MissingReason};
use crate::rng::{substream, tags};
use crate::{Error, Result};

/// Parameters of the cross-over generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverParams {
    pub n_families: usize,
    pub mu: f64,
    /// Period effect added in period 2.
    pub pi_effect: f64,
    /// Treatment effect.
    pub beta: f64,
    /// Carry-over of non-exposure (arm 2's period-2 contamination).
    pub lambda0: f64,
    /// Carry-over of exposure (arm 1's period-2 contamination).
    pub lambda1: f64,
    pub sd_alpha: f64,
    pub sd_s: f64,
    pub sd_eps: f64,
}

impl CrossoverParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_families == 0 {
            return Err(Error::Invalid("n_families must be >= 1".into()));
        }
        for (name, v) in [("sd_alpha", self.sd_alpha), ("sd_s", self.sd_s), ("sd_eps", self.sd_eps)]
        {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Invalid(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: CrossoverParams = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// One family: the arm of sibling 1 (sibling 2 gets the complement) and the
/// 2x2 outcome array indexed `[sibling][period]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverFamily {
    pub family_id: u64,
    /// Arm of sibling 1, in {1, 2}; sibling 2 is in the other arm.
    pub arm_sibling1: u8,
    pub y: [[f64; 2]; 2],
}

impl CrossoverFamily {
    /// Arm of sibling `j` (1-based).
    pub fn arm(&self, sibling: usize) -> u8 {
        if sibling == 1 {
            self.arm_sibling1
        } else {
            3 - self.arm_sibling1
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossoverDataset {
    pub families: Vec<CrossoverFamily>,
}

impl CrossoverDataset {
    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    /// Writes `family_id,sibling,arm,period,y`, four rows per family.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["family_id", "sibling", "arm", "period", "y"])?;
        for fam in &self.families {
            for sibling in 1..=2usize {
                for period in 1..=2usize {
                    w.write_record([
                        fam.family_id.to_string(),
                        sibling.to_string(),
                        fam.arm(sibling).to_string(),
                        period.to_string(),
                        fam.y[sibling - 1][period - 1].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn outcome(p: &CrossoverParams, arm: u8, period: usize, alpha: f64, s: f64, eps: f64) -> f64 {
    let a = f64::from(arm);
    let pp = period as f64;
    let exposure = (2.0 - a) * (2.0 - pp) + (a - 1.0) * (pp - 1.0);
    let carry = if period == 2 {
        if arm == 1 {
            p.lambda1
        } else {
            p.lambda0
        }
    } else {
        0.0
    };
    let period_term = if period == 2 { p.pi_effect } else { 0.0 };
    p.mu + period_term + p.beta * exposure + carry + alpha + s + eps
}

fn draw_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

/// Simulates the cross-over study: a within-family fair coin assigns the
/// complementary arms, then outcomes follow the model exactly. Per-family
/// substreams keyed by `(seed, family index)`.
pub fn simulate_crossover(p: &CrossoverParams, seed: u64) -> CrossoverDataset {
    let families = (0..p.n_families as u64)
        .into_par_iter()
        .map(|family_id| {
            let mut rng = substream(seed, &[tags::CROSSOVER, family_id]);
            let arm_sibling1 = if rng.gen::<f64>() < 0.5 { 1u8 } else { 2u8 };
            let alpha = draw_normal(&mut rng, p.sd_alpha);
            let s = [draw_normal(&mut rng, p.sd_s), draw_normal(&mut rng, p.sd_s)];
            let mut y = [[0.0; 2]; 2];
            for (sibling, row) in y.iter_mut().enumerate() {
                let arm = if sibling == 0 { arm_sibling1 } else { 3 - arm_sibling1 };
                for (period_idx, slot) in row.iter_mut().enumerate() {
                    let eps = draw_normal(&mut rng, p.sd_eps);
                    *slot = outcome(p, arm, period_idx + 1, alpha, s[sibling], eps);
                }
            }
            CrossoverFamily { family_id, arm_sibling1, y }
        })
        .collect();
    CrossoverDataset { families }
}

/// Mean, variance, and count of `f(family, sibling)` over siblings in an arm.
fn arm_mean(
    d: &CrossoverDataset,
    arm: u8,
    f: impl Fn(&CrossoverFamily, usize) -> f64,
) -> (f64, f64, usize) {
    let mut sum = 0.0;
    let mut values = Vec::new();
    for fam in &d.families {
        for sibling in 1..=2usize {
            if fam.arm(sibling) == arm {
                let v = f(fam, sibling);
                sum += v;
                values.push(v);
            }
        }
    }
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        f64::NAN
    };
    (mean, var, n)
}

fn arm_contrast(
    d: &CrossoverDataset,
    scale: f64,
    f: impl Fn(&CrossoverFamily, usize) -> f64,
) -> FitResult {
    let (m1, v1, n1) = arm_mean(d, 1, &f);
    let (m2, v2, n2) = arm_mean(d, 2, &f);
    if n1 == 0 || n2 == 0 {
        return FitResult::missing(MissingReason::EmptyArm, 2 * d.len());
    }
    let estimate = scale * (m1 - m2);
    let std_error = if n1 > 1 && n2 > 1 {
        Some(scale * (v1 / n1 as f64 + v2 / n2 as f64).sqrt())
    } else {
        None
    };
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("mean_arm1", m1);
    diagnostics.set("mean_arm2", m2);
    FitResult { estimate: Some(estimate), std_error, converged: true, n_used: n1 + n2, diagnostics }
}

/// Between-arm contrast of within-sibling period differences, halved. The
/// zero-noise value is `beta + (lambda0 - lambda1)/2`.
pub fn period_difference_estimator(d: &CrossoverDataset) -> FitResult {
    arm_contrast(d, 0.5, |fam, sibling| fam.y[sibling - 1][0] - fam.y[sibling - 1][1])
}

/// Period differences with the cosibling's period-2 observation standing in
/// for the missing first period, using only second-period data. The
/// zero-noise value is `beta + (lambda0 - lambda1)`: losing the first period
/// doubles the carry-over aliasing.
pub fn cosibling_substitution_estimator(d: &CrossoverDataset) -> FitResult {
    arm_contrast(d, 0.5, |fam, sibling| {
        let cosibling = 3 - sibling;
        fam.y[cosibling - 1][1] - fam.y[sibling - 1][1]
    })
}

/// Between-arm contrast of within-sibling period sums, which isolates the
/// carry-over difference `lambda1 - lambda0`.
pub fn carryover_difference_estimator(d: &CrossoverDataset) -> FitResult {
    arm_contrast(d, 1.0, |fam, sibling| fam.y[sibling - 1][0] + fam.y[sibling - 1][1])
}

/// The conventional cross-over analysis: averaging within-person period
/// differences between arms. Numerically identical to
/// [`period_difference_estimator`]; kept as the named analysis whose
/// zero-noise value `beta + (lambda0 - lambda1)/2` exhibits the aliasing.
pub fn crossover_exposure_effect(d: &CrossoverDataset) -> FitResult {
    let delta =
        |fam: &CrossoverFamily, sibling: usize| fam.y[sibling - 1][0] - fam.y[sibling - 1][1];
    let (m1, v1, n1) = arm_mean(d, 1, delta);
    let (m2, v2, n2) = arm_mean(d, 2, |fam, sibling| -delta(fam, sibling));
    if n1 == 0 || n2 == 0 {
        return FitResult::missing(MissingReason::EmptyArm, 2 * d.len());
    }
    let estimate = (m1 + m2) / 2.0;
    let std_error = if n1 > 1 && n2 > 1 {
        Some(0.5 * (v1 / n1 as f64 + v2 / n2 as f64).sqrt())
    } else {
        None
    };
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("mean_arm1", m1);
    diagnostics.set("mean_arm2", -m2);
    FitResult { estimate: Some(estimate), std_error, converged: true, n_used: n1 + n2, diagnostics }
}

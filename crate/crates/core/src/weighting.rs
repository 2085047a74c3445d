//! Inverse-probability weights and weighted counterfactual-mean contrasts.
//!
//! Weights target the family-level contrast `E[Y(1,1) − Y(0,0)]`: an
//! observation in a both-exposed family is reweighted by the inverse
//! probability of that family being both-exposed given its intercept α, and
//! likewise for neither-exposed. Weights vary on the family level only and
//! are zero off the target arm. True weights evaluate the generating-model
//! probability at the latent α; estimated weights fit two logistic models
//! (both-exposed and neither-exposed against α) and invert the fitted
//! probabilities. The selection variant multiplies in a known
//! inverse-selection probability and targets unconditional counterfactual
//! means.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DgpParams, Diagnostics, FamilyRecord, FitResult, MissingReason};
use crate::dgp::{logistic, ExposurePair};
use crate::estimators::{logistic_irls, logistic_irls_multi, MultiLogisticFit};
use crate::rng::{substream, tags};
use crate::{Error, Result};

/// Fitted probabilities below this are treated as numerically zero inverse
/// weights and make the estimate missing.
pub const NEAR_ZERO_PROBABILITY: f64 = 1e-12;

/// Where a weight set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    True,
    EstimatedTrueAlpha,
    EstimatedEstAlpha,
    Selection,
}

/// Weight truncation rule. `Percentile` excludes observations whose weight
/// exceeds the given quantile (type-7, linear interpolation) of the positive
/// weights; `Absolute` excludes weights above a constant. Exclusion zeroes
/// the weight and removes the observation from denominator counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    None,
    Percentile(f64),
    Absolute(f64),
}

/// Weighted-mean normalization: `Ht` divides by the observation count,
/// `Hajek` by the realized weight sum within each arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Ht,
    Hajek,
}

/// How the fitted weight models enter α on the log-odds scale. `Quadratic`
/// adds an α² term, the usual sensitivity check on the linear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModelForm {
    Linear,
    Quadratic,
}

/// Per-observation weights for the two target arms. Observation order is
/// (family 0 sibling 1, family 0 sibling 2, family 1 sibling 1, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub family_ids: Vec<u64>,
    /// Weight toward the both-exposed arm; positive only when `xbar = 1`.
    pub arm1: Vec<f64>,
    /// Weight toward the neither-exposed arm; positive only when `xbar = 0`.
    pub arm0: Vec<f64>,
    pub excluded: Vec<bool>,
    pub source: WeightSource,
    pub truncation: TruncationRule,
    /// Set when a missing rule fired during construction.
    pub degenerate: Option<MissingReason>,
    /// Covariate form used by estimated weight models.
    pub model_form: WeightModelForm,
    /// The fitted both-exposed and neither-exposed models, for estimated
    /// sources.
    pub models: Option<(MultiLogisticFit, MultiLogisticFit)>,
}

impl WeightSet {
    fn empty(n_families: usize, source: WeightSource) -> Self {
        WeightSet {
            family_ids: Vec::with_capacity(n_families),
            arm1: Vec::with_capacity(2 * n_families),
            arm0: Vec::with_capacity(2 * n_families),
            excluded: vec![false; 2 * n_families],
            source,
            truncation: TruncationRule::None,
            degenerate: None,
            model_form: WeightModelForm::Linear,
            models: None,
        }
    }

    pub fn n_observations(&self) -> usize {
        self.arm1.len()
    }

    pub fn n_excluded(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Largest non-excluded weight across both arms, or 0 for an all-zero set.
    pub fn max_weight(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.n_observations() {
            if !self.excluded[i] {
                max = max.max(self.arm1[i]).max(self.arm0[i]);
            }
        }
        max
    }

    /// The single active weight of an observation: each observation carries
    /// positive weight in at most one arm.
    pub fn pooled(&self, idx: usize) -> f64 {
        self.arm1[idx] + self.arm0[idx]
    }

    /// Writes `family_id,sibling,arm,weight,excluded`, one row per
    /// observation belonging to a concordant family (the only observations
    /// that carry weight).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["family_id", "sibling", "arm", "weight", "excluded"])?;
        for (fam_idx, family_id) in self.family_ids.iter().enumerate() {
            for sibling in 0..2usize {
                let idx = 2 * fam_idx + sibling;
                let (arm, weight) = if self.arm1[idx] > 0.0 {
                    (1, self.arm1[idx])
                } else if self.arm0[idx] > 0.0 {
                    (0, self.arm0[idx])
                } else {
                    continue;
                };
                w.write_record([
                    family_id.to_string(),
                    (sibling + 1).to_string(),
                    arm.to_string(),
                    weight.to_string(),
                    u8::from(self.excluded[idx]).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Probability of the exposure assignment `arm` given the family intercept,
/// under the generating model's three-point mechanism.
pub fn treatment_probability(p: &DgpParams, alpha: f64, arm: ExposurePair) -> f64 {
    let p_disc = logistic(p.b_x * alpha);
    match arm {
        (1, 1) | (0, 0) => (1.0 - p_disc) / 2.0,
        (1, 0) => p_disc * p.pi_x,
        (0, 1) => p_disc * (1.0 - p.pi_x),
        _ => 0.0,
    }
}

/// True inverse-probability weights from the generating model, evaluated at
/// the stored latent α. Requires latent state on every family.
pub fn true_weights(d: &Dataset, p: &DgpParams) -> Result<WeightSet> {
    let alphas = d
        .latent_alpha()
        .ok_or_else(|| Error::Invalid("true weights require latent state".into()))?;
    let mut set = WeightSet::empty(d.len(), WeightSource::True);
    for (r, &alpha) in d.records.iter().zip(&alphas) {
        let prob = treatment_probability(p, alpha, (1, 1));
        push_family_weights(&mut set, r, prob, prob);
    }
    Ok(set)
}

/// Weights from the two logistic models fitted on `alpha` (one value per
/// family): both-exposed and neither-exposed responses. Non-convergence of
/// either fit, or a fitted probability below [`NEAR_ZERO_PROBABILITY`] at an
/// on-arm family, flags the set degenerate so downstream contrasts go
/// missing.
pub fn estimated_weights(d: &Dataset, alpha: &[f64], source: WeightSource) -> Result<WeightSet> {
    estimated_weights_with_form(d, alpha, source, WeightModelForm::Linear)
}

/// [`estimated_weights`] with a choice of covariate form for the two weight
/// models.
pub fn estimated_weights_with_form(
    d: &Dataset,
    alpha: &[f64],
    source: WeightSource,
    form: WeightModelForm,
) -> Result<WeightSet> {
    if alpha.len() != d.len() {
        return Err(Error::Invalid(format!(
            "alpha has {} entries for {} families",
            alpha.len(),
            d.len()
        )));
    }
    let both: Vec<u8> = d.records.iter().map(|r| u8::from(r.x1 == 1 && r.x2 == 1)).collect();
    let neither: Vec<u8> = d.records.iter().map(|r| u8::from(r.x1 == 0 && r.x2 == 0)).collect();
    let (m1, m0) = match form {
        WeightModelForm::Linear => {
            // The single-covariate fit is the published recipe's primitive.
            let to_multi = |f: crate::estimators::LogisticFit| MultiLogisticFit {
                intercept: f.intercept,
                slopes: vec![f.slope],
                converged: f.converged,
                iterations: f.iterations,
                deviance: f.deviance,
            };
            (to_multi(logistic_irls(&both, alpha)), to_multi(logistic_irls(&neither, alpha)))
        }
        WeightModelForm::Quadratic => {
            let alpha_sq: Vec<f64> = alpha.iter().map(|a| a * a).collect();
            (
                logistic_irls_multi(&both, &[alpha, &alpha_sq]),
                logistic_irls_multi(&neither, &[alpha, &alpha_sq]),
            )
        }
    };
    let mut set = WeightSet::empty(d.len(), source);
    set.model_form = form;
    if !m1.converged || !m0.converged {
        set.models = Some((m1, m0));
        for r in &d.records {
            set.family_ids.push(r.family_id);
            set.arm1.extend([0.0, 0.0]);
            set.arm0.extend([0.0, 0.0]);
        }
        set.degenerate = Some(MissingReason::Nonconvergence);
        return Ok(set);
    }
    let predict = |m: &MultiLogisticFit, a: f64| match form {
        WeightModelForm::Linear => m.predict(&[a]),
        WeightModelForm::Quadratic => m.predict(&[a, a * a]),
    };
    for (r, &a) in d.records.iter().zip(alpha) {
        push_family_weights(&mut set, r, predict(&m1, a), predict(&m0, a));
    }
    set.models = Some((m1, m0));
    Ok(set)
}

fn push_family_weights(set: &mut WeightSet, r: &FamilyRecord, prob1: f64, prob0: f64) {
    set.family_ids.push(r.family_id);
    let (w1, w0) = if r.x1 == 1 && r.x2 == 1 {
        if prob1 < NEAR_ZERO_PROBABILITY {
            set.degenerate = Some(MissingReason::ZeroInverseWeight);
            (0.0, 0.0)
        } else {
            (1.0 / prob1, 0.0)
        }
    } else if r.x1 == 0 && r.x2 == 0 {
        if prob0 < NEAR_ZERO_PROBABILITY {
            set.degenerate = Some(MissingReason::ZeroInverseWeight);
            (0.0, 0.0)
        } else {
            (0.0, 1.0 / prob0)
        }
    } else {
        (0.0, 0.0)
    };
    set.arm1.extend([w1, w1]);
    set.arm0.extend([w0, w0]);
}

/// Type-7 quantile (linear interpolation between order statistics).
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Applies a truncation rule, marking excluded observations and zeroing
/// their weights. The percentile is computed over the positive pooled
/// weights of currently included observations.
pub fn truncate_weights(w: &WeightSet, rule: TruncationRule) -> WeightSet {
    let mut out = w.clone();
    out.truncation = rule;
    let threshold = match rule {
        TruncationRule::None => return out,
        TruncationRule::Absolute(c) => c,
        TruncationRule::Percentile(p) => {
            let mut positive: Vec<f64> = (0..w.n_observations())
                .filter(|&i| !w.excluded[i] && w.pooled(i) > 0.0)
                .map(|i| w.pooled(i))
                .collect();
            if positive.is_empty() {
                return out;
            }
            positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile_type7(&positive, p)
        }
    };
    for i in 0..out.n_observations() {
        if !out.excluded[i] && out.pooled(i) > threshold {
            out.excluded[i] = true;
            out.arm1[i] = 0.0;
            out.arm0[i] = 0.0;
        }
    }
    out
}

/// Weighted counterfactual-mean contrast `mu_hat(1) − mu_hat(0)` over all
/// sibling observations. `Ht` divides weighted sums by the included
/// observation count; `Hajek` divides by each arm's weight sum. An arm with
/// no weight is an empty arm and the estimate is missing.
pub fn weighted_contrast(d: &Dataset, w: &WeightSet, normalization: Normalization) -> FitResult {
    let n_obs = 2 * d.len();
    if w.n_observations() != n_obs {
        let mut res = FitResult::missing(MissingReason::InsufficientData, 0);
        res.diagnostics.set("weight_length_mismatch", 1.0);
        return res;
    }
    if let Some(reason) = w.degenerate {
        return FitResult::missing(reason, 0);
    }
    let mut sum_w1 = 0.0;
    let mut sum_w0 = 0.0;
    let mut sum_w1y = 0.0;
    let mut sum_w0y = 0.0;
    let mut n_included = 0usize;
    let mut n_used = 0usize;
    for (fam_idx, r) in d.records.iter().enumerate() {
        for (sibling, y) in [r.y1, r.y2].into_iter().enumerate() {
            let idx = 2 * fam_idx + sibling;
            if w.excluded[idx] {
                continue;
            }
            n_included += 1;
            let (w1, w0) = (w.arm1[idx], w.arm0[idx]);
            if w1 > 0.0 || w0 > 0.0 {
                n_used += 1;
            }
            sum_w1 += w1;
            sum_w0 += w0;
            sum_w1y += w1 * y;
            sum_w0y += w0 * y;
        }
    }
    if sum_w1 <= 0.0 || sum_w0 <= 0.0 || n_included == 0 {
        let mut res = FitResult::missing(MissingReason::EmptyArm, n_used);
        res.diagnostics.set("n_excluded", w.n_excluded() as f64);
        return res;
    }
    let (mu1, mu0) = match normalization {
        Normalization::Ht => {
            let denom = n_included as f64;
            (sum_w1y / denom, sum_w0y / denom)
        }
        Normalization::Hajek => (sum_w1y / sum_w1, sum_w0y / sum_w0),
    };
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("mu1", mu1);
    diagnostics.set("mu0", mu0);
    diagnostics.set("sum_w1", sum_w1);
    diagnostics.set("sum_w0", sum_w0);
    diagnostics.set("max_weight", w.max_weight());
    diagnostics.set("n_excluded", w.n_excluded() as f64);
    FitResult { estimate: Some(mu1 - mu0), std_error: None, converged: true, n_used, diagnostics }
}

/// Logistic selection model on the family intercept α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub intercept: f64,
    pub slope: f64,
}

impl SelectionModel {
    pub fn prob(&self, alpha: f64) -> f64 {
        logistic(self.intercept + self.slope * alpha)
    }
}

/// A family together with its selection draw and the known probability that
/// produced it. Unselected families stay in the dataset; their observations
/// count in denominators but never carry weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub family: FamilyRecord,
    pub selected: bool,
    pub selection_prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionDataset {
    pub records: Vec<SelectionRecord>,
}

impl SelectionDataset {
    pub fn n_selected(&self) -> usize {
        self.records.iter().filter(|r| r.selected).count()
    }

    /// The selected families as a plain dataset.
    pub fn selected_dataset(&self) -> Dataset {
        Dataset::new(self.records.iter().filter(|r| r.selected).map(|r| r.family).collect())
    }
}

/// Draws selection indicators from the model, keeping the probabilities.
/// Requires latent state (the model acts on α).
pub fn simulate_selection(
    d: &Dataset,
    model: &SelectionModel,
    seed: u64,
) -> Result<SelectionDataset> {
    let alphas = d
        .latent_alpha()
        .ok_or_else(|| Error::Invalid("selection simulation requires latent state".into()))?;
    let records = d
        .records
        .iter()
        .zip(&alphas)
        .map(|(r, &alpha)| {
            let prob = model.prob(alpha);
            let mut rng = substream(seed, &[tags::SELECTION, r.family_id]);
            SelectionRecord { family: *r, selected: rng.gen::<f64>() < prob, selection_prob: prob }
        })
        .collect();
    Ok(SelectionDataset { records })
}

/// Horvitz-Thompson estimate of the counterfactual mean `E[Y(x1, x2)]` using
/// the product of inverse treatment and selection probabilities. Sibling-two
/// observations use the role-swapped arm, so both siblings contribute to the
/// same sibling-level estimand.
pub fn selection_weighted_mean(
    sd: &SelectionDataset,
    p: &DgpParams,
    arm: ExposurePair,
) -> FitResult {
    let n_obs = 2 * sd.records.len();
    if n_obs == 0 {
        return FitResult::missing(MissingReason::InsufficientData, 0);
    }
    let swapped = (arm.1, arm.0);
    let mut total = 0.0;
    let mut n_used = 0usize;
    let mut max_weight = 0.0f64;
    for rec in &sd.records {
        if !rec.selected {
            continue;
        }
        let Some(latent) = rec.family.latent else {
            return FitResult::missing(MissingReason::InsufficientData, n_used);
        };
        let r = &rec.family;
        // A sibling contributes when its own (exposure, cosibling exposure)
        // pair equals the requested arm; for sibling two that corresponds to
        // the role-swapped family event, whose probability is inverted.
        for (own_pair, y, family_event) in
            [((r.x1, r.x2), r.y1, arm), ((r.x2, r.x1), r.y2, swapped)]
        {
            if own_pair == arm {
                let prob =
                    treatment_probability(p, latent.alpha, family_event) * rec.selection_prob;
                if prob <= 1e-300 {
                    return FitResult::missing(MissingReason::ZeroInverseWeight, n_used);
                }
                let weight = 1.0 / prob;
                max_weight = max_weight.max(weight);
                total += weight * y;
                n_used += 1;
            }
        }
    }
    if n_used == 0 {
        return FitResult::missing(MissingReason::EmptyArm, 0);
    }
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("max_weight", max_weight);
    diagnostics.set("n_selected", sd.n_selected() as f64);
    FitResult {
        estimate: Some(total / n_obs as f64),
        std_error: None,
        converged: true,
        n_used,
        diagnostics,
    }
}

/// Contrast of two selection-weighted counterfactual means, by default the
/// family-level contrast (1,1) vs (0,0).
pub fn selection_weighted_contrast(
    sd: &SelectionDataset,
    p: &DgpParams,
    arm_a: ExposurePair,
    arm_b: ExposurePair,
) -> FitResult {
    let a = selection_weighted_mean(sd, p, arm_a);
    let b = selection_weighted_mean(sd, p, arm_b);
    match (a.estimate, b.estimate) {
        (Some(mu_a), Some(mu_b)) => {
            let mut diagnostics = Diagnostics::default();
            diagnostics.set("mu_a", mu_a);
            diagnostics.set("mu_b", mu_b);
            FitResult {
                estimate: Some(mu_a - mu_b),
                std_error: None,
                converged: true,
                n_used: a.n_used + b.n_used,
                diagnostics,
            }
        }
        _ => {
            let reason = a
                .diagnostics
                .missing_reason
                .or(b.diagnostics.missing_reason)
                .unwrap_or(MissingReason::EmptyArm);
            FitResult::missing(reason, a.n_used + b.n_used)
        }
    }
}

//! Confounded sibling-pair data generator, counterfactual oracles, and the
//! analytic causal targets of the generating model.
//!
//! Per family: a confounder `U ~ N(0, σ_U²)` drives the family intercept
//! `α = b_α·exp(b_Λ·U) + α̃` with `α̃ ~ N(0, τ²)`. The family exposure mean
//! `X̄ ∈ {0, 1/2, 1}` follows a three-point distribution whose discordance
//! probability is `Λ(b_X·α)`; discordant families assign the exposed role by
//! a Bernoulli(π_X) coin. Outcomes are
//! `Y_ij = μ + α + β^W·x_ij + β^D·x_ij·α + β^C·x_i(3−j) + ε_ij`.
//!
//! `β^D` makes the family intercept an effect modifier (breaks structural
//! additivity) and `β^C` is the cosibling interference effect (breaks
//! non-differential interference).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DgpParams, FamilyRecord, LatentState};
use crate::rng::{substream, tags};

/// The logistic function `Λ(x) = 1/(1 + e^(−x))`.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// An exposure assignment `(x1, x2)` for one family.
pub type ExposurePair = (u8, u8);

/// Analytic values of the causal targets under a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetValue {
    /// Total effect of exposure on one sibling, cosibling exposure as drawn.
    pub tau1: f64,
    /// Controlled direct effect with the cosibling held unexposed.
    pub tau2_at_0: f64,
    /// Controlled direct effect with the cosibling held exposed.
    pub tau2_at_1: f64,
    /// Family-level intervention effect, both siblings exposed vs neither.
    pub tau3: f64,
    /// Expected deviation from non-differential interference (`2·β^C`).
    pub ndi_deviation: f64,
    /// Whether structural additivity holds (`β^D = 0`).
    pub sa_holds: bool,
}

/// `E[α] = b_α·exp(b_Λ²·σ_U²/2)`, by the lognormal moment formula.
pub fn alpha_mean(p: &DgpParams) -> f64 {
    p.b_alpha * (p.b_lambda * p.b_lambda * p.sigma_u * p.sigma_u / 2.0).exp()
}

/// Evaluates the causal targets in closed form.
///
/// The cosibling terms cancel exactly in the τ1 contrast (exposure of the
/// sibling itself is the only term that changes), so τ1 coincides with τ2
/// under this generating model; [`monte_carlo_tau1`] checks this through the
/// observational exposure mechanism.
pub fn analytic_targets(p: &DgpParams) -> TargetValue {
    let shifted = p.beta_w + p.beta_d * alpha_mean(p);
    TargetValue {
        tau1: shifted,
        tau2_at_0: shifted,
        tau2_at_1: shifted,
        tau3: shifted + p.beta_c,
        ndi_deviation: 2.0 * p.beta_c,
        sa_holds: p.beta_d == 0.0,
    }
}

/// Counterfactual sibling-one outcome `Y₁(x1, x2)` given the family's latent
/// state and a realized error term.
pub fn counterfactual_outcome(
    latent: &LatentState,
    p: &DgpParams,
    x1: u8,
    x2: u8,
    eps: f64,
) -> f64 {
    let a = latent.alpha;
    p.mu + a + p.beta_w * f64::from(x1) + p.beta_d * f64::from(x1) * a + p.beta_c * f64::from(x2)
        + eps
}

fn draw_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

fn draw_latent(rng: &mut ChaCha8Rng, p: &DgpParams) -> LatentState {
    let u = draw_normal(rng, p.sigma_u);
    let alpha_tilde = draw_normal(rng, p.tau);
    let alpha = p.b_alpha * (p.b_lambda * u).exp() + alpha_tilde;
    LatentState { u, alpha, alpha_tilde }
}

/// Draws `X̄` from the three-point distribution with fixed category order
/// (0, 1/2, 1) and a single uniform against cumulative thresholds.
fn draw_xbar(rng: &mut ChaCha8Rng, p: &DgpParams, alpha: f64) -> f64 {
    let p_disc = logistic(p.b_x * alpha);
    let p_zero = (1.0 - p_disc) / 2.0;
    let u: f64 = rng.gen();
    if u < p_zero {
        0.0
    } else if u < p_zero + p_disc {
        0.5
    } else {
        1.0
    }
}

fn simulate_family(p: &DgpParams, seed: u64, family_id: u64) -> FamilyRecord {
    let mut rng = substream(seed, &[tags::FAMILY, family_id]);
    let latent = draw_latent(&mut rng, p);
    let xbar = draw_xbar(&mut rng, p, latent.alpha);
    let (x1, x2) = if xbar == 0.5 {
        let first_exposed = rng.gen::<f64>() < p.pi_x;
        if first_exposed {
            (1, 0)
        } else {
            (0, 1)
        }
    } else {
        let x = if xbar == 1.0 { 1 } else { 0 };
        (x, x)
    };
    let eps1 = draw_normal(&mut rng, p.sigma);
    let eps2 = draw_normal(&mut rng, p.sigma);
    let y1 = counterfactual_outcome(&latent, p, x1, x2, eps1);
    // Sibling two with the roles reversed; the model is symmetric in labels.
    let y2 = counterfactual_outcome(&latent, p, x2, x1, eps2);
    FamilyRecord { family_id, x1, x2, y1, y2, latent: Some(latent) }
}

/// Simulates a dataset of `p.n_families` sibling pairs.
///
/// Families use counter-based substreams keyed by `(seed, family index)`, so
/// family `i` draws the same values regardless of `n_families` or worker
/// scheduling, and identical `(params, seed)` give a bit-identical dataset.
pub fn simulate_dataset(p: &DgpParams, seed: u64) -> Dataset {
    let records: Vec<FamilyRecord> = (0..p.n_families as u64)
        .into_par_iter()
        .map(|i| simulate_family(p, seed, i))
        .collect();
    let mut d = Dataset::new(records);
    d.meta.insert("seed".into(), seed.to_string());
    d.meta.insert("n_families".into(), p.n_families.to_string());
    d.meta.insert("generator_version".into(), env!("CARGO_PKG_VERSION").into());
    d
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

fn mc_summary(values: &[f64]) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    McEstimate { value: mean, se: (var / n).sqrt() }
}

/// Monte Carlo oracle for a counterfactual contrast: the mean over `n` fresh
/// latent draws of `Y₁(a) − Y₁(b)`, sharing the error term within a draw.
pub fn monte_carlo_target(
    p: &DgpParams,
    contrast: (ExposurePair, ExposurePair),
    n: usize,
    seed: u64,
) -> McEstimate {
    let ((a1, a2), (b1, b2)) = contrast;
    let diffs: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[tags::MC_DRAW, i]);
            let latent = draw_latent(&mut rng, p);
            let eps = draw_normal(&mut rng, p.sigma);
            counterfactual_outcome(&latent, p, a1, a2, eps)
                - counterfactual_outcome(&latent, p, b1, b2, eps)
        })
        .collect();
    mc_summary(&diffs)
}

/// Monte Carlo oracle for a single counterfactual mean `E[Y₁(x1, x2)]`.
pub fn monte_carlo_mean(p: &DgpParams, arm: ExposurePair, n: usize, seed: u64) -> McEstimate {
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[tags::MC_DRAW, i]);
            let latent = draw_latent(&mut rng, p);
            let eps = draw_normal(&mut rng, p.sigma);
            counterfactual_outcome(&latent, p, arm.0, arm.1, eps)
        })
        .collect();
    mc_summary(&values)
}

/// Monte Carlo evaluation of τ1 under the observational exposure mechanism:
/// draws `(α, X̄, X₂)` from the generating model and averages
/// `Y₁(1, X₂) − Y₁(0, X₂)`.
pub fn monte_carlo_tau1(p: &DgpParams, n: usize, seed: u64) -> McEstimate {
    let diffs: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[tags::MC_DRAW, i]);
            let latent = draw_latent(&mut rng, p);
            let xbar = draw_xbar(&mut rng, p, latent.alpha);
            let x2 = if xbar == 0.5 {
                let first_exposed = rng.gen::<f64>() < p.pi_x;
                u8::from(!first_exposed)
            } else {
                u8::from(xbar == 1.0)
            };
            let eps = draw_normal(&mut rng, p.sigma);
            counterfactual_outcome(&latent, p, 1, x2, eps)
                - counterfactual_outcome(&latent, p, 0, x2, eps)
        })
        .collect();
    mc_summary(&diffs)
}

/// The four published simulation scenarios. They share every parameter
/// except `beta_d` (structural-additivity violation) and `beta_c`
/// (interference): scenario1 violates both, scenario2 only NDI, scenario3
/// only SA, scenario4 neither.
pub fn scenario_preset(name: &str) -> Option<DgpParams> {
    let base = DgpParams {
        n_families: 1000,
        b_lambda: 0.5,
        sigma_u: 2.0,
        b_alpha: 0.4,
        b_x: 0.2,
        pi_x: 0.5,
        tau: 2.0,
        mu: 10.0,
        beta_b: 2.0,
        beta_w: 5.0,
        beta_d: 0.0,
        beta_c: 0.0,
        sigma: 1.0,
    };
    match name {
        "scenario1" => Some(DgpParams { beta_d: -1.0, beta_c: 1.5, ..base }),
        "scenario2" => Some(DgpParams { beta_d: 0.0, beta_c: 1.5, ..base }),
        "scenario3" => Some(DgpParams { beta_d: -1.0, beta_c: 0.0, ..base }),
        "scenario4" => Some(base),
        _ => None,
    }
}

/// Names of the shipped scenario presets, in table order.
pub const SCENARIO_NAMES: [&str; 4] = ["scenario1", "scenario2", "scenario3", "scenario4"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{discordant_subset, validate_dataset};

    #[test]
    fn zero_noise_dataset_is_constant() {
        let p = DgpParams {
            n_families: 50,
            b_lambda: 0.3,
            sigma_u: 0.0,
            b_alpha: 0.4,
            b_x: 0.0,
            pi_x: 0.5,
            tau: 0.0,
            mu: 10.0,
            beta_b: 0.0,
            beta_w: 0.0,
            beta_d: 0.0,
            beta_c: 0.0,
            sigma: 0.0,
        };
        let d = simulate_dataset(&p, 3);
        assert!(validate_dataset(&d).is_valid());
        for r in &d.records {
            assert_eq!(r.y1, 10.4);
            assert_eq!(r.y2, 10.4);
            assert_eq!(r.latent.unwrap().alpha, 0.4);
        }
    }

    #[test]
    fn three_point_exposure_distribution_at_alpha_zero() {
        // alpha identically zero, so P(Xbar = 1/2) = logistic(0) = 1/2 and
        // the concordant categories get 1/4 each.
        let p = DgpParams {
            n_families: 40_000,
            b_lambda: 0.0,
            sigma_u: 1.0,
            b_alpha: 0.0,
            b_x: 0.2,
            pi_x: 0.5,
            tau: 0.0,
            mu: 0.0,
            beta_b: 0.0,
            beta_w: 0.0,
            beta_d: 0.0,
            beta_c: 0.0,
            sigma: 0.0,
        };
        let d = simulate_dataset(&p, 11);
        let n = d.len() as f64;
        let count = |f: &dyn Fn(&crate::FamilyRecord) -> bool| {
            d.records.iter().filter(|r| f(r)).count() as f64
        };
        let half = count(&|r| r.is_discordant()) / n;
        let zero = count(&|r| r.x1 == 0 && r.x2 == 0) / n;
        let one = count(&|r| r.x1 == 1 && r.x2 == 1) / n;
        // 5 binomial SDs
        let tol_half = 5.0 * (0.25_f64 / n).sqrt();
        let tol_quarter = 5.0 * (0.25 * 0.75 / n).sqrt();
        assert!((half - 0.5).abs() < tol_half, "P(discordant) = {half}");
        assert!((zero - 0.25).abs() < tol_quarter, "P(Xbar=0) = {zero}");
        assert!((one - 0.25).abs() < tol_quarter, "P(Xbar=1) = {one}");
    }

    #[test]
    fn discordant_fraction_half_when_exposure_unconfounded() {
        let mut p = scenario_preset("scenario4").unwrap();
        p.b_x = 0.0;
        p.n_families = 20_000;
        let d = simulate_dataset(&p, 5);
        let frac = discordant_subset(&d).len() as f64 / d.len() as f64;
        let tol = 3.0 * (0.25_f64 / d.len() as f64).sqrt();
        assert!((frac - 0.5).abs() < tol, "discordant fraction {frac}");
    }

    #[test]
    fn alpha_mean_matches_lognormal_moment_and_brute_force() {
        let p = scenario_preset("scenario4").unwrap();
        let closed = alpha_mean(&p);
        assert!((closed - 0.4 * 0.5_f64.exp()).abs() < 1e-15);

        // Brute-force Monte Carlo of the alpha equation, independent path.
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let u = draw_normal(&mut rng, p.sigma_u);
                let at = draw_normal(&mut rng, p.tau);
                p.b_alpha * (p.b_lambda * u).exp() + at
            })
            .collect();
        let oracle = mc_summary(&draws);
        assert!(
            (oracle.value - closed).abs() < 3.0 * oracle.se,
            "brute-force {} vs closed {closed}",
            oracle.value
        );

        // Simulator's stored alpha agrees with the moment.
        let mut big = p;
        big.n_families = 100_000;
        let d = simulate_dataset(&big, 7);
        let alphas: Vec<f64> = d.records.iter().map(|r| r.latent.unwrap().alpha).collect();
        let sim = mc_summary(&alphas);
        assert!(
            (sim.value - closed).abs() < 3.0 * sim.se,
            "simulated mean {} vs closed {closed}",
            sim.value
        );
    }

    #[test]
    fn counterfactual_outcome_arithmetic() {
        let p = DgpParams {
            beta_w: 0.0,
            beta_d: 0.0,
            beta_c: 0.0,
            mu: 10.0,
            ..scenario_preset("scenario4").unwrap()
        };
        let latent = LatentState { u: 0.0, alpha: 2.0, alpha_tilde: 0.0 };
        assert_eq!(counterfactual_outcome(&latent, &p, 1, 1, 0.0), 12.0);

        let p2 = DgpParams { beta_w: 5.0, beta_d: -1.0, beta_c: 1.5, mu: 0.0, ..p };
        let latent2 = LatentState { u: 0.0, alpha: 1.0, alpha_tilde: 0.0 };
        // mu + alpha + beta_w - beta_d-term = 0 + 1 + 5 - 1 = 5
        assert_eq!(counterfactual_outcome(&latent2, &p2, 1, 0, 0.0), 5.0);
        let diff = counterfactual_outcome(&latent2, &p2, 1, 0, 0.0)
            - counterfactual_outcome(&latent2, &p2, 0, 1, 0.0);
        assert!((diff - 2.5).abs() < 1e-12);
    }

    #[test]
    fn analytic_targets_match_table_values() {
        let t1 = analytic_targets(&scenario_preset("scenario1").unwrap());
        let t2 = analytic_targets(&scenario_preset("scenario2").unwrap());
        let t3 = analytic_targets(&scenario_preset("scenario3").unwrap());
        let t4 = analytic_targets(&scenario_preset("scenario4").unwrap());
        assert!((t1.tau3 - (6.5 - 0.4 * 0.5_f64.exp())).abs() < 1e-12);
        assert!((t1.tau3 - 5.8405).abs() < 1e-4);
        assert_eq!(t2.tau3, 6.5);
        assert!((t3.tau3 - 4.3405).abs() < 1e-4);
        assert_eq!(t4.tau3, 5.0);
        assert!(!t1.sa_holds && t2.sa_holds && !t3.sa_holds && t4.sa_holds);
        assert_eq!(t1.ndi_deviation, 3.0);
        assert_eq!(t4.ndi_deviation, 0.0);
    }

    #[test]
    fn tau3_equals_beta_w_when_both_assumptions_hold() {
        let p = scenario_preset("scenario4").unwrap();
        assert_eq!(analytic_targets(&p).tau3, p.beta_w);
    }

    #[test]
    fn eq25_identity_under_ndi() {
        let p = scenario_preset("scenario3").unwrap();
        let t = analytic_targets(&p);
        assert_eq!(t.tau3, (t.tau2_at_1 + t.tau2_at_0) / 2.0);
    }

    #[test]
    fn monte_carlo_agrees_with_analytic_tau3() {
        let p = scenario_preset("scenario1").unwrap();
        let mc = monte_carlo_target(&p, ((1, 1), (0, 0)), 200_000, 41);
        let t = analytic_targets(&p);
        assert!(
            (mc.value - t.tau3).abs() < 4.0 * mc.se,
            "mc {} vs analytic {}",
            mc.value,
            t.tau3
        );
    }

    #[test]
    fn discordant_and_family_contrasts_coincide_without_interference() {
        let p = scenario_preset("scenario3").unwrap();
        // With beta_c = 0 the two contrasts are pointwise identical draws.
        let a = monte_carlo_target(&p, ((1, 0), (0, 1)), 20_000, 17);
        let b = monte_carlo_target(&p, ((1, 1), (0, 0)), 20_000, 17);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn null_model_contrast_is_zero() {
        let mut p = scenario_preset("scenario4").unwrap();
        p.beta_w = 0.0;
        let mc = monte_carlo_target(&p, ((1, 0), (0, 0)), 10_000, 3);
        assert_eq!(mc.value, 0.0);
    }

    #[test]
    fn tau2_symmetric_and_tau1_matches_observational_monte_carlo() {
        let p = scenario_preset("scenario1").unwrap();
        let t = analytic_targets(&p);
        let at0 = monte_carlo_target(&p, ((1, 0), (0, 0)), 200_000, 29);
        let at1 = monte_carlo_target(&p, ((1, 1), (0, 1)), 200_000, 31);
        assert!((at0.value - t.tau2_at_0).abs() < 4.0 * at0.se);
        assert!((at1.value - t.tau2_at_1).abs() < 4.0 * at1.se);

        let tau1 = monte_carlo_tau1(&p, 200_000, 37);
        assert!(
            (tau1.value - t.tau1).abs() < 4.0 * tau1.se,
            "tau1 mc {} vs analytic {}",
            tau1.value,
            t.tau1
        );
    }

    #[test]
    fn sibling_symmetry_of_marginals() {
        let p = scenario_preset("scenario4").unwrap();
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        let mut y1 = Vec::new();
        let mut y2 = Vec::new();
        for seed in 0..40 {
            let d = simulate_dataset(&p, 1000 + seed);
            for r in &d.records {
                x1.push(f64::from(r.x1));
                x2.push(f64::from(r.x2));
                y1.push(r.y1);
                y2.push(r.y2);
            }
        }
        let m = |v: &[f64]| mc_summary(v);
        let (mx1, mx2, my1, my2) = (m(&x1), m(&x2), m(&y1), m(&y2));
        let tol_x = 4.0 * (mx1.se * mx1.se + mx2.se * mx2.se).sqrt();
        let tol_y = 4.0 * (my1.se * my1.se + my2.se * my2.se).sqrt();
        assert!((mx1.value - mx2.value).abs() < tol_x, "{} vs {}", mx1.value, mx2.value);
        assert!((my1.value - my2.value).abs() < tol_y, "{} vs {}", my1.value, my2.value);

        let var = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (v1, v2) = (var(&y1), var(&y2));
        assert!((v1 - v2).abs() / v1 < 0.05, "var {} vs {}", v1, v2);
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = scenario_preset("scenario2").unwrap();
        let a = simulate_dataset(&p, 123);
        let b = simulate_dataset(&p, 123);
        assert_eq!(a.records, b.records);
        let c = simulate_dataset(&p, 124);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn family_draws_independent_of_population_size() {
        let mut p = scenario_preset("scenario4").unwrap();
        p.n_families = 10;
        let small = simulate_dataset(&p, 55);
        p.n_families = 1000;
        let large = simulate_dataset(&p, 55);
        assert_eq!(small.records[..], large.records[..10]);
    }

    #[test]
    fn presets_cover_the_table() {
        for name in SCENARIO_NAMES {
            let p = scenario_preset(name).unwrap();
            assert_eq!(p.n_families, 1000);
            assert_eq!(p.beta_w, 5.0);
            assert_eq!(p.beta_b, 2.0);
        }
        assert!(scenario_preset("scenario5").is_none());
    }
}

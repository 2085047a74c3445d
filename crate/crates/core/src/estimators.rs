//! Within-family estimators: the matched (conditional OLS) estimator, the
//! random-intercept between-within model, and the logistic-regression
//! primitive used by the weight models.
//!
//! The between-within fit is restricted maximum likelihood with a 1-D
//! profiled search over the variance ratio ρ = ω²/(ω² + σ²), golden section
//! followed by a Newton polish. For balanced complete pairs the GLS fixed
//! effects do not depend on ρ, which is why the within effect coincides with
//! the conditional estimator; the fit nevertheless goes through the general
//! GLS normal equations so that the equivalence is a real numerical check,
//! not an identity of code paths.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Diagnostics, FitResult, MissingReason};
use crate::dgp::logistic;

const RHO_MAX: f64 = 1.0 - 1e-8;
const IRLS_MAX_ITER: usize = 100;
const IRLS_DEVIANCE_TOL: f64 = 1e-10;
const SEPARATION_BOUND: f64 = 30.0;

/// Conditional OLS estimate of the within-family effect: the no-intercept
/// slope of family-mean-centered outcomes on family-mean-centered exposures.
/// Equals the mean exposed-minus-unexposed difference over discordant pairs.
///
/// The standard error uses the homoscedastic OLS formula on the discordant
/// deviations with `n_discordant - 1` degrees of freedom, i.e. the classic
/// matched-pairs standard error.
pub fn conditional_ols(d: &Dataset) -> FitResult {
    let mut diffs = Vec::new();
    for r in &d.records {
        if r.is_discordant() {
            let sign = f64::from(r.x1) - f64::from(r.x2);
            diffs.push(sign * (r.y1 - r.y2));
        }
    }
    let n_disc = diffs.len();
    if n_disc == 0 {
        let mut res = FitResult::missing(MissingReason::InsufficientData, 0);
        res.diagnostics.set("n_discordant", 0.0);
        return res;
    }
    // Deviation-regression form: slope = sum(dev_y * dev_x) / sum(dev_x^2).
    // With pairs both sums halve, so this equals the pair-difference mean.
    let numer: f64 = diffs.iter().map(|v| v / 2.0).sum();
    let denom = n_disc as f64 / 2.0;
    let estimate = numer / denom;
    let std_error = if n_disc > 1 {
        let rss: f64 = diffs.iter().map(|v| (v - estimate) * (v - estimate)).sum();
        Some((rss / ((n_disc - 1) as f64 * n_disc as f64)).sqrt())
    } else {
        None
    };
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("n_discordant", n_disc as f64);
    FitResult { estimate: Some(estimate), std_error, converged: true, n_used: 2 * n_disc, diagnostics }
}

/// Fitted between-within random-intercept model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BwFit {
    pub mu_hat: f64,
    pub beta_b_hat: f64,
    pub beta_w_hat: f64,
    pub mu_se: f64,
    pub beta_b_se: f64,
    pub beta_w_se: f64,
    /// Family-intercept variance, truncated at the zero boundary.
    pub omega2_hat: f64,
    /// Residual variance.
    pub sigma2_hat: f64,
    /// Shrunken family mean residuals, one per family in dataset order.
    pub blups: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n_families: usize,
    pub n_discordant: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<MissingReason>,
}

impl BwFit {
    fn failed(reason: MissingReason, n_families: usize, n_discordant: usize) -> Self {
        BwFit {
            mu_hat: f64::NAN,
            beta_b_hat: f64::NAN,
            beta_w_hat: f64::NAN,
            mu_se: f64::NAN,
            beta_b_se: f64::NAN,
            beta_w_se: f64::NAN,
            omega2_hat: f64::NAN,
            sigma2_hat: f64::NAN,
            blups: Vec::new(),
            converged: false,
            iterations: 0,
            n_families,
            n_discordant,
            failure: Some(reason),
        }
    }

    /// The within effect as a [`FitResult`] for harness consumption.
    pub fn within_effect_result(&self) -> FitResult {
        if !self.converged {
            let mut res = FitResult::missing(
                self.failure.unwrap_or(MissingReason::Nonconvergence),
                2 * self.n_families,
            );
            res.converged = false;
            return res;
        }
        let mut diagnostics = Diagnostics::default();
        diagnostics.set("omega2_hat", self.omega2_hat);
        diagnostics.set("sigma2_hat", self.sigma2_hat);
        diagnostics.set("iterations", self.iterations as f64);
        diagnostics.set("n_discordant", self.n_discordant as f64);
        FitResult {
            estimate: Some(self.beta_w_hat),
            std_error: Some(self.beta_w_se),
            converged: true,
            n_used: 2 * self.n_families,
            diagnostics,
        }
    }
}

/// Per-family cross products that make every profiled-REML evaluation O(1).
/// Design row for sibling j: (1, xbar, x_j - xbar); family covariance
/// sigma^2 (I + lambda J) with J the 2x2 all-ones matrix.
struct SuffStats {
    g0: [[f64; 3]; 3],
    g1: [[f64; 3]; 3],
    h0: [f64; 3],
    h1: [f64; 3],
    q0: f64,
    q1: f64,
    n: usize,
}

impl SuffStats {
    fn from_dataset(d: &Dataset) -> Self {
        let mut ss = SuffStats {
            g0: [[0.0; 3]; 3],
            g1: [[0.0; 3]; 3],
            h0: [0.0; 3],
            h1: [0.0; 3],
            q0: 0.0,
            q1: 0.0,
            n: d.len(),
        };
        for r in &d.records {
            let xbar = r.xbar();
            let dev = f64::from(r.x1) - xbar;
            let rows = [[1.0, xbar, dev], [1.0, xbar, -dev]];
            let ys = [r.y1, r.y2];
            let row_sum = [2.0, 2.0 * xbar, 0.0];
            let y_sum = r.y1 + r.y2;
            for a in 0..3 {
                for b in 0..3 {
                    ss.g0[a][b] += rows[0][a] * rows[0][b] + rows[1][a] * rows[1][b];
                    ss.g1[a][b] += row_sum[a] * row_sum[b];
                }
                ss.h0[a] += rows[0][a] * ys[0] + rows[1][a] * ys[1];
                ss.h1[a] += row_sum[a] * y_sum;
            }
            ss.q0 += r.y1 * r.y1 + r.y2 * r.y2;
            ss.q1 += y_sum * y_sum;
        }
        ss
    }

    /// GLS solve at a given variance ratio lambda = omega^2 / sigma^2.
    /// Returns coefficients, covariance factor (A^-1), log|A|, and the GLS
    /// residual sum of squares in sigma^2 units.
    fn gls(&self, lambda: f64) -> Option<Gls> {
        let c = lambda / (1.0 + 2.0 * lambda);
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.g0[i][j] - c * self.g1[i][j];
            }
            b[i] = self.h0[i] - c * self.h1[i];
        }
        let (inv, logdet) = invert3(&a)?;
        let mut beta = [0.0; 3];
        for i in 0..3 {
            beta[i] = (0..3).map(|j| inv[i][j] * b[j]).sum();
        }
        let quad: f64 = (0..3).map(|i| b[i] * beta[i]).sum();
        let q = (self.q0 - c * self.q1 - quad).max(0.0);
        Some(Gls { beta, inv, logdet, q })
    }

    /// Minus twice the profiled restricted log-likelihood, up to a constant.
    fn neg2_reml(&self, rho: f64) -> f64 {
        let lambda = rho / (1.0 - rho);
        let df = (2 * self.n - 3) as f64;
        match self.gls(lambda) {
            Some(g) => {
                let q = g.q.max(1e-300);
                df * (q / df).ln() + self.n as f64 * (1.0 + 2.0 * lambda).ln() + g.logdet
            }
            None => f64::INFINITY,
        }
    }
}

struct Gls {
    beta: [f64; 3],
    inv: [[f64; 3]; 3],
    logdet: f64,
    q: f64,
}

/// 3x3 inverse with partial pivoting; `None` on (near-)singularity.
fn invert3(a: &[[f64; 3]; 3]) -> Option<([[f64; 3]; 3], f64)> {
    let mut m = *a;
    let mut inv = [[0.0; 3], [0.0; 3], [0.0; 3]];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let mut logdet = 0.0;
    for col in 0..3 {
        let pivot_row = (col..3).max_by(|&r, &s| {
            m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap()
        })?;
        if m[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let pivot = m[col][col];
        logdet += pivot.abs().ln();
        for j in 0..3 {
            m[col][j] /= pivot;
            inv[col][j] /= pivot;
        }
        for row in 0..3 {
            if row != col {
                let factor = m[row][col];
                for j in 0..3 {
                    m[row][j] -= factor * m[col][j];
                    inv[row][j] -= factor * inv[col][j];
                }
            }
        }
    }
    Some((inv, logdet))
}

struct Search {
    rho: f64,
    /// Objective values of accepted (best-so-far) iterates, non-increasing.
    /// Read by the monotonicity test.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
    iterations: usize,
}

/// Golden-section bracket on rho in [0, RHO_MAX], then a guarded Newton
/// polish with central-difference derivatives, tolerance 1e-10.
fn profile_search(ss: &SuffStats) -> Search {
    let golden = 0.618_033_988_749_894_9_f64;
    let (mut lo, mut hi) = (0.0, RHO_MAX);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let eval = |rho: f64, iterations: &mut usize| {
        *iterations += 1;
        ss.neg2_reml(rho)
    };

    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let mut f1 = eval(x1, &mut iterations);
    let mut f2 = eval(x2, &mut iterations);
    let mut best = (x1, f1);
    if f2 < f1 {
        best = (x2, f2);
    }
    trace.push(best.1);
    while hi - lo > 1e-8 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = eval(x1, &mut iterations);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = eval(x2, &mut iterations);
        }
        let (xc, fc) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if fc < best.1 {
            best = (xc, fc);
            trace.push(fc);
        }
    }
    // Also consider the boundaries; golden section cannot land exactly on 0.
    for boundary in [0.0, RHO_MAX] {
        let fb = eval(boundary, &mut iterations);
        if fb < best.1 {
            best = (boundary, fb);
            trace.push(fb);
        }
    }

    let mut rho = best.0;
    let mut f_cur = best.1;
    for _ in 0..25 {
        let h = 1e-6 * (rho.abs() + 1e-3);
        let (lo_p, hi_p) = ((rho - h).max(0.0), (rho + h).min(RHO_MAX));
        let (f_lo, f_hi) = (eval(lo_p, &mut iterations), eval(hi_p, &mut iterations));
        let span = hi_p - lo_p;
        if span <= 0.0 {
            break;
        }
        let d1 = (f_hi - f_lo) / span;
        let d2 = (f_hi - 2.0 * f_cur + f_lo) / (span / 2.0 * span / 2.0);
        if !d1.is_finite() || !d2.is_finite() || d2 <= 0.0 {
            break;
        }
        let step = -d1 / d2;
        let candidate = (rho + step).clamp(0.0, RHO_MAX);
        let f_new = eval(candidate, &mut iterations);
        if f_new <= f_cur {
            let moved = (candidate - rho).abs();
            rho = candidate;
            f_cur = f_new;
            trace.push(f_new);
            if moved < 1e-10 {
                break;
            }
        } else {
            break;
        }
    }
    // Snap to the boundary when the optimum is numerically at zero.
    if rho < 1e-9 && ss.neg2_reml(0.0) <= f_cur + 1e-9 {
        rho = 0.0;
    }
    Search { rho, trace, iterations }
}

/// Fits `Y_ij = mu + beta_b*xbar_i + beta_w*(x_ij - xbar_i) + a_i + e_ij`
/// with `a ~ N(0, omega^2)`, `e ~ N(0, sigma^2)` by REML.
///
/// Needs at least two families and one discordant family; a rank-deficient
/// between design (all families sharing one exposure mean) cannot separate
/// `mu` from `beta_b` and yields `converged = false`.
pub fn fit_bw_model(d: &Dataset) -> BwFit {
    let n = d.len();
    let n_discordant = d.records.iter().filter(|r| r.is_discordant()).count();
    if n < 2 || n_discordant == 0 {
        return BwFit::failed(MissingReason::InsufficientData, n, n_discordant);
    }
    let ss = SuffStats::from_dataset(d);
    let search = profile_search(&ss);
    let lambda = search.rho / (1.0 - search.rho);
    let Some(gls) = ss.gls(lambda) else {
        return BwFit::failed(MissingReason::Nonconvergence, n, n_discordant);
    };
    let df = (2 * n - 3) as f64;
    let sigma2_hat = gls.q / df;
    let omega2_hat = lambda * sigma2_hat;
    if !sigma2_hat.is_finite() || sigma2_hat < 0.0 {
        return BwFit::failed(MissingReason::Nonconvergence, n, n_discordant);
    }
    let [mu_hat, beta_b_hat, beta_w_hat] = gls.beta;
    let se = |k: usize| (sigma2_hat * gls.inv[k][k]).max(0.0).sqrt();

    let shrink = blup_shrinkage(omega2_hat, sigma2_hat);
    let blups = d
        .records
        .iter()
        .map(|r| {
            let mean_residual = (r.y1 + r.y2) / 2.0 - (mu_hat + beta_b_hat * r.xbar());
            shrink * mean_residual
        })
        .collect();

    BwFit {
        mu_hat,
        beta_b_hat,
        beta_w_hat,
        mu_se: se(0),
        beta_b_se: se(1),
        beta_w_se: se(2),
        omega2_hat,
        sigma2_hat,
        blups,
        converged: true,
        iterations: search.iterations,
        n_families: n,
        n_discordant,
        failure: None,
    }
}

fn blup_shrinkage(omega2: f64, sigma2: f64) -> f64 {
    if omega2 <= 0.0 {
        0.0
    } else if sigma2 <= 0.0 {
        1.0
    } else {
        omega2 / (omega2 + sigma2 / 2.0)
    }
}

/// Best linear unbiased predictor of a family intercept: the family's mean
/// fixed-part residual shrunk by `omega^2 / (omega^2 + sigma^2/2)` (cluster
/// size two).
pub fn blup(omega2: f64, sigma2: f64, mean_residual: f64) -> f64 {
    blup_shrinkage(omega2, sigma2) * mean_residual
}

/// Which published formula reconstructs the family intercept from the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaConvention {
    /// `alpha_hat = blup + beta_b_hat * xbar` (the simulation-recipe form).
    Appendix,
    /// `alpha_hat = blup + (beta_b_hat - beta_w_hat) * xbar` (the form implied
    /// by the between-within decomposition of the intercept).
    Maintext,
}

/// Per-family intercept estimates `alpha_hat`, in dataset order.
pub fn estimate_alpha(fit: &BwFit, d: &Dataset, convention: AlphaConvention) -> Vec<f64> {
    let slope = match convention {
        AlphaConvention::Appendix => fit.beta_b_hat,
        AlphaConvention::Maintext => fit.beta_b_hat - fit.beta_w_hat,
    };
    d.records
        .iter()
        .zip(&fit.blups)
        .map(|(r, blup)| blup + slope * r.xbar())
        .collect()
}

/// Intercept-and-slope logistic regression fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
}

impl LogisticFit {
    pub fn predict(&self, x: f64) -> f64 {
        logistic(self.intercept + self.slope * x)
    }

    fn failed(iterations: usize, deviance: f64) -> Self {
        LogisticFit { intercept: f64::NAN, slope: f64::NAN, converged: false, iterations, deviance }
    }
}

fn bernoulli_deviance(y: &[u8], p: &[f64]) -> f64 {
    -2.0 * y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            if yi == 1 {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum::<f64>()
}

/// Maximum-likelihood logistic regression of binary `responses` on a single
/// `covariate`, by iteratively reweighted least squares.
///
/// The covariate is centered internally for conditioning; returned
/// coefficients are on the original scale. Stops when the deviance changes
/// by less than 1e-10; declares separation (non-convergence) when any
/// coefficient magnitude exceeds 30 or the iteration cap of 100 is hit. A
/// constant covariate is centered out, leaving the closed-form
/// intercept-only fit.
pub fn logistic_irls(responses: &[u8], covariate: &[f64]) -> LogisticFit {
    let n = responses.len();
    if n < 2 || covariate.len() != n {
        return LogisticFit::failed(0, f64::NAN);
    }
    let k = responses.iter().filter(|&&y| y == 1).count();
    if k == 0 || k == n {
        return LogisticFit::failed(0, f64::NAN);
    }
    let x_mean = covariate.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = covariate.iter().map(|x| x - x_mean).collect();
    let x_scale = xc.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if x_scale < 1e-12 * (1.0 + x_mean.abs()) {
        // Constant covariate: intercept-only closed form logit(k/n).
        let p = k as f64 / n as f64;
        let deviance = -2.0 * (k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln());
        return LogisticFit {
            intercept: (p / (1.0 - p)).ln(),
            slope: 0.0,
            converged: true,
            iterations: 0,
            deviance,
        };
    }

    let mut b0 = 0.0f64;
    let mut b1 = 0.0f64;
    let mut deviance = f64::INFINITY;
    let mut probs = vec![0.0f64; n];
    for iteration in 1..=IRLS_MAX_ITER {
        for (pi, &x) in probs.iter_mut().zip(&xc) {
            *pi = logistic(b0 + b1 * x).clamp(1e-10, 1.0 - 1e-10);
        }
        let mut sw = 0.0;
        let mut swx = 0.0;
        let mut swxx = 0.0;
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            let resid = f64::from(responses[i]) - probs[i];
            sw += w;
            swx += w * xc[i];
            swxx += w * xc[i] * xc[i];
            g0 += resid;
            g1 += resid * xc[i];
        }
        let det = sw * swxx - swx * swx;
        if !det.is_finite() || det.abs() < 1e-12 * sw.max(1.0) {
            return LogisticFit::failed(iteration, deviance);
        }
        b0 += (swxx * g0 - swx * g1) / det;
        b1 += (sw * g1 - swx * g0) / det;
        if !b0.is_finite() || !b1.is_finite() {
            return LogisticFit::failed(iteration, deviance);
        }
        let intercept = b0 - b1 * x_mean;
        if intercept.abs() > SEPARATION_BOUND || b1.abs() > SEPARATION_BOUND {
            return LogisticFit::failed(iteration, deviance);
        }
        for (pi, &x) in probs.iter_mut().zip(&xc) {
            *pi = logistic(b0 + b1 * x).clamp(1e-10, 1.0 - 1e-10);
        }
        let new_deviance = bernoulli_deviance(responses, &probs);
        let done = (deviance - new_deviance).abs() < IRLS_DEVIANCE_TOL;
        deviance = new_deviance;
        if done {
            return LogisticFit {
                intercept: b0 - b1 * x_mean,
                slope: b1,
                converged: true,
                iterations: iteration,
                deviance,
            };
        }
    }
    LogisticFit::failed(IRLS_MAX_ITER, deviance)
}

/// Logistic fit with an arbitrary number of covariates, same conventions as
/// [`logistic_irls`] (centered covariates, deviance tolerance 1e-10, cap of
/// 100 iterations, separation when any coefficient magnitude exceeds 30).
/// Constant covariate columns are centered out and get a zero slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLogisticFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
}

impl MultiLogisticFit {
    /// Linear predictor probability at covariate values `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta =
            self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        logistic(eta)
    }

    fn failed(n_covariates: usize, iterations: usize, deviance: f64) -> Self {
        MultiLogisticFit {
            intercept: f64::NAN,
            slopes: vec![f64::NAN; n_covariates],
            converged: false,
            iterations,
            deviance,
        }
    }
}

/// Maximum-likelihood logistic regression on `covariates` (one slice per
/// covariate column) by Fisher scoring.
pub fn logistic_irls_multi(responses: &[u8], covariates: &[&[f64]]) -> MultiLogisticFit {
    let n = responses.len();
    let k_cov = covariates.len();
    if n < 2 || covariates.iter().any(|c| c.len() != n) {
        return MultiLogisticFit::failed(k_cov, 0, f64::NAN);
    }
    let successes = responses.iter().filter(|&&y| y == 1).count();
    if successes == 0 || successes == n {
        return MultiLogisticFit::failed(k_cov, 0, f64::NAN);
    }
    // Center every column; drop (slope 0) the ones with no variation.
    let means: Vec<f64> = covariates.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = covariates
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| v - m).collect())
        .collect();
    let active: Vec<usize> = (0..k_cov)
        .filter(|&j| {
            let scale = centered[j].iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            scale >= 1e-12 * (1.0 + means[j].abs())
        })
        .collect();
    let dim = active.len() + 1;

    let mut beta = vec![0.0f64; dim];
    let mut deviance = f64::INFINITY;
    let mut probs = vec![0.0f64; n];
    let eta_at = |beta: &[f64], i: usize| -> f64 {
        beta[0] + active.iter().zip(&beta[1..]).map(|(&j, b)| b * centered[j][i]).sum::<f64>()
    };
    for iteration in 1..=IRLS_MAX_ITER {
        for (i, p) in probs.iter_mut().enumerate() {
            *p = logistic(eta_at(&beta, i)).clamp(1e-10, 1.0 - 1e-10);
        }
        let mut info = vec![vec![0.0f64; dim]; dim];
        let mut grad = vec![0.0f64; dim];
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            let resid = f64::from(responses[i]) - probs[i];
            let mut row = Vec::with_capacity(dim);
            row.push(1.0);
            for &j in &active {
                row.push(centered[j][i]);
            }
            for a in 0..dim {
                grad[a] += resid * row[a];
                for b in 0..dim {
                    info[a][b] += w * row[a] * row[b];
                }
            }
        }
        let Some(step) = solve_dense(&mut info, &mut grad) else {
            return MultiLogisticFit::failed(k_cov, iteration, deviance);
        };
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return MultiLogisticFit::failed(k_cov, iteration, deviance);
        }
        let mut slopes = vec![0.0f64; k_cov];
        for (pos, &j) in active.iter().enumerate() {
            slopes[j] = beta[pos + 1];
        }
        let intercept =
            beta[0] - active.iter().zip(&beta[1..]).map(|(&j, b)| b * means[j]).sum::<f64>();
        if intercept.abs() > SEPARATION_BOUND || slopes.iter().any(|b| b.abs() > SEPARATION_BOUND)
        {
            return MultiLogisticFit::failed(k_cov, iteration, deviance);
        }
        for (i, p) in probs.iter_mut().enumerate() {
            *p = logistic(eta_at(&beta, i)).clamp(1e-10, 1.0 - 1e-10);
        }
        let new_deviance = bernoulli_deviance(responses, &probs);
        let done = (deviance - new_deviance).abs() < IRLS_DEVIANCE_TOL;
        deviance = new_deviance;
        if done {
            return MultiLogisticFit { intercept, slopes, converged: true, iterations: iteration, deviance };
        }
    }
    MultiLogisticFit::failed(k_cov, IRLS_MAX_ITER, deviance)
}

/// In-place Gaussian elimination with partial pivoting for small systems.
/// Rejects both collinear systems (relative pivot collapse) and flat ones
/// (absolute determinant collapse, the Fisher-information signature of a
/// saturated logistic fit).
#[allow(clippy::needless_range_loop)]
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let dim = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let mut det_abs = 1.0f64;
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        det_abs *= a[pivot_row][col].abs();
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..dim {
            let factor = a[row][col] / a[col][col];
            for j in col..dim {
                a[row][j] -= factor * a[col][j];
            }
            b[row] -= factor * b[col];
        }
    }
    if det_abs < 1e-12 {
        return None;
    }
    let mut x = vec![0.0f64; dim];
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for j in (col + 1)..dim {
            acc -= a[col][j] * x[j];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

//! Log-likelihoods, scores and maximum-likelihood fits for the two families.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::model::Family;
use crate::terms::{dot, DesignMatrix};

/// Coefficients are kept inside `[-COEF_BOUND, COEF_BOUND]` during IRLS.
pub const COEF_BOUND: f64 = 15.0;
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 50;
const RIDGE: f64 = 1e-8;

#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub(crate) fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_dims(beta: &[f64], design: &DesignMatrix, y: &[f64]) -> Result<()> {
    if beta.len() != design.cols() {
        return Err(Error::Dimension(format!("{} coefficients for {} columns", beta.len(), design.cols())));
    }
    if y.len() != design.rows() {
        return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), design.rows())));
    }
    Ok(())
}

/// `Σ yᵢ log pᵢ + (1 − yᵢ) log(1 − pᵢ)` with `pᵢ = expit(xᵢ·β)`.
pub fn loglik_bernoulli(beta: &[f64], design: &DesignMatrix, y: &[f64]) -> Result<f64> {
    check_dims(beta, design, y)?;
    Ok(bernoulli_unchecked(beta, design, y))
}

pub(crate) fn bernoulli_unchecked(beta: &[f64], design: &DesignMatrix, y: &[f64]) -> f64 {
    (0..design.rows())
        .map(|i| {
            let z = dot(design.row(i), beta);
            y[i] * z - log1pexp(z)
        })
        .sum()
}

pub fn loglik_gaussian(beta: &[f64], sigma: f64, design: &DesignMatrix, y: &[f64]) -> Result<f64> {
    check_dims(beta, design, y)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(gaussian_unchecked(beta, sigma, design, y))
}

pub(crate) fn gaussian_unchecked(beta: &[f64], sigma: f64, design: &DesignMatrix, y: &[f64]) -> f64 {
    let n = design.rows() as f64;
    let rss: f64 = (0..design.rows())
        .map(|i| {
            let r = y[i] - dot(design.row(i), beta);
            r * r
        })
        .sum();
    -0.5 * n * (2.0 * PI * sigma * sigma).ln() - rss / (2.0 * sigma * sigma)
}

/// `Xᵀ(y − p)`.
pub fn score_bernoulli(beta: &[f64], design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_dims(beta, design, y)?;
    let mut g = vec![0.0; beta.len()];
    for i in 0..design.rows() {
        let row = design.row(i);
        let r = y[i] - expit(dot(row, beta));
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    Ok(g)
}

/// Gradient with respect to `(β, σ)`; the last element is `∂/∂σ`.
pub fn score_gaussian(beta: &[f64], sigma: f64, design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_dims(beta, design, y)?;
    let s2 = sigma * sigma;
    let mut g = vec![0.0; beta.len() + 1];
    let mut rss = 0.0;
    for i in 0..design.rows() {
        let row = design.row(i);
        let r = y[i] - dot(row, beta);
        rss += r * r;
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj / s2;
        }
    }
    g[beta.len()] = -(design.rows() as f64) / sigma + rss / (s2 * sigma);
    Ok(g)
}

/// `Xᵀ diag(w) X` (row-major).
pub(crate) fn weighted_gram(design: &DesignMatrix, w: impl Fn(usize) -> f64) -> Vec<f64> {
    let p = design.cols();
    let mut h = vec![0.0; p * p];
    for i in 0..design.rows() {
        let wi = w(i);
        if wi == 0.0 {
            continue;
        }
        let row = design.row(i);
        for a in 0..p {
            let v = wi * row[a];
            for b in 0..=a {
                h[a * p + b] += v * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[b * p + a] = h[a * p + b];
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    /// Residual SD (maximum-likelihood, divisor n) for the Gaussian family.
    pub sigma: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Set when a coefficient hit the clamp bound (separation, constant
    /// outcome) or a Gaussian fit had zero residual variance.
    pub divergence_flag: bool,
    /// Log-likelihood after each iteration, starting from the initial point.
    pub trace: Vec<f64>,
}

pub fn fit_mle(design: &DesignMatrix, y: &[f64], family: Family) -> Result<FitResult> {
    if design.rows() == 0 {
        return Err(Error::Empty("model fit".into()));
    }
    if y.len() != design.rows() {
        return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), design.rows())));
    }
    match family {
        Family::BernoulliLogit => Ok(irls(design, y)),
        Family::GaussianIdentity => least_squares(design, y),
    }
}

fn irls(design: &DesignMatrix, y: &[f64]) -> FitResult {
    let p = design.cols();
    let mut beta = vec![0.0; p];
    let mut ll = bernoulli_unchecked(&beta, design, y);
    let mut trace = vec![ll];
    let mut diverged = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut score = vec![0.0; p];
    let mut probs = vec![0.0; design.rows()];

    while iterations < MAX_ITER {
        score.iter_mut().for_each(|s| *s = 0.0);
        for i in 0..design.rows() {
            let row = design.row(i);
            probs[i] = expit(dot(row, &beta));
            let r = y[i] - probs[i];
            for (s, x) in score.iter_mut().zip(row) {
                *s += r * x;
            }
        }
        if score.iter().all(|s| s.abs() < SCORE_TOL) {
            converged = true;
            break;
        }
        iterations += 1;
        let info = weighted_gram(design, |i| probs[i] * (1.0 - probs[i]));
        let Some(delta) = solve_spd(&info, &score, RIDGE) else {
            break;
        };

        // Step halving keeps the log-likelihood non-decreasing even when the
        // box clamp bends the Newton direction.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut clamped = false;
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, d)| {
                    let v = b + step * d;
                    if v.abs() > COEF_BOUND {
                        clamped = true;
                        v.clamp(-COEF_BOUND, COEF_BOUND)
                    } else {
                        v
                    }
                })
                .collect();
            let ll_c = bernoulli_unchecked(&cand, design, y);
            if ll_c >= ll - 1e-10 && ll_c.is_finite() {
                accepted = Some((cand, ll_c, clamped));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, ll_c, clamped)) = accepted else {
            break;
        };
        diverged |= clamped;
        let moved = cand.iter().zip(&beta).any(|(a, b)| a != b);
        let gain = ll_c - ll;
        beta = cand;
        ll = ll_c;
        trace.push(ll);
        // Against the bound the likelihood only creeps upward; stop once it stalls.
        if !moved || (diverged && gain < 1e-10 * (1.0 + ll.abs())) {
            break;
        }
    }
    if !converged && iterations == MAX_ITER {
        // Re-check the final score.
        let s = score_bernoulli(&beta, design, y).expect("dimensions checked");
        converged = s.iter().all(|v| v.abs() < SCORE_TOL);
    }
    diverged |= beta.iter().any(|b| b.abs() >= COEF_BOUND);
    FitResult {
        coefficients: beta,
        sigma: None,
        converged,
        iterations,
        log_likelihood: ll,
        divergence_flag: diverged,
        trace,
    }
}

fn least_squares(design: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    let p = design.cols();
    let gram = weighted_gram(design, |_| 1.0);
    let mut xty = vec![0.0; p];
    for i in 0..design.rows() {
        for (s, x) in xty.iter_mut().zip(design.row(i)) {
            *s += y[i] * x;
        }
    }
    let beta = solve_spd(&gram, &xty, 0.0)
        .or_else(|| solve_spd(&gram, &xty, RIDGE))
        .ok_or_else(|| Error::InvalidArgument("singular least-squares system".into()))?;
    let n = design.rows() as f64;
    let rss: f64 = (0..design.rows())
        .map(|i| {
            let r = y[i] - dot(design.row(i), &beta);
            r * r
        })
        .sum();
    let mut sigma = (rss / n).sqrt();
    let degenerate = !(sigma > 1e-12);
    if degenerate {
        sigma = 1e-12;
    }
    let ll = gaussian_unchecked(&beta, sigma, design, y);
    Ok(FitResult {
        coefficients: beta,
        sigma: Some(sigma),
        converged: true,
        iterations: 1,
        log_likelihood: ll,
        divergence_flag: degenerate,
        trace: vec![ll],
    })
}

//! Maximum-likelihood linear and logistic regression.
//!
//! Besides the coefficients, a [`GlmFit`] keeps everything the information
//! criteria need: per-observation log-likelihoods, the per-observation score
//! rows `G_i` and the observed information `Ĵ` (negated Hessian of the total
//! log-likelihood). For the gaussian family the dispersion is profiled out as
//! `σ̂² = RSS / N` and all derivatives are taken with respect to the mean
//! coefficients only.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize_from_upper, Cholesky, PIVOT_TOLERANCE};

/// Relative deviance change at which IRLS stops.
pub const IRLS_TOLERANCE: f64 = 1e-8;
/// Iteration cap for IRLS.
pub const IRLS_MAX_ITER: usize = 25;
/// Linear-predictor magnitude used by the separation heuristic.
pub const SEPARATION_ETA: f64 = 30.0;
/// Held-out probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

const MAX_STEP_HALVINGS: usize = 30;
/// Number of trailing iterations inspected by the separation heuristic.
const SEPARATION_WINDOW: usize = 3;
/// Minimum relative growth per iteration of the coefficient norm under separation.
const SEPARATION_GROWTH: f64 = 1e-3;

/// A fitted model together with its likelihood derivatives at `theta_hat`.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family: Family,
    /// Predictor indices in the order they enter the design (after the intercept).
    pub columns: Vec<usize>,
    /// Intercept first, then one coefficient per entry of `columns`.
    pub theta_hat: Array1<f64>,
    pub loglik: f64,
    pub loglik_per_obs: Array1<f64>,
    /// N×p matrix of per-observation score rows.
    pub scores: Array2<f64>,
    /// Observed information `Ĵ = -L''(θ̂)`, positive semi-definite.
    pub hessian: Array2<f64>,
    /// `σ̂²` for gaussian fits, 1 for binomial.
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance after each IRLS iteration (empty for gaussian fits).
    pub deviance_trace: Vec<f64>,
    cluster: Arc<Vec<usize>>,
    n_clusters: usize,
}

impl GlmFit {
    /// Number of fitted coefficients, intercept included.
    pub fn n_params(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn n_obs(&self) -> usize {
        self.loglik_per_obs.len()
    }

    /// Cluster index of each training row.
    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// In-sample deviance `-2 L(θ̂)`.
    pub fn deviance(&self) -> f64 {
        -2.0 * self.loglik
    }

    /// Evaluates log-likelihood, scores and information at an arbitrary
    /// coefficient vector. The result is marked unconverged unless it came
    /// from [`fit_glm`].
    pub fn evaluate_at(
        data: &Dataset,
        columns: &[usize],
        theta: Array1<f64>,
        dispersion: f64,
    ) -> Result<GlmFit> {
        let design = data.design(columns)?;
        if theta.len() != design.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} design columns",
                theta.len(),
                design.ncols()
            )));
        }
        let dispersion = match data.family() {
            Family::Gaussian => dispersion,
            Family::Binomial => 1.0,
        };
        Ok(assemble(data, &design, columns, theta, dispersion, false, 0, Vec::new()))
    }
}

/// Fits `y ~ 1 + x[:, columns]` by maximum likelihood.
pub fn fit_glm(data: &Dataset, columns: &[usize]) -> Result<GlmFit> {
    let design = data.design(columns)?;
    let n = data.n_obs();
    if n <= design.ncols() {
        return Err(Error::InvalidData(format!(
            "{n} observations cannot identify {} coefficients",
            design.ncols()
        )));
    }
    let y = data.y().as_slice().expect("response is contiguous");
    let est = estimate(data.family(), &design, y, Rows::All, None)?;
    Ok(assemble(
        data,
        &design,
        columns,
        est.theta,
        est.dispersion,
        est.converged,
        est.iterations,
        est.deviance_trace,
    ))
}

/// Per-observation score rows `G_i = ∂ log p(y_i | x_i, θ) / ∂θ` at the fit's coefficients.
pub fn score_matrix(fit: &GlmFit, data: &Dataset) -> Result<Array2<f64>> {
    let design = matched_design(fit, data)?;
    let mut scores = Array2::<f64>::zeros(design.raw_dim());
    for (i, (x, mut g)) in design.rows().into_iter().zip(scores.rows_mut()).enumerate() {
        let resid = working_residual(fit.family, data.y()[i], x.dot(&fit.theta_hat), fit.dispersion);
        g.assign(&(&x * resid));
    }
    Ok(scores)
}

/// Observed information `Ĵ = -Σ_i ∂² log p(y_i | x_i, θ) / ∂θ∂θᵀ`.
pub fn observed_information(fit: &GlmFit, data: &Dataset) -> Result<Array2<f64>> {
    let design = matched_design(fit, data)?;
    Ok(information(fit.family, &design, &fit.theta_hat, fit.dispersion))
}

/// Log-likelihood of each row of `newdata` under the fitted coefficients.
///
/// Binomial probabilities are clamped to `[1e-12, 1 - 1e-12]`; the gaussian
/// density uses the training `σ̂²`.
pub fn predict_loglik(fit: &GlmFit, newdata: &Dataset) -> Result<Array1<f64>> {
    let design = matched_design(fit, newdata)?;
    Ok(design
        .rows()
        .into_iter()
        .zip(newdata.y().iter())
        .map(|(x, &y)| heldout_loglik(fit.family, y, x.dot(&fit.theta_hat), fit.dispersion))
        .collect())
}

fn matched_design(fit: &GlmFit, data: &Dataset) -> Result<Array2<f64>> {
    if data.family() != fit.family {
        return Err(Error::DimensionMismatch(format!(
            "{} fit applied to {} data",
            fit.family,
            data.family()
        )));
    }
    let design = data.design(&fit.columns)?;
    if design.ncols() != fit.theta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients, data gives {} design columns",
            fit.theta_hat.len(),
            design.ncols()
        )));
    }
    Ok(design)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    data: &Dataset,
    design: &Array2<f64>,
    columns: &[usize],
    theta: Array1<f64>,
    dispersion: f64,
    converged: bool,
    iterations: usize,
    deviance_trace: Vec<f64>,
) -> GlmFit {
    let family = data.family();
    let y = data.y();
    let n = design.nrows();
    let mut loglik_per_obs = Array1::<f64>::zeros(n);
    let mut scores = Array2::<f64>::zeros(design.raw_dim());
    for (i, x) in design.rows().into_iter().enumerate() {
        let eta = x.dot(&theta);
        loglik_per_obs[i] = loglik(family, y[i], eta, dispersion);
        let resid = working_residual(family, y[i], eta, dispersion);
        scores.row_mut(i).assign(&(&x * resid));
    }
    let hessian = information(family, design, &theta, dispersion);
    GlmFit {
        family,
        columns: columns.to_vec(),
        theta_hat: theta,
        loglik: loglik_per_obs.iter().sum(),
        loglik_per_obs,
        scores,
        hessian,
        dispersion,
        converged,
        iterations,
        deviance_trace,
        cluster: data.cluster_arc(),
        n_clusters: data.n_clusters(),
    }
}

fn information(family: Family, design: &Array2<f64>, theta: &Array1<f64>, dispersion: f64) -> Array2<f64> {
    match family {
        Family::Gaussian => {
            let (mut xtx, _) = gaussian_cross(design, &[], Rows::All);
            xtx /= dispersion;
            xtx
        }
        Family::Binomial => binomial_pass(design, &[], theta, Rows::All, PassKind::Information).hessian,
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn loglik(family: Family, y: f64, eta: f64, dispersion: f64) -> f64 {
    match family {
        Family::Gaussian => gaussian_density_log(y, eta, dispersion),
        Family::Binomial => y * eta - softplus(eta),
    }
}

pub(crate) fn heldout_loglik(family: Family, y: f64, eta: f64, dispersion: f64) -> f64 {
    match family {
        Family::Gaussian => gaussian_density_log(y, eta, dispersion),
        Family::Binomial => {
            // Probability of the observed outcome, computed without cancellation.
            let p = if y == 1.0 { sigmoid(eta) } else { sigmoid(-eta) };
            p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
        }
    }
}

fn gaussian_density_log(y: f64, mu: f64, sigma2: f64) -> f64 {
    let r = y - mu;
    -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - r * r / (2.0 * sigma2)
}

/// Multiplier of `x_i` in the score row.
fn working_residual(family: Family, y: f64, eta: f64, dispersion: f64) -> f64 {
    match family {
        Family::Gaussian => (y - eta) / dispersion,
        Family::Binomial => y - sigmoid(eta),
    }
}

/// Row selection for the internal accumulation loops.
#[derive(Clone, Copy)]
pub(crate) enum Rows<'a> {
    All,
    /// Rows whose flag is `true`.
    Mask(&'a [bool]),
    /// Explicit row list, visited in the given order.
    List(&'a [usize]),
}

impl Rows<'_> {
    #[inline]
    fn for_each(self, n: usize, mut f: impl FnMut(usize)) {
        match self {
            Rows::All => (0..n).for_each(f),
            Rows::Mask(mask) => {
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        f(i)
                    }
                }
            }
            Rows::List(list) => list.iter().for_each(|&i| f(i)),
        }
    }

    pub(crate) fn count(self, n: usize) -> usize {
        match self {
            Rows::All => n,
            Rows::Mask(mask) => mask.iter().filter(|&&k| k).count(),
            Rows::List(list) => list.len(),
        }
    }
}

#[inline]
fn row(design: &Array2<f64>, i: usize) -> &[f64] {
    let p = design.ncols();
    &design.as_slice().expect("design matrices are built in standard layout")[i * p..(i + 1) * p]
}

#[inline]
fn add_outer_upper(acc: &mut [f64], x: &[f64], w: f64) {
    let p = x.len();
    for a in 0..p {
        let wa = w * x[a];
        if wa == 0.0 {
            continue;
        }
        let acc_row = &mut acc[a * p..(a + 1) * p];
        for b in a..p {
            acc_row[b] += wa * x[b];
        }
    }
}

fn finish_upper(acc: Vec<f64>, p: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_vec((p, p), acc).expect("p×p buffer");
    symmetrize_from_upper(&mut m);
    m
}

/// `(XᵀX, Xᵀy)` over the selected rows. `y` may be empty, in which case `Xᵀy` is zero.
pub(crate) fn gaussian_cross(design: &Array2<f64>, y: &[f64], rows: Rows) -> (Array2<f64>, Array1<f64>) {
    let p = design.ncols();
    let mut acc = vec![0.0; p * p];
    let mut xty = Array1::<f64>::zeros(p);
    rows.for_each(design.nrows(), |i| {
        let x = row(design, i);
        add_outer_upper(&mut acc, x, 1.0);
        if !y.is_empty() {
            for (t, &xv) in xty.iter_mut().zip(x) {
                *t += xv * y[i];
            }
        }
    });
    (finish_upper(acc, p), xty)
}

pub(crate) fn residual_sum_of_squares(design: &Array2<f64>, y: &[f64], theta: &Array1<f64>, rows: Rows) -> f64 {
    let theta = theta.as_slice().expect("contiguous coefficients");
    let mut rss = 0.0;
    rows.for_each(design.nrows(), |i| {
        let eta: f64 = row(design, i).iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = y[i] - eta;
        rss += r * r;
    });
    rss
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum PassKind {
    /// Deviance and gradient.
    Gradient,
    /// Deviance, gradient and `XᵀWX`.
    Full,
    /// Only `XᵀWX`.
    Information,
}

pub(crate) struct BinomialPass {
    pub deviance: f64,
    pub gradient: Array1<f64>,
    pub hessian: Array2<f64>,
    pub max_abs_eta: f64,
}

/// One sweep over the selected rows at `theta`.
pub(crate) fn binomial_pass(design: &Array2<f64>, y: &[f64], theta: &Array1<f64>, rows: Rows, kind: PassKind) -> BinomialPass {
    let p = design.ncols();
    let theta = theta.as_slice().expect("contiguous coefficients");
    let want_grad = kind != PassKind::Information;
    let want_hess = kind != PassKind::Gradient;
    let mut acc = if want_hess { vec![0.0; p * p] } else { Vec::new() };
    let mut grad = vec![0.0; p];
    let mut deviance = 0.0;
    let mut max_abs_eta: f64 = 0.0;
    rows.for_each(design.nrows(), |i| {
        let x = row(design, i);
        let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        max_abs_eta = max_abs_eta.max(eta.abs());
        let mu = sigmoid(eta);
        if want_grad {
            let yi = y[i];
            deviance -= 2.0 * (yi * eta - softplus(eta));
            let r = yi - mu;
            for (g, &xv) in grad.iter_mut().zip(x) {
                *g += r * xv;
            }
        }
        if want_hess {
            add_outer_upper(&mut acc, x, mu * (1.0 - mu));
        }
    });
    BinomialPass {
        deviance,
        gradient: Array1::from(grad),
        hessian: if want_hess { finish_upper(acc, p) } else { Array2::zeros((0, 0)) },
        max_abs_eta,
    }
}

pub(crate) struct Estimate {
    pub theta: Array1<f64>,
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    pub deviance_trace: Vec<f64>,
}

pub(crate) fn factor_information(a: &Array2<f64>) -> Result<Cholesky> {
    Cholesky::factor(a, PIVOT_TOLERANCE)
        .map_err(|e| Error::RankDeficient { column: e.pivot, ratio: e.ratio })
}

/// MLE over the selected rows of a prepared design.
pub(crate) fn estimate(
    family: Family,
    design: &Array2<f64>,
    y: &[f64],
    rows: Rows,
    start: Option<&Array1<f64>>,
) -> Result<Estimate> {
    match family {
        Family::Gaussian => {
            let (xtx, xty) = gaussian_cross(design, y, rows);
            let theta = factor_information(&xtx)?.solve_vec(xty.view());
            Ok(gaussian_estimate(design, y, rows, theta))
        }
        Family::Binomial => irls(design, y, rows, start),
    }
}

pub(crate) fn gaussian_estimate(design: &Array2<f64>, y: &[f64], rows: Rows, theta: Array1<f64>) -> Estimate {
    let n = rows.count(design.nrows()) as f64;
    let rss = residual_sum_of_squares(design, y, &theta, rows);
    // A perfect fit would give an infinite log-likelihood.
    let dispersion = (rss / n).max(f64::MIN_POSITIVE);
    Estimate { theta, dispersion, converged: true, iterations: 1, deviance_trace: Vec::new() }
}

fn initial_theta(design: &Array2<f64>, y: &[f64], rows: Rows) -> Array1<f64> {
    let mut sum = 0.0;
    rows.for_each(design.nrows(), |i| sum += y[i]);
    let ybar = (sum / rows.count(design.nrows()) as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut theta = Array1::<f64>::zeros(design.ncols());
    theta[0] = (ybar / (1.0 - ybar)).ln();
    theta
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / (new.abs() + 0.1)
}

/// Newton-Raphson (equivalently IRLS for the canonical logit link) with step
/// halving, so the deviance never increases between iterations.
fn irls(design: &Array2<f64>, y: &[f64], rows: Rows, start: Option<&Array1<f64>>) -> Result<Estimate> {
    let mut theta = match start {
        Some(t) => t.clone(),
        None => initial_theta(design, y, rows),
    };
    let mut pass = binomial_pass(design, y, &theta, rows, PassKind::Full);
    let mut trace = vec![pass.deviance];
    let mut eta_history = Vec::new();
    let mut norm_history = vec![l2(&theta)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let step = factor_information(&pass.hessian)?.solve_vec(pass.gradient.view());
        let mut scale = 1.0;
        let mut candidate;
        let mut next;
        let mut halvings = 0;
        loop {
            candidate = &theta + &(&step * scale);
            next = binomial_pass(design, y, &candidate, rows, PassKind::Full);
            if next.deviance.is_finite() && next.deviance <= pass.deviance {
                break;
            }
            halvings += 1;
            if halvings > MAX_STEP_HALVINGS {
                break;
            }
            scale *= 0.5;
        }
        if !(next.deviance <= pass.deviance) {
            // No descent left: the optimum is reached to machine precision.
            converged = pass.deviance.is_finite();
            break;
        }
        let change = relative_change(pass.deviance, next.deviance);
        theta = candidate;
        pass = next;
        trace.push(pass.deviance);
        eta_history.push(pass.max_abs_eta);
        norm_history.push(l2(&theta));
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence { iterations });
        }
        if change < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }

    let diverging = diverging(&eta_history, &norm_history);
    if !converged && diverging {
        return Err(Error::NonConvergence { iterations });
    }
    Ok(Estimate {
        theta,
        dispersion: 1.0,
        converged: converged && !diverging,
        iterations,
        deviance_trace: trace,
    })
}

/// Separation heuristic: the linear predictor stayed beyond `SEPARATION_ETA`
/// over the trailing window while the coefficient norm kept growing by a
/// non-vanishing fraction. Near a finite optimum Newton steps shrink
/// quadratically, so large but legitimate coefficients do not trip it.
fn diverging(eta_history: &[f64], norm_history: &[f64]) -> bool {
    if eta_history.len() < SEPARATION_WINDOW {
        return false;
    }
    let etas = &eta_history[eta_history.len() - SEPARATION_WINDOW..];
    let norms = &norm_history[norm_history.len() - SEPARATION_WINDOW - 1..];
    etas.iter().all(|&e| e > SEPARATION_ETA)
        && norms.windows(2).all(|w| w[1] > w[0] * (1.0 + SEPARATION_GROWTH))
}

fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

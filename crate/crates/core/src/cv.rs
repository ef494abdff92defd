//! Cluster-based cross-validated deviance.
//!
//! Folds are always unions of whole clusters. Each fold is scored by
//! `-2·Σ log p(y_i | x_i, θ̂_{-fold})` over its held-out rows.
//!
//! Fold fits reuse the full-data sweep: the training `XᵀX` (gaussian) or
//! `XᵀWX` at the full-data MLE (binomial) is the full-data matrix minus the
//! held-out fold's share. Binomial folds then iterate Newton steps with that
//! frozen information matrix from the full-data MLE, which converge to the
//! fold MLE quickly because the fold removes a small share of the data; if
//! they do not, the fold falls back to ordinary IRLS from the current point.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionName, CriterionValue};
use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::glm::{
    binomial_pass, estimate, factor_information, gaussian_cross, gaussian_estimate, heldout_loglik,
    BinomialPass, PassKind, Rows,
};

const FROZEN_NEWTON_MAX_STEPS: usize = 30;
/// Newton decrement `gᵀH⁻¹g` (deviance units, relative) below which a fold fit
/// is accepted. Much tighter than the IRLS deviance rule because the frozen
/// iteration converges linearly rather than quadratically.
const FROZEN_NEWTON_DECREMENT: f64 = 1e-13;
const MAX_STEP_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Sum of the deviances of the successful folds.
    pub total_deviance: f64,
    /// Held-out deviance of each fold; NaN for a failed fold.
    pub per_fold_deviance: Vec<f64>,
    /// Held-out deviance of each cluster; NaN for clusters of failed folds.
    pub per_cluster_deviance: Vec<f64>,
    /// Fold index of each cluster.
    pub fold_assignment: Vec<usize>,
    pub n_failed_folds: usize,
    pub failures: Vec<FoldFailure>,
    /// `-2L(θ̂)` of the full-data fit, when that fit succeeded.
    pub in_sample_deviance: Option<f64>,
}

impl CvResult {
    /// A result with any failed fold must not be used as a deviance estimate.
    pub fn is_valid(&self) -> bool {
        self.n_failed_folds == 0
    }

    pub fn k(&self) -> usize {
        self.per_fold_deviance.len()
    }

    /// The result as a criterion value. Its penalty is the optimism
    /// `total - in-sample deviance` (NaN if the full-data fit failed).
    pub fn to_criterion(&self, name: CriterionName) -> Result<CriterionValue> {
        if !self.is_valid() {
            let first = &self.failures[0];
            return Err(Error::InvalidData(format!(
                "{} of {} folds failed (fold {}: {})",
                self.n_failed_folds,
                self.k(),
                first.fold,
                first.reason
            )));
        }
        Ok(CriterionValue {
            name,
            value: self.total_deviance,
            penalty: self.in_sample_deviance.map_or(f64::NAN, |d| self.total_deviance - d),
            per_cluster_contrib: self.per_cluster_deviance.clone(),
        })
    }
}

/// Leave-one-cluster-out deviance: fold `j` holds out cluster `j`.
pub fn loo_cluster_deviance(data: &Dataset, columns: &[usize]) -> Result<CvResult> {
    let assignment: Vec<usize> = (0..data.n_clusters()).collect();
    cluster_cv(data, columns, assignment, data.n_clusters())
}

/// K-fold deviance over whole clusters, with clusters shuffled by `seed` and
/// dealt round-robin into `k` folds.
pub fn kfold_cluster_deviance(data: &Dataset, columns: &[usize], k: usize, seed: u64) -> Result<CvResult> {
    let assignment = kfold_assignment(data.n_clusters(), k, seed)?;
    cluster_cv(data, columns, assignment, k)
}

/// Fold index of each of `n_clusters` clusters.
pub fn kfold_assignment(n_clusters: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n_clusters {
        return Err(Error::KTooLarge { k, clusters: n_clusters });
    }
    if k < 2 {
        return Err(Error::InvalidData(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n_clusters];
    for (pos, &cluster) in order.iter().enumerate() {
        assignment[cluster] = pos % k;
    }
    Ok(assignment)
}

/// `√K · sd(contributions)`: the standard error of a sum of `K` independent
/// contributions.
pub fn criterion_se(contributions: &[f64]) -> Result<f64> {
    let k = contributions.len();
    if k < 2 {
        return Err(Error::TooFewFolds(k));
    }
    let kf = k as f64;
    let mean = contributions.iter().sum::<f64>() / kf;
    let ss: f64 = contributions.iter().map(|c| (c - mean) * (c - mean)).sum();
    Ok(kf.sqrt() * (ss / (kf - 1.0)).sqrt())
}

enum FullFit {
    Gaussian { xtx: Array2<f64>, xty: Array1<f64> },
    Binomial { theta: Array1<f64>, pass: BinomialPass },
    /// The full-data binomial fit failed; folds start from scratch.
    Cold,
}

fn cluster_cv(data: &Dataset, columns: &[usize], assignment: Vec<usize>, k: usize) -> Result<CvResult> {
    let design = data.design(columns)?;
    let y = data.y().as_slice().expect("contiguous response");
    let family = data.family();
    let n = data.n_obs();

    let mut held_rows = vec![Vec::new(); k];
    for (i, &c) in data.cluster().iter().enumerate() {
        held_rows[assignment[c]].push(i);
    }

    let (full, in_sample_deviance) = match family {
        Family::Gaussian => {
            let (xtx, xty) = gaussian_cross(&design, y, Rows::All);
            let in_sample = factor_information(&xtx).ok().map(|chol| {
                let est = gaussian_estimate(&design, y, Rows::All, chol.solve_vec(xty.view()));
                heldout_deviance(family, &design, y, &est.theta, est.dispersion, &(0..n).collect::<Vec<_>>())
            });
            (FullFit::Gaussian { xtx, xty }, in_sample)
        }
        Family::Binomial => match estimate(family, &design, y, Rows::All, None) {
            Ok(est) if est.converged => {
                let pass = binomial_pass(&design, y, &est.theta, Rows::All, PassKind::Full);
                let dev = pass.deviance;
                (FullFit::Binomial { theta: est.theta, pass }, Some(dev))
            }
            _ => (FullFit::Cold, None),
        },
    };

    let outcomes: Vec<Result<Vec<f64>>> = held_rows
        .par_iter()
        .map(|rows| fold_loglik(family, &design, y, &full, rows))
        .collect();

    let mut per_fold_deviance = vec![f64::NAN; k];
    let mut per_cluster_deviance = vec![f64::NAN; data.n_clusters()];
    let mut failures = Vec::new();
    let mut total = 0.0;
    for (fold, (outcome, rows)) in outcomes.into_iter().zip(&held_rows).enumerate() {
        match outcome {
            Ok(loglik) => {
                let mut fold_dev = 0.0;
                for (&i, &ll) in rows.iter().zip(&loglik) {
                    let c = data.cluster()[i];
                    if per_cluster_deviance[c].is_nan() {
                        per_cluster_deviance[c] = 0.0;
                    }
                    per_cluster_deviance[c] -= 2.0 * ll;
                    fold_dev -= 2.0 * ll;
                }
                per_fold_deviance[fold] = fold_dev;
                total += fold_dev;
            }
            Err(e) => failures.push(FoldFailure { fold, reason: e.to_string() }),
        }
    }

    Ok(CvResult {
        total_deviance: total,
        per_fold_deviance,
        per_cluster_deviance,
        fold_assignment: assignment,
        n_failed_folds: failures.len(),
        failures,
        in_sample_deviance,
    })
}

fn heldout_deviance(family: Family, design: &Array2<f64>, y: &[f64], theta: &Array1<f64>, dispersion: f64, rows: &[usize]) -> f64 {
    heldout_loglik_rows(family, design, y, theta, dispersion, rows).iter().map(|ll| -2.0 * ll).sum()
}

fn heldout_loglik_rows(
    family: Family,
    design: &Array2<f64>,
    y: &[f64],
    theta: &Array1<f64>,
    dispersion: f64,
    rows: &[usize],
) -> Vec<f64> {
    rows.iter()
        .map(|&i| heldout_loglik(family, y[i], design.row(i).dot(theta), dispersion))
        .collect()
}

/// Fits on every row outside `held` and returns the held-out log-likelihoods.
fn fold_loglik(family: Family, design: &Array2<f64>, y: &[f64], full: &FullFit, held: &[usize]) -> Result<Vec<f64>> {
    let n = design.nrows();
    let mut train = vec![true; n];
    for &i in held {
        train[i] = false;
    }
    let n_train = n - held.len();
    debug_assert!(held.iter().all(|&i| !train[i]));
    if n_train <= design.ncols() {
        return Err(Error::InvalidData(format!(
            "{n_train} training rows cannot identify {} coefficients",
            design.ncols()
        )));
    }
    let rows = Rows::Mask(&train);

    let (theta, dispersion) = match full {
        FullFit::Gaussian { xtx, xty } => {
            let (held_xtx, held_xty) = gaussian_cross(design, y, Rows::List(held));
            let chol = factor_information(&(xtx - &held_xtx))?;
            let theta = chol.solve_vec((xty - &held_xty).view());
            let est = gaussian_estimate(design, y, rows, theta);
            (est.theta, est.dispersion)
        }
        FullFit::Binomial { theta, pass } => (frozen_newton(design, y, &train, theta, pass, held)?, 1.0),
        FullFit::Cold => {
            let est = estimate(family, design, y, rows, None)?;
            if !est.converged {
                return Err(Error::NonConvergence { iterations: est.iterations });
            }
            (est.theta, est.dispersion)
        }
    };
    Ok(heldout_loglik_rows(family, design, y, &theta, dispersion, held))
}

fn frozen_newton(
    design: &Array2<f64>,
    y: &[f64],
    train: &[bool],
    start: &Array1<f64>,
    full: &BinomialPass,
    held: &[usize],
) -> Result<Array1<f64>> {
    let rows = Rows::Mask(train);
    let held_pass = binomial_pass(design, y, start, Rows::List(held), PassKind::Full);
    let chol = factor_information(&(&full.hessian - &held_pass.hessian))?;
    let mut theta = start.clone();
    let mut gradient = &full.gradient - &held_pass.gradient;
    let mut deviance = full.deviance - held_pass.deviance;

    for _ in 0..FROZEN_NEWTON_MAX_STEPS {
        let step = chol.solve_vec(gradient.view());
        if step.dot(&gradient) < FROZEN_NEWTON_DECREMENT * (deviance.abs() + 0.1) {
            return Ok(theta);
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = &theta + &(&step * scale);
            let pass = binomial_pass(design, y, &candidate, rows, PassKind::Gradient);
            if pass.deviance.is_finite() && pass.deviance <= deviance {
                accepted = Some((candidate, pass));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, pass)) = accepted else {
            // No further descent is possible at machine precision.
            return Ok(theta);
        };
        theta = candidate;
        deviance = pass.deviance;
        gradient = pass.gradient;
    }

    let est = estimate(Family::Binomial, design, y, rows, Some(&theta))?;
    if est.converged {
        Ok(est.theta)
    } else {
        Err(Error::NonConvergence { iterations: est.iterations })
    }
}

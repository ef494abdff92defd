//! Information criteria on the deviance scale: AIC, BIC, the unclustered
//! network information criterion (NIC) and its clustered estimator (NICc).
//!
//! NIC and NICc share the penalty `2·trace(Ĵ⁻¹K)`, differing only in how the
//! score covariance `K` is estimated: `K̂ = Σ_i G_iᵀG_i` sums outer products of
//! single observations, `K̂c = Σ_j (Σ_{i∈j} G_i)ᵀ(Σ_{i∈j} G_i)` sums outer
//! products of whole-cluster score totals. Positively correlated scores within
//! a cluster inflate the diagonal of `K̂c` relative to `K̂`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmFit;
use crate::linalg::trace_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionName {
    #[serde(rename = "AIC")]
    Aic,
    #[serde(rename = "BIC")]
    Bic,
    #[serde(rename = "NIC")]
    Nic,
    #[serde(rename = "NICc")]
    Nicc,
    #[serde(rename = "looDeviance")]
    LooDeviance,
    #[serde(rename = "cvDeviance")]
    CvDeviance,
}

impl CriterionName {
    pub const INFORMATION: [CriterionName; 4] =
        [CriterionName::Aic, CriterionName::Bic, CriterionName::Nic, CriterionName::Nicc];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionName::Aic => "AIC",
            CriterionName::Bic => "BIC",
            CriterionName::Nic => "NIC",
            CriterionName::Nicc => "NICc",
            CriterionName::LooDeviance => "looDeviance",
            CriterionName::CvDeviance => "cvDeviance",
        }
    }
}

impl fmt::Display for CriterionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(CriterionName::Aic),
            "bic" => Ok(CriterionName::Bic),
            "nic" => Ok(CriterionName::Nic),
            "nicc" => Ok(CriterionName::Nicc),
            "loodev" | "loodeviance" => Ok(CriterionName::LooDeviance),
            "cvdev" | "cvdeviance" => Ok(CriterionName::CvDeviance),
            other => Err(Error::Schema(format!("unknown criterion `{other}`"))),
        }
    }
}

/// A criterion on the deviance scale with its split over clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub name: CriterionName,
    pub value: f64,
    /// The additive term on top of `-2L`.
    pub penalty: f64,
    /// Cluster j's share: its own `-2·Σ loglik_i` plus `penalty·N_j/N`.
    pub per_cluster_contrib: Vec<f64>,
}

impl CriterionValue {
    /// Spreads `-2·loglik_i` over clusters and allocates the penalty in
    /// proportion to cluster size.
    pub fn from_loglik(
        name: CriterionName,
        loglik_per_obs: &[f64],
        cluster: &[usize],
        n_clusters: usize,
        penalty: f64,
    ) -> CriterionValue {
        let n = loglik_per_obs.len() as f64;
        let mut contrib = vec![0.0; n_clusters];
        let mut sizes = vec![0usize; n_clusters];
        for (&ll, &c) in loglik_per_obs.iter().zip(cluster) {
            contrib[c] -= 2.0 * ll;
            sizes[c] += 1;
        }
        for (c, &size) in contrib.iter_mut().zip(&sizes) {
            *c += penalty * size as f64 / n;
        }
        let deviance: f64 = -2.0 * loglik_per_obs.iter().sum::<f64>();
        CriterionValue { name, value: deviance + penalty, penalty, per_cluster_contrib: contrib }
    }
}

fn require_converged(fit: &GlmFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::UnconvergedFit)
    }
}

fn penalized(name: CriterionName, fit: &GlmFit, cluster: &[usize], n_clusters: usize, penalty: f64) -> CriterionValue {
    let ll = fit.loglik_per_obs.as_slice().expect("contiguous log-likelihoods");
    CriterionValue::from_loglik(name, ll, cluster, n_clusters, penalty)
}

/// `-2L(θ̂) + 2p`, with `p` counting the intercept.
pub fn aic(fit: &GlmFit) -> Result<CriterionValue> {
    require_converged(fit)?;
    let penalty = 2.0 * fit.n_params() as f64;
    Ok(penalized(CriterionName::Aic, fit, fit.cluster(), fit.n_clusters(), penalty))
}

/// `-2L(θ̂) + ln(N)·p` where `N` is the total number of observations.
pub fn bic(fit: &GlmFit, n_obs: usize) -> Result<CriterionValue> {
    require_converged(fit)?;
    let penalty = (n_obs as f64).ln() * fit.n_params() as f64;
    Ok(penalized(CriterionName::Bic, fit, fit.cluster(), fit.n_clusters(), penalty))
}

/// `K̂ = Σ_i G_iᵀ G_i` over the rows of the score matrix.
pub fn unclustered_k(scores: &Array2<f64>) -> Array2<f64> {
    scores.t().dot(scores)
}

/// `K̂c`: score rows are summed within each cluster before the outer product.
///
/// Labels may be any integers; clusters are visited in order of first appearance.
pub fn clustered_k(scores: &Array2<f64>, cluster_id: &[usize]) -> Result<Array2<f64>> {
    let (dense, m) = densify(cluster_id, scores.nrows())?;
    let p = scores.ncols();
    let mut totals = Array2::<f64>::zeros((m, p));
    for (g, &c) in scores.rows().into_iter().zip(&dense) {
        let mut t = totals.row_mut(c);
        t += &g;
    }
    Ok(totals.t().dot(&totals))
}

fn densify(cluster_id: &[usize], rows: usize) -> Result<(Vec<usize>, usize)> {
    if cluster_id.len() != rows {
        return Err(Error::LabelMismatch { labels: cluster_id.len(), rows });
    }
    let mut index = HashMap::new();
    let dense = cluster_id
        .iter()
        .map(|&c| {
            let next = index.len();
            *index.entry(c).or_insert(next)
        })
        .collect();
    Ok((dense, index.len()))
}

/// `2·trace(Ĵ⁻¹K)` via a Cholesky solve of `Ĵ Z = K`.
pub fn trace_penalty(information: &Array2<f64>, k: &Array2<f64>) -> Result<f64> {
    trace_solve(information, k)
        .map(|t| 2.0 * t)
        .map_err(|e| Error::SingularInformation { pivot: e.pivot, ratio: e.ratio })
}

/// `-2L(θ̂) + 2·trace(Ĵ⁻¹K̂)`.
pub fn nic(fit: &GlmFit) -> Result<CriterionValue> {
    require_converged(fit)?;
    let penalty = trace_penalty(&fit.hessian, &unclustered_k(&fit.scores))?;
    Ok(penalized(CriterionName::Nic, fit, fit.cluster(), fit.n_clusters(), penalty))
}

/// `-2L(θ̂) + 2·trace(Ĵ⁻¹K̂c)` with clusters given by `cluster_id`.
pub fn nicc(fit: &GlmFit, cluster_id: &[usize]) -> Result<CriterionValue> {
    require_converged(fit)?;
    let kc = clustered_k(&fit.scores, cluster_id)?;
    let penalty = trace_penalty(&fit.hessian, &kc)?;
    let (dense, m) = densify(cluster_id, fit.n_obs())?;
    Ok(penalized(CriterionName::Nicc, fit, &dense, m, penalty))
}

/// All four information criteria of one fit, in the order AIC, BIC, NIC, NICc.
pub fn information_criteria(fit: &GlmFit) -> Result<[CriterionValue; 4]> {
    Ok([aic(fit)?, bic(fit, fit.n_obs())?, nic(fit)?, nicc(fit, fit.cluster())?])
}

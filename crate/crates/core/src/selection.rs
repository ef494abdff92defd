//! Greedy forward stepwise selection under any criterion, with minimum and
//! one-standard-error model choices and agreement scores between choices.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{self, CriterionName, CriterionValue};
use crate::cv::{criterion_se, kfold_cluster_deviance, loo_cluster_deviance};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::fit_glm;

/// A criterion value and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: CriterionValue,
    /// NaN when fewer than two contributions are available.
    pub se: f64,
}

/// Anything that scores a model `y ~ 1 + x[:, columns]`; smaller is better.
pub trait Evaluator: Sync {
    fn name(&self) -> CriterionName;
    fn evaluate(&self, data: &Dataset, columns: &[usize]) -> Result<Evaluation>;
}

/// The built-in criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
    Nic,
    Nicc,
    LooDeviance,
    CvDeviance { k: usize, seed: u64 },
}

impl Criterion {
    pub fn from_name(name: CriterionName, k: usize, seed: u64) -> Criterion {
        match name {
            CriterionName::Aic => Criterion::Aic,
            CriterionName::Bic => Criterion::Bic,
            CriterionName::Nic => Criterion::Nic,
            CriterionName::Nicc => Criterion::Nicc,
            CriterionName::LooDeviance => Criterion::LooDeviance,
            CriterionName::CvDeviance => Criterion::CvDeviance { k, seed },
        }
    }
}

fn se_or_nan(contrib: &[f64]) -> f64 {
    criterion_se(contrib).unwrap_or(f64::NAN)
}

impl Evaluator for Criterion {
    fn name(&self) -> CriterionName {
        match self {
            Criterion::Aic => CriterionName::Aic,
            Criterion::Bic => CriterionName::Bic,
            Criterion::Nic => CriterionName::Nic,
            Criterion::Nicc => CriterionName::Nicc,
            Criterion::LooDeviance => CriterionName::LooDeviance,
            Criterion::CvDeviance { .. } => CriterionName::CvDeviance,
        }
    }

    fn evaluate(&self, data: &Dataset, columns: &[usize]) -> Result<Evaluation> {
        let (value, se) = match *self {
            Criterion::LooDeviance => {
                let cv = loo_cluster_deviance(data, columns)?;
                let value = cv.to_criterion(CriterionName::LooDeviance)?;
                let se = se_or_nan(&cv.per_fold_deviance);
                (value, se)
            }
            Criterion::CvDeviance { k, seed } => {
                let cv = kfold_cluster_deviance(data, columns, k, seed)?;
                let value = cv.to_criterion(CriterionName::CvDeviance)?;
                let se = se_or_nan(&cv.per_fold_deviance);
                (value, se)
            }
            ic => {
                let fit = fit_glm(data, columns)?;
                let value = match ic {
                    Criterion::Aic => criteria::aic(&fit)?,
                    Criterion::Bic => criteria::bic(&fit, data.n_obs())?,
                    Criterion::Nic => criteria::nic(&fit)?,
                    _ => criteria::nicc(&fit, data.cluster())?,
                };
                let se = se_or_nan(&value.per_cluster_contrib);
                (value, se)
            }
        };
        if !value.value.is_finite() {
            return Err(Error::InvalidData(format!("{} is not finite", value.name)));
        }
        Ok(Evaluation { value, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub added_variable: usize,
    /// Predictors in the order they were added.
    pub variable_set: Vec<usize>,
    pub criterion_value: f64,
    pub criterion_se: f64,
}

/// A candidate that could not be scored at some step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    /// 1-based step at which the candidate was tried.
    pub step: usize,
    pub variable: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub criterion: CriterionName,
    /// Every model carries an intercept.
    pub base_intercept: bool,
    pub steps: Vec<PathStep>,
    pub exclusions: Vec<Exclusion>,
    /// False if the path stopped because no candidate could be scored.
    pub complete: bool,
}

/// Forward selection over every predictor of `data`.
pub fn forward_path(data: &Dataset, criterion: &dyn Evaluator) -> Result<SelectionPath> {
    let candidates: Vec<usize> = (0..data.n_predictors()).collect();
    forward_path_over(data, criterion, &candidates)
}

/// Starting from the intercept-only model, repeatedly adds the candidate that
/// gives the smallest criterion value (lowest index on ties) until every
/// candidate is in, regardless of whether the criterion still improves.
pub fn forward_path_over(data: &Dataset, criterion: &dyn Evaluator, candidates: &[usize]) -> Result<SelectionPath> {
    if candidates.is_empty() {
        return Err(Error::InvalidData("forward selection needs at least one candidate".into()));
    }
    data.check_columns(candidates)?;
    let mut remaining: Vec<usize> = candidates.to_vec();
    remaining.sort_unstable();
    let mut current: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let mut exclusions = Vec::new();

    while !remaining.is_empty() {
        let step = steps.len() + 1;
        let scored: Vec<Result<Evaluation>> = remaining
            .par_iter()
            .map(|&c| {
                let mut cols = current.clone();
                cols.push(c);
                criterion.evaluate(data, &cols)
            })
            .collect();

        let mut best: Option<(usize, Evaluation)> = None;
        for (&variable, outcome) in remaining.iter().zip(scored) {
            match outcome {
                Ok(eval) => {
                    if best.as_ref().is_none_or(|(_, b)| eval.value.value < b.value.value) {
                        best = Some((variable, eval));
                    }
                }
                Err(e) => exclusions.push(Exclusion { step, variable, reason: e.to_string() }),
            }
        }
        let Some((variable, eval)) = best else {
            return Ok(SelectionPath {
                criterion: criterion.name(),
                base_intercept: true,
                steps,
                exclusions,
                complete: false,
            });
        };
        current.push(variable);
        remaining.retain(|&c| c != variable);
        steps.push(PathStep {
            added_variable: variable,
            variable_set: current.clone(),
            criterion_value: eval.value.value,
            criterion_se: eval.se,
        });
    }

    Ok(SelectionPath { criterion: criterion.name(), base_intercept: true, steps, exclusions, complete: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "min")]
    Min,
    #[serde(rename = "1se")]
    OneSe,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Min => "min",
            Rule::OneSe => "1se",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Rule::Min),
            "1se" | "one_se" | "onese" => Ok(Rule::OneSe),
            other => Err(Error::Schema(format!("unknown rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub rule: Rule,
    /// Number of predictors, intercept excluded.
    pub size: usize,
    /// Chosen predictors, ascending.
    pub variable_set: Vec<usize>,
}

fn choice_at(path: &SelectionPath, rule: Rule, size: usize) -> ModelChoice {
    let mut variable_set = if size == 0 { Vec::new() } else { path.steps[size - 1].variable_set.clone() };
    variable_set.sort_unstable();
    ModelChoice { rule, size, variable_set }
}

fn argmin(path: &SelectionPath) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (t, step) in path.steps.iter().enumerate() {
        if best.is_none_or(|b| step.criterion_value < path.steps[b].criterion_value) {
            best = Some(t);
        }
    }
    best
}

/// The smallest model attaining the minimum criterion value. An empty path
/// yields the intercept-only model.
pub fn select_min(path: &SelectionPath) -> ModelChoice {
    match argmin(path) {
        Some(t) => choice_at(path, Rule::Min, t + 1),
        None => choice_at(path, Rule::Min, 0),
    }
}

/// The smallest model whose value is within one standard error (taken at the
/// minimum) of the minimum value.
pub fn select_1se(path: &SelectionPath) -> Result<ModelChoice> {
    let Some(t_min) = argmin(path) else {
        return Ok(choice_at(path, Rule::OneSe, 0));
    };
    let min = &path.steps[t_min];
    if !min.criterion_se.is_finite() {
        return Err(Error::MissingSe);
    }
    let bound = min.criterion_value + min.criterion_se;
    let t = path.steps[..=t_min]
        .iter()
        .position(|s| s.criterion_value <= bound)
        .unwrap_or(t_min);
    Ok(choice_at(path, Rule::OneSe, t + 1))
}

pub fn select(path: &SelectionPath, rule: Rule) -> Result<ModelChoice> {
    match rule {
        Rule::Min => Ok(select_min(path)),
        Rule::OneSe => select_1se(path),
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 for two empty sets.
pub fn jaccard_index(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Signed size difference `choice - baseline`.
pub fn model_size_error(choice: &ModelChoice, baseline: &ModelChoice) -> i64 {
    choice.size as i64 - baseline.size as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Family;
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn path_of(values: &[f64], ses: &[f64]) -> SelectionPath {
        let steps = values
            .iter()
            .zip(ses)
            .enumerate()
            .map(|(t, (&v, &s))| PathStep {
                added_variable: t,
                variable_set: (0..=t).collect(),
                criterion_value: v,
                criterion_se: s,
            })
            .collect();
        SelectionPath { criterion: CriterionName::Aic, base_intercept: true, steps, exclusions: vec![], complete: true }
    }

    fn noiseless(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((60, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(60, |i| 1.0 + 2.5 * x[[i, 3]]);
        let cluster: Vec<usize> = (0..60).map(|i| i / 6).collect();
        Dataset::new(x, y, &cluster, Family::Gaussian).unwrap()
    }

    #[test]
    fn min_rule_cases() {
        assert_eq!(select_min(&path_of(&[5.0, 4.0, 3.0], &[0.0; 3])).size, 3);
        assert_eq!(select_min(&path_of(&[10.0, 8.0, 9.0, 8.0], &[0.0; 4])).size, 2);
    }

    #[test]
    fn one_se_rule_cases() {
        let p = path_of(&[10.0, 8.5, 8.0], &[0.0, 0.0, 1.0]);
        assert_eq!(select_1se(&p).unwrap().size, 2);
        let p = path_of(&[10.0, 8.5, 8.0, 9.0], &[0.0; 4]);
        assert_eq!(select_1se(&p).unwrap(), ModelChoice { rule: Rule::OneSe, ..select_min(&p) });
        let p = path_of(&[10.0, 8.0], &[f64::NAN, f64::NAN]);
        assert!(matches!(select_1se(&p), Err(Error::MissingSe)));
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_index(&[1, 2, 3], &[3, 2, 1]), 1.0);
        assert_eq!(jaccard_index(&[1], &[2]), 0.0);
        assert_eq!(jaccard_index(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard_index(&[], &[]), 1.0);
    }

    #[test]
    fn size_error_cases() {
        let a = ModelChoice { rule: Rule::Min, size: 7, variable_set: vec![] };
        let b = ModelChoice { rule: Rule::Min, size: 5, variable_set: vec![] };
        assert_eq!(model_size_error(&a, &b), 2);
        assert_eq!(model_size_error(&b, &b), 0);
    }

    #[test]
    fn single_predictor_path() {
        let d = noiseless(1);
        for c in [Criterion::Aic, Criterion::Nicc, Criterion::LooDeviance] {
            let path = forward_path_over(&d, &c, &[2]).unwrap();
            assert_eq!(path.steps.len(), 1);
        }
    }

    #[test]
    fn noiseless_signal_enters_first() {
        let d = noiseless(2);
        for c in [Criterion::Aic, Criterion::Bic, Criterion::Nic, Criterion::Nicc, Criterion::LooDeviance] {
            let path = forward_path(&d, &c).unwrap();
            assert_eq!(path.steps[0].added_variable, 3, "{:?}", c);
        }
    }

    #[test]
    fn path_values_match_fresh_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((80, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(80, |i| x[[i, 0]] - 0.5 * x[[i, 2]] + rng.sample::<f64, _>(StandardNormal));
        let cluster: Vec<usize> = (0..80).map(|i| i / 8).collect();
        let d = Dataset::new(x, y, &cluster, Family::Gaussian).unwrap();
        for c in [Criterion::Nicc, Criterion::CvDeviance { k: 5, seed: 4 }] {
            let path = forward_path(&d, &c).unwrap();
            assert!(path.complete);
            for (t, step) in path.steps.iter().enumerate() {
                assert_eq!(step.variable_set.len(), t + 1);
                assert_eq!(step.variable_set.last(), Some(&step.added_variable));
                if t > 0 {
                    assert_eq!(step.variable_set[..t], path.steps[t - 1].variable_set[..]);
                }
                let fresh = c.evaluate(&d, &step.variable_set).unwrap();
                assert!((fresh.value.value - step.criterion_value).abs() <= 1e-10 * fresh.value.value.abs());
            }
            assert_eq!(forward_path(&d, &c).unwrap(), path);
        }
    }

    #[test]
    fn failing_candidates_are_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Array2::from_shape_fn((40, 3), |_| rng.sample::<f64, _>(StandardNormal));
        x.column_mut(1).fill(2.0);
        let y = Array1::from_shape_fn(40, |i| x[[i, 0]] + rng.sample::<f64, _>(StandardNormal));
        let cluster: Vec<usize> = (0..40).map(|i| i / 4).collect();
        let d = Dataset::new(x, y, &cluster, Family::Gaussian).unwrap();
        let path = forward_path(&d, &Criterion::Aic).unwrap();
        assert!(!path.complete);
        assert_eq!(path.steps.len(), 2);
        assert!(path.exclusions.iter().all(|e| e.variable == 1));
        assert_eq!(path.exclusions.len(), 3);
    }

    proptest! {
        #[test]
        fn one_se_never_exceeds_min(values in proptest::collection::vec(0.0f64..100.0, 1..12), se in 0.0f64..20.0) {
            let ses = vec![se; values.len()];
            let p = path_of(&values, &ses);
            prop_assert!(select_1se(&p).unwrap().size <= select_min(&p).size);
        }

        #[test]
        fn jaccard_symmetric_and_one_iff_equal(
            a in proptest::collection::btree_set(0usize..8, 0..6),
            b in proptest::collection::btree_set(0usize..8, 0..6),
        ) {
            let a: Vec<usize> = a.into_iter().collect();
            let b: Vec<usize> = b.into_iter().collect();
            let j = jaccard_index(&a, &b);
            prop_assert_eq!(j, jaccard_index(&b, &a));
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j == 1.0, a == b);
        }
    }
}

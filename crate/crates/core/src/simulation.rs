//! Clustered data from a generalized linear mixed model.
//!
//! Every predictor has a fixed effect `β(k) ~ N(0, σ_β)`. The last
//! `S = round(random_frac·p)` predictors also carry a cluster-specific random
//! slope `b_i(s) ~ N(0, r_b·σ_β)` and follow, within each cluster, an AR1
//! process `z_1 = ε_1`, `z_t = φ_i(s)·z_{t-1} + ε_t` with `ε ~ N(0, ω²)` and
//! `φ_i(s) ~ U[φ, φ + 0.2)`. The remaining predictors are iid `N(0, 1)`.
//! The linear predictor `η = Xβ + Zb_i` feeds either a gaussian response with
//! standard deviation `gaussian_sd` or a Bernoulli response with logit link.
//!
//! Each (cluster, column) pair draws from its own seeded stream, so changing
//! the number of clusters or predictors leaves the other draws untouched.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::glm::sigmoid;

pub const CLUSTER_SIZES: [usize; 5] = [5, 10, 50, 100, 150];
pub const PREDICTOR_COUNTS: [usize; 6] = [5, 6, 7, 8, 9, 10];
pub const RANDOM_EFFECT_RATIOS: [f64; 3] = [0.5, 1.0, 10.0];
pub const AR1_LEVELS: [f64; 3] = [0.0, 0.4, 0.8];
/// Levels held fixed while another factor is swept.
pub const MEDIAN_CLUSTER_SIZE: usize = 50;
pub const MEDIAN_RANDOM_EFFECT_RATIO: f64 = 5.0;
pub const MEDIAN_AR1_LEVEL: f64 = 0.4;
/// Polynomial degree used to build overfitting candidates in the selection cell.
pub const SELECTION_POLY_DEGREE: usize = 5;

const AR1_WIDTH: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub family: Family,
    /// Number of clusters `M`.
    pub clusters: usize,
    /// Observations per cluster `N_i`.
    pub cluster_size: usize,
    /// Total predictors `p`.
    pub p: usize,
    /// Ratio of random-effect SD to fixed-effect SD.
    pub r_b: f64,
    /// Lower end of the AR1 coefficient range.
    pub phi: f64,
    pub sigma_beta: f64,
    pub omega: f64,
    pub gaussian_sd: f64,
    pub random_frac: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            family: Family::Gaussian,
            clusters: 50,
            cluster_size: MEDIAN_CLUSTER_SIZE,
            p: 5,
            r_b: MEDIAN_RANDOM_EFFECT_RATIO,
            phi: MEDIAN_AR1_LEVEL,
            sigma_beta: 5.0,
            omega: 1.0,
            gaussian_sd: 2.0,
            random_frac: 0.8,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// The strong-clustering cell used for model selection.
    pub fn selection_cell(family: Family) -> SimConfig {
        SimConfig { family, cluster_size: 150, p: 5, r_b: 10.0, phi: 0.8, ..SimConfig::default() }
    }

    /// Number of random-effect predictors, `round(random_frac·p)` with halves rounded up.
    pub fn n_random(&self) -> usize {
        (self.random_frac * self.p as f64 + 0.5).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.clusters == 0 || self.cluster_size == 0 || self.p == 0 {
            return fail(format!(
                "clusters ({}), cluster_size ({}) and p ({}) must be positive",
                self.clusters, self.cluster_size, self.p
            ));
        }
        if !(0.0..=0.8).contains(&self.phi) {
            return fail(format!("phi = {} outside [0, 0.8]", self.phi));
        }
        if !(self.r_b > 0.0 && self.r_b.is_finite()) {
            return fail(format!("r_b = {} must be positive", self.r_b));
        }
        if !(0.0..=1.0).contains(&self.random_frac) {
            return fail(format!("random_frac = {} outside [0, 1]", self.random_frac));
        }
        for (name, v) in [("sigma_beta", self.sigma_beta), ("omega", self.omega), ("gaussian_sd", self.gaussian_sd)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        Ok(())
    }
}

/// The draws behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub beta: Vec<f64>,
    /// M×S random slopes.
    pub b: Array2<f64>,
    /// M×S AR1 coefficients.
    pub phi_draws: Array2<f64>,
    /// Predictor indices with random effects (the last S).
    pub random_set: Vec<usize>,
}

/// Mixes a sequence of integers into one seed (SplitMix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &part in parts {
        h ^= part.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix64(h);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of a string, for seeding from cell identifiers.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

const STREAM_BETA: u64 = 1;
const STREAM_COLUMN: u64 = 2;
const STREAM_RESPONSE: u64 = 3;

fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Draws one dataset and the effects that generated it.
pub fn generate(config: &SimConfig) -> Result<(Dataset, SimTruth)> {
    config.validate()?;
    let m = config.clusters;
    let size = config.cluster_size;
    let p = config.p;
    let s = config.n_random();
    let first_random = p - s;
    let n = m * size;
    let seed = config.seed;

    let beta_dist = Normal::new(0.0, config.sigma_beta).expect("positive sd");
    let b_dist = Normal::new(0.0, config.r_b * config.sigma_beta).expect("positive sd");
    let eps = Normal::new(0.0, config.omega).expect("positive sd");
    let phi_dist = Uniform::new(config.phi, config.phi + AR1_WIDTH).expect("non-empty range");

    let beta: Vec<f64> = (0..p).map(|k| beta_dist.sample(&mut stream(&[seed, STREAM_BETA, k as u64]))).collect();

    let mut x = Array2::<f64>::zeros((n, p));
    let mut b = Array2::<f64>::zeros((m, s));
    let mut phi_draws = Array2::<f64>::zeros((m, s));
    for i in 0..m {
        for k in 0..p {
            let mut rng = stream(&[seed, STREAM_COLUMN, i as u64, k as u64]);
            if k >= first_random {
                let phi_i = phi_dist.sample(&mut rng);
                phi_draws[[i, k - first_random]] = phi_i;
                b[[i, k - first_random]] = b_dist.sample(&mut rng);
                let mut z = 0.0;
                for t in 0..size {
                    z = if t == 0 { eps.sample(&mut rng) } else { phi_i * z + eps.sample(&mut rng) };
                    x[[i * size + t, k]] = z;
                }
            } else {
                for t in 0..size {
                    x[[i * size + t, k]] = rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
        }
    }

    let noise = Normal::new(0.0, config.gaussian_sd).expect("positive sd");
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..m {
        let mut rng = stream(&[seed, STREAM_RESPONSE, i as u64]);
        for t in 0..size {
            let row = i * size + t;
            let mut eta: f64 = (0..p).map(|k| x[[row, k]] * beta[k]).sum();
            for r in 0..s {
                eta += x[[row, first_random + r]] * b[[i, r]];
            }
            y[row] = match config.family {
                Family::Gaussian => eta + noise.sample(&mut rng),
                Family::Binomial => f64::from(rng.random::<f64>() < sigmoid(eta)),
            };
        }
    }

    let cluster: Vec<usize> = (0..n).map(|row| row / size).collect();
    let data = Dataset::new(x, y, &cluster, config.family)?;
    let truth = SimTruth { beta, b, phi_draws, random_set: (first_random..p).collect() };
    Ok((data, truth))
}

/// Replaces every predictor in `expand` by its powers `z, z², …, z^degree`,
/// each standardized to mean 0 and SD 1. Other predictors are kept as they are.
pub fn polynomial_expand(data: &Dataset, expand: &[usize], degree: usize) -> Result<Dataset> {
    data.check_columns(expand)?;
    let n = data.n_obs();
    let mut columns: Vec<Array1<f64>> = Vec::new();
    let mut names = Vec::new();
    for k in 0..data.n_predictors() {
        let base = data.x().column(k);
        if !expand.contains(&k) {
            columns.push(base.to_owned());
            names.push(data.names()[k].clone());
            continue;
        }
        for d in 1..=degree {
            let mut col = base.mapv(|v| v.powi(d as i32));
            let mean = col.sum() / n as f64;
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| (v - mean) / sd);
            }
            columns.push(col);
            names.push(if d == 1 { data.names()[k].clone() } else { format!("{}^{d}", data.names()[k]) });
        }
    }
    let mut x = Array2::<f64>::zeros((n, columns.len()));
    for (j, col) in columns.iter().enumerate() {
        x.column_mut(j).assign(col);
    }
    let labels: Vec<&str> = data.cluster().iter().map(|&c| data.cluster_labels()[c].as_str()).collect();
    Dataset::from_labels(x, data.y().clone(), &labels, data.family())?.with_names(names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Vary `N_i` with `r_b` and `φ` at their median levels.
    ClusterSize,
    /// Vary `φ` with `N_i` and `r_b` at their median levels.
    Ar1,
    /// Vary `r_b` with `N_i` and `φ` at their median levels.
    RandomEffect,
    /// The strong-clustering model-selection cell.
    Selection,
}

impl Sweep {
    pub const ALL: [Sweep; 4] = [Sweep::ClusterSize, Sweep::Ar1, Sweep::RandomEffect, Sweep::Selection];

    pub fn key(self) -> &'static str {
        match self {
            Sweep::ClusterSize => "n_i",
            Sweep::Ar1 => "phi",
            Sweep::RandomEffect => "r_b",
            Sweep::Selection => "selection",
        }
    }

    pub fn from_key(key: &str) -> Option<Sweep> {
        Sweep::ALL.into_iter().find(|s| s.key() == key)
    }
}

/// One cell of the factorial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub id: String,
    pub sweep: Sweep,
    /// Configuration with `seed` left at 0; see [`DesignCell::config_for`].
    pub config: SimConfig,
    pub base_seed: u64,
}

impl DesignCell {
    fn new(sweep: Sweep, config: SimConfig, base_seed: u64) -> DesignCell {
        let id = format!(
            "{}/{}/n{}/p{}/rb{}/phi{}",
            sweep.key(),
            config.family,
            config.cluster_size,
            config.p,
            config.r_b,
            config.phi
        );
        DesignCell { id, sweep, config, base_seed }
    }

    pub fn seed_for(&self, iteration: usize) -> u64 {
        derive_seed(&[self.base_seed, hash_str(&self.id), iteration as u64])
    }

    pub fn config_for(&self, iteration: usize) -> SimConfig {
        SimConfig { seed: self.seed_for(iteration), ..self.config.clone() }
    }
}

/// The three marginal sweeps (each over every `p`) and the selection cell,
/// for both families.
pub fn enumerate_design(base_seed: u64) -> Vec<DesignCell> {
    let mut cells = Vec::new();
    for family in [Family::Gaussian, Family::Binomial] {
        let base = SimConfig { family, ..SimConfig::default() };
        for &cluster_size in &CLUSTER_SIZES {
            for &p in &PREDICTOR_COUNTS {
                let cfg = SimConfig { cluster_size, p, ..base.clone() };
                cells.push(DesignCell::new(Sweep::ClusterSize, cfg, base_seed));
            }
        }
        for &phi in &AR1_LEVELS {
            for &p in &PREDICTOR_COUNTS {
                let cfg = SimConfig { phi, p, ..base.clone() };
                cells.push(DesignCell::new(Sweep::Ar1, cfg, base_seed));
            }
        }
        for &r_b in &RANDOM_EFFECT_RATIOS {
            for &p in &PREDICTOR_COUNTS {
                let cfg = SimConfig { r_b, p, ..base.clone() };
                cells.push(DesignCell::new(Sweep::RandomEffect, cfg, base_seed));
            }
        }
        cells.push(DesignCell::new(Sweep::Selection, SimConfig::selection_cell(family), base_seed));
    }
    cells
}

/// Column names of the synthetic neonatal-intensive-care dataset.
pub const NICU_PREDICTORS: [&str; 19] = [
    "hr_mean", "hr_std", "hr_max", "hr_min", "sp_mean", "sp_std", "sp_max", "sp_min", "EGA", "BWT", "Apgar1",
    "Apgar5", "Vaginal", "C-section", "Steroids", "InBorn", "BirthHC", "Multiple", "MaternalAge",
];

/// A synthetic dataset shaped like a NICU mortality cohort: per-patient
/// clusters of daily vital-sign summaries (AR1 within patient) plus at-birth
/// demographics that are constant within a patient, and a rare binary death
/// outcome driven by both and by a patient-level frailty.
pub fn nicu_like(patients: usize, seed: u64) -> Result<Dataset> {
    if patients == 0 {
        return Err(Error::InvalidConfig("need at least one patient".into()));
    }
    let std_normal = rand_distr::StandardNormal;
    let mut rows: Vec<[f64; 19]> = Vec::new();
    let mut y = Vec::new();
    let mut cluster = Vec::new();
    for pt in 0..patients {
        let mut rng = stream(&[seed, 0x4e1c, pt as u64]);
        let mut outcome_rng = stream(&[seed, 0x4e1d, pt as u64]);
        let stay = rng.random_range(12..=32usize);
        let mut g = || -> f64 { rng.sample(std_normal) };
        let ega = (35.2 + 4.4 * g()).clamp(22.0, 42.0);
        let maturity = (ega - 35.2) / 4.4;
        let bwt = (2500.0 + 800.0 * maturity + 400.0 * g()).max(400.0);
        let apgar1 = (6.5 + 1.2 * maturity + 1.5 * g()).round().clamp(0.0, 10.0);
        let apgar5 = (apgar1 + 1.5 + 0.8 * g()).round().clamp(0.0, 10.0);
        let delivery = g();
        let vaginal = f64::from(delivery < 0.1);
        let csection = f64::from((0.1..1.6).contains(&delivery));
        let steroids = f64::from(g() - 0.8 * maturity > 0.3);
        let inborn = f64::from(g() < 1.0);
        let birth_hc = 32.0 + 2.5 * maturity + 1.2 * g();
        let multiple = f64::from(g() > 1.06);
        let maternal_age = (28.5 + 6.0 * g()).clamp(14.0, 50.0);
        let frailty = 1.2 * g();
        let hr_level = 150.0 + 8.0 * g();
        let sp_level = 94.0 + 2.0 * g();
        let mut hr_dev = 0.0;
        let mut sp_dev = 0.0;
        for _ in 0..stay {
            hr_dev = 0.7 * hr_dev + 6.0 * g();
            sp_dev = 0.7 * sp_dev + 1.5 * g();
            let hr_mean = hr_level + hr_dev;
            let hr_std = (6.0 + 1.5 * g()).abs() + 1.0;
            let sp_mean = (sp_level + sp_dev).min(99.5);
            let sp_std = (1.8 + 0.6 * g()).abs() + 0.2;
            let row = [
                hr_mean,
                hr_std,
                hr_mean + 2.5 * hr_std + 3.0 * g().abs(),
                hr_mean - 2.5 * hr_std - 3.0 * g().abs(),
                sp_mean,
                sp_std,
                (sp_mean + 2.0 * sp_std).min(100.0),
                sp_mean - 3.0 * sp_std - g().abs(),
                ega,
                bwt,
                apgar1,
                apgar5,
                vaginal,
                csection,
                steroids,
                inborn,
                birth_hc,
                multiple,
                maternal_age,
            ];
            let eta = -7.05 + frailty - 0.9 * maturity - 0.25 * (apgar5 - 8.0) + 0.25 * (hr_std - 7.0)
                - 0.35 * (sp_mean - 94.0)
                + 0.02 * (hr_mean - 150.0);
            let u: f64 = outcome_rng.random();
            y.push(f64::from(u < sigmoid(eta)));
            rows.push(row);
            cluster.push(pt);
        }
    }
    let n = rows.len();
    let x = Array2::from_shape_fn((n, 19), |(i, j)| rows[i][j]);
    let labels: Vec<String> = cluster.iter().map(|pt| format!("pt{pt:04}")).collect();
    Dataset::from_labels(x, Array1::from(y), &labels, Family::Binomial)?
        .with_names(NICU_PREDICTORS.iter().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_effect_count_rounds_half_up() {
        let counts: Vec<usize> =
            (5..=10).map(|p| SimConfig { p, ..SimConfig::default() }.n_random()).collect();
        assert_eq!(counts, vec![4, 5, 6, 6, 7, 8]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SimConfig { phi: 0.9, ..SimConfig::default() },
            SimConfig { r_b: 0.0, ..SimConfig::default() },
            SimConfig { clusters: 0, ..SimConfig::default() },
            SimConfig { random_frac: 1.5, ..SimConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn shapes_and_truth() {
        let cfg = SimConfig { clusters: 7, cluster_size: 9, p: 6, seed: 3, ..SimConfig::default() };
        let (data, truth) = generate(&cfg).unwrap();
        assert_eq!(data.n_obs(), 63);
        assert_eq!(data.n_predictors(), 6);
        assert_eq!(data.n_clusters(), 7);
        assert_eq!(truth.random_set, vec![1, 2, 3, 4, 5]);
        assert_eq!(truth.b.dim(), (7, 5));
        assert!(truth.phi_draws.iter().all(|&p| (0.4..0.6).contains(&p)));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SimConfig { family: Family::Binomial, clusters: 5, cluster_size: 20, seed: 11, ..SimConfig::default() };
        let (a, ta) = generate(&cfg).unwrap();
        let (b, tb) = generate(&cfg).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert_eq!(ta, tb);
    }

    #[test]
    fn adding_clusters_keeps_earlier_draws() {
        let small = SimConfig { clusters: 4, cluster_size: 10, seed: 5, ..SimConfig::default() };
        let large = SimConfig { clusters: 9, ..small.clone() };
        let (a, _) = generate(&small).unwrap();
        let (b, _) = generate(&large).unwrap();
        assert_eq!(a.x(), &b.x().slice(ndarray::s![..40, ..]));
        assert_eq!(a.y(), &b.y().slice(ndarray::s![..40]));
    }

    #[test]
    fn polynomial_expansion_layout() {
        let cfg = SimConfig { clusters: 5, cluster_size: 30, p: 5, seed: 2, ..SimConfig::default() };
        let (data, truth) = generate(&cfg).unwrap();
        let poly = polynomial_expand(&data, &truth.random_set, 5).unwrap();
        assert_eq!(poly.n_predictors(), 1 + 4 * 5);
        assert_eq!(poly.names()[0], "x1");
        assert_eq!(poly.names()[1], "x2");
        assert_eq!(poly.names()[5], "x2^5");
        assert_eq!(poly.cluster(), data.cluster());
        let col = poly.x().column(3);
        let mean = col.sum() / col.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn design_enumeration() {
        let cells = enumerate_design(9);
        assert_eq!(cells.len(), 2 * (5 * 6 + 3 * 6 + 3 * 6 + 1));
        let n_sweep: Vec<_> = cells
            .iter()
            .filter(|c| c.sweep == Sweep::ClusterSize && c.config.family == Family::Gaussian)
            .collect();
        assert_eq!(n_sweep.len(), 30);
        assert!(n_sweep.iter().all(|c| c.config.r_b == 5.0 && c.config.phi == 0.4));
        let sel: Vec<_> = cells.iter().filter(|c| c.sweep == Sweep::Selection).collect();
        assert_eq!(sel.len(), 2);
        for c in sel {
            assert_eq!((c.config.cluster_size, c.config.p, c.config.r_b, c.config.phi), (150, 5, 10.0, 0.8));
        }
        assert_eq!(enumerate_design(9), cells);
        assert_eq!(cells[0].seed_for(3), enumerate_design(9)[0].seed_for(3));
        assert_ne!(cells[0].seed_for(3), cells[0].seed_for(4));
        assert_ne!(cells[0].seed_for(3), enumerate_design(10)[0].seed_for(3));
    }

    #[test]
    fn nicu_like_shape() {
        let data = nicu_like(200, 1).unwrap();
        assert_eq!(data.n_clusters(), 200);
        assert_eq!(data.n_predictors(), 19);
        let mean_size = data.n_obs() as f64 / 200.0;
        assert!((18.0..26.0).contains(&mean_size));
    }
}

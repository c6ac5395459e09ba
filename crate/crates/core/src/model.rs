//! Model parameters, hyperparameters, sufficient statistics, and their
//! initialization.
//!
//! Gamma distributions use the shape–scale parameterization throughout:
//! Gamma(g, θ) has mean g·θ. The prior on λ_r is Gamma(g, p_r / (1 − p_r)) and
//! its conditional given the latent counts is Gamma(g + s_r, p_r).

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, SeededRng};
use crate::sparse_tensor::TensorShape;

/// Smallest value a gamma draw may take before normalization.
pub(crate) const GAMMA_FLOOR: f64 = 1e-300;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Argument("ragged matrix rows".into()));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Rescales every column to sum to one.
    pub fn normalize_columns(&mut self) {
        let sums = self.column_sums();
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, s) in row.iter_mut().zip(&sums) {
                *v /= s;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    /// Upper bound R on the number of components.
    pub rank_bound: usize,
    /// Symmetric Dirichlet concentration per mode.
    pub a: Vec<f64>,
    /// Gamma shape for every λ_r.
    pub g: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl Hyperparams {
    /// a = 0.1 per mode, g = 1, c = 1, ε = 1/R (0.5 when R = 1, since ε must stay below 1).
    pub fn with_defaults(num_modes: usize, rank_bound: usize) -> Self {
        Hyperparams { rank_bound, a: vec![0.1; num_modes], g: 1.0, c: 1.0, epsilon: (1.0 / rank_bound as f64).min(0.5) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_bound == 0 {
            return Err(Error::Argument("rank bound must be at least 1".into()));
        }
        if self.a.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Argument(format!("Dirichlet concentrations must be positive: {:?}", self.a)));
        }
        for (name, v) in [("g", self.g), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Argument(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn validate_for(&self, shape: &TensorShape) -> Result<()> {
        self.validate()?;
        if self.a.len() != shape.num_modes() {
            return Err(Error::ShapeMismatch(format!(
                "{} Dirichlet concentrations for a {}-mode tensor",
                self.a.len(),
                shape.num_modes()
            )));
        }
        Ok(())
    }

    /// Prior pseudo-count cε of the beta on p_r.
    pub fn beta_a(&self) -> f64 {
        self.c * self.epsilon
    }

    /// Prior pseudo-count c(1 − ε) of the beta on p_r.
    pub fn beta_b(&self) -> f64 {
        self.c * (1.0 - self.epsilon)
    }
}

/// CP parameters: K column-stochastic factor matrices (n_k × R), the
/// component weights λ, and the negative-binomial probabilities p.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub factors: Vec<Matrix>,
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
}

impl ModelState {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn num_modes(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn check_shape(&self, shape: &TensorShape) -> Result<()> {
        if self.dims() != shape.dims() {
            return Err(Error::ShapeMismatch(format!(
                "model dims {:?} vs tensor dims {:?}",
                self.dims(),
                shape.dims()
            )));
        }
        Ok(())
    }

    /// Checks the simplex, positivity, and layout invariants.
    pub fn validate(&self) -> Result<()> {
        let r = self.rank();
        if r == 0 || self.p.len() != r {
            return Err(Error::Validation(format!("{} weights but {} probabilities", r, self.p.len())));
        }
        for (k, f) in self.factors.iter().enumerate() {
            if f.cols() != r {
                return Err(Error::Validation(format!("mode {k} factor has {} columns, expected {r}", f.cols())));
            }
            if f.as_slice().iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
                return Err(Error::Validation(format!("mode {k} factor has a negative or non-finite entry")));
            }
            for (col, s) in f.column_sums().into_iter().enumerate() {
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!("mode {k} column {col} sums to {s}")));
                }
            }
        }
        if let Some(l) = self.lambda.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Validation(format!("weight {l} is not positive")));
        }
        if let Some(p) = self.p.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Validation(format!("probability {p} outside (0, 1)")));
        }
        Ok(())
    }
}

/// Per-mode latent-count aggregates s^(k)_{j,r} and per-component totals s_r.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    pub per_mode: Vec<Matrix>,
    pub total: Vec<f64>,
}

impl SufficientStats {
    pub fn zeros(dims: &[usize], rank: usize) -> Self {
        SufficientStats { per_mode: dims.iter().map(|&n| Matrix::zeros(n, rank)).collect(), total: vec![0.0; rank] }
    }

    pub fn rank(&self) -> usize {
        self.total.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.per_mode.iter().map(Matrix::rows).collect()
    }

    /// Adds one entry's latent counts.
    #[inline]
    pub fn add(&mut self, index: &[usize], latent: &[f64]) {
        for (m, &i) in self.per_mode.iter_mut().zip(index) {
            for (s, y) in m.row_mut(i).iter_mut().zip(latent) {
                *s += y;
            }
        }
        for (s, y) in self.total.iter_mut().zip(latent) {
            *s += y;
        }
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        for (m, o) in self.per_mode.iter_mut().zip(&other.per_mode) {
            for (s, v) in m.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *s += v;
            }
        }
        for (s, v) in self.total.iter_mut().zip(&other.total) {
            *s += v;
        }
    }

    /// `self ← (1 − γ)·self + γ·scale·fresh`, applied to every statistic.
    pub fn blend(&mut self, fresh: &SufficientStats, gamma: f64, scale: f64) {
        let keep = 1.0 - gamma;
        let add = gamma * scale;
        for (m, o) in self.per_mode.iter_mut().zip(&fresh.per_mode) {
            for (s, v) in m.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *s = keep * *s + add * v;
            }
        }
        for (s, v) in self.total.iter_mut().zip(&fresh.total) {
            *s = keep * *s + add * v;
        }
    }

    /// Largest |Σ_j s^(k)_{j,r} − s_r| over modes and components.
    pub fn mode_inconsistency(&self) -> f64 {
        self.per_mode
            .iter()
            .flat_map(|m| m.column_sums().into_iter().zip(&self.total).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Mean-field parameters: Dirichlet ρ per mode, beta (p_a, p_b), gamma
/// (λ_a shape, λ_b scale) per component.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub rho: Vec<Matrix>,
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
}

impl VariationalState {
    pub fn rank(&self) -> usize {
        self.p_a.len()
    }

    pub fn p_mean(&self) -> Vec<f64> {
        self.p_a.iter().zip(&self.p_b).map(|(a, b)| a / (a + b)).collect()
    }

    pub fn lambda_mean(&self) -> Vec<f64> {
        self.lambda_a.iter().zip(&self.lambda_b).map(|(a, b)| a * b).collect()
    }

    pub fn factor_means(&self) -> Vec<Matrix> {
        self.rho
            .iter()
            .map(|r| {
                let mut m = r.clone();
                m.normalize_columns();
                m
            })
            .collect()
    }

    /// Point estimate built from the variational means.
    pub fn mean_model(&self) -> ModelState {
        ModelState { factors: self.factor_means(), lambda: self.lambda_mean(), p: self.p_mean() }
    }

    pub fn all_positive(&self) -> bool {
        let pos = |v: &f64| *v > 0.0 && v.is_finite();
        self.rho.iter().all(|m| m.as_slice().iter().all(pos))
            && [&self.p_a, &self.p_b, &self.lambda_a, &self.lambda_b].iter().all(|v| v.iter().all(pos))
    }
}

/// Draws one column from Dir(α_1, …, α_n) into `out` by normalizing gamma draws.
pub(crate) fn sample_dirichlet_into(alpha: impl Iterator<Item = f64>, rng: &mut impl Rng, out: &mut [f64]) {
    let mut sum = 0.0;
    for (o, a) in out.iter_mut().zip(alpha) {
        let x = Gamma::new(a, 1.0).expect("Dirichlet parameters are positive").sample(rng).max(GAMMA_FLOOR);
        *o = x;
        sum += x;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Beta draw kept strictly inside (0, 1).
pub(crate) fn sample_open_beta(a: f64, b: f64, rng: &mut impl Rng) -> f64 {
    let p: f64 = Beta::new(a, b).expect("beta parameters are positive").sample(rng);
    clamp_open_unit(p)
}

pub(crate) fn clamp_open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Gamma(shape, scale) draw kept strictly positive.
pub(crate) fn sample_positive_gamma(shape: f64, scale: f64, rng: &mut impl Rng) -> f64 {
    Gamma::new(shape, scale).expect("gamma parameters are positive").sample(rng).max(f64::MIN_POSITIVE)
}

/// Draws a model from the prior: columns from Dir(a^(k)), p_r from
/// Beta(cε, c(1 − ε)), λ_r from Gamma(g, p_r / (1 − p_r)).
pub fn init_model(shape: &TensorShape, hyper: &Hyperparams, seed: u64) -> Result<ModelState> {
    init_model_with(shape, hyper, &mut seeded_rng(seed))
}

pub fn init_model_with(shape: &TensorShape, hyper: &Hyperparams, rng: &mut SeededRng) -> Result<ModelState> {
    hyper.validate_for(shape)?;
    let rank = hyper.rank_bound;
    let mut factors = Vec::with_capacity(shape.num_modes());
    for (&n, &a) in shape.dims().iter().zip(&hyper.a) {
        let mut m = Matrix::zeros(n, rank);
        let mut column = vec![0.0; n];
        for r in 0..rank {
            sample_dirichlet_into(std::iter::repeat(a), rng, &mut column);
            for (i, &u) in column.iter().enumerate() {
                m.set(i, r, u);
            }
        }
        factors.push(m);
    }
    let p: Vec<f64> = (0..rank).map(|_| sample_open_beta(hyper.beta_a(), hyper.beta_b(), rng)).collect();
    let lambda = p.iter().map(|&p| sample_positive_gamma(hyper.g, p / (1.0 - p), rng)).collect();
    Ok(ModelState { factors, lambda, p })
}

/// Prior parameters with independent multiplicative jitter from U[0.9, 1.1]:
/// ρ ≈ a^(k), p_a ≈ cε, p_b ≈ c(1 − ε), λ_a ≈ g, and λ_b ≈ ε (the prior mean of p).
pub fn init_variational(shape: &TensorShape, hyper: &Hyperparams, seed: u64) -> Result<VariationalState> {
    hyper.validate_for(shape)?;
    let mut rng = seeded_rng(seed);
    let mut jitter = move || rng.random_range(0.9..=1.1);
    let rank = hyper.rank_bound;
    let rho = shape
        .dims()
        .iter()
        .zip(&hyper.a)
        .map(|(&n, &a)| {
            let mut m = Matrix::zeros(n, rank);
            m.as_mut_slice().iter_mut().for_each(|v| *v = a * jitter());
            m
        })
        .collect();
    let p_a: Vec<f64> = (0..rank).map(|_| hyper.beta_a() * jitter()).collect();
    let p_b: Vec<f64> = (0..rank).map(|_| hyper.beta_b() * jitter()).collect();
    let lambda_a = (0..rank).map(|_| hyper.g * jitter()).collect();
    let lambda_b = (0..rank).map(|_| hyper.epsilon * jitter()).collect();
    Ok(VariationalState { rho, p_a, p_b, lambda_a, lambda_b })
}

//! Batch mean-field variational Bayes by coordinate ascent.
//!
//! Each iteration computes expected latent counts for every stored entry,
//! then sets ρ = a + s, (p_a, p_b) = (cε + s_r, c(1 − ε) + g), and
//! (λ_a, λ_b) = (g + s_r, E[p_r]).

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::allocation::{expected_stats, Batch, Parallelism, VbAllocator, VbRule};
use crate::error::{Error, Result};
use crate::evaluation::{FitTrace, DEFAULT_RANK_THRESHOLD};
use crate::model::{init_variational, Hyperparams, Matrix, SufficientStats, VariationalState};
use crate::sparse_tensor::SparseCountTensor;

/// Number of earlier evaluations the plateau test looks back over.
pub const PLATEAU_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct VbConfig {
    pub max_iters: usize,
    /// Stop once the relative heldout log-likelihood change across the window drops below this.
    pub tolerance: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub workers: usize,
    pub rule: VbRule,
    pub rank_threshold: f64,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            max_iters: 200,
            tolerance: 1e-5,
            eval_every: 1,
            seed: 0,
            workers: 1,
            rule: VbRule::Printed,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.eval_every == 0 {
            return Err(Error::Argument("max_iters and eval_every must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Argument(format!("tolerance {} is invalid", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VbOutput {
    pub state: VariationalState,
    pub trace: FitTrace,
    pub iterations: usize,
}

/// Expected-count statistics for every stored entry under the current state.
pub fn vb_update_allocations(
    train: &SparseCountTensor,
    state: &VariationalState,
    rule: VbRule,
    par: &Parallelism,
) -> Result<SufficientStats> {
    let alloc = VbAllocator::new(state, rule)?;
    expected_stats(train, Batch::All, &alloc, par)
}

/// ρ^(k)_{j,r} = a^(k) + s^(k)_{j,r}.
pub fn vb_update_factors(stats: &SufficientStats, hyper: &Hyperparams) -> Vec<Matrix> {
    stats
        .per_mode
        .iter()
        .zip(&hyper.a)
        .map(|(s, &a)| {
            let mut rho = s.clone();
            rho.as_mut_slice().iter_mut().for_each(|v| *v += a);
            rho
        })
        .collect()
}

/// (p_a, p_b) = (cε + s_r, c(1 − ε) + g).
pub fn vb_update_p(stats: &SufficientStats, hyper: &Hyperparams) -> (Vec<f64>, Vec<f64>) {
    let p_a = stats.total.iter().map(|s| hyper.beta_a() + s).collect();
    let p_b = vec![hyper.beta_b() + hyper.g; stats.rank()];
    (p_a, p_b)
}

/// (λ_a, λ_b) = (g + s_r, E[p_r]).
pub fn vb_update_lambda(stats: &SufficientStats, p_mean: &[f64], hyper: &Hyperparams) -> (Vec<f64>, Vec<f64>) {
    let lambda_a = stats.total.iter().map(|s| hyper.g + s).collect();
    (lambda_a, p_mean.to_vec())
}

/// Sets every variational parameter from fresh statistics.
pub fn apply_stats(state: &mut VariationalState, stats: &SufficientStats, hyper: &Hyperparams) {
    state.rho = vb_update_factors(stats, hyper);
    let (p_a, p_b) = vb_update_p(stats, hyper);
    state.p_a = p_a;
    state.p_b = p_b;
    let (lambda_a, lambda_b) = vb_update_lambda(stats, &state.p_mean(), hyper);
    state.lambda_a = lambda_a;
    state.lambda_b = lambda_b;
}

/// One coordinate-ascent pass: allocations, then factors, p, λ.
pub fn vb_iteration(
    train: &SparseCountTensor,
    state: &mut VariationalState,
    hyper: &Hyperparams,
    rule: VbRule,
    par: &Parallelism,
) -> Result<SufficientStats> {
    let stats = vb_update_allocations(train, state, rule, par)?;
    apply_stats(state, &stats, hyper);
    Ok(stats)
}

pub fn run_vb(
    train: &SparseCountTensor,
    heldout: &SparseCountTensor,
    config: &VbConfig,
    hyper: &Hyperparams,
) -> Result<VbOutput> {
    config.validate()?;
    hyper.validate_for(train.shape())?;
    let state = init_variational(train.shape(), hyper, config.seed)?;
    run_vb_from(train, heldout, config, hyper, state)
}

pub fn run_vb_from(
    train: &SparseCountTensor,
    heldout: &SparseCountTensor,
    config: &VbConfig,
    hyper: &Hyperparams,
    mut state: VariationalState,
) -> Result<VbOutput> {
    config.validate()?;
    if heldout.shape() != train.shape() {
        return Err(Error::ShapeMismatch("train and heldout shapes differ".into()));
    }
    let par = Parallelism::new(config.workers)?;
    let mut trace = FitTrace::new();
    let mut busy = Duration::ZERO;
    let first = trace.record(0, 0.0, heldout, &state.mean_model(), config.rank_threshold)?;
    let mut window = VecDeque::from([first.heldout_loglik]);

    let mut iterations = 0;
    for iter in 1..=config.max_iters {
        let started = Instant::now();
        vb_iteration(train, &mut state, hyper, config.rule, &par)?;
        busy += started.elapsed();
        iterations = iter;
        if iter % config.eval_every == 0 || iter == config.max_iters {
            let row = trace.record(iter, busy.as_secs_f64(), heldout, &state.mean_model(), config.rank_threshold)?;
            window.push_back(row.heldout_loglik);
            if window.len() > PLATEAU_WINDOW + 1 {
                window.pop_front();
            }
            if relative_change(window[0], row.heldout_loglik) < config.tolerance {
                break;
            }
        }
    }
    Ok(VbOutput { state, trace, iterations })
}

fn relative_change(old: f64, new: f64) -> f64 {
    if old == new {
        return 0.0;
    }
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

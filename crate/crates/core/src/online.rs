//! Minibatch engines: conditional density filtering (online MCMC with
//! decaying conditional sufficient statistics) and stochastic variational
//! inference. Both reweight minibatch statistics by N/B and blend them into
//! the running state with step size γ_t = (t0 + t)^(−κ).

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::allocation::{expected_stats, sampled_stats, Batch, Parallelism, VbAllocator, VbRule};
use crate::error::{Error, Result};
use crate::evaluation::{FitTrace, DEFAULT_RANK_THRESHOLD};
use crate::model::{
    clamp_open_unit, init_model_with, init_variational, Hyperparams, ModelState, SufficientStats, VariationalState,
};
use crate::rng::{derive_seed, seeded_rng, SeededRng};
use crate::sparse_tensor::SparseCountTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateSchedule {
    t0: f64,
    kappa: f64,
}

impl LearningRateSchedule {
    pub fn new(t0: f64, kappa: f64) -> Result<Self> {
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::Argument(format!("t0 must be non-negative, got {t0}")));
        }
        if !(0.5..=1.0).contains(&kappa) {
            return Err(Error::Argument(format!("kappa must lie in [0.5, 1], got {kappa}")));
        }
        Ok(LearningRateSchedule { t0, kappa })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// γ_t = (t0 + t)^(−κ) for t ≥ 1.
    pub fn rate(&self, t: usize) -> f64 {
        learning_rate(t, self.t0, self.kappa)
    }
}

/// t0 = 0, κ = 0.5.
impl Default for LearningRateSchedule {
    fn default() -> Self {
        LearningRateSchedule { t0: 0.0, kappa: 0.5 }
    }
}

/// (t0 + t)^(−κ) without validation.
pub fn learning_rate(t: usize, t0: f64, kappa: f64) -> f64 {
    (t0 + t as f64).powf(-kappa)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// B positions drawn uniformly with replacement.
    #[default]
    WithReplacement,
    /// Consecutive slices of a permutation reshuffled every epoch.
    EpochShuffle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

/// Produces minibatch positions according to a [`MinibatchPlan`].
pub struct MinibatchSampler {
    plan: MinibatchPlan,
    n: usize,
    rng: SeededRng,
    order: Vec<usize>,
    cursor: usize,
}

impl MinibatchSampler {
    pub fn new(plan: MinibatchPlan, n: usize) -> Result<Self> {
        if plan.batch_size == 0 {
            return Err(Error::Argument("minibatch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::Argument("cannot draw minibatches from an empty tensor".into()));
        }
        Ok(MinibatchSampler { plan, n, rng: seeded_rng(plan.seed), order: (0..n).collect(), cursor: n })
    }

    pub fn next_batch(&mut self, out: &mut Vec<usize>) {
        out.clear();
        match self.plan.sampling {
            Sampling::WithReplacement => {
                out.extend((0..self.plan.batch_size).map(|_| self.rng.random_range(0..self.n)));
            }
            Sampling::EpochShuffle => {
                while out.len() < self.plan.batch_size {
                    if self.cursor == self.n {
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    let take = (self.plan.batch_size - out.len()).min(self.n - self.cursor);
                    out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
                    self.cursor += take;
                }
            }
        }
    }
}

/// Sets the model to the analytic means of its conditionals given the statistics.
pub fn cdf_means(css: &SufficientStats, hyper: &Hyperparams, model: &mut ModelState) {
    for ((f, s), &a) in model.factors.iter_mut().zip(&css.per_mode).zip(&hyper.a) {
        for (u, &x) in f.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *u = a + x;
        }
        f.normalize_columns();
    }
    for (r, &s) in css.total.iter().enumerate() {
        let pa = hyper.beta_a() + s;
        let pb = hyper.beta_b() + hyper.g;
        let p = clamp_open_unit(pa / (pa + pb));
        model.p[r] = p;
        model.lambda[r] = ((hyper.g + s) * p).max(f64::MIN_POSITIVE);
    }
}

/// One conditional-density-filtering step on the minibatch at `positions`.
///
/// Samples latent counts under the current model, blends
/// css ← (1 − γ)·css + γ·(N/B)·minibatch stats, then moves the model to the
/// conditional means.
#[allow(clippy::too_many_arguments)]
pub fn cdf_step(
    train: &SparseCountTensor,
    positions: &[usize],
    model: &mut ModelState,
    css: &mut SufficientStats,
    gamma: f64,
    hyper: &Hyperparams,
    rng: &mut impl Rng,
    par: &Parallelism,
) -> Result<()> {
    check_step(gamma, positions)?;
    let fresh = sampled_stats(train, Batch::Positions(positions), model, rng, par)?;
    css.blend(&fresh, gamma, train.nnz() as f64 / positions.len() as f64);
    cdf_means(css, hyper, model);
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SviOptions {
    pub rule: VbRule,
    /// Blend λ_b from the previous λ_a instead of the previous λ_b.
    pub strict_lambda_rate: bool,
}

/// One stochastic variational step on the minibatch at `positions`.
pub fn svi_step(
    train: &SparseCountTensor,
    positions: &[usize],
    state: &mut VariationalState,
    gamma: f64,
    hyper: &Hyperparams,
    options: SviOptions,
    par: &Parallelism,
) -> Result<()> {
    check_step(gamma, positions)?;
    let stats = {
        let alloc = VbAllocator::new(state, options.rule)?;
        expected_stats(train, Batch::Positions(positions), &alloc, par)?
    };
    let scale = train.nnz() as f64 / positions.len() as f64;
    let keep = 1.0 - gamma;
    for ((rho, s), &a) in state.rho.iter_mut().zip(&stats.per_mode).zip(&hyper.a) {
        for (v, &x) in rho.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *v = keep * *v + gamma * (a + scale * x);
        }
    }
    let previous_lambda_a = state.lambda_a.clone();
    for (r, &s) in stats.total.iter().enumerate() {
        state.p_a[r] = keep * state.p_a[r] + gamma * (hyper.beta_a() + scale * s);
        state.p_b[r] = keep * state.p_b[r] + gamma * (hyper.beta_b() + hyper.g);
        state.lambda_a[r] = keep * state.lambda_a[r] + gamma * (hyper.g + scale * s);
        let p_mean = state.p_a[r] / (state.p_a[r] + state.p_b[r]);
        let carried = if options.strict_lambda_rate { previous_lambda_a[r] } else { state.lambda_b[r] };
        state.lambda_b[r] = keep * carried + gamma * p_mean;
    }
    Ok(())
}

fn check_step(gamma: f64, positions: &[usize]) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Argument(format!("step size {gamma} outside [0, 1]")));
    }
    if positions.is_empty() {
        return Err(Error::Argument("empty minibatch".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Cdf,
    Svi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    pub engine: Engine,
    pub plan: MinibatchPlan,
    pub schedule: LearningRateSchedule,
    pub iters: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub workers: usize,
    pub svi: SviOptions,
    pub rank_threshold: f64,
}

impl OnlineConfig {
    pub fn new(engine: Engine, batch_size: usize, iters: usize) -> Self {
        OnlineConfig {
            engine,
            plan: MinibatchPlan { batch_size, sampling: Sampling::WithReplacement, seed: 1 },
            schedule: LearningRateSchedule::default(),
            iters,
            eval_every: 10,
            seed: 0,
            workers: 1,
            svi: SviOptions::default(),
            rank_threshold: DEFAULT_RANK_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Argument("iters must be at least 1".into()));
        }
        if self.eval_every == 0 || self.plan.batch_size == 0 {
            return Err(Error::Argument("eval_every and batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum OnlineState {
    Cdf { model: ModelState, css: SufficientStats },
    Svi(VariationalState),
}

impl OnlineState {
    /// Point estimate used for scoring and export.
    pub fn point_estimate(&self) -> ModelState {
        match self {
            OnlineState::Cdf { model, .. } => model.clone(),
            OnlineState::Svi(v) => v.mean_model(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OnlineOutput {
    pub state: OnlineState,
    pub trace: FitTrace,
}

pub fn run_online(
    train: &SparseCountTensor,
    heldout: &SparseCountTensor,
    config: &OnlineConfig,
    hyper: &Hyperparams,
) -> Result<OnlineOutput> {
    config.validate()?;
    hyper.validate_for(train.shape())?;
    if heldout.shape() != train.shape() {
        return Err(Error::ShapeMismatch("train and heldout shapes differ".into()));
    }
    let par = Parallelism::new(config.workers)?;
    let mut sampler = MinibatchSampler::new(config.plan, train.nnz())?;
    let mut rng = seeded_rng(config.seed);
    let mut state = match config.engine {
        Engine::Cdf => OnlineState::Cdf {
            model: init_model_with(train.shape(), hyper, &mut rng)?,
            css: SufficientStats::zeros(train.shape().dims(), hyper.rank_bound),
        },
        Engine::Svi => OnlineState::Svi(init_variational(train.shape(), hyper, derive_seed(config.seed, 0))?),
    };
    let mut trace = FitTrace::new();
    trace.record(0, 0.0, heldout, &state.point_estimate(), config.rank_threshold)?;
    let mut busy = Duration::ZERO;
    let mut batch = Vec::with_capacity(config.plan.batch_size);
    for t in 1..=config.iters {
        let started = Instant::now();
        sampler.next_batch(&mut batch);
        let gamma = config.schedule.rate(t);
        match &mut state {
            OnlineState::Cdf { model, css } => cdf_step(train, &batch, model, css, gamma, hyper, &mut rng, &par)?,
            OnlineState::Svi(v) => svi_step(train, &batch, v, gamma, hyper, config.svi, &par)?,
        }
        busy += started.elapsed();
        if t % config.eval_every == 0 || t == config.iters {
            trace.record(t, busy.as_secs_f64(), heldout, &state.point_estimate(), config.rank_threshold)?;
        }
    }
    Ok(OnlineOutput { state, trace })
}

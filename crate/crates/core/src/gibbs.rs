//! Batch Gibbs sampler.
//!
//! One sweep samples the latent counts of every stored entry, accumulates
//! the statistics, then draws the factor columns, p, and λ from their
//! conditionals, in that order.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::allocation::{sampled_stats, Batch, Parallelism};
use crate::error::{Error, Result};
use crate::evaluation::{effective_rank, FitTrace, DEFAULT_RANK_THRESHOLD};
use crate::model::{
    init_model_with, sample_dirichlet_into, sample_open_beta, sample_positive_gamma, Hyperparams, Matrix, ModelState,
    SufficientStats,
};
use crate::rng::seeded_rng;
use crate::sparse_tensor::SparseCountTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsConfig {
    pub burnin: usize,
    pub collection: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub workers: usize,
    pub rank_threshold: f64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burnin: 1000,
            collection: 1000,
            seed: 0,
            eval_every: 10,
            workers: 1,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.collection == 0 {
            return Err(Error::Argument("collection must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Argument("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Collection-phase summary.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// Average of the collected samples, parameter by parameter.
    pub mean_model: ModelState,
    /// Effective rank → number of collected samples with that rank.
    pub rank_histogram: BTreeMap<usize, usize>,
    /// Collection mean of λ.
    pub lambda_spectrum: Vec<f64>,
}

impl PosteriorSummary {
    /// Most frequent effective rank; ties go to the smaller rank.
    pub fn modal_rank(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (&rank, &count) in &self.rank_histogram {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((rank, count));
            }
        }
        best.map(|(rank, _)| rank)
    }

    pub fn samples(&self) -> usize {
        self.rank_histogram.values().sum()
    }
}

#[derive(Clone, Debug)]
pub struct GibbsOutput {
    pub summary: PosteriorSummary,
    pub last_sample: ModelState,
    pub trace: FitTrace,
}

/// u_r^(k) ~ Dir(a^(k) + s^(k)_{1,r}, …, a^(k) + s^(k)_{n_k,r}) for every mode and component.
pub fn sample_factor_columns(stats: &SufficientStats, hyper: &Hyperparams, rng: &mut impl Rng, factors: &mut [Matrix]) {
    for ((f, s), &a) in factors.iter_mut().zip(&stats.per_mode).zip(&hyper.a) {
        let mut column = vec![0.0; f.rows()];
        for r in 0..f.cols() {
            sample_dirichlet_into((0..s.rows()).map(|j| a + s.get(j, r)), rng, &mut column);
            for (j, &u) in column.iter().enumerate() {
                f.set(j, r, u);
            }
        }
    }
}

/// p_r ~ Beta(cε + s_r, c(1 − ε) + g).
pub fn sample_p(stats: &SufficientStats, hyper: &Hyperparams, rng: &mut impl Rng) -> Vec<f64> {
    stats.total.iter().map(|&s| sample_open_beta(hyper.beta_a() + s, hyper.beta_b() + hyper.g, rng)).collect()
}

/// λ_r ~ Gamma(shape g + s_r, scale p_r).
pub fn sample_lambda(stats: &SufficientStats, p: &[f64], hyper: &Hyperparams, rng: &mut impl Rng) -> Vec<f64> {
    stats.total.iter().zip(p).map(|(&s, &p)| sample_positive_gamma(hyper.g + s, p, rng)).collect()
}

/// One full sweep; returns the statistics of the sampled latent counts.
pub fn gibbs_sweep(
    train: &SparseCountTensor,
    model: &mut ModelState,
    hyper: &Hyperparams,
    rng: &mut impl Rng,
    par: &Parallelism,
) -> Result<SufficientStats> {
    let stats = sampled_stats(train, Batch::All, model, rng, par)?;
    sample_factor_columns(&stats, hyper, rng, &mut model.factors);
    model.p = sample_p(&stats, hyper, rng);
    model.lambda = sample_lambda(&stats, &model.p, hyper, rng);
    Ok(stats)
}

/// Runs burn-in then collection starting from a prior draw.
pub fn run_gibbs(
    train: &SparseCountTensor,
    heldout: &SparseCountTensor,
    config: &GibbsConfig,
    hyper: &Hyperparams,
) -> Result<GibbsOutput> {
    config.validate()?;
    hyper.validate_for(train.shape())?;
    let mut rng = seeded_rng(config.seed);
    let model = init_model_with(train.shape(), hyper, &mut rng)?;
    run_gibbs_from(train, heldout, config, hyper, model, &mut rng)
}

pub fn run_gibbs_from(
    train: &SparseCountTensor,
    heldout: &SparseCountTensor,
    config: &GibbsConfig,
    hyper: &Hyperparams,
    mut model: ModelState,
    rng: &mut impl Rng,
) -> Result<GibbsOutput> {
    config.validate()?;
    model.check_shape(train.shape())?;
    if heldout.shape() != train.shape() {
        return Err(Error::ShapeMismatch("train and heldout shapes differ".into()));
    }
    let par = Parallelism::new(config.workers)?;
    let total = config.burnin + config.collection;
    let mut trace = FitTrace::new();
    let mut busy = Duration::ZERO;
    trace.record(0, 0.0, heldout, &model, config.rank_threshold)?;

    let mut mean = MeanAccumulator::new(&model);
    let mut histogram = BTreeMap::new();
    for sweep in 1..=total {
        let started = Instant::now();
        gibbs_sweep(train, &mut model, hyper, rng, &par)?;
        if sweep > config.burnin {
            mean.add(&model);
            *histogram.entry(effective_rank(&model.lambda, config.rank_threshold)?).or_insert(0) += 1;
        }
        busy += started.elapsed();
        if sweep % config.eval_every == 0 || sweep == total {
            trace.record(sweep, busy.as_secs_f64(), heldout, &model, config.rank_threshold)?;
        }
    }
    let mean_model = mean.finish();
    Ok(GibbsOutput {
        summary: PosteriorSummary { lambda_spectrum: mean_model.lambda.clone(), mean_model, rank_histogram: histogram },
        last_sample: model,
        trace,
    })
}

struct MeanAccumulator {
    sum: ModelState,
    n: usize,
}

impl MeanAccumulator {
    fn new(shape_like: &ModelState) -> Self {
        let mut sum = shape_like.clone();
        sum.factors.iter_mut().for_each(|f| f.as_mut_slice().iter_mut().for_each(|v| *v = 0.0));
        sum.lambda.iter_mut().for_each(|v| *v = 0.0);
        sum.p.iter_mut().for_each(|v| *v = 0.0);
        MeanAccumulator { sum, n: 0 }
    }

    fn add(&mut self, m: &ModelState) {
        for (s, f) in self.sum.factors.iter_mut().zip(&m.factors) {
            for (a, b) in s.as_mut_slice().iter_mut().zip(f.as_slice()) {
                *a += b;
            }
        }
        for (a, b) in self.sum.lambda.iter_mut().zip(&m.lambda) {
            *a += b;
        }
        for (a, b) in self.sum.p.iter_mut().zip(&m.p) {
            *a += b;
        }
        self.n += 1;
    }

    fn finish(mut self) -> ModelState {
        let n = self.n as f64;
        self.sum.factors.iter_mut().for_each(|f| f.as_mut_slice().iter_mut().for_each(|v| *v /= n));
        self.sum.lambda.iter_mut().for_each(|v| *v /= n);
        self.sum.p.iter_mut().for_each(|v| *v /= n);
        self.sum
    }
}

//! Poisson → multinomial augmentation.
//!
//! Every observed count y_i is split across the R components in proportion
//! to ζ_ir ∝ λ_r Π_k U^(k)[i_k, r]. The samplers draw the split from a
//! multinomial, the variational engines take its expectation y_i·ζ_ir, and
//! either way the per-component pieces are summed into [`SufficientStats`].
//! Only stored (nonzero) entries are visited.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Matrix, ModelState, SufficientStats, VariationalState};
use crate::rng::{derive_seed, seeded_rng};
use crate::sparse_tensor::SparseCountTensor;
use crate::special::{checked_digamma, digamma};

/// Component probabilities ζ_i for one entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProbs(Vec<f64>);

impl AllocationProbs {
    /// Normalizes non-negative weights; all-zero weights give the uniform vector.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        normalize_weights(&mut weights)?;
        Ok(AllocationProbs(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Per-component split ỹ_i of one observed count.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCounts(pub Vec<f64>);

impl LatentCounts {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn normalize_weights(w: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for &x in w.iter() {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Numeric(format!("allocation weight {x} is negative or non-finite")));
        }
        sum += x;
    }
    if sum > 0.0 && sum.is_finite() {
        w.iter_mut().for_each(|x| *x /= sum);
    } else {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|x| *x = u);
    }
    Ok(())
}

/// Writes ζ_ir ∝ λ_r Π_k U^(k)[i_k, r] into `out`.
#[inline]
pub fn point_probs_into(index: &[usize], model: &ModelState, out: &mut [f64]) -> Result<()> {
    out.copy_from_slice(&model.lambda);
    for (f, &i) in model.factors.iter().zip(index) {
        for (o, u) in out.iter_mut().zip(f.row(i)) {
            *o *= u;
        }
    }
    normalize_weights(out)
}

pub fn allocation_probs_point(index: &[usize], model: &ModelState) -> Result<AllocationProbs> {
    if index.len() != model.num_modes() || index.iter().zip(model.dims()).any(|(&i, n)| i >= n) {
        return Err(Error::ShapeMismatch(format!("index {index:?} outside model dims {:?}", model.dims())));
    }
    let mut out = vec![0.0; model.rank()];
    point_probs_into(index, model, &mut out)?;
    Ok(AllocationProbs(out))
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(log_weights: &mut [f64]) -> Result<()> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(format!("log allocation weight maximum is {max}")));
    }
    let mut sum = 0.0;
    for w in log_weights.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    log_weights.iter_mut().for_each(|w| *w /= sum);
    Ok(())
}

/// Which expression the variational engines use for the log allocation weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VbRule {
    /// ln ζ̃_ir = Ψ(s_r + g) + ln E[p_r] + Σ_k Ψ(s^(k)_{i_k,r} + a^(k)) − Ψ(Σ_k (s^(k)_{i_k,r} + a^(k))).
    #[default]
    Printed,
    /// ln ζ̃_ir = Ψ(λ_a,r) + ln λ_b,r + Σ_k [Ψ(ρ^(k)_{i_k,r}) − Ψ(Σ_j ρ^(k)_{j,r})],
    /// the textbook expectation of ln(λ_r Π_k u).
    MeanField,
}

/// Precomputed digamma tables for evaluating variational allocation
/// weights from a [`VariationalState`].
///
/// The statistics enter through the variational parameters: ρ = a + s and
/// λ_a = g + s_r after a batch update, so Ψ(s + a) is read as Ψ(ρ) and
/// Ψ(s_r + g) as Ψ(λ_a).
pub struct VbAllocator<'a> {
    rule: VbRule,
    rho: &'a [Matrix],
    psi_rho: Vec<Matrix>,
    base: Vec<f64>,
}

impl<'a> VbAllocator<'a> {
    pub fn new(state: &'a VariationalState, rule: VbRule) -> Result<Self> {
        if !state.all_positive() {
            return Err(Error::Numeric("variational parameters must be positive".into()));
        }
        let psi_rho: Vec<Matrix> = state
            .rho
            .iter()
            .map(|m| {
                let mut out = m.clone();
                out.as_mut_slice().iter_mut().for_each(|v| *v = digamma(*v));
                out
            })
            .collect();
        let rank = state.rank();
        let mut base = Vec::with_capacity(rank);
        for r in 0..rank {
            let lambda_term = checked_digamma(state.lambda_a[r])?;
            let b = match rule {
                VbRule::Printed => lambda_term + (state.p_a[r] / (state.p_a[r] + state.p_b[r])).ln(),
                VbRule::MeanField => {
                    let mut b = lambda_term + state.lambda_b[r].ln();
                    for m in &state.rho {
                        let colsum: f64 = (0..m.rows()).map(|j| m.get(j, r)).sum();
                        b -= checked_digamma(colsum)?;
                    }
                    b
                }
            };
            base.push(b);
        }
        Ok(VbAllocator { rule, rho: &state.rho, psi_rho, base })
    }

    pub fn rank(&self) -> usize {
        self.base.len()
    }

    /// Unnormalized log weights ln ζ̃_ir.
    #[inline]
    pub fn log_weights_into(&self, index: &[usize], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.base);
        for (psi, &i) in self.psi_rho.iter().zip(index) {
            for (o, v) in out.iter_mut().zip(psi.row(i)) {
                *o += v;
            }
        }
        if self.rule == VbRule::Printed {
            for (r, o) in out.iter_mut().enumerate() {
                let across_modes: f64 = self.rho.iter().zip(index).map(|(m, &i)| m.get(i, r)).sum();
                *o -= checked_digamma(across_modes)?;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn probs_into(&self, index: &[usize], out: &mut [f64]) -> Result<()> {
        self.log_weights_into(index, out)?;
        softmax_in_place(out)
    }
}

/// Variational allocation probabilities for one entry under the printed rule.
pub fn allocation_probs_vb(index: &[usize], state: &VariationalState) -> Result<AllocationProbs> {
    allocation_probs_vb_with(index, state, VbRule::Printed)
}

pub fn allocation_probs_vb_with(index: &[usize], state: &VariationalState, rule: VbRule) -> Result<AllocationProbs> {
    if index.len() != state.rho.len() || index.iter().zip(&state.rho).any(|(&i, m)| i >= m.rows()) {
        return Err(Error::ShapeMismatch(format!("index {index:?} outside variational state")));
    }
    let alloc = VbAllocator::new(state, rule)?;
    let mut out = vec![0.0; state.rank()];
    alloc.probs_into(index, &mut out)?;
    Ok(AllocationProbs(out))
}

/// Multinomial(y; probs) by sequential conditional binomials. `y = 0` draws nothing.
#[inline]
pub fn sample_latent_counts_into<R: Rng + ?Sized>(y: u64, probs: &[f64], rng: &mut R, out: &mut [u64]) {
    out.iter_mut().for_each(|o| *o = 0);
    if y == 0 {
        return;
    }
    let last = probs.len() - 1;
    if y == 1 {
        // single trial: one inverse-CDF draw
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (r, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc || r == last {
                out[r] = 1;
                return;
            }
        }
    }
    let mut remaining = y;
    let mut mass = 1.0;
    for (r, &p) in probs[..last].iter().enumerate() {
        if remaining == 0 {
            return;
        }
        let q = if mass > 0.0 { p / mass } else { 1.0 };
        let x = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("q in (0, 1)").sample(rng)
        };
        out[r] = x;
        remaining -= x;
        mass -= p;
    }
    out[last] = remaining;
}

pub fn sample_latent_counts(y: u64, probs: &AllocationProbs, rng: &mut impl Rng) -> LatentCounts {
    let mut out = vec![0u64; probs.0.len()];
    sample_latent_counts_into(y, &probs.0, rng, &mut out);
    LatentCounts(out.into_iter().map(|x| x as f64).collect())
}

/// y·ζ componentwise.
pub fn expected_latent_counts(y: u64, probs: &AllocationProbs) -> LatentCounts {
    LatentCounts(probs.0.iter().map(|p| y as f64 * p).collect())
}

/// Sums latent counts into per-mode and total statistics.
pub fn accumulate_stats<'a>(
    dims: &[usize],
    rank: usize,
    items: impl IntoIterator<Item = (&'a [usize], &'a [f64])>,
) -> SufficientStats {
    let mut stats = SufficientStats::zeros(dims, rank);
    for (index, latent) in items {
        stats.add(index, latent);
    }
    stats
}

/// Which stored entries an allocation pass visits.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    All,
    Positions(&'a [usize]),
}

impl Batch<'_> {
    pub fn len(&self, tensor: &SparseCountTensor) -> usize {
        match self {
            Batch::All => tensor.nnz(),
            Batch::Positions(p) => p.len(),
        }
    }

    pub fn is_empty(&self, tensor: &SparseCountTensor) -> bool {
        self.len(tensor) == 0
    }

    #[inline]
    fn position(&self, n: usize) -> usize {
        match self {
            Batch::All => n,
            Batch::Positions(p) => p[n],
        }
    }
}

/// Worker pool for the allocation phase.
///
/// With one worker everything runs on the calling thread and consumes the
/// caller's generator, so results are bit-reproducible. With several
/// workers the batch is cut into fixed chunks, each with its own derived
/// generator, and partial statistics are merged in chunk order.
pub struct Parallelism {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Parallelism {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Argument("workers must be at least 1".into()));
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Parallelism { workers, pool })
    }

    pub fn serial() -> Self {
        Parallelism { workers: 1, pool: None }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn chunks(&self, len: usize) -> Vec<(usize, usize)> {
        let num = (self.workers * 4).min(len.max(1));
        let size = len.div_ceil(num).max(1);
        (0..len).step_by(size).map(|s| (s, (s + size).min(len))).collect()
    }
}

/// Samples latent counts for every entry in the batch and returns their statistics.
pub fn sampled_stats(
    tensor: &SparseCountTensor,
    batch: Batch<'_>,
    model: &ModelState,
    rng: &mut (impl Rng + ?Sized),
    par: &Parallelism,
) -> Result<SufficientStats> {
    let dims = tensor.shape().dims();
    let rank = model.rank();
    let len = batch.len(tensor);
    match &par.pool {
        None => sample_range(tensor, batch, model, 0, len, rng),
        Some(pool) => {
            let base: u64 = rng.random();
            let chunks = par.chunks(len);
            let parts: Vec<Result<SufficientStats>> = pool.install(|| {
                chunks
                    .par_iter()
                    .enumerate()
                    .map(|(c, &(s, e))| {
                        let mut rng = seeded_rng(derive_seed(base, c as u64));
                        sample_range(tensor, batch, model, s, e, &mut rng)
                    })
                    .collect()
            });
            merge_parts(dims, rank, parts)
        }
    }
}

fn sample_range<R: Rng + ?Sized>(
    tensor: &SparseCountTensor,
    batch: Batch<'_>,
    model: &ModelState,
    start: usize,
    end: usize,
    rng: &mut R,
) -> Result<SufficientStats> {
    let rank = model.rank();
    let mut stats = SufficientStats::zeros(tensor.shape().dims(), rank);
    let mut probs = vec![0.0; rank];
    let mut counts = vec![0u64; rank];
    let mut latent = vec![0.0; rank];
    for n in start..end {
        let pos = batch.position(n);
        let index = tensor.index(pos);
        point_probs_into(index, model, &mut probs)?;
        sample_latent_counts_into(tensor.count(pos), &probs, rng, &mut counts);
        for (l, &c) in latent.iter_mut().zip(&counts) {
            *l = c as f64;
        }
        stats.add(index, &latent);
    }
    Ok(stats)
}

/// Expected latent counts y_i·ζ_ir for every entry in the batch, summed into statistics.
pub fn expected_stats(
    tensor: &SparseCountTensor,
    batch: Batch<'_>,
    alloc: &VbAllocator<'_>,
    par: &Parallelism,
) -> Result<SufficientStats> {
    let dims = tensor.shape().dims();
    let rank = alloc.rank();
    let run = |start: usize, end: usize| -> Result<SufficientStats> {
        let mut stats = SufficientStats::zeros(dims, rank);
        let mut probs = vec![0.0; rank];
        for n in start..end {
            let pos = batch.position(n);
            let index = tensor.index(pos);
            alloc.probs_into(index, &mut probs)?;
            let y = tensor.count(pos) as f64;
            probs.iter_mut().for_each(|p| *p *= y);
            stats.add(index, &probs);
        }
        Ok(stats)
    };
    let len = batch.len(tensor);
    match &par.pool {
        None => run(0, len),
        Some(pool) => {
            let chunks = par.chunks(len);
            let parts: Vec<Result<SufficientStats>> =
                pool.install(|| chunks.par_iter().map(|&(s, e)| run(s, e)).collect());
            merge_parts(dims, rank, parts)
        }
    }
}

fn merge_parts(dims: &[usize], rank: usize, parts: Vec<Result<SufficientStats>>) -> Result<SufficientStats> {
    let mut total = SufficientStats::zeros(dims, rank);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

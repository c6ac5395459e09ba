//! Ground-truth tensors drawn from the generative model.
//!
//! Cells are enumerated one mode-0 slice at a time, so memory holds the
//! model and the nonzero entries only. Each slice has its own derived
//! generator; the output does not depend on whether slices run in parallel.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sample_dirichlet_into, sample_open_beta, Hyperparams, Matrix, ModelState};
use crate::rng::{derive_seed, seeded_rng};
use crate::sparse_tensor::{Entry, SparseCountTensor, TensorShape};

/// Weight given to the non-significant components, relative to `lambda_scale`.
pub const SUPPRESSED_WEIGHT: f64 = 1e-6;

/// Default cap on the number of cells enumerated without `blockwise`.
pub const DEFAULT_VOLUME_CAP: u128 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub rank_bound: usize,
    /// Number of components R* planted at full weight.
    pub significant: usize,
    pub lambda_scale: f64,
    pub seed: u64,
    pub volume_cap: u128,
    /// Allow shapes above `volume_cap`, generating slices in parallel.
    pub blockwise: bool,
}

impl SyntheticConfig {
    pub fn new(rank_bound: usize, significant: usize, lambda_scale: f64, seed: u64) -> Self {
        SyntheticConfig {
            rank_bound,
            significant,
            lambda_scale,
            seed,
            volume_cap: DEFAULT_VOLUME_CAP,
            blockwise: false,
        }
    }
}

/// Draws factors from Dir(a^(k)), plants λ_r = lambda_scale for the first R*
/// components and lambda_scale·1e−6 for the rest, then draws every cell
/// from Pois(Σ_r λ_r Π_k u). Returns the nonzero cells and the generating model.
pub fn generate(
    shape: &TensorShape,
    hyper: &Hyperparams,
    config: &SyntheticConfig,
) -> Result<(SparseCountTensor, ModelState)> {
    let rank = config.rank_bound;
    if rank == 0 || config.significant == 0 || config.significant > rank {
        return Err(Error::Argument(format!("need 1 ≤ significant ({}) ≤ rank bound ({rank})", config.significant)));
    }
    if !(config.lambda_scale >= 0.0 && config.lambda_scale.is_finite()) {
        return Err(Error::Argument(format!("lambda scale {} is invalid", config.lambda_scale)));
    }
    let mut hyper = hyper.clone();
    hyper.rank_bound = rank;
    hyper.validate_for(shape)?;
    if shape.volume() > config.volume_cap && !config.blockwise {
        return Err(Error::Size(format!(
            "shape {:?} has {} cells, above the cap of {}; enable blockwise generation",
            shape.dims(),
            shape.volume(),
            config.volume_cap
        )));
    }

    let mut rng = seeded_rng(config.seed);
    let factors: Vec<Matrix> = shape
        .dims()
        .iter()
        .zip(&hyper.a)
        .map(|(&n, &a)| {
            let mut m = Matrix::zeros(n, rank);
            let mut column = vec![0.0; n];
            for r in 0..rank {
                sample_dirichlet_into(std::iter::repeat(a), &mut rng, &mut column);
                for (j, &u) in column.iter().enumerate() {
                    m.set(j, r, u);
                }
            }
            m
        })
        .collect();
    let p = (0..rank).map(|_| sample_open_beta(hyper.beta_a(), hyper.beta_b(), &mut rng)).collect();
    let lambda = (0..rank)
        .map(|r| if r < config.significant { config.lambda_scale } else { config.lambda_scale * SUPPRESSED_WEIGHT })
        .collect();
    let truth = ModelState { factors, lambda, p };

    let block_base: u64 = rng.random();
    let slices = shape.dims()[0];
    let generate_slice = |i0: usize| slice_entries(&truth, i0, derive_seed(block_base, i0 as u64));
    let blocks: Vec<Vec<Entry>> = if config.blockwise {
        (0..slices).into_par_iter().map(generate_slice).collect()
    } else {
        (0..slices).map(generate_slice).collect()
    };
    let entries = blocks.into_iter().flatten().collect();
    Ok((SparseCountTensor::new(shape.clone(), entries)?, truth))
}

fn slice_entries(truth: &ModelState, i0: usize, seed: u64) -> Vec<Entry> {
    let mut rng = seeded_rng(seed);
    let rank = truth.rank();
    let k = truth.num_modes();
    // partial[d] holds λ_r Π_{m ≤ d} U^(m)[i_m, r]
    let mut partial = vec![vec![0.0; rank]; k];
    for (r, v) in partial[0].iter_mut().enumerate() {
        *v = truth.lambda[r] * truth.factors[0].get(i0, r);
    }
    let mut index = vec![0usize; k];
    index[0] = i0;
    let mut out = Vec::new();
    fill(truth, 1, &mut index, &mut partial, &mut rng, &mut out);
    out
}

fn fill(
    truth: &ModelState,
    depth: usize,
    index: &mut [usize],
    partial: &mut [Vec<f64>],
    rng: &mut impl Rng,
    out: &mut Vec<Entry>,
) {
    let f = &truth.factors[depth];
    let last = depth + 1 == truth.num_modes();
    for i in 0..f.rows() {
        index[depth] = i;
        let (done, rest) = partial.split_at_mut(depth);
        let prev = &done[depth - 1];
        if last {
            let rate: f64 = prev.iter().zip(f.row(i)).map(|(a, b)| a * b).sum();
            let y = poisson(rate, rng);
            if y > 0 {
                out.push(Entry::new(index.to_vec(), y));
            }
        } else {
            for ((c, a), b) in rest[0].iter_mut().zip(prev).zip(f.row(i)) {
                *c = a * b;
            }
            fill(truth, depth + 1, index, partial, rng, out);
        }
    }
}

/// Poisson draw; inversion with a single uniform for small rates.
fn poisson(rate: f64, rng: &mut impl Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < 30.0 {
        let u: f64 = rng.random();
        let mut pmf = (-rate).exp();
        let mut cdf = pmf;
        let mut k = 0u64;
        while u > cdf && k < 1000 {
            k += 1;
            pmf *= rate / k as f64;
            cdf += pmf;
        }
        return k;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{effective_rank, DEFAULT_RANK_THRESHOLD};

    fn cube(n: usize) -> TensorShape {
        TensorShape::new(vec![n, n, n]).unwrap()
    }

    #[test]
    fn zero_scale_gives_empty_tensor() {
        let (t, _) =
            generate(&cube(6), &Hyperparams::with_defaults(3, 4), &SyntheticConfig::new(4, 2, 0.0, 1)).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn planted_rank_is_the_effective_rank() {
        let hyper = Hyperparams::with_defaults(3, 6);
        for significant in [1, 3, 6] {
            let (_, truth) = generate(&cube(5), &hyper, &SyntheticConfig::new(6, significant, 50.0, 2)).unwrap();
            assert_eq!(effective_rank(&truth.lambda, DEFAULT_RANK_THRESHOLD).unwrap(), significant);
        }
    }

    #[test]
    fn deterministic_and_blockwise_invariant() {
        let hyper = Hyperparams::with_defaults(3, 5);
        let config = SyntheticConfig::new(5, 3, 400.0, 9);
        let a = generate(&cube(8), &hyper, &config).unwrap();
        let b = generate(&cube(8), &hyper, &config).unwrap();
        assert_eq!(a.0, b.0);
        let blockwise = SyntheticConfig { blockwise: true, ..config };
        assert_eq!(generate(&cube(8), &hyper, &blockwise).unwrap().0, a.0);
    }

    #[test]
    fn volume_cap_enforced_without_blockwise() {
        let hyper = Hyperparams::with_defaults(3, 2);
        let mut config = SyntheticConfig::new(2, 1, 1.0, 0);
        config.volume_cap = 100;
        assert!(matches!(generate(&cube(5), &hyper, &config), Err(Error::Size(_))));
        config.blockwise = true;
        assert!(generate(&cube(5), &hyper, &config).is_ok());
    }

    #[test]
    fn argument_checks() {
        let hyper = Hyperparams::with_defaults(3, 2);
        assert!(generate(&cube(3), &hyper, &SyntheticConfig::new(2, 3, 1.0, 0)).is_err());
        assert!(generate(&cube(3), &hyper, &SyntheticConfig::new(2, 0, 1.0, 0)).is_err());
        assert!(generate(&cube(3), &hyper, &SyntheticConfig::new(2, 1, -1.0, 0)).is_err());
    }

    #[test]
    fn poisson_inversion_mean() {
        let mut rng = seeded_rng(4);
        for &rate in &[0.3, 4.0, 29.0, 80.0] {
            let n = 20000;
            let mean = (0..n).map(|_| poisson(rate, &mut rng) as f64).sum::<f64>() / n as f64;
            assert!((mean - rate).abs() < 4.0 * (rate / n as f64).sqrt(), "rate {rate}: {mean}");
        }
    }
}

//! Plants five components in a 30 × 30 × 30 tensor, fits a rank-15 model
//! with the Gibbs sampler, and prints the effective-rank histogram.
//!
//! cargo run --release -p bnbcp-core --example rank_recovery -- [lambda_scale] [seed]

use bnbcp::gibbs::{run_gibbs, GibbsConfig};
use bnbcp::synthetic::{generate, SyntheticConfig};
use bnbcp::{Hyperparams, TensorShape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scale: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300.0);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let shape = TensorShape::new(vec![30, 30, 30])?;
    let hyper = Hyperparams::with_defaults(3, 15);
    let (tensor, truth) = generate(&shape, &hyper, &SyntheticConfig::new(15, 5, scale, seed))?;
    let (train, heldout) = tensor.split_heldout(0.05, seed)?;
    println!("{} nonzeros, {} total count", tensor.nnz(), tensor.total_count());

    let config = GibbsConfig { burnin: 200, collection: 200, seed, eval_every: 50, ..Default::default() };
    let out = run_gibbs(&train, &heldout, &config, &hyper)?;
    for row in out.trace.rows() {
        println!(
            "sweep {:>4}  heldout loglik {:>10.2}  effective rank {}",
            row.iteration, row.heldout_loglik, row.effective_rank
        );
    }
    println!("rank histogram {:?}", out.summary.rank_histogram);

    let mut planted: Vec<f64> = truth.lambda.iter().copied().filter(|&l| l >= scale).collect();
    let mut fitted = out.summary.lambda_spectrum.clone();
    planted.sort_by(|a, b| b.total_cmp(a));
    fitted.sort_by(|a, b| b.total_cmp(a));
    fitted.truncate(8);
    println!("planted weights {planted:?}");
    println!("largest posterior-mean weights {fitted:?}");
    Ok(())
}

//! Brute-force reference implementations used as oracles. These work on
//! plain nested vectors and share no code with the library beyond the
//! container types needed to call it.
#![allow(dead_code)]

use bnbcp::{Entry, Hyperparams, Matrix, ModelState, SparseCountTensor, TensorShape, VariationalState};
use statrs::function::gamma::{digamma, ln_gamma};

/// λ_r Π_k U^(k)[i_k, r], normalized by a plain loop.
pub fn ref_point_probs(index: &[usize], model: &ModelState) -> Vec<f64> {
    let mut w = Vec::new();
    for r in 0..model.lambda.len() {
        let mut prod = model.lambda[r];
        for k in 0..index.len() {
            prod *= model.factors[k].to_rows()[index[k]][r];
        }
        w.push(prod);
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// exp of Ψ(λ_a) + ln E[p] + Σ_k Ψ(ρ_{i_k r}) − Ψ(Σ_k ρ_{i_k r}), normalized.
pub fn ref_vb_probs(index: &[usize], state: &VariationalState) -> Vec<f64> {
    let rank = state.lambda_a.len();
    let mut logw = vec![0.0; rank];
    for (r, lw) in logw.iter_mut().enumerate() {
        let mut across = 0.0;
        let mut psi_sum = 0.0;
        for k in 0..index.len() {
            let rho = state.rho[k].to_rows()[index[k]][r];
            across += rho;
            psi_sum += digamma(rho);
        }
        *lw = digamma(state.lambda_a[r]) + (state.p_a[r] / (state.p_a[r] + state.p_b[r])).ln() + psi_sum
            - digamma(across);
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logw.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn ref_rate(index: &[usize], model: &ModelState) -> f64 {
    let mut rate = 0.0;
    for r in 0..model.lambda.len() {
        let mut prod = model.lambda[r];
        for (k, &i) in index.iter().enumerate() {
            prod *= model.factors[k].get(i, r);
        }
        rate += prod;
    }
    rate
}

pub fn ref_loglik(entries: &[Entry], model: &ModelState) -> f64 {
    entries
        .iter()
        .map(|e| {
            let rate = ref_rate(&e.index, model).max(1e-12);
            let y = e.count as f64;
            y * rate.ln() - rate - ln_gamma(y + 1.0)
        })
        .sum()
}

pub fn ref_mae(entries: &[Entry], model: &ModelState) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    entries.iter().map(|e| (e.count as f64 - ref_rate(&e.index, model)).abs()).sum::<f64>() / entries.len() as f64
}

/// Per-mode and total aggregates as nested vectors: (s[k][j][r], s_total[r]).
pub type RefStats = (Vec<Vec<Vec<f64>>>, Vec<f64>);

pub fn ref_stats(dims: &[usize], rank: usize, items: &[(Vec<usize>, Vec<f64>)]) -> RefStats {
    let mut per_mode: Vec<Vec<Vec<f64>>> = dims.iter().map(|&n| vec![vec![0.0; rank]; n]).collect();
    let mut total = vec![0.0; rank];
    for (index, latent) in items {
        for k in 0..dims.len() {
            for r in 0..rank {
                per_mode[k][index[k]][r] += latent[r];
            }
        }
        for r in 0..rank {
            total[r] += latent[r];
        }
    }
    (per_mode, total)
}

/// One stochastic variational step written out directly, including the
/// (N/B) rescaling and the λ_b blend from the previous λ_b.
pub fn ref_svi_step(
    train: &SparseCountTensor,
    positions: &[usize],
    state: &VariationalState,
    gamma: f64,
    hyper: &Hyperparams,
) -> VariationalState {
    let rank = state.lambda_a.len();
    let items: Vec<(Vec<usize>, Vec<f64>)> = positions
        .iter()
        .map(|&n| {
            let idx = train.index(n).to_vec();
            let y = train.count(n) as f64;
            let z = ref_vb_probs(&idx, state);
            (idx, z.iter().map(|p| y * p).collect())
        })
        .collect();
    let (s, total) = ref_stats(train.shape().dims(), rank, &items);
    let scale = train.nnz() as f64 / positions.len() as f64;
    let mut next = state.clone();
    for k in 0..s.len() {
        for j in 0..s[k].len() {
            for r in 0..rank {
                let old = state.rho[k].get(j, r);
                next.rho[k].set(j, r, (1.0 - gamma) * old + gamma * (hyper.a[k] + scale * s[k][j][r]));
            }
        }
    }
    let ce = hyper.c * hyper.epsilon;
    let c1e = hyper.c * (1.0 - hyper.epsilon);
    for r in 0..rank {
        next.p_a[r] = (1.0 - gamma) * state.p_a[r] + gamma * (ce + scale * total[r]);
        next.p_b[r] = (1.0 - gamma) * state.p_b[r] + gamma * (c1e + hyper.g);
        next.lambda_a[r] = (1.0 - gamma) * state.lambda_a[r] + gamma * (hyper.g + scale * total[r]);
        let ep = next.p_a[r] / (next.p_a[r] + next.p_b[r]);
        next.lambda_b[r] = (1.0 - gamma) * state.lambda_b[r] + gamma * ep;
    }
    next
}

/// CDF blend and conditional means given a fixed set of minibatch latent counts.
pub fn ref_cdf_update(
    dims: &[usize],
    rank: usize,
    css: &RefStats,
    batch: &[(Vec<usize>, Vec<f64>)],
    scale: f64,
    gamma: f64,
    hyper: &Hyperparams,
) -> (RefStats, Vec<Vec<Vec<f64>>>, Vec<f64>, Vec<f64>) {
    let (fresh, fresh_total) = ref_stats(dims, rank, batch);
    let mut per_mode = css.0.clone();
    let mut total = css.1.clone();
    for k in 0..dims.len() {
        for j in 0..dims[k] {
            for r in 0..rank {
                per_mode[k][j][r] = (1.0 - gamma) * per_mode[k][j][r] + gamma * scale * fresh[k][j][r];
            }
        }
    }
    for r in 0..rank {
        total[r] = (1.0 - gamma) * total[r] + gamma * scale * fresh_total[r];
    }
    // factors[k][j][r]
    let mut factors = Vec::new();
    for k in 0..dims.len() {
        let mut f = vec![vec![0.0; rank]; dims[k]];
        for r in 0..rank {
            let denom: f64 = (0..dims[k]).map(|j| hyper.a[k] + per_mode[k][j][r]).sum();
            for j in 0..dims[k] {
                f[j][r] = (hyper.a[k] + per_mode[k][j][r]) / denom;
            }
        }
        factors.push(f);
    }
    let mut p = Vec::new();
    let mut lambda = Vec::new();
    for r in 0..rank {
        let a = hyper.c * hyper.epsilon + total[r];
        let b = hyper.c * (1.0 - hyper.epsilon) + hyper.g;
        p.push(a / (a + b));
        lambda.push((hyper.g + total[r]) * a / (a + b));
    }
    ((per_mode, total), factors, p, lambda)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    let scale = 1.0f64.max(a.abs()).max(b.abs());
    assert!((a - b).abs() <= tol * scale, "{what}: {a} vs {b} (tol {tol})");
}

/// 2 × 3 × 4 fixture with counts spread over a few cells.
pub fn small_tensor() -> SparseCountTensor {
    let entries = vec![
        Entry::new(vec![0, 0, 0], 3),
        Entry::new(vec![0, 1, 2], 1),
        Entry::new(vec![1, 2, 3], 7),
        Entry::new(vec![1, 0, 1], 2),
        Entry::new(vec![0, 2, 3], 4),
        Entry::new(vec![1, 1, 0], 1),
    ];
    SparseCountTensor::new(TensorShape::new(vec![2, 3, 4]).unwrap(), entries).unwrap()
}

/// Hand-set model on the 2 × 3 × 4 fixture with R = 3.
pub fn small_model() -> ModelState {
    ModelState {
        factors: vec![
            Matrix::from_rows(&[vec![0.3, 0.6, 0.5], vec![0.7, 0.4, 0.5]]).unwrap(),
            Matrix::from_rows(&[vec![0.2, 0.1, 0.5], vec![0.3, 0.6, 0.25], vec![0.5, 0.3, 0.25]]).unwrap(),
            Matrix::from_rows(&[
                vec![0.1, 0.4, 0.25],
                vec![0.2, 0.3, 0.25],
                vec![0.3, 0.2, 0.25],
                vec![0.4, 0.1, 0.25],
            ])
            .unwrap(),
        ],
        lambda: vec![5.0, 2.5, 0.75],
        p: vec![0.4, 0.3, 0.2],
    }
}

pub fn small_variational() -> VariationalState {
    VariationalState {
        rho: vec![
            Matrix::from_rows(&[vec![1.5, 0.2, 3.0], vec![2.0, 0.7, 0.1]]).unwrap(),
            Matrix::from_rows(&[vec![0.4, 1.1, 2.0], vec![0.9, 0.3, 0.6], vec![2.2, 1.0, 0.5]]).unwrap(),
            Matrix::from_rows(&[vec![0.3, 0.8, 1.2], vec![1.7, 0.2, 0.4], vec![0.6, 2.5, 0.9], vec![1.1, 0.5, 3.3]])
                .unwrap(),
        ],
        p_a: vec![3.0, 1.2, 0.4],
        p_b: vec![2.0, 2.5, 1.9],
        lambda_a: vec![8.0, 3.5, 1.25],
        lambda_b: vec![0.6, 0.3, 0.15],
    }
}

/// Simplex (±1e−9), λ > 0, and p ∈ (0, 1) for a point estimate.
pub fn check_point_invariants(model: &ModelState) -> Result<(), String> {
    for (k, f) in model.factors.iter().enumerate() {
        if f.as_slice().iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
            return Err(format!("mode {k} has a negative or non-finite entry"));
        }
        for (r, s) in f.column_sums().iter().enumerate() {
            if (s - 1.0).abs() > 1e-9 {
                return Err(format!("mode {k} column {r} sums to {s}"));
            }
        }
    }
    if let Some(l) = model.lambda.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(format!("λ = {l}"));
    }
    if let Some(p) = model.p.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(format!("p = {p}"));
    }
    Ok(())
}

pub fn check_variational_invariants(state: &VariationalState) -> Result<(), String> {
    let all = state
        .rho
        .iter()
        .flat_map(|m| m.as_slice().iter())
        .chain(&state.p_a)
        .chain(&state.p_b)
        .chain(&state.lambda_a)
        .chain(&state.lambda_b);
    for &v in all {
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("variational parameter {v}"));
        }
    }
    check_point_invariants(&state.mean_model())
}

/// Column sums of every mode agree with the component totals.
pub fn check_stats_consistent(stats: &bnbcp::SufficientStats) -> Result<(), String> {
    let scale = stats.total.iter().cloned().fold(1.0, f64::max);
    let gap = stats.mode_inconsistency();
    if gap > 1e-9 * scale {
        return Err(format!("mode totals disagree by {gap}"));
    }
    Ok(())
}

/// Model where the mode-0 index alone decides the component, so the
/// sampled latent counts are deterministic and a reference can follow them.
pub fn degenerate_model() -> (SparseCountTensor, ModelState) {
    let entries = vec![
        Entry::new(vec![0, 0, 1], 4),
        Entry::new(vec![1, 2, 0], 2),
        Entry::new(vec![2, 1, 1], 5),
        Entry::new(vec![0, 2, 0], 1),
        Entry::new(vec![2, 0, 0], 3),
    ];
    let t = SparseCountTensor::new(TensorShape::new(vec![3, 3, 2]).unwrap(), entries).unwrap();
    let model = ModelState {
        factors: vec![
            Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.2, 0.3, 0.4], vec![0.3, 0.3, 0.4], vec![0.5, 0.4, 0.2]]).unwrap(),
            Matrix::from_rows(&[vec![0.6, 0.5, 0.1], vec![0.4, 0.5, 0.9]]).unwrap(),
        ],
        lambda: vec![3.0, 1.0, 2.0],
        p: vec![0.5, 0.5, 0.5],
    };
    (t, model)
}

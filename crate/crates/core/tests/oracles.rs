mod common;

use bnbcp::allocation::{
    accumulate_stats, allocation_probs_point, allocation_probs_vb, expected_stats, sampled_stats, Batch, Parallelism,
    VbAllocator, VbRule,
};
use bnbcp::evaluation::{heldout_loglik, heldout_mae, reconstruct_rate};
use bnbcp::online::{cdf_step, svi_step, SviOptions};
use bnbcp::rng::seeded_rng;
use bnbcp::vb::vb_iteration;
use bnbcp::*;
use common::*;

const EULER: f64 = 0.577_215_664_901_532_9;

fn harmonic(n: u32) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Ψ(n) for integer n ≥ 1.
fn psi_int(n: u32) -> f64 {
    harmonic(n - 1) - EULER
}

/// Ψ(n + 1/2) for integer n ≥ 0.
fn psi_half(n: u32) -> f64 {
    -EULER - 2.0 * std::f64::consts::LN_2 + (1..=n).map(|k| 2.0 / (2 * k - 1) as f64).sum::<f64>()
}

#[test]
fn point_allocation_two_component_example() {
    let model = ModelState {
        factors: vec![
            Matrix::from_rows(&[vec![0.5, 0.2], vec![0.5, 0.8]]).unwrap(),
            Matrix::from_rows(&[vec![0.1, 0.4], vec![0.9, 0.6]]).unwrap(),
        ],
        lambda: vec![2.0, 1.0],
        p: vec![0.5, 0.5],
    };
    // weights 2·0.5·0.1 = 0.1 and 1·0.2·0.4 = 0.08
    let z = allocation_probs_point(&[0, 0], &model).unwrap();
    assert!((z.as_slice()[0] - 5.0 / 9.0).abs() < 1e-12);
    assert!((z.as_slice()[1] - 4.0 / 9.0).abs() < 1e-12);
}

#[test]
fn point_allocation_matches_brute_force_everywhere() {
    let model = small_model();
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..4 {
                let got = allocation_probs_point(&[i, j, k], &model).unwrap();
                let want = ref_point_probs(&[i, j, k], &model);
                for (g, w) in got.as_slice().iter().zip(&want) {
                    assert_close(*g, *w, 1e-12, "point ζ");
                }
            }
        }
    }
}

#[test]
fn vb_allocation_against_closed_form_digamma() {
    // a = 0.5, g = 1, integer statistics: ρ is a half-integer, λ_a and
    // Σ_k ρ are integers, so every digamma has a closed form.
    let s_mode0 = [[2u32, 0], [1, 3]];
    let s_mode1 = [[0u32, 4], [3, 0]];
    let totals = [3u32, 3];
    let state = VariationalState {
        rho: vec![
            Matrix::from_rows(&[vec![2.5, 0.5], vec![1.5, 3.5]]).unwrap(),
            Matrix::from_rows(&[vec![0.5, 4.5], vec![3.5, 0.5]]).unwrap(),
        ],
        p_a: vec![0.5 + 3.0, 0.5 + 3.0],
        p_b: vec![0.5 + 1.0, 0.5 + 1.0],
        lambda_a: vec![1.0 + 3.0, 1.0 + 3.0],
        lambda_b: vec![0.7, 0.7],
    };
    for i in 0..2 {
        for j in 0..2 {
            let mut logw = [0.0; 2];
            for r in 0..2 {
                let e_p: f64 = 3.5 / 5.0;
                let across = s_mode0[i][r] + s_mode1[j][r] + 1;
                logw[r] = psi_int(1 + totals[r]) + e_p.ln() + psi_half(s_mode0[i][r]) + psi_half(s_mode1[j][r])
                    - psi_int(across);
            }
            let m = logw[0].max(logw[1]);
            let e = [(logw[0] - m).exp(), (logw[1] - m).exp()];
            let got = allocation_probs_vb(&[i, j], &state).unwrap();
            for r in 0..2 {
                assert_close(got.as_slice()[r], e[r] / (e[0] + e[1]), 1e-12, "vb ζ closed form");
            }
        }
    }
}

#[test]
fn vb_allocation_matches_brute_force() {
    let state = small_variational();
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..4 {
                let got = allocation_probs_vb(&[i, j, k], &state).unwrap();
                let want = ref_vb_probs(&[i, j, k], &state);
                for (g, w) in got.as_slice().iter().zip(&want) {
                    assert_close(*g, *w, 1e-10, "vb ζ");
                }
            }
        }
    }
}

#[test]
fn mean_field_rule_uses_column_totals() {
    let state = small_variational();
    let alloc = VbAllocator::new(&state, VbRule::MeanField).unwrap();
    let mut got = vec![0.0; 3];
    alloc.log_weights_into(&[1, 2, 0], &mut got).unwrap();
    for r in 0..3 {
        let mut want = statrs::function::gamma::digamma(state.lambda_a[r]) + state.lambda_b[r].ln();
        for (k, &i) in [1usize, 2, 0].iter().enumerate() {
            let col: f64 = state.rho[k].column(r).iter().sum();
            want += statrs::function::gamma::digamma(state.rho[k].get(i, r)) - statrs::function::gamma::digamma(col);
        }
        assert_close(got[r], want, 1e-10, "mean-field log weight");
    }
}

#[test]
fn rate_loglik_and_mae_match_brute_force() {
    let model = small_model();
    let t = small_tensor();
    for e in t.entries() {
        assert_close(reconstruct_rate(&e.index, &model), ref_rate(&e.index, &model), 1e-12, "rate");
    }
    assert_close(heldout_loglik(&t, &model), ref_loglik(&t.entries(), &model), 1e-10, "loglik");
    assert_close(heldout_mae(&t, &model), ref_mae(&t.entries(), &model), 1e-12, "mae");
    let empty = SparseCountTensor::empty(t.shape().clone());
    assert_eq!(heldout_mae(&empty, &model), 0.0);
    assert_eq!(heldout_loglik(&empty, &model), 0.0);
}

#[test]
fn loglik_floors_vanishing_rates() {
    let mut model = small_model();
    // every mode-0 column puts all its mass on row 1, so any cell in row 0
    // has rate exactly zero
    model.factors[0] = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
    let t =
        SparseCountTensor::new(TensorShape::new(vec![2, 3, 4]).unwrap(), vec![Entry::new(vec![0, 0, 0], 2)]).unwrap();
    let want = 2.0 * 1e-12f64.ln() - 1e-12 - 2f64.ln();
    assert_close(heldout_loglik(&t, &model), want, 1e-12, "floored loglik");
}

#[test]
fn accumulate_stats_matches_double_loop() {
    let items: Vec<(Vec<usize>, Vec<f64>)> = vec![
        (vec![0, 1, 2], vec![1.0, 0.0, 2.0]),
        (vec![1, 1, 3], vec![0.5, 0.25, 0.25]),
        (vec![0, 2, 2], vec![3.0, 1.0, 0.0]),
        (vec![0, 1, 2], vec![0.0, 4.0, 1.0]),
    ];
    let dims = [2, 3, 4];
    let got = accumulate_stats(&dims, 3, items.iter().map(|(i, l)| (i.as_slice(), l.as_slice())));
    let (want, total) = ref_stats(&dims, 3, &items);
    for k in 0..3 {
        assert_eq!(got.per_mode[k].to_rows(), want[k]);
    }
    assert_eq!(got.total, total);
}

#[test]
fn expected_stats_match_reference_probabilities() {
    let state = small_variational();
    let t = small_tensor();
    let alloc = VbAllocator::new(&state, VbRule::Printed).unwrap();
    let got = expected_stats(&t, Batch::All, &alloc, &Parallelism::serial()).unwrap();
    let items: Vec<_> = t
        .entries()
        .into_iter()
        .map(|e| {
            let z = ref_vb_probs(&e.index, &state);
            (e.index.clone(), z.iter().map(|p| e.count as f64 * p).collect::<Vec<_>>())
        })
        .collect();
    let (want, total) = ref_stats(&[2, 3, 4], 3, &items);
    for k in 0..3 {
        for (g, w) in got.per_mode[k].to_rows().iter().flatten().zip(want[k].iter().flatten()) {
            assert_close(*g, *w, 1e-10, "expected stats");
        }
    }
    for (g, w) in got.total.iter().zip(&total) {
        assert_close(*g, *w, 1e-10, "expected totals");
    }
}

#[test]
fn svi_step_matches_reference_script() {
    let t = small_tensor();
    let hyper = Hyperparams::with_defaults(3, 3);
    for (gamma, positions) in [(0.5, vec![0usize, 2, 5]), (0.3, vec![4, 4, 1]), (1.0, vec![3])] {
        let start = small_variational();
        let want = ref_svi_step(&t, &positions, &start, gamma, &hyper);
        let mut got = start.clone();
        svi_step(&t, &positions, &mut got, gamma, &hyper, SviOptions::default(), &Parallelism::serial()).unwrap();
        for k in 0..3 {
            for (g, w) in got.rho[k].as_slice().iter().zip(want.rho[k].as_slice()) {
                assert_close(*g, *w, 1e-10, "svi ρ");
            }
        }
        for (g, w) in [
            (&got.p_a, &want.p_a),
            (&got.p_b, &want.p_b),
            (&got.lambda_a, &want.lambda_a),
            (&got.lambda_b, &want.lambda_b),
        ] {
            for (a, b) in g.iter().zip(w.iter()) {
                assert_close(*a, *b, 1e-10, "svi scalar");
            }
        }
    }
}

#[test]
fn cdf_step_matches_reference_script() {
    let (t, mut model) = degenerate_model();
    let hyper = Hyperparams::with_defaults(3, 3);
    let dims = [3usize, 3, 2];
    let mut css = SufficientStats::zeros(&dims, 3);
    css.add(&[1, 1, 1], &[0.5, 1.5, 0.25]);
    let mut ref_css: RefStats = (css.per_mode.iter().map(|m| m.to_rows()).collect(), css.total.clone());
    let mut rng = seeded_rng(4);
    for (gamma, positions) in [(0.5, vec![0usize, 2]), (0.25, vec![1, 3, 4]), (0.7, vec![2, 2])] {
        let batch: Vec<(Vec<usize>, Vec<f64>)> = positions
            .iter()
            .map(|&n| {
                let idx = t.index(n).to_vec();
                let mut latent = vec![0.0; 3];
                latent[idx[0]] = t.count(n) as f64;
                (idx, latent)
            })
            .collect();
        let scale = t.nnz() as f64 / positions.len() as f64;
        let (next_css, factors, p, lambda) = ref_cdf_update(&dims, 3, &ref_css, &batch, scale, gamma, &hyper);
        cdf_step(&t, &positions, &mut model, &mut css, gamma, &hyper, &mut rng, &Parallelism::serial()).unwrap();
        for k in 0..3 {
            for (g, w) in css.per_mode[k].to_rows().iter().flatten().zip(next_css.0[k].iter().flatten()) {
                assert_close(*g, *w, 1e-12, "cdf css");
            }
            for (g, w) in model.factors[k].to_rows().iter().flatten().zip(factors[k].iter().flatten()) {
                assert_close(*g, *w, 1e-12, "cdf factor");
            }
        }
        for r in 0..3 {
            assert_close(css.total[r], next_css.1[r], 1e-12, "cdf total");
            assert_close(model.p[r], p[r], 1e-12, "cdf p");
            assert_close(model.lambda[r], lambda[r], 1e-12, "cdf λ");
        }
        ref_css = next_css;
        // after the first step the means are no longer degenerate; restore
        // the routing so the next minibatch stays deterministic
        model.factors[0] = degenerate_model().1.factors[0].clone();
    }
}

#[test]
fn full_batch_unit_step_reduces_to_batch_updates() {
    let t = small_tensor();
    let hyper = Hyperparams::with_defaults(3, 3);
    let all: Vec<usize> = (0..t.nnz()).collect();
    let par = Parallelism::serial();

    let mut online = small_variational();
    svi_step(&t, &all, &mut online, 1.0, &hyper, SviOptions::default(), &par).unwrap();
    let mut batch = small_variational();
    vb_iteration(&t, &mut batch, &hyper, VbRule::Printed, &par).unwrap();
    assert_eq!(online, batch);

    let model = small_model();
    let mut css = SufficientStats::zeros(&[2, 3, 4], 3);
    css.add(&[0, 0, 0], &[9.0, 9.0, 9.0]);
    let mut m = model.clone();
    cdf_step(&t, &all, &mut m, &mut css, 1.0, &hyper, &mut seeded_rng(8), &par).unwrap();
    let fresh = sampled_stats(&t, Batch::All, &model, &mut seeded_rng(8), &par).unwrap();
    assert_eq!(css, fresh);
}

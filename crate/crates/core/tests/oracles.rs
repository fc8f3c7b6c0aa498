mod common;

use common::*;
use nalgebra::DVector;
use sharpfactor::directional::{gradient, second_directional};
use sharpfactor::factors::{loss, partial_products, product, DimSignature, FactorChain, Target};
use sharpfactor::hessian_oracle::{assemble_k, dense_hessian_at_minimum, fd_dense_hessian, DEFAULT_ENTRY_CAP, FD_STEP};
use sharpfactor::linalg::{sorted_symmetric_eigen, sigma_max};
use sharpfactor::sharpness::{apply_kron_sum, lambda_max_general, lambda_max_scalar_chain, KronSumOperator};
use sharpfactor::Direction;

#[test]
fn partial_products_recompose_the_product() {
    for seed in 0..10 {
        let (c, _) = small_minimizer(seed);
        let p = product(&c);
        let pp = partial_products(&c);
        for k in 0..c.depth() {
            let r = &pp.above[k] * c.factor(k) * &pp.below[k];
            assert!((&r - &p).norm() <= 1e-12 * p.norm().max(1e-300), "seed {seed} k {k}");
        }
    }
}

#[test]
fn loss_matches_entrywise_sum() {
    for seed in 0..5 {
        let (c, t) = off_minimum(seed, 0.1);
        let p = product(&c);
        let mut s = 0.0;
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let d = t.matrix()[(i, j)] - p[(i, j)];
                s += d * d;
            }
        }
        assert!(rel(loss(&c, &t).unwrap(), s) <= 1e-12);
    }
}

#[test]
fn minimizers_have_zero_loss_and_gradient() {
    for seed in 0..20 {
        let (c, t) = small_minimizer(seed);
        assert!(loss(&c, &t).unwrap() <= 1e-12 * t.frobenius_sq());
        let g = gradient(&c, &t).unwrap();
        assert!(g.flatten().amax() <= 1e-10 * t.frobenius_sq().sqrt());
    }
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..10 {
        let (c, t) = off_minimum(seed, 0.3);
        let g = gradient(&c, &t).unwrap().flatten();
        let fd = fd_gradient(&c, &t, 1e-6);
        for j in 0..g.len() {
            let err = (g[j] - fd[j]).abs();
            assert!(err <= 1e-5 * g[j].abs().max(1.0), "seed {seed} coord {j}: {} vs {}", g[j], fd[j]);
        }
    }
}

#[test]
fn second_directional_matches_second_difference() {
    for seed in 0..10 {
        for (c, t) in [off_minimum(seed, 0.3), small_minimizer(seed)] {
            let u = random_direction(&c, seed + 77);
            let exact = second_directional(&c, &t, &u).unwrap();
            let fd = second_difference(&c, &t, &u, 1e-4);
            assert!(rel(exact, fd) <= 1e-4, "seed {seed}: {exact} vs {fd}");
        }
    }
}

#[test]
fn cross_term_matters_off_the_minimizer_set() {
    let (c, t) = off_minimum(3, 0.5);
    let u = random_direction(&c, 1);
    let full = second_directional(&c, &t, &u).unwrap();
    let gauss_newton = 2.0 * first_order_response(&c, &u).norm_squared();
    assert!(rel(full, gauss_newton) > 1e-3);
}

#[test]
fn kron_sum_operator_matches_dense_kronecker_sum() {
    for seed in 0..10 {
        let (c, _) = small_minimizer(seed);
        let op = KronSumOperator::from_chain(&c);
        let (r, k) = op.shape();
        let dense = dense_kron_sum(&c);
        let u = random_direction(&c, seed);
        let x = Mat::from_fn(r, k, |i, j| u.flatten()[(i * 7 + j * 3) % u.flatten().len()] + 0.25);
        let y = apply_kron_sum(&op, &x).unwrap();
        let want = &dense * DVector::from_column_slice(x.as_slice());
        let got = DVector::from_column_slice(y.as_slice());
        assert!((&got - &want).norm() <= 1e-12 * want.norm(), "seed {seed}");
    }
}

#[test]
fn kron_sum_unrolled_at_depth_two() {
    let (c, _) = make_depth2(4);
    let op = KronSumOperator::from_chain(&c);
    let (w1, w2) = (c.factor(0), c.factor(1));
    let x = Mat::from_fn(op.shape().0, op.shape().1, |i, j| (i as f64) - 0.5 * j as f64);
    let want = w2 * w2.transpose() * &x + &x * w1.transpose() * w1;
    let got = op.apply(&x).unwrap();
    assert!((&got - &want).norm() <= 1e-12 * want.norm());
}

fn make_depth2(seed: u64) -> (FactorChain, Target) {
    let sig = DimSignature::new(vec![3, 5, 4]).unwrap();
    sharpfactor::factors::make_minimizer(&sig, seed, Default::default()).unwrap()
}

#[test]
fn k_applies_the_first_order_response() {
    for seed in 0..10 {
        let (c, t) = small_minimizer(seed);
        let k = assemble_k(&c, &t, DEFAULT_ENTRY_CAP).unwrap();
        let u = random_direction(&c, seed + 5);
        let ku = &k.dense * u.flatten();
        let want = first_order_response(&c, &u);
        assert!((&ku - &want).norm() <= 1e-12 * want.norm().max(1e-300), "seed {seed}");
    }
}

#[test]
fn fd_hessian_matches_gauss_newton_at_minima() {
    for seed in 0..10 {
        let (c, t) = small_minimizer(seed);
        let h = dense_hessian_at_minimum(&c, &t, DEFAULT_ENTRY_CAP).unwrap();
        let fd = fd_dense_hessian(&c, &t, FD_STEP, DEFAULT_ENTRY_CAP).unwrap();
        for (a, b) in h.matrix.iter().zip(fd.matrix.iter()) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn fd_hessian_quadratic_form_off_minimum() {
    for seed in 0..5 {
        let (c, t) = off_minimum(seed, 0.3);
        let fd = fd_dense_hessian(&c, &t, FD_STEP, DEFAULT_ENTRY_CAP).unwrap();
        let u = random_direction(&c, seed + 9);
        let v = u.flatten();
        let q = v.dot(&(&fd.matrix * &v));
        let exact = second_directional(&c, &t, &u).unwrap();
        assert!(rel(q, exact) <= 1e-4, "seed {seed}: {q} vs {exact}");
    }
}

#[test]
fn spectral_consistency_between_k_and_kron_sum() {
    for seed in 0..10 {
        let (c, t) = small_minimizer(seed);
        let h = dense_hessian_at_minimum(&c, &t, DEFAULT_ENTRY_CAP).unwrap();
        let (vals, _) = sorted_symmetric_eigen(&dense_kron_sum(&c));
        assert!(rel(h.lambda_max(), 2.0 * vals[0]) <= 1e-10, "seed {seed}");
        let general = lambda_max_general(&c, &t).unwrap().lambda_max;
        assert!(rel(general, h.lambda_max()) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn extreme_eigenvectors_as_directions() {
    for seed in 0..10 {
        let (c, t) = small_minimizer(seed);
        let h = dense_hessian_at_minimum(&c, &t, DEFAULT_ENTRY_CAP).unwrap();
        let sig = c.signature();
        let v1 = Direction::from_flat(sig, h.top_eigenvector().unwrap().as_slice()).unwrap();
        let vn = Direction::from_flat(sig, h.bottom_eigenvector().unwrap().as_slice()).unwrap();
        let l = h.lambda_max();
        assert!(rel(second_directional(&c, &t, &v1).unwrap(), l) <= 1e-8);
        assert!(second_directional(&c, &t, &vn).unwrap() <= 1e-8 * l);
    }
}

#[test]
fn scalar_k_is_a_row_and_its_gram_is_lambda() {
    let sig = DimSignature::new(vec![1, 3, 4, 2, 1]).unwrap();
    let (c, t) = sharpfactor::factors::make_minimizer(&sig, 12, Default::default()).unwrap();
    let k = assemble_k(&c, &t, DEFAULT_ENTRY_CAP).unwrap();
    assert_eq!(k.dense.nrows(), 1);
    let kk = (&k.dense * k.dense.transpose())[(0, 0)];
    let lam = lambda_max_scalar_chain(&c, &t).unwrap().lambda_max;
    assert!(rel(2.0 * kk, lam) <= 1e-12);
    // and each block norm is σ(A_i)σ(B_i)
    let pp = partial_products(&c);
    for (blk, (a, b)) in k.blocks.iter().zip(pp.above.iter().zip(&pp.below)) {
        assert!(rel(blk.norm(), sigma_max(a) * sigma_max(b)) <= 1e-12);
    }
}

use rnla_core::decomp::{cqrrpt, rsvd};
use rnla_core::linalg::{matmul, matmul_nt, matmul_tn, orthonormalize, svd_small};
use rnla_core::rng::SeededRng;
use rnla_core::Matrix;

fn orth_residual(q: &Matrix) -> f64 {
    matmul_tn(q, q).unwrap().sub(&Matrix::identity(q.cols())).unwrap().frobenius_norm()
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    orthonormalize(&Matrix::random_normal(rows, cols, rng)).unwrap()
}

/// `U · diag(s) · Vᵀ` with random orthonormal factors.
fn with_spectrum(m: usize, n: usize, s: &[f64], seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let u = random_orthonormal(m, s.len(), &mut rng);
    let v = random_orthonormal(n, s.len(), &mut rng);
    let us = Matrix::from_fn(m, s.len(), |i, j| u[(i, j)] * s[j]);
    matmul_nt(&us, &v).unwrap()
}

#[test]
fn rsvd_recovers_exact_low_rank() {
    for (m, n, r, seed) in [(300, 120, 5, 1), (120, 300, 12, 2), (200, 200, 20, 3)] {
        let mut rng = SeededRng::new(seed);
        let a = matmul(&Matrix::random_normal(m, r, &mut rng), &Matrix::random_normal(r, n, &mut rng)).unwrap();
        let res = rsvd(&a, r, 8, 1, seed).unwrap();
        let err = res.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-8, "{m}x{n} rank {r}: {err:e}");
        assert!(orth_residual(&res.u) <= 1e-10);
        assert!(orth_residual(&res.v) <= 1e-10);
    }
}

#[test]
fn rsvd_near_optimal_on_decaying_spectrum() {
    let (m, n, k) = (400, 150, 10);
    let s: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
    let optimal = s[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
    for (oversample, seed) in [(5, 11), (8, 12), (5, 13), (8, 14), (10, 15)] {
        let a = with_spectrum(m, n, &s, seed);
        let res = rsvd(&a, k, oversample, 1, seed + 100).unwrap();
        let err = res.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err >= optimal * (1.0 - 1e-9), "p={oversample}: {err:e} below optimum {optimal:e}");
        assert!(err <= 1.5 * optimal, "p={oversample}: {err:e} vs optimum {optimal:e}");
        for (got, want) in res.s.iter().zip(&s) {
            assert!((got - want).abs() <= 1e-3 * want);
        }
    }
}

#[test]
fn rsvd_values_match_dense_svd() {
    let mut rng = SeededRng::new(8);
    let a = Matrix::random_normal(80, 40, &mut rng);
    let (_, s_ref, _) = svd_small(&a);
    let res = rsvd(&a, 5, 8, 2, 0).unwrap();
    for (got, want) in res.s.iter().zip(&s_ref) {
        assert!(*got <= want * (1.0 + 1e-10));
    }
    assert!(res.s.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn cqrrpt_tall_full_rank() {
    let mut rng = SeededRng::new(2000);
    let a = Matrix::random_normal(2000, 50, &mut rng);
    let res = cqrrpt(&a, 4.0, 1e-12, 7).unwrap();
    assert_eq!(res.rank, 50);
    assert!(orth_residual(&res.q) <= 1e-8);
    let resid = matmul(&res.q, &res.r_mat).unwrap().sub(&a.select_cols(&res.pivots)).unwrap().frobenius_norm();
    assert!(resid <= 1e-8 * a.frobenius_norm(), "{resid:e}");
    let mut sorted = res.pivots.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
}

#[test]
fn cqrrpt_rank_matches_svd_oracle() {
    for (r, seed) in [(3, 1), (10, 2), (25, 3), (40, 4)] {
        let mut rng = SeededRng::new(seed);
        let a = matmul(&Matrix::random_normal(500, r, &mut rng), &Matrix::random_normal(r, 40, &mut rng)).unwrap();
        let (_, s, _) = svd_small(&a);
        let oracle = s.iter().filter(|&&x| x > 1e-8 * s[0]).count();
        assert_eq!(oracle, r);
        let res = cqrrpt(&a, 4.0, 1e-8, seed).unwrap();
        assert_eq!(res.rank, oracle, "rank {r}");
        assert!(orth_residual(&res.q) <= 1e-8);
        let resid = matmul(&res.q, &res.r_mat).unwrap().sub(&a.select_cols(&res.pivots)).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * a.frobenius_norm(), "rank {r}: {resid:e}");
    }
}

#[test]
fn decompositions_are_seed_deterministic() {
    let mut rng = SeededRng::new(4);
    let a = Matrix::random_normal(300, 30, &mut rng);
    let r1 = rsvd(&a, 6, 8, 1, 99).unwrap();
    let r2 = rsvd(&a, 6, 8, 1, 99).unwrap();
    assert_eq!(r1.u.as_slice(), r2.u.as_slice());
    assert_eq!(r1.s, r2.s);
    let c1 = cqrrpt(&a, 4.0, 1e-12, 5).unwrap();
    let c2 = cqrrpt(&a, 4.0, 1e-12, 5).unwrap();
    assert_eq!(c1.pivots, c2.pivots);
    assert_eq!(c1.r_mat.as_slice(), c2.r_mat.as_slice());
}

use super::*;
use crate::rng::SeedTree;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn dense(m: &PrecisionMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    let n = d.len();
    DMatrix::from_fn(n, n, |i, j| d[i][j])
}

fn p3() -> SpatialGraph {
    SpatialGraph::path(3).unwrap()
}

fn k3() -> SpatialGraph {
    SpatialGraph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
}

fn assert_dense_eq(m: &PrecisionMatrix, expected: &[[f64; 3]; 3]) {
    let d = m.to_dense();
    for i in 0..3 {
        for j in 0..3 {
            assert!(
                (d[i][j] - expected[i][j]).abs() < 1e-15,
                "entry ({i},{j}): {} vs {}",
                d[i][j],
                expected[i][j]
            );
        }
    }
}

/// Random connected-ish graph: a spanning path plus random chords.
fn random_graph<R: Rng>(rng: &mut R, n: usize) -> SpatialGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            edges.push((i, j));
        }
    }
    SpatialGraph::new(n, edges).unwrap()
}

#[test]
fn leroux_limits() {
    let g = p3();
    assert_dense_eq(
        &build_leroux_precision(&g, 0.0).unwrap(),
        &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    );
    assert_dense_eq(
        &build_leroux_precision(&g, 1.0).unwrap(),
        &[[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]],
    );
    assert_dense_eq(
        &build_leroux_precision(&g, 0.5).unwrap(),
        &[[1.0, -0.5, 0.0], [-0.5, 1.5, -0.5], [0.0, -0.5, 1.0]],
    );
    assert!(matches!(
        build_leroux_precision(&g, 1.2),
        Err(Error::ParameterOutOfRange { .. })
    ));
}

#[test]
fn congdon_entries() {
    let g = p3();
    assert_dense_eq(
        &build_congdon_precision(&g, 0.5, &[2.0, 1.0, 1.0]).unwrap(),
        &[[2.0, -1.0, 0.0], [-1.0, 1.5, -0.5], [0.0, -0.5, 1.0]],
    );
    assert_dense_eq(
        &build_congdon_precision(&g, 0.0, &[2.0, 3.0, 4.0]).unwrap(),
        &[[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 4.0]],
    );
    assert_eq!(
        build_congdon_precision(&g, 0.5, &[1.0, 0.0, 1.0]),
        Err(Error::NonPositiveKappa {
            index: 1,
            value: 0.0
        })
    );
}

#[test]
fn congdon_can_lose_definiteness() {
    // Large kappa contrasts make the quadratic off-diagonal terms dominate.
    let g = p3();
    let q = build_congdon_precision(&g, 0.99, &[0.05, 20.0, 0.05]).unwrap();
    let ok = build_congdon_precision(&g, 0.5, &[1.2, 0.8, 1.0]).unwrap();
    assert!(ok.is_positive_definite());
    // Dense oracle agrees with the factorization verdict.
    let eig = dense(&q).symmetric_eigen().eigenvalues;
    assert_eq!(q.is_positive_definite(), eig.min() > 0.0);
}

#[test]
fn pcar_scale_closed_forms() {
    let pcar = build_scaled_pcar_precision(&p3(), 0.0).unwrap();
    assert!((pcar.scale - 2f64.powf(-1.0 / 3.0)).abs() < 1e-14);
    assert!((pcar.scale - 0.793_700_525_984_1).abs() < 1e-12);

    let ring = SpatialGraph::ring(7).unwrap();
    let pcar = build_scaled_pcar_precision(&ring, 0.0).unwrap();
    assert!((pcar.scale - 0.5).abs() < 1e-14);

    let g = k3();
    let pcar = build_scaled_pcar_precision(&g, 0.5).unwrap();
    let unscaled = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, -0.5, -0.5, -0.5, 2.0, -0.5, -0.5, -0.5, 2.0]);
    let inv = unscaled.try_inverse().unwrap();
    let h = ((0..3).map(|i| inv[(i, i)].ln()).sum::<f64>() / 3.0).exp();
    assert!((pcar.scale - h).abs() < 1e-14);
    assert!((pcar.precision.get(0, 1) + 0.5 * h).abs() < 1e-14);
}

#[test]
fn pcar_rejects_isolated_and_bad_rho() {
    let g = SpatialGraph::new(3, [(0, 1)]).unwrap();
    assert_eq!(
        build_scaled_pcar_precision(&g, 0.5).unwrap_err(),
        Error::IsolatedArea(2)
    );
    assert!(build_scaled_pcar_precision(&p3(), 1.0).is_err());
    assert_eq!(
        build_scaled_pcar_precision_capped(&p3(), 0.5, 2).unwrap_err(),
        Error::TooLargeForDenseInverse { n: 3, cap: 2 }
    );
}

#[test]
fn cholesky_identity_and_singular() {
    let g = p3();
    let id = build_leroux_precision(&g, 0.0).unwrap();
    let f = id.cholesky().unwrap();
    assert_eq!(f.log_det(), 0.0);
    let l = f.dense_factor();
    for (i, row) in l.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, if i == j { 1.0 } else { 0.0 });
        }
    }
    let icar = build_leroux_precision(&g, 1.0).unwrap();
    assert!(matches!(
        icar.cholesky(),
        Err(Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn cholesky_log_det_matches_dense_determinant() {
    let q = build_leroux_precision(&p3(), 0.5).unwrap();
    let det = dense(&q).determinant();
    assert!((q.cholesky().unwrap().log_det() - det.ln()).abs() < 1e-12);
}

#[test]
fn log_density_special_cases() {
    let g = SpatialGraph::new(1, []).unwrap();
    let q = build_leroux_precision(&g, 0.0).unwrap();
    let v = gmrf_log_density(&[0.3], &[0.3], &q, 1.0).unwrap();
    assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);

    let q = build_leroux_precision(&p3(), 0.5).unwrap();
    let sigma = 0.7;
    let x = [0.1, -0.2, 0.4];
    let v = gmrf_log_density(&x, &x, &q, sigma).unwrap();
    let logdet = q.cholesky().unwrap().log_det() - 6.0 * sigma.ln();
    assert!((v - (-1.5 * LN_2PI + 0.5 * logdet)).abs() < 1e-13);
}

fn dense_mvn_log_density(x: &[f64], mean: &[f64], p: &DMatrix<f64>, sigma: f64) -> f64 {
    let n = x.len();
    let prec = p / (sigma * sigma);
    let cov = prec.clone().try_inverse().unwrap();
    let d = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
    let q = (d.transpose() * cov.clone().try_inverse().unwrap() * &d)[(0, 0)];
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * q
}

#[test]
fn log_density_matches_dense_oracle() {
    let q = build_leroux_precision(&p3(), 0.5).unwrap();
    let mut rng = SeedTree::new(3).rng();
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = gmrf_log_density(&x, &m, &q, 0.3).unwrap();
        let oracle = dense_mvn_log_density(&x, &m, &dense(&q), 0.3);
        assert!((fast - oracle).abs() < 1e-10, "{fast} vs {oracle}");
    }
}

#[test]
fn selected_inverse_matches_dense_inverse() {
    let mut rng = SeedTree::new(11).rng();
    for n in [1usize, 2, 5, 9, 14] {
        let g = random_graph(&mut rng, n);
        let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.3)).collect();
        let q = build_congdon_precision(&g, 0.6, &kappa).unwrap();
        let sel = q.cholesky().unwrap().selected_inverse();
        let inv = dense(&q).try_inverse().unwrap();
        for i in 0..n {
            assert!((sel.get(i, i).unwrap() - inv[(i, i)]).abs() < 1e-12);
            for &j in g.neighbors(i) {
                assert!((sel.get(i, j).unwrap() - inv[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn solve_matches_dense() {
    let mut rng = SeedTree::new(5).rng();
    let g = random_graph(&mut rng, 10);
    let q = build_leroux_precision(&g, 0.8).unwrap();
    let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = q.cholesky().unwrap().solve(&b);
    let back = q.mul_vec(&x);
    for (u, v) in back.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_deterministic() {
    let q = build_leroux_precision(&p3(), 0.7).unwrap();
    let a = sample_gmrf(&mut SeedTree::new(9).rng(), &[0.0; 3], &q, 0.3).unwrap();
    let b = sample_gmrf(&mut SeedTree::new(9).rng(), &[0.0; 3], &q, 0.3).unwrap();
    assert_eq!(a, b);
}

fn empirical_moments(draws: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = draws[0].len();
    let s = draws.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / s).collect();
    let mut cov = DMatrix::zeros(n, n);
    for d in draws {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += (d[i] - mean[i]) * (d[j] - mean[j]);
            }
        }
    }
    (mean, cov / (s - 1.0))
}

#[test]
fn iid_draws_have_identity_covariance() {
    let g = SpatialGraph::new(4, []).unwrap();
    let q = build_leroux_precision(&g, 0.0).unwrap();
    let f = q.cholesky().unwrap();
    let mut rng = SeedTree::new(21).rng();
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_factored(&mut rng, &[0.0; 4], &f, 1.0)).collect();
    let (_, cov) = empirical_moments(&draws);
    let err = (cov - DMatrix::identity(4, 4)).abs().max();
    assert!(err < 0.05, "max abs error {err}");
}

#[test]
fn leroux_draws_match_covariance_and_mean() {
    let q = build_leroux_precision(&p3(), 0.7).unwrap();
    let f = q.cholesky().unwrap();
    let sigma = 0.3;
    let mean = [0.5, -1.0, 2.0];
    let mut rng = SeedTree::new(22).rng();
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_factored(&mut rng, &mean, &f, sigma)).collect();
    let (m, cov) = empirical_moments(&draws);
    let target = dense(&q).try_inverse().unwrap() * (sigma * sigma);
    let rel = (&cov - &target).norm() / target.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
    for i in 0..3 {
        let se = (target[(i, i)] / draws.len() as f64).sqrt();
        assert!((m[i] - mean[i]).abs() < 4.0 * se);
    }
}

/// Conditional moments of component `k` of `N(0, Λ^{-1})` given the rest,
/// computed from the covariance partition.
fn dense_conditional(lambda_joint: &DMatrix<f64>, x: &DVector<f64>, k: usize) -> (f64, f64) {
    let m = lambda_joint.nrows();
    let cov = lambda_joint.clone().try_inverse().unwrap();
    let rest: Vec<usize> = (0..m).filter(|&r| r != k).collect();
    let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| cov[(rest[a], rest[b])]);
    let s_kr = DMatrix::from_fn(1, rest.len(), |_, b| cov[(k, rest[b])]);
    let x_r = DVector::from_iterator(rest.len(), rest.iter().map(|&r| x[r]));
    let w = &s_kr * s_rr.try_inverse().unwrap();
    let mean = (&w * x_r)[(0, 0)];
    let var = cov[(k, k)] - (&w * s_kr.transpose())[(0, 0)];
    (mean, var)
}

fn stacked_joint(q: &DMatrix<f64>, alpha: f64, sigma: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    let s2 = sigma * sigma;
    for i in 0..n {
        for j in 0..n {
            joint[(i, j)] = (1.0 + alpha * alpha) * q[(i, j)] / s2;
            joint[(i, n + j)] = -alpha * q[(i, j)] / s2;
            joint[(n + i, j)] = -alpha * q[(i, j)] / s2;
            joint[(n + i, n + j)] = q[(i, j)] / s2;
        }
    }
    joint
}

#[test]
fn conditional_moment_reductions() {
    let g = p3();
    let b = AreaTime::from_rows(&[vec![0.2, 0.5], vec![-0.1, 0.3], vec![0.4, -0.6]]).unwrap();
    let kappa = [2.0, 1.0, 0.5];
    let (m, v) = conditional_moments_congdon(1, 1, &b, 0.8, 0.0, 0.3, &kappa, &g).unwrap();
    assert!((m - 0.8 * -0.1).abs() < 1e-15);
    assert!((v - 0.09 / 1.0).abs() < 1e-15);

    let ones = [1.0; 3];
    let (m, v) = conditional_moments_congdon(1, 1, &b, 0.0, 0.6, 0.3, &ones, &g).unwrap();
    let leroux = 0.6 / (0.4 + 0.6 * 2.0) * (0.5 + -0.6);
    assert!((m - leroux).abs() < 1e-15);
    assert!((v - 0.09 / 1.6).abs() < 1e-15);
}

#[test]
fn conditional_moments_match_dense_conditioning_on_p3() {
    let g = p3();
    let kappa = [2.0, 1.0, 1.0];
    let (alpha, lambda, sigma) = (0.85, 0.7, 0.3);
    let q = dense(&build_congdon_precision(&g, lambda, &kappa).unwrap());
    let joint = stacked_joint(&q, alpha, sigma);
    let mut rng = SeedTree::new(8).rng();
    let rows: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let b = AreaTime::from_rows(&rows).unwrap();
    let x = DVector::from_column_slice(b.as_slice());
    for i in 0..3 {
        let (m, v) = conditional_moments_congdon(i, 1, &b, alpha, lambda, sigma, &kappa, &g).unwrap();
        let (mo, vo) = dense_conditional(&joint, &x, 3 + i);
        assert!((m - mo).abs() < 1e-9 && (v - vo).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn congdon_with_unit_kappa_is_leroux(seed in any::<u64>(), n in 1usize..13, lambda in 0.0f64..=1.0) {
        let g = random_graph(&mut SeedTree::new(seed).rng(), n);
        let a = build_congdon_precision(&g, lambda, &vec![1.0; n]).unwrap();
        let b = build_leroux_precision(&g, lambda).unwrap();
        prop_assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn factor_reconstructs(seed in any::<u64>(), n in 1usize..13, lambda in 0.0f64..0.99) {
        let mut rng = SeedTree::new(seed).rng();
        let g = random_graph(&mut rng, n);
        let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.25)).collect();
        let q = build_congdon_precision(&g, lambda, &kappa).unwrap();
        if let Ok(f) = q.cholesky() {
            let back = f.reconstruct();
            let d = q.to_dense();
            for i in 0..n {
                for j in 0..n {
                    let scale = d[i][j].abs().max(1.0);
                    prop_assert!((back[i][j] - d[i][j]).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn log_density_and_conditionals_match_oracles(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = SeedTree::new(seed).rng();
        let g = random_graph(&mut rng, n);
        let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.5)).collect();
        let lambda = rng.random_range(0.0..0.95);
        let alpha = rng.random_range(-0.99..0.99);
        let sigma = rng.random_range(0.1..2.0);
        let q = build_congdon_precision(&g, lambda, &kappa).unwrap();
        prop_assume!(q.is_positive_definite());
        let qd = dense(&q);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = gmrf_log_density(&x, &m, &q, sigma).unwrap();
        prop_assert!((fast - dense_mvn_log_density(&x, &m, &qd, sigma)).abs() < 1e-9);

        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let b = AreaTime::from_rows(&rows).unwrap();
        let joint = stacked_joint(&qd, alpha, sigma);
        let xs = DVector::from_column_slice(b.as_slice());
        let first = DVector::from_column_slice(b.column(0));
        let marginal = &qd / (sigma * sigma);
        for i in 0..n {
            let (mo, vo) = dense_conditional(&joint, &xs, n + i);
            let (mf, vf) = conditional_moments_congdon(i, 1, &b, alpha, lambda, sigma, &kappa, &g).unwrap();
            prop_assert!((mf - mo).abs() < 1e-9 && (vf - vo).abs() < 1e-9);
            let (mo, vo) = dense_conditional(&marginal, &first, i);
            let (mf, vf) = conditional_moments_congdon(i, 0, &b, alpha, lambda, sigma, &kappa, &g).unwrap();
            prop_assert!((mf - mo).abs() < 1e-9 && (vf - vo).abs() < 1e-9);
        }
    }

    #[test]
    fn pcar_scaled_inverse_has_unit_geometric_mean(seed in any::<u64>(), n in 2usize..20, rho in 0.0f64..0.995) {
        let g = random_graph(&mut SeedTree::new(seed).rng(), n);
        let pcar = build_scaled_pcar_precision(&g, rho).unwrap();
        let inv = dense(&pcar.precision).try_inverse().unwrap();
        let gm = ((0..n).map(|i| inv[(i, i)].ln()).sum::<f64>() / n as f64).exp();
        prop_assert!((gm - 1.0).abs() < 1e-8);
    }
}

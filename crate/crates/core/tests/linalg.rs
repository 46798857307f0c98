use averis::linalg::{center, column_mean, gemm, gemm_nt, gemm_tn, thin_svd, truncated_svd, vec_mat, Matrix};
use averis::rng;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum())
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius() / b.frobenius().max(f64::MIN_POSITIVE)
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::gaussian(rows, cols, 1.0, &mut rng::stream(seed, 11))
}

/// Eigenvalues of `XᵀX`, descending, turned into singular values.
fn gram_singular_values(x: &Matrix) -> Vec<f64> {
    let xn = DMatrix::from_row_slice(x.rows(), x.cols(), x.data());
    let eig = SymmetricEigen::new(xn.transpose() * &xn);
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn gemm_hand_examples() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(gemm(&Matrix::identity(2), &a).unwrap(), a);
    let e = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    assert_eq!(gemm(&a, &e).unwrap(), Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
    let ones = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let r = Matrix::from_rows(&[vec![5.0, 7.0]]).unwrap();
    assert_eq!(gemm(&ones, &r).unwrap(), Matrix::from_rows(&[vec![5.0, 7.0], vec![5.0, 7.0]]).unwrap());
    assert!(gemm(&a, &r).is_err());
}

#[test]
fn column_mean_and_center_examples() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(column_mean(&a), vec![2.0, 3.0]);
    assert_eq!(center(&a), Matrix::from_rows(&[vec![-1.0, -1.0], vec![1.0, 1.0]]).unwrap());
    assert_eq!(column_mean(&Matrix::zeros(3, 2)), vec![0.0, 0.0]);
    let flat = Matrix::broadcast_row(4, &[5.0, -1.0]);
    assert_eq!(column_mean(&flat), vec![5.0, -1.0]);
    assert_eq!(center(&flat), Matrix::zeros(4, 2));
}

#[test]
fn large_gemm_matches_naive() {
    // big enough to take the parallel panel path
    let a = random(300, 70, 1);
    let b = random(70, 90, 2);
    assert!(rel(&gemm(&a, &b).unwrap(), &naive(&a, &b)) < 1e-12);
    let c = random(300, 90, 3);
    assert!(rel(&gemm_tn(&a, &c).unwrap(), &naive(&a.transpose(), &c)) < 1e-12);
    assert!(rel(&gemm_nt(&c, &b).unwrap(), &naive(&c, &b.transpose())) < 1e-12);
}

#[test]
fn diagonal_svd() {
    let d = Matrix::from_fn(3, 3, |i, j| if i == j { [3.0, 2.0, 1.0][i] } else { 0.0 });
    let svd = truncated_svd(&d, 2, 0).unwrap();
    assert!((svd.s[0] - 3.0).abs() < 1e-12 && (svd.s[1] - 2.0).abs() < 1e-12);
}

#[test]
fn rank_one_svd_is_exact() {
    let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..25).map(|j| (j as f64 * 0.11).cos() + 0.2).collect();
    let x = Matrix::outer(&a, &b);
    let svd = truncated_svd(&x, 1, 3).unwrap();
    assert!(rel(&svd.reconstruct(), &x) <= 1e-8);
}

#[test]
fn svd_50x40_matches_gram_oracle() {
    let x = random(50, 40, 9);
    let oracle = gram_singular_values(&x);
    let svd = truncated_svd(&x, 5, 0).unwrap();
    for (s, o) in svd.s.iter().zip(&oracle) {
        assert!((s - o).abs() <= 1e-6 * o, "{s} vs {o}");
    }
}

#[test]
fn svd_rank_out_of_range() {
    let x = random(5, 4, 0);
    assert!(truncated_svd(&x, 0, 0).is_err());
    assert!(truncated_svd(&x, 5, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gemm_variants_match_triple_loop(m in 1usize..24, k in 1usize..24, n in 1usize..24, seed in any::<u64>()) {
        let a = random(m, k, seed);
        let b = random(k, n, seed ^ 1);
        let naive_ab = naive(&a, &b);
        prop_assert!(rel(&gemm(&a, &b).unwrap(), &naive_ab) <= 1e-12);
        prop_assert!(rel(&gemm_tn(&a.transpose(), &b).unwrap(), &naive_ab) <= 1e-12);
        prop_assert!(rel(&gemm_nt(&a, &b.transpose()).unwrap(), &naive_ab) <= 1e-12);
    }

    #[test]
    fn gemm_associates_with_vectors(m in 1usize..16, k in 1usize..16, n in 1usize..16, seed in any::<u64>()) {
        let a = random(m, k, seed);
        let b = random(k, n, seed ^ 2);
        let v: Vec<f64> = random(1, m, seed ^ 3).into_data();
        let left = vec_mat(&vec_mat(&v, &a).unwrap(), &b).unwrap();
        let right = vec_mat(&v, &naive(&a, &b)).unwrap();
        let scale = right.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let err = left.iter().zip(&right).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn center_is_idempotent_with_zero_means(l in 1usize..40, m in 1usize..40, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let x = random(l, m, seed).map(|v| v + shift);
        let c = center(&x);
        let cc = center(&c);
        prop_assert!(rel(&cc, &c) <= 1e-12 || c.frobenius() == 0.0);
        let tol = 1e-10 * x.max_abs();
        prop_assert!(column_mean(&c).iter().all(|v| v.abs() <= tol));
    }

    #[test]
    fn truncated_svd_is_near_optimal(l in 2usize..48, m in 2usize..48, kseed in any::<u64>(), seed in any::<u64>()) {
        let x = random(l, m, seed);
        let r = l.min(m);
        let k = 1 + (kseed as usize) % r;
        let svd = truncated_svd(&x, k, kseed).unwrap();
        let oracle = gram_singular_values(&x);
        let best = oracle[k..r].iter().map(|s| s * s).sum::<f64>().sqrt();
        let got = x.sub(&svd.reconstruct()).unwrap().frobenius();
        prop_assert!(got <= best * (1.0 + 1e-4) + 1e-10 * x.frobenius(), "got {got} best {best}");
        prop_assert!(svd.s.windows(2).all(|w| w[0] >= w[1]) && svd.s.iter().all(|&s| s >= 0.0));
        let utu = gemm_tn(&svd.u, &svd.u).unwrap();
        let vtv = gemm_tn(&svd.v, &svd.v).unwrap();
        prop_assert!(utu.sub(&Matrix::identity(k)).unwrap().frobenius() <= 1e-6);
        prop_assert!(vtv.sub(&Matrix::identity(k)).unwrap().frobenius() <= 1e-6);
    }

    #[test]
    fn thin_svd_reconstructs(l in 1usize..20, m in 1usize..20, seed in any::<u64>()) {
        let x = random(l, m, seed);
        prop_assert!(rel(&thin_svd(&x).reconstruct(), &x) <= 1e-10);
    }

    #[test]
    fn svd_is_deterministic(seed in any::<u64>()) {
        let x = random(30, 20, seed);
        prop_assert_eq!(truncated_svd(&x, 3, seed).unwrap(), truncated_svd(&x, 3, seed).unwrap());
    }
}

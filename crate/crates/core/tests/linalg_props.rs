//! Least squares, projection and finite-difference Jacobians against
//! independent references.

use nalgebra::DMatrix;
use perfgd_core::estim::{finite_diff_jacobian, History};
use perfgd_core::linalg::lstsq_min_norm;
use perfgd_core::{BoxDomain, Matrix};
use proptest::prelude::*;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0..5.0f64, rows * cols)
        .prop_map(move |d| Matrix::from_row_major(rows, cols, d).unwrap())
}

fn shapes() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..7, 1usize..5, 1usize..4).prop_flat_map(|(m, q, k)| (matrix(m, q), matrix(m, k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lstsq_matches_pseudoinverse((a, b) in shapes()) {
        let ls = lstsq_min_norm(&a, &b, 1e-12).unwrap();
        let pinv = to_na(&a).pseudo_inverse(1e-12).unwrap();
        let want = pinv * to_na(&b);
        let got = to_na(&ls.solution);
        let scale = 1.0 + want.norm();
        prop_assert!((got - &want).norm() <= 1e-8 * scale, "want {want}");
    }

    #[test]
    fn lstsq_residual_is_orthogonal_to_columns((a, b) in shapes()) {
        let ls = lstsq_min_norm(&a, &b, 1e-12).unwrap();
        let (na, nb) = (to_na(&a), to_na(&b));
        let r = &na * to_na(&ls.solution) - &nb;
        let g = na.transpose() * &r;
        prop_assert!(g.norm() <= 1e-8 * (1.0 + na.norm() * nb.norm()));
        prop_assert!((r.norm() - ls.residual).abs() <= 1e-8 * (1.0 + nb.norm()));
    }

    #[test]
    fn rank_deficient_rows_duplicate(a in matrix(2, 3), b in matrix(4, 1)) {
        // stack A on itself: rank ≤ 2 with 4 rows and 3 columns
        let mut d = a.as_slice().to_vec();
        d.extend_from_slice(a.as_slice());
        let a2 = Matrix::from_row_major(4, 3, d).unwrap();
        let ls = lstsq_min_norm(&a2, &b, 1e-12).unwrap();
        // reduces to a·x ≈ (b_top + b_bot)/2, whose minimum-norm solution is
        // aᵀ(aaᵀ)⁻¹c; nalgebra's SVD pseudoinverse is only good to ~1e-6 here
        let na = to_na(&a);
        let gram = &na * na.transpose();
        prop_assume!(gram.determinant().abs() > 1e-6);
        let nb = to_na(&b);
        let c = (nb.rows(0, 2) + nb.rows(2, 2)) * 0.5;
        let want = na.transpose() * gram.try_inverse().unwrap() * c;
        prop_assert!((to_na(&ls.solution) - &want).norm() <= 1e-9 * (1.0 + want.norm()));
        prop_assert!(ls.rank <= 2);
    }

    #[test]
    fn projection_idempotent_and_non_expansive(
        x in prop::collection::vec(-20.0..20.0f64, 3),
        y in prop::collection::vec(-20.0..20.0f64, 3),
    ) {
        let dom = BoxDomain::new(vec![-1.0, 0.0, -5.0], vec![1.0, 5.0, 2.5]).unwrap();
        let px = dom.project(&x);
        prop_assert_eq!(dom.project(&px), px.clone());
        prop_assert!(dom.contains(&px));
        let py = dom.project(&y);
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        prop_assert!(d(&px, &py) <= d(&x, &y) + 1e-12);
    }

    #[test]
    fn affine_map_jacobian_is_exact(
        a in prop::collection::vec(-3.0..3.0f64, 4),
        b in prop::collection::vec(-3.0..3.0f64, 2),
        steps in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), 3..6),
    ) {
        // f(θ) = Aθ + b with A 2×2; history in general position
        let f = |th: &[f64]| vec![a[0] * th[0] + a[1] * th[1] + b[0], a[2] * th[0] + a[3] * th[1] + b[1]];
        let mut hist = History::unbounded();
        let mut th = vec![0.0, 0.0];
        for s in &steps {
            hist.push(th.clone(), f(&th)).unwrap();
            th = vec![th[0] + s[0], th[1] + s[1]];
        }
        let est = finite_diff_jacobian(&hist, &th, &f(&th), steps.len()).unwrap();
        prop_assume!(est.rank == 2);
        for (got, want) in est.matrix.as_slice().iter().zip(&a) {
            prop_assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()) * 1e3);
        }
    }
}

#[test]
fn rank_deficient_fixture() {
    // reference from numpy.linalg.lstsq
    let a = [
        -2.3831279512836883,
        3.829316410295766,
        -4.841291630192666,
        -2.5121576352437343,
        -4.950912450765544,
        -2.7832452355204254,
    ];
    let mut d = a.to_vec();
    d.extend_from_slice(&a);
    let a2 = Matrix::from_row_major(4, 3, d).unwrap();
    let b = Matrix::from_row_major(4, 1, vec![0.0, 0.0, 0.0, 1.69346110500912]).unwrap();
    let ls = lstsq_min_norm(&a2, &b, 1e-12).unwrap();
    let want = [
        -0.05455860790959691,
        -0.10967250055781763,
        -0.059891158145371985,
    ];
    for (g, w) in ls.solution.as_slice().iter().zip(want) {
        assert!((g - w).abs() < 1e-13, "{g} vs {w}");
    }
    assert_eq!(ls.rank, 2);
    assert!((ls.residual - 1.1974578310276127).abs() < 1e-12);
}

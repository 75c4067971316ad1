use em2gauss_core::finite::sample_update;
use em2gauss_core::population::{update, update_1d, Iterate, MixtureSpec};
use em2gauss_core::sampling::draw;
use em2gauss_core::{CovarianceModel, DMatrix, DVector, Quadrature};
use proptest::prelude::*;

fn spd(d: usize) -> impl Strategy<Value = CovarianceModel> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
        let a = DMatrix::from_row_slice(d, d, &v);
        let s = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
        CovarianceModel::new((&s + s.transpose()) * 0.5).unwrap()
    })
}

fn vector(d: usize, r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-r..r, d).prop_map(DVector::from_vec)
}

fn problem() -> impl Strategy<Value = (CovarianceModel, DVector<f64>, DVector<f64>, DVector<f64>)> {
    (1usize..6).prop_flat_map(|d| (spd(d), vector(d, 3.0), vector(d, 3.0), vector(d, 3.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_is_symmetric_and_bilinear((cov, x, y, z) in problem(), a in -2.0f64..2.0) {
        let xy = cov.inner(&x, &y).unwrap();
        prop_assert!((xy - cov.inner(&y, &x).unwrap()).abs() <= 1e-10 * (1.0 + xy.abs()));
        let lhs = cov.inner(&(&x * a + &z), &y).unwrap();
        let rhs = a * xy + cov.inner(&z, &y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn distance_obeys_triangle_inequality((cov, x, y, z) in problem()) {
        let xz = cov.distance(&x, &z).unwrap();
        let bound = cov.distance(&x, &y).unwrap() + cov.distance(&y, &z).unwrap();
        prop_assert!(xz <= bound + 1e-10);
    }

    #[test]
    fn whitening_preserves_geometry((cov, x, y, _z) in problem()) {
        let wx = cov.whiten(&x).unwrap();
        let wy = cov.whiten(&y).unwrap();
        let ip = cov.inner(&x, &y).unwrap();
        prop_assert!((wx.dot(&wy) - ip).abs() <= 1e-9 * (1.0 + ip.abs()));
        let back = cov.unwhiten(&wx).unwrap();
        prop_assert!((back - &x).amax() <= 1e-10 * (1.0 + x.amax()));
    }

    #[test]
    fn update_is_odd_in_lambda((cov, lambda, mu, _z) in problem()) {
        let q = Quadrature::default();
        let spec = MixtureSpec::new(mu.clone(), cov.clone()).unwrap();
        let pos = update(&Iterate::new(lambda.clone(), 0, &cov, Some(&mu)).unwrap(), &spec, &q).unwrap();
        let neg = update(&Iterate::new(-&lambda, 0, &cov, Some(&mu)).unwrap(), &spec, &q).unwrap();
        let sum = pos.lambda() + neg.lambda();
        prop_assert!(cov.norm(&sum).unwrap() <= 1e-9);
    }

    #[test]
    fn update_stays_in_span_of_lambda_and_mu((cov, lambda, mu, probe) in problem()) {
        let q = Quadrature::default();
        let spec = MixtureSpec::new(mu.clone(), cov.clone()).unwrap();
        let out = update(&Iterate::new(lambda.clone(), 0, &cov, Some(&mu)).unwrap(), &spec, &q).unwrap();
        // Σ-orthogonalize the probe against span{λ, μ}.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for v in [&lambda, &mu] {
            let mut u = v.clone();
            for b in &basis {
                u -= b * cov.inner(b, &u).unwrap();
            }
            let n = cov.norm(&u).unwrap();
            if n > 1e-6 {
                basis.push(u / n);
            }
        }
        let mut p = probe.clone();
        for b in &basis {
            p -= b * cov.inner(b, &p).unwrap();
        }
        let n = cov.norm(&p).unwrap();
        prop_assume!(n > 1e-3);
        let off = cov.inner(&(p / n), out.lambda()).unwrap();
        prop_assert!(off.abs() <= 1e-9, "off-plane component {off}");
    }

    #[test]
    fn update_1d_is_increasing(l in -5.0f64..5.0, dl in 1e-3f64..1.0, mu in -3.0f64..3.0, sigma in 0.3f64..3.0) {
        let q = Quadrature::default();
        let lo = update_1d(l, mu, sigma, &q).unwrap();
        let hi = update_1d(l + dl, mu, sigma, &q).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn stabilized_batches_sum_to_zero(seed in any::<u64>(), n in 1usize..200) {
        let cov = CovarianceModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let m1 = DVector::from_vec(vec![1.0, -0.5]);
        let m2 = DVector::from_vec(vec![-2.0, 0.25]);
        let b = draw(n, &m1, &m2, &cov, seed).unwrap();
        let s = b.stabilize(&DVector::from_vec(vec![0.1, 0.2])).unwrap();
        prop_assert_eq!(s.len(), 2 * n);
        prop_assert!(s.sum().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_update_is_exactly_odd(seed in any::<u64>(), l in vector(3, 2.0)) {
        let cov = CovarianceModel::diagonal(&[1.0, 0.5, 2.0]).unwrap();
        let m = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let s = draw(300, &m, &-&m, &cov, seed).unwrap().stabilize(&DVector::zeros(3)).unwrap();
        let a = sample_update(&l, &s, &cov).unwrap();
        let b = sample_update(&-&l, &s, &cov).unwrap();
        prop_assert_eq!(a, -b);
    }
}

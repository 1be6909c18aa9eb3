use gladformer::autodiff::Mat;
use gladformer::dataset::{Graph, Label};
use gladformer::spectral::{
    beta_bank, beta_filter_apply, beta_response, eigendecompose, high_pass_response, low_high_apply,
    low_pass_response, normalized_laplacian, rayleigh_vector, SparseLaplacian, DEFAULT_ORACLE_CAP,
};
use ndarray::Array2;
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1usize..=10, 1usize..=4).prop_flat_map(|(n, d)| {
        let pairs = n * (n - 1) / 2;
        (
            proptest::collection::vec(any::<bool>(), pairs),
            proptest::collection::vec(-3.0f64..3.0, n * d),
        )
            .prop_map(move |(mask, feats)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if mask[k] {
                            edges.push((i, j));
                        }
                        k += 1;
                    }
                }
                let x = Array2::from_shape_vec((n, d), feats).unwrap();
                Graph::new(0, n, edges, x, Label::Normal).unwrap()
            })
    })
}

fn max_abs(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rayleigh_matches_spectral_energy(g in graph_strategy()) {
        let l = normalized_laplacian(&g);
        let eig = eigendecompose(&l, DEFAULT_ORACLE_CAP).unwrap();
        let coeffs = eig.vectors.t().dot(&g.x);
        let r = rayleigh_vector(&g.x, &l);
        for (j, col) in coeffs.columns().into_iter().enumerate() {
            let total: f64 = col.iter().map(|c| c * c).sum();
            let want = if total == 0.0 {
                0.0
            } else {
                col.iter().zip(&eig.values).map(|(c, lam)| lam * c * c).sum::<f64>() / total
            };
            prop_assert!((r[j] - want).abs() < 1e-8);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&r[j]));
        }
    }

    #[test]
    fn filters_match_eigen_oracle(g in graph_strategy(), alpha in 0i64..4, beta in 0i64..4, psi in 0.0f64..=1.0) {
        let l = normalized_laplacian(&g);
        let eig = eigendecompose(&l, DEFAULT_ORACLE_CAP).unwrap();
        let got = beta_filter_apply(&l, alpha, beta, &g.x).unwrap();
        let want = eig.apply_response(|lam| beta_response(alpha as usize, beta as usize, lam), &g.x);
        prop_assert!(max_abs(&got, &want) < 1e-8);

        let (low, high) = low_high_apply(&l, psi, &g.x);
        prop_assert!(max_abs(&low, &eig.apply_response(|lam| low_pass_response(psi, lam), &g.x)) < 1e-8);
        prop_assert!(max_abs(&high, &eig.apply_response(|lam| high_pass_response(psi, lam), &g.x)) < 1e-8);
    }

    #[test]
    fn sparse_operator_agrees(g in graph_strategy()) {
        let dense = normalized_laplacian(&g);
        let sparse = SparseLaplacian::new(&g);
        let a = beta_filter_apply(&dense, 2, 1, &g.x).unwrap();
        let b = beta_filter_apply(&sparse, 2, 1, &g.x).unwrap();
        prop_assert!(max_abs(&a, &b) < 1e-12);
    }

    #[test]
    fn bank_partition(g in graph_strategy(), order in 1usize..=4) {
        let l = normalized_laplacian(&g);
        let bank = beta_bank(&l, order, &g.x).unwrap();
        prop_assert_eq!(bank.len(), order + 1);
        let sum = bank.iter().fold(Mat::zeros(g.x.raw_dim()), |acc, m| acc + m);
        let want = &g.x * ((order + 1) as f64 / 2.0);
        prop_assert!(max_abs(&sum, &want) < 1e-8);
    }

    #[test]
    fn filters_commute_with_relabeling(g in graph_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..g.n()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let h = g.permuted(&perm);
        let lg = normalized_laplacian(&g);
        let lh = normalized_laplacian(&h);

        let rg = rayleigh_vector(&g.x, &lg);
        let rh = rayleigh_vector(&h.x, &lh);
        prop_assert!((&rg - &rh).iter().all(|v| v.abs() < 1e-12));

        let fg = beta_filter_apply(&lg, 1, 2, &g.x).unwrap();
        let fh = beta_filter_apply(&lh, 1, 2, &h.x).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..g.x.ncols() {
                prop_assert!((fg[[i, c]] - fh[[p, c]]).abs() < 1e-12);
            }
        }
    }
}

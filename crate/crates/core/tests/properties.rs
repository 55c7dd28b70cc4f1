use mixggm::linalg::symmetric_eigenvalues;
use mixggm::metrics::{cluster_rates, confusion, norm_losses, pr_curve};
use mixggm::multiple_testing::{adaptive_fdr_test, benjamini_hochberg};
use mixggm::psi_integration::{average_zscores, integrate_clusters, psi_scores, stouffer_combine};
use mixggm::psi_learning::{correlation_screen, empirical_correlations, neighborhood_cap, psi_learn, PsiSettings};
use mixggm::{AdjacencyMatrix, ClusterAssignment, DataMatrix, PsiMatrix, ZScoreMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn correlated_data(n: usize, p: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    for r in 0..n {
        for c in 1..p {
            x[(r, c)] += 0.7 * x[(r, c - 1)];
        }
    }
    DataMatrix::new(x).unwrap()
}

fn pvalue_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.0..1.0f64, 0.0..0.01f64], 1..60)
}

fn upper_scores(p: usize) -> impl Strategy<Value = ZScoreMatrix> {
    prop::collection::vec(-6.0..6.0f64, p * (p - 1) / 2).prop_map(move |v| {
        let mut z = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j in (i + 1)..p {
                z[(i, j)] = v[k];
                z[(j, i)] = v[k];
                k += 1;
            }
        }
        ZScoreMatrix::new(z).unwrap()
    })
}

fn random_graph(p: usize) -> impl Strategy<Value = AdjacencyMatrix> {
    prop::collection::vec(any::<bool>(), p * (p - 1) / 2).prop_map(move |bits| {
        let pairs = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j)));
        AdjacencyMatrix::from_edges(p, pairs.zip(bits).filter(|(_, b)| *b).map(|(e, _)| e)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowering_a_pvalue_keeps_it_rejected(p in pvalue_vec(), idx in any::<prop::sample::Index>(), shrink in 0.0..1.0f64) {
        let k = idx.index(p.len());
        let before = adaptive_fdr_test(&p, 0.1).unwrap();
        let mut lowered = p.clone();
        lowered[k] *= shrink;
        let after = adaptive_fdr_test(&lowered, 0.1).unwrap();
        if before.rejected[k] {
            prop_assert!(after.rejected[k]);
        }
    }

    #[test]
    fn adaptive_test_contains_bh(p in pvalue_vec(), alpha in 0.01..0.3f64) {
        let bh = benjamini_hochberg(&p, alpha).unwrap();
        let adaptive = adaptive_fdr_test(&p, alpha).unwrap();
        for (b, a) in bh.rejected.iter().zip(&adaptive.rejected) {
            prop_assert!(!b || *a);
        }
    }

    #[test]
    fn stouffer_ignores_weight_scale(z in prop::collection::vec(-5.0..5.0f64, 1..6), c in 0.01..100.0f64) {
        let w: Vec<f64> = (0..z.len()).map(|k| 0.1 + k as f64).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = stouffer_combine(&z, &w).unwrap();
        let b = stouffer_combine(&z, &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn confusion_counts_cover_all_pairs(a in random_graph(9), b in random_graph(9)) {
        prop_assert_eq!(confusion(&a, &b).unwrap().total(), 36);
    }

    #[test]
    fn auc_ignores_monotone_transforms(z in upper_scores(7), truth in random_graph(7)) {
        prop_assume!(truth.edge_count() > 0);
        let base = pr_curve(&z, &truth).unwrap().auc;
        let mut t = z.matrix().map(|v| (v.abs() * 0.5).exp() + v.abs().powi(3));
        t.fill_diagonal(0.0);
        let t = ZScoreMatrix::new(t).unwrap();
        let transformed = pr_curve(&t, &truth).unwrap().auc;
        prop_assert!((base - transformed).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn rates_ignore_joint_relabeling(
        est in prop::collection::vec(0usize..3, 12),
        truth in prop::collection::vec(0usize..3, 12),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let r = cluster_rates(&ClusterAssignment::new(est.clone(), 3).unwrap(), &ClusterAssignment::new(truth.clone(), 3).unwrap()).unwrap();
        let est2: Vec<usize> = est.iter().map(|&l| perm[l]).collect();
        let truth2: Vec<usize> = truth.iter().map(|&l| perm[l]).collect();
        let s = cluster_rates(&ClusterAssignment::new(est2, 3).unwrap(), &ClusterAssignment::new(truth2, 3).unwrap()).unwrap();
        prop_assert!((r.fsr - s.fsr).abs() < 1e-12 && (r.nsr - s.nsr).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.fsr) && (0.0..=1.0).contains(&r.nsr));
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), p in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spd = || {
            let a: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
            &a * a.transpose() + DMatrix::identity(p, p) * 0.5
        };
        let (s, t) = (spd(), spd());
        prop_assert!(norm_losses(std::slice::from_ref(&s), &[t]).unwrap().kl >= -1e-10);
        prop_assert!(norm_losses(std::slice::from_ref(&s), std::slice::from_ref(&s)).unwrap().kl.abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psi_learning_is_permutation_equivariant(seed in any::<u64>()) {
        let x = correlated_data(80, 12, seed);
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let permuted = DataMatrix::new(x.values().select_columns(&perm)).unwrap();
        let a = psi_learn(&x, &PsiSettings::default()).unwrap().adjacency;
        let b = psi_learn(&permuted, &PsiSettings::default()).unwrap().adjacency;
        // column c of the permuted data is variable perm[c]
        for i in 0..12 {
            for j in (i + 1)..12 {
                prop_assert_eq!(b.contains(i, j), a.contains(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn psi_learning_is_scale_invariant(seed in any::<u64>(), scales in prop::collection::vec(0.01..100.0f64, 10)) {
        let x = correlated_data(60, 10, seed);
        let mut scaled = x.values().clone();
        for (c, s) in scales.iter().enumerate() {
            scaled.column_mut(c).scale_mut(*s);
        }
        let a = psi_learn(&x, &PsiSettings::default()).unwrap();
        let b = psi_learn(&DataMatrix::new(scaled).unwrap(), &PsiSettings::default()).unwrap();
        prop_assert!((&a.psi.psi - &b.psi.psi).abs().max() < 1e-10);
        prop_assert!((a.scores.matrix() - b.scores.matrix()).abs().max() < 1e-10);
        prop_assert_eq!(a.adjacency, b.adjacency);
    }

    #[test]
    fn neighborhoods_respect_the_cap(seed in any::<u64>(), n in 20usize..80) {
        let x = correlated_data(n, 40, seed);
        let screen = correlation_screen(&empirical_correlations(&x).unwrap(), n, 0.2).unwrap();
        prop_assert!(screen.neighbors.max_size() <= neighborhood_cap(n));
    }
}

#[test]
fn full_conditioning_matches_sample_concentration() {
    // equicorrelated columns: every marginal correlation survives screening
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, p) = (4000, 5);
    let x: DMatrix<f64> = DMatrix::from_fn(n, p + 1, |_, _| StandardNormal.sample(&mut rng));
    let x = DMatrix::from_fn(n, p, |r, c| x[(r, c)] + x[(r, p)] + if c > 0 { 0.4 * x[(r, c - 1)] } else { 0.0 });
    let data = DataMatrix::new(x).unwrap();
    let fit = psi_learn(&data, &PsiSettings::default()).unwrap();
    assert_eq!(fit.screen.neighbors.max_size(), p - 1);
    let k = data.covariance().try_inverse().unwrap();
    for i in 0..p {
        for j in (i + 1)..p {
            let expected = -k[(i, j)] / (k[(i, i)] * k[(j, j)]).sqrt();
            assert!((fit.psi.psi[(i, j)] - expected).abs() < 1e-8, "({i}, {j})");
        }
    }
}

#[test]
fn averaging_commutes_with_combination_for_one_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psis: Vec<PsiMatrix> = (0..4)
        .map(|_| {
            let mut psi = DMatrix::from_fn(5, 5, |_, _| rand::Rng::random_range(&mut rng, -0.6..0.6));
            psi = (&psi + psi.transpose()) * 0.5;
            psi.fill_diagonal(1.0);
            PsiMatrix { psi, cond_sizes: DMatrix::from_element(5, 5, 2), n: 40 }
        })
        .collect();
    let combined: Vec<ZScoreMatrix> = psis.iter().map(|m| integrate_clusters(std::slice::from_ref(m), 40).unwrap()).collect();
    let raw: Vec<ZScoreMatrix> = psis.iter().map(psi_scores).collect();
    assert_eq!(average_zscores(&combined, 1).unwrap(), average_zscores(&raw, 1).unwrap());
}

#[test]
fn banded_truth_is_positive_definite() {
    let c = mixggm::sim::banded_precision(100, 0.6).unwrap();
    assert!(symmetric_eigenvalues(&c).min() > 0.0);
}

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mixggm::graph_cov::{constrained_cov, GraphCovSettings};
use mixggm::linalg::sample_covariance;
use mixggm::metrics::{cluster_rates, match_clusters, norm_losses, pr_curve, ClusterRates};
use mixggm::mixture::{ic_fit, select_m, FitResult, IcSettings};
use mixggm::multiple_testing::adaptive_fdr_test;
use mixggm::psi_integration::integrate_clusters;
use mixggm::psi_learning::{partial_correlation, partial_correlation_from_cov, psi_learn, PsiSettings};
use mixggm::sim::{simulate_mixture, SimDesign, Simulation};
use mixggm::{AdjacencyMatrix, ClusterAssignment, DataMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn settings(seed: u64) -> IcSettings {
    IcSettings { seed, ..Default::default() }
}

struct Replicate {
    sim: Simulation,
    fit: FitResult,
}

fn fit_design(design: SimDesign) -> Replicate {
    let sim = simulate_mixture(&design).unwrap();
    let fit = ic_fit(&sim.data, design.n_components, &settings(design.seed)).unwrap();
    Replicate { sim, fit }
}

fn example_one() -> &'static [Replicate] {
    static FITS: OnceLock<Vec<Replicate>> = OnceLock::new();
    FITS.get_or_init(|| (0..SEEDS).map(|s| fit_design(SimDesign::shared(100, 0.5, s))).collect())
}

fn psi_auc() -> Outcome {
    let mut aucs = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..SEEDS {
        let sim = simulate_mixture(&SimDesign::shared(100, 0.0, seed)).unwrap();
        let start = Instant::now();
        let fit = psi_learn(&sim.data, &PsiSettings::default()).unwrap();
        slowest = slowest.max(start.elapsed());
        aucs.push(pr_curve(&fit.scores, &sim.adjacency).unwrap().auc);
    }
    let m = mean(&aucs);
    let pass = (0.79..=0.92).contains(&m) && slowest < Duration::from_secs(300);
    outcome(pass, format!("mean AUC {m:.4} (window 0.79..0.92), slowest {slowest:.2?}; per seed {}", fmt(&aucs)))
}

fn ic_example_one() -> Outcome {
    let fits = example_one();
    let aucs: Vec<f64> = fits.iter().map(|r| pr_curve(&r.fit.zbar, &r.sim.adjacency).unwrap().auc).collect();
    let rates: Vec<ClusterRates> = fits.iter().map(|r| cluster_rates(&r.fit.assignments, &r.sim.labels).unwrap()).collect();
    let exact = rates.iter().filter(|r| r.fsr == 0.0 && r.nsr == 0.0).count();
    let m = mean(&aucs);
    outcome(
        m >= 0.82 && exact >= 9,
        format!("mean AUC {m:.4} (need 0.82), perfect clustering in {exact}/10 (need 9); AUC per seed {}", fmt(&aucs)),
    )
}

fn ic_weak_means() -> Outcome {
    let rates: Vec<ClusterRates> = (0..SEEDS)
        .map(|s| {
            let r = fit_design(SimDesign::shared(100, 0.3, s));
            cluster_rates(&r.fit.assignments, &r.sim.labels).unwrap()
        })
        .collect();
    let fsr: Vec<f64> = rates.iter().map(|r| r.fsr).collect();
    let nsr: Vec<f64> = rates.iter().map(|r| r.nsr).collect();
    let (mf, mn) = (mean(&fsr), mean(&nsr));
    outcome(
        mf <= 0.03 && mn <= 0.03,
        format!("mean fsr {mf:.4}, mean nsr {mn:.4} (need 0.03); fsr per seed {}", fmt(&fsr)),
    )
}

fn ic_example_two() -> Outcome {
    let aucs: Vec<f64> = (0..SEEDS)
        .map(|s| {
            let r = fit_design(SimDesign::distinct(100, 0.5, s));
            pr_curve(&r.fit.zbar, &r.sim.adjacency).unwrap().auc
        })
        .collect();
    let m = mean(&aucs);
    outcome(m >= 0.85, format!("mean AUC {m:.4} (need 0.85); per seed {}", fmt(&aucs)))
}

fn kl_loss() -> Outcome {
    let kls: Vec<f64> = example_one()
        .iter()
        .map(|r| {
            let map = match_clusters(&r.fit.assignments, &r.sim.labels).unwrap();
            let mut hat = r.sim.covariances.clone();
            for (e, &t) in map.iter().enumerate() {
                hat[t] = r.fit.params.covariances[e].clone();
            }
            norm_losses(&hat, &r.sim.covariances).unwrap().kl
        })
        .collect();
    let m = mean(&kls);
    outcome((15.0..=32.0).contains(&m), format!("mean KL {m:.3} (window 15..32); per seed {}", fmt(&kls)))
}

fn bic_selection() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for m_true in [2usize, 3] {
        let picks: Vec<usize> = (0..SEEDS)
            .map(|s| {
                let design = SimDesign { n_components: m_true, ..SimDesign::shared(100, 0.5, 100 + s) };
                let sim = simulate_mixture(&design).unwrap();
                select_m(&sim.data, &[1, 2, 3, 4, 5], &settings(s)).unwrap().best
            })
            .collect();
        let hits = picks.iter().filter(|&&b| b == m_true).count();
        pass &= hits >= 8;
        details.push(format!("M={m_true}: {hits}/10 picks {picks:?}"));
    }
    outcome(pass, details.join("; "))
}

fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

fn gaussian_rows(cov: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let l = cov.clone().cholesky().unwrap().l();
    let z: DMatrix<f64> = DMatrix::from_fn(n, cov.nrows(), |_, _| StandardNormal.sample(rng));
    z * l.transpose()
}

fn brute_force_partial(x: &DMatrix<f64>, i: usize, j: usize, s: &[usize]) -> f64 {
    let n = x.nrows();
    let idx: Vec<usize> = [i, j].into_iter().chain(s.iter().copied()).collect();
    let mut cov = DMatrix::zeros(idx.len(), idx.len());
    let means: Vec<f64> = idx.iter().map(|&c| x.column(c).sum() / n as f64).collect();
    for (a, &ca) in idx.iter().enumerate() {
        for (b, &cb) in idx.iter().enumerate() {
            let mut acc = 0.0;
            for r in 0..n {
                acc += (x[(r, ca)] - means[a]) * (x[(r, cb)] - means[b]);
            }
            cov[(a, b)] = acc / (n - 1) as f64;
        }
    }
    let k = cov.try_inverse().unwrap();
    -k[(0, 1)] / (k[(0, 0)] * k[(1, 1)]).sqrt()
}

fn partial_correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut pop_err, mut sample_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let p = rng.random_range(2..=8);
        let cov = random_spd(p, &mut rng);
        let i = rng.random_range(0..p);
        let j = (i + rng.random_range(1..p)) % p;
        let rest: Vec<usize> = (0..p).filter(|&k| k != i && k != j).collect();
        let k = cov.clone().try_inverse().unwrap();
        let expected = -k[(i, j)] / (k[(i, i)] * k[(j, j)]).sqrt();
        pop_err = pop_err.max((partial_correlation_from_cov(&cov, i, j, &rest).unwrap() - expected).abs());

        let x = gaussian_rows(&cov, 40, &mut rng);
        let got = partial_correlation(&DataMatrix::new(x.clone()).unwrap(), i, j, &rest).unwrap();
        sample_err = sample_err.max((got - brute_force_partial(&x, i, j, &rest)).abs());
    }
    outcome(
        pop_err < 1e-8 && sample_err < 1e-10,
        format!("max population error {pop_err:.2e} (need 1e-8), max sample error {sample_err:.2e} (need 1e-10)"),
    )
}

fn ipf_chain(s: &DMatrix<f64>) -> DMatrix<f64> {
    let cliques = [[0usize, 1], [1, 2]];
    let mut k = DMatrix::<f64>::identity(3, 3);
    for _ in 0..200 {
        for c in &cliques {
            let s_c = s.select_rows(c).select_columns(c);
            let w = k.clone().try_inverse().unwrap();
            let w_c = w.select_rows(c).select_columns(c);
            let delta = s_c.try_inverse().unwrap() - w_c.try_inverse().unwrap();
            for (a, &ia) in c.iter().enumerate() {
                for (b, &ib) in c.iter().enumerate() {
                    k[(ia, ib)] += delta[(a, b)];
                }
            }
        }
    }
    k.try_inverse().unwrap()
}

fn graph_covariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut zero_err, mut moment_err, mut unconverged) = (0.0f64, 0.0f64, 0);
    for _ in 0..50 {
        let p = rng.random_range(3..=30);
        let density = rng.random_range(0.05..0.5);
        let mut graph = AdjacencyMatrix::empty(p);
        for i in 0..p {
            for j in (i + 1)..p {
                if rng.random::<f64>() < density {
                    graph.insert(i, j);
                }
            }
        }
        let cov = random_spd(p, &mut rng);
        let s = sample_covariance(&gaussian_rows(&cov, 2 * p + 10, &mut rng));
        let fit = constrained_cov(&s, &graph, &GraphCovSettings::default()).unwrap();
        if !fit.converged {
            unconverged += 1;
            continue;
        }
        let k = fit.covariance.clone().try_inverse().unwrap();
        for i in 0..p {
            for j in 0..p {
                if i == j || graph.contains(i, j) {
                    moment_err = moment_err.max((fit.covariance[(i, j)] - s[(i, j)]).abs());
                } else {
                    zero_err = zero_err.max(k[(i, j)].abs() / (k[(i, i)] * k[(j, j)]).sqrt());
                }
            }
        }
    }
    let chain = AdjacencyMatrix::from_edges(3, [(0, 1), (1, 2)]).unwrap();
    let s = random_spd(3, &mut rng);
    let fit = constrained_cov(&s, &chain, &GraphCovSettings::default()).unwrap();
    let ipf_err = (&fit.covariance - ipf_chain(&s)).abs().max();
    outcome(
        zero_err < 1e-6 && moment_err < 1e-6 && ipf_err < 1e-6,
        format!(
            "zero pattern {zero_err:.2e}, moments {moment_err:.2e}, chain vs IPF {ipf_err:.2e} (need 1e-6 each); {unconverged} unconverged"
        ),
    )
}

fn null_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reps = 500;
    let (n, p) = (200, 10);
    let z: Vec<f64> = (0..reps)
        .map(|_| {
            let x = DataMatrix::new(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))).unwrap();
            let labels = ClusterAssignment::new((0..n).map(|_| rng.random_range(0..2)).collect(), 2).unwrap();
            let psis: Vec<_> = (0..2)
                .map(|k| psi_learn(&x.select_rows(&labels.members(k)), &PsiSettings::default()).unwrap().psi)
                .collect();
            integrate_clusters(&psis, n).unwrap().get(0, 1)
        })
        .collect();
    let m = mean(&z);
    let var = z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let mean_ok = m.abs() <= 3.0 / (reps as f64).sqrt();
    let var_ok = (var - 1.0).abs() <= 3.0 * (2.0 / (reps - 1) as f64).sqrt();

    let alpha = 0.05;
    let fdp: Vec<f64> = (0..1000)
        .map(|_| {
            let pv: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            let out = adaptive_fdr_test(&pv, alpha).unwrap();
            if out.rejection_count() > 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mfdp = mean(&fdp);
    outcome(
        mean_ok && var_ok && mfdp <= alpha + 0.02,
        format!("combined Z mean {m:.4}, variance {var:.4}; mean FDP {mfdp:.4} (need {:.2})", alpha + 0.02),
    )
}

fn determinism() -> Outcome {
    let sim = simulate_mixture(&SimDesign::shared(100, 0.5, 3)).unwrap();
    let run = || serde_json::to_string(&ic_fit(&sim.data, 3, &settings(3)).unwrap()).unwrap();
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(run)
    };
    let reference = run();
    let mut outputs = vec![run(), run(), in_pool(1), in_pool(4)];
    outputs.retain(|o| *o != reference);
    outcome(
        outputs.is_empty(),
        format!("{} of 4 reruns differ from the first ({} bytes)", outputs.len(), reference.len()),
    )
}

fn single_component() -> Outcome {
    let mismatches = (0..SEEDS)
        .filter(|&s| {
            let sim = simulate_mixture(&SimDesign::shared(100, 0.5, 200 + s)).unwrap();
            let fit = ic_fit(&sim.data, 1, &settings(s)).unwrap();
            fit.adjacency != psi_learn(&sim.data, &PsiSettings::default()).unwrap().adjacency
        })
        .count();
    outcome(mismatches == 0, format!("{mismatches} of 10 data sets differ"))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "psi_auc", psi_auc),
    (2, "ic_example_one", ic_example_one),
    (3, "ic_weak_means", ic_weak_means),
    (4, "ic_example_two", ic_example_two),
    (5, "kl_loss", kl_loss),
    (6, "bic_selection", bic_selection),
    (7, "partial_correlation_oracle", partial_correlation_oracle),
    (8, "graph_covariance", graph_covariance),
    (9, "null_calibration", null_calibration),
    (10, "determinism", determinism),
    (11, "single_component", single_component),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("criterion {id:>2} [{verdict}] {name}: {} ({:.1?})", result.detail, start.elapsed());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

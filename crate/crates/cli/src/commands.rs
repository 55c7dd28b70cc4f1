use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use mixggm::graph_cov::GraphCovSettings;
use mixggm::metrics::{cluster_rates, confusion, match_clusters, norm_losses, pr_curve, EvalReport};
use mixggm::mixture::{degrees_of_freedom, ic_fit, select_m, FitResult, IcSettings};
use mixggm::psi_integration::select_edges;
use mixggm::psi_learning::PsiSettings;
use mixggm::sim::{simulate_mixture, SimDesign};
use mixggm::{AdjacencyMatrix, DataMatrix, ZScoreMatrix};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};
use crate::io::{self, join, KeyValues};
use crate::{ChainArgs, EvaluateArgs, FitArgs, SelectArgs, SimulateArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn manifest_header(command: &str) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("command", command);
    kv.push("version", VERSION);
    kv.push("argv", std::env::args().skip(1).collect::<Vec<_>>().join(" "));
    kv.push("threads", rayon::current_num_threads());
    kv
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let design = SimDesign {
        n_components: args.components,
        p: args.p,
        n_per_cluster: args.n_per,
        mean_offset: args.m,
        band: args.c.clone(),
        seed: args.seed,
    };
    let sim = simulate_mixture(&design)?;
    let out = &args.out;
    io::ensure_dir(out)?;
    io::write_matrix(&out.join("data.csv"), sim.data.values(), Some(&io::variable_names(args.p)))?;
    io::write_text(&out.join("labels.csv"), &io::labels_csv("label", &sim.labels, false))?;
    io::write_text(&out.join("edges.tsv"), &io::edges_tsv(&sim.adjacency))?;

    let mut kv = manifest_header("simulate");
    kv.push("components", design.n_components);
    kv.push("p", design.p);
    kv.push("n_per", design.n_per_cluster);
    kv.push("n", sim.data.n());
    kv.push("mean_offset", design.mean_offset);
    kv.push("band", join(&design.band));
    kv.push("seed", design.seed);
    kv.push("true_edges", sim.adjacency.edge_count());
    for (k, cov) in sim.covariances.iter().enumerate() {
        let file = format!("sigma_{}.csv", k + 1);
        io::write_matrix(&out.join(&file), cov, None)?;
        kv.push(format!("component.{}.band", k + 1), design.band_strength(k));
        kv.push(format!("component.{}.mean_multiplier", k + 1), design.mean_multiplier(k));
        kv.push(format!("component.{}.covariance", k + 1), file);
    }
    kv.write(&out.join("manifest.txt"))?;
    println!("wrote {} samples x {} variables to {}", sim.data.n(), args.p, out.display());
    Ok(())
}

fn ic_settings(chain: &ChainArgs) -> IcSettings {
    IcSettings {
        iterations: chain.iterations,
        burn_in: chain.burn_in,
        psi: PsiSettings { alpha1: chain.alpha1, alpha2: chain.alpha2 },
        min_cluster: chain.min_cluster,
        seed: chain.seed,
        graph: GraphCovSettings { tol: chain.graph_tol, max_iter: chain.graph_max_iter, track_logdet: false },
    }
}

fn push_settings(kv: &mut KeyValues, s: &IcSettings) {
    kv.push("iterations", s.iterations);
    kv.push("burn_in", s.burn_in);
    kv.push("alpha1", s.psi.alpha1);
    kv.push("alpha2", s.psi.alpha2);
    kv.push("min_cluster", s.min_cluster);
    kv.push("seed", s.seed);
    kv.push("graph_tol", s.graph.tol);
    kv.push("graph_max_iter", s.graph.max_iter);
}

fn load_data(path: &Path) -> CliResult<DataMatrix> {
    let values = io::read_matrix(path)?;
    DataMatrix::new(values).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Selected edges sorted by q-value, then by position.
fn edge_rows(fit: &FitResult) -> Vec<(usize, usize, f64, f64)> {
    let sel = &fit.selection;
    let mut rows: Vec<_> = sel
        .pairs
        .iter()
        .zip(&sel.test.qvalues)
        .filter(|(&(i, j), _)| sel.adjacency.contains(i, j))
        .map(|(&(i, j), &q)| (i, j, fit.zbar.get(i, j), q))
        .collect();
    rows.sort_by(|a, b| a.3.total_cmp(&b.3).then((a.0, a.1).cmp(&(b.0, b.1))));
    rows
}

fn params_report(fit: &FitResult) -> KeyValues {
    let mut kv = KeyValues::default();
    let p = fit.adjacency.p();
    let edges = fit.adjacency.edge_count();
    kv.push("components", fit.params.n_components());
    kv.push("p", p);
    kv.push("network.edges", edges);
    kv.push("network.density", edges as f64 / (p * (p - 1) / 2) as f64);
    kv.push("network.max_degree", (0..p).map(|i| fit.adjacency.degree(i)).max().unwrap_or(0));
    for k in 0..fit.params.n_components() {
        let key = |s: &str| format!("component.{}.{s}", k + 1);
        kv.push(key("weight"), fit.params.weights[k]);
        kv.push(key("mean"), join(fit.params.means[k].iter()));
        let prec = &fit.precisions[k];
        let nonzero = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).filter(|&(i, j)| prec[(i, j)] != 0.0).count();
        kv.push(key("precision_nonzero_offdiag"), nonzero);
        kv.push(key("covariance_trace"), fit.params.covariances[k].trace());
        kv.push(key("converged"), fit.converged[k]);
    }
    kv
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let settings = ic_settings(&args.chain);
    let x = load_data(&args.data)?;
    let fit = ic_fit(&x, args.components, &settings)?;
    let out = &args.out;
    io::ensure_dir(out)?;

    let mut edges = String::from("i\tj\tz\tq\tz_rounded\tq_rounded\n");
    for (i, j, z, q) in edge_rows(&fit) {
        let _ = writeln!(edges, "{}\t{}\t{z}\t{q}\t{z:.3}\t{q:.3e}", i + 1, j + 1);
    }
    io::write_text(&out.join("edges.tsv"), &edges)?;
    io::write_matrix(&out.join("zbar.csv"), fit.zbar.matrix(), None)?;
    io::write_text(&out.join("assignments.csv"), &io::labels_csv("sample,cluster", &fit.assignments, true))?;
    params_report(&fit).write(&out.join("params.txt"))?;
    if args.write_matrices {
        for k in 0..args.components {
            io::write_matrix(&out.join(format!("covariance_{}.csv", k + 1)), &fit.params.covariances[k], None)?;
            io::write_matrix(&out.join(format!("precision_{}.csv", k + 1)), &fit.precisions[k], None)?;
        }
    }

    let mut kv = manifest_header("fit");
    kv.push("data", args.data.display());
    kv.push("n", x.n());
    kv.push("p", x.p());
    kv.push("components", args.components);
    push_settings(&mut kv, &settings);
    kv.push("edges", fit.adjacency.edge_count());
    kv.push("log_likelihood", fit.log_likelihood);
    kv.push("bic", fit.bic);
    kv.push("df", degrees_of_freedom(args.components, x.p(), fit.adjacency.edge_count()));
    kv.push("covariance_converged", join(&fit.converged));
    for (t, r) in fit.trace.records.iter().enumerate() {
        kv.push(format!("iteration.{}.sizes", t + 1), join(&r.counts));
        kv.push(format!("iteration.{}.edges", t + 1), r.adjacency.edge_count());
    }
    kv.write(&out.join("manifest.txt"))?;
    println!(
        "M = {}: {} edges, log-likelihood {:.3}, BIC {:.3}; results in {}",
        args.components,
        fit.adjacency.edge_count(),
        fit.log_likelihood,
        fit.bic,
        out.display()
    );
    Ok(())
}

pub fn parse_range(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("cannot read candidate range {spec:?}; use 1..5 or 1,2,3"));
    let values: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    let mut sorted = values.clone();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

pub fn select(args: &SelectArgs) -> CliResult<()> {
    let candidates = parse_range(&args.range)?;
    let settings = ic_settings(&args.chain);
    let x = load_data(&args.data)?;
    let selection = select_m(&x, &candidates, &settings)?;
    let out = &args.out;
    io::ensure_dir(out)?;

    let mut table = String::from("M,bic,df,loglik,edges,bic_rounded\n");
    println!("{:>3} {:>14} {:>8} {:>14} {:>7}", "M", "BIC", "df", "loglik", "edges");
    for r in &selection.rows {
        let _ = writeln!(table, "{},{},{},{},{},{:.2}", r.m, r.bic, r.df, r.log_likelihood, r.edges, r.bic);
        println!("{:>3} {:>14.2} {:>8} {:>14.2} {:>7}", r.m, r.bic, r.df, r.log_likelihood, r.edges);
    }
    io::write_text(&out.join("bic.csv"), &table)?;

    let mut kv = manifest_header("select-m");
    kv.push("data", args.data.display());
    kv.push("candidates", join(&candidates));
    push_settings(&mut kv, &settings);
    kv.push("best", selection.best);
    kv.write(&out.join("manifest.txt"))?;
    println!("selected M = {}", selection.best);
    Ok(())
}

fn read_matrices(paths: &[PathBuf]) -> CliResult<Vec<DMatrix<f64>>> {
    paths.iter().map(|p| io::read_matrix(p)).collect()
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    for p in [Some(&args.truth_edges), args.zbar.as_ref(), args.edges.as_ref(), args.labels.as_ref(), args.assignments.as_ref()]
        .into_iter()
        .flatten()
        .chain(&args.sigma_true)
        .chain(&args.sigma_hat)
    {
        require(p)?;
    }
    let zbar = match &args.zbar {
        Some(path) => {
            let m = io::read_matrix(path)?;
            Some(ZScoreMatrix::new(m).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let p = match (&zbar, args.p) {
        (Some(z), _) => z.p(),
        (None, Some(p)) => p,
        (None, None) => return Err(CliError::Usage("give --zbar or --p so the number of variables is known".into())),
    };
    let truth = io::read_edges(&args.truth_edges, p)?;
    let estimated = match (&args.edges, &zbar) {
        (Some(path), _) => io::read_edges(path, p)?,
        (None, Some(z)) => select_edges(z, args.alpha2)?.adjacency,
        (None, None) => return Err(CliError::Usage("give --zbar, --edges or both".into())),
    };
    let scores = zbar.unwrap_or_else(|| ZScoreMatrix::from_upper(p, |i, j| if estimated.contains(i, j) { 1.0 } else { 0.0 }));

    let pr = pr_curve(&scores, &truth)?;
    let conf = confusion(&estimated, &truth)?;

    let (rates, map) = match (&args.labels, &args.assignments) {
        (Some(lp), Some(ap)) => {
            let truth_labels = io::read_labels(lp, None)?;
            let est = io::read_labels(ap, Some(truth_labels.n_components()))?;
            (Some(cluster_rates(&est, &truth_labels)?), Some(match_clusters(&est, &truth_labels)?))
        }
        (None, None) => (None, None),
        _ => return Err(CliError::Usage("--labels and --assignments go together".into())),
    };
    let losses = if args.sigma_true.is_empty() && args.sigma_hat.is_empty() {
        None
    } else {
        let truth_cov = read_matrices(&args.sigma_true)?;
        let hat = read_matrices(&args.sigma_hat)?;
        if truth_cov.len() != hat.len() {
            return Err(CliError::Data(format!("{} true and {} estimated covariances", truth_cov.len(), hat.len())));
        }
        let paired = match &map {
            Some(map) if map.len() == hat.len() => {
                let mut paired = hat.clone();
                for (e, &t) in map.iter().enumerate() {
                    paired[t] = hat[e].clone();
                }
                paired
            }
            _ => hat,
        };
        Some(norm_losses(&paired, &truth_cov)?)
    };
    let report = EvalReport { pr, confusion: conf, losses, rates };
    write_report(&args.out, &report, &estimated, &truth)
}

fn write_report(out: &Path, report: &EvalReport, estimated: &AdjacencyMatrix, truth: &AdjacencyMatrix) -> CliResult<()> {
    io::ensure_dir(out)?;
    let mut curve = String::from("threshold,recall,precision\n");
    for pt in &report.pr.points {
        let _ = writeln!(curve, "{},{},{}", pt.threshold, pt.recall, pt.precision);
    }
    io::write_text(&out.join("pr_curve.csv"), &curve)?;

    let c = &report.confusion;
    let mut kv = KeyValues::default();
    kv.push("version", VERSION);
    kv.push("auc", report.pr.auc);
    kv.push("true_edges", truth.edge_count());
    kv.push("estimated_edges", estimated.edge_count());
    kv.push("tp", c.tp);
    kv.push("fp", c.fp);
    kv.push("fn", c.fn_);
    kv.push("tn", c.tn);
    kv.push("fdp", c.false_discovery_proportion());
    let mut summary = format!("auc {:.4}, tp {}, fp {}, fn {}", report.pr.auc, c.tp, c.fp, c.fn_);
    if let Some(l) = &report.losses {
        kv.push("sl", l.sl);
        kv.push("fl", l.fl);
        kv.push("kl", l.kl);
        let _ = write!(summary, ", SL {:.3}, FL {:.3}, KL {:.3}", l.sl, l.fl, l.kl);
    }
    if let Some(r) = &report.rates {
        kv.push("fsr", r.fsr);
        kv.push("nsr", r.nsr);
        let _ = write!(summary, ", fsr {:.4}, nsr {:.4}", r.fsr, r.nsr);
    }
    kv.write(&out.join("report.txt"))?;
    info!("report written to {}", out.display());
    println!("{summary}");
    Ok(())
}

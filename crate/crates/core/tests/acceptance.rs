//! Exit criteria for the workspace. Runs every criterion in order, prints one
//! `PASS`/`FAIL` line for each and exits nonzero if any failed.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use sculpture_core::ansatz::{AnsatzSpec, FeatureVector};
use sculpture_core::commands::{
    cmd_diagnose, cmd_meta_train, cmd_sweep, DiagnoseOptions, InputSource, MetaTrainReport,
    ThetaSource,
};
use sculpture_core::config::RunConfig;
use sculpture_core::downstream::{classifier_forward, cross_entropy, grad_theta_task, ReadoutParams};
use sculpture_core::fsmetric::{fidelity_expansion_residual, fs_metric_covariance, fs_metric_projector};
use sculpture_core::sculpture::{
    meta_backward, meta_forward, meta_loss, meta_loss_grad_theta, MetaConfig, MetaModelParams,
};
use sculpture_core::spectral::{
    contraction_factor, eigh_matrix, eigvalsh, summarize_eigenvalues, SpectralThresholds,
};

type Verdict = Result<String, String>;

/// `Ok(detail)` when `failures` is empty, otherwise the failures joined.
fn verdict(failures: Vec<String>, detail: String) -> Verdict {
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn require(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn dataset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/diabetes.csv")
}

fn base_config(out_dir: &Path, seed: u64) -> RunConfig {
    let mut config = RunConfig {
        seed,
        ..RunConfig::default()
    };
    config.paths.dataset = dataset_path();
    config.paths.out_dir = out_dir.to_path_buf();
    config
}

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let spec = AnsatzSpec::new(4, 2, 4);
    let mut r = rng(1001);
    let (mut gap, mut residual) = (0.0f64, 0.0f64);
    let (mut ratio_lo, mut ratio_hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..100 {
        let x = features(&mut r, 4);
        let theta = angles(&mut r, spec.num_params());
        let a = fs_metric_projector(&spec, &x, &theta).map_err(|e| e.to_string())?;
        let b = fs_metric_covariance(&spec, &x, &theta).map_err(|e| e.to_string())?;
        for (u, v) in a.entries.as_slice().iter().zip(b.entries.as_slice()) {
            gap = gap.max((u - v).abs());
        }
        let dir = normal_vec(&mut r, spec.num_params(), 1.0);
        let n = norm(&dir);
        let step = |s: f64| dir.iter().map(|v| v * s / n).collect::<Vec<_>>();
        let full = fidelity_expansion_residual(&spec, &x, &theta, &step(1e-3)).map_err(|e| e.to_string())?;
        let half = fidelity_expansion_residual(&spec, &x, &theta, &step(5e-4)).map_err(|e| e.to_string())?;
        residual = residual.max(full);
        ratio_lo = ratio_lo.min(full / half);
        ratio_hi = ratio_hi.max(full / half);
    }
    let elapsed = start.elapsed();
    let mut f = Vec::new();
    require(&mut f, gap <= 1e-10, || format!("projector/covariance gap {gap:.2e} > 1e-10"));
    require(&mut f, residual <= 1e-6, || format!("residual {residual:.2e} > 1e-6"));
    require(&mut f, ratio_lo >= 6.0 && ratio_hi <= 10.0, || {
        format!("halving factor range [{ratio_lo:.3}, {ratio_hi:.3}] outside [6, 10]")
    });
    require(&mut f, elapsed < Duration::from_secs(30), || format!("runtime {elapsed:.1?} ≥ 30 s"));
    verdict(
        f,
        format!(
            "max gap {gap:.2e}, max residual {residual:.2e}, halving factor [{ratio_lo:.3}, {ratio_hi:.3}], {elapsed:.1?}"
        ),
    )
}

fn eigen_solver() -> Verdict {
    let mut r = rng(2002);
    let (mut res, mut tr, mut orth) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let g = random_symmetric(&mut r, 24);
        let fro = g.frobenius_norm();
        let eig = eigh_matrix(&g).map_err(|e| e.to_string())?;
        for (lam, v) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
            let gv = g.mul_vec(v);
            let diff: Vec<f64> = gv.iter().zip(v).map(|(a, b)| a - lam * b).collect();
            res = res.max(norm(&diff) / fro);
        }
        tr = tr.max((eig.eigenvalues.iter().sum::<f64>() - g.trace()).abs());
        for (i, a) in eig.eigenvectors.iter().enumerate() {
            for (j, b) in eig.eigenvectors.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                orth = orth.max((dot - target).abs());
            }
        }
    }
    let mut f = Vec::new();
    require(&mut f, res <= 1e-9, || format!("relative residual {res:.2e} > 1e-9"));
    require(&mut f, tr <= 1e-9, || format!("trace gap {tr:.2e} > 1e-9"));
    require(&mut f, orth <= 1e-10, || format!("orthonormality {orth:.2e} > 1e-10"));
    verdict(f, format!("residual/‖G‖_F {res:.2e}, trace gap {tr:.2e}, orthonormality {orth:.2e}"))
}

fn gradient_suites() -> Verdict {
    // generator backprop against central differences over every weight
    let spec = AnsatzSpec::default();
    let mut r = rng(3003);
    let (d, h, p) = (spec.feature_dim, 64, spec.num_params());
    let phi = MetaModelParams::random_normal(d, h, p, 0.3, &mut r).map_err(|e| e.to_string())?;
    let x = features(&mut r, d);
    let upstream = normal_vec(&mut r, p, 1.0);
    let (_, cache) = meta_forward(&phi, &x).map_err(|e| e.to_string())?;
    let exact = meta_backward(&phi, &cache, &upstream).map_err(|e| e.to_string())?;
    let fd = central_gradient(phi.as_slice(), 1e-5, |w| {
        let q = MetaModelParams::from_flat(d, h, p, phi.activation(), w.to_vec()).unwrap();
        let theta = meta_forward(&q, &x).unwrap().0;
        theta.iter().zip(&upstream).map(|(t, c)| t * c).sum()
    });
    let backprop = rel_err(exact.as_slice(), &fd, 1e-12);

    // composed generator gradient on a 2-qubit circuit
    let toy = AnsatzSpec::new(2, 1, 2);
    let thresholds = SpectralThresholds::default();
    let scheme = MetaConfig::default().block_scheme;
    let mut end_to_end = 0.0f64;
    for seed in 0..3 {
        let mut r = rng(3100 + seed);
        let phi = MetaModelParams::random_normal(2, 4, toy.num_params(), 0.5, &mut r).map_err(|e| e.to_string())?;
        let x_rep = features(&mut r, 2);
        let batch: Vec<FeatureVector> = (0..3).map(|_| features(&mut r, 2)).collect();
        let (theta, cache) = meta_forward(&phi, &x_rep).map_err(|e| e.to_string())?;
        let dtheta = meta_loss_grad_theta(&toy, &theta, &batch, thresholds, scheme, 1e-4).map_err(|e| e.to_string())?;
        let composed = meta_backward(&phi, &cache, &dtheta.grad).map_err(|e| e.to_string())?;
        let direct = central_gradient(phi.as_slice(), 1e-5, |w| {
            let q = MetaModelParams::from_flat(2, 4, toy.num_params(), phi.activation(), w.to_vec()).unwrap();
            meta_loss(&q, &x_rep, &batch, &toy, thresholds).unwrap().0
        });
        end_to_end = end_to_end.max(rel_err(composed.as_slice(), &direct, 1e-9));
    }

    // parameter-shift task gradient
    let mut shift = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(3200 + seed);
        let theta = angles(&mut r, toy.num_params());
        let readout = ReadoutParams::random_normal(2, 1.0, &mut r).map_err(|e| e.to_string())?;
        let phi = MetaModelParams::random_normal(2, 4, toy.num_params(), 0.5, &mut r).map_err(|e| e.to_string())?;
        let batch: Vec<(FeatureVector, u8)> = (0..4).map(|i| (features(&mut r, 2), (i % 2) as u8)).collect();
        let lambda = 0.5;
        let exact = grad_theta_task(&theta, &readout, &batch, lambda, &phi, &toy).map_err(|e| e.to_string())?;
        let fd = central_gradient(&theta, 1e-5, |t| {
            let t = t.to_vec().into();
            batch
                .iter()
                .map(|(x, y)| {
                    let z = classifier_forward(&t, &readout, x, lambda, &phi, &toy).unwrap();
                    cross_entropy(&z, *y).unwrap()
                })
                .sum::<f64>()
                / batch.len() as f64
        });
        shift = shift.max(rel_err(&exact, &fd, 1e-8));
    }

    let mut f = Vec::new();
    require(&mut f, backprop <= 1e-5, || format!("backprop rel err {backprop:.2e} > 1e-5"));
    require(&mut f, end_to_end <= 1e-3, || format!("end-to-end rel err {end_to_end:.2e} > 1e-3"));
    require(&mut f, shift <= 1e-6, || format!("parameter-shift rel err {shift:.2e} > 1e-6"));
    verdict(
        f,
        format!("backprop {backprop:.2e}, end-to-end {end_to_end:.2e}, parameter-shift {shift:.2e}"),
    )
}

fn spectral_identities() -> Verdict {
    let mut f = Vec::new();
    let thresholds = SpectralThresholds::default();
    for dim in [2usize, 24, 72] {
        let s = summarize_eigenvalues(&vec![0.25; dim], thresholds).map_err(|e| e.to_string())?;
        let n = dim as f64;
        let ok = (s.kappa - 1.0).abs() <= 1e-9
            && s.log_kappa.abs() <= 1e-9
            && (s.entropy - n.ln()).abs() <= 1e-9
            && (s.effective_dim - n).abs() <= 1e-9;
        require(&mut f, ok, || format!("isotropic p'={dim}: {s:?}"));
    }
    let mut r = rng(4004);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_psd(&mut r, 12, 12);
        let eig = eigvalsh(&m).map_err(|e| e.to_string())?;
        let s = summarize_eigenvalues(&eig, thresholds).map_err(|e| e.to_string())?;
        let lhs = m.trace() / s.lambda_min;
        let rhs = s.num_retained as f64 * s.kappa;
        worst = worst.max(lhs / rhs);
    }
    require(&mut f, worst <= 1.0 + 1e-12, || format!("Tr/λ_min exceeds p'κ by factor {worst}"));
    let rho1 = contraction_factor(1.0).map_err(|e| e.to_string())?;
    let rho3 = contraction_factor(3.0).map_err(|e| e.to_string())?;
    require(&mut f, rho1 == 0.0, || format!("ρ²(1) = {rho1}"));
    require(&mut f, rho3 == 0.25, || format!("ρ²(3) = {rho3}"));
    verdict(f, format!("max (Tr/λ_min)/(p'κ) {worst:.4}, ρ²(1) {rho1}, ρ²(3) {rho3}"))
}

struct MetaRuns {
    reports: Vec<MetaTrainReport>,
    elapsed: Duration,
}

const META_SEEDS: [u64; 3] = [0, 1, 2];

fn run_meta_training(root: &Path) -> Result<MetaRuns, String> {
    let start = Instant::now();
    let reports = META_SEEDS
        .iter()
        .map(|&s| cmd_meta_train(&base_config(&root.join(format!("meta{s}")), s)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("meta-training failed: {e}"))?;
    Ok(MetaRuns {
        reports,
        elapsed: start.elapsed(),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let all: Vec<f64> = v.collect();
    all.iter().sum::<f64>() / all.len() as f64
}

fn meta_training_reproduction(runs: &MetaRuns) -> Verdict {
    let steps = MetaConfig::default().steps;
    let mut f = Vec::new();
    for (s, rep) in META_SEEDS.iter().zip(&runs.reports) {
        require(&mut f, rep.outcome.trace.len() == steps, || {
            format!("seed {s}: {} trace rows", rep.outcome.trace.len())
        });
    }
    let first = |g: fn(&sculpture_core::sculpture::MetaTraceRow) -> f64| {
        mean(runs.reports.iter().map(|r| g(&r.outcome.trace.rows[0])))
    };
    let last = |g: fn(&sculpture_core::sculpture::MetaTraceRow) -> f64| {
        mean(runs.reports.iter().map(|r| g(r.outcome.trace.rows.last().unwrap())))
    };
    let (lk0, lk1) = (first(|r| r.summary.log_kappa), last(|r| r.summary.log_kappa));
    let (lo0, lo1) = (first(|r| r.summary.lambda_min), last(|r| r.summary.lambda_min));
    let (hi0, hi1) = (first(|r| r.summary.lambda_max), last(|r| r.summary.lambda_max));
    let (g0, g1) = (first(|r| r.grad_norm), last(|r| r.grad_norm));
    require(&mut f, (1.0..=2.0).contains(&lk0), || format!("initial log κ {lk0:.4} outside [1, 2]"));
    require(&mut f, lk1 <= 0.9, || format!("final log κ {lk1:.4} > 0.9"));
    require(&mut f, lk1 <= 0.7 * lk0, || format!("final log κ {lk1:.4} > 0.7 × initial {lk0:.4}"));
    require(&mut f, lo1 >= 1.5 * lo0, || format!("final λ_min {lo1:.4} < 1.5 × initial {lo0:.4}"));
    require(&mut f, hi1 <= 1.05 * hi0, || format!("final λ_max {hi1:.4} > 1.05 × initial {hi0:.4}"));
    require(&mut f, g1 <= 0.3 * g0, || format!("final grad norm {g1:.4} > 0.3 × initial {g0:.4}"));
    require(&mut f, runs.elapsed <= Duration::from_secs(15 * 60), || {
        format!("runtime {:.1?} > 15 min", runs.elapsed)
    });
    verdict(
        f,
        format!(
            "log κ {lk0:.4} → {lk1:.4}, λ_min {lo0:.4} → {lo1:.4}, λ_max {hi0:.4} → {hi1:.4}, grad norm {g0:.4} → {g1:.4}, {:.1?}",
            runs.elapsed
        ),
    )
}

fn conditioning_generalizes(runs: &MetaRuns, root: &Path) -> Verdict {
    let trained = &runs.reports[0];
    let final_lk = trained
        .final_summary()
        .ok_or("seed 0 trace has no finite step")?
        .log_kappa;
    let band = 0.25 * final_lk / 0.6375;
    let mut config = base_config(&root.join("diagnose"), META_SEEDS[0]);
    config.paths.checkpoint = Some(trained.checkpoint_path.clone());
    let options = DiagnoseOptions {
        theta: ThetaSource::Checkpoint,
        inputs: InputSource::TestSplit,
        dump_metric: None,
    };
    let report = cmd_diagnose(&config, &options).map_err(|e| e.to_string())?;
    let n = report.rows.len();
    let frac = report.fraction_below(band);
    let inside = report
        .rows
        .iter()
        .all(|row| row.theta.iter().all(|&t| t > 0.0 && t < std::f64::consts::PI));
    let mut lk: Vec<f64> = report.rows.iter().map(|r| r.summary.log_kappa).collect();
    lk.sort_by(f64::total_cmp);
    let mut f = Vec::new();
    require(&mut f, n >= 100, || format!("only {n} held-out inputs"));
    require(&mut f, frac >= 0.5, || format!("{:.1}% of inputs below log κ {band:.4}", 100.0 * frac));
    require(&mut f, inside, || "generated angle outside (0, π)".into());
    verdict(
        f,
        format!(
            "{n} inputs, band {band:.4} (training log κ {final_lk:.4}), fraction below {frac:.3}, median log κ {:.4}, below 0.25: {:.3}",
            lk[n / 2],
            report.fraction_below(0.25)
        ),
    )
}

const TREND_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.5, 1.0];

fn downstream_trend(runs: &MetaRuns, root: &Path) -> Verdict {
    let mut config = base_config(&root.join("sweep"), META_SEEDS[0]);
    config.paths.checkpoint = Some(runs.reports[0].checkpoint_path.clone());
    config.downstream.lambda_grid = TREND_GRID.to_vec();
    config.downstream.seeds = vec![0, 1, 2];
    config.downstream.epochs = 20;
    let start = Instant::now();
    let report = cmd_sweep(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let t = &report.table;
    let acc = t.mean_final(|r| r.final_accuracy());
    let loss = t.mean_final(|r| r.final_loss());
    let grad = t.mean_final(|r| r.final_grad_norm());
    let at = |l: f64| TREND_GRID.iter().position(|&g| g == l).unwrap();
    let (zero, half) = (at(0.0), at(0.5));
    let mut f = Vec::new();
    let gain = acc[half] - acc[zero];
    require(&mut f, gain >= 0.04, || format!("accuracy gain at λ=0.5 is {gain:.4} < 0.04"));
    for (j, &l) in TREND_GRID.iter().enumerate() {
        if l >= 0.2 {
            require(&mut f, loss[j] <= 0.3 && loss[j] < loss[zero], || {
                format!("λ={l}: train loss {:.4} (λ=0: {:.4})", loss[j], loss[zero])
            });
        }
        if l >= 0.4 {
            require(&mut f, grad[j] < grad[zero], || {
                format!("λ={l}: grad norm {:.4} ≥ λ=0 value {:.4}", grad[j], grad[zero])
            });
        }
    }
    require(&mut f, elapsed <= Duration::from_secs(30 * 60), || format!("runtime {elapsed:.1?} > 30 min"));
    let cols: Vec<String> = TREND_GRID
        .iter()
        .enumerate()
        .map(|(j, l)| format!("λ={l}: acc {:.4} loss {:.4} grad {:.4}", acc[j], loss[j], grad[j]))
        .collect();
    verdict(f, format!("{}, {elapsed:.1?}", cols.join(" | ")))
}

fn determinism(runs: &MetaRuns, root: &Path) -> Verdict {
    let seed = META_SEEDS[0];
    let rerun = cmd_meta_train(&base_config(&root.join("rerun"), seed)).map_err(|e| e.to_string())?;
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let original = &runs.reports[0];
    let mut f = Vec::new();
    require(&mut f, read(&original.trace_path)? == read(&rerun.trace_path)?, || {
        "trace CSV bytes differ".into()
    });
    require(&mut f, read(&original.checkpoint_path)? == read(&rerun.checkpoint_path)?, || {
        "checkpoint bytes differ".into()
    });
    verdict(f, format!("seed {seed}: trace and checkpoint byte-identical across runs"))
}

fn report(index: usize, name: &str, outcome: Verdict) -> bool {
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {index} {tag} [{name}] {detail}");
    ok
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let root = tempfile::tempdir().expect("temp dir");
    let mut all = true;
    all &= report(1, "metric oracle", guarded(metric_oracle));
    all &= report(2, "eigen-solver", guarded(eigen_solver));
    all &= report(3, "gradient suites", guarded(gradient_suites));
    all &= report(4, "spectral identities", guarded(spectral_identities));
    match run_meta_training(root.path()) {
        Ok(runs) => {
            all &= report(5, "meta-training reproduction", guarded(|| meta_training_reproduction(&runs)));
            all &= report(6, "conditioning on held-out inputs", guarded(|| conditioning_generalizes(&runs, root.path())));
            all &= report(7, "downstream trend", guarded(|| downstream_trend(&runs, root.path())));
            all &= report(8, "determinism", guarded(|| determinism(&runs, root.path())));
        }
        Err(e) => {
            for (i, name) in [
                (5, "meta-training reproduction"),
                (6, "conditioning on held-out inputs"),
                (7, "downstream trend"),
                (8, "determinism"),
            ] {
                report(i, name, Err(e.clone()));
            }
            all = false;
        }
    }
    if !all {
        std::process::exit(1);
    }
}

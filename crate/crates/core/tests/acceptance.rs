//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! so that every criterion prints exactly one PASS/FAIL line.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpfactor::directional::second_directional;
use sharpfactor::dynamics::{escape_experiment, linearized_run, EscapeConfig};
use sharpfactor::factors::{make_minimizer, DimSignature, EntryLaw, FactorChain, Target};
use sharpfactor::hessian_oracle::{dense_hessian_at_minimum, fd_dense_hessian, DEFAULT_ENTRY_CAP, FD_STEP, NULLITY_TOL};
use sharpfactor::landscape::{contour_grid, GridSpec, ProjectionBasis};
use sharpfactor::sharpness::{lambda_max, lambda_max_depth2_chain, lambda_max_general, lambda_max_scalar_chain};

const DENSE_TOL: f64 = 1e-8;
const FD_TOL: f64 = 1e-4;
const SPECIALIZATION_TOL: f64 = 1e-10;
const EXTREMAL_TOL: f64 = 1e-6;
const RAYLEIGH_SLACK: f64 = 1e-8;
const ESCAPE_FACTOR: f64 = 1e6;
const CATAPULT_FACTOR: f64 = 1e6;
const ESCAPE_BUDGET: usize = 100_000;
const LINEARIZED_TOL: f64 = 1e-10;
const TAYLOR_TOL: f64 = 0.1;
const CENTER_TOL: f64 = 1e-12;

/// Widths of the 15-layer scalar configuration: hidden widths uniform in
/// `[1, 8]`, drawn once with this seed.
const SCALAR15_DIMS_SEED: u64 = 15;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

struct Instances {
    small: Vec<(FactorChain, Target)>,
    scalar: Vec<(FactorChain, Target)>,
    depth2: Vec<(FactorChain, Target)>,
}

fn instances() -> Instances {
    let small = (0..50).map(small_minimizer).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let scalar = (0..20)
        .map(|s| {
            let depth = rng.random_range(2..=15);
            let sig = DimSignature::random(depth, 1, 1, (1, 8), 500 + s).unwrap();
            make_minimizer(&sig, 500 + s, EntryLaw::default()).unwrap()
        })
        .collect();
    let depth2 = (0..20)
        .map(|s| {
            let dims = if s == 0 {
                vec![20, 20, 10]
            } else {
                let d0 = rng.random_range(1..=12);
                let d2 = rng.random_range(1..=12);
                vec![d0, rng.random_range(d0.min(d2)..=16), d2]
            };
            make_minimizer(&DimSignature::new(dims).unwrap(), 900 + s, EntryLaw::default()).unwrap()
        })
        .collect();
    Instances { small, scalar, depth2 }
}

fn closed_form_vs_dense(inst: &Instances) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (c, t) in &inst.small {
        let g = lambda_max_general(c, t).unwrap().lambda_max;
        let h = dense_hessian_at_minimum(c, t, DEFAULT_ENTRY_CAP).unwrap();
        worst = worst.max(rel(g, h.lambda_max()));
    }
    let max_n = inst.small.iter().map(|(c, _)| c.signature().num_params()).max().unwrap();
    verdict(
        "closed_form_vs_dense_oracle",
        worst <= DENSE_TOL,
        format!(
            "{} minimizers (N <= {max_n}), max rel err {worst:.3e} (tol {DENSE_TOL:e}), {:.2}s",
            inst.small.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn closed_form_vs_fd(inst: &Instances) -> Outcome {
    let mut worst: f64 = 0.0;
    for (c, t) in inst.small.iter().take(20) {
        let g = lambda_max_general(c, t).unwrap().lambda_max;
        let fd = fd_dense_hessian(c, t, FD_STEP, DEFAULT_ENTRY_CAP).unwrap();
        worst = worst.max(rel(fd.lambda_max(), g));
    }
    verdict(
        "closed_form_vs_finite_differences",
        worst <= FD_TOL,
        format!("20 minimizers, max rel err {worst:.3e} (tol {FD_TOL:e})"),
    )
}

fn specializations(inst: &Instances) -> Outcome {
    let mut worst_scalar: f64 = 0.0;
    for (c, t) in &inst.scalar {
        let s = lambda_max_scalar_chain(c, t).unwrap().lambda_max;
        let g = lambda_max_general(c, t).unwrap().lambda_max;
        worst_scalar = worst_scalar.max(rel(s, g));
    }
    let mut worst_d2: f64 = 0.0;
    for (c, t) in &inst.depth2 {
        let s = lambda_max_depth2_chain(c, t).unwrap().lambda_max;
        let g = lambda_max_general(c, t).unwrap().lambda_max;
        worst_d2 = worst_d2.max(rel(s, g));
    }
    let max_l = inst.scalar.iter().map(|(c, _)| c.depth()).max().unwrap();
    verdict(
        "specialization_identities",
        worst_scalar <= SPECIALIZATION_TOL && worst_d2 <= SPECIALIZATION_TOL,
        format!(
            "20 scalar chains (L <= {max_l}) max rel err {worst_scalar:.3e}, 20 depth-2 max rel err {worst_d2:.3e} (tol {SPECIALIZATION_TOL:e})"
        ),
    )
}

fn extremal_direction_attains(inst: &Instances) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (c, t) in inst.small.iter().chain(&inst.scalar).chain(&inst.depth2) {
        let rep = lambda_max(c, t).unwrap();
        let dir = rep.extremal_direction.as_ref().unwrap();
        let q = second_directional(c, t, dir).unwrap();
        worst = worst.max(rel(q, rep.lambda_max));
        count += 1;
    }
    verdict(
        "extremal_direction_attains_bound",
        worst <= EXTREMAL_TOL,
        format!("{count} instances, max rel gap {worst:.3e} (tol {EXTREMAL_TOL:e})"),
    )
}

fn rayleigh_bound(inst: &Instances) -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut count = 0;
    for (k, (c, t)) in inst.small.iter().enumerate() {
        let lam = lambda_max(c, t).unwrap().lambda_max;
        for j in 0..1000 {
            let u = random_direction(c, (k as u64) << 20 | j);
            worst_ratio = worst_ratio.max(second_directional(c, t, &u).unwrap() / lam);
            count += 1;
        }
    }
    verdict(
        "rayleigh_upper_bound",
        worst_ratio <= 1.0 + RAYLEIGH_SLACK,
        format!("{count} unit directions, max q(U)/lambda = {worst_ratio:.6} (limit 1 + {RAYLEIGH_SLACK:e})"),
    )
}

fn nullity(inst: &Instances) -> Outcome {
    let mut all = true;
    let mut min_excess = i64::MAX;
    for (c, t) in inst.small.iter().chain(&inst.scalar).chain(&inst.depth2) {
        let sig = c.signature();
        let h = dense_hessian_at_minimum(c, t, DEFAULT_ENTRY_CAP).unwrap();
        let nul = h.nullity(NULLITY_TOL).unwrap();
        let bound = sig.num_params().saturating_sub(sig.input_dim() * sig.output_dim());
        all &= nul >= bound;
        min_excess = min_excess.min(nul as i64 - bound as i64);
    }
    verdict(
        "nullity_bound",
        all,
        format!("90 minimizers, min (nullity - (N - d_L d_0)) = {min_excess}"),
    )
}

fn escape_regimes() -> Outcome {
    let start = Instant::now();
    let scalar15 = DimSignature::random(15, 1, 1, (1, 8), SCALAR15_DIMS_SEED).unwrap();
    let configs = [("scalar15", scalar15.dims().to_vec()), ("depth2_20x20x10", vec![20, 20, 10])];
    let mut failures = Vec::new();
    let mut cells = 0;
    let mut min_catapult = f64::INFINITY;
    let mut max_stable_ratio: f64 = 0.0;
    for (label, dims) in &configs {
        for radius in [1e-12, 1e-9] {
            let mut cfg = EscapeConfig::new(dims.clone(), (0..5).collect(), vec![0.9, 1.1, 2.0], radius);
            cfg.max_iters = ESCAPE_BUDGET;
            cfg.escape_factor = ESCAPE_FACTOR;
            cfg.record_every = 100;
            let report = escape_experiment(&cfg).unwrap();
            for cell in &report.cells {
                cells += 1;
                let tag = format!("{label} r={radius:e} seed={} x{}", cell.seed, cell.multiplier);
                if cell.multiplier < 1.0 {
                    max_stable_ratio = max_stable_ratio.max(cell.final_dist / cell.initial_dist);
                    if cell.verdict.escaped || cell.final_dist > cell.initial_dist {
                        failures.push(format!("{tag} left the minimum"));
                    }
                } else {
                    let escaped = cell.verdict.escape_iteration.is_some_and(|k| k <= ESCAPE_BUDGET);
                    let cat = cell.catapult_ratio.unwrap_or(0.0);
                    min_catapult = min_catapult.min(cat);
                    if !escaped {
                        failures.push(format!("{tag} did not escape"));
                    }
                    if cat < CATAPULT_FACTOR {
                        failures.push(format!("{tag} catapult ratio {cat:.3e}"));
                    }
                }
            }
        }
    }
    verdict(
        "escape_regime_reproduction",
        failures.is_empty(),
        format!(
            "{cells} runs (scalar dims {:?}), stable max final/initial dist {max_stable_ratio:.3e}, unstable min catapult {min_catapult:.3e}, {:.1}s{}",
            scalar15.dims(),
            start.elapsed().as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn linearized_rates(inst: &Instances) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut resolved = 0;
    for (k, (c, t)) in inst.small.iter().take(10).enumerate() {
        let h = dense_hessian_at_minimum(c, t, DEFAULT_ENTRY_CAP).unwrap();
        let w = c.flatten();
        let lam = h.lambda_max();
        let v1 = h.top_eigenvector().unwrap();
        let u = random_direction(c, 77 + k as u64).flatten();
        for (start, mult) in [(&v1, 1.1), (&u, 0.9), (&u, 1.1), (&u, 2.0)] {
            let run = linearized_run(&(&w + start * 1e-6), &w, &h, mult * 2.0 / lam, 50).unwrap();
            for g in run.component_growth(&h).unwrap().into_iter().filter(|g| g.resolved) {
                worst = worst.max(rel(g.observed, g.predicted));
                resolved += 1;
            }
        }
    }
    verdict(
        "linearized_growth_factors",
        worst <= LINEARIZED_TOL && resolved > 0,
        format!("{resolved} eigencomponents over 50 steps, max rel err {worst:.3e} (tol {LINEARIZED_TOL:e})"),
    )
}

fn contour_taylor(inst: &Instances) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_center: f64 = 0.0;
    for (c, t) in inst.small.iter().skip(10).take(10) {
        let h = dense_hessian_at_minimum(c, t, DEFAULT_ENTRY_CAP).unwrap();
        let basis = ProjectionBasis::from_hessian(c, &h).unwrap();
        let lam = lambda_max(c, t).unwrap().lambda_max;
        for x in [1e-4, 1e-5, 1e-6] {
            let spec = GridSpec {
                x_range: (0.0, x),
                y_range: (0.0, x),
                nx: 2,
                ny: 2,
            };
            let g = contour_grid(c, t, &basis, &spec).unwrap();
            let q = 0.5 * lam * x * x;
            worst = worst.max((g.value(1, 0) - q).abs() / q);
            worst_center = worst_center.max(g.value(0, 0) / t.frobenius_sq());
        }
    }
    verdict(
        "contour_taylor_check",
        worst <= TAYLOR_TOL && worst_center <= CENTER_TOL,
        format!(
            "10 instances, max |p(x,0) - lambda x^2/2| / (lambda x^2/2) = {worst:.3e} (tol {TAYLOR_TOL}), max p(0,0)/|M|^2 = {worst_center:.1e} (tol {CENTER_TOL:e})"
        ),
    )
}

fn cli_determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_sharpfactor");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"kind": "verify", "dims": [1, 9, 4, 8, 1], "seed": 7}"#).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    let cases: Vec<(&str, Vec<String>)> = vec![
        ("generate", strs(&["generate", "--random-dims", "6,2,3,1,5", "--seed", "3"])),
        ("sharpness", strs(&["sharpness", "--dims", "1,9,4,8,1", "--seed", "7"])),
        ("verify", strs(&["verify", "--dims", "3,4,2", "--seed", "1"])),
        ("run", vec!["run".into(), "--config".into(), cfg]),
        (
            "escape",
            strs(&["escape", "--dims", "2,3,2", "--seeds", "0,1", "--eta-multipliers", "0.9,1.0,1.1", "--max-iters", "20000", "--record-every", "50"]),
        ),
        (
            "contour",
            strs(&["contour", "--dims", "2,3,2", "--seed", "4", "--overlay", "1.1", "--radius", "1e-6", "--max-iters", "300", "--grid", "21"]),
        ),
        ("contour_random", strs(&["contour", "--dims", "2,3,2", "--seed", "4", "--basis", "random", "--grid", "0.5,21"])),
    ];
    let mut differing = Vec::new();
    for (name, args) in &cases {
        let runs: Vec<_> = (0..2)
            .map(|k| {
                let out_dir = tmp.path().join(format!("{name}_{k}"));
                let mut cmd = Command::new(exe);
                cmd.args(args).arg("--out").arg(&out_dir);
                if k == 1 {
                    cmd.env("SHARPFACTOR_THREADS", "1");
                }
                let out = cmd.output().unwrap();
                (out.status.code(), out.stdout, dir_bytes(&out_dir))
            })
            .collect();
        if runs[0].0 != Some(0) || runs[0] != runs[1] {
            differing.push(name.to_string());
        }
    }
    verdict(
        "cli_determinism",
        differing.is_empty(),
        format!(
            "{} commands rerun with identical config and seed{}",
            cases.len(),
            if differing.is_empty() { ", stdout and files byte-identical".into() } else { format!("; differing: {differing:?}") }
        ),
    )
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<_> = rd
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let inst = instances();
    let checks: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(|| closed_form_vs_dense(&inst)),
        Box::new(|| closed_form_vs_fd(&inst)),
        Box::new(|| specializations(&inst)),
        Box::new(|| extremal_direction_attains(&inst)),
        Box::new(|| rayleigh_bound(&inst)),
        Box::new(|| nullity(&inst)),
        Box::new(escape_regimes),
        Box::new(|| linearized_rates(&inst)),
        Box::new(|| contour_taylor(&inst)),
        Box::new(cli_determinism),
    ];
    let mut failed = 0;
    for check in &checks {
        let o = check();
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

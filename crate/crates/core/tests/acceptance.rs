//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use l1rates::certificates::{assemble_assumption, brute_force_gamma, embedding_gamma, injectivity_gamma, GammaTable};
use l1rates::harness::{nazarov_check, run_rate_experiment, ExperimentConfig, NazarovConfig};
use l1rates::operator::{ForwardOperator, YNorm};
use l1rates::rate::{build_phi, check_vi, compute_beta, RateFunction, ViSampler};
use l1rates::solver::{soft_threshold, solve_tikhonov, Exponent, SolverOptions, TikhonovProblem};
use l1rates::{IndexSetFamily, TruncatedSequence};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt())
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// The 50 seeded dense operators shared by criteria 2 and 3.
fn random_operators() -> Vec<ForwardOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let m = rng.random_range(6..=12);
            let n = rng.random_range(4..=8usize.min(m));
            ForwardOperator::dense(gaussian_matrix(&mut rng, m, n), YNorm::Euclidean).expect("full column rank")
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for q in [1.5, 2.0, 4.0, f64::INFINITY] {
        let op = ForwardOperator::lq_embedding(12, q).unwrap();
        for n in 1..=5 {
            let g = brute_force_gamma(&op, n, IndexSetFamily::AllSubsets)
                .unwrap()
                .gamma
                .finite()
                .unwrap();
            worst = worst.max(rel_err(g, embedding_gamma(q, n)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 30.0,
        format!("max rel err {worst:.2e}, {secs:.2} s"),
    )
}

fn criterion_2(ops: &[ForwardOperator]) -> Outcome {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for op in ops {
        for n in 1..=3 {
            let cert = brute_force_gamma(op, n, IndexSetFamily::AllSubsets)
                .unwrap()
                .gamma
                .finite()
                .unwrap();
            let inj = injectivity_gamma(op, n).unwrap().finite().unwrap();
            worst = worst.max(rel_err(cert, inj));
            compared += 1;
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{compared} (operator, n) pairs, max rel diff {worst:.2e}"),
    )
}

fn criterion_3(ops: &[ForwardOperator]) -> Outcome {
    let mut monotone = true;
    let mut checked = 0;
    let mut test_ops: Vec<ForwardOperator> = ops.to_vec();
    for q in [1.5, 2.0, 4.0, f64::INFINITY] {
        test_ops.push(ForwardOperator::lq_embedding(10, q).unwrap());
    }
    let diag_dims = [4usize, 8, 16, 32];
    let diag_ops: Vec<ForwardOperator> = diag_dims
        .iter()
        .map(|&n| {
            let a = DMatrix::from_diagonal(&DVector::from_fn(n, |k, _| 1.0 / (k + 1) as f64));
            ForwardOperator::dense(a, YNorm::Euclidean).unwrap()
        })
        .collect();
    test_ops.extend(diag_ops.iter().cloned());
    for op in &test_ops {
        let n_max = op.domain_dim().min(3);
        let gammas: Vec<f64> = (1..=n_max)
            .map(|n| {
                brute_force_gamma(op, n, IndexSetFamily::AllSubsets)
                    .unwrap()
                    .gamma
                    .finite()
                    .unwrap()
            })
            .collect();
        monotone &= gammas.windows(2).all(|w| w[0] <= w[1]);
        checked += 1;
    }
    let mut diag_ok = true;
    let mut ratios = Vec::new();
    for (op, &n) in diag_ops.iter().zip(&diag_dims) {
        let g1 = brute_force_gamma(op, 1, IndexSetFamily::AllSubsets)
            .unwrap()
            .gamma
            .finite()
            .unwrap();
        diag_ok &= g1 >= 0.9 * n as f64;
        ratios.push(format!("{:.3}", g1 / n as f64));
    }
    outcome(
        monotone && diag_ok,
        format!(
            "nondecreasing on {checked} operators: {monotone}; diagonal gamma_1/N = [{}]",
            ratios.join(", ")
        ),
    )
}

const C_TARGET: f64 = 0.99;

struct ViCase {
    name: &'static str,
    op: ForwardOperator,
    xdag: Vec<f64>,
    family: IndexSetFamily,
}

fn vi_cases() -> Vec<ViCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let decay = |n: usize, mu: f64| (1..=n).map(|k| (k as f64).powf(-mu)).collect::<Vec<_>>();
    let mut sparse = vec![0.0; 15];
    sparse[2] = 1.5;
    sparse[7] = -0.4;
    sparse[11] = 0.9;
    let mut cases = vec![
        ViCase {
            name: "l2 embedding, k^-2",
            op: ForwardOperator::lq_embedding(30, 2.0).unwrap(),
            xdag: decay(30, 2.0),
            family: IndexSetFamily::AllSubsets,
        },
        ViCase {
            name: "l1.5 embedding, k^-1.5",
            op: ForwardOperator::lq_embedding(20, 1.5).unwrap(),
            xdag: decay(20, 1.5),
            family: IndexSetFamily::AllSubsets,
        },
        ViCase {
            name: "linf embedding, sparse",
            op: ForwardOperator::lq_embedding(15, f64::INFINITY).unwrap(),
            xdag: sparse,
            family: IndexSetFamily::AllSubsets,
        },
        ViCase {
            name: "l4 embedding, gaussian",
            op: ForwardOperator::lq_embedding(25, 4.0).unwrap(),
            xdag: gaussian_vec(&mut rng, 25),
            family: IndexSetFamily::Prefix,
        },
    ];
    let dense = [
        (12, 5, IndexSetFamily::AllSubsets),
        (60, 4, IndexSetFamily::AllSubsets),
        (10, 4, IndexSetFamily::Prefix),
        (80, 5, IndexSetFamily::AllSubsets),
        (40, 5, IndexSetFamily::Prefix),
    ];
    let names = [
        "dense 12x5",
        "dense 60x4",
        "dense 10x4 prefix",
        "dense 80x5",
        "dense 40x5 prefix",
    ];
    for ((m, n, family), name) in dense.into_iter().zip(names) {
        let op = ForwardOperator::dense(gaussian_matrix(&mut rng, m, n), YNorm::Euclidean).unwrap();
        let mut xdag = gaussian_vec(&mut rng, n);
        if n % 2 == 1 {
            xdag[n - 1] = 0.0;
        }
        cases.push(ViCase { name, op, xdag, family });
    }
    let diag = DMatrix::from_diagonal(&DVector::from_fn(6, |k, _| 1.0 / (k + 1) as f64));
    cases.push(ViCase {
        name: "diagonal 1/k",
        op: ForwardOperator::dense(diag, YNorm::Euclidean).unwrap(),
        xdag: decay(6, 1.0),
        family: IndexSetFamily::AllSubsets,
    });
    cases
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    let mut all_hold = true;
    let mut notes = Vec::new();
    for (i, case) in vi_cases().into_iter().enumerate() {
        let n_max = case.op.domain_dim();
        let table = match assemble_assumption(&case.op, case.family, n_max, C_TARGET) {
            Ok(t) => t,
            Err(e) => {
                all_hold = false;
                notes.push(format!("{}: not certified ({e})", case.name));
                continue;
            }
        };
        let xdag = TruncatedSequence::new(case.xdag);
        let phi = build_phi(&xdag, &table).unwrap();
        let beta = compute_beta(table.c_used).unwrap();
        let sampler = ViSampler {
            samples: 10_000,
            seed: 100 + i as u64,
            ..ViSampler::default()
        };
        let report = check_vi(&case.op, &xdag, beta, &phi, &sampler).unwrap();
        all_hold &= report.worst_slack >= -1e-9;
        worst = worst.min(report.worst_slack);
        notes.push(format!(
            "{} [{}, c={:.3}]",
            case.name,
            table.method.as_str(),
            table.c_used
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        all_hold && notes.len() == 10 && secs < 120.0,
        format!(
            "10 configurations, worst slack {worst:.3e}, {secs:.1} s; {}",
            notes.join("; ")
        ),
    )
}

fn scan(xdag: &TruncatedSequence, table: &GammaTable, t: f64) -> f64 {
    table
        .entries
        .iter()
        .map(|e| 2.0 * (table.family.tail(xdag, e.n) + e.gamma * t / (1.0 + table.c_used)))
        .fold(f64::INFINITY, f64::min)
}

fn phi_properties(phi: &RateFunction, xdag: &TruncatedSequence, table: &GammaTable, t_max: f64) -> (bool, f64) {
    let ts: Vec<f64> = (0..1000).map(|i| t_max * i as f64 / 999.0).collect();
    let vals: Vec<f64> = ts.iter().map(|&t| phi.eval(t)).collect();
    let monotone = vals.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let concave = vals.windows(3).all(|w| w[1] >= 0.5 * (w[0] + w[2]) - 1e-12);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let t = t_max * (i as f64 / 19.0).powi(3);
        worst = worst.max((phi.eval(t) - scan(xdag, table, t)).abs());
    }
    (monotone && concave && phi.eval(0.0) == 0.0 && worst <= 1e-12, worst)
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut configs = 0;
    for case in vi_cases() {
        let n_max = case.op.domain_dim();
        let Ok(table) = assemble_assumption(&case.op, case.family, n_max, C_TARGET) else {
            ok = false;
            continue;
        };
        let xdag = TruncatedSequence::new(case.xdag);
        let phi = build_phi(&xdag, &table).unwrap();
        let t_max = 2.0 * phi.breakpoints().last().map(|b| b.t).unwrap_or(1.0).max(1e-3);
        let (pass, w) = phi_properties(&phi, &xdag, &table, t_max);
        ok &= pass;
        worst = worst.max(w);
        configs += 1;
    }
    outcome(ok, format!("{configs} rate functions, max |phi - scan| {worst:.2e}"))
}

/// Grid search on `[-2, 2]^N`, zooming onto the best point: every level
/// scans an 11^N box around the incumbent with a tenth of the previous step.
fn grid_search(obj: &dyn Fn(&[f64]) -> f64, n: usize) -> f64 {
    let mut center = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut step = 0.1;
    let mut half = 20i64;
    while step >= 1e-6 {
        let width = (2 * half + 1) as usize;
        let mut idx = vec![0usize; n];
        let mut incumbent = center.clone();
        loop {
            let x: Vec<f64> = (0..n)
                .map(|k| (center[k] + (idx[k] as i64 - half) as f64 * step).clamp(-2.0, 2.0))
                .collect();
            let f = obj(&x);
            if f < best {
                best = f;
                incumbent = x;
            }
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < width {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        center = incumbent;
        step /= 10.0;
        half = 5;
    }
    best
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = SolverOptions::default();

    let mut soft_err = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for trial in 0..10 {
        let n = 5 + trial;
        let id = ForwardOperator::dense(DMatrix::identity(n, n), YNorm::Euclidean).unwrap();
        let y = gaussian_vec(&mut rng, n);
        let alpha = 0.1 + 0.2 * trial as f64;
        let prob = TikhonovProblem::new(&id, DVector::from_vec(y.clone()), alpha, Exponent::Two).unwrap();
        let (x, diag) = solve_tikhonov(&prob, &opts).unwrap();
        for (a, b) in x.coeffs().iter().zip(soft_threshold(&y, alpha / 2.0)) {
            soft_err = soft_err.max((a - b).abs());
        }
        worst_kkt = worst_kkt.max(diag.kkt_residual);
    }

    let mut gap = f64::NEG_INFINITY;
    for trial in 0..9 {
        let n = 2 + trial % 3;
        let m = n + 2 + trial % 4;
        let op = ForwardOperator::dense(gaussian_matrix(&mut rng, m, n), YNorm::Euclidean).unwrap();
        let xdag: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = op.apply_slice(&xdag).unwrap();
        y.iter_mut()
            .for_each(|v| *v += 0.05 * rng.sample::<f64, _>(StandardNormal));
        let alpha = [0.02, 0.1, 0.3][trial % 3];
        let prob = TikhonovProblem::new(&op, y, alpha, Exponent::Two).unwrap();
        let (_, diag) = solve_tikhonov(&prob, &opts).unwrap();
        worst_kkt = worst_kkt.max(diag.kkt_residual);
        let grid_min = grid_search(&|x: &[f64]| prob.objective(x), n);
        gap = gap.max(diag.final_objective - grid_min);
    }
    outcome(
        soft_err <= 1e-10 && gap <= 1e-6 && worst_kkt <= 1e-10,
        format!("identity max dev {soft_err:.2e}; objective - grid min <= {gap:.2e}; max KKT {worst_kkt:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::sparse_preset();
    cfg.seed = 7;
    let out = run_rate_experiment(&cfg).unwrap();
    let slope = out.summary.slope.unwrap_or(f64::NAN);
    let secs = start.elapsed().as_secs_f64();
    let grid_ok = out.summary.per_delta.len() == 8 && out.records.len() == 40;
    outcome(
        (0.9..=1.1).contains(&slope) && grid_ok && out.summary.failures == 0 && secs < 120.0,
        format!("slope {slope:.4}, {} cells, {secs:.2} s", out.records.len()),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig::power_decay_preset();
    cfg.seed = 8;
    let out = run_rate_experiment(&cfg).unwrap();
    let slope = out.summary.slope.unwrap_or(f64::NAN);
    let max_ratio = out.summary.max_ratio.unwrap_or(f64::NAN);
    outcome(
        max_ratio <= 10.0 && slope <= 0.95 && out.summary.failures == 0,
        format!("max median-error/phi {max_ratio:.3}, slope {slope:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, (measure, n)) in [(0.5, 3), (0.25, 3), (0.5, 5)].into_iter().enumerate() {
        let rep = nazarov_check(&NazarovConfig::interval(measure, n, 1000, 90 + i as u64)).unwrap();
        ok &= rep.violations == 0 && rep.upper_violations == 0;
        notes.push(format!(
            "|E|={measure} n={n}: {} violations, max ratio {:.2} vs bound {:.0}",
            rep.violations, rep.max_ratio, rep.bound
        ));
    }
    let one = nazarov_check(&NazarovConfig::interval(0.5, 1, 1000, 99)).unwrap();
    let dev = (one.max_ratio - 1.0).abs().max((one.min_ratio - 1.0).abs());
    ok &= dev <= 1e-12;
    notes.push(format!("n=1 max |ratio - 1| {dev:.1e}"));
    outcome(ok, notes.join("; "))
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_l1rates");
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(bin)
            .args(["example", "denoising", "--seed", "42", "--out"])
            .arg(&out)
            .status()
            .expect("binary runs");
        (status.success(), out)
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).ok();
    let mut identical = ok_a && ok_b;
    let files = ["gammas.csv", "phi.csv", "records.csv"];
    for f in files {
        let (x, y) = (read(&a, f), read(&b, f));
        identical &= x.is_some() && x == y;
    }
    outcome(identical, format!("{} compared byte for byte", files.join(", ")))
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let ops = random_operators();
    let criteria: Vec<(&str, Check)> = vec![
        ("analytic gamma match for the l^q embedding", Box::new(criterion_1)),
        (
            "certificate and injectivity constants agree",
            Box::new(|| criterion_2(&ops)),
        ),
        ("gamma_n nondecreasing, diagonal growth", Box::new(|| criterion_3(&ops))),
        ("variational inequality holds", Box::new(criterion_4)),
        ("phi monotone, concave, matches scan", Box::new(criterion_5)),
        ("solver correctness", Box::new(criterion_6)),
        ("sparse rate experiment slope", Box::new(criterion_7)),
        ("power-decay rate experiment", Box::new(criterion_8)),
        ("Nazarov bound checks", Box::new(criterion_9)),
        ("deterministic example output", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "{} criterion {:>2} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splr_core::bases::{gram_matrix, Interval, TensorBasis, UnivariateBasis};
use splr_core::bench::{
    relative_error, repetition_study, sample_rule, validation_seed, BenchmarkFunction, StudySpec,
};
use splr_core::greedy::{
    greedy_fit, select_rank, AlsConfig, AlsRegularization, GreedyConfig, UpdateMode,
};
use splr_core::linalg::DenseMatrix;
use splr_core::solvers::{default_max_steps, empirical_std, lars_lasso_path, loo_select};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// ALS iterated to convergence.
fn converged_als(regularization: AlsRegularization) -> AlsConfig {
    AlsConfig {
        regularization,
        max_sweeps: 50,
        stagnation_tol: 1e-12,
        screen_starts: usize::MAX,
        ..AlsConfig::default()
    }
}

fn checkerboard_basis(p: usize) -> TensorBasis {
    TensorBasis::isotropic(
        UnivariateBasis::piecewise_legendre(p, 6, Interval::unit()).unwrap(),
        2,
    )
    .unwrap()
}

struct CheckerboardRun {
    m_op: usize,
    error: f64,
    term_sparsity: Vec<f64>,
    elapsed: Duration,
}

fn checkerboard_run(
    p: usize,
    seed: u64,
    als: AlsRegularization,
    update: UpdateMode,
) -> CheckerboardRun {
    let f = BenchmarkFunction::Checkerboard;
    let basis = checkerboard_basis(p);
    let pts = f.sample(200, seed).unwrap();
    let z = pts.evaluations().unwrap().to_vec();
    let cfg = GreedyConfig {
        max_rank: 10,
        als: AlsConfig {
            seed,
            ..converged_als(als)
        },
        update,
        cv_folds: 3,
    };
    let start = Instant::now();
    let sel = select_rank(&pts, &z, &basis, &cfg, seed).unwrap();
    let elapsed = start.elapsed();
    let error = relative_error(&sel.model, &f, 1000, validation_seed(seed)).unwrap();
    CheckerboardRun {
        m_op: sel.selected_rank,
        error,
        term_sparsity: (0..sel.model.rank())
            .map(|i| sel.model.term_sparsity(i))
            .collect(),
        elapsed,
    }
}

fn criterion_1() -> Outcome {
    let runs: Vec<CheckerboardRun> = (0..10)
        .map(|s| checkerboard_run(2, s, AlsRegularization::L1Loo, UpdateMode::L1Loo))
        .collect();
    let good = runs
        .iter()
        .filter(|r| r.error <= 1e-8 && r.m_op == 2)
        .count();
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let worst = runs.iter().map(|r| r.error).fold(0.0, f64::max);
    outcome(
        good >= 8 && slowest < Duration::from_secs(60),
        format!("{good}/10 seeds with m_op = 2 and error <= 1e-8 (worst error {worst:.2e}, slowest seed {slowest:.2?})"),
    )
}

fn criteria_2_and_3() -> (Outcome, Outcome) {
    let l1: Vec<CheckerboardRun> = (0..10)
        .map(|s| checkerboard_run(5, s, AlsRegularization::L1Loo, UpdateMode::L1Loo))
        .collect();
    let ols: Vec<CheckerboardRun> = (0..10)
        .map(|s| checkerboard_run(5, s, AlsRegularization::Ols, UpdateMode::Ols))
        .collect();
    let separated = l1
        .iter()
        .zip(&ols)
        .filter(|(a, b)| a.error <= 1e-8 && b.error >= 0.1)
        .count();
    let min_ols = ols.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
    let max_l1 = l1.iter().map(|r| r.error).fold(0.0, f64::max);
    let c2 = outcome(
        separated >= 8,
        format!("{separated}/10 seeds separated (max l1 error {max_l1:.2e}, min OLS error {min_ols:.2e})"),
    );
    let sparse = l1
        .iter()
        .filter(|r| !r.term_sparsity.is_empty() && r.term_sparsity.iter().all(|&s| s <= 0.15))
        .count();
    let c3 = outcome(
        sparse >= 6,
        format!("{sparse}/10 seeds with every retained term at sparsity <= 0.15"),
    );
    (c2, c3)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_system(q: usize, p: usize, rng: &mut ChaCha8Rng) -> (DenseMatrix, Vec<f64>) {
    let data = (0..q * p).map(|_| gaussian(rng)).collect();
    let z = (0..q).map(|_| gaussian(rng)).collect();
    (DenseMatrix::from_row_major(q, p, data).unwrap(), z)
}

/// Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Explicit leave-one-out error of the least-squares fit on `cols`.
fn explicit_loo(phi: &DenseMatrix, z: &[f64], cols: &[usize]) -> f64 {
    let q = z.len();
    let sigma = empirical_std(z);
    let mut total = 0.0;
    for out in 0..q {
        let k = cols.len();
        let pred = if k == 0 {
            0.0
        } else {
            let mut a = vec![vec![0.0; k]; k];
            let mut b = vec![0.0; k];
            for r in (0..q).filter(|&r| r != out) {
                let row = phi.row(r);
                for i in 0..k {
                    b[i] += row[cols[i]] * z[r];
                    for j in 0..k {
                        a[i][j] += row[cols[i]] * row[cols[j]];
                    }
                }
            }
            let v = solve_square(a, b);
            cols.iter().zip(&v).map(|(&j, c)| phi.row(out)[j] * c).sum()
        };
        total += ((z[out] - pred) / sigma).powi(2);
    }
    total / q as f64
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0_f64);
    for _ in 0..50 {
        let p = rng.gen_range(1..=8);
        let (phi, z) = random_system(15, p, &mut rng);
        let mut path = lars_lasso_path(&phi, &z, default_max_steps(15, p)).unwrap();
        loo_select(&mut path, &phi, &z).unwrap();
        for step in &path.steps {
            let Some(fast) = step.loo_error else { continue };
            let explicit = explicit_loo(&phi, &z, &step.active_set);
            let dev = (fast - explicit).abs() / explicit.max(1.0);
            worst = worst.max(dev);
            checked += 1;
            if dev > 1e-10 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0 && checked > 0,
        format!("{checked} path steps checked, {failures} mismatches, worst deviation {worst:.1e}"),
    )
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Cyclic coordinate descent for `‖z − Φv‖² + λ‖v‖₁`.
fn coordinate_descent(phi: &DenseMatrix, z: &[f64], lambda: f64) -> Vec<f64> {
    let p = phi.cols();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| phi.column(j)).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    let mut v = vec![0.0; p];
    let mut r = z.to_vec();
    for _ in 0..200_000 {
        let mut change = 0.0_f64;
        for j in 0..p {
            let rho: f64 = cols[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + sq[j] * v[j];
            let new = soft_threshold(rho, lambda / 2.0) / sq[j];
            let delta = new - v[j];
            if delta != 0.0 {
                for (ri, c) in r.iter_mut().zip(&cols[j]) {
                    *ri -= delta * c;
                }
                v[j] = new;
            }
            change = change.max(delta.abs());
        }
        if change < 1e-15 {
            break;
        }
    }
    v
}

fn orthonormal_columns(raw: &DenseMatrix) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..raw.cols() {
        let mut c = raw.column(j);
        for _ in 0..2 {
            for b in &cols {
                let d: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
                for (ci, bi) in c.iter_mut().zip(b) {
                    *ci -= d * bi;
                }
            }
        }
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(c.iter().map(|x| x / n).collect());
    }
    DenseMatrix::from_columns(raw.rows(), &cols).unwrap()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cd_worst, mut breakpoints) = (0.0_f64, 0);
    for _ in 0..50 {
        let (phi, z) = random_system(30, 8, &mut rng);
        let path = lars_lasso_path(&phi, &z, default_max_steps(30, 8)).unwrap();
        for step in &path.steps {
            let cd = coordinate_descent(&phi, &z, step.lambda);
            let dev = cd
                .iter()
                .zip(step.coefficients.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            cd_worst = cd_worst.max(dev);
            breakpoints += 1;
        }
    }
    let mut st_worst = 0.0_f64;
    for _ in 0..20 {
        let (raw, z) = random_system(30, 8, &mut rng);
        let phi = orthonormal_columns(&raw);
        let corr = phi.tr_mul_vec(&z);
        let path = lars_lasso_path(&phi, &z, 100).unwrap();
        for step in &path.steps {
            for (j, v) in step.coefficients.iter().enumerate() {
                st_worst = st_worst.max((v - soft_threshold(corr[j], step.lambda / 2.0)).abs());
            }
        }
    }
    outcome(
        cd_worst <= 1e-6 && st_worst <= 1e-8,
        format!(
            "{breakpoints} breakpoints, max deviation from coordinate descent {cd_worst:.1e}, \
             from soft thresholding {st_worst:.1e}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let f = BenchmarkFunction::Friedman;
    let seeds: Vec<u64> = (0..11).collect();
    let mean = |p: usize, alpha: u32| {
        let basis =
            TensorBasis::isotropic(UnivariateBasis::legendre(p, Interval::unit()).unwrap(), 5)
                .unwrap();
        let spec = StudySpec {
            function: f.clone(),
            basis,
            sample_size: sample_rule(1.0, 5, 1, p, alpha),
            fit: GreedyConfig {
                max_rank: 1,
                als: converged_als(AlsRegularization::Ols),
                update: UpdateMode::Ols,
                cv_folds: 3,
            },
            select_rank: false,
            validation_size: 1000,
        };
        let s = repetition_study(&spec, &seeds).unwrap();
        (s.mean, s.succeeded)
    };
    let quad: Vec<(f64, usize)> = [2, 4, 6, 8].iter().map(|&p| mean(p, 2)).collect();
    let lin8 = mean(8, 1);
    let all_ran = quad.iter().all(|q| q.1 == 11) && lin8.1 == 11;
    let stable = quad[3].0 <= 2.0 * quad[0].0;
    let degrades = lin8.0 >= 5.0 * quad[3].0;
    let elapsed = start.elapsed();
    outcome(
        all_ran && stable && degrades && elapsed < Duration::from_secs(600),
        format!(
            "quadratic means p=2,4,6,8: {:.3e} {:.3e} {:.3e} {:.3e}; linear p=8: {:.3e} ({:.1}x); {elapsed:.1?}",
            quad[0].0,
            quad[1].0,
            quad[2].0,
            quad[3].0,
            lin8.0,
            lin8.0 / quad[3].0
        ),
    )
}

fn criterion_7() -> Outcome {
    let cases = [
        (
            BenchmarkFunction::Friedman,
            UnivariateBasis::legendre(3, Interval::unit()).unwrap(),
            200,
        ),
        (
            BenchmarkFunction::Checkerboard,
            UnivariateBasis::piecewise_legendre(2, 6, Interval::unit()).unwrap(),
            200,
        ),
        (
            BenchmarkFunction::Rastrigin,
            UnivariateBasis::legendre(6, Interval::symmetric(4.0)).unwrap(),
            300,
        ),
    ];
    let cfg = GreedyConfig {
        max_rank: 6,
        als: AlsConfig {
            regularization: AlsRegularization::Ols,
            ..AlsConfig::default()
        },
        update: UpdateMode::Ols,
        cv_folds: 3,
    };
    let mut violations = 0;
    let mut ranks = 0;
    for seed in 0..20u64 {
        let (f, b, q) = &cases[seed as usize % cases.len()];
        let basis = TensorBasis::isotropic(b.clone(), f.dimension()).unwrap();
        let pts = f.sample(*q, seed).unwrap();
        let z = pts.evaluations().unwrap().to_vec();
        let (_, report) = greedy_fit(
            &pts,
            &z,
            &basis,
            &GreedyConfig {
                als: AlsConfig {
                    seed,
                    ..cfg.als.clone()
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        let r = &report.per_rank_residual_norm;
        ranks += r.len();
        violations += r.windows(2).filter(|w| w[1] > w[0] + 1e-10).count();
    }
    outcome(
        violations == 0,
        format!("20 runs, {ranks} ranks, {violations} increases beyond 1e-10"),
    )
}

fn identity_deviation(g: &DenseMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn criterion_8() -> Outcome {
    let iv = Interval::unit();
    let mut worst = 0.0_f64;
    let mut count = 0;
    for p in 0..=20 {
        worst = worst.max(identity_deviation(&gram_matrix(
            &UnivariateBasis::legendre(p, iv).unwrap(),
            p + 2,
        )));
        count += 1;
    }
    for p in 0..=5 {
        for s in 1..=12 {
            let b = UnivariateBasis::piecewise_legendre(p, s, iv).unwrap();
            worst = worst.max(identity_deviation(&gram_matrix(&b, p + 2)));
            count += 1;
        }
    }
    for p in 0..=4 {
        for l in 0..=3 {
            let b = UnivariateBasis::multiwavelet(p, l, iv).unwrap();
            worst = worst.max(identity_deviation(&gram_matrix(&b, p + 2)));
            count += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{count} bases, max deviation from identity {worst:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let f = BenchmarkFunction::Rastrigin;
    let iv = Interval::symmetric(4.0);
    let wavelets =
        TensorBasis::isotropic(UnivariateBasis::multiwavelet(4, 3, iv).unwrap(), 2).unwrap();
    let poly = TensorBasis::isotropic(UnivariateBasis::legendre(7, iv).unwrap(), 2).unwrap();
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let pts = f.sample(1000, seed).unwrap();
        let z = pts.evaluations().unwrap().to_vec();
        let cfg = GreedyConfig {
            als: AlsConfig {
                seed,
                ..AlsConfig::default()
            },
            ..GreedyConfig::default()
        };
        let err = |basis: &TensorBasis| {
            let sel = select_rank(&pts, &z, basis, &cfg, seed).unwrap();
            relative_error(&sel.model, &f, 1000, validation_seed(seed)).unwrap()
        };
        let ratio = err(&poly) / err(&wavelets);
        if ratio >= 3.0 {
            wins += 1;
        }
        ratios.push(ratio);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        wins >= 8,
        format!("{wins}/10 seeds with P_7 error >= 3x W_4,3 error (smallest ratio {min:.1})"),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
seed = 3
[function]
name = "checkerboard"
[basis]
kind = "piecewise_legendre"
degree = 2
pieces = 6
[samples]
q = 200
"#;
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_splr"))
            .args(["fit", "--config", "run.toml", "--out", out])
            .current_dir(dir.path())
            .env_remove("SPLR_SEED")
            .env_remove("SPLR_OUT")
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    if !(run("a") && run("b")) {
        return outcome(false, "fit did not succeed");
    }
    let same = |name: &str| {
        std::fs::read(dir.path().join("a").join(name)).ok()
            == std::fs::read(dir.path().join("b").join(name)).ok()
    };
    let files = ["report.csv", "model.json", "fitted.csv"];
    let identical = files.iter().filter(|f| same(f)).count();
    outcome(
        identical == files.len(),
        format!("{identical}/{} output files byte-identical", files.len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!(
            "{} criterion {n:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    report(1, "checkerboard exact recovery", criterion_1());
    let (c2, c3) = criteria_2_and_3();
    report(2, "l1 vs OLS separation", c2);
    report(3, "sparsity detection", c3);
    report(4, "leave-one-out identity", criterion_4());
    report(5, "LARS oracle equivalence", criterion_5());
    report(6, "Friedman sample-rule stability", criterion_6());
    report(7, "greedy monotonicity", criterion_7());
    report(8, "basis orthonormality", criterion_8());
    report(9, "Rastrigin basis effect", criterion_9());
    report(10, "determinism", criterion_10());
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        results.len() - failed,
        start.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

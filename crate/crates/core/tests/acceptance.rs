//! Acceptance suite: one pass/fail line per criterion A1–A12.
//!
//! Runs without the libtest harness so that every criterion reports, even
//! when an earlier one fails; the process exits non-zero if any criterion
//! fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use subspace_descent::cli::{self, Fixture, RunConfig};
use subspace_descent::dense::Mat;
use subspace_descent::diagnostics::{
    contraction_estimate, dense_eigensolve, dense_expm, ellipticity_probe, energy_quadraticity, gap_check,
    quadratic_ratio, residual_equivalence,
};
use subspace_descent::manifold::{
    build_xhat_dense, closest_representative, geodesic_step, gram, orthonormalize, project_tangent, stiefel_deviation,
    subspace_distance, BlockVector, OrthoFrame, OrthoMethod,
};
use subspace_descent::operators::{build_diagonal_operator, build_grid, build_schrodinger_1d};
use subspace_descent::problems::Problem;
use subspace_descent::random::{gaussian_vec, rng, trial_rng, SeededRng};
use subspace_descent::solvers::{
    optimal_alpha, solve, solve_monitored, Algorithm, FrameRecorder, NoMonitor, SolveOutcome, SolveStatus, SolverConfig,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Verdict);

fn ensure(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Result<RunConfig, String> {
    cli::parse_config(&configs_dir().join(name)).map_err(|e| e.to_string())
}

struct A1Run {
    fixture: Fixture,
    outcome: SolveOutcome<f64>,
    elapsed: Duration,
}

fn a1_run() -> Result<&'static A1Run, String> {
    static RUN: OnceLock<Result<A1Run, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = load("a1.conf")?;
        let clock = Instant::now();
        let fixture = cli::build_fixture(&cfg).map_err(|e| e.to_string())?;
        let outcome = cli::solve_fixture(&fixture, &cfg.solver).map_err(|e| e.to_string())?;
        Ok(A1Run { fixture, outcome, elapsed: clock.elapsed() })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn final_distance(run: &A1Run) -> Result<f64, String> {
    let reference = run.fixture.reference.as_ref().ok_or("A1 fixture has no oracle")?;
    subspace_distance(reference.frame(), &run.outcome.frame).map(|d| d.aligned).map_err(|e| e.to_string())
}

fn a1() -> Verdict {
    let run = a1_run()?;
    let record = &run.outcome.record;
    let e0 = record.rows[0].err_l2.ok_or("no initial error recorded")?;
    let last = record.last().ok_or("empty record")?;
    let distance = final_distance(run)?;
    let detail = format!(
        "e0={e0:.3} iterations={} res_dual={:.2e} distance={distance:.2e} time={:.2}s",
        record.len() - 1,
        last.res_dual,
        run.elapsed.as_secs_f64()
    );
    ensure(
        e0 <= 0.3
            && run.outcome.status == SolveStatus::Converged
            && last.res_dual <= 1e-10
            && record.len() <= 500
            && distance <= 1e-8
            && run.elapsed <= Duration::from_secs(10),
        detail,
    )
}

fn a2() -> Verdict {
    let run = a1_run()?;
    let (chi, sd) = contraction_estimate(&run.outcome.record, 10).map_err(|e| e.to_string())?;
    ensure(chi < 1.0 && sd < 0.05, format!("chi={chi:.4} stddev={sd:.2e} (trailing 10)"))
}

fn a3() -> Verdict {
    let run = a1_run()?;
    let (c, big_c) = residual_equivalence(&run.outcome.record).map_err(|e| e.to_string())?;
    ensure(c > 0.0 && big_c / c <= 100.0, format!("c={c:.4} C={big_c:.4} C/c={:.3}", big_c / c))
}

fn a4() -> Verdict {
    let run = a1_run()?;
    let reference = run.fixture.reference.as_ref().ok_or("no oracle")?;
    let (lo, hi) =
        energy_quadraticity(&run.outcome.record, reference, &run.fixture.problem).map_err(|e| e.to_string())?;

    let a = build_diagonal_operator(&[1.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    let p = Problem::simplified(a.clone(), 1).map_err(|e| e.to_string())?;
    let r = dense_eigensolve(&a, 1).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for th in [0.3f64, 1e-1, 1e-2, 1e-4, 1e-6] {
        let phi = OrthoFrame::new(BlockVector::from_columns(1.0, &[vec![th.cos(), th.sin(), 0.0]]).unwrap()).unwrap();
        let q = quadratic_ratio(&p, &r, &phi).map_err(|e| e.to_string())?;
        worst = worst.max((q - 1.0).abs());
    }
    ensure(
        lo > 0.0 && hi / lo <= 10.0 && worst <= 1e-10,
        format!("q in [{lo:.4}, {hi:.4}] ratio={:.3}; hand case |q-1|<={worst:.1e}", hi / lo),
    )
}

fn random_block(g: &mut SeededRng, n: usize, cols: usize, h: f64) -> BlockVector<f64> {
    let columns: Vec<Vec<f64>> = (0..cols).map(|_| gaussian_vec(g, n)).collect();
    BlockVector::from_columns(h, &columns).unwrap()
}

fn unit_tangent(phi: &OrthoFrame<f64>, g: &mut SeededRng) -> BlockVector<f64> {
    let k = project_tangent(phi, &random_block(g, phi.n(), phi.cols(), phi.h())).unwrap();
    k.scale(1.0 / k.norm())
}

fn a5() -> Verdict {
    let (n, states, h) = (30, 3, 0.1);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let phi = OrthoFrame::random(n, states, h, seed).map_err(|e| e.to_string())?;
        let mut g = trial_rng(seed, 1);
        let k = unit_tangent(&phi, &mut g).scale(1.5);
        // X = h K Φᵀ has XΦ = K, so X̂ = h (KΦᵀ - ΦKᵀ) generates the geodesic with velocity K.
        let x = Mat::from_fn(n, n, |i, j| h * (0..states).map(|c| k.column(c)[i] * phi.column(c)[j]).sum::<f64>());
        let xhat = build_xhat_dense(&phi, &x).map_err(|e| e.to_string())?;
        for t in [0.1, 1.0] {
            let fast = geodesic_step(&phi, &k.scale(-1.0), t).map_err(|e| e.to_string())?;
            let e = dense_expm(&xhat.scale(-t)).map_err(|e| e.to_string())?;
            let dense = BlockVector::from_fn(n, states, h, |i, c| e.mat_vec(phi.column(c))[i]);
            worst = worst.max(fast.sub(&dense).norm());
        }
    }
    ensure(worst <= 1e-10, format!("max block-norm difference {worst:.2e} over 20 seeds, t in {{0.1, 1}}"))
}

fn a6() -> Verdict {
    let run = a1_run()?;
    let cfg = load("a1.conf")?;
    let mut outcomes = vec![run.outcome.clone()];
    for alg in [Algorithm::TangentGradient, Algorithm::Geodesic] {
        let solver = SolverConfig { algorithm: alg, ..cfg.solver.clone() };
        outcomes.push(cli::solve_fixture(&run.fixture, &solver).map_err(|e| e.to_string())?);
    }
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            worst = worst.max(subspace_distance(&outcomes[i].frame, &outcomes[j].frame).unwrap().aligned);
        }
    }
    let mut rates = Vec::new();
    for o in &outcomes {
        rates.push(contraction_estimate(&o.record, 10).map_err(|e| e.to_string())?.0);
    }
    let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
    let converged = outcomes.iter().all(|o| o.status == SolveStatus::Converged);
    ensure(
        converged && worst <= 1e-7 && spread <= 0.15,
        format!("max pairwise distance {worst:.2e}; chi = {rates:.4?}, spread {spread:.2e}"),
    )
}

fn a7() -> Verdict {
    let direct_cfg = load("toy_lda_direct.conf")?;
    let scf_cfg = load("toy_lda_scf.conf")?;
    let direct_fx = cli::build_fixture(&direct_cfg).map_err(|e| e.to_string())?;
    let scf_fx = cli::build_fixture(&scf_cfg).map_err(|e| e.to_string())?;
    let direct = cli::solve_fixture(&direct_fx, &direct_cfg.solver).map_err(|e| e.to_string())?;
    let scf = cli::solve_fixture(&scf_fx, &scf_cfg.solver).map_err(|e| e.to_string())?;
    let (ed, es) = (direct.record.last().unwrap().energy, scf.record.last().unwrap().energy);
    let distance = subspace_distance(&direct.frame, &scf.frame).unwrap().aligned;

    // Operator refreshed after every single inner step: must retrace projected gradient.
    let (p, b, start) = (&direct_fx.problem, &direct_fx.precond, &direct_fx.start);
    let steps = 20;
    let alg1 = SolverConfig { max_iters: steps, tol: 1e-30, ..SolverConfig::default() };
    let inner = SolverConfig { max_iters: 1, tol: 1e-30, ..SolverConfig::default() };
    let lockstep = SolverConfig {
        algorithm: Algorithm::SelfConsistent,
        max_iters: steps,
        tol: 1e-30,
        scf_inner: Some(Box::new(inner)),
        ..SolverConfig::default()
    };
    let mut rec1 = FrameRecorder::new(NoMonitor);
    let mut rec2 = FrameRecorder::new(NoMonitor);
    let o1 = solve_monitored(p, b, start, &alg1, &mut rec1).map_err(|e| e.to_string())?;
    let o2 = solve_monitored(p, b, start, &lockstep, &mut rec2).map_err(|e| e.to_string())?;
    let mut iterate_gap = subspace_distance(&o1.frame, &o2.frame).unwrap().aligned;
    if rec1.frames.len() != steps || rec2.frames.len() != steps {
        return Err(format!("recorded {} and {} iterates, expected {steps}", rec1.frames.len(), rec2.frames.len()));
    }
    for (x, y) in rec1.frames.iter().zip(&rec2.frames) {
        iterate_gap = iterate_gap.max(subspace_distance(x, y).unwrap().aligned);
    }
    ensure(
        direct.status == SolveStatus::Converged
            && scf.status == SolveStatus::Converged
            && (ed - es).abs() <= 1e-8
            && distance <= 1e-6
            && iterate_gap <= 1e-10,
        format!(
            "|dE|={:.2e} distance={distance:.2e} (direct {} its, scf {} outer); lockstep max distance {iterate_gap:.2e} over {steps} iterates",
            (ed - es).abs(),
            direct.record.len() - 1,
            scf.record.len() - 1
        ),
    )
}

fn a8() -> Verdict {
    let grid = build_grid(400, -10.0, 10.0).map_err(|e| e.to_string())?;
    let a = build_schrodinger_1d(&grid, |x| 0.5 * x * x).map_err(|e| e.to_string())?;
    let problems = [Problem::simplified(a.clone(), 4).unwrap(), Problem::toy_lda(a, 0.5, 4).unwrap()];
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for p in &problems {
        for seed in 0..50u64 {
            let phi = OrthoFrame::random(400, 4, grid.h(), seed).map_err(|e| e.to_string())?;
            let mut g = trial_rng(seed, 2);
            let delta = random_block(&mut g, 400, 4, grid.h());
            let fd = (p.energy(&phi.add_scaled(eps, &delta)).unwrap()
                - p.energy(&phi.add_scaled(-eps, &delta)).unwrap())
                / (2.0 * eps);
            let exact = p.directional_derivative(&phi, &delta).unwrap();
            worst = worst.max((fd - exact).abs() / exact.abs());
        }
    }
    ensure(worst <= 1e-6, format!("max relative error {worst:.2e} over 2 x 50 pairs"))
}

fn a9() -> Verdict {
    let (n, states, h) = (40, 3, 0.05);
    let grid = build_grid(n, -4.0, 4.0).unwrap();
    let op = build_schrodinger_1d(&grid, |x| 0.5 * x * x).unwrap();
    let mut tangency = 0.0f64;
    let mut idempotence = 0.0f64;
    let mut split = 0.0f64;
    let mut invariance = 0.0f64;
    let mut span = 0.0f64;
    let mut stiefel = 0.0f64;
    let mut remainder = 0.0f64;
    let mut remainder_const = 0.0f64;
    let mut second_order = 0.0f64;
    for trial in 0..100u64 {
        let mut g = trial_rng(9, trial);
        let phi = OrthoFrame::random(n, states, h, 1000 + trial).unwrap();
        let w = random_block(&mut g, n, states, h);
        let pw = project_tangent(&phi, &w).unwrap();
        tangency = tangency.max(gram(&phi, &pw).unwrap().max_abs() / w.norm());
        idempotence = idempotence.max(project_tangent(&phi, &pw).unwrap().sub(&pw).norm() / w.norm());

        let s = Mat::from_fn(states, states, |i, j| if i < j { g.random_range(-1.0..1.0) } else { 0.0 });
        let skew = s.sub(&s.transpose());
        let vertical_plus = phi.mul_mat(&skew).add(&pw);
        let rebuilt =
            phi.mul_mat(&gram(&phi, &vertical_plus).unwrap()).add(&project_tangent(&phi, &vertical_plus).unwrap());
        split = split.max(rebuilt.sub(&vertical_plus).norm());

        let u = Mat::from_fn(states, states, |_, _| g.random_range(-1.0..1.0)).polar_factor().unwrap();
        invariance = invariance.max((w.mul_mat(&u).norm() - w.norm()).abs() / w.norm());

        let frames: Vec<OrthoFrame<f64>> = [OrthoMethod::GramSchmidt, OrthoMethod::Cholesky, OrthoMethod::RayleighRitz]
            .into_iter()
            .map(|m| orthonormalize(&w, m, Some(&op)).unwrap())
            .collect();
        for (i, f) in frames.iter().enumerate() {
            stiefel = stiefel.max(stiefel_deviation(f));
            for other in &frames[i + 1..] {
                span = span.max(subspace_distance(f, other).unwrap().aligned);
            }
        }

        let k = unit_tangent(&phi, &mut g);
        let t = g.random_range(-2.0..2.0);
        let step = geodesic_step(&phi, &k.scale(g.random_range(0.0..5.0)), t).unwrap();
        stiefel = stiefel.max(stiefel_deviation(&step));

        let near = orthonormalize(&phi.add_scaled(1e-4, &k), OrthoMethod::GramSchmidt, None).unwrap();
        let bar = closest_representative(&phi, &near).unwrap();
        let off = project_tangent(&phi, &near).unwrap();
        let r = near.sub(&bar).sub(&off).norm();
        remainder = remainder.max(r);
        remainder_const = remainder_const.max(r / off.norm().powi(2));

        let eps = 1e-3;
        let plus = geodesic_step(&phi, &k, eps).unwrap();
        let minus = geodesic_step(&phi, &k, -eps).unwrap();
        let accel = plus.add(&minus).sub(&phi.scale(2.0)).scale(1.0 / (eps * eps));
        second_order = second_order.max(project_tangent(&phi, &accel).unwrap().norm());
    }
    let detail = format!(
        "tangency {tangency:.1e}, idempotence {idempotence:.1e}, split {split:.1e}, invariance {invariance:.1e}, \
         span {span:.1e}, stiefel {stiefel:.1e}, closest remainder {remainder:.1e} (K={remainder_const:.2}), \
         geodesic acceleration {second_order:.1e}"
    );
    ensure(
        tangency <= 1e-12
            && idempotence <= 1e-12
            && split <= 1e-12
            && invariance <= 1e-12
            && span <= 1e-10
            && stiefel <= 1e-10
            && remainder <= 1e-6
            && second_order <= 1e-4,
        detail,
    )
}

fn a10() -> Verdict {
    let mut worst = 0.0f64;
    for (values, states) in
        [(vec![1.0, 2.0, 4.0], 1), (vec![1.0, 1.0, 2.0, 5.0], 3), (vec![0.5, 1.5, 3.0, 7.0, 8.0], 2)]
    {
        let a = build_diagonal_operator(&values).unwrap();
        let p = Problem::simplified(a.clone(), states).unwrap();
        let r = dense_eigensolve(&a, states).map_err(|e| e.to_string())?;
        let min = ellipticity_probe(&p, r.frame(), 50, 0).map_err(|e| e.to_string())?;
        let gap: f64 = r.gap().unwrap();
        worst = worst.max((min - gap).abs() / gap);
    }
    let straddle = dense_eigensolve(&build_diagonal_operator(&[1.0, 2.0, 2.0, 5.0]).unwrap(), 2).unwrap();
    let (straddle_gap, straddle_ok) = gap_check(&straddle).unwrap();

    let cfg = load("multiplicity.conf")?;
    let fixture = cli::build_fixture(&cfg).map_err(|e| e.to_string())?;
    let out =
        solve(&fixture.problem, &fixture.precond, &fixture.start, &cfg.solver, None).map_err(|e| e.to_string())?;
    let reference = fixture.reference.as_ref().unwrap();
    let error = subspace_distance(reference.frame(), &out.frame).unwrap().aligned;
    let last = out.record.last().unwrap();
    ensure(
        worst <= 1e-4
            && !straddle_ok
            && out.status == SolveStatus::Converged
            && last.res_dual <= 1e-10
            && out.record.len() <= 500
            && error <= 1e-8,
        format!(
            "ellipticity vs gap rel. error {worst:.1e}; straddle gap {straddle_gap} flagged={}; multiplicity run {} its, error {error:.1e}",
            !straddle_ok,
            out.record.len() - 1
        ),
    )
}

fn a11() -> Verdict {
    let exact = optimal_alpha(1.0f64, 2.0, 1.0, 2.0).map_err(|e| e.to_string())?;
    let mut g = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let gamma: f64 = g.random_range(1e-3..10.0);
        let big_gamma = gamma * g.random_range(1.0..100.0);
        let theta: f64 = g.random_range(1e-3..10.0);
        let big_theta = theta * g.random_range(1.0..100.0);
        let (alpha, beta) = optimal_alpha(gamma, big_gamma, theta, big_theta).map_err(|e| e.to_string())?;
        if !(alpha > 0.0 && (0.0..1.0).contains(&beta)) {
            return Err(format!("beta={beta} alpha={alpha} for ({gamma}, {big_gamma}, {theta}, {big_theta})"));
        }
        worst = worst.max(beta);
    }
    ensure(exact == (1.25, 0.6), format!("optimal_alpha(1,2,1,2) = {exact:?}; max beta over 1000 tuples {worst:.6}"))
}

fn a12() -> Verdict {
    let mut compared = 0;
    let mut entries: Vec<PathBuf> = fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "conf"))
        .collect();
    entries.sort();
    for path in &entries {
        let cfg = cli::parse_config(path).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let cfg = cfg.clone().with_overrides(None, Some(dir.path().to_path_buf()));
            let summary = if cfg.name == "compare" { cli::run_compare(&cfg) } else { cli::run_solve(&cfg) }
                .map_err(|e| format!("{}: {e}", path.display()))?;
            let bytes: Vec<Vec<u8>> = summary.bundle.convergence.iter().map(|p| fs::read(p).unwrap()).collect();
            outputs.push(bytes);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{} produced different convergence CSVs", path.display()));
        }
        compared += outputs[0].len();
    }
    ensure(compared > 0, format!("{} configs, {compared} convergence CSVs byte-identical across reruns", entries.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("A1", "oracle convergence (projected gradient)", a1),
        ("A2", "linear contraction", a2),
        ("A3", "residual-error equivalence", a3),
        ("A4", "quadratic energy convergence", a4),
        ("A5", "geodesic step vs dense exponential", a5),
        ("A6", "agreement of the three schemes", a6),
        ("A7", "direct minimization vs SCF", a7),
        ("A8", "gradient consistency", a8),
        ("A9", "manifold property suite", a9),
        ("A10", "ellipticity and gap condition", a10),
        ("A11", "contraction constants", a11),
        ("A12", "determinism", a12),
    ];
    let mut failures = 0;
    for (id, title, check) in criteria {
        let clock = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = clock.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("{id:<4} PASS  {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("{id:<4} FAIL  {title}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 12 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

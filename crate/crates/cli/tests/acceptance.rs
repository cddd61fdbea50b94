//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use pmap_core::baselines::{bp_log_partition, trbp_log_partition, uniform_spanning_edge_probs, BpConfig};
use pmap_core::bounds::{lower_bound_logz, upper_bound_logz, LowerBoundConfig, PerturbationScheme};
use pmap_core::crf::{
    exact_crf_gradient, surrogate_gradient, surrogate_loss, CrfParams, DenoiseFeatures, Example,
};
use pmap_core::harness::{
    run_estimation_sweep, run_learning_experiment, EstimatorSpec, ExperimentSpec, LearnConfig,
    SolverChoice, SweepOptions,
};
use pmap_core::mapsolve::{mplp_map_traced, solve_map, MapMethod, MplpConfig};
use pmap_core::model::{gen_spin_glass, CouplingMode, GridShape, IsingParams, SpinGlassConfig};
use pmap_core::oracle::{exact_log_partition, exact_map};
use pmap_core::perturb::estimate_logz_full;
use pmap_core::rng::{derive_seed, rng_from_seed};
use pmap_core::PairwiseModel;

const MASTER_SEED: u64 = 20_240_101;

const SE_MULTIPLIER: f64 = 3.0;
const SOLVER_TOL: f64 = 1e-6;
const DUAL_SLACK: f64 = 1e-12;
const GRAPHCUT_TOL: f64 = 1e-9;
const BP_TREE_TOL: f64 = 1e-8;
const TRBP_SLACK: f64 = 1e-6;
const RHO_TRIANGLE_TOL: f64 = 1e-9;
const RHO_SUM_TOL: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const CONVEXITY_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn spin_glass(rows: usize, cols: usize, f: f64, c: f64, mode: CouplingMode, seed: u64) -> PairwiseModel {
    gen_spin_glass(&SpinGlassConfig {
        rows,
        cols,
        field_strength: f,
        coupling_strength: c,
        mode,
        seed,
    })
    .unwrap()
}

/// Random tree over `n` nodes with 2 or 3 labels per node and uniform tables.
fn random_tree(n: usize, seed: u64) -> PairwiseModel {
    let mut rng = rng_from_seed(seed);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
    let unary = cards
        .iter()
        .map(|&c| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let edges = (1..n)
        .map(|j| {
            let i = rng.gen_range(0..j);
            let t = (0..cards[i] * cards[j]).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (i, j, t)
        })
        .collect();
    PairwiseModel::new(cards, unary, edges).unwrap()
}

fn combo_solver(mode: CouplingMode) -> MapMethod {
    SolverChoice::Auto.resolve(mode)
}

// 1 -----------------------------------------------------------------------

fn gumbel_identity() -> Outcome {
    let start = Instant::now();
    let mut within = 0;
    for k in 0..10 {
        let model = spin_glass(2, 2, 1.0, 1.0, CouplingMode::Mixed, derive_seed(MASTER_SEED, &[1, k]));
        let lz = exact_log_partition(&model).unwrap();
        let r = estimate_logz_full(&model, 10_000, derive_seed(MASTER_SEED, &[1, k, 1])).unwrap();
        if (r.mean - lz).abs() <= SE_MULTIPLIER * r.std_error {
            within += 1;
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: within >= 9 && t < Duration::from_secs(10),
        detail: format!("full-joint estimate within 3 SE on {within}/10 2x2 mixed grids ({})", secs(t)),
    }
}

// 2, 3, 4 -------------------------------------------------------------------

struct Instance {
    model: PairwiseModel,
    mode: CouplingMode,
    log_z: f64,
    seed: u64,
}

fn bound_instances() -> Vec<Instance> {
    let mut combos = Vec::new();
    for mode in [CouplingMode::Attractive, CouplingMode::Mixed] {
        for f in [0.1, 1.0] {
            for c in [0.1, 1.0, 3.0] {
                combos.push((mode, f, c));
            }
        }
    }
    (0..50u64)
        .map(|k| {
            let (mode, f, c) = combos[k as usize % combos.len()];
            let model = spin_glass(3, 3, f, c, mode, derive_seed(MASTER_SEED, &[2, k]));
            Instance {
                log_z: exact_log_partition(&model).unwrap(),
                model,
                mode,
                seed: derive_seed(MASTER_SEED, &[2, k, 1]),
            }
        })
        .collect()
}

fn upper_bounds(instances: &[Instance]) -> (Outcome, Vec<(f64, f64)>) {
    let start = Instant::now();
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    let mut bounds = Vec::new();
    for inst in instances {
        let r = upper_bound_logz(&inst.model, &PerturbationScheme::Unary, &combo_solver(inst.mode), 100, inst.seed)
            .unwrap();
        let z = (r.mean - inst.log_z) / r.std_error.max(f64::MIN_POSITIVE);
        worst = worst.min(z);
        if r.mean - inst.log_z >= -SE_MULTIPLIER * r.std_error {
            ok += 1;
        }
        bounds.push((r.mean, r.std_error));
    }
    let t = start.elapsed();
    let outcome = Outcome {
        pass: ok == instances.len() && t < Duration::from_secs(30),
        detail: format!(
            "unary upper bound >= log Z - 3 SE on {ok}/{} 3x3 grids, worst {worst:.2} SE ({})",
            instances.len(),
            secs(t)
        ),
    };
    (outcome, bounds)
}

fn lower_bounds(instances: &[Instance]) -> (Outcome, Vec<(f64, f64)>) {
    let start = Instant::now();
    let cfg = LowerBoundConfig {
        m: 200,
        ..LowerBoundConfig::default()
    };
    let mut ok = 0;
    let mut exact_zero = 0;
    let mut bounds = Vec::new();
    for inst in instances {
        let solver = combo_solver(inst.mode);
        let r = lower_bound_logz(&inst.model, &PerturbationScheme::Unary, &solver, &cfg, inst.seed).unwrap();
        if r.value <= inst.log_z + SE_MULTIPLIER * r.std_error {
            ok += 1;
        }
        let map = solve_map(&inst.model, &solver).unwrap();
        let at_zero = r.points.iter().find(|p| p.lambda == 0.0).unwrap();
        if at_zero.value.to_bits() == inst.model.score_raw(&map.assignment.0).to_bits() {
            exact_zero += 1;
        }
        bounds.push((r.value, r.std_error));
    }
    let n = instances.len();
    let outcome = Outcome {
        pass: ok == n && exact_zero == n,
        detail: format!(
            "lower bound <= log Z + 3 jackknife SE on {ok}/{n}; lambda=0 equals recomputed MAP score bitwise on {exact_zero}/{n} ({})",
            secs(start.elapsed())
        ),
    };
    (outcome, bounds)
}

fn sandwich(instances: &[Instance], upper: &[(f64, f64)], lower: &[(f64, f64)]) -> Outcome {
    let ok = instances
        .iter()
        .zip(upper)
        .zip(lower)
        .filter(|((inst, &(u, u_se)), &(l, l_se))| {
            l - SE_MULTIPLIER * l_se <= inst.log_z && inst.log_z <= u + SE_MULTIPLIER * u_se
        })
        .count();
    Outcome {
        pass: ok == instances.len(),
        detail: format!("lower <= log Z <= upper (3 SE slack each side) on {ok}/{}", instances.len()),
    }
}

// 5 -----------------------------------------------------------------------

fn solver_exactness() -> Outcome {
    let start = Instant::now();
    let mut gc_ok = 0;
    for k in 0..100 {
        let model = spin_glass(4, 4, 1.0, 2.0, CouplingMode::Attractive, derive_seed(MASTER_SEED, &[5, 0, k]));
        let gc = solve_map(&model, &MapMethod::GraphCut).unwrap();
        let (_, best) = exact_map(&model).unwrap();
        if (gc.value - best).abs() <= GRAPHCUT_TOL {
            gc_ok += 1;
        }
    }
    let mut tree_ok = 0;
    for k in 0..100 {
        let model = random_tree(5, derive_seed(MASTER_SEED, &[5, 1, k]));
        let r = solve_map(&model, &MapMethod::mplp()).unwrap();
        let (_, best) = exact_map(&model).unwrap();
        let dual = r.dual_bound.unwrap();
        if (r.value - best).abs() <= SOLVER_TOL && (dual - best).abs() <= SOLVER_TOL {
            tree_ok += 1;
        }
    }
    let mut mono_ok = 0;
    for k in 0..20 {
        let model = spin_glass(4, 4, 1.0, 2.0, CouplingMode::Mixed, derive_seed(MASTER_SEED, &[5, 2, k]));
        let (_, trace) = mplp_map_traced(&model, &MplpConfig::default()).unwrap();
        if trace.windows(2).all(|w| w[1] <= w[0] + DUAL_SLACK) {
            mono_ok += 1;
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: gc_ok == 100 && tree_ok == 100 && mono_ok == 20 && t < Duration::from_secs(30),
        detail: format!(
            "graphcut exact {gc_ok}/100 4x4; MPLP value=dual=MAP {tree_ok}/100 trees; dual monotone {mono_ok}/20 ({})",
            secs(t)
        ),
    }
}

// 6 -----------------------------------------------------------------------

fn baselines() -> Outcome {
    let cfg = BpConfig::default();
    let mut bp_ok = 0;
    for k in 0..20 {
        let model = random_tree(6, derive_seed(MASTER_SEED, &[6, 0, k]));
        let r = bp_log_partition(&model, &cfg);
        if (r.log_z - exact_log_partition(&model).unwrap()).abs() <= BP_TREE_TOL {
            bp_ok += 1;
        }
    }
    let mut trbp_ok = 0;
    let mut trbp_conv = 0;
    for k in 0..20 {
        let mode = if k % 2 == 0 { CouplingMode::Attractive } else { CouplingMode::Mixed };
        let model = spin_glass(3, 3, 1.0, 1.0 + (k % 3) as f64, mode, derive_seed(MASTER_SEED, &[6, 1, k]));
        let rho = uniform_spanning_edge_probs(&model).unwrap();
        let r = trbp_log_partition(&model, &rho, &cfg).unwrap();
        if r.converged {
            trbp_conv += 1;
            if r.log_z >= exact_log_partition(&model).unwrap() - TRBP_SLACK {
                trbp_ok += 1;
            }
        }
    }
    let triangle = IsingParams {
        fields: vec![0.0; 3],
        couplings: vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
    }
    .to_model()
    .unwrap();
    let tri = uniform_spanning_edge_probs(&triangle).unwrap();
    let tri_ok = tri.rho.iter().all(|r| (r - 2.0 / 3.0).abs() <= RHO_TRIANGLE_TOL);
    let big = spin_glass(10, 10, 1.0, 1.0, CouplingMode::Mixed, MASTER_SEED);
    let sum: f64 = uniform_spanning_edge_probs(&big).unwrap().rho.iter().sum();
    let sum_ok = (sum - 99.0).abs() <= RHO_SUM_TOL;
    Outcome {
        pass: bp_ok == 20 && trbp_ok == trbp_conv && trbp_conv > 0 && tri_ok && sum_ok,
        detail: format!(
            "BP exact {bp_ok}/20 trees; TRBP upper {trbp_ok}/{trbp_conv} converged; triangle rho {}; 10x10 sum rho {sum:.9}",
            if tri_ok { "2/3" } else { "off" }
        ),
    }
}

// 7 -----------------------------------------------------------------------

fn upper_vs_trbp() -> Outcome {
    let start = Instant::now();
    let spec = ExperimentSpec {
        grid: GridShape::new(3, 3),
        field_strength: 1.0,
        couplings: vec![3.0],
        mode: CouplingMode::Attractive,
        trials: 20,
        estimators: vec![
            EstimatorSpec::UpperBound {
                m: 100,
                scheme: PerturbationScheme::Unary,
                solver: SolverChoice::Auto,
            },
            EstimatorSpec::Trbp(BpConfig::default()),
        ],
        seed: derive_seed(MASTER_SEED, &[7, 0]),
        out: None,
    };
    let r = run_estimation_sweep(&spec, SweepOptions::default()).unwrap();
    let ub = r.aggregate("upper_bound", 3.0).and_then(|a| a.mean_abs_error).unwrap();
    let tr = r.aggregate("trbp", 3.0).and_then(|a| a.mean_abs_error).unwrap();
    let t = start.elapsed();
    Outcome {
        pass: ub < tr && t < Duration::from_secs(120),
        detail: format!("c=3 mean |error|: unary upper bound {ub:.3} vs TRBP {tr:.3} ({})", secs(t)),
    }
}

fn inflation_trend() -> Outcome {
    let start = Instant::now();
    let spec = ExperimentSpec {
        grid: GridShape::new(2, 3),
        field_strength: 1.0,
        couplings: vec![0.1, 3.0],
        mode: CouplingMode::Attractive,
        trials: 50,
        estimators: vec![EstimatorSpec::Inflation {
            m: 16,
            solver: SolverChoice::Auto,
        }],
        seed: derive_seed(MASTER_SEED, &[7, 1]),
        out: None,
    };
    let r = run_estimation_sweep(&spec, SweepOptions::default()).unwrap();
    let weak = r.aggregate("inflation", 0.1).and_then(|a| a.mean_abs_error).unwrap();
    let strong = r.aggregate("inflation", 3.0).and_then(|a| a.mean_abs_error).unwrap();
    let t = start.elapsed();
    Outcome {
        pass: strong < weak && t < Duration::from_secs(120),
        detail: format!("inflation m=16 mean |error|: c=3 {strong:.3} vs c=0.1 {weak:.3} ({})", secs(t)),
    }
}

// 8 -----------------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let mut rng = rng_from_seed(derive_seed(MASTER_SEED, &[8]));

    // Full-joint gradient against moment matching on two variables.
    let pair = DenoiseFeatures::new(1, 2);
    let data = vec![Example {
        observed: vec![1, 0],
        label: vec![1, 1],
    }];
    let params = CrfParams::new(vec![0.7, -0.4, 0.9]).unwrap();
    let est = surrogate_gradient(
        &pair,
        &params,
        &data,
        &PerturbationScheme::FullJoint,
        50_000,
        rng.gen(),
        &MapMethod::Brute,
    )
    .unwrap();
    let exact = exact_crf_gradient(&pair, &params, &data).unwrap();
    let moment_ok = est
        .gradient
        .iter()
        .zip(&exact)
        .zip(&est.std_error)
        .all(|((g, e), se)| (g - e).abs() <= SE_MULTIPLIER * se);

    // Finite differences at fixed noise.
    let grid = DenoiseFeatures::new(2, 2);
    let examples = vec![
        Example {
            observed: vec![0, 1, 1, 0],
            label: vec![0, 1, 1, 1],
        },
        Example {
            observed: vec![1, 1, 0, 0],
            label: vec![1, 1, 0, 0],
        },
    ];
    let scheme = PerturbationScheme::Unary;
    let loss = |theta: &[f64], seed: u64| {
        surrogate_loss(&grid, &CrfParams::new(theta.to_vec()).unwrap(), &examples, &scheme, 10, seed, &MapMethod::Brute)
            .unwrap()
            .value
    };
    let counts = |theta: &[f64], seed: u64| {
        surrogate_gradient(&grid, &CrfParams::new(theta.to_vec()).unwrap(), &examples, &scheme, 10, seed, &MapMethod::Brute)
            .unwrap()
    };
    let mut fd_points = 0;
    let mut fd_ok = 0;
    let mut attempts = 0;
    while fd_points < 10 && attempts < 1000 {
        attempts += 1;
        let theta: Vec<f64> = (0..grid_dim(&grid)).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let seed: u64 = rng.gen();
        let g = counts(&theta, seed);
        // A point is a tie point if any coordinate nudge changes an argmax.
        let stable = (0..theta.len()).all(|i| {
            [-FD_STEP, FD_STEP].iter().all(|&h| {
                let mut t = theta.clone();
                t[i] += h;
                counts(&t, seed).argmax_counts == g.argmax_counts
            })
        });
        if !stable {
            continue;
        }
        fd_points += 1;
        let matches = (0..theta.len()).all(|i| {
            let (mut hi, mut lo) = (theta.clone(), theta.clone());
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            let fd = (loss(&hi, seed) - loss(&lo, seed)) / (2.0 * FD_STEP);
            (fd - g.gradient[i]).abs() <= FD_TOL
        });
        if matches {
            fd_ok += 1;
        }
    }

    // Midpoint convexity at fixed noise.
    let mut convex_ok = 0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..grid_dim(&grid)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..grid_dim(&grid)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let seed: u64 = rng.gen();
        if loss(&mid, seed) <= 0.5 * (loss(&a, seed) + loss(&b, seed)) + CONVEXITY_TOL {
            convex_ok += 1;
        }
    }
    Outcome {
        pass: moment_ok && fd_points == 10 && fd_ok == 10 && convex_ok == 100,
        detail: format!(
            "full-joint gradient within 3 SE: {moment_ok}; finite differences {fd_ok}/{fd_points}; midpoint convexity {convex_ok}/100"
        ),
    }
}

fn grid_dim(f: &DenoiseFeatures) -> usize {
    use pmap_core::crf::FeatureMap;
    f.dim()
}

// 9 -----------------------------------------------------------------------

fn learning() -> Outcome {
    let start = Instant::now();
    let r = run_learning_experiment(&LearnConfig {
        seed: derive_seed(MASTER_SEED, &[9]),
        ..LearnConfig::default()
    })
    .unwrap();
    let perturbed = r.summary("perturbed").unwrap().test_error;
    let ablation = r.summary("none").unwrap().test_error;
    let flip = r.config.flip_prob;
    let t = start.elapsed();
    Outcome {
        pass: perturbed < ablation && perturbed < flip && t < Duration::from_secs(300),
        detail: format!(
            "16x16 test pixel error: perturbed {:.2}% vs unperturbed {:.2}% (flip {:.0}%) ({})",
            100.0 * perturbed,
            100.0 * ablation,
            100.0 * flip,
            secs(t)
        ),
    }
}

// 10 ----------------------------------------------------------------------

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pmap"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let spec = p("s.sweep");
    std::fs::write(
        &spec,
        "sweep v1\ngrid 2 3\ncouplings 0.5 2\ntrials 4\nestimator full m=50\nestimator upper_bound m=20\n\
         estimator lower_bound m=20\nestimator inflation m=4\nestimator bp\nestimator trbp\n",
    )
    .unwrap();
    let model = p("model.pmodel");
    let mut cases: Vec<(String, Vec<String>)> = Vec::new();
    let mut add = |name: &str, args: &[&str]| {
        cases.push((name.to_string(), args.iter().map(|s| s.to_string()).collect()));
    };
    add("gen-spin-glass", &["gen", "spin-glass", "--rows", "2", "--cols", "3", "--seed", "5"]);
    add("gen-denoise", &["gen", "denoise", "--rows", "8", "--cols", "8", "--seed", "5"]);
    add("exact", &["exact", &model]);
    for solver in ["brute", "graphcut", "mplp"] {
        add(&format!("map-{solver}"), &["map", &model, "--solver", solver]);
    }
    for est in ["full", "sequential", "upper-bound", "lower-bound", "inflation", "bp", "trbp"] {
        let m = if est == "sequential" { "4" } else { "30" };
        add(&format!("estimate-{est}"), &["estimate", &model, "--estimator", est, "--m", m, "--solver", "graphcut", "--seed", "11"]);
    }
    add("sweep", &["sweep", &spec, "--seed", "3"]);
    add(
        "learn",
        &["learn", "--rows", "8", "--cols", "8", "--train", "3", "--test", "3", "--epochs", "5", "--seed", "2"],
    );

    if !run_cli(&["gen", "spin-glass", "--rows", "2", "--cols", "3", "--mode", "attractive", "--seed", "1", "--out", &model]) {
        return Outcome {
            pass: false,
            detail: "could not generate model".into(),
        };
    }
    let mut mismatched = Vec::new();
    let mut sweep_csv = None;
    for (name, args) in &cases {
        let mut outs = Vec::new();
        for run in 0..2 {
            let out = p(&format!("{name}.{run}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out", &out]);
            if !run_cli(&full) {
                mismatched.push(format!("{name} (failed)"));
                break;
            }
            outs.push(std::fs::read(&out).unwrap());
        }
        if outs.len() == 2 && outs[0] != outs[1] {
            mismatched.push(name.clone());
        }
        if name == "sweep" {
            sweep_csv = Some(p("sweep.0"));
        }
    }
    let csv = sweep_csv.unwrap();
    let charts: Vec<Option<Vec<u8>>> = (0..2)
        .map(|run| {
            let out = p(&format!("chart.{run}.svg"));
            run_cli(&["chart", &csv, "--out", &out]).then(|| std::fs::read(Path::new(&out)).unwrap())
        })
        .collect();
    if charts[0].is_none() || charts[0] != charts[1] {
        mismatched.push("chart".into());
    }
    let total = cases.len() + 1;
    Outcome {
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{total}/{total} CLI invocations byte-identical on rerun")
        } else {
            format!("differing output: {}", mismatched.join(", "))
        },
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, o: Outcome| {
        println!("[{}] {id}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, o));
    };
    report("1 gumbel identity", gumbel_identity());
    let instances = bound_instances();
    let (o2, upper) = upper_bounds(&instances);
    report("2 upper bound", o2);
    let (o3, lower) = lower_bounds(&instances);
    report("3 lower bound", o3);
    report("4 sandwich", sandwich(&instances, &upper, &lower));
    report("5 solver exactness", solver_exactness());
    report("6 baselines", baselines());
    report("7a upper bound vs TRBP at strong coupling", upper_vs_trbp());
    report("7b inflation improves with coupling", inflation_trend());
    report("8 gradient fidelity", gradient_fidelity());
    report("9 denoising", learning());
    report("10 determinism", determinism());
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance checks. Each criterion prints exactly one `PASS` or `FAIL`
//! line; the process exits non-zero if any criterion fails.
//!
//! The headline-scale ordering takes about 45 minutes on one core. It runs
//! only when `ADFL_HEADLINE=1`; setting `ADFL_HEADLINE_OUT=<dir>` evaluates
//! the outputs of an earlier `adfl run --config configs/headline.toml`
//! instead of running it again.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use adfl::algorithms::{
    adaptive_weights, clipped_gossip_step, dfl_step, renormalize_weights, run_algorithm,
    run_multistage_adfl, weighted_dfl_step, AlgoConfig, Algorithm, FleetState, LambdaChoice,
    LambdaRule, Tau, TraceRecorder, TrustWeights,
};
use adfl::data::{ClientDataset, Corruption, CorruptionSpec, CovariateSpec, Fleet, OodResponse, TrueModel};
use adfl::harness::{run_experiment, worker_threads, ExperimentConfig};
use adfl::loss::{local_gradient, local_loss, objectives, solve_reference, LossKind, Objective};
use adfl::metrics::{mse_normal, stacked_distance};
use adfl::seed::{derive_seed, rng, stream_seed};
use adfl::topology::{
    build_directed_circle, network_balance, row_normalize, spectral_condition, Adjacency, WeightMatrix,
};

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Setup {
    fleet: Fleet,
    objs: Vec<Objective>,
    adjacency: Adjacency,
    w: WeightMatrix,
    theta0: DVector<f64>,
}

fn setup(p: usize, m: usize, n: usize, d: usize, kind: Corruption, rho: f64, seed: u64) -> Setup {
    let model = TrueModel::new(p, 1.0, LossKind::SquaredError).unwrap();
    let spec = CorruptionSpec {
        kind,
        rho,
        ood_response: OodResponse::Keep,
    };
    let fleet = Fleet::generate(&model, &CovariateSpec::Homogeneous, &spec, m, n, seed).unwrap();
    let objs = objectives(LossKind::SquaredError, &fleet.datasets);
    let adjacency = build_directed_circle(m, d).unwrap();
    let w = row_normalize(&adjacency);
    Setup {
        fleet,
        objs,
        adjacency,
        w,
        theta0: model.theta0,
    }
}

/// Iterate `round` from zero until no client moves more than `tol` or
/// `cap` rounds have passed.
fn converge<F>(m: usize, p: usize, cap: usize, tol: f64, mut round: F) -> FleetState
where
    F: FnMut(&FleetState) -> FleetState,
{
    let mut state = FleetState::zeros(m, p);
    for _ in 0..cap {
        let next = round(&state);
        let moved = next.max_movement(&state);
        state = next;
        if moved < tol {
            break;
        }
    }
    state
}

fn criterion_1() -> Outcome {
    let s = setup(10, 20, 100, 5, Corruption::Bf, 0.2, 11);
    let mut base = AlgoConfig::new(Algorithm::Dfl, 0.05, 150);
    base.init_iters = 50;
    base.stages = 2;
    let mut dfl_trace = TraceRecorder::new(1);
    run_algorithm(&s.objs, &s.adjacency, &s.w, &base, 0.0, &mut dfl_trace).map_err(|e| e.to_string())?;

    let mut adfl_cfg = base.clone();
    adfl_cfg.algorithm = Algorithm::Adfl;
    adfl_cfg.lambda = LambdaChoice::Fixed(0.0);
    let mut adfl_trace = TraceRecorder::new(1);
    run_algorithm(&s.objs, &s.adjacency, &s.w, &adfl_cfg, 0.0, &mut adfl_trace).map_err(|e| e.to_string())?;

    let mut clip_cfg = base.clone();
    clip_cfg.algorithm = Algorithm::ClippedGossip {
        tau: Tau::Fixed(f64::INFINITY),
    };
    let mut clip_trace = TraceRecorder::new(1);
    run_algorithm(&s.objs, &s.adjacency, &s.w, &clip_cfg, 0.0, &mut clip_trace).map_err(|e| e.to_string())?;

    let same = |a: &TraceRecorder, b: &TraceRecorder| {
        a.states.len() == b.states.len()
            && a.states.iter().zip(&b.states).all(|(x, y)| {
                x.t == y.t
                    && x.thetas.iter().zip(&y.thetas).all(|(u, v)| {
                        u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
                    })
            })
    };
    // The single-step functions must agree too, not just the drivers.
    let probe = FleetState::from_thetas(dfl_trace.states[37].thetas.clone());
    let one = dfl_step(&probe, &s.w, &s.objs, 0.05).map_err(|e| e.to_string())?;
    let two = weighted_dfl_step(&probe, &s.w, &s.objs, 0.05, &TrustWeights::ones(20)).map_err(|e| e.to_string())?;
    let three = clipped_gossip_step(&probe, &s.w, &s.objs, 0.05, Tau::Fixed(f64::INFINITY)).map_err(|e| e.to_string())?;
    let steps_equal = one == two && one == three;

    let a = same(&dfl_trace, &adfl_trace);
    let c = same(&dfl_trace, &clip_trace);
    let detail = format!(
        "{} states; aDFL(lambda=0) identical = {a}, clipped(tau=inf) identical = {c}, single steps identical = {steps_equal}",
        dfl_trace.states.len()
    );
    if a && c && steps_equal {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let mut r = rng(derive_seed(2, &[b"finite-difference"]));
    let mut worst: f64 = 0.0;
    for kind in [LossKind::SquaredError, LossKind::Logistic] {
        for _ in 0..100 {
            let p = r.random_range(1..=8);
            let n = r.random_range(5..=30);
            let x = nalgebra::DMatrix::from_fn(n, p, |_, _| r.random_range(-2.0..2.0));
            let y = match kind {
                LossKind::SquaredError => DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0)),
                LossKind::Logistic => DVector::from_fn(n, |_, _| if r.random_bool(0.5) { 1.0 } else { 0.0 }),
            };
            let ds = ClientDataset {
                client_id: 0,
                x,
                y,
                abnormal: false,
                corruption: Corruption::None,
            };
            let theta = DVector::from_fn(p, |_, _| r.random_range(-1.5..1.5));
            let g = local_gradient(kind, &ds, &theta).map_err(|e| e.to_string())?;
            let h = 1e-5;
            let fd = DVector::from_fn(p, |j, _| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[j] += h;
                down[j] -= h;
                (local_loss(kind, &ds, &up).unwrap() - local_loss(kind, &ds, &down).unwrap()) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    let detail = format!("200 probes over both losses, worst relative error {worst:.2e} (bound 1e-5)");
    if worst <= 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Stacked distance of converged DFL to the whole-sample estimator at the
/// no-corruption reference scale.
fn no_corruption_floor() -> Result<f64, String> {
    let s = setup(10, 20, 200, 5, Corruption::None, 0.0, 3);
    let reference = solve_reference(LossKind::SquaredError, &s.fleet.datasets, &s.fleet.abnormal)
        .map_err(|e| e.to_string())?;
    let state = converge(20, 10, 50_000, 1e-13, |st| dfl_step(st, &s.w, &s.objs, 0.02).unwrap());
    stacked_distance(&state, &reference.whole_sample).map_err(|e| e.to_string())
}

fn criterion_3() -> Outcome {
    let d = no_corruption_floor()?;
    let detail = format!("p=10 M=20 n=200 D=5 alpha=0.02: M^-1/2 ||theta - 1 x theta_hat|| = {d:.3e} (bound 1e-2)");
    if d <= 1e-2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let floor = no_corruption_floor()?;
    let s = setup(10, 20, 200, 5, Corruption::Bf, 0.2, 4);
    let reference = solve_reference(LossKind::SquaredError, &s.fleet.datasets, &s.fleet.abnormal)
        .map_err(|e| e.to_string())?;
    let oracle_weights = TrustWeights {
        omega: (0..20).map(|m| if s.fleet.is_abnormal(m) { 0.0 } else { 1.0 }).collect(),
        lambda_n: 0.0,
        normalized: true,
    };
    let state = converge(20, 10, 50_000, 1e-13, |st| {
        weighted_dfl_step(st, &s.w, &s.objs, 0.02, &oracle_weights).unwrap()
    });
    let d = stacked_distance(&state, &reference.oracle).map_err(|e| e.to_string())?;
    let detail = format!(
        "BF rho=0.2, weights 1 - a_m: distance to oracle {d:.3e}, no-corruption floor {floor:.3e}, ratio {:.2} (bound 2)",
        d / floor
    );
    if d <= 2.0 * floor {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Outcome {
    let (p, m, n) = (50, 100, 100);
    let big_n = (m * n) as f64;
    let lambda = big_n.ln();
    let mut separated = 0;
    let mut bar2 = Vec::new();
    for rep in 0..20u64 {
        let s = setup(p, m, n, 5, Corruption::Bf, 0.2, derive_seed(5, &[b"separation", &rep.to_le_bytes()]));
        let mut state = FleetState::zeros(m, p);
        for _ in 0..200 {
            state = dfl_step(&state, &s.w, &s.objs, 0.1).map_err(|e| e.to_string())?;
        }
        let raw = adaptive_weights(&s.objs, &state.thetas, lambda).map_err(|e| e.to_string())?;
        let (tw, _) = renormalize_weights(&raw, &s.w).map_err(|e| e.to_string())?;
        let min_normal = (0..m)
            .filter(|i| !s.fleet.is_abnormal(*i))
            .map(|i| tw.omega[i])
            .fold(f64::INFINITY, f64::min);
        let max_abnormal = s.fleet.abnormal.iter().map(|&i| tw.omega[i]).fold(0.0, f64::max);
        if min_normal > max_abnormal {
            separated += 1;
        }
        let a = s.fleet.abnormal.len() as f64;
        bar2.push((s.fleet.abnormal.iter().map(|&i| tw.omega[i].powi(2)).sum::<f64>() / a).sqrt());
    }
    let mean_bar2 = bar2.iter().sum::<f64>() / bar2.len() as f64;
    let bound = 5.0 / big_n.sqrt();
    let detail = format!(
        "p=50 M=100 n=100 BF rho=0.2 lambda=log N: separated in {separated}/20 replicates (need 19), mean abnormal RMS weight {mean_bar2:.3e} (bound {bound:.3e})"
    );
    if separated >= 19 && mean_bar2 <= bound {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Mean final MSE per (corruption, rho, topology parameter, algorithm).
type Summary = BTreeMap<(String, String, String, String), f64>;

fn read_summary(dir: &Path) -> Result<Summary, String> {
    let mut rdr = csv::Reader::from_path(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let mut out = Summary::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let mean: f64 = rec[5].parse().map_err(|e| format!("{e}"))?;
        out.insert((rec[0].into(), rec[1].into(), rec[3].into(), rec[4].into()), mean);
    }
    Ok(out)
}

/// Mean oracle-estimator MSE per (corruption, rho, topology parameter).
fn read_oracle(dir: &Path) -> Result<BTreeMap<(String, String, String), f64>, String> {
    let text = std::fs::read_to_string(dir.join("meta.json")).map_err(|e| e.to_string())?;
    let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut acc: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for cell in meta["cells"].as_array().ok_or("meta.json has no cells")? {
        let topo = &cell["topology"];
        let param = topo.get("d").or_else(|| topo.get("q")).map(|v| v.to_string()).unwrap_or_default();
        let key = (
            cell["corruption"].as_str().unwrap_or_default().to_string(),
            format!("{:?}", cell["rho"].as_f64().unwrap_or(f64::NAN)),
            param,
        );
        acc.entry(key).or_default().push(cell["oracle_mse"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(acc
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}

const BASELINES: [&str; 3] = ["bridge_m", "bridge_t", "clipped_gossip"];

fn ordering(dir: &Path, label: &str) -> Outcome {
    let summary = read_summary(dir)?;
    let oracle = read_oracle(dir)?;
    let mut failures = Vec::new();
    let mut checked = 0;
    let cells: BTreeSet<(String, String, String)> = summary
        .keys()
        .map(|(c, r, d, _)| (c.clone(), r.clone(), d.clone()))
        .collect();
    for (c, r, d) in &cells {
        let rho: f64 = r.parse().unwrap_or(0.0);
        let get = |a: &str| summary.get(&(c.clone(), r.clone(), d.clone(), a.to_string())).copied();
        let (Some(adfl), Some(dfl)) = (get("adfl"), get("dfl")) else {
            continue;
        };
        if rho >= 0.2 {
            checked += 1;
            for b in BASELINES {
                let Some(v) = get(b) else { continue };
                if !(adfl < v) {
                    failures.push(format!("{c} rho={r} D={d}: adfl {adfl:.5} >= {b} {v:.5}"));
                }
                if !(v < dfl) {
                    failures.push(format!("{c} rho={r} D={d}: {b} {v:.5} >= dfl {dfl:.5}"));
                }
            }
        }
        if (rho - 0.3).abs() < 1e-12 {
            if let Some(&o) = oracle.get(&(c.clone(), format!("{rho:?}"), d.clone())) {
                if !(adfl <= 3.0 * o) {
                    failures.push(format!("{c} rho=0.3 D={d}: adfl {adfl:.5} > 3 x oracle {o:.5}"));
                }
            }
        }
    }
    if checked == 0 {
        return Err(format!("{label}: no cells with rho >= 0.2 in {}", dir.display()));
    }
    if failures.is_empty() {
        Ok(format!("{label}: adfl < baselines < dfl in all {checked} cells with rho >= 0.2; adfl within 3x oracle at rho=0.3"))
    } else {
        Err(format!("{label}: {} violation(s): {}", failures.len(), failures.join("; ")))
    }
}

fn run_profile(name: &str) -> Result<(tempfile::TempDir, PathBuf), String> {
    let cfg = ExperimentConfig::load(&configs_dir().join(name)).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let threads = worker_threads(cfg.threads).map_err(|e| e.to_string())?;
    run_experiment(&cfg, &out, threads).map_err(|e| e.to_string())?;
    Ok((tmp, out))
}

fn criterion_6_headline() -> Option<Outcome> {
    if let Ok(dir) = std::env::var("ADFL_HEADLINE_OUT") {
        return Some(ordering(Path::new(&dir), "headline (precomputed)"));
    }
    if std::env::var("ADFL_HEADLINE").as_deref() == Ok("1") {
        return Some(run_profile("headline.toml").and_then(|(_tmp, out)| ordering(&out, "headline")));
    }
    None
}

fn criterion_7(dir: &Path) -> Outcome {
    let summary = read_summary(dir)?;
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    let groups: BTreeSet<(String, String)> = summary.keys().map(|(c, _, d, _)| (c.clone(), d.clone())).collect();
    for (c, d) in &groups {
        let series = |algo: &str| -> Vec<(f64, f64)> {
            let mut v: Vec<(f64, f64)> = summary
                .iter()
                .filter(|((cc, _, dd, a), _)| cc == c && dd == d && a == algo)
                .map(|((_, r, _, _), &mse)| (r.parse().unwrap_or(f64::NAN), mse))
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v
        };
        let dfl = series("dfl");
        if !dfl.windows(2).all(|w| w[1].1 > w[0].1) {
            failures.push(format!("dfl not increasing for {c} D={d}"));
        }
        if c == "bf" {
            let adfl = series("adfl");
            let at = |rho: f64| adfl.iter().find(|(r, _)| (r - rho).abs() < 1e-12).map(|x| x.1);
            match (at(0.0), at(0.3)) {
                (Some(a0), Some(a3)) => {
                    let ratio = a3.max(a0) / a3.min(a0);
                    lines.push(format!("bf D={d} adfl ratio {ratio:.2}"));
                    if !(ratio < 3.0) {
                        failures.push(format!("bf D={d}: adfl varies {ratio:.2}x"));
                    }
                }
                _ => failures.push(format!("bf D={d}: adfl missing rho 0 or 0.3")),
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("desk: dfl strictly increasing in rho for every corruption; {}", lines.join(", ")))
    } else {
        Err(format!("desk: {}", failures.join("; ")))
    }
}

fn criterion_8() -> Outcome {
    let (p, m, n) = (10, 20, 200);
    let mut w1 = Vec::new();
    let mut w2 = Vec::new();
    let mut mse1 = Vec::new();
    let mut mse2 = Vec::new();
    for rep in 0..10u64 {
        let s = setup(p, m, n, 5, Corruption::Bf, 0.3, derive_seed(8, &[b"stages", &rep.to_le_bytes()]));
        let lambda = LambdaChoice::Named(LambdaRule::LogN)
            .fixed_value(m * n)
            .expect("log N is fixed");
        for (stages, weights, mse) in [(1, &mut w1, &mut mse1), (2, &mut w2, &mut mse2)] {
            let mut cfg = AlgoConfig::new(Algorithm::Adfl, 0.1, 500);
            cfg.stages = stages;
            let out = run_multistage_adfl(&s.objs, &s.adjacency, &s.w, &cfg, lambda, &mut adfl::algorithms::NoTrace)
                .map_err(|e| e.to_string())?;
            let last = out.stage_weights.last().expect("at least one stage");
            let a = s.fleet.abnormal.len() as f64;
            weights.push(s.fleet.abnormal.iter().map(|&i| last.omega[i]).sum::<f64>() / a);
            mse.push(mse_normal(&out.final_state, &s.theta0, &s.fleet.abnormal).map_err(|e| e.to_string())?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a1, a2, e1, e2) = (mean(&w1), mean(&w2), mean(&mse1), mean(&mse2));
    let detail = format!(
        "BF rho=0.3, 10 replicates: mean abnormal weight S=1 {a1:.3e}, S=2 {a2:.3e}; MSE S=1 {e1:.5}, S=2 {e2:.5} (ratio {:.3}, bound 1.1)",
        e2 / e1
    );
    if a2 <= a1 && e2 <= 1.1 * e1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let mut worst_se: f64 = 0.0;
    for (m, d) in [(20, 5), (20, 10), (100, 5), (100, 30), (7, 1), (12, 11)] {
        let w = row_normalize(&build_directed_circle(m, d).map_err(|e| e.to_string())?);
        worst_se = worst_se.max(network_balance(&w));
    }
    let hand = Adjacency::from_rows(&[vec![1, 1, 0], vec![0, 1, 0], vec![1, 1, 1]]).map_err(|e| e.to_string())?;
    let se3 = network_balance(&row_normalize(&hand));
    let hand_err = (se3 - (7.0f64 / 18.0).sqrt()).abs();

    let cfg = ExperimentConfig::load(&configs_dir().join("headline.toml")).map_err(|e| e.to_string())?;
    let mut conditions = Vec::new();
    let mut cond_ok = true;
    for topo in &cfg.topology {
        let adjacency = topo
            .build(cfg.data.m, &mut rng(stream_seed(0, "topology")))
            .map_err(|e| e.to_string())?;
        let v = spectral_condition(&row_normalize(&adjacency)).map_err(|e| e.to_string())?;
        cond_ok &= v < 1.0;
        conditions.push(format!("{} {} = {v:.4}", topo.name(), topo.param()));
    }
    let detail = format!(
        "max circle SE(W) {worst_se:.1e}; 3-node SE error {hand_err:.1e}; spectral condition {}",
        conditions.join(", ")
    );
    if worst_se <= 1e-12 && hand_err <= 1e-12 && cond_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const DETERMINISM_CONFIG: &str = r#"
master_seed = 99
replications = 2
log_every = 5

[model]
p = 5
loss = "squared_error"

[data]
n = 40
m = 10
corruptions = ["bf", "mp"]
rho = [0.0, 0.2]

[[topology]]
kind = "directed_circle"
d = 3

[training]
alpha = 0.1
init_iters = 20
max_iter = 40
stages = 2
lambda = "cv"

[[algorithm]]
kind = "dfl"

[[algorithm]]
kind = "adfl"

[[algorithm]]
kind = "bridge_m"

[[algorithm]]
kind = "bridge_t"
trim_b = 1

[[algorithm]]
kind = "clipped_gossip"
tau = "auto"
"#;

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("det.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_adfl"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .env_remove("ADFL_THREADS")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {i} exited with {}", status.status));
        }
        outputs.push(std::fs::read(out.join("runs.csv")).map_err(|e| e.to_string())?);
    }
    let detail = format!(
        "two runs (1 and 3 threads) wrote {} and {} bytes of runs.csv",
        outputs[0].len(),
        outputs[1].len()
    );
    if outputs[0] == outputs[1] && !outputs[0].is_empty() {
        Ok(format!("{detail}, byte-identical"))
    } else {
        Err(format!("{detail}, contents differ"))
    }
}

fn report(n: &str, outcome: Outcome, started: Instant, failed: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => println!("criterion {n}: PASS ({secs:.1}s) {msg}"),
        Err(msg) => {
            *failed += 1;
            println!("criterion {n}: FAIL ({secs:.1}s) {msg}");
        }
    }
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar probes expect no work.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    let t = Instant::now();
    report("1", criterion_1(), t, &mut failed);
    let t = Instant::now();
    report("2", criterion_2(), t, &mut failed);
    let t = Instant::now();
    report("3", criterion_3(), t, &mut failed);
    let t = Instant::now();
    report("4", criterion_4(), t, &mut failed);
    let t = Instant::now();
    report("5", criterion_5(), t, &mut failed);

    let t = Instant::now();
    let desk = run_profile("desk.toml");
    match &desk {
        Ok((_, out)) => report("6 (desk)", ordering(out, "desk"), t, &mut failed),
        Err(e) => report("6 (desk)", Err(e.clone()), t, &mut failed),
    }
    let t = Instant::now();
    let mut skipped = 0;
    match criterion_6_headline() {
        Some(outcome) => report("6 (headline)", outcome, t, &mut failed),
        None => {
            skipped += 1;
            println!("criterion 6 (headline): SKIPPED set ADFL_HEADLINE=1 to run the 20-replicate sweep");
        }
    }
    let t = Instant::now();
    match &desk {
        Ok((_, out)) => report("7", criterion_7(out), t, &mut failed),
        Err(e) => report("7", Err(e.clone()), t, &mut failed),
    }
    let t = Instant::now();
    report("8", criterion_8(), t, &mut failed);
    let t = Instant::now();
    report("9", criterion_9(), t, &mut failed);
    let t = Instant::now();
    report("10", criterion_10(), t, &mut failed);

    if failed == 0 {
        println!("acceptance: every criterion that ran passed, {skipped} skipped");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criterion line(s) failed");
        ExitCode::FAILURE
    }
}

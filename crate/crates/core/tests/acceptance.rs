//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use surgseg::clustering::{dbscan_1d, fit_dpgmm, DbscanConfig, DpGmmConfig};
use surgseg::dataset::synthesize_trial;
use surgseg::evaluation::{accuracy, macro_metrics, match_points, micro_metrics, ConfusionMatrix, MatchConfig};
use surgseg::filtering::{savgol_smooth, SavGolConfig};
use surgseg::hyperopt::{optimize, pipeline_objective, random_search, Dimension, ScoredTrial, SearchSpace};
use surgseg::pipeline::{run_trial_detailed, PipelineConfig};
use surgseg::profiles::rotation::{quaternion_distance, rotation_to_quaternion};

use common::{surgseg, trial_spec, write_synthetic_set, TrialFiles};

type Check = (bool, String);

fn ensure(ok: bool, detail: String) -> Check {
    (ok, detail)
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

/// Textbook DBSCAN: quadratic neighbourhood scan and graph search over
/// cores. Borders take the cluster of their nearest core, the left one on
/// ties; clusters are numbered by their leftmost core.
fn brute_force_dbscan(x: &[f64], eps: f64, minp: usize) -> Vec<Option<usize>> {
    let n = x.len();
    let near = |i: usize, j: usize| (x[i] - x[j]).abs() <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= minp).collect();
    let mut comp: Vec<Option<usize>> = vec![None; n];
    let mut n_comp = 0;
    for start in 0..n {
        if !core[start] || comp[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = Some(n_comp);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && comp[j].is_none() && near(i, j) {
                    comp[j] = Some(n_comp);
                    stack.push(j);
                }
            }
        }
        n_comp += 1;
    }
    let mut labels = comp.clone();
    for i in (0..n).filter(|&i| !core[i]) {
        let best = (0..n)
            .filter(|&j| core[j] && near(i, j))
            .min_by(|&a, &b| (x[i] - x[a]).abs().total_cmp(&(x[i] - x[b]).abs()).then(x[a].total_cmp(&x[b])));
        labels[i] = best.and_then(|j| comp[j]);
    }
    let mut leftmost = vec![f64::INFINITY; n_comp];
    for i in (0..n).filter(|&i| core[i]) {
        let c = comp[i].unwrap();
        leftmost[c] = leftmost[c].min(x[i]);
    }
    let mut order: Vec<usize> = (0..n_comp).collect();
    order.sort_by(|&a, &b| leftmost[a].total_cmp(&leftmost[b]));
    let mut rank = vec![0; n_comp];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    labels.iter().map(|l| l.map(|c| rank[c])).collect()
}

fn dbscan_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let mut mismatches = 0;
    for inst in 0..1000 {
        let n = rng.random_range(1..=200);
        let integer = inst % 2 == 0;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                if integer {
                    rng.random_range(0..1000) as f64
                } else {
                    rng.random_range(0.0..1000.0)
                }
            })
            .collect();
        let eps = if integer {
            rng.random_range(1..=40) as f64
        } else {
            rng.random_range(0.5..40.0)
        };
        let minp = rng.random_range(1..=6);
        let got: Vec<Option<usize>> = dbscan_1d(&x, &DbscanConfig::new(eps, minp).unwrap())
            .unwrap()
            .labels
            .iter()
            .map(|l| l.cluster())
            .collect();
        if got != brute_force_dbscan(&x, eps, minp) {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    ensure(
        mismatches == 0 && within(Duration::from_secs(10), elapsed),
        format!("{mismatches} of 1000 instances differ, {elapsed:.2?} (limit 10 s)"),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let v = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(v));
    q.to_rotation_matrix().into_inner()
}

/// Angle of the relative rotation from its trace.
fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (((a.transpose() * b).trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

fn rotation_distance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut self_worst: f64 = 0.0;
    let mut in_range = true;
    for _ in 0..10_000 {
        let (ra, rb) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let (qa, qb) = (rotation_to_quaternion(&ra).unwrap(), rotation_to_quaternion(&rb).unwrap());
        let d = quaternion_distance(&qa, &qb);
        in_range &= (0.0..=std::f64::consts::PI).contains(&d);
        worst = worst.max((d - geodesic_angle(&ra, &rb)).abs());
        self_worst = self_worst.max(quaternion_distance(&qa, &qa));
    }
    ensure(
        worst <= 1e-6 && self_worst == 0.0 && in_range,
        format!("max |D_rot - geodesic| = {worst:.2e} (tol 1e-6), max D_rot(q,q) = {self_worst:e}, range ok: {in_range}"),
    )
}

fn savgol_polynomials() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for window in [5, 9, 21] {
        for order in [2, 3] {
            let cfg = SavGolConfig::new(window, order).unwrap();
            for degree in 0..=order {
                let coef: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..80)
                    .map(|t| {
                        let u = t as f64 / 20.0;
                        coef.iter().rev().fold(0.0, |acc, c| acc * u + c)
                    })
                    .collect();
                let s = savgol_smooth(&y, &cfg).unwrap();
                for (a, b) in s.iter().zip(&y) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, format!("max deviation {worst:.2e} over windows 5/9/21, orders 2/3 (tol 1e-9)"))
}

fn dpgmm_recovery() -> Check {
    let mut failures = Vec::new();
    let mut min_agreement: f64 = 1.0;
    let dim = 6;
    for blobs in [2usize, 4] {
        for seed in 1..=5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let dir: Vec<f64> = {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n).collect()
            };
            let mut data = Vec::new();
            let mut truth = Vec::new();
            for b in 0..blobs {
                for _ in 0..150 {
                    let p: Vec<f64> = (0..dim)
                        .map(|d| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            10.0 * b as f64 * dir[d] + z
                        })
                        .collect();
                    data.push(p);
                    truth.push(b);
                }
            }
            let cfg = DpGmmConfig {
                seed,
                ..DpGmmConfig::default()
            };
            let model = fit_dpgmm(&data, &cfg).unwrap();
            let labels = model.labels();
            let mut votes: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
            for (l, t) in labels.iter().zip(&truth) {
                *votes.entry(*l).or_default().entry(*t).or_default() += 1;
            }
            let agree: usize = votes.values().map(|v| v.values().max().unwrap()).sum();
            let agreement = agree as f64 / data.len() as f64;
            min_agreement = min_agreement.min(agreement);
            let monotone = model.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-6);
            if model.n_active() != blobs || agreement < 0.99 || !monotone {
                failures.push(format!(
                    "{blobs} blobs seed {seed}: active {} agreement {agreement:.3} monotone {monotone}",
                    model.n_active()
                ));
            }
        }
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("10 runs, active = blobs, min agreement {min_agreement:.4}, ELBO non-decreasing")
        } else {
            failures.join("; ")
        },
    )
}

fn end_to_end() -> Check {
    let delta = MatchConfig::new(30).unwrap();
    let t0 = Instant::now();
    let (mut kin, mut vis, mut fused) = (0.0, 0.0, 0.0);
    for seed in 1..=10u64 {
        let trial = synthesize_trial(&trial_spec(seed), seed);
        let cfg = PipelineConfig::default().with_seed(seed);
        let out = run_trial_detailed(&trial.trajectory, Some(&trial.features), &cfg).unwrap();
        let truth = trial.transcription.boundaries();
        kin += match_points(out.kinematic.points(), &truth, &delta).f1;
        vis += match_points(out.vision.as_ref().unwrap().points(), &truth, &delta).f1;
        fused += match_points(out.final_points.points(), &truth, &delta).f1;
    }
    let elapsed = t0.elapsed();
    let (kin, vis, fused) = (kin / 10.0, vis / 10.0, fused / 10.0);
    ensure(
        fused >= 0.80 && fused >= kin.max(vis) - 0.05 && within(Duration::from_secs(120), elapsed),
        format!("mean F1 fused {fused:.3} (>= 0.80), kinematic {kin:.3}, vision {vis:.3}, {elapsed:.2?} (limit 2 min)"),
    )
}

fn metric_equations() -> Check {
    let cm = ConfusionMatrix::new(vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]]).unwrap();
    let micro = micro_metrics(&cm).unwrap();
    let macro_ = macro_metrics(&cm).unwrap();
    // sums of TP 12, FP 4, FN 4; per-class P 5/7, 3/4, 4/5 and R 5/6, 1/2, 1
    let expected = [
        (micro.precision, 12.0 / 16.0),
        (micro.recall, 12.0 / 16.0),
        (macro_.precision, 317.0 / 420.0),
        (macro_.recall, 7.0 / 9.0),
    ];
    let cm2 = ConfusionMatrix::new(vec![vec![8, 2], vec![4, 6]]).unwrap();
    let micro2 = micro_metrics(&cm2).unwrap();
    let macro2 = macro_metrics(&cm2).unwrap();
    let expected2 = [
        (micro2.precision, 0.7),
        (micro2.recall, 0.7),
        (macro2.precision, 17.0 / 24.0),
        (macro2.recall, 0.7),
    ];
    let hand_ok = expected.iter().chain(&expected2).all(|(a, b)| (a - b).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let k = rng.random_range(2..=10);
        let counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..50)).collect()).collect();
        let cm = ConfusionMatrix::new(counts).unwrap();
        let Ok(acc) = accuracy(&cm) else { continue };
        let m = micro_metrics(&cm).unwrap();
        worst = worst.max((m.precision - acc).abs()).max((m.recall - acc).abs());
    }
    ensure(
        hand_ok && worst <= 1e-12,
        format!("hand-computed values reproduced: {hand_ok}; max |micro - accuracy| = {worst:e} over 500 matrices"),
    )
}

fn bayesian_optimization() -> Check {
    let t0 = Instant::now();
    let space = SearchSpace::new(vec![Dimension::linear("x", -3.0, 5.0)]).unwrap();
    let f = |p: &[f64]| Ok(-(p[0] - 1.3).powi(2));
    let res = optimize(f, &space, 20, 7).unwrap();
    let grid_best = (0..=80_000)
        .map(|i| -3.0 + i as f64 * 1e-4)
        .max_by(|a, b| (-(a - 1.3f64).powi(2)).total_cmp(&-(b - 1.3f64).powi(2)))
        .unwrap();
    let quad_gap = (res.best_params[0] - grid_best).abs();

    let trials: Vec<ScoredTrial> = (1..=3u64)
        .map(|s| {
            let t = synthesize_trial(&trial_spec(s), s);
            ScoredTrial {
                boundaries: t.transcription.boundaries(),
                trajectory: t.trajectory,
                features: Some(t.features),
            }
        })
        .collect();
    let base = PipelineConfig::default().with_seed(7);
    let objective = pipeline_objective(&trials, &base, MatchConfig::new(30).unwrap());
    let space = SearchSpace::pipeline_default();
    let bo = optimize(&objective, &space, 30, 7).unwrap();
    let rs = random_search(&objective, &space, 30, 7).unwrap();
    let elapsed = t0.elapsed();
    ensure(
        quad_gap <= 0.2 && bo.best_score >= rs.best_score - 0.02 && within(Duration::from_secs(300), elapsed),
        format!(
            "quadratic |x* - grid optimum| = {quad_gap:.4} (<= 0.2); pipeline incumbent F1 {:.3} vs random search {:.3}; {elapsed:.2?} (limit 5 min)",
            bo.best_score, rs.best_score
        ),
    )
}

fn report_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_set(dir.path(), &[1, 2, 3], 11, &TrialFiles::default());
    let m = manifest.to_str().unwrap();
    let a = dir.path().join("run_a");
    let b = dir.path().join("run_b");
    let (ca, _) = surgseg(&["segment", m, "--out", a.to_str().unwrap(), "--jobs", "4"]);
    let (cb, _) = surgseg(&["segment", m, "--out", b.to_str().unwrap(), "--jobs", "1"]);
    let (ra, rb) = (report_bytes(&a), report_bytes(&b));
    ensure(
        ca == 0 && cb == 0 && ra.len() == 4 && ra == rb,
        format!("exit codes {ca}/{cb}, {} files compared, identical: {}", ra.len(), ra == rb),
    )
}

/// Runs only when `SURGSEG_JIGSAWS_MANIFEST` names a manifest of real
/// recordings with exported features; optional `SURGSEG_DELTA` sets the
/// tolerance.
fn jigsaws_report() -> Option<Check> {
    let manifest = std::env::var("SURGSEG_JIGSAWS_MANIFEST").ok()?;
    let delta = std::env::var("SURGSEG_DELTA").unwrap_or_else(|_| "30".into());
    let out = tempfile::tempdir().unwrap();
    let out_s = out.path().to_str().unwrap();
    let (seg, _) = surgseg(&["segment", &manifest, "--out", out_s, "--no-profiles"]);
    let (eval, table) = surgseg(&["evaluate", &manifest, "--out", out_s, "--delta", &delta]);
    println!("{table}");
    println!("reference fused F1: suturing 0.630, needle_passing 0.570, knot_tying 0.657, mean 0.623");
    let states_delta = table.contains(&format!("delta = {delta} frames"));
    Some(ensure(
        seg != 3 && eval != 3 && states_delta,
        format!("segment exit {seg}, evaluate exit {eval}, table states delta: {states_delta} (scores are reported, not gated)"),
    ))
}

type NamedCheck = (&'static str, fn() -> Check);

fn main() {
    let checks: [NamedCheck; 8] = [
        ("dbscan matches brute force", dbscan_oracle),
        ("rotation distance equals geodesic angle", rotation_distance),
        ("savitzky-golay reproduces polynomials", savgol_polynomials),
        ("dp-gmm recovers blobs", dpgmm_recovery),
        ("end-to-end synthetic segmentation", end_to_end),
        ("micro and macro metric equations", metric_equations),
        ("bayesian optimization", bayesian_optimization),
        ("segment is deterministic", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t0 = Instant::now();
        let (ok, detail) = panic::catch_unwind(check).unwrap_or_else(|_| (false, "panicked".to_string()));
        failed += usize::from(!ok);
        println!("{} {name}: {detail} [{:.2?}]", if ok { "PASS" } else { "FAIL" }, t0.elapsed());
    }
    match panic::catch_unwind(jigsaws_report) {
        Ok(Some((ok, detail))) => {
            failed += usize::from(!ok);
            println!("{} recorded-data report: {detail}", if ok { "PASS" } else { "FAIL" });
        }
        Ok(None) => println!("SKIP recorded-data report: set SURGSEG_JIGSAWS_MANIFEST to run"),
        Err(_) => {
            failed += 1;
            println!("FAIL recorded-data report: panicked");
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p gwkit --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use gwkit::compositing::{fuse, psnr, ssim};
use gwkit::facegeom::{orientation_similarity, vector_field, FaceLandmarks, SIMILARITY_DELTA};
use gwkit::gromov::{gw_brute_force, gw_cy_gradient, gw_linearized_cost, gw_objective};
use gwkit::io::load_image;
use gwkit::losses::{local_refinement_loss, spatial_loss, temporal_loss, ScoreContext, ScoreRecord};
use gwkit::pipeline::{load_manifest, process_sequence, SequenceConfig};
use gwkit::sinkhorn::{sinkhorn_in, Domain, SinkhornParams};
use gwkit::types::{intra_costs, uniform_distribution};
use gwkit::{
    gw_solve, gw_solve_costs, DiscreteDistribution, Epsilon, FeatureBatch, IntraCostMatrix, Mask, RasterImage,
    SolverConfig,
};
use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_batch(rng: &mut StdRng, n: usize, d: usize) -> FeatureBatch {
    FeatureBatch::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))).unwrap()
}

fn random_distribution(rng: &mut StdRng, n: usize) -> DiscreteDistribution {
    let w: Array1<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total = w.sum();
    DiscreteDistribution::new(w / total).unwrap()
}

fn fine_config(rel: f64) -> SolverConfig {
    SolverConfig {
        epsilon: Epsilon::RelativeToMeanCost(rel),
        ..SolverConfig::default()
    }
}

fn gw_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let cfg = fine_config(1e-3);
    let mut worst = 0.0_f64;
    let mut failures = 0;
    let cases = 240;
    for case in 0..cases {
        let n = 2 + case % 2;
        let d = rng.gen_range(1..=4);
        let (x, y) = (random_batch(&mut rng, n, d), random_batch(&mut rng, n, d));
        let mu = uniform_distribution(n).unwrap();
        let solved = gw_solve(&x, &y, &mu, &mu, &cfg).unwrap();
        let oracle = gw_brute_force(&intra_costs(&x), &intra_costs(&y), 0.02).unwrap();
        let gap = (solved.transport_cost - oracle.transport_cost).abs();
        let allowed = f64::max(1e-3, 0.02 * oracle.transport_cost.abs());
        worst = worst.max(gap / allowed);
        if gap > allowed {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failures == 0 && secs < 60.0,
        format!("{cases} instances, {failures} outside tolerance, worst gap/allowed {worst:.3}, {secs:.1}s"),
    )
}

fn analytic_fixture() -> Outcome {
    let x = FeatureBatch::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let y = FeatureBatch::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    let mu = uniform_distribution(2).unwrap();
    let r = gw_solve(&x, &y, &mu, &mu, &SolverConfig::default()).unwrap();
    // On this instance every feasible plan is [[t, 1/2-t], [1/2-t, t]] and
    // GW = 2.5 - 4 Σ π², minimized at a vertex with value 0.5.
    let closed_form = |pi: &Array2<f64>| 2.5 - 4.0 * pi.iter().map(|v| v * v).sum::<f64>();
    let oracle = gw_brute_force(&intra_costs(&x), &intra_costs(&y), 1e-3).unwrap();
    let oracle_plan = oracle.coupling.plan().to_owned();
    let ok = (r.transport_cost - 0.5).abs() <= 5e-2
        && (oracle.transport_cost - 0.5).abs() <= 1e-12
        && (closed_form(&oracle_plan) - oracle.transport_cost).abs() <= 1e-12;
    check(
        ok,
        format!(
            "solver {:.6}, grid oracle {:.6}, closed form at oracle {:.6}",
            r.transport_cost,
            oracle.transport_cost,
            closed_form(&oracle_plan)
        ),
    )
}

fn self_distance_and_invariance() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    // Entropic leakage between near-duplicate points grows linearly with
    // epsilon; at 1e-3 of the mean cost it reaches ~1.5e-4 on this sample.
    let cfg = fine_config(1e-4);
    let (mut worst_self, mut worst_perm) = (0.0_f64, 0.0_f64);
    let cases = 100;
    for _ in 0..cases {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=4);
        let x = random_batch(&mut rng, n, d);
        let y = random_batch(&mut rng, m, d);
        let mu = uniform_distribution(n).unwrap();
        let nu = uniform_distribution(m).unwrap();
        worst_self = worst_self.max(gw_solve(&x, &x, &mu, &mu, &cfg).unwrap().transport_cost);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let base = gw_solve(&x, &y, &mu, &nu, &cfg).unwrap().transport_cost;
        let moved = gw_solve(&x.permuted(&perm).unwrap(), &y, &mu, &nu, &cfg).unwrap().transport_cost;
        worst_perm = worst_perm.max((base - moved).abs());
    }
    check(
        worst_self <= 1e-4 && worst_perm <= 1e-8,
        format!("{cases} batches, max self-distance {worst_self:.3e}, max permutation change {worst_perm:.3e}"),
    )
}

fn sinkhorn_feasibility() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let (mut worst_violation, mut worst_agreement) = (0.0_f64, 0.0_f64);
    let mut compared = 0;
    let cases = 500;
    for _ in 0..cases {
        let n = rng.gen_range(1..=16);
        let m = rng.gen_range(1..=16);
        let scale = rng.gen_range(0.5..10.0);
        let cost = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..scale));
        let mu = random_distribution(&mut rng, n);
        let nu = random_distribution(&mut rng, m);
        let eps = rng.gen_range(0.05..0.5) * scale;
        let params = SinkhornParams {
            epsilon: eps,
            max_iters: 10_000,
            tol: 1e-9,
        };
        let log = sinkhorn_in(Domain::Log, cost.view(), &mu, &nu, &params, None).unwrap();
        worst_violation = worst_violation.max(log.coupling.marginal_violation());
        if let Ok(std) = sinkhorn_in(Domain::Standard, cost.view(), &mu, &nu, &params, None) {
            worst_violation = worst_violation.max(std.coupling.marginal_violation());
            let diff = (&log.coupling.plan() - &std.coupling.plan()).iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst_agreement = worst_agreement.max(diff);
            compared += 1;
        }
    }
    check(
        worst_violation <= 1e-9 && worst_agreement <= 1e-8 && compared > 0,
        format!(
            "{cases} problems, max L1 marginal violation {worst_violation:.3e}, \
             log/standard max entry gap {worst_agreement:.3e} over {compared} pairs"
        ),
    )
}

fn contraction_correctness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for n in 1..=6 {
        for m in 1..=6 {
            for _ in 0..4 {
                let cx = intra_costs(&random_batch(&mut rng, n, 3));
                let cy = intra_costs(&random_batch(&mut rng, m, 2));
                let pi = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..1.0));
                let fast = gw_linearized_cost(&cx, &cy, pi.view()).unwrap();
                let (a, b) = (cx.costs(), cy.costs());
                for i in 0..n {
                    for j in 0..m {
                        let mut naive = 0.0;
                        for k in 0..n {
                            for l in 0..m {
                                let d = a[[i, k]] - b[[j, l]];
                                naive += d * d * pi[[k, l]];
                            }
                        }
                        worst = worst.max((naive - fast[[i, j]]).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("{cases} instances, max abs difference {worst:.3e}"))
}

fn face_geometry() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let (mut worst_loop, mut worst_scale) = (0.0_f64, 0.0_f64);
    let cases = 1000;
    let point = |rng: &mut StdRng| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
    for _ in 0..cases {
        let lm = FaceLandmarks {
            frame_id: "f".into(),
            right_eye: point(&mut rng),
            left_eye: point(&mut rng),
            mouth_left: point(&mut rng),
            mouth_right: point(&mut rng),
            nose: point(&mut rng),
        };
        let Ok(v) = vector_field(&lm) else { continue };
        worst_loop = worst_loop.max(v.closure_residual());
        let s = rng.gen_range(0.1..10.0);
        let moved = vector_field(&lm.transformed(s, point(&mut rng))).unwrap();
        let diff = v
            .vectors
            .iter()
            .zip(&moved.vectors)
            .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
            .fold(0.0, f64::max);
        worst_scale = worst_scale.max(diff);
    }

    // Unit inter-ocular distance; moving the nose by 0.5 changes only v5, by 0.5.
    let base = FaceLandmarks {
        frame_id: "a".into(),
        right_eye: [0.0, 0.0],
        left_eye: [1.0, 0.0],
        mouth_left: [0.8, 1.2],
        mouth_right: [0.2, 1.2],
        nose: [0.5, 0.6],
    };
    let nudged = FaceLandmarks {
        nose: [0.8, 1.0],
        ..base.clone()
    };
    let s = orientation_similarity(&vector_field(&base).unwrap(), &vector_field(&nudged).unwrap());
    let expected = 1.0 / (0.5 + SIMILARITY_DELTA);
    check(
        worst_loop <= 1e-9 && worst_scale <= 1e-9 && (s - expected).abs() <= 1e-9 && (s - 2.0).abs() < 1e-6,
        format!(
            "{cases} landmark sets, max loop residual {worst_loop:.3e}, max scale drift {worst_scale:.3e}, S = {s:.9}"
        ),
    )
}

fn compositing_exactness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let fg = RasterImage::from_fn(37, 23, |_, _| rng.gen()).unwrap();
    let bg = RasterImage::from_fn(37, 23, |_, _| rng.gen()).unwrap();
    let ones = fuse(&fg, &bg, &Mask::filled(37, 23, true).unwrap()).unwrap() == fg;
    let zeros = fuse(&fg, &bg, &Mask::filled(37, 23, false).unwrap()).unwrap() == bg;

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline");
    let out = tempfile::tempdir().unwrap();
    let manifests = load_manifest(dir.join("manifest.json")).unwrap();
    let cfg = SequenceConfig {
        out_dir: Some(out.path().to_path_buf()),
        ..SequenceConfig::new(3)
    };
    let report = process_sequence(&manifests, &cfg).unwrap();
    let mut mismatched = Vec::new();
    for m in &manifests {
        let got = load_image(out.path().join(format!("{}.png", m.frame_id)));
        let want = load_image(dir.join(format!("expected/{}.png", m.frame_id))).unwrap();
        if got.ok().as_ref() != Some(&want) {
            mismatched.push(m.frame_id.clone());
        }
    }
    let golden_ok = mismatched.is_empty() && report.failures.is_empty() && report.frames.len() == 3;
    check(
        ones && zeros && golden_ok,
        format!(
            "all-ones passthrough {ones}, all-zeros passthrough {zeros}, golden frames mismatched {mismatched:?}, \
             failures {}",
            report.failures.len()
        ),
    )
}

fn metrics() -> Outcome {
    let a = RasterImage::from_fn(32, 24, |x, y| [(x * 5) as u8, (y * 7) as u8, ((x + y) * 3) as u8]).unwrap();
    let b = RasterImage::from_fn(32, 24, |x, y| a.pixel(x, y).map(|v| v + 16)).unwrap();
    let p = psnr(&a, &b).unwrap();
    let expected = 10.0 * (255.0_f64 * 255.0 / 256.0).log10();
    let s = ssim(&a, &a).unwrap();
    check(
        (p - 24.048).abs() <= 1e-3 && (p - expected).abs() <= 1e-12 && (s - 1.0).abs() <= 1e-12,
        format!("PSNR {p:.6} dB, SSIM(a,a) {s:.15}"),
    )
}

fn loss_formulas() -> Outcome {
    let rec = |c| ScoreRecord::new(0.5, 0.5, c).unwrap();
    let spatial = spatial_loss(&vec![rec(ScoreContext::Spatial); 4]).unwrap();
    let temporal = temporal_loss(&vec![rec(ScoreContext::Temporal); 3]).unwrap();
    let local_records: Vec<_> = (1..=5).map(|p| rec(ScoreContext::LocalPart(p))).collect();
    let local = local_refinement_loss(&local_records).unwrap();
    let two_ln_half = 2.0 * 0.5_f64.ln();
    check(
        (spatial + 1.3863).abs() <= 1e-4
            && (temporal + 1.3863).abs() <= 1e-4
            && (local + 6.9315).abs() <= 1e-4
            && (spatial - two_ln_half).abs() <= 1e-12
            && (local - 5.0 * two_ln_half).abs() <= 1e-12,
        format!("spatial {spatial:.6}, temporal {temporal:.6}, local {local:.6}"),
    )
}

fn cy_gradient() -> Outcome {
    let mut rng = StdRng::seed_from_u64(10);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    let cases = 20;
    for _ in 0..cases {
        let cx = intra_costs(&random_batch(&mut rng, 4, 3));
        let cy = intra_costs(&random_batch(&mut rng, 4, 3));
        let mu = uniform_distribution(4).unwrap();
        let r = gw_solve_costs(&cx, &cy, &mu, &mu, &SolverConfig::default()).unwrap();
        let pi = r.coupling.plan().to_owned();
        let grad = gw_cy_gradient(&cx, &cy, pi.view()).unwrap();
        // Off-diagonal entries are perturbed in symmetric pairs so the cost
        // matrix stays admissible; the directional derivative is g[j][l] + g[l][j].
        for j in 0..4 {
            for l in (j + 1)..4 {
                let shifted = |delta: f64| {
                    let mut c = cy.costs().to_owned();
                    c[[j, l]] += delta;
                    c[[l, j]] += delta;
                    gw_objective(&cx, &IntraCostMatrix::try_from_matrix(c).unwrap(), pi.view()).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = grad[[j, l]] + grad[[l, j]];
                worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-6));
            }
        }
    }
    check(worst <= 1e-4, format!("{cases} instances, max relative error {worst:.3e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("GW matches brute-force oracle", gw_oracle_equivalence),
        ("analytic two-point GW fixture", analytic_fixture),
        ("zero self-distance and permutation invariance", self_distance_and_invariance),
        ("Sinkhorn feasibility and domain agreement", sinkhorn_feasibility),
        ("linearized cost matches naive sum", contraction_correctness),
        ("face geometry identities", face_geometry),
        ("compositing exactness and golden pipeline", compositing_exactness),
        ("PSNR and SSIM fixtures", metrics),
        ("loss formula fixtures", loss_formulas),
        ("cy gradient vs finite differences", cy_gradient),
    ];
    let mut results = BTreeMap::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let secs = started.elapsed().as_secs_f64();
        println!("[{tag}] {:>2}. {name}: {detail} ({secs:.1}s)", i + 1);
        results.insert(i + 1, outcome.is_ok());
    }
    let passed = results.values().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbrestore_core::flow::{estimate_flow, FlowParams};
use turbrestore_core::image::{temporal_mean, FrameSequence, Image};
use turbrestore_core::metrics::{bright_centroid, mean_endpoint_error, rmse};
use turbrestore_core::nltv::{compute_weights, nltv_prox, nltv_prox_traced, NlParams};
use turbrestore_core::sim::{
    generate_sequence, moving_square_sequence, resolution_chart, smooth_random_flow, wave_flow,
    SimParams,
};
use turbrestore_core::solver::{
    restore, restore_with_flows, sliding_window_restore, SolverConfig, PROX_MAX_ITERS, PROX_TOL,
};
use turbrestore_core::warp::{apply_adjoint, apply_warp, fidelity, fidelity_gradient, FlowField};

struct Outcome {
    pass: bool,
    detail: String,
    /// Named output files used by the determinism check.
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail, files: Vec::new() }
    }
}

type Check = fn() -> Outcome;

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(w, h, |_, _| rng.random::<f64>())
}

fn random_smooth_flow(w: usize, h: usize, rng: &mut ChaCha8Rng) -> FlowField {
    let amplitude = rng.random_range(0.5..3.0);
    smooth_random_flow(w, h, amplitude, 4.0, rng.random()).unwrap()
}

/// Smooth random texture rescaled to [0.1, 0.9].
fn texture(w: usize, h: usize, seed: u64) -> Image {
    let (a, _) = smooth_random_flow(w, h, 1.0, 2.0, seed).unwrap().components();
    let (lo, hi) = a
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    a.map(|v| 0.1 + 0.8 * (v - lo) / (hi - lo))
}

fn image_bytes(img: &Image) -> Vec<u8> {
    img.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn report_bytes(r: &turbrestore_core::RestoreReport) -> Vec<u8> {
    let mut out = Vec::new();
    r.without_timings().write_csv(&mut out).unwrap();
    out
}

fn adjoint_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let w = rng.random_range(8..=64);
        let h = rng.random_range(8..=64);
        let phi = random_smooth_flow(w, h, &mut rng);
        let u = random_image(w, h, &mut rng);
        let r = random_image(w, h, &mut rng);
        let lhs = apply_warp(&u, &phi).unwrap().dot(&r);
        let rhs = u.dot(&apply_adjoint(&r, &phi).unwrap());
        worst = worst.max((lhs - rhs).abs() / (u.norm() * r.norm()));
    }
    Outcome::new(worst <= 1e-9, format!("worst relative gap {worst:.2e}"))
}

fn spike_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (8, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let phi = random_smooth_flow(w, h, &mut rng);
        let r = random_image(w, h, &mut rng);
        let adj = apply_adjoint(&r, &phi).unwrap();
        // Entry p of Φᵀr is the inner product of column p of Φ with r.
        for p in 0..w * h {
            let spike = Image::from_fn(w, h, |x, y| if y * w + x == p { 1.0 } else { 0.0 });
            let column = apply_warp(&spike, &phi).unwrap();
            worst = worst.max((column.dot(&r) - adj.data()[p]).abs());
        }
    }
    Outcome::new(worst <= 1e-12, format!("worst pixel gap {worst:.2e}"))
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (8, 8);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let flows: Vec<FlowField> = (0..3).map(|_| random_smooth_flow(w, h, &mut rng)).collect();
        let targets =
            FrameSequence::new((0..3).map(|_| random_image(w, h, &mut rng)).collect()).unwrap();
        let u = random_image(w, h, &mut rng);
        let grad = fidelity_gradient(&u, &flows, &targets).unwrap();
        let energy = |v: &Image| 0.5 * fidelity(v, &flows, &targets).unwrap();
        let fd: Vec<f64> = (0..w * h)
            .map(|p| {
                let bump = |s: f64| Image::from_fn(w, h, |x, y| u.get(x, y) + if y * w + x == p { s } else { 0.0 });
                (energy(&bump(step)) - energy(&bump(-step))) / (2.0 * step)
            })
            .collect();
        let fd = Image::from_vec(w, h, fd).unwrap();
        let err = fd.zip_map(&grad, |a, b| a - b).unwrap().norm() / grad.norm();
        worst = worst.max(err);
    }
    Outcome::new(worst <= 1e-5, format!("worst relative error {worst:.2e}"))
}

fn chart_sequence(frames: usize, noise: f64) -> (Image, FrameSequence, Vec<FlowField>) {
    let truth = resolution_chart(64, 64);
    let params = SimParams {
        frames,
        noise_sigma: noise,
        ..SimParams::default()
    };
    let (seq, flows) = generate_sequence(&truth, &params).unwrap();
    (truth, seq, flows)
}

fn bregman_exact_flows() -> Outcome {
    let (_, seq, flows) = chart_sequence(20, 0.0);
    let cfg = SolverConfig {
        outer_iters: 10,
        outer_tol: 0.0,
        ..SolverConfig::default()
    };
    let out = restore_with_flows(&seq, &flows, &cfg).unwrap();
    let initial = out.report.initial_fidelity;
    let trace: Vec<f64> = std::iter::once(initial)
        .chain(out.report.records.iter().map(|r| r.fidelity))
        .collect();
    let monotone = trace.windows(2).all(|p| p[1] <= p[0]);
    let reached = out.report.records.iter().position(|r| r.fidelity <= 0.01 * initial);
    let files = vec![
        ("c4_restored.bin".into(), image_bytes(&out.image)),
        ("c4_report.csv".into(), report_bytes(&out.report)),
    ];
    Outcome {
        pass: monotone && reached.is_some(),
        detail: format!(
            "monotone {monotone}, final/initial {:.2e}, 1% reached at outer {}",
            trace.last().unwrap() / initial,
            reached.map_or("never".into(), |i| (i + 1).to_string())
        ),
        files,
    }
}

fn chart_restoration(frames: usize, tag: &str) -> (Outcome, f64, f64, f64) {
    let (truth, seq, _) = chart_sequence(frames, 0.01);
    let out = restore(&seq, &SolverConfig::default()).unwrap();
    let restored = rmse(&out.image.clamp_values(0.0, 1.0), &truth).unwrap();
    let mean = rmse(&temporal_mean(&seq), &truth).unwrap();
    let best_frame = seq
        .iter()
        .map(|f| rmse(f, &truth).unwrap())
        .fold(f64::INFINITY, f64::min);
    let mut files = vec![
        (format!("{tag}_restored.bin"), image_bytes(&out.image)),
        (format!("{tag}_report.csv"), report_bytes(&out.report)),
    ];
    for (i, phi) in out.flows.iter().enumerate() {
        files.push((format!("{tag}_flow_{i:03}.tflw"), phi.to_bytes()));
    }
    let outcome = Outcome {
        pass: false,
        detail: String::new(),
        files,
    };
    (outcome, restored, mean, best_frame)
}

fn end_to_end_twenty() -> Outcome {
    let (mut o, restored, mean, best) = chart_restoration(20, "c5");
    let ratio = restored / mean;
    o.pass = ratio <= 0.7 && restored < best;
    o.detail = format!(
        "restored {restored:.4}, temporal mean {mean:.4} (ratio {ratio:.3}), best frame {best:.4}"
    );
    o
}

fn ten_frames() -> Outcome {
    let (mut o, restored, mean, _) = chart_restoration(10, "c6");
    o.pass = restored < mean;
    o.detail = format!("restored {restored:.4}, temporal mean {mean:.4}");
    o
}

fn flow_accuracy() -> Outcome {
    let params = FlowParams::default();
    let u = texture(64, 64, 7);
    let shift = FlowField::constant(64, 64, 2.0, 1.0);
    let est_shift = estimate_flow(&u, &apply_warp(&u, &shift).unwrap(), &params).unwrap();
    let margin = params.window_radius + 2;
    let e_shift = mean_endpoint_error(&est_shift, &shift, margin).unwrap();

    let wave = wave_flow(64, 64, 2.0, 16.0, [0.3, 1.2, 2.5, 4.0]).unwrap();
    let est_wave = estimate_flow(&u, &apply_warp(&u, &wave).unwrap(), &params).unwrap();
    let e_wave = mean_endpoint_error(&est_wave, &wave, margin).unwrap();
    Outcome {
        pass: e_shift <= 0.3 && e_wave <= 0.5,
        detail: format!("translation EPE {e_shift:.3}, wave EPE {e_wave:.3}"),
        files: vec![
            ("c7_shift.tflw".into(), est_shift.to_bytes()),
            ("c7_wave.tflw".into(), est_wave.to_bytes()),
        ],
    }
}

fn prox_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut worst_fixed: f64 = 0.0;
    let mut files = Vec::new();
    for trial in 0..50 {
        let w = rng.random_range(8..=24);
        let h = rng.random_range(8..=24);
        let params = NlParams {
            neighbors_kept: rng.random_range(1..=10),
            h: rng.random_range(0.05..0.5),
            ..NlParams::default()
        };
        let v = random_image(w, h, &mut rng);
        let guide = random_image(w, h, &mut rng);
        let g = compute_weights(if trial % 2 == 0 { &v } else { &guide }, &params).unwrap();
        let mu = 10f64.powf(rng.random_range(-2.0..3.0));
        let out = nltv_prox_traced(&v, &g, mu, &params, PROX_MAX_ITERS, PROX_TOL).unwrap();
        violations += out.energies.windows(2).filter(|p| p[1] > p[0]).count();
        files.push((format!("c8_prox_{trial:02}.bin"), image_bytes(&out.u)));

        let stiff = nltv_prox(&v, &g, 1e6, &params, PROX_MAX_ITERS, PROX_TOL).unwrap();
        let gap = stiff
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_fixed = worst_fixed.max(gap);
    }
    Outcome {
        pass: violations == 0 && worst_fixed <= 1e-3,
        detail: format!("energy increases {violations}, mu=1e6 max deviation {worst_fixed:.2e}"),
        files,
    }
}

fn sliding_window_tracking() -> Outcome {
    let params = SimParams {
        frames: 14,
        ..SimParams::default()
    };
    let (seq, centers) = moving_square_sequence(64, 64, (24.0, 26.0), (0.25, 0.15), 16.0, &params).unwrap();
    let (out, reports) = sliding_window_restore(&seq, 10, &SolverConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (frame, &(cx, cy)) in out.iter().zip(&centers) {
        worst = worst.max(match bright_centroid(frame, 0.5) {
            Some((x, y)) => (x - cx).hypot(y - cy),
            None => f64::INFINITY,
        });
    }
    let mut files: Vec<(String, Vec<u8>)> = out
        .iter()
        .enumerate()
        .map(|(i, f)| (format!("c9_frame_{i:03}.bin"), image_bytes(f)))
        .collect();
    for (i, r) in reports.iter().enumerate() {
        files.push((format!("c9_report_{i:03}.csv"), report_bytes(r)));
    }
    Outcome {
        pass: worst <= 2.0,
        detail: format!("worst centroid error {worst:.3} px over {} frames", out.len()),
        files,
    }
}

fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) {
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

fn determinism(first: &[(String, Vec<u8>)], reruns: &[Check]) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_files(a.path(), first);
    let second: Vec<_> = reruns.iter().flat_map(|c| c().files).collect();
    write_files(b.path(), &second);
    let mut differing = Vec::new();
    for (name, _) in first {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).ok();
        if y.as_deref() != Some(x.as_slice()) {
            differing.push(name.clone());
        }
    }
    let pass = differing.is_empty() && first.len() == second.len();
    Outcome::new(
        pass,
        format!("{} files compared, {} differ {:?}", first.len(), differing.len(), differing),
    )
}

fn main() {
    let criteria: [(&str, Check, Duration); 9] = [
        ("1 adjoint exactness", adjoint_exactness, Duration::from_secs(5)),
        ("2 spike-construction equivalence", spike_equivalence, Duration::from_secs(2)),
        ("3 gradient correctness", gradient_correctness, Duration::from_secs(10)),
        ("4 Bregman convergence with exact flows", bregman_exact_flows, Duration::from_secs(60)),
        ("5 end-to-end restoration, 20 frames", end_to_end_twenty, Duration::from_secs(180)),
        ("6 ten-frame viability", ten_frames, Duration::from_secs(90)),
        ("7 optical-flow accuracy", flow_accuracy, Duration::from_secs(30)),
        ("8 NLTV prox energy monotonicity", prox_monotonicity, Duration::from_secs(30)),
        ("9 sliding-window tracking", sliding_window_tracking, Duration::from_secs(240)),
    ];
    let mut failed = 0;
    let mut files = Vec::new();
    let report = |name: &str, o: &Outcome, took: Duration, budget: Option<Duration>| -> bool {
        let in_time = budget.map_or(true, |b| took < b);
        let pass = o.pass && in_time;
        let budget_note = budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        println!(
            "{} criterion {name}: {} [{:.1}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        pass
    };
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        if !report(name, &o, t.elapsed(), Some(*budget)) {
            failed += 1;
        }
        if i >= 3 {
            files.extend(o.files);
        }
    }
    let reruns: Vec<Check> = criteria[3..].iter().map(|c| c.1).collect();
    let t = Instant::now();
    let o = determinism(&files, &reruns);
    if !report("10 determinism", &o, t.elapsed(), None) {
        failed += 1;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

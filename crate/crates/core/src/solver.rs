//! The alternating restoration driver: flow re-estimation, forward–backward
//! splitting against Bregman-augmented targets, and the Bregman update.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{FlowEstimator, FlowParams};
use crate::image::{temporal_mean, FrameSequence, Image};
use crate::nltv::{compute_weights, nltv_energy, nltv_prox, NlGraph, NlParams};
use crate::warp::{apply_warp, fidelity, fidelity_gradient_and_residual, normal_operator_bound, FlowField};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Forward step size; `None` means `0.9 / N` for `N` frames.
    pub delta: Option<f64>,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub lambda_max: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Relative change of the Bregman residual that ends the inner loop.
    pub inner_tol: f64,
    /// Relative change of the total fidelity that ends the outer loop.
    pub outer_tol: f64,
    pub flow: FlowParams,
    pub nl: NlParams,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: None,
            lambda0: 0.5,
            lambda_growth: 1.5,
            lambda_max: 5.0,
            outer_iters: 5,
            inner_iters: 20,
            inner_tol: 1e-4,
            outer_tol: 1e-3,
            flow: FlowParams {
                translation_prior: RESTORE_TRANSLATION_PRIOR,
                ..FlowParams::default()
            },
            nl: NlParams::default(),
        }
    }
}

/// Flow translation prior used by restoration. The template `u` is only an
/// estimate (blurred early on, noisy throughout), so windows with little
/// structure are kept near the coarse-level flow instead of fitting noise.
pub const RESTORE_TRANSLATION_PRIOR: f64 = 0.3;

/// Iteration cap and tolerance of every prox solve.
pub const PROX_MAX_ITERS: usize = 30;
pub const PROX_TOL: f64 = 1e-4;

/// Power-method iterations behind the step-size safeguard.
const BOUND_ITERS: usize = 20;

/// `u` is kept inside this band between outer iterations.
const LOOSE_CLAMP: (f64, f64) = (-0.5, 1.5);

impl SolverConfig {
    /// Default config with `lambda_max` tied to a different `lambda0`.
    pub fn with_lambda0(lambda0: f64) -> Self {
        Self {
            lambda0,
            lambda_max: 10.0 * lambda0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("delta must be positive, got {d}")));
            }
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        if !(self.lambda_growth >= 1.0 && self.lambda_growth.is_finite()) {
            return Err(Error::invalid("lambda_growth must be >= 1"));
        }
        if !(self.lambda_max >= self.lambda0 && self.lambda_max.is_finite()) {
            return Err(Error::invalid("lambda_max must be >= lambda0"));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::invalid("outer_iters and inner_iters must be >= 1"));
        }
        if !(self.inner_tol >= 0.0) || !(self.outer_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be >= 0"));
        }
        self.flow.validate()?;
        self.nl.validate()
    }

    pub fn resolved_delta(&self, frames: usize) -> f64 {
        self.delta.unwrap_or(0.9 / frames as f64)
    }
}

/// Wall time of each stage of one outer iteration, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub flow: f64,
    pub graph: f64,
    pub inner: f64,
    pub bregman: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iter: usize,
    pub lambda: f64,
    /// Step size in force at the end of the inner loop.
    pub delta: f64,
    /// `Σ_i ‖Φ_i u − f_i‖²` after the inner loop.
    pub fidelity: f64,
    /// `Σ_i ‖Φ_i u − f̃_i‖²` against the targets the inner loop used.
    pub bregman_residual: f64,
    pub nltv_energy: f64,
    pub inner_iters: usize,
    pub delta_halvings: usize,
    pub mean_flow_mag: f64,
    pub seconds: f64,
    pub stages: StageTimes,
}

impl OuterRecord {
    /// Values in [`REPORT_COLUMNS`] order.
    pub fn csv_fields(&self) -> [String; 8] {
        [
            self.iter.to_string(),
            self.lambda.to_string(),
            self.fidelity.to_string(),
            self.bregman_residual.to_string(),
            self.nltv_energy.to_string(),
            self.inner_iters.to_string(),
            self.mean_flow_mag.to_string(),
            self.seconds.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RestoreReport {
    /// Total fidelity of the temporal mean under the first flows.
    pub initial_fidelity: f64,
    pub records: Vec<OuterRecord>,
    /// Whether the outer tolerance ended the loop early.
    pub converged: bool,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "iter",
    "lambda",
    "fidelity",
    "bregman_residual",
    "nltv_energy",
    "inner_iters",
    "mean_flow_mag",
    "seconds",
];

impl RestoreReport {
    pub fn final_fidelity(&self) -> Option<f64> {
        self.records.last().map(|r| r.fidelity)
    }

    /// Copy with every wall-clock field set to zero, for byte-stable output.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.seconds = 0.0;
            r.stages = StageTimes::default();
        }
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Manifest(format!("report csv: {e}"));
        w.write_record(REPORT_COLUMNS).map_err(err)?;
        for r in &self.records {
            w.write_record(r.csv_fields()).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Manifest(format!("report csv: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub image: Image,
    pub flows: Vec<FlowField>,
    pub report: RestoreReport,
}

/// Where the outer loop gets its deformations from.
#[derive(Clone, Copy)]
pub enum FlowSource<'a> {
    Estimate(&'a dyn FlowEstimator),
    Fixed(&'a [FlowField]),
}

pub fn restore(seq: &FrameSequence, cfg: &SolverConfig) -> Result<Restoration> {
    restore_with(seq, cfg, FlowSource::Estimate(&cfg.flow))
}

/// Restoration with the deformations held fixed (flow estimation disabled).
pub fn restore_with_flows(seq: &FrameSequence, flows: &[FlowField], cfg: &SolverConfig) -> Result<Restoration> {
    restore_with(seq, cfg, FlowSource::Fixed(flows))
}

fn ensure_finite(ok: bool, stage: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage.into() })
    }
}

pub fn restore_with(seq: &FrameSequence, cfg: &SolverConfig, source: FlowSource<'_>) -> Result<Restoration> {
    cfg.validate()?;
    if seq.len() < 2 {
        return Err(Error::CountMismatch {
            what: "restoration needs at least 2 frames",
            expected: 2,
            found: seq.len(),
        });
    }
    ensure_finite(seq.iter().all(Image::is_finite), "input frames")?;
    if let FlowSource::Fixed(flows) = source {
        if flows.len() != seq.len() {
            return Err(Error::CountMismatch {
                what: "flows per frame",
                expected: seq.len(),
                found: flows.len(),
            });
        }
        if let Some(f) = flows.iter().find(|f| f.dims() != seq.dims()) {
            return Err(Error::DimensionMismatch {
                expected: seq.dims(),
                found: f.dims(),
            });
        }
    }

    let mut u = temporal_mean(seq);
    let mut targets = seq.clone();
    let mut lambda = cfg.lambda0;
    let mut delta = cfg.resolved_delta(seq.len());
    let mut flows: Vec<FlowField> = Vec::new();
    let mut report = RestoreReport::default();
    let mut prev_fidelity = f64::NAN;

    for iter in 1..=cfg.outer_iters {
        let started = Instant::now();
        let mut stages = StageTimes::default();

        let t = Instant::now();
        flows = match source {
            FlowSource::Fixed(f) => f.to_vec(),
            FlowSource::Estimate(est) => seq
                .frames()
                .par_iter()
                .map(|f| est.estimate(&u, f))
                .collect::<Result<_>>()?,
        };
        ensure_finite(flows.iter().all(FlowField::is_finite), "flow estimation")?;
        if iter == 1 {
            report.initial_fidelity = fidelity(&u, &flows, seq)?;
            prev_fidelity = report.initial_fidelity;
        }
        // Keep the forward step contractive for the flows actually in use.
        let bound = normal_operator_bound(&flows, BOUND_ITERS)?;
        if delta * bound >= 2.0 {
            delta = 1.8 / bound;
        }
        stages.flow = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let graph = compute_weights(&u, &cfg.nl)?;
        stages.graph = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let inner = inner_splitting_loop(&u, &flows, &targets, &graph, lambda, delta, cfg)?;
        u = inner.u;
        delta = inner.delta;
        ensure_finite(u.is_finite(), "inner splitting loop")?;
        stages.inner = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let next_lambda = (lambda * cfg.lambda_growth).min(cfg.lambda_max);
        // Bregman update `f̃ ← f̃ + f − Φu`, written for a changing λ: the
        // accumulated part is a subgradient divided by λ, so it is rescaled
        // by λ_k/λ_{k+1}. With constant λ this is the plain add-back.
        let carry = lambda / next_lambda;
        let bregman_residual = *inner.residuals.last().expect("seeded");
        let mut updated = Vec::with_capacity(seq.len());
        let mut total = 0.0;
        for ((f, ft), phi) in seq.iter().zip(targets.iter()).zip(&flows) {
            let warped = apply_warp(&u, phi)?;
            let mut next = ft.clone();
            for ((n, &fv), &wv) in next.data_mut().iter_mut().zip(f.data()).zip(warped.data()) {
                let r = fv - wv;
                total += r * r;
                *n = fv + carry * (*n - wv);
            }
            updated.push(next);
        }
        targets = FrameSequence::new(updated)?;
        ensure_finite(total.is_finite(), "bregman update")?;
        stages.bregman = t.elapsed().as_secs_f64();

        let energy = nltv_energy(&u, &graph, cfg.nl.sqrt_epsilon)?;
        let mean_flow_mag = flows.iter().map(FlowField::mean_magnitude).sum::<f64>() / flows.len() as f64;
        report.records.push(OuterRecord {
            iter,
            lambda,
            delta,
            fidelity: total,
            bregman_residual,
            nltv_energy: energy,
            inner_iters: inner.iterations,
            delta_halvings: inner.delta_halvings,
            mean_flow_mag,
            seconds: started.elapsed().as_secs_f64(),
            stages,
        });

        u = u.clamp_values(LOOSE_CLAMP.0, LOOSE_CLAMP.1);
        lambda = next_lambda;

        let rel = if prev_fidelity > 0.0 {
            (prev_fidelity - total).abs() / prev_fidelity
        } else {
            0.0
        };
        prev_fidelity = total;
        if rel < cfg.outer_tol {
            report.converged = true;
            break;
        }
    }
    Ok(Restoration {
        image: u,
        flows,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub u: Image,
    /// Bregman residual of the start point and of every accepted step.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub delta: f64,
    pub delta_halvings: usize,
}

/// Halvings allowed per inner loop before a step is accepted regardless.
const MAX_HALVINGS: usize = 30;

/// Forward–backward splitting on `J(u) + (λ/2) Σ_i ‖Φ_i u − f̃_i‖²`:
/// `v = u − δ Σ Φᵀ(Φu − f̃)`, then the NLTV prox with weight `λ/δ`.
///
/// A step that raises the residual by more than 10 % is discarded and `δ`
/// halved for the rest of the loop.
pub fn inner_splitting_loop(
    u: &Image,
    flows: &[FlowField],
    targets: &FrameSequence,
    graph: &NlGraph,
    lambda: f64,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<InnerOutcome> {
    if !(lambda > 0.0 && delta > 0.0) {
        return Err(Error::invalid("lambda and delta must be positive"));
    }
    let (mut grad, mut res) = fidelity_gradient_and_residual(u, flows, targets)?;
    let mut out = InnerOutcome {
        u: u.clone(),
        residuals: vec![res],
        iterations: 0,
        delta,
        delta_halvings: 0,
    };
    while out.iterations < cfg.inner_iters {
        let d = out.delta;
        let v = out.u.zip_map(&grad, |a, g| a - d * g)?;
        let cand = nltv_prox(&v, graph, lambda / d, &cfg.nl, PROX_MAX_ITERS, PROX_TOL)?;
        let (next_grad, next_res) = fidelity_gradient_and_residual(&cand, flows, targets)?;
        ensure_finite(next_res.is_finite(), "inner splitting loop")?;
        if next_res > 1.1 * res && out.delta_halvings < MAX_HALVINGS {
            out.delta *= 0.5;
            out.delta_halvings += 1;
            continue;
        }
        let rel = if res > 0.0 { (res - next_res).abs() / res } else { 0.0 };
        out.u = cand;
        grad = next_grad;
        res = next_res;
        out.residuals.push(res);
        out.iterations += 1;
        if rel < cfg.inner_tol {
            break;
        }
    }
    Ok(out)
}

pub const DEFAULT_WINDOW: usize = 10;

/// Restores every frame `j ≥ window − 1` from frames `[j − window + 1, j]`.
/// Frames before the first full window repeat the first result. Reports are
/// returned per computed window, in order.
pub fn sliding_window_restore(
    seq: &FrameSequence,
    window: usize,
    cfg: &SolverConfig,
) -> Result<(FrameSequence, Vec<RestoreReport>)> {
    if window < 2 {
        return Err(Error::invalid(format!("window must be >= 2, got {window}")));
    }
    if seq.len() < window {
        return Err(Error::CountMismatch {
            what: "sequence shorter than window",
            expected: window,
            found: seq.len(),
        });
    }
    let results: Vec<Restoration> = (window - 1..seq.len())
        .into_par_iter()
        .map(|j| restore(&seq.window(j + 1 - window, j + 1)?, cfg))
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(seq.len());
    for _ in 0..window - 1 {
        frames.push(results[0].image.clone());
    }
    frames.extend(results.iter().map(|r| r.image.clone()));
    let reports = results.into_iter().map(|r| r.report).collect();
    Ok((FrameSequence::new(frames)?, reports))
}

/// `‖f_i − restored‖₂` for every frame.
pub fn frame_quality_check(seq: &FrameSequence, restored: &Image) -> Result<Vec<f64>> {
    seq.iter()
        .map(|f| Ok(f.zip_map(restored, |a, b| a - b)?.norm()))
        .collect()
}

//! Synthetic turbulence: distorted frame sequences with known deformations.
//!
//! Frame `i` is `apply_warp(truth, φ_i)` plus white Gaussian noise. All
//! randomness comes from a ChaCha stream keyed by `(phase_seed, i)`, so each
//! frame is reproducible on its own and frames can be generated in parallel.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{gaussian_downsample, upsample_to, FrameSequence, Image};
use crate::warp::{apply_warp, FlowField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Product-of-sinusoids displacement with random phases per frame.
    Wave,
    /// Smoothed white noise; `wavelength` is used as the correlation length.
    SmoothRandom,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::Wave => "wave",
            SimMode::SmoothRandom => "random",
        }
    }
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave" => Ok(SimMode::Wave),
            "random" | "smooth-random" => Ok(SimMode::SmoothRandom),
            other => Err(Error::invalid(format!("unknown simulation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Peak displacement in pixels.
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase_seed: u64,
    pub noise_sigma: f64,
    pub frames: usize,
    pub mode: SimMode,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            wavelength: 16.0,
            phase_seed: 0,
            noise_sigma: 0.01,
            frames: 20,
            mode: SimMode::Wave,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude must be finite and >= 0"));
        }
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(Error::invalid("wavelength must be finite and > 0"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames must be >= 1"));
        }
        if self.mode == SimMode::SmoothRandom && self.wavelength < 1.0 {
            return Err(Error::invalid("correlation length must be >= 1"));
        }
        Ok(())
    }
}

/// `dx = A sin(2πy/λ + p1) cos(2πx/λ + p2)`, `dy = A sin(2πx/λ + p3) cos(2πy/λ + p4)`.
pub fn wave_flow(
    width: usize,
    height: usize,
    amplitude: f64,
    wavelength: f64,
    phases: [f64; 4],
) -> Result<FlowField> {
    if !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be > 0"));
    }
    let k = TAU / wavelength;
    let [p1, p2, p3, p4] = phases;
    Ok(FlowField::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        (
            amplitude * (k * yf + p1).sin() * (k * xf + p2).cos(),
            amplitude * (k * xf + p3).sin() * (k * yf + p4).cos(),
        )
    }))
}

/// White Gaussian displacements low-passed by repeated pyramid reduction and
/// re-expansion (about `log2(correlation_length)` octaves), then scaled so
/// the 95th-percentile magnitude equals `amplitude`.
pub fn smooth_random_flow(
    width: usize,
    height: usize,
    amplitude: f64,
    correlation_length: f64,
    seed: u64,
) -> Result<FlowField> {
    if !(correlation_length >= 1.0) {
        return Err(Error::invalid("correlation length must be >= 1"));
    }
    if amplitude == 0.0 {
        return Ok(FlowField::zeros(width, height));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || {
        let data: Vec<f64> = (0..width * height)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Image::from_raw(width, height, data)
    };
    let (nx, ny) = (noise(), noise());
    let octaves = correlation_length.log2().round() as usize;
    let dx = lowpass(nx, octaves)?;
    let dy = lowpass(ny, octaves)?;

    let mut mags: Vec<f64> = dx
        .data()
        .iter()
        .zip(dy.data())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    mags.sort_by(f64::total_cmp);
    let p95 = percentile_sorted(&mags, 0.95);
    let scale = if p95 > 0.0 { amplitude / p95 } else { 0.0 };
    FlowField::from_components(dx.map(|v| v * scale), dy.map(|v| v * scale))
}

/// Nearest-rank percentile of ascending data.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn lowpass(img: Image, octaves: usize) -> Result<Image> {
    let mut levels = vec![img];
    for _ in 0..octaves {
        let last = levels.last().unwrap();
        if last.width() < 2 || last.height() < 2 {
            break;
        }
        let next = gaussian_downsample(last)?;
        levels.push(next);
    }
    let mut cur = levels.pop().unwrap();
    while let Some(finer) = levels.pop() {
        cur = upsample_to(&cur, finer.width(), finer.height());
    }
    Ok(cur)
}

fn frame_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Deformation of frame `index` under `params`.
pub fn frame_flow(width: usize, height: usize, params: &SimParams, index: usize) -> Result<FlowField> {
    let mut rng = frame_rng(params.phase_seed, index);
    frame_flow_from(&mut rng, width, height, params)
}

fn frame_flow_from(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    params: &SimParams,
) -> Result<FlowField> {
    match params.mode {
        SimMode::Wave => {
            let phases: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() * TAU);
            wave_flow(width, height, params.amplitude, params.wavelength, phases)
        }
        SimMode::SmoothRandom => {
            let seed = rng.random::<u64>();
            smooth_random_flow(width, height, params.amplitude, params.wavelength, seed)
        }
    }
}

/// Warps `truth` by per-frame deformations and adds noise after warping.
pub fn generate_sequence(truth: &Image, params: &SimParams) -> Result<(FrameSequence, Vec<FlowField>)> {
    params.validate()?;
    let (w, h) = truth.dims();
    let pairs: Vec<(Image, FlowField)> = (0..params.frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = frame_rng(params.phase_seed, i);
            let phi = frame_flow_from(&mut rng, w, h, params)?;
            let mut frame = apply_warp(truth, &phi)?;
            add_noise(&mut frame, params.noise_sigma, &mut rng);
            Ok((frame, phi))
        })
        .collect::<Result<_>>()?;
    let (frames, flows): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((FrameSequence::new(frames)?, flows))
}

fn add_noise(img: &mut Image, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for v in img.data_mut() {
        *v += normal.sample(rng);
    }
}

const DARK: f64 = 0.1;
const BRIGHT: f64 = 0.9;

/// Synthetic resolution chart: vertical bar groups of decreasing period
/// across the top half, horizontal bars bottom-left, a disk and a square
/// bottom-right. Intensities are 0.1 / 0.9.
pub fn resolution_chart(width: usize, height: usize) -> Image {
    let (wf, hf) = (width as f64, height as f64);
    Image::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let on = if yf < 0.5 * hf {
            // Top: three groups with periods 16, 10, 6 (scaled for 64 px).
            let s = wf / 64.0;
            let (period, x0) = if xf < wf / 3.0 {
                (16.0 * s, 0.0)
            } else if xf < 2.0 * wf / 3.0 {
                (10.0 * s, wf / 3.0)
            } else {
                (6.0 * s, 2.0 * wf / 3.0)
            };
            let inset = yf > 0.08 * hf && yf < 0.42 * hf;
            inset && ((xf - x0) / period).fract() < 0.5
        } else if xf < 0.5 * wf {
            let period = 8.0 * hf / 64.0;
            xf > 0.08 * wf && xf < 0.42 * wf && ((yf - 0.5 * hf) / period).fract() < 0.5
        } else {
            let (cx, cy, r) = (0.75 * wf, 0.64 * hf, 0.11 * hf);
            let disk = (xf - cx).powi(2) + (yf - cy).powi(2) < r * r;
            let square = xf > 0.6 * wf && xf < 0.9 * wf && yf > 0.8 * hf && yf < 0.92 * hf;
            disk || square
        };
        if on {
            BRIGHT
        } else {
            DARK
        }
    })
}

/// Flat background with an axis-aligned bright square whose edges are
/// antialiased by exact area coverage, so sub-pixel positions render
/// faithfully. `center` is in pixel coordinates.
pub fn square_scene(
    width: usize,
    height: usize,
    center: (f64, f64),
    side: f64,
    background: f64,
    foreground: f64,
) -> Image {
    let half = 0.5 * side;
    let cover = |p: f64, c: f64| {
        let lo = (p - 0.5).max(c - half);
        let hi = (p + 0.5).min(c + half);
        (hi - lo).max(0.0)
    };
    Image::from_fn(width, height, |x, y| {
        let a = cover(x as f64, center.0) * cover(y as f64, center.1);
        background + (foreground - background) * a
    })
}

/// A square translating at `velocity` px/frame under per-frame turbulence.
/// Returns the frames and the true square centre at each frame.
pub fn moving_square_sequence(
    width: usize,
    height: usize,
    start: (f64, f64),
    velocity: (f64, f64),
    side: f64,
    params: &SimParams,
) -> Result<(FrameSequence, Vec<(f64, f64)>)> {
    params.validate()?;
    let centers: Vec<(f64, f64)> = (0..params.frames)
        .map(|i| (start.0 + velocity.0 * i as f64, start.1 + velocity.1 * i as f64))
        .collect();
    let frames: Vec<Image> = centers
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let truth = square_scene(width, height, c, side, 0.2, 0.8);
            let mut rng = frame_rng(params.phase_seed, i);
            let phi = frame_flow_from(&mut rng, width, height, params)?;
            let mut frame = apply_warp(&truth, &phi)?;
            add_noise(&mut frame, params.noise_sigma, &mut rng);
            Ok(frame)
        })
        .collect::<Result<_>>()?;
    Ok((FrameSequence::new(frames)?, centers))
}

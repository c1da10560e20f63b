//! Backward warp `Φu = u(x + d(x))`, its exact transpose, and the gradient
//! of the multi-frame least-squares fidelity.
//!
//! The transpose is computed by splatting: each residual pixel deposits its
//! value on the same four source pixels (with the same bilinear weights) that
//! [`apply_warp`] reads for it. Weights are derived from the clamped source
//! coordinate in both directions, so `⟨Φu, r⟩ = ⟨u, Φᵀr⟩` holds to rounding
//! even where the flow points off-grid.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{bilinear_footprint, FrameSequence, Image};

/// Per-pixel displacement: output pixel `(x, y)` reads the source image at
/// `(x + dx, y + dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall(format!("{width}x{height} flow")));
        }
        for comp in [&dx, &dy] {
            if comp.len() != width * height {
                return Err(Error::CountMismatch {
                    what: "flow samples",
                    expected: width * height,
                    found: comp.len(),
                });
            }
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "flow construction".into(),
            });
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Self {
        debug_assert!(dx.len() == width * height && dy.len() == width * height);
        Self {
            width,
            height,
            dx,
            dy,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_raw(width, height, vec![0.0; width * height], vec![0.0; width * height])
    }

    /// Same displacement everywhere.
    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self::from_raw(width, height, vec![dx; width * height], vec![dy; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                dx.push(a);
                dy.push(b);
            }
        }
        Self::from_raw(width, height, dx, dy)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Components as images (useful for pyramids and resampling).
    pub fn components(&self) -> (Image, Image) {
        (
            Image::from_raw(self.width, self.height, self.dx.clone()),
            Image::from_raw(self.width, self.height, self.dy.clone()),
        )
    }

    pub fn from_components(dx: Image, dy: Image) -> Result<Self> {
        dx.check_same_dims(&dy)?;
        let (w, h) = dx.dims();
        Ok(Self::from_raw(w, h, dx.into_vec(), dy.into_vec()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.dx.iter().map(|v| v * s).collect(),
            self.dy.iter().map(|v| v * s).collect(),
        )
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.dx.iter().zip(&self.dy).map(|(a, b)| a.hypot(*b))
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().sum::<f64>() / self.dx.len() as f64
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| v.is_finite())
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: img.dims(),
            });
        }
        Ok(())
    }

    /// Serializes as `TFLW`, u32 width, u32 height, then `dx` and `dy` as
    /// little-endian `f64`, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 16 * self.dx.len());
        out.extend_from_slice(b"TFLW");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in self.dx.iter().chain(&self.dy) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != b"TFLW" {
            return Err(Error::FlowFormat("missing TFLW magic".into()));
        }
        let w = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let n = w * h;
        let want = 12 + 16 * n;
        if buf.len() != want {
            return Err(Error::FlowFormat(format!(
                "{w}x{h} flow needs {want} bytes, file has {}",
                buf.len()
            )));
        }
        let mut vals = buf[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let dx: Vec<f64> = vals.by_ref().take(n).collect();
        let dy: Vec<f64> = vals.collect();
        Self::new(w, h, dx, dy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

pub fn flow_file_name(i: usize) -> String {
    format!("flow_{i:04}.tflw")
}

/// Writes `flow_0000.tflw, flow_0001.tflw, ...` into `dir` (created if
/// needed).
pub fn save_flows_dir(flows: &[FlowField], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in flows.iter().enumerate() {
        f.save(dir.join(flow_file_name(i)))?;
    }
    Ok(())
}

/// Loads every `.tflw` file of `dir` in lexical order.
pub fn load_flows_dir(dir: impl AsRef<Path>) -> Result<Vec<FlowField>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "tflw"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::BadFile {
            path: dir.to_path_buf(),
            reason: "no .tflw flow files found".into(),
        });
    }
    paths.iter().map(FlowField::load).collect()
}

/// `out(x, y) = u(x + dx, y + dy)` with bilinear interpolation.
pub fn apply_warp(u: &Image, flow: &FlowField) -> Result<Image> {
    flow.check_image(u)?;
    let (w, h) = flow.dims();
    let src = u.data();
    let mut out = vec![0.0; w * h];
    for (i, o) in out.iter_mut().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        *o = bilinear_footprint(w, h, x + flow.dx[i], y + flow.dy[i])
            .iter()
            .map(|&(j, wt)| wt * src[j])
            .sum();
    }
    Ok(Image::from_raw(w, h, out))
}

/// Transpose of [`apply_warp`] for a fixed flow (bilinear splatting).
pub fn apply_adjoint(r: &Image, flow: &FlowField) -> Result<Image> {
    flow.check_image(r)?;
    let (w, h) = flow.dims();
    let mut out = vec![0.0; w * h];
    for (i, &v) in r.data().iter().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        for (j, wt) in bilinear_footprint(w, h, x + flow.dx[i], y + flow.dy[i]) {
            out[j] += wt * v;
        }
    }
    Ok(Image::from_raw(w, h, out))
}

fn check_frames(u: &Image, flows: &[FlowField], targets: &FrameSequence) -> Result<()> {
    if flows.len() != targets.len() {
        return Err(Error::CountMismatch {
            what: "flows vs frames",
            expected: targets.len(),
            found: flows.len(),
        });
    }
    u.check_same_dims(&targets.frames()[0])?;
    Ok(())
}

/// Residuals `Φ_i u − f_i` for every frame, computed in parallel.
pub fn residuals(u: &Image, flows: &[FlowField], targets: &FrameSequence) -> Result<Vec<Image>> {
    check_frames(u, flows, targets)?;
    flows
        .par_iter()
        .zip(targets.frames().par_iter())
        .map(|(phi, f)| {
            let mut r = apply_warp(u, phi)?;
            for (a, b) in r.data_mut().iter_mut().zip(f.data()) {
                *a -= b;
            }
            Ok(r)
        })
        .collect()
}

/// `Σ_i ‖Φ_i u − f_i‖²`.
pub fn fidelity(u: &Image, flows: &[FlowField], targets: &FrameSequence) -> Result<f64> {
    Ok(residuals(u, flows, targets)?
        .iter()
        .map(Image::norm_sq)
        .sum())
}

/// Gradient of `½ Σ_i ‖Φ_i u − f_i‖²`, i.e. `Σ_i Φ_iᵀ(Φ_i u − f_i)`.
///
/// Per-frame terms run in parallel; the sum is taken in frame order so the
/// result is bit-reproducible.
pub fn fidelity_gradient(u: &Image, flows: &[FlowField], targets: &FrameSequence) -> Result<Image> {
    Ok(fidelity_gradient_and_residual(u, flows, targets)?.0)
}

/// The gradient together with `Σ_i ‖Φ_i u − f_i‖²`, sharing the warps.
pub fn fidelity_gradient_and_residual(
    u: &Image,
    flows: &[FlowField],
    targets: &FrameSequence,
) -> Result<(Image, f64)> {
    let res = residuals(u, flows, targets)?;
    let terms: Vec<Image> = res
        .par_iter()
        .zip(flows.par_iter())
        .map(|(r, phi)| apply_adjoint(r, phi))
        .collect::<Result<_>>()?;
    let (w, h) = u.dims();
    let mut grad = vec![0.0; w * h];
    for t in &terms {
        for (g, v) in grad.iter_mut().zip(t.data()) {
            *g += v;
        }
    }
    let energy = res.iter().map(Image::norm_sq).sum();
    Ok((Image::from_raw(w, h, grad), energy))
}

/// Power-method estimate of the largest eigenvalue of `Σ_i Φ_iᵀ Φ_i`.
///
/// The forward step `u − δ Σ Φᵀ(Φu − f)` is non-expansive when
/// `δ · bound < 2`.
pub fn normal_operator_bound(flows: &[FlowField], iterations: usize) -> Result<f64> {
    let first = flows.first().ok_or(Error::Empty("flow list"))?;
    let (w, h) = first.dims();
    // Deterministic, non-degenerate start vector.
    let mut v = Image::from_fn(w, h, |x, y| 1.0 + 0.5 * (((x * 31 + y * 17) % 13) as f64 / 13.0));
    let n0 = v.norm();
    v = v.map(|a| a / n0);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let mut acc = vec![0.0; w * h];
        let terms: Vec<Image> = flows
            .par_iter()
            .map(|phi| apply_adjoint(&apply_warp(&v, phi)?, phi))
            .collect::<Result<_>>()?;
        for t in &terms {
            for (a, b) in acc.iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let next = Image::from_raw(w, h, acc);
        lambda = next.dot(&v);
        let norm = next.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = next.map(|a| a / norm);
    }
    Ok(lambda)
}

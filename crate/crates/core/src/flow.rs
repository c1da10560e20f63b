//! Dense pyramidal Lucas–Kanade estimation of the deformation `φ` with
//! `u(x + d(x)) ≈ f(x)`.
//!
//! Every pixel carries its own displacement and is tracked independently:
//! a tent-weighted window around it is matched against `u` sampled at the
//! displaced positions, and Gauss–Newton steps on the linearized residual
//! `f − u(x + d)` refine the window's motion. Levels run coarse to fine.

use nalgebra::{SMatrix, SVector};

/// Translation, affine part and quadratic part of the window displacement.
const NP: usize = 12;
type Mat = SMatrix<f64, NP, NP>;
type Vecn = SVector<f64, NP>;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{gaussian_downsample, upsample_to, Image};
use crate::warp::FlowField;

/// Knobs of the pyramidal estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    /// Half-width of the square integration window.
    pub window_radius: usize,
    pub iterations_per_level: usize,
    /// Windows whose mean structure tensor has a smaller minimum eigenvalue
    /// keep their incoming displacement.
    pub min_eigen_threshold: f64,
    /// Weight of a penalty on each window's translation change at a level,
    /// in units of the level's mean squared gradient. Zero is plain
    /// Lucas–Kanade; positive values keep weakly structured windows near
    /// the coarser estimate.
    pub translation_prior: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            window_radius: 4,
            iterations_per_level: 10,
            min_eigen_threshold: 1e-6,
            translation_prior: 0.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 || self.window_radius == 0 || self.iterations_per_level == 0 {
            return Err(Error::invalid(
                "pyramid_levels, window_radius and iterations_per_level must be >= 1",
            ));
        }
        if !(self.min_eigen_threshold >= 0.0) {
            return Err(Error::invalid("min_eigen_threshold must be >= 0"));
        }
        if !(self.translation_prior >= 0.0 && self.translation_prior.is_finite()) {
            return Err(Error::invalid("translation_prior must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Anything that can register `u` onto `f`.
pub trait FlowEstimator: Sync {
    fn estimate(&self, u: &Image, f: &Image) -> Result<FlowField>;
}

impl FlowEstimator for FlowParams {
    fn estimate(&self, u: &Image, f: &Image) -> Result<FlowField> {
        estimate_flow(u, f, self)
    }
}

/// Level 0 is `img`; level `k+1` is the Gaussian downsample of level `k`.
pub fn build_pyramid(img: &Image, levels: usize) -> Result<Vec<Image>> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for k in 1..levels {
        let next = gaussian_downsample(&out[k - 1]).map_err(|_| {
            Error::TooSmall(format!(
                "{}x{} image cannot hold {levels} pyramid levels",
                img.width(),
                img.height()
            ))
        })?;
        out.push(next);
    }
    Ok(out)
}

pub fn estimate_flow(u: &Image, f: &Image, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    u.check_same_dims(f)?;
    let need = 1usize << (params.pyramid_levels - 1);
    if u.width() < need || u.height() < need {
        return Err(Error::TooSmall(format!(
            "{}x{} image is smaller than {need} px required by {} levels",
            u.width(),
            u.height(),
            params.pyramid_levels
        )));
    }
    let pu = build_pyramid(u, params.pyramid_levels)?;
    let pf = build_pyramid(f, params.pyramid_levels)?;

    let mut flow: Option<FlowField> = None;
    for level in (0..params.pyramid_levels).rev() {
        let (w, h) = pu[level].dims();
        let init = match flow.take() {
            None => FlowField::zeros(w, h),
            Some(coarse) => upsample_flow(&coarse, w, h),
        };
        flow = Some(refine_level(&pu[level], &pf[level], init, params, model_for(level))?);
    }
    Ok(flow.expect("at least one level"))
}

/// Doubles displacements and interpolates them onto the finer grid.
fn upsample_flow(coarse: &FlowField, w: usize, h: usize) -> FlowField {
    let (cx, cy) = coarse.components();
    let dx = upsample_to(&cx, w, h).map(|v| 2.0 * v);
    let dy = upsample_to(&cy, w, h).map(|v| 2.0 * v);
    FlowField::from_raw(w, h, dx.into_vec(), dy.into_vec())
}

/// Window motion model used at a pyramid level: the finest level fits a
/// quadratic displacement, the next an affine one, coarser levels a pure
/// translation. Coarse levels are aliased for short-wavelength motion, so
/// richer models there only fit noise.
fn model_for(level: usize) -> Model {
    match level {
        0 => Model::Quadratic,
        1 => Model::Affine,
        _ => Model::Translation,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Model {
    Translation,
    Affine,
    Quadratic,
}

impl Model {
    fn uses(self, k: usize) -> bool {
        match self {
            Model::Translation => k < 2,
            Model::Affine => k < 6,
            Model::Quadratic => true,
        }
    }
}

fn refine_level(u: &Image, f: &Image, flow: FlowField, params: &FlowParams, model: Model) -> Result<FlowField> {
    let (w, h) = u.dims();
    let (gx, gy) = central_gradients(u);
    let (gx, gy) = (Image::from_raw(w, h, gx), Image::from_raw(w, h, gy));
    let (fx, fy) = flow.components();
    let (jxx, jxy) = central_gradients(&fx);
    let (jyx, jyy) = central_gradients(&fy);
    let weights = tent_weights(params.window_radius);
    let mean_sq_grad = gx.norm_sq() / (w * h) as f64 + gy.norm_sq() / (w * h) as f64;
    let anchor = params.translation_prior * mean_sq_grad;
    let solved: Vec<(f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut start = [0.0; NP];
            start[0] = fx.data()[i];
            start[1] = fy.data()[i];
            if model.uses(2) {
                start[2..6].copy_from_slice(&[jxx[i], jxy[i], jyx[i], jyy[i]]);
            }
            let win = Window {
                u,
                f,
                gx: &gx,
                gy: &gy,
                x: i % w,
                y: i / w,
                weights: &weights,
                model,
            };
            track_pixel(&win, start, anchor, params)
        })
        .collect();
    let (dx, dy) = solved.into_iter().unzip();
    Ok(FlowField::from_raw(w, h, dx, dy))
}

fn tent_weights(r: usize) -> Vec<f64> {
    (0..=2 * r)
        .map(|k| (r + 1) as f64 - (k as f64 - r as f64).abs())
        .collect()
}

/// Ridge on the strain parameters, relative to the mean structure tensor.
const STRAIN_RIDGE: f64 = 1e-3;

/// One tracking window: the images, its centre and the motion model.
struct Window<'a> {
    u: &'a Image,
    f: &'a Image,
    gx: &'a Image,
    gy: &'a Image,
    x: usize,
    y: usize,
    weights: &'a [f64],
    model: Model,
}

impl Window<'_> {
    fn radius(&self) -> isize {
        (self.weights.len() / 2) as isize
    }

    /// Visits in-grid window pixels with their weight, offset and the
    /// sample position under `p`.
    fn for_each(&self, p: &Vecn, mut visit: impl FnMut(f64, f64, f64, f64, f64, usize, usize)) {
        let (w, h) = self.u.dims();
        let r = self.radius();
        for j in -r..=r {
            let yy = self.y as isize + j;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            for i in -r..=r {
                let xx = self.x as isize + i;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                let (ox, oy) = (i as f64, j as f64);
                let (qa, qb, qc) = (0.5 * ox * ox, ox * oy, 0.5 * oy * oy);
                let sx = xx as f64 + p[0] + p[2] * ox + p[3] * oy + p[6] * qa + p[7] * qb + p[8] * qc;
                let sy = yy as f64 + p[1] + p[4] * ox + p[5] * oy + p[9] * qa + p[10] * qb + p[11] * qc;
                let wt = self.weights[(j + r) as usize] * self.weights[(i + r) as usize];
                visit(wt, ox, oy, sx, sy, xx as usize, yy as usize);
            }
        }
    }

    /// Weighted mean squared residual `f − u(x + d)` over the window.
    fn mse(&self, p: &Vecn) -> f64 {
        let (mut s, mut ws) = (0.0, 0.0);
        self.for_each(p, |wt, _, _, sx, sy, xx, yy| {
            let e = self.f.get(xx, yy) - self.u.bilinear_sample(sx, sy);
            s += wt * e * e;
            ws += wt;
        });
        if ws > 0.0 {
            s / ws
        } else {
            0.0
        }
    }

    /// Gauss–Newton iterations from `start`. The translation carries a
    /// quadratic penalty `anchor·|t − t_start|²`.
    fn solve(&self, start: &Vecn, anchor: f64, params: &FlowParams) -> Vecn {
        let (w, h) = self.u.dims();
        let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
        let mut p = *start;
        for _ in 0..params.iterations_per_level {
            let mut hess = Mat::zeros();
            let mut rhs = Vecn::zeros();
            let mut wsum = 0.0;
            self.for_each(&p, |wt, ox, oy, sx, sy, xx, yy| {
                // Samples read from off the grid carry no motion information.
                if sx < 0.0 || sy < 0.0 || sx > wmax || sy > hmax {
                    return;
                }
                let (qa, qb, qc) = (0.5 * ox * ox, ox * oy, 0.5 * oy * oy);
                let e = self.f.get(xx, yy) - self.u.bilinear_sample(sx, sy);
                let (a, b) = (self.gx.bilinear_sample(sx, sy), self.gy.bilinear_sample(sx, sy));
                let full = [a, b, a * ox, a * oy, b * ox, b * oy, a * qa, a * qb, a * qc, b * qa, b * qb, b * qc];
                let jac = Vecn::from_fn(|k, _| if self.model.uses(k) { full[k] } else { 0.0 });
                hess.syger(wt, &jac, &jac, 1.0);
                rhs.axpy(wt * e, &jac, 1.0);
                wsum += wt;
            });
            if wsum == 0.0 {
                break;
            }
            hess.fill_upper_triangle_with_lower_triangle();
            hess /= wsum;
            rhs /= wsum;
            let (a, b, c) = (hess[(0, 0)], hess[(0, 1)], hess[(1, 1)]);
            let min_eig = 0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt();
            if !(min_eig > params.min_eigen_threshold) {
                break;
            }
            let ridge = STRAIN_RIDGE * 0.5 * (a + c);
            for k in 2..NP {
                hess[(k, k)] += ridge;
            }
            for k in 0..2 {
                hess[(k, k)] += anchor;
                rhs[k] -= anchor * (p[k] - start[k]);
            }
            let Some(step) = hess.cholesky().map(|ch| ch.solve(&rhs)) else {
                break;
            };
            if step.iter().any(|v| !v.is_finite()) {
                break;
            }
            let (sx, sy) = (step[0].clamp(-1.0, 1.0), step[1].clamp(-1.0, 1.0));
            p[0] += sx;
            p[1] += sy;
            for k in 2..NP {
                p[k] += step[k].clamp(-0.5, 0.5);
            }
            if sx.abs().max(sy.abs()) < 1e-3 {
                break;
            }
        }
        p
    }
}

/// Tracks one pixel and returns its translation.
///
/// Inside the window the displacement is a polynomial in the offset `o` from
/// the centre, `d(x + o) = t + A·o + ½Q(o, o)`; only `t` is reported. Terms
/// the level's model does not use stay at their start value. `start` holds
/// `[t_x, t_y, A_xx, A_xy, A_yx, A_yy]` followed by the six quadratic terms.
fn track_pixel(win: &Window<'_>, start: [f64; NP], anchor: f64, params: &FlowParams) -> (f64, f64) {
    let (w, h) = win.u.dims();
    let start = Vecn::from_row_slice(&start);
    let mut p = win.solve(&start, anchor, params);
    if !(win.mse(&p) <= win.mse(&start)) {
        p = start;
    }
    // The warp clamps sample positions, so anything beyond the grid is
    // equivalent to the border.
    let tx = (win.x as f64 + p[0]).clamp(0.0, (w - 1) as f64) - win.x as f64;
    let ty = (win.y as f64 + p[1]).clamp(0.0, (h - 1) as f64) - win.y as f64;
    (tx, ty)
}

/// Central differences with replicated borders.
fn central_gradients(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1));
        }
    }
    (gx, gy)
}

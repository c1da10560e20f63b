//! Dense scalar images, bilinear sampling, pyramids and temporal statistics.
//!
//! Intensities are `f64` with a nominal range of `[0, 1]`; quantization only
//! happens in [`crate::pgm`]. Sampling outside the grid replicates the border.

use crate::error::{Error, Result};

/// Row-major grid of finite scalar intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from row-major samples, rejecting bad sizes and
    /// non-finite values.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall(format!("{width}x{height} image")));
        }
        if data.len() != width * height {
            return Err(Error::CountMismatch {
                what: "image samples",
                expected: width * height,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "image construction".into(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Caller guarantees the length and finiteness invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self::from_raw(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Evaluates `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_raw(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel value with coordinates clamped into the grid.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn bilinear_sample(&self, x: f64, y: f64) -> f64 {
        bilinear_footprint(self.width, self.height, x, y)
            .iter()
            .map(|&(idx, w)| w * self.data[idx])
            .sum()
    }

    /// Exact partial derivatives of the bilinear interpolant at `(x, y)`
    /// (one-sided on cell edges; zero along an axis where the coordinate is
    /// clamped).
    pub fn bilinear_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, h) = self.dims();
        let (x0, x1, fx) = axis_cell(w, x);
        let (y0, y1, fy) = axis_cell(h, y);
        let v = |xx: usize, yy: usize| self.data[yy * w + xx];
        let inside_x = x >= 0.0 && x <= (w - 1) as f64;
        let inside_y = y >= 0.0 && y <= (h - 1) as f64;
        let gx = if inside_x {
            (1.0 - fy) * (v(x1, y0) - v(x0, y0)) + fy * (v(x1, y1) - v(x0, y1))
        } else {
            0.0
        };
        let gy = if inside_y {
            (1.0 - fx) * (v(x0, y1) - v(x0, y0)) + fx * (v(x1, y1) - v(x1, y0))
        } else {
            0.0
        };
        (gx, gy)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two same-shaped images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_dims(other)?;
        Ok(Image::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp_values(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }
}

/// The (pixel index, weight) pairs a bilinear read at `(x, y)` touches.
///
/// Coordinates are clamped to `[0, w-1] x [0, h-1]` first, so every index is
/// inside the grid. The warp and its adjoint both go through this function,
/// which is what keeps them exact transposes at the border.
#[inline]
pub fn bilinear_footprint(width: usize, height: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let (x0, x1, fx) = axis_cell(width, x);
    let (y0, y1, fy) = axis_cell(height, y);
    let r0 = y0 * width;
    let r1 = y1 * width;
    [
        (r0 + x0, (1.0 - fx) * (1.0 - fy)),
        (r0 + x1, fx * (1.0 - fy)),
        (r1 + x0, (1.0 - fx) * fy),
        (r1 + x1, fx * fy),
    ]
}

#[inline]
fn axis_cell(len: usize, c: f64) -> (usize, usize, f64) {
    if len == 1 {
        return (0, 0, 0.0);
    }
    let max = (len - 1) as f64;
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, max) };
    let i0 = (c.floor() as usize).min(len - 2);
    (i0, i0 + 1, c - i0 as f64)
}

/// Ordered, same-shaped frames `f_1 .. f_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("frame sequence"))?;
        for f in &frames[1..] {
            first.check_same_dims(f)?;
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn get(&self, i: usize) -> Option<&Image> {
        self.frames.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Image> {
        self.frames.iter()
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}) outside sequence of {}",
                self.frames.len()
            )));
        }
        Self::new(self.frames[start..end].to_vec())
    }
}

impl<'a> IntoIterator for &'a FrameSequence {
    type Item = &'a Image;
    type IntoIter = std::slice::Iter<'a, Image>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

/// Per-pixel arithmetic mean over all frames.
pub fn temporal_mean(seq: &FrameSequence) -> Image {
    let (w, h) = seq.dims();
    let mut acc = vec![0.0; w * h];
    for f in seq {
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += v;
        }
    }
    let n = seq.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Image::from_raw(w, h, acc)
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Blurs with the separable `[1 4 6 4 1] / 16` kernel (replicate border) and
/// keeps every second pixel. Output is `ceil(w/2) x ceil(h/2)`.
pub fn gaussian_downsample(img: &Image) -> Result<Image> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::TooSmall(format!(
            "cannot downsample a {w}x{h} image"
        )));
    }
    let ow = w.div_ceil(2);
    let oh = h.div_ceil(2);

    // Horizontal pass only at the kept columns. Taps are applied to
    // differences from the centre so constant regions come out exact.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            let cx = (2 * ox) as isize;
            let centre = img.get_clamped(cx, y as isize);
            tmp[y * ow + ox] = centre
                + BINOMIAL5
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * (img.get_clamped(cx + k as isize - 2, y as isize) - centre))
                    .sum::<f64>();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        let cy = (2 * oy) as isize;
        for ox in 0..ow {
            let centre = tmp[(cy as usize).min(h - 1) * ow + ox];
            out[oy * ow + ox] = centre
                + BINOMIAL5
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let yy = (cy + k as isize - 2).clamp(0, h as isize - 1) as usize;
                        c * (tmp[yy * ow + ox] - centre)
                    })
                    .sum::<f64>();
        }
    }
    Ok(Image::from_raw(ow, oh, out))
}

/// Bilinear upsampling onto a finer grid where fine pixel `(x, y)` sits at
/// coarse coordinate `(x/2, y/2)`, the inverse of [`gaussian_downsample`]'s
/// decimation.
pub fn upsample_to(img: &Image, width: usize, height: usize) -> Image {
    Image::from_fn(width, height, |x, y| {
        img.bilinear_sample(x as f64 * 0.5, y as f64 * 0.5)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_2x2() -> Image {
        Image::from_vec(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn bilinear_midpoint_of_ramp() {
        assert_eq!(ramp_2x2().bilinear_sample(0.5, 0.0), 0.5);
    }

    #[test]
    fn bilinear_integer_coordinates_are_identity() {
        let img = Image::from_fn(5, 4, |x, y| (x * 7 + y * 3) as f64 / 40.0 + 0.01 * (x * y) as f64);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(img.bilinear_sample(x as f64, y as f64), img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_clamps_left() {
        let img = Image::from_fn(4, 3, |x, y| (x + 10 * y) as f64 / 40.0);
        assert_eq!(img.bilinear_sample(-3.2, 0.0), img.get(0, 0));
        assert_eq!(img.bilinear_sample(-3.2, 1.5), img.bilinear_sample(0.0, 1.5));
        assert_eq!(img.bilinear_sample(9.0, 9.0), img.get(3, 2));
    }

    #[test]
    fn bilinear_single_pixel_and_nan() {
        let img = Image::filled(1, 1, 0.25);
        assert_eq!(img.bilinear_sample(0.7, -2.0), 0.25);
        let img = ramp_2x2();
        assert!(img.bilinear_sample(f64::NAN, 0.0).is_finite());
    }

    #[test]
    fn bilinear_exact_on_affine_images() {
        let (a, b, c) = (0.031, -0.017, 0.4);
        let img = Image::from_fn(9, 7, |x, y| a * x as f64 + b * y as f64 + c);
        for &(x, y) in &[(1.25, 2.5), (3.9, 0.1), (7.99, 5.999), (0.0, 0.0), (4.5, 3.3)] {
            let want = a * x + b * y + c;
            assert!((img.bilinear_sample(x, y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_validates() {
        assert!(Image::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::from_vec(0, 2, vec![]).is_err());
        assert!(Image::from_vec(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn temporal_mean_basic() {
        let seq = FrameSequence::new(vec![Image::zeros(3, 2), Image::filled(3, 2, 1.0)]).unwrap();
        assert!(temporal_mean(&seq).data().iter().all(|&v| v == 0.5));

        let one = Image::from_fn(3, 2, |x, y| (x + y) as f64 * 0.1);
        let seq = FrameSequence::new(vec![one.clone()]).unwrap();
        assert_eq!(temporal_mean(&seq), one);
    }

    #[test]
    fn temporal_mean_permutation_invariant() {
        let frames: Vec<Image> = (0..5)
            .map(|k| Image::from_fn(4, 4, |x, y| ((x * 3 + y * 5 + k * 7) % 11) as f64 / 11.0))
            .collect();
        let a = temporal_mean(&FrameSequence::new(frames.clone()).unwrap());
        let mut rev = frames;
        rev.reverse();
        let b = temporal_mean(&FrameSequence::new(rev).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_rejects_mixed_dims_and_empty() {
        assert!(FrameSequence::new(vec![]).is_err());
        assert!(FrameSequence::new(vec![Image::zeros(2, 2), Image::zeros(3, 2)]).is_err());
    }

    #[test]
    fn downsample_constant_and_dims() {
        let img = Image::filled(4, 4, 0.37);
        let d = gaussian_downsample(&img).unwrap();
        assert_eq!(d.dims(), (2, 2));
        assert!(d.data().iter().all(|&v| v == 0.37));
        assert_eq!(gaussian_downsample(&Image::zeros(5, 7)).unwrap().dims(), (3, 4));
        assert!(gaussian_downsample(&Image::zeros(1, 7)).is_err());
    }

    #[test]
    fn downsample_impulse_matches_direct_convolution() {
        // Brute-force 2D convolution with the outer-product kernel, then
        // decimation.
        let n = 9;
        let img = Image::from_fn(n, n, |x, y| if x == 4 && y == 4 { 1.0 } else { 0.0 });
        let k1 = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut full = vec![0.0; n * n];
        for y in 0..n as isize {
            for x in 0..n as isize {
                let mut s = 0.0;
                for j in -2..=2isize {
                    for i in -2..=2isize {
                        let v = img.get_clamped(x + i, y + j);
                        s += k1[(i + 2) as usize] * k1[(j + 2) as usize] * v / 256.0;
                    }
                }
                full[y as usize * n + x as usize] = s;
            }
        }
        let d = gaussian_downsample(&img).unwrap();
        assert_eq!(d.dims(), (5, 5));
        for oy in 0..5 {
            for ox in 0..5 {
                let want = full[(2 * oy) * n + 2 * ox];
                assert!((d.get(ox, oy) - want).abs() < 1e-15, "({ox},{oy})");
            }
        }
        // Centre tap of the footprint is 36/256.
        assert!((d.get(2, 2) - 36.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn upsample_interpolates_between_coarse_samples() {
        let coarse = Image::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let fine = upsample_to(&coarse, 4, 1);
        assert_eq!(fine.data(), &[0.0, 0.5, 1.0, 1.0]);
    }
}

//! Quality measures used by `evaluate` and the acceptance checks.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::warp::FlowField;

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    let d = a.zip_map(b, |x, y| x - y)?;
    Ok((d.norm_sq() / d.len() as f64).sqrt())
}

/// `20·log10(1/RMSE)` for intensities in `[0, 1]`; `+inf` for identical
/// images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = rmse(a, b)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * e.log10()
    })
}

/// Text form used in reports: `inf` for the identical-image sentinel.
pub fn format_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

/// Mean endpoint error over pixels at least `margin` from every border.
pub fn mean_endpoint_error(est: &FlowField, truth: &FlowField, margin: usize) -> Result<f64> {
    if est.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            found: est.dims(),
        });
    }
    let (w, h) = est.dims();
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::TooSmall(format!(
            "{w}x{h} flow has no interior with margin {margin}"
        )));
    }
    let mut sum = 0.0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (a, b) = est.at(x, y);
            let (c, d) = truth.at(x, y);
            sum += (a - c).hypot(b - d);
        }
    }
    Ok(sum / ((w - 2 * margin) * (h - 2 * margin)) as f64)
}

/// Centroid of the pixels brighter than `threshold`, each weighted by its
/// excess over the threshold. `None` if no pixel qualifies.
pub fn bright_centroid(img: &Image, threshold: f64) -> Option<(f64, f64)> {
    let (w, _) = img.dims();
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for (i, &v) in img.data().iter().enumerate() {
        if v > threshold {
            let wt = v - threshold;
            sx += wt * (i % w) as f64;
            sy += wt * (i / w) as f64;
            sw += wt;
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

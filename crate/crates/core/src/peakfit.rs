//! Correlation peak location, sub-pixel refinement and peak-shape metrics.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::correlators::CorrelationPlane;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Gauss3,
    Parabolic,
    IntegerOnly,
}

impl FitMethod {
    fn rank(self) -> u8 {
        match self {
            FitMethod::Gauss3 => 0,
            FitMethod::Parabolic => 1,
            FitMethod::IntegerOnly => 2,
        }
    }

    /// The less precise of two per-axis fits.
    fn weaker(self, other: FitMethod) -> FitMethod {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakEstimate {
    pub ix: usize,
    pub iy: usize,
    /// Signed displacement in pixels, zero at the plane center.
    pub dx: f64,
    pub dy: f64,
    pub peak_value: f64,
    /// Highest value outside the 3x3 peak neighborhood over the peak value.
    pub secondary_ratio: f64,
    pub fitted_sigma: Option<f64>,
    pub method: FitMethod,
}

/// Global maximum of the plane as `(ix, iy, value)`.
///
/// Ties go to the smallest displacement magnitude, then to row-major order.
pub fn find_peak(p: &CorrelationPlane) -> Result<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64, i64)> = None;
    let mut min = f64::INFINITY;
    for ((iy, ix), &v) in p.data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite plane value at ({ix}, {iy})")));
        }
        min = min.min(v);
        let (dx, dy) = p.displacement_of(ix, iy);
        let mag = dx * dx + dy * dy;
        let better = match best {
            None => true,
            Some((_, _, bv, bmag)) => v > bv || (v == bv && mag < bmag),
        };
        if better {
            best = Some((ix, iy, v, mag));
        }
    }
    match best {
        Some((ix, iy, v, _)) if v > min => Ok((ix, iy, v)),
        _ => Err(Error::NoPeak),
    }
}

/// Three-point Gaussian offset; `None` if a sample is non-positive.
fn gauss3_offset(minus: f64, center: f64, plus: f64) -> Option<f64> {
    if minus <= 0.0 || center <= 0.0 || plus <= 0.0 {
        return None;
    }
    let (lm, l0, lp) = (minus.ln(), center.ln(), plus.ln());
    let den = 2.0 * lm - 4.0 * l0 + 2.0 * lp;
    if den.abs() < 1e-12 {
        return Some(0.0);
    }
    Some((lm - lp) / den)
}

fn parabolic_offset(minus: f64, center: f64, plus: f64) -> Option<f64> {
    let den = 2.0 * minus - 4.0 * center + 2.0 * plus;
    if den.abs() < 1e-12 {
        None
    } else {
        Some((minus - plus) / den)
    }
}

/// Per-axis refinement with the gauss3 -> parabolic -> integer fallback chain.
pub fn refine_axis(minus: f64, center: f64, plus: f64) -> (f64, FitMethod) {
    let (delta, method) = if let Some(d) = gauss3_offset(minus, center, plus) {
        (d, FitMethod::Gauss3)
    } else if let Some(d) = parabolic_offset(minus, center, plus) {
        (d, FitMethod::Parabolic)
    } else {
        (0.0, FitMethod::IntegerOnly)
    };
    if delta.is_finite() {
        (delta.clamp(-0.5, 0.5), method)
    } else {
        (0.0, FitMethod::IntegerOnly)
    }
}

/// Ratio of the highest value outside the 3x3 neighborhood of `(ix, iy)`
/// (neighborhood taken circularly) to the peak value, clamped to `[0, 1]`.
pub fn secondary_ratio(p: &CorrelationPlane, ix: usize, iy: usize) -> f64 {
    let (w, h) = (p.width(), p.height());
    let peak = p.data[[iy, ix]];
    if peak <= 0.0 {
        return 0.0;
    }
    let near = |a: usize, b: usize, n: usize| {
        let d = (a + n - b) % n;
        d <= 1 || d == n - 1
    };
    let second = p
        .data
        .indexed_iter()
        .filter(|((y, x), _)| !(near(*x, ix, w) && near(*y, iy, h)))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if second.is_finite() {
        (second / peak).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Sub-pixel peak estimate at `(ix, iy)` using independent three-point
/// Gaussian fits per axis. Border peaks fall back to integer precision.
pub fn subpixel_gauss3(p: &CorrelationPlane, ix: usize, iy: usize) -> PeakEstimate {
    let (w, h) = (p.width(), p.height());
    let (idx, idy) = p.displacement_of(ix, iy);
    let r0 = p.data[[iy, ix]];
    let interior = ix > 0 && iy > 0 && ix + 1 < w && iy + 1 < h;
    let (sx, sy, method) = if interior {
        let (sx, mx) = refine_axis(p.data[[iy, ix - 1]], r0, p.data[[iy, ix + 1]]);
        let (sy, my) = refine_axis(p.data[[iy - 1, ix]], r0, p.data[[iy + 1, ix]]);
        (sx, sy, mx.weaker(my))
    } else {
        (0.0, 0.0, FitMethod::IntegerOnly)
    };
    PeakEstimate {
        ix,
        iy,
        dx: idx as f64 + sx,
        dy: idy as f64 + sy,
        peak_value: r0,
        secondary_ratio: secondary_ratio(p, ix, iy),
        fitted_sigma: None,
        method,
    }
}

/// Least-squares fit of `ln r = a + b x + c y + e (x^2 + y^2)` over the
/// positive samples of the 5x5 neighborhood; returns `sqrt(-1 / 2e)`.
pub fn fit_peak_width(p: &CorrelationPlane, ix: usize, iy: usize) -> Option<f64> {
    let (w, h) = (p.width(), p.height());
    if ix < 2 || iy < 2 || ix + 2 >= w || iy + 2 >= h {
        return None;
    }
    let mut normal = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    let mut count = 0;
    for oy in -2i64..=2 {
        for ox in -2i64..=2 {
            let v = p.data[[(iy as i64 + oy) as usize, (ix as i64 + ox) as usize]];
            if v <= 0.0 {
                continue;
            }
            let (x, y) = (ox as f64, oy as f64);
            let row = Vector4::new(1.0, x, y, x * x + y * y);
            normal += row * row.transpose();
            rhs += row * v.ln();
            count += 1;
        }
    }
    if count < 6 {
        return None;
    }
    let coef = normal.lu().solve(&rhs)?;
    let curvature = coef[3];
    if !(curvature < 0.0) {
        return None;
    }
    let sigma = (-1.0 / (2.0 * curvature)).sqrt();
    sigma.is_finite().then_some(sigma)
}

/// Peak search, sub-pixel refinement and width fit in one call.
pub fn estimate_peak(p: &CorrelationPlane, with_width: bool) -> Result<PeakEstimate> {
    let (ix, iy, _) = find_peak(p)?;
    let mut est = subpixel_gauss3(p, ix, iy);
    if with_width {
        est.fitted_sigma = fit_peak_width(p, ix, iy);
    }
    Ok(est)
}

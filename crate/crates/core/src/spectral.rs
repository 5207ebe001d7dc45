//! Frequency-domain primitives shared by every correlator.
//!
//! Arrays are stored row-major with shape `(height, width)`, so element
//! `[[y, x]]` is pixel `(x, y)`. The forward transform is unnormalized and the
//! inverse carries the full `1/N` factor, matching the usual FFT convention.

use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    // Plans are cached per worker thread; nothing is shared across threads.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn valid_extent(n: usize) -> bool {
    n.is_power_of_two() || (n % 2 == 0 && n >= 8)
}

/// Real-valued interrogation patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    data: Array2<f64>,
}

impl Window {
    /// Wraps `data` (shape `(height, width)`). Extents must be powers of two
    /// or even and at least 8, and every value must be finite.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if !valid_extent(w) || !valid_extent(h) {
            return Err(Error::InvalidInput(format!(
                "window extent {w}x{h} must be a power of two or an even number >= 8"
            )));
        }
        if let Some(((y, x), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {v} at pixel ({x}, {y})"
            )));
        }
        Ok(Window { data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Window::new(Array2::zeros((height, width)))
    }

    /// Builds a window from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Window::new(Array2::from_shape_fn((height, width), |(y, x)| f(x, y)))
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[[y, x]]
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Sum of squared values.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Complex 2D spectrum, full layout (no Hermitian packing).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    data: Array2<Complex64>,
}

impl Spectrum {
    pub fn new(data: Array2<Complex64>) -> Self {
        Spectrum { data }
    }

    pub fn from_real(values: &Array2<f64>) -> Self {
        Spectrum::new(values.mapv(|v| Complex64::new(v, 0.0)))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Spectrum::new(Array2::zeros((height, width)))
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    /// `(width, height)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest deviation from Hermitian symmetry `S[k] = conj(S[-k])`,
    /// relative to the largest magnitude. Zero spectra report 0.
    pub fn hermitian_residual(&self) -> f64 {
        let (h, w) = self.data.dim();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for ((y, x), z) in self.data.indexed_iter() {
            let mirror = self.data[[(h - y) % h, (w - x) % w]].conj();
            worst = worst.max((z - mirror).norm());
        }
        worst / scale
    }

    /// Element-wise conjugate.
    pub fn conj(&self) -> Spectrum {
        Spectrum::new(self.data.mapv(|z| z.conj()))
    }
}

/// Isotropic Gaussian desired response, stored in the frequency domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub sigma_spatial: f64,
    pub spectrum: Spectrum,
}

impl GaussianSpec {
    /// Real parts of the spectrum.
    pub fn values(&self) -> Array2<f64> {
        self.spectrum.data().mapv(|z| z.re)
    }

    /// `G G*` as a real array.
    pub fn power(&self) -> Array2<f64> {
        self.spectrum.data().mapv(|z| z.norm_sqr())
    }
}

/// Runs an in-place 2D FFT over a standard-layout array.
pub(crate) fn fft2_in_place(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    if rows == 0 || cols == 0 {
        return;
    }
    if !data.is_standard_layout() {
        *data = data.as_standard_layout().into_owned();
    }
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(cols, direction);
        let col_fft = planner.plan_fft(rows, direction);

        // rustfft treats the buffer as consecutive transforms of length `cols`.
        row_fft.process(data.as_slice_mut().expect("standard layout"));

        let mut transposed = data.t().as_standard_layout().into_owned();
        col_fft.process(transposed.as_slice_mut().expect("standard layout"));
        data.assign(&transposed.t());
    });
}

/// Unnormalized forward 2D DFT of a window.
pub fn forward_transform(w: &Window) -> Spectrum {
    let mut data = w.data.mapv(|v| Complex64::new(v, 0.0));
    fft2_in_place(&mut data, FftDirection::Forward);
    Spectrum::new(data)
}

/// Complex inverse 2D DFT including the `1/N` factor.
pub(crate) fn inverse_complex(s: &Spectrum) -> Array2<Complex64> {
    let mut data = s.data.clone();
    fft2_in_place(&mut data, FftDirection::Inverse);
    let scale = 1.0 / data.len() as f64;
    data.mapv_inplace(|z| z * scale);
    data
}

/// Real inverse of a spectrum along with the discarded imaginary residue.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseTransform {
    pub window: Window,
    /// Largest absolute imaginary part of the inverse before it was dropped.
    pub max_imag: f64,
}

/// Inverse 2D DFT; the real part becomes the window.
pub fn inverse_transform(s: &Spectrum) -> Result<InverseTransform> {
    if !s.is_finite() {
        return Err(Error::InvalidInput("spectrum contains non-finite values".into()));
    }
    let data = inverse_complex(s);
    let max_imag = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let window = Window::new(data.mapv(|z| z.re))?;
    Ok(InverseTransform { window, max_imag })
}

/// Signed wrap-around offset of index `i` on a ring of length `n`.
pub(crate) fn wrapped_offset(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Periodized 1D Gaussian samples `sum_j exp(-(x + j n)^2 / 2 sigma^2)`.
fn periodized_gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let images = (10.0 * sigma / n as f64).ceil() as i64 + 1;
    let two_var = 2.0 * sigma * sigma;
    (0..n)
        .map(|i| {
            let base = wrapped_offset(i, n);
            (-images..=images)
                .map(|j| {
                    let x = base + (j * n as i64) as f64;
                    (-x * x / two_var).exp()
                })
                .sum()
        })
        .collect()
}

/// Spectrum of the origin-centered, periodized spatial Gaussian
/// `exp(-(x^2 + y^2) / 2 sigma^2)` on a `width x height` torus.
///
/// Periodization makes the DFT a sum of positive aliased Gaussians, so the
/// result is real and non-negative. Imaginary round-off is discarded.
pub fn gaussian_spectrum(width: usize, height: usize, sigma_spatial: f64) -> Result<GaussianSpec> {
    if !(sigma_spatial > 0.0 && sigma_spatial.is_finite()) {
        return Err(Error::Parameter(format!(
            "gaussian sigma must be positive, got {sigma_spatial}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("empty gaussian grid".into()));
    }
    let gx = periodized_gaussian_1d(width, sigma_spatial);
    let gy = periodized_gaussian_1d(height, sigma_spatial);
    let mut data = Array2::from_shape_fn((height, width), |(y, x)| Complex64::new(gx[x] * gy[y], 0.0));
    fft2_in_place(&mut data, FftDirection::Forward);
    data.mapv_inplace(|z| Complex64::new(z.re.max(0.0), 0.0));
    Ok(GaussianSpec {
        sigma_spatial,
        spectrum: Spectrum::new(data),
    })
}

/// Element-wise `s s*`.
pub fn power_spectrum(s: &Spectrum) -> Spectrum {
    Spectrum::new(s.data.mapv(|z| Complex64::new(z.norm_sqr(), 0.0)))
}

/// Circularly shifts an array so that `out[(y + dy) mod h, (x + dx) mod w] = a[y, x]`.
pub fn shift_array(a: &Array2<f64>, dx: i64, dy: i64) -> Array2<f64> {
    let (h, w) = a.dim();
    let sx = dx.rem_euclid(w as i64) as usize;
    let sy = dy.rem_euclid(h as i64) as usize;
    Array2::from_shape_fn((h, w), |(y, x)| a[[(y + h - sy) % h, (x + w - sx) % w]])
}

/// Translates a window circularly by `(dx, dy)` pixels.
pub fn circular_shift(w: &Window, dx: i64, dy: i64) -> Window {
    Window {
        data: shift_array(&w.data, dx, dy),
    }
}

/// Multiplies a spectrum by the phase ramp of a spatial translation by
/// `(dx, dy)`, i.e. the spectrum of `f(x - dx, y - dy)`.
pub fn shift_spectrum(s: &Spectrum, dx: f64, dy: f64) -> Spectrum {
    let (h, w) = s.data.dim();
    Spectrum::new(Array2::from_shape_fn((h, w), |(ky, kx)| {
        let phase = -2.0 * PI * (kx as f64 * dx / w as f64 + ky as f64 * dy / h as f64);
        s.data[[ky, kx]] * Complex64::from_polar(1.0, phase)
    }))
}

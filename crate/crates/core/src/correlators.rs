//! Frequency-domain correlation estimators.
//!
//! Every estimator maps a spectrum pair `(F1, F2)` to a response spectrum
//! `R` and then to a spatial [`CorrelationPlane`]. The plane is arranged so
//! that displacement `(0, 0)` sits at index `(width / 2, height / 2)` and a
//! peak at displacement `d` means the second window is the first one
//! translated by `+d`.
//!
//! The SBCC family solves, per frequency bin, the joint least-squares
//! problem over two surrogate filters and a consistent response. The closed
//! form lives in [`Correlator::response`]; [`sbcc_oracle`] re-derives the
//! same solution numerically from the stationarity conditions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{gaussian_spectrum, inverse_complex, GaussianSpec, Spectrum, Window};

/// Relative size of the guard added to PC/SPOF/RPC denominators.
pub const EPS_GUARD_SCALE: f64 = 1e-12;

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_SIGMA_D: f64 = 2.0;
/// MOSSE regularization, reused as the CFCC default.
pub const MOSSE_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scc,
    Pc,
    Spof,
    Rpc,
    Cspc,
    Cfcc,
    Sbcc,
}

/// Estimator identity plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    /// CSPC exponent.
    pub rho: f64,
    /// CSPC additive denominator term.
    pub epsilon: f64,
    /// Spatial sigma of the desired response `g`, pixels.
    pub sigma: f64,
    /// Spatial sigma of the difference-term filter `g_d`, pixels.
    pub sigma_d: f64,
    pub use_context: bool,
    /// Add `1e-12 * max|F1 F2*|` to PC/SPOF/RPC/CSPC denominators.
    pub eps_guard: bool,
}

/// Names accepted by [`MethodConfig::from_name`].
pub const METHOD_NAMES: [&str; 10] = [
    "scc", "pc", "spof", "rpc", "cspc", "cfcc", "sbcc", "sbcc-b1", "sbcc-b2", "sbcc-b3",
];

impl MethodConfig {
    fn base(method: Method) -> Self {
        MethodConfig {
            method,
            lambda: 0.0,
            mu: 0.0,
            nu: 0.0,
            rho: 1.0,
            epsilon: 0.1,
            sigma: DEFAULT_SIGMA,
            sigma_d: DEFAULT_SIGMA_D,
            use_context: false,
            eps_guard: true,
        }
    }

    pub fn scc() -> Self {
        Self::base(Method::Scc)
    }

    pub fn pc() -> Self {
        Self::base(Method::Pc)
    }

    pub fn spof() -> Self {
        Self::base(Method::Spof)
    }

    pub fn rpc() -> Self {
        Self::base(Method::Rpc)
    }

    pub fn cspc(rho: f64, epsilon: f64) -> Self {
        MethodConfig {
            rho,
            epsilon,
            ..Self::base(Method::Cspc)
        }
    }

    pub fn cfcc() -> Self {
        MethodConfig {
            lambda: MOSSE_LAMBDA,
            ..Self::base(Method::Cfcc)
        }
    }

    /// General SBCC configuration; context is enabled whenever `nu > 0`.
    pub fn sbcc_with(lambda: f64, mu: f64, nu: f64) -> Self {
        MethodConfig {
            lambda,
            mu,
            nu,
            use_context: nu > 0.0,
            ..Self::base(Method::Sbcc)
        }
    }

    pub fn sbcc() -> Self {
        Self::sbcc_with(1e-5, 1.0, 10.0)
    }

    pub fn sbcc_b1() -> Self {
        Self::sbcc_with(1e-5, 0.0, 0.0)
    }

    pub fn sbcc_b2() -> Self {
        Self::sbcc_with(0.1, 0.0, 0.0)
    }

    pub fn sbcc_b3() -> Self {
        Self::sbcc_with(1e-5, 1.0, 0.0)
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "scc" => Ok(Self::scc()),
            "pc" => Ok(Self::pc()),
            "spof" => Ok(Self::spof()),
            "rpc" => Ok(Self::rpc()),
            "cspc" => Ok(Self::cspc(1.0, 0.1)),
            "cfcc" => Ok(Self::cfcc()),
            "sbcc" => Ok(Self::sbcc()),
            "sbcc-b1" | "sbcc_b1" => Ok(Self::sbcc_b1()),
            "sbcc-b2" | "sbcc_b2" => Ok(Self::sbcc_b2()),
            "sbcc-b3" | "sbcc_b3" => Ok(Self::sbcc_b3()),
            other => Err(Error::Parameter(format!(
                "unknown method '{other}'; valid names: {}",
                METHOD_NAMES.join(",")
            ))),
        }
    }

    /// Short name; SBCC configurations matching a preset report the preset.
    pub fn name(&self) -> String {
        match self.method {
            Method::Scc => "scc".into(),
            Method::Pc => "pc".into(),
            Method::Spof => "spof".into(),
            Method::Rpc => "rpc".into(),
            Method::Cspc => "cspc".into(),
            Method::Cfcc => "cfcc".into(),
            Method::Sbcc => {
                let key = (self.lambda, self.mu, self.nu);
                for (name, preset) in [
                    ("sbcc", Self::sbcc()),
                    ("sbcc-b1", Self::sbcc_b1()),
                    ("sbcc-b2", Self::sbcc_b2()),
                    ("sbcc-b3", Self::sbcc_b3()),
                ] {
                    if key == (preset.lambda, preset.mu, preset.nu) {
                        return name.into();
                    }
                }
                format!("sbcc(l={},m={},n={})", self.lambda, self.mu, self.nu)
            }
        }
    }

    pub fn uses_gaussian(&self) -> bool {
        matches!(self.method, Method::Rpc | Method::Cfcc | Method::Sbcc)
    }

    /// True when this configuration consumes a negative-context bank.
    pub fn needs_context(&self) -> bool {
        self.method == Method::Sbcc && self.nu > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lambda", self.lambda)?;
        nonneg("mu", self.mu)?;
        nonneg("nu", self.nu)?;
        nonneg("epsilon", self.epsilon)?;
        if self.method == Method::Cspc && !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Parameter(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.uses_gaussian() && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.method == Method::Sbcc && self.mu > 0.0 && !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::Parameter(format!("sigma_d must be positive, got {}", self.sigma_d)));
        }
        Ok(())
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MethodConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

/// Average power spectrum `Q` of negative context windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBank {
    q: Array2<f64>,
    m: usize,
    /// Indices (into the candidate list the bank was built from) that contributed.
    pub sources: Vec<usize>,
}

impl ContextBank {
    /// Wraps a precomputed average power spectrum of `m` windows.
    pub fn new(q: Array2<f64>, m: usize) -> Result<Self> {
        if let Some(v) = q.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "context power spectrum must be finite and non-negative, found {v}"
            )));
        }
        Ok(ContextBank { q, m, sources: Vec::new() })
    }

    /// Mean power spectrum of the given context spectra.
    pub fn from_spectra(spectra: &[Spectrum]) -> Result<Self> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::ContextUnavailable("no context windows".into()))?;
        let mut q = Array2::<f64>::zeros(first.data().dim());
        for s in spectra {
            if s.data().dim() != q.dim() {
                return Err(Error::Dimension("context spectra differ in shape".into()));
            }
            Zip::from(&mut q).and(s.data()).for_each(|acc, z| *acc += z.norm_sqr());
        }
        let m = spectra.len();
        q.mapv_inplace(|v| v / m as f64);
        Ok(ContextBank {
            q,
            m,
            sources: (0..m).collect(),
        })
    }

    /// A bank with no contributing windows; valid only when `nu == 0`.
    pub fn empty(width: usize, height: usize) -> Self {
        ContextBank {
            q: Array2::zeros((height, width)),
            m: 0,
            sources: Vec::new(),
        }
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn q_spectrum(&self) -> Spectrum {
        Spectrum::from_real(&self.q)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

/// Spatial correlation response, centered on zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPlane {
    pub data: Array2<f64>,
    /// Coefficient map in `[-1, 1]`, filled by [`normalize_plane`].
    pub normalized: Option<Array2<f64>>,
    /// Largest discarded imaginary part relative to the largest magnitude.
    pub imag_residual: f64,
    /// Absolute guard added to the denominator (0 when unused).
    pub eps_guard: f64,
    /// Set when normalization was requested but a window had zero variance.
    pub unnormalizable: bool,
}

impl CorrelationPlane {
    /// Wraps raw centered data (no guard, no residual).
    pub fn from_data(data: Array2<f64>) -> Self {
        CorrelationPlane {
            data,
            normalized: None,
            imag_residual: 0.0,
            eps_guard: 0.0,
            unnormalizable: false,
        }
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    /// Array indices `(ix, iy)` of zero displacement.
    pub fn center(&self) -> (usize, usize) {
        (self.width() / 2, self.height() / 2)
    }

    /// Displacement represented by array index `(ix, iy)`.
    pub fn displacement_of(&self, ix: usize, iy: usize) -> (i64, i64) {
        let (cx, cy) = self.center();
        (ix as i64 - cx as i64, iy as i64 - cy as i64)
    }

    /// Array index of displacement `(dx, dy)`, wrapping around the plane.
    pub fn index_of(&self, dx: i64, dy: i64) -> (usize, usize) {
        let (cx, cy) = self.center();
        let w = self.width() as i64;
        let h = self.height() as i64;
        (
            (cx as i64 + dx).rem_euclid(w) as usize,
            (cy as i64 + dy).rem_euclid(h) as usize,
        )
    }

    pub fn at(&self, dx: i64, dy: i64) -> f64 {
        let (ix, iy) = self.index_of(dx, dy);
        self.data[[iy, ix]]
    }
}

/// Surrogate filters `(S1, S2)` of the SBCC solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePair {
    pub s1: Spectrum,
    pub s2: Spectrum,
}

/// Converts a response spectrum `R` into a centered spatial plane.
///
/// The inverse transform of `F1 F2*` evaluated at lag `n` is
/// `sum_x f1(x + n) f2(x)`, so displacement `d` (with `f2 = f1(x - d)`) is
/// read from lag `-d`.
pub fn plane_from_response(r: &Spectrum) -> Result<CorrelationPlane> {
    if !r.is_finite() {
        return Err(Error::InvalidInput("response spectrum is not finite".into()));
    }
    let spatial = inverse_complex(r);
    let (h, w) = spatial.dim();
    let max_mag = spatial.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_imag = spatial.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let imag_residual = if max_mag > 0.0 { max_imag / max_mag } else { 0.0 };
    let (cx, cy) = (w / 2, h / 2);
    let data = Array2::from_shape_fn((h, w), |(iy, ix)| {
        let lag_x = (cx + w - ix) % w;
        let lag_y = (cy + h - iy) % h;
        spatial[[lag_y, lag_x]].re
    });
    Ok(CorrelationPlane {
        data,
        normalized: None,
        imag_residual,
        eps_guard: 0.0,
        unnormalizable: false,
    })
}

fn check_same_shape(a: &Spectrum, b: &Spectrum) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::Dimension(format!(
            "spectra shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn checked_divide(num: Complex64, den: f64, row: usize, col: usize) -> Result<Complex64> {
    if den == 0.0 || !den.is_finite() {
        Err(Error::DegenerateDenominator { row, col })
    } else {
        Ok(num / den)
    }
}

/// Builds the `(row, col)`-indexed output of a per-bin fallible kernel.
fn per_bin<F>(h: usize, w: usize, mut f: F) -> Result<Array2<Complex64>>
where
    F: FnMut(usize, usize) -> Result<Complex64>,
{
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            out.push(f(row, col)?);
        }
    }
    Ok(Array2::from_shape_vec((h, w), out).expect("shape"))
}

/// A configured estimator with its Gaussian filters precomputed for one
/// window shape. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Correlator {
    cfg: MethodConfig,
    width: usize,
    height: usize,
    /// Desired response `G` (real).
    g: Array2<f64>,
    /// `G_d G_d*`.
    gd_power: Array2<f64>,
}

impl Correlator {
    pub fn new(cfg: MethodConfig, width: usize, height: usize) -> Result<Self> {
        cfg.validate()?;
        let g = if cfg.uses_gaussian() {
            gaussian_spectrum(width, height, cfg.sigma)?.values()
        } else {
            Array2::ones((height, width))
        };
        let gd_power = if cfg.method == Method::Sbcc && cfg.mu > 0.0 {
            gaussian_spectrum(width, height, cfg.sigma_d)?.power()
        } else {
            Array2::zeros((height, width))
        };
        Ok(Correlator {
            cfg,
            width,
            height,
            g,
            gd_power,
        })
    }

    /// Uses caller-supplied `G` and `G_d G_d*` instead of the Gaussian ones
    /// (e.g. `G = 1` to recover phase correlation).
    pub fn with_filters(cfg: MethodConfig, g: Array2<f64>, gd_power: Array2<f64>) -> Result<Self> {
        cfg.validate()?;
        if g.dim() != gd_power.dim() {
            return Err(Error::Dimension("G and G_d power differ in shape".into()));
        }
        let (height, width) = g.dim();
        Ok(Correlator {
            cfg,
            width,
            height,
            g,
            gd_power,
        })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.cfg
    }

    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn gd_power(&self) -> &Array2<f64> {
        &self.gd_power
    }

    fn check_inputs(&self, f1: &Spectrum, f2: &Spectrum) -> Result<()> {
        check_same_shape(f1, f2)?;
        if f1.shape() != (self.width, self.height) {
            return Err(Error::Dimension(format!(
                "correlator built for {}x{}, got {}x{}",
                self.width,
                self.height,
                f1.width(),
                f1.height()
            )));
        }
        Ok(())
    }

    /// Returns the `Q` array for SBCC, or `None` when `nu == 0`.
    fn context_q<'a>(&self, ctx: Option<&'a ContextBank>) -> Result<Option<&'a Array2<f64>>> {
        if !self.cfg.needs_context() {
            return Ok(None);
        }
        let ctx = match ctx {
            Some(c) if !c.is_empty() => c,
            _ => {
                return Err(Error::Parameter(
                    "nu > 0 requires a non-empty context bank".into(),
                ))
            }
        };
        if ctx.q.dim() != (self.height, self.width) {
            return Err(Error::Dimension("context bank shape differs from spectra".into()));
        }
        Ok(Some(&ctx.q))
    }

    /// Frequency-domain response `R` and the guard that was applied.
    pub fn response_with_guard(
        &self,
        f1: &Spectrum,
        f2: &Spectrum,
        ctx: Option<&ContextBank>,
    ) -> Result<(Spectrum, f64)> {
        self.check_inputs(f1, f2)?;
        let (h, w) = (self.height, self.width);
        let a = f1.data();
        let b = f2.data();
        let cross = |r: usize, c: usize| a[[r, c]] * b[[r, c]].conj();
        let cfg = &self.cfg;

        let guard = if cfg.eps_guard
            && matches!(cfg.method, Method::Pc | Method::Spof | Method::Rpc | Method::Cspc)
        {
            let max = Zip::from(a)
                .and(b)
                .fold(0.0f64, |m, x, y| m.max((x * y.conj()).norm()));
            EPS_GUARD_SCALE * max
        } else {
            0.0
        };

        let data = match cfg.method {
            Method::Scc => per_bin(h, w, |r, c| Ok(cross(r, c)))?,
            Method::Pc => per_bin(h, w, |r, c| {
                let x = cross(r, c);
                checked_divide(x, x.norm() + guard, r, c)
            })?,
            Method::Spof => per_bin(h, w, |r, c| {
                let x = cross(r, c);
                checked_divide(x, x.norm().sqrt() + guard, r, c)
            })?,
            Method::Rpc => per_bin(h, w, |r, c| {
                let x = cross(r, c);
                checked_divide(x * self.g[[r, c]], x.norm() + guard, r, c)
            })?,
            Method::Cspc => per_bin(h, w, |r, c| {
                let x = cross(r, c);
                checked_divide(x, x.norm().powf(cfg.rho) + cfg.epsilon + guard, r, c)
            })?,
            Method::Cfcc => per_bin(h, w, |r, c| {
                let x = cross(r, c);
                checked_divide(x * self.g[[r, c]], a[[r, c]].norm_sqr() + cfg.lambda, r, c)
            })?,
            Method::Sbcc => {
                let q = self.context_q(ctx)?;
                per_bin(h, w, |r, c| {
                    let d = self.gd_power[[r, c]];
                    let qv = q.map_or(0.0, |q| q[[r, c]]);
                    let num = cross(r, c) * (2.0 * (self.g[[r, c]] + cfg.mu * d));
                    let den = a[[r, c]].norm_sqr()
                        + b[[r, c]].norm_sqr()
                        + 2.0 * cfg.lambda
                        + 2.0 * cfg.mu * d
                        + 2.0 * cfg.nu * qv;
                    checked_divide(num, den, r, c)
                })?
            }
        };
        Ok((Spectrum::new(data), guard))
    }

    /// Frequency-domain response `R`.
    pub fn response(&self, f1: &Spectrum, f2: &Spectrum, ctx: Option<&ContextBank>) -> Result<Spectrum> {
        self.response_with_guard(f1, f2, ctx).map(|(r, _)| r)
    }

    /// Spatial correlation plane of the pair.
    pub fn correlate(
        &self,
        f1: &Spectrum,
        f2: &Spectrum,
        ctx: Option<&ContextBank>,
    ) -> Result<CorrelationPlane> {
        let (r, guard) = self.response_with_guard(f1, f2, ctx)?;
        let mut plane = plane_from_response(&r)?;
        plane.eps_guard = guard;
        Ok(plane)
    }

    /// SBCC surrogates built from the closed-form response.
    ///
    /// `S1 = (F2 R + G* F1 + mu Gd Gd* F1) / A` and
    /// `S2* = (F1* R + G F2* + mu Gd Gd* F2*) / A`, with
    /// `A = |F1|^2 + |F2|^2 + lambda + mu Gd Gd* + nu Q`.
    pub fn surrogates(
        &self,
        f1: &Spectrum,
        f2: &Spectrum,
        ctx: Option<&ContextBank>,
    ) -> Result<SurrogatePair> {
        if self.cfg.method != Method::Sbcc {
            return Err(Error::Parameter("surrogates are defined for SBCC only".into()));
        }
        let r = self.response(f1, f2, ctx)?;
        let q = self.context_q(ctx)?;
        let cfg = &self.cfg;
        let (h, w) = (self.height, self.width);
        let a = f1.data();
        let b = f2.data();
        let rd = r.data();
        let denom = |row: usize, col: usize| {
            a[[row, col]].norm_sqr()
                + b[[row, col]].norm_sqr()
                + cfg.lambda
                + cfg.mu * self.gd_power[[row, col]]
                + cfg.nu * q.map_or(0.0, |q| q[[row, col]])
        };
        // G is stored real, so G* == G numerically; kept explicit for clarity.
        let s1 = per_bin(h, w, |row, col| {
            let g = Complex64::new(self.g[[row, col]], 0.0);
            let md = cfg.mu * self.gd_power[[row, col]];
            let num = b[[row, col]] * rd[[row, col]] + g.conj() * a[[row, col]] + a[[row, col]] * md;
            checked_divide(num, denom(row, col), row, col)
        })?;
        let s2 = per_bin(h, w, |row, col| {
            let g = Complex64::new(self.g[[row, col]], 0.0);
            let md = cfg.mu * self.gd_power[[row, col]];
            let num = a[[row, col]].conj() * rd[[row, col]] + g * b[[row, col]].conj() + b[[row, col]].conj() * md;
            checked_divide(num, denom(row, col), row, col).map(|s2c| s2c.conj())
        })?;
        Ok(SurrogatePair {
            s1: Spectrum::new(s1),
            s2: Spectrum::new(s2),
        })
    }

    /// Independent per-bin solve of the three stationarity conditions in the
    /// unknowns `(S1, S2*, R)`:
    ///
    /// ```text
    /// A S1            - F2  R = G* F1  + mu D F1
    ///        A S2*    - F1* R = G  F2* + mu D F2*
    /// -F2* S1 - F1 S2* + 2  R = 0
    /// ```
    ///
    /// solved with a dense LU factorization, never the closed form.
    pub fn oracle(
        &self,
        f1: &Spectrum,
        f2: &Spectrum,
        ctx: Option<&ContextBank>,
    ) -> Result<(Spectrum, SurrogatePair)> {
        if self.cfg.method != Method::Sbcc {
            return Err(Error::Parameter("the SBCC oracle applies to SBCC only".into()));
        }
        self.check_inputs(f1, f2)?;
        let q = self.context_q(ctx)?;
        let cfg = &self.cfg;
        let (h, w) = (self.height, self.width);
        let mut r_out = Array2::zeros((h, w));
        let mut s1_out = Array2::zeros((h, w));
        let mut s2_out = Array2::zeros((h, w));
        let zero = Complex64::new(0.0, 0.0);
        for row in 0..h {
            for col in 0..w {
                let fa = f1.data()[[row, col]];
                let fb = f2.data()[[row, col]];
                let g = Complex64::new(self.g[[row, col]], 0.0);
                let d = self.gd_power[[row, col]];
                let qv = q.map_or(0.0, |q| q[[row, col]]);
                let big_a = Complex64::new(
                    fa.norm_sqr() + fb.norm_sqr() + cfg.lambda + cfg.mu * d + cfg.nu * qv,
                    0.0,
                );
                let m = Matrix3::new(
                    big_a, zero, -fb,
                    zero, big_a, -fa.conj(),
                    -fb.conj(), -fa, Complex64::new(2.0, 0.0),
                );
                let rhs = Vector3::new(
                    g.conj() * fa + fa * (cfg.mu * d),
                    g * fb.conj() + fb.conj() * (cfg.mu * d),
                    zero,
                );
                let sol = m
                    .lu()
                    .solve(&rhs)
                    .filter(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
                    .ok_or(Error::DegenerateDenominator { row, col })?;
                s1_out[[row, col]] = sol[0];
                s2_out[[row, col]] = sol[1].conj();
                r_out[[row, col]] = sol[2];
            }
        }
        Ok((
            Spectrum::new(r_out),
            SurrogatePair {
                s1: Spectrum::new(s1_out),
                s2: Spectrum::new(s2_out),
            },
        ))
    }
}

/// GCC estimators: SCC, PC, SPOF, RPC and CSPC.
pub fn gcc_correlate(cfg: &MethodConfig, f1: &Spectrum, f2: &Spectrum) -> Result<CorrelationPlane> {
    if !matches!(
        cfg.method,
        Method::Scc | Method::Pc | Method::Spof | Method::Rpc | Method::Cspc
    ) {
        return Err(Error::Parameter(format!("{} is not a GCC method", cfg.name())));
    }
    check_same_shape(f1, f2)?;
    Correlator::new(cfg.clone(), f1.width(), f1.height())?.correlate(f1, f2, None)
}

/// Correlation-filter cross-correlation: `G F1 F2* / (F1 F1* + lambda)`.
/// `F1` is the image replaced by its MOSSE surrogate; `F2` is untouched.
pub fn cfcc_correlate(cfg: &MethodConfig, f1: &Spectrum, f2: &Spectrum) -> Result<CorrelationPlane> {
    if cfg.method != Method::Cfcc {
        return Err(Error::Parameter(format!("{} is not CFCC", cfg.name())));
    }
    check_same_shape(f1, f2)?;
    Correlator::new(cfg.clone(), f1.width(), f1.height())?.correlate(f1, f2, None)
}

/// SBCC closed-form correlation plane.
pub fn sbcc_correlate(
    cfg: &MethodConfig,
    f1: &Spectrum,
    f2: &Spectrum,
    ctx: &ContextBank,
) -> Result<CorrelationPlane> {
    if cfg.method != Method::Sbcc {
        return Err(Error::Parameter(format!("{} is not SBCC", cfg.name())));
    }
    check_same_shape(f1, f2)?;
    Correlator::new(cfg.clone(), f1.width(), f1.height())?.correlate(f1, f2, Some(ctx))
}

pub fn sbcc_surrogates(
    cfg: &MethodConfig,
    f1: &Spectrum,
    f2: &Spectrum,
    ctx: &ContextBank,
) -> Result<SurrogatePair> {
    check_same_shape(f1, f2)?;
    Correlator::new(cfg.clone(), f1.width(), f1.height())?.surrogates(f1, f2, Some(ctx))
}

/// Per-bin linear-system solution of the SBCC objective, as a plane plus
/// surrogates.
pub fn sbcc_oracle(
    cfg: &MethodConfig,
    f1: &Spectrum,
    f2: &Spectrum,
    ctx: &ContextBank,
) -> Result<(CorrelationPlane, SurrogatePair)> {
    check_same_shape(f1, f2)?;
    let (r, pair) = Correlator::new(cfg.clone(), f1.width(), f1.height())?.oracle(f1, f2, Some(ctx))?;
    Ok((plane_from_response(&r)?, pair))
}

/// MOSSE filter `S` with `S* = sum_i G T_i* / (sum_i T_i T_i* + lambda)`.
pub fn mosse_filter(g: &GaussianSpec, templates: &[Spectrum], lambda: f64) -> Result<Spectrum> {
    if templates.is_empty() {
        return Err(Error::Parameter("MOSSE needs at least one template".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let gs = g.spectrum.data();
    for t in templates {
        if t.data().dim() != gs.dim() {
            return Err(Error::Dimension("template shape differs from G".into()));
        }
    }
    let (h, w) = gs.dim();
    let data = per_bin(h, w, |r, c| {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = lambda;
        for t in templates {
            let tv = t.data()[[r, c]];
            num += gs[[r, c]] * tv.conj();
            den += tv.norm_sqr();
        }
        checked_divide(num, den, r, c).map(|s_conj| s_conj.conj())
    })?;
    Ok(Spectrum::new(data))
}

/// Fills the coefficient map by dividing by the product of the
/// mean-removed window norms, clamped to `[-1 - 1e-9, 1 + 1e-9]`.
pub fn normalize_plane(p: &CorrelationPlane, w1: &Window, w2: &Window) -> CorrelationPlane {
    let centered_norm = |w: &Window| {
        let mean = w.mean();
        w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt()
    };
    let scale = centered_norm(w1) * centered_norm(w2);
    let mut out = p.clone();
    if scale > 0.0 && scale.is_finite() {
        let limit = 1.0 + 1e-9;
        out.normalized = Some(p.data.mapv(|v| (v / scale).clamp(-limit, limit)));
        out.unnormalizable = false;
    } else {
        out.normalized = None;
        out.unnormalizable = true;
    }
    out
}

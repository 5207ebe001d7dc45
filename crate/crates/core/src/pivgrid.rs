//! Interrogation grids, negative-context banks and the image-pair pipeline.

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::{ContextBank, CorrelationPlane, Correlator, MethodConfig};
use crate::error::{Error, Result};
use crate::peakfit::estimate_peak;
use crate::spectral::{forward_transform, Spectrum, Window};

pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_STEP: usize = 16;
pub const DEFAULT_CONTEXT_M: usize = 8;
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginPolicy {
    CropIncomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub window: usize,
    pub step: usize,
    pub margin: MarginPolicy,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            window: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            margin: MarginPolicy::CropIncomplete,
        }
    }
}

impl GridSpec {
    pub fn new(window: usize, step: usize) -> Result<Self> {
        let g = GridSpec {
            window,
            step,
            margin: MarginPolicy::CropIncomplete,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 8 || self.window % 2 != 0 {
            return Err(Error::Parameter(format!(
                "window must be an even integer >= 8, got {}",
                self.window
            )));
        }
        if self.step == 0 || self.step > self.window {
            return Err(Error::Parameter(format!(
                "step must be in 1..={}, got {}",
                self.window, self.step
            )));
        }
        Ok(())
    }

    /// Number of complete windows along each axis as `(nx, ny)`.
    pub fn shape_for(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if width < self.window || height < self.window {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} is smaller than one {0}x{0} window",
                self.window
            )));
        }
        Ok((
            (width - self.window) / self.step + 1,
            (height - self.window) / self.step + 1,
        ))
    }

    /// Pixel coordinates of the center of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let half = (self.window as f64 - 1.0) / 2.0;
        ((i * self.step) as f64 + half, (j * self.step) as f64 + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    BothFrames,
    Frame1,
    Frame2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    RandomExcludingSelf,
    GlobalAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub m: usize,
    pub source: ContextSource,
    pub sampling: Sampling,
    pub rng_seed: u64,
}

impl Default for ContextPolicy {
    fn default() -> Self {
        ContextPolicy {
            m: DEFAULT_CONTEXT_M,
            source: ContextSource::BothFrames,
            sampling: Sampling::GlobalAverage,
            rng_seed: 0,
        }
    }
}

impl ContextPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Parameter("context m must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorFlag {
    Valid,
    Outlier,
    Degenerate,
}

impl VectorFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorFlag::Valid => "valid",
            VectorFlag::Outlier => "outlier",
            VectorFlag::Degenerate => "degenerate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "valid" => Ok(VectorFlag::Valid),
            "outlier" => Ok(VectorFlag::Outlier),
            "degenerate" => Ok(VectorFlag::Degenerate),
            other => Err(Error::InvalidInput(format!("unknown vector flag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivVector {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub flag: VectorFlag,
    pub peak_value: f64,
    pub secondary_ratio: f64,
    pub fitted_sigma: Option<f64>,
}

impl PivVector {
    pub fn new(x: f64, y: f64, u: f64, v: f64) -> Self {
        PivVector {
            x,
            y,
            u,
            v,
            flag: VectorFlag::Valid,
            peak_value: 0.0,
            secondary_ratio: 0.0,
            fitted_sigma: None,
        }
    }

    /// Placeholder for a cell whose correlation could not be evaluated.
    pub fn degenerate(x: f64, y: f64) -> Self {
        PivVector {
            flag: VectorFlag::Degenerate,
            ..PivVector::new(x, y, 0.0, 0.0)
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.flag == VectorFlag::Degenerate
    }
}

/// Row-major grid of displacement vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub nx: usize,
    pub ny: usize,
    pub vectors: Vec<PivVector>,
}

impl VectorField {
    pub fn new(nx: usize, ny: usize, vectors: Vec<PivVector>) -> Result<Self> {
        if vectors.len() != nx * ny {
            return Err(Error::Dimension(format!(
                "{} vectors for a {nx}x{ny} grid",
                vectors.len()
            )));
        }
        Ok(VectorField { nx, ny, vectors })
    }

    /// Field sampled from `flow(x, y) -> (u, v)` at the grid centers.
    pub fn from_fn(
        width: usize,
        height: usize,
        grid: &GridSpec,
        flow: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self> {
        let (nx, ny) = grid.shape_for(width, height)?;
        let mut vectors = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = grid.center(i, j);
                let (u, v) = flow(x, y);
                vectors.push(PivVector::new(x, y, u, v));
            }
        }
        VectorField::new(nx, ny, vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> &PivVector {
        &self.vectors[j * self.nx + i]
    }

    pub fn count(&self, flag: VectorFlag) -> usize {
        self.vectors.iter().filter(|v| v.flag == flag).count()
    }

    /// Checks that two fields share shape and vector positions.
    pub fn check_same_grid(&self, other: &VectorField) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(Error::InvalidInput(format!(
                "grid mismatch: {}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        for (a, b) in self.vectors.iter().zip(&other.vectors) {
            if (a.x - b.x).abs() > 1e-6 || (a.y - b.y).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "grid mismatch: vector at ({}, {}) vs ({}, {})",
                    a.x, a.y, b.x, b.y
                )));
            }
        }
        Ok(())
    }
}

/// Row-major list of `(window, center)` pairs over complete grid cells.
pub fn extract_windows(image: &Array2<f64>, grid: &GridSpec) -> Result<Vec<(Window, (f64, f64))>> {
    let (height, width) = image.dim();
    let (nx, ny) = grid.shape_for(width, height)?;
    let n = grid.window;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x0, y0) = (i * grid.step, j * grid.step);
            let patch = image.slice(s![y0..y0 + n, x0..x0 + n]).to_owned();
            out.push((Window::new(patch)?, grid.center(i, j)));
        }
    }
    Ok(out)
}

/// Subtracts the window mean.
pub fn preprocess_window(w: &Window) -> Window {
    let mean = w.mean();
    Window::new(w.data().mapv(|v| v - mean)).expect("shape and finiteness preserved")
}

fn power(s: &Spectrum) -> Array2<f64> {
    s.data().mapv(|c| c.norm_sqr())
}

fn mean_power(spectra: &[&Spectrum], indices: &[usize]) -> Result<ContextBank> {
    let (w, h) = spectra[0].shape();
    let mut q = Array2::<f64>::zeros((h, w));
    for &i in indices {
        q += &power(spectra[i]);
    }
    q /= indices.len() as f64;
    let mut bank = ContextBank::new(q, indices.len())?;
    bank.sources = indices.to_vec();
    Ok(bank)
}

fn cell_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Context bank from a list of windows, leaving out `exclude_index`.
///
/// Windows are preprocessed before their power spectra are averaged.
pub fn build_context(
    windows: &[Window],
    policy: &ContextPolicy,
    exclude_index: Option<usize>,
) -> Result<ContextBank> {
    policy.validate()?;
    let candidates: Vec<usize> = (0..windows.len()).filter(|&i| Some(i) != exclude_index).collect();
    if candidates.is_empty() {
        return Err(Error::ContextUnavailable(
            "no windows besides the current one".into(),
        ));
    }
    let spectra: Vec<Spectrum> = windows
        .iter()
        .map(|w| forward_transform(&preprocess_window(w)))
        .collect();
    let refs: Vec<&Spectrum> = spectra.iter().collect();
    let chosen = match policy.sampling {
        Sampling::GlobalAverage => candidates,
        Sampling::RandomExcludingSelf => {
            pick(&candidates, policy.m, policy.rng_seed, exclude_index.unwrap_or(usize::MAX))
        }
    };
    mean_power(&refs, &chosen)
}

fn pick(candidates: &[usize], m: usize, seed: u64, cell: usize) -> Vec<usize> {
    if candidates.len() <= m {
        return candidates.to_vec();
    }
    let mut rng = cell_rng(seed, cell);
    let mut idx: Vec<usize> = sample(&mut rng, candidates.len(), m)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub subtract_mean: bool,
    pub fit_width: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            subtract_mean: true,
            fit_width: true,
        }
    }
}

/// Window spectra of an image pair, ready to be correlated by any method.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub grid: GridSpec,
    pub nx: usize,
    pub ny: usize,
    pub centers: Vec<(f64, f64)>,
    pub spectra1: Vec<Spectrum>,
    pub spectra2: Vec<Spectrum>,
    pub options: PipelineOptions,
}

impl PreparedPair {
    pub fn new(
        img1: &Array2<f64>,
        img2: &Array2<f64>,
        grid: &GridSpec,
        options: PipelineOptions,
    ) -> Result<Self> {
        if img1.dim() != img2.dim() {
            return Err(Error::InvalidInput(format!(
                "image shapes differ: {:?} vs {:?}",
                img1.dim(),
                img2.dim()
            )));
        }
        let (h, w) = img1.dim();
        let (nx, ny) = grid.shape_for(w, h)?;
        let w1 = extract_windows(img1, grid)?;
        let w2 = extract_windows(img2, grid)?;
        let centers = w1.iter().map(|(_, c)| *c).collect();
        let transform = |list: Vec<(Window, (f64, f64))>| -> Vec<Spectrum> {
            list.into_par_iter()
                .map(|(win, _)| {
                    if options.subtract_mean {
                        forward_transform(&preprocess_window(&win))
                    } else {
                        forward_transform(&win)
                    }
                })
                .collect()
        };
        Ok(PreparedPair {
            grid: *grid,
            nx,
            ny,
            centers,
            spectra1: transform(w1),
            spectra2: transform(w2),
            options,
        })
    }

    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    /// One context bank per cell under `policy`.
    pub fn contexts(&self, policy: &ContextPolicy) -> Result<Vec<ContextBank>> {
        policy.validate()?;
        let n = self.cells();
        let pool: Vec<(usize, &Spectrum)> = match policy.source {
            ContextSource::BothFrames => self
                .spectra1
                .iter()
                .chain(self.spectra2.iter())
                .enumerate()
                .map(|(k, s)| (k % n, s))
                .collect(),
            ContextSource::Frame1 => self.spectra1.iter().enumerate().collect(),
            ContextSource::Frame2 => self.spectra2.iter().enumerate().collect(),
        };
        let per_cell = pool.len() / n;
        if pool.len() == per_cell {
            return Err(Error::ContextUnavailable(
                "a single interrogation window leaves no negative context".into(),
            ));
        }
        match policy.sampling {
            Sampling::GlobalAverage => {
                let powers: Vec<Array2<f64>> = pool.iter().map(|(_, s)| power(s)).collect();
                let mut total = Array2::<f64>::zeros(powers[0].dim());
                for p in &powers {
                    total += p;
                }
                let count = (pool.len() - per_cell) as f64;
                (0..n)
                    .into_par_iter()
                    .map(|cell| {
                        let mut q = total.clone();
                        let mut sources = Vec::with_capacity(pool.len() - per_cell);
                        for (k, (owner, _)) in pool.iter().enumerate() {
                            if *owner == cell {
                                q -= &powers[k];
                            } else {
                                sources.push(k);
                            }
                        }
                        q.mapv_inplace(|v| (v / count).max(0.0));
                        let mut bank = ContextBank::new(q, sources.len())?;
                        bank.sources = sources;
                        Ok(bank)
                    })
                    .collect()
            }
            Sampling::RandomExcludingSelf => {
                let refs: Vec<&Spectrum> = pool.iter().map(|(_, s)| *s).collect();
                (0..n)
                    .into_par_iter()
                    .map(|cell| {
                        let candidates: Vec<usize> =
                            (0..pool.len()).filter(|&k| pool[k].0 != cell).collect();
                        let chosen = pick(&candidates, policy.m, policy.rng_seed, cell);
                        mean_power(&refs, &chosen)
                    })
                    .collect()
            }
        }
    }

    /// Correlates every cell with `cfg`; contexts are built only when needed.
    pub fn correlate(&self, cfg: &MethodConfig, policy: &ContextPolicy) -> Result<VectorField> {
        let contexts = if cfg.needs_context() {
            Some(self.contexts(policy)?)
        } else {
            None
        };
        self.correlate_with(cfg, contexts.as_deref())
    }

    /// Correlation plane of a single cell.
    pub fn correlation_plane(
        &self,
        cfg: &MethodConfig,
        policy: &ContextPolicy,
        cell: usize,
    ) -> Result<CorrelationPlane> {
        if cell >= self.cells() {
            return Err(Error::InvalidInput(format!(
                "cell {cell} outside a grid of {} cells",
                self.cells()
            )));
        }
        let n = self.grid.window;
        let correlator = Correlator::new(cfg.clone(), n, n)?;
        let contexts = if cfg.needs_context() {
            Some(self.contexts(policy)?)
        } else {
            None
        };
        correlator.correlate(
            &self.spectra1[cell],
            &self.spectra2[cell],
            contexts.as_ref().map(|c| &c[cell]),
        )
    }

    pub fn correlate_with(
        &self,
        cfg: &MethodConfig,
        contexts: Option<&[ContextBank]>,
    ) -> Result<VectorField> {
        let n = self.grid.window;
        let correlator = Correlator::new(cfg.clone(), n, n)?;
        if cfg.needs_context() && contexts.is_none() {
            return Err(Error::ContextUnavailable("method needs context banks".into()));
        }
        let vectors: Vec<PivVector> = (0..self.cells())
            .into_par_iter()
            .map(|k| {
                let (x, y) = self.centers[k];
                let ctx = contexts.map(|c| &c[k]);
                let plane = match correlator.correlate(&self.spectra1[k], &self.spectra2[k], ctx) {
                    Ok(p) => p,
                    Err(Error::DegenerateDenominator { .. }) => return Ok(PivVector::degenerate(x, y)),
                    Err(e) => return Err(e),
                };
                match estimate_peak(&plane, self.options.fit_width) {
                    Ok(est) => Ok(PivVector {
                        x,
                        y,
                        u: est.dx,
                        v: est.dy,
                        flag: VectorFlag::Valid,
                        peak_value: est.peak_value,
                        secondary_ratio: est.secondary_ratio,
                        fitted_sigma: est.fitted_sigma,
                    }),
                    Err(Error::NoPeak) => Ok(PivVector::degenerate(x, y)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        VectorField::new(self.nx, self.ny, vectors)
    }
}

/// Full pipeline: window extraction, preprocessing, context, correlation and
/// peak estimation.
pub fn process_pair(
    img1: &Array2<f64>,
    img2: &Array2<f64>,
    grid: &GridSpec,
    cfg: &MethodConfig,
    policy: &ContextPolicy,
) -> Result<VectorField> {
    PreparedPair::new(img1, img2, grid, PipelineOptions::default())?.correlate(cfg, policy)
}

/// Flags vectors whose squared deviation from `reference` exceeds
/// `threshold`. Degenerate vectors keep their flag.
pub fn detect_outliers(
    field: &VectorField,
    reference: &VectorField,
    threshold: f64,
) -> Result<(VectorField, usize)> {
    field.check_same_grid(reference)?;
    let mut out = field.clone();
    let mut count = 0;
    for (v, r) in out.vectors.iter_mut().zip(&reference.vectors) {
        if v.is_degenerate() {
            continue;
        }
        let d2 = (v.u - r.u).powi(2) + (v.v - r.v).powi(2);
        if d2 > threshold {
            v.flag = VectorFlag::Outlier;
            count += 1;
        } else {
            v.flag = VectorFlag::Valid;
        }
    }
    Ok((out, count))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median over each cell's 3x3 neighborhood (center
/// included, degenerate neighbors skipped).
pub fn median_reference(field: &VectorField) -> VectorField {
    let mut out = field.clone();
    for j in 0..field.ny {
        for i in 0..field.nx {
            let mut us = Vec::with_capacity(9);
            let mut vs = Vec::with_capacity(9);
            for jj in j.saturating_sub(1)..=(j + 1).min(field.ny - 1) {
                for ii in i.saturating_sub(1)..=(i + 1).min(field.nx - 1) {
                    let n = field.get(ii, jj);
                    if !n.is_degenerate() {
                        us.push(n.u);
                        vs.push(n.v);
                    }
                }
            }
            let v = &mut out.vectors[j * field.nx + i];
            if !us.is_empty() {
                v.u = median(&mut us);
                v.v = median(&mut vs);
            }
            if !v.is_degenerate() {
                v.flag = VectorFlag::Valid;
            }
        }
    }
    out
}

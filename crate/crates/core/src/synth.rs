//! Synthetic particle image pairs with known displacement.
//!
//! Images live on a periodic domain: particles that leave one side re-enter
//! on the other, so a uniform flow produces an exact circular translation of
//! the particle field.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pivgrid::{GridSpec, VectorField};

pub const MIN_IMAGE_SIZE: usize = 32;
pub const DEFAULT_INTENSITY_PEAK: f64 = 0.5;

/// How a particle's Gaussian profile becomes pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// `peak * exp(-r^2 / 2 sigma^2)` evaluated at pixel centers.
    PointSampled,
    /// The same profile integrated over each unit pixel.
    #[default]
    PixelIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    /// Particle image diameter in pixels (e^-2 convention, `sigma = d_p / 4`).
    pub d_p: f64,
    /// Particles per pixel.
    pub c_p: f64,
    pub intensity_peak: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub render: RenderMode,
}

impl Default for ParticleSpec {
    fn default() -> Self {
        ParticleSpec {
            d_p: 2.2,
            c_p: 0.02,
            intensity_peak: DEFAULT_INTENSITY_PEAK,
            rng_seed: 0,
            render: RenderMode::default(),
        }
    }
}

impl ParticleSpec {
    pub fn new(d_p: f64, c_p: f64, rng_seed: u64) -> Result<Self> {
        let p = ParticleSpec {
            d_p,
            c_p,
            rng_seed,
            ..ParticleSpec::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn sigma(&self) -> f64 {
        self.d_p / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_p > 0.0 && self.d_p.is_finite()) {
            return Err(Error::Parameter(format!("d_p must be positive, got {}", self.d_p)));
        }
        if !(self.c_p > 0.0 && self.c_p < 1.0) {
            return Err(Error::Parameter(format!("c_p must be in (0, 1), got {}", self.c_p)));
        }
        if !(self.intensity_peak > 0.0 && self.intensity_peak <= 1.0) {
            return Err(Error::Parameter(format!(
                "intensity_peak must be in (0, 1], got {}",
                self.intensity_peak
            )));
        }
        Ok(())
    }

    /// Expected standard deviation of a rendered, unclamped particle image,
    /// averaged over sub-pixel particle positions.
    pub fn expected_std(&self) -> f64 {
        let steps = 16;
        let radius = render_radius(self.sigma());
        let (mut flux, mut energy) = (0.0, 0.0);
        for j in 0..steps {
            for i in 0..steps {
                let x = (i as f64 + 0.5) / steps as f64;
                let y = (j as f64 + 0.5) / steps as f64;
                let wx = axis_weights(x, 0, radius, self.sigma(), self.render);
                let wy = axis_weights(y, 0, radius, self.sigma(), self.render);
                let (sx, sy) = (wx.iter().sum::<f64>(), wy.iter().sum::<f64>());
                let (qx, qy) = (wx.iter().map(|v| v * v).sum::<f64>(), wy.iter().map(|v| v * v).sum::<f64>());
                flux += sx * sy;
                energy += qx * qy;
            }
        }
        let n = (steps * steps) as f64;
        let mean = self.c_p * self.intensity_peak * flux / n;
        let second = self.c_p * self.intensity_peak.powi(2) * energy / n;
        (second - mean * mean).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSpec {
    Uniform { u: f64, v: f64 },
    /// Rigid rotation by `omega` radians about `(cx, cy)`.
    Rotation { cx: f64, cy: f64, omega: f64 },
    /// `u = dudy * (y - y0)`, `v = 0`.
    Shear { dudy: f64, y0: f64 },
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec::Uniform { u: 0.0, v: 0.0 }
    }
}

impl FlowSpec {
    pub fn uniform(u: f64, v: f64) -> Self {
        FlowSpec::Uniform { u, v }
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            FlowSpec::Uniform { u, v } => (u, v),
            FlowSpec::Rotation { cx, cy, omega } => {
                let (rx, ry) = (x - cx, y - cy);
                let (s, c) = omega.sin_cos();
                (c * rx - s * ry - rx, s * rx + c * ry - ry)
            }
            FlowSpec::Shear { dudy, y0 } => (dudy * (y - y0), 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FlowSpec::Uniform { u, v } => u.is_finite() && v.is_finite(),
            FlowSpec::Rotation { cx, cy, omega } => cx.is_finite() && cy.is_finite() && omega.is_finite(),
            FlowSpec::Shear { dudy, y0 } => dudy.is_finite() && y0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("flow parameters must be finite".into()))
        }
    }
}

/// Spatial structure of a background pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundPattern {
    /// Periodic Gaussian-filtered white noise with correlation length
    /// `length_scale` pixels.
    Smooth { length_scale: f64 },
    /// Stationary particles (e.g. deposits on a wall or window).
    StaticParticles { d_p: f64, c_p: f64 },
}

impl BackgroundPattern {
    fn validate(&self) -> Result<()> {
        match *self {
            BackgroundPattern::Smooth { length_scale } if !(length_scale > 0.0 && length_scale.is_finite()) => {
                Err(Error::Parameter("background length scale must be positive".into()))
            }
            BackgroundPattern::StaticParticles { d_p, c_p } if !(d_p > 0.0 && d_p.is_finite() && c_p > 0.0 && c_p < 1.0) => {
                Err(Error::Parameter("background particles need d_p > 0 and c_p in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Random pattern added identically to both frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    /// Standard deviation of the pattern.
    pub amplitude: f64,
    /// Mean of the pattern.
    pub offset: f64,
    pub pattern: BackgroundPattern,
    pub seed: u64,
}

impl BackgroundSpec {
    /// Pattern whose amplitude makes `particle std / background std = snr`.
    pub fn for_snr(snr: f64, particle: &ParticleSpec, pattern: BackgroundPattern, seed: u64) -> Result<Self> {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(Error::Parameter(format!("snr must be positive, got {snr}")));
        }
        let amplitude = particle.expected_std() / snr;
        let b = BackgroundSpec {
            amplitude,
            offset: 3.0 * amplitude,
            pattern,
            seed,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite() && self.offset.is_finite()) {
            return Err(Error::Parameter("background amplitude must be non-negative".into()));
        }
        self.pattern.validate()
    }

    /// The pattern normalized to mean `offset` and standard deviation
    /// `amplitude`.
    pub fn render(&self, size: usize) -> Result<Array2<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let raw = match self.pattern {
            BackgroundPattern::Smooth { length_scale } => smooth_noise(&mut rng, size, length_scale),
            BackgroundPattern::StaticParticles { d_p, c_p } => {
                let extent = size as f64;
                let particles: Vec<Particle> = (0..particle_count(size, c_p))
                    .map(|_| Particle {
                        x: rng.random_range(0.0..extent),
                        y: rng.random_range(0.0..extent),
                        peak: 1.0,
                    })
                    .collect();
                accumulate(size, &particles, d_p, RenderMode::PixelIntegrated)?
            }
        };
        let mean = raw.mean().unwrap_or(0.0);
        let std = raw.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
        let scale = if std > 0.0 { self.amplitude / std } else { 0.0 };
        Ok(raw.mapv(|v| (v - mean) * scale + self.offset))
    }
}

fn smooth_noise(rng: &mut ChaCha8Rng, size: usize, length_scale: f64) -> Array2<f64> {
    let white: Array2<f64> = Array2::from_shape_fn((size, size), |_| StandardNormal.sample(rng));
    let radius = (4.0 * length_scale).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * length_scale.powi(2))).exp())
        .collect();
    let n = size as i64;
    let blur_rows = Array2::from_shape_fn((size, size), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, w)| w * white[[y, (x as i64 + i as i64 - radius).rem_euclid(n) as usize]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((size, size), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, w)| w * blur_rows[[(y as i64 + i as i64 - radius).rem_euclid(n) as usize, x]])
            .sum::<f64>()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Independent per-frame Gaussian noise level.
    pub gaussian_sigma: f64,
    pub background: Option<BackgroundSpec>,
    /// Fraction of particles replaced by fresh ones in frame 2.
    pub out_of_plane_loss: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "gaussian_sigma must be non-negative, got {}",
                self.gaussian_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.out_of_plane_loss) {
            return Err(Error::Parameter(format!(
                "out_of_plane_loss must be in [0, 1), got {}",
                self.out_of_plane_loss
            )));
        }
        if let Some(b) = &self.background {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub peak: f64,
}

/// Sum of periodic Gaussian particles with `sigma = d_p / 4` sampled at
/// pixel centers, clamped to `[0, 1]`.
pub fn render_particles(size: usize, particles: &[Particle], d_p: f64) -> Result<Array2<f64>> {
    render_particles_with(size, particles, d_p, RenderMode::PointSampled)
}

pub fn render_particles_with(
    size: usize,
    particles: &[Particle],
    d_p: f64,
    mode: RenderMode,
) -> Result<Array2<f64>> {
    let mut img = accumulate(size, particles, d_p, mode)?;
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(img)
}

fn render_radius(sigma: f64) -> i64 {
    (9.0 * sigma).ceil() as i64 + 1
}

/// Profile weights of pixels `c - radius ..= c + radius` for a particle at `p`.
fn axis_weights(p: f64, c: i64, radius: i64, sigma: f64, mode: RenderMode) -> Vec<f64> {
    match mode {
        RenderMode::PointSampled => {
            let inv = 1.0 / (2.0 * sigma * sigma);
            (-radius..=radius)
                .map(|k| (-((c + k) as f64 - p).powi(2) * inv).exp())
                .collect()
        }
        RenderMode::PixelIntegrated => {
            let scale = 1.0 / (std::f64::consts::SQRT_2 * sigma);
            let norm = (std::f64::consts::PI / 2.0).sqrt() * sigma;
            (-radius..=radius)
                .map(|k| {
                    let x = (c + k) as f64 - p;
                    norm * (libm::erf((x + 0.5) * scale) - libm::erf((x - 0.5) * scale))
                })
                .collect()
        }
    }
}

fn accumulate(size: usize, particles: &[Particle], d_p: f64, mode: RenderMode) -> Result<Array2<f64>> {
    if size < MIN_IMAGE_SIZE {
        return Err(Error::InvalidInput(format!(
            "image size must be at least {MIN_IMAGE_SIZE}, got {size}"
        )));
    }
    if !(d_p > 0.0 && d_p.is_finite()) {
        return Err(Error::Parameter(format!("d_p must be positive, got {d_p}")));
    }
    let sigma = d_p / 4.0;
    let radius = render_radius(sigma);
    let n = size as i64;
    let mut img = Array2::<f64>::zeros((size, size));
    for p in particles {
        let (cx, cy) = (p.x.floor() as i64, p.y.floor() as i64);
        let gx = axis_weights(p.x, cx, radius, sigma, mode);
        let gy = axis_weights(p.y, cy, radius, sigma, mode);
        for (j, wy) in gy.iter().enumerate() {
            let row = (cy + j as i64 - radius).rem_euclid(n) as usize;
            for (i, wx) in gx.iter().enumerate() {
                let col = (cx + i as i64 - radius).rem_euclid(n) as usize;
                img[[row, col]] += p.peak * wx * wy;
            }
        }
    }
    Ok(img)
}

/// A rendered pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub image1: Array2<f64>,
    pub image2: Array2<f64>,
    pub truth: VectorField,
    pub particles1: Vec<Particle>,
    pub particles2: Vec<Particle>,
}

pub fn particle_count(size: usize, c_p: f64) -> usize {
    (c_p * (size * size) as f64).round() as usize
}

/// Renders a particle image pair displaced by `flow`, with truth sampled at
/// the centers of `grid`.
pub fn generate_pair(
    size: usize,
    particle: &ParticleSpec,
    flow: &FlowSpec,
    noise: &NoiseSpec,
    grid: &GridSpec,
) -> Result<SyntheticPair> {
    particle.validate()?;
    flow.validate()?;
    noise.validate()?;
    let truth = VectorField::from_fn(size, size, grid, |x, y| flow.displacement(x, y))?;
    let mut rng = ChaCha8Rng::seed_from_u64(particle.rng_seed);
    let extent = size as f64;
    let peak = particle.intensity_peak;
    let count = particle_count(size, particle.c_p);
    let particles1: Vec<Particle> = (0..count)
        .map(|_| Particle {
            x: rng.random_range(0.0..extent),
            y: rng.random_range(0.0..extent),
            peak,
        })
        .collect();
    let particles2: Vec<Particle> = particles1
        .iter()
        .map(|p| {
            if noise.out_of_plane_loss > 0.0 && rng.random::<f64>() < noise.out_of_plane_loss {
                Particle {
                    x: rng.random_range(0.0..extent),
                    y: rng.random_range(0.0..extent),
                    peak,
                }
            } else {
                let (u, v) = flow.displacement(p.x, p.y);
                Particle {
                    x: (p.x + u).rem_euclid(extent),
                    y: (p.y + v).rem_euclid(extent),
                    peak,
                }
            }
        })
        .collect();
    let mut image1 = accumulate(size, &particles1, particle.d_p, particle.render)?;
    let mut image2 = accumulate(size, &particles2, particle.d_p, particle.render)?;
    if let Some(bg) = &noise.background {
        let pattern = bg.render(size)?;
        image1 += &pattern;
        image2 += &pattern;
    }
    if noise.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.gaussian_sigma)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        image1.mapv_inplace(|v| v + normal.sample(&mut rng));
        image2.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    image1.mapv_inplace(|v| v.clamp(0.0, 1.0));
    image2.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(SyntheticPair {
        image1,
        image2,
        truth,
        particles1,
        particles2,
    })
}

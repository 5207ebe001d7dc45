//! Monte Carlo assessment: RMSE and bias sweeps, peak-locking probes and
//! outlier counts, with CSV/JSON reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::MethodConfig;
use crate::error::{Error, Result};
use crate::pivgrid::{
    detect_outliers, ContextPolicy, GridSpec, PipelineOptions, PreparedPair, VectorFlag,
    DEFAULT_OUTLIER_THRESHOLD,
};
use crate::synth::{generate_pair, FlowSpec, NoiseSpec, ParticleSpec};

pub const CSV_HEADER: [&str; 10] = [
    "method",
    "dx_true",
    "dy_true",
    "rmse",
    "bias_x",
    "bias_y",
    "outliers",
    "degenerate",
    "sigma_fit",
    "seconds_per_pair",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub methods: Vec<MethodConfig>,
    pub displacements: Vec<(f64, f64)>,
    pub runs: usize,
    pub particle: ParticleSpec,
    pub noise: NoiseSpec,
    pub grid: GridSpec,
    pub image_size: usize,
    pub seed: u64,
    pub context: ContextPolicy,
    pub outlier_threshold: f64,
    /// Record wall time per pair; off by default so reports are reproducible.
    pub timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            methods: vec![MethodConfig::scc()],
            displacements: vec![(0.0, 0.0), (0.25, 0.0), (0.5, 0.0), (0.75, 0.0), (1.0, 0.0)],
            runs: 100,
            particle: ParticleSpec::default(),
            noise: NoiseSpec::default(),
            grid: GridSpec::default(),
            image_size: 256,
            seed: 0,
            context: ContextPolicy::default(),
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Parameter("runs must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter("at least one method is required".into()));
        }
        if self.displacements.is_empty() {
            return Err(Error::Parameter("at least one displacement is required".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        self.particle.validate()?;
        self.noise.validate()?;
        self.grid.validate()?;
        self.context.validate()?;
        let limit = self.grid.window as f64 / 4.0;
        for &(dx, dy) in &self.displacements {
            if !(dx.is_finite() && dy.is_finite()) || dx.hypot(dy) > limit {
                return Err(Error::Parameter(format!(
                    "displacement ({dx}, {dy}) exceeds window/4 = {limit}"
                )));
            }
        }
        if !(self.outlier_threshold >= 0.0) {
            return Err(Error::Parameter("outlier threshold must be non-negative".into()));
        }
        self.grid.shape_for(self.image_size, self.image_size)?;
        Ok(())
    }

    /// Seed for run `r`; the same images are used for every method.
    pub fn run_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementStats {
    pub dx_true: f64,
    pub dy_true: f64,
    pub rmse: f64,
    pub bias_x: f64,
    pub bias_y: f64,
    /// Non-degenerate vectors pooled into the statistics.
    pub vectors: usize,
    pub outliers: usize,
    pub degenerate: usize,
    pub sigma_fit: Option<f64>,
    pub seconds_per_pair: f64,
}

impl DisplacementStats {
    pub fn bias_magnitude(&self) -> f64 {
        self.bias_x.hypot(self.bias_y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub config: MethodConfig,
    pub rows: Vec<DisplacementStats>,
}

impl MethodReport {
    pub fn outliers(&self) -> usize {
        self.rows.iter().map(|r| r.outliers).sum()
    }

    pub fn degenerate(&self) -> usize {
        self.rows.iter().map(|r| r.degenerate).sum()
    }

    pub fn mean_rmse(&self) -> f64 {
        self.rows.iter().map(|r| r.rmse).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean fitted peak width over all rows that have one.
    pub fn mean_sigma_fit(&self) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.sigma_fit).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Mean bias magnitude over rows whose true displacement has a
    /// half-integer component.
    pub fn half_integer_bias(&self) -> Option<f64> {
        let half = |d: f64| (d.abs().fract() - 0.5).abs() < 1e-12;
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| half(r.dx_true) || half(r.dy_true))
            .map(|r| r.bias_magnitude())
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    sq: f64,
    ex: f64,
    ey: f64,
    n: usize,
    outliers: usize,
    degenerate: usize,
    sigma: f64,
    sigma_n: usize,
    seconds: f64,
}

impl Accum {
    fn merge(&mut self, o: &Accum) {
        self.sq += o.sq;
        self.ex += o.ex;
        self.ey += o.ey;
        self.n += o.n;
        self.outliers += o.outliers;
        self.degenerate += o.degenerate;
        self.sigma += o.sigma;
        self.sigma_n += o.sigma_n;
        self.seconds += o.seconds;
    }
}

/// Statistics of every method on one generated pair.
fn run_cell(spec: &ExperimentSpec, disp: (f64, f64), run: usize) -> Result<Vec<Accum>> {
    let particle = ParticleSpec {
        rng_seed: spec.run_seed(run),
        ..spec.particle
    };
    let pair = generate_pair(
        spec.image_size,
        &particle,
        &FlowSpec::uniform(disp.0, disp.1),
        &spec.noise,
        &spec.grid,
    )?;
    let options = PipelineOptions {
        subtract_mean: true,
        fit_width: true,
    };
    let prep = PreparedPair::new(&pair.image1, &pair.image2, &spec.grid, options)?;
    let contexts = if spec.methods.iter().any(|m| m.needs_context()) {
        Some(prep.contexts(&spec.context)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(spec.methods.len());
    for cfg in &spec.methods {
        let start = spec.timing.then(Instant::now);
        let field = prep.correlate_with(cfg, contexts.as_deref())?;
        let seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let (flagged, outliers) = detect_outliers(&field, &pair.truth, spec.outlier_threshold)?;
        let mut acc = Accum {
            outliers,
            seconds,
            ..Accum::default()
        };
        for (v, t) in flagged.vectors.iter().zip(&pair.truth.vectors) {
            if v.flag == VectorFlag::Degenerate {
                acc.degenerate += 1;
                continue;
            }
            let (ex, ey) = (v.u - t.u, v.v - t.v);
            acc.sq += ex * ex + ey * ey;
            acc.ex += ex;
            acc.ey += ey;
            acc.n += 1;
            if let Some(s) = v.fitted_sigma {
                acc.sigma += s;
                acc.sigma_n += 1;
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// RMSE and bias for every method and displacement over `spec.runs` pairs.
///
/// RMSE pools both components: `sqrt(mean(|d_est - d_true|^2))`. Degenerate
/// vectors are counted but left out of the statistics.
pub fn run_rmse_sweep(spec: &ExperimentSpec) -> Result<Vec<MethodReport>> {
    spec.validate()?;
    let nd = spec.displacements.len();
    let cells: Vec<(usize, usize)> = (0..nd)
        .flat_map(|d| (0..spec.runs).map(move |r| (d, r)))
        .collect();
    let results: Vec<Vec<Accum>> = cells
        .par_iter()
        .map(|&(d, r)| run_cell(spec, spec.displacements[d], r))
        .collect::<Result<_>>()?;
    let nm = spec.methods.len();
    let mut totals = vec![vec![Accum::default(); nd]; nm];
    for (&(d, _), per_method) in cells.iter().zip(&results) {
        for (m, acc) in per_method.iter().enumerate() {
            totals[m][d].merge(acc);
        }
    }
    let pairs = spec.runs as f64;
    Ok(spec
        .methods
        .iter()
        .zip(totals)
        .map(|(cfg, per_disp)| MethodReport {
            method: cfg.name(),
            config: cfg.clone(),
            rows: per_disp
                .iter()
                .zip(&spec.displacements)
                .map(|(a, &(dx, dy))| {
                    let n = a.n as f64;
                    let (rmse, bx, by) = if a.n > 0 {
                        ((a.sq / n).sqrt(), a.ex / n, a.ey / n)
                    } else {
                        (f64::NAN, f64::NAN, f64::NAN)
                    };
                    DisplacementStats {
                        dx_true: dx,
                        dy_true: dy,
                        rmse,
                        bias_x: bx,
                        bias_y: by,
                        vectors: a.n,
                        outliers: a.outliers,
                        degenerate: a.degenerate,
                        sigma_fit: (a.sigma_n > 0).then(|| a.sigma / a.sigma_n as f64),
                        seconds_per_pair: a.seconds / pairs,
                    }
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeaklockComparison {
    pub method_a: String,
    pub method_b: String,
    pub bias_a: f64,
    pub bias_b: f64,
    /// `bias_a / bias_b` (1 when both are zero).
    pub ratio: f64,
}

/// Mean |bias| at half-integer displacements for two methods on the same
/// images.
pub fn run_peaklock_probe(
    spec: &ExperimentSpec,
    a: &MethodConfig,
    b: &MethodConfig,
) -> Result<PeaklockComparison> {
    let mut probe = spec.clone();
    probe.methods = vec![a.clone(), b.clone()];
    let reports = run_rmse_sweep(&probe)?;
    let bias = |r: &MethodReport| {
        r.half_integer_bias().ok_or_else(|| {
            Error::Parameter("peak-locking probe needs half-integer displacements".into())
        })
    };
    let (ba, bb) = (bias(&reports[0])?, bias(&reports[1])?);
    let ratio = if ba == bb { 1.0 } else { ba / bb };
    Ok(PeaklockComparison {
        method_a: reports[0].method.clone(),
        method_b: reports[1].method.clone(),
        bias_a: ba,
        bias_b: bb,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRow {
    pub method: String,
    pub outliers: usize,
    pub degenerate: usize,
    pub vectors: usize,
}

/// Outlier counts against the known truth, summed over runs and
/// displacements. Requires a shared background in `spec.noise`.
pub fn run_robustness_trial(spec: &ExperimentSpec) -> Result<(Vec<OutlierRow>, Vec<MethodReport>)> {
    if spec.noise.background.is_none() {
        return Err(Error::Parameter("robustness trial needs a background pattern".into()));
    }
    let reports = run_rmse_sweep(spec)?;
    let table = reports
        .iter()
        .map(|r| OutlierRow {
            method: r.method.clone(),
            outliers: r.outliers(),
            degenerate: r.degenerate(),
            vectors: r.rows.iter().map(|s| s.vectors + s.degenerate).sum(),
        })
        .collect();
    Ok((table, reports))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes the CSV rows (one per method and displacement) to `w`.
pub fn write_csv<W: Write>(reports: &[MethodReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        for s in &r.rows {
            out.write_record([
                r.method.clone(),
                fmt_f64(s.dx_true),
                fmt_f64(s.dy_true),
                fmt_f64(s.rmse),
                fmt_f64(s.bias_x),
                fmt_f64(s.bias_y),
                s.outliers.to_string(),
                s.degenerate.to_string(),
                s.sigma_fit.map(fmt_f64).unwrap_or_default(),
                fmt_f64(s.seconds_per_pair),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spec: ExperimentSpec,
    pub reports: Vec<MethodReport>,
}

/// Writes `<csv_path>` and a JSON summary (spec plus reports) to `<json_path>`.
pub fn emit_report(
    spec: &ExperimentSpec,
    reports: &[MethodReport],
    csv_path: &Path,
    json_path: &Path,
) -> Result<()> {
    write_csv(reports, BufWriter::new(File::create(csv_path)?))?;
    let summary = Summary {
        spec: spec.clone(),
        reports: reports.to_vec(),
    };
    let mut f = BufWriter::new(File::create(json_path)?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

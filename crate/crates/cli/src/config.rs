//! Key-value experiment configuration for the `benchmark` subcommand.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! | key | value |
//! |-----|-------|
//! | `mode` | `sweep` or `robustness` |
//! | `methods` | comma-separated method names |
//! | `displacements` | `dx,dy` pairs separated by `;` |
//! | `runs`, `size`, `seed` | integers |
//! | `dp`, `cp`, `intensity` | particle diameter, density, peak intensity |
//! | `render` | `integrated` or `point` |
//! | `noise_sigma`, `loss` | per-frame Gaussian noise, out-of-plane loss fraction |
//! | `background` | `none`, `smooth` or `particles` |
//! | `background_snr`, `background_scale`, `background_dp`, `background_cp`, `background_seed` | background pattern |
//! | `window`, `step` | interrogation grid |
//! | `context_m`, `context_source`, `context_sampling`, `context_seed` | negative context policy |
//! | `threshold` | outlier threshold on squared deviation |
//! | `timing` | `true` to record wall time per pair |

use std::str::FromStr;

use sbcc_core::bench::ExperimentSpec;
use sbcc_core::correlators::MethodConfig;
use sbcc_core::pivgrid::{ContextSource, Sampling};
use sbcc_core::synth::{BackgroundPattern, BackgroundSpec, RenderMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sweep,
    Robustness,
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "sweep" => Ok(Mode::Sweep),
            "robustness" => Ok(Mode::Robustness),
            other => Err(CliError::Usage(format!("mode: expected sweep or robustness, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub mode: Mode,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, Copy)]
enum BackgroundKind {
    None,
    Smooth,
    Particles,
}

fn value<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse::<T>()
        .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{v}'")))
}

pub fn parse_methods(list: &str) -> CliResult<Vec<MethodConfig>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| MethodConfig::from_name(name).map_err(CliError::from_flags))
        .collect()
}

pub fn parse_displacements(list: &str) -> CliResult<Vec<(f64, f64)>> {
    list.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [dx, dy] => Ok((value("displacements", dx)?, value("displacements", dy)?)),
                _ => Err(CliError::Usage(format!("config key 'displacements': bad pair '{pair}'"))),
            }
        })
        .collect()
}

pub fn parse_config(text: &str) -> CliResult<BenchConfig> {
    let mut spec = ExperimentSpec::default();
    let mut mode = Mode::Sweep;
    let mut bg = BackgroundKind::None;
    let mut bg_snr = 2.0;
    let mut bg_scale = 4.0;
    let mut bg_dp: Option<f64> = None;
    let mut bg_cp: Option<f64> = None;
    let mut bg_seed: Option<u64> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", lineno + 1)))?;
        match key {
            "mode" => mode = val.parse()?,
            "methods" => spec.methods = parse_methods(val)?,
            "displacements" => spec.displacements = parse_displacements(val)?,
            "runs" => spec.runs = value(key, val)?,
            "size" => spec.image_size = value(key, val)?,
            "seed" => spec.seed = value(key, val)?,
            "dp" => spec.particle.d_p = value(key, val)?,
            "cp" => spec.particle.c_p = value(key, val)?,
            "intensity" => spec.particle.intensity_peak = value(key, val)?,
            "render" => {
                spec.particle.render = match val {
                    "integrated" => RenderMode::PixelIntegrated,
                    "point" => RenderMode::PointSampled,
                    _ => return Err(CliError::Usage(format!("config key 'render': unknown mode '{val}'"))),
                }
            }
            "noise_sigma" => spec.noise.gaussian_sigma = value(key, val)?,
            "loss" => spec.noise.out_of_plane_loss = value(key, val)?,
            "background" => {
                bg = match val {
                    "none" => BackgroundKind::None,
                    "smooth" => BackgroundKind::Smooth,
                    "particles" => BackgroundKind::Particles,
                    _ => return Err(CliError::Usage(format!("config key 'background': unknown kind '{val}'"))),
                }
            }
            "background_snr" => bg_snr = value(key, val)?,
            "background_scale" => bg_scale = value(key, val)?,
            "background_dp" => bg_dp = Some(value(key, val)?),
            "background_cp" => bg_cp = Some(value(key, val)?),
            "background_seed" => bg_seed = Some(value(key, val)?),
            "window" => spec.grid.window = value(key, val)?,
            "step" => spec.grid.step = value(key, val)?,
            "context_m" => spec.context.m = value(key, val)?,
            "context_seed" => spec.context.rng_seed = value(key, val)?,
            "context_source" => {
                spec.context.source = match val {
                    "both_frames" | "both" => ContextSource::BothFrames,
                    "frame1" => ContextSource::Frame1,
                    "frame2" => ContextSource::Frame2,
                    _ => return Err(CliError::Usage(format!("config key 'context_source': unknown '{val}'"))),
                }
            }
            "context_sampling" => {
                spec.context.sampling = match val {
                    "global_average" | "global" => Sampling::GlobalAverage,
                    "random_excluding_self" | "random" => Sampling::RandomExcludingSelf,
                    _ => return Err(CliError::Usage(format!("config key 'context_sampling': unknown '{val}'"))),
                }
            }
            "threshold" => spec.outlier_threshold = value(key, val)?,
            "timing" => spec.timing = value(key, val)?,
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
    }
    let pattern = match bg {
        BackgroundKind::None => None,
        BackgroundKind::Smooth => Some(BackgroundPattern::Smooth { length_scale: bg_scale }),
        BackgroundKind::Particles => Some(BackgroundPattern::StaticParticles {
            d_p: bg_dp.unwrap_or(spec.particle.d_p),
            c_p: bg_cp.unwrap_or(spec.particle.c_p),
        }),
    };
    if let Some(pattern) = pattern {
        let seed = bg_seed.unwrap_or(spec.seed.wrapping_add(1 << 32));
        spec.noise.background =
            Some(BackgroundSpec::for_snr(bg_snr, &spec.particle, pattern, seed).map_err(CliError::from_flags)?);
    }
    if mode == Mode::Robustness && spec.noise.background.is_none() {
        return Err(CliError::Usage("mode = robustness needs a background".into()));
    }
    spec.validate().map_err(CliError::from_flags)?;
    Ok(BenchConfig { mode, spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = parse_config("methods = scc\ndisplacements = 0.5,0\nruns = 2 # two runs\n").unwrap();
        assert_eq!(cfg.mode, Mode::Sweep);
        assert_eq!(cfg.spec.methods, vec![MethodConfig::scc()]);
        assert_eq!(cfg.spec.displacements, vec![(0.5, 0.0)]);
        assert_eq!(cfg.spec.runs, 2);
        assert_eq!(cfg.spec.grid.window, 32);
    }

    #[test]
    fn unknown_key_named() {
        let err = parse_config("runz = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("runz")));
        let err = parse_config("runs = three\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("runs")));
    }

    #[test]
    fn robustness_config() {
        let text = "mode = robustness\nbackground = particles\nbackground_snr = 2\nmethods = rpc, sbcc\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mode, Mode::Robustness);
        let bg = cfg.spec.noise.background.unwrap();
        assert!(matches!(bg.pattern, BackgroundPattern::StaticParticles { .. }));
        assert!((bg.amplitude * 2.0 - cfg.spec.particle.expected_std()).abs() < 1e-15);
        assert!(parse_config("mode = robustness\n").is_err());
    }

    #[test]
    fn bad_method_and_displacement() {
        assert!(parse_config("methods = nope\n").is_err());
        assert!(parse_config("displacements = 1;2\n").is_err());
        assert!(parse_config("displacements = 20,0\n").is_err());
    }
}

//! Monte Carlo lifetime statistics over perturbed material parameters.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::LogNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_simulation, OutputOptions, SimInputs};
use crate::error::Result;
use crate::params::McSettings;
use crate::stress::MaterialParams;

/// Multiplicative factors applied to one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    /// Scales `d0`, hence κ everywhere.
    pub kappa_scale: f64,
    pub sigma_crit_scale: f64,
}

/// Lognormal with unit median and coefficient of variation `cov`.
pub fn unit_lognormal(cov: f64) -> LogNormal<f64> {
    let sigma = (1.0 + cov * cov).ln().sqrt();
    LogNormal::new(0.0, sigma).expect("finite non-negative sigma")
}

/// Independent stream for sample `index`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn draw_perturbation(cfg: &McSettings, index: usize) -> Perturbation {
    if cfg.cov == 0.0 {
        return Perturbation {
            kappa_scale: 1.0,
            sigma_crit_scale: 1.0,
        };
    }
    let dist = unit_lognormal(cfg.cov);
    let mut rng = sample_rng(cfg.seed, index);
    // Both draws are always taken so toggling one parameter leaves the
    // other's sequence unchanged.
    let k: f64 = rng.sample(dist);
    let s: f64 = rng.sample(dist);
    Perturbation {
        kappa_scale: if cfg.vary_kappa { k } else { 1.0 },
        sigma_crit_scale: if cfg.vary_sigma_crit { s } else { 1.0 },
    }
}

/// Material parameters for sample `index`; identical to `base` when
/// `cov == 0`.
pub fn sample_params(base: &MaterialParams, cfg: &McSettings, index: usize) -> MaterialParams {
    let p = draw_perturbation(cfg, index);
    MaterialParams {
        d0: base.d0 * p.kappa_scale,
        sigma_crit: base.sigma_crit * p.sigma_crit_scale,
        ..*base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleOutcome {
    Failed { ttf: f64 },
    Censored,
    Errored { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub perturbation: Perturbation,
    pub outcome: SampleOutcome,
    pub final_max_drop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TtfStats {
    pub mean: f64,
    pub std: f64,
    pub cov: f64,
}

/// Mean, sample standard deviation and CoV; `None` for an empty slice.
pub fn ttf_stats(ttfs: &[f64]) -> Option<TtfStats> {
    if ttfs.is_empty() {
        return None;
    }
    let n = ttfs.len() as f64;
    let mean = ttfs.iter().sum::<f64>() / n;
    let var = if ttfs.len() > 1 {
        ttfs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    Some(TtfStats {
        mean,
        std,
        cov: std / mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub settings: McSettings,
    pub horizon: f64,
    pub samples: Vec<SampleRecord>,
    pub failed: usize,
    pub censored: usize,
    pub errored: usize,
    /// Over uncensored failure times only.
    pub stats: Option<TtfStats>,
}

impl McReport {
    pub fn failure_times(&self) -> Vec<f64> {
        self.samples
            .iter()
            .filter_map(|s| match s.outcome {
                SampleOutcome::Failed { ttf } => Some(ttf),
                _ => None,
            })
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "sample,ttf_or_censored")?;
        for s in &self.samples {
            let v = match &s.outcome {
                SampleOutcome::Failed { ttf } => ttf.to_string(),
                SampleOutcome::Censored => "censored".into(),
                SampleOutcome::Errored { .. } => "error".into(),
            };
            writeln!(w, "{},{v}", s.index)?;
        }
        Ok(())
    }
}

/// Run the full pipeline once per sample. A failing sample is recorded and
/// does not stop the others.
pub fn run_mc(inputs: &SimInputs, cfg: &McSettings) -> Result<McReport> {
    cfg.validate()?;
    inputs.params.validate()?;
    let base = inputs.params.material;
    let samples: Vec<SampleRecord> = (0..cfg.samples)
        .into_par_iter()
        .map(|index| {
            let perturbation = draw_perturbation(cfg, index);
            let mut sample = inputs.clone();
            sample.params.material = sample_params(&base, cfg, index);
            let (outcome, final_max_drop) = match run_simulation(&sample, &OutputOptions::default()) {
                Ok(r) => (
                    match r.ttf {
                        Some(ttf) => SampleOutcome::Failed { ttf },
                        None => SampleOutcome::Censored,
                    },
                    Some(r.final_max_drop),
                ),
                Err(e) => {
                    log::warn!("sample {index} failed: {e}");
                    (SampleOutcome::Errored { message: e.to_string() }, None)
                }
            };
            SampleRecord {
                index,
                perturbation,
                outcome,
                final_max_drop,
            }
        })
        .collect();
    let count = |f: fn(&SampleOutcome) -> bool| samples.iter().filter(|s| f(&s.outcome)).count();
    let failed = count(|o| matches!(o, SampleOutcome::Failed { .. }));
    let censored = count(|o| matches!(o, SampleOutcome::Censored));
    let errored = count(|o| matches!(o, SampleOutcome::Errored { .. }));
    let mut report = McReport {
        settings: *cfg,
        horizon: inputs.params.sim.horizon(),
        samples,
        failed,
        censored,
        errored,
        stats: None,
    };
    report.stats = ttf_stats(&report.failure_times());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(cov: f64) -> McSettings {
        McSettings {
            cov,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn zero_cov_reproduces_base() {
        let base = MaterialParams::default();
        for i in 0..5 {
            assert_eq!(sample_params(&base, &settings(0.0), i), base);
        }
    }

    #[test]
    fn draws_are_deterministic_per_index() {
        let cfg = settings(0.2);
        assert_eq!(draw_perturbation(&cfg, 7), draw_perturbation(&cfg, 7));
        assert_ne!(draw_perturbation(&cfg, 7), draw_perturbation(&cfg, 8));
    }

    #[test]
    fn empirical_cov_matches_target() {
        let cfg = settings(0.2);
        let draws: Vec<f64> = (0..100_000)
            .map(|i| draw_perturbation(&cfg, i).sigma_crit_scale)
            .collect();
        let s = ttf_stats(&draws).unwrap();
        assert!((s.cov - 0.2).abs() < 0.02 * 0.2, "cov {}", s.cov);
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((median - 1.0).abs() < 0.01, "median {median}");
    }

    #[test]
    fn disabled_parameter_keeps_unit_factor() {
        let cfg = McSettings {
            vary_kappa: false,
            ..settings(0.3)
        };
        let p = draw_perturbation(&cfg, 3);
        assert_eq!(p.kappa_scale, 1.0);
        assert_eq!(
            p.sigma_crit_scale,
            draw_perturbation(&settings(0.3), 3).sigma_crit_scale
        );
    }

    #[test]
    fn stats_of_empty_and_constant() {
        assert!(ttf_stats(&[]).is_none());
        let s = ttf_stats(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.std, s.cov), (2.0, 0.0, 0.0));
    }
}

//! Parameter file: a YAML subset of `key: value` lines.
//!
//! A line ending in `:` opens a section; indented keys below it are read as
//! `section.key`. Dotted keys may also be written out in full. `#` starts a
//! comment. Layer geometry lives in `layer_<N>` sections (`layer_default`
//! for the fallback).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::failure::FailureConfig;
use crate::krylov::KrylovConfig;
use crate::netlist::{LayerGeometry, LayerTable, ParseOptions};
use crate::stress::MaterialParams;
use crate::thermal::ThermalParams;

/// Shortest round-trip form, in exponent notation outside `[1e-3, 1e6)`.
fn num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSettings {
    pub outer_steps: usize,
    /// Outer (IR update) step, s.
    pub outer_dt: f64,
    /// Inner stress step, s; defaults to `outer_dt / 100`.
    pub inner_dt: Option<f64>,
    /// Target stress grid spacing, m.
    pub target_dx: f64,
    pub screening: bool,
    pub seed: u64,
    /// Stop once the network TTF has been crossed.
    pub early_stop: bool,
    /// Netlist coordinate unit, m.
    pub coord_unit: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            outer_steps: 10,
            outer_dt: 5e6,
            inner_dt: None,
            target_dx: 1e-6,
            screening: true,
            seed: 0,
            early_stop: false,
            coord_unit: 1e-6,
        }
    }
}

impl SimSettings {
    pub fn inner_dt(&self) -> f64 {
        self.inner_dt.unwrap_or(self.outer_dt / 100.0)
    }

    pub fn horizon(&self) -> f64 {
        self.outer_steps as f64 * self.outer_dt
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Param {
                key: format!("sim.{key}"),
                msg,
            })
        };
        if self.outer_steps == 0 {
            return bad("outer_steps", "must be at least 1".into());
        }
        if !(self.outer_dt > 0.0 && self.outer_dt.is_finite()) {
            return bad("outer_dt", format!("must be positive, got {}", self.outer_dt));
        }
        let inner = self.inner_dt();
        if !(inner > 0.0 && inner <= self.outer_dt) {
            return bad("inner_dt", format!("must lie in (0, outer_dt], got {inner}"));
        }
        if self.target_dx.is_nan() || self.target_dx <= 0.0 {
            return bad("target_dx", format!("must be positive, got {}", self.target_dx));
        }
        if self.coord_unit.is_nan() || self.coord_unit <= 0.0 {
            return bad("coord_unit", format!("must be positive, got {}", self.coord_unit));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSettings {
    pub samples: usize,
    pub cov: f64,
    pub seed: u64,
    pub vary_kappa: bool,
    pub vary_sigma_crit: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            samples: 100,
            cov: 0.2,
            seed: 0,
            vary_kappa: true,
            vary_sigma_crit: true,
        }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Param {
                key: "mc.samples".into(),
                msg: "must be at least 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.cov) {
            return Err(Error::Param {
                key: "mc.cov".into(),
                msg: format!("must lie in [0, 1), got {}", self.cov),
            });
        }
        Ok(())
    }
}

/// Everything a run needs besides the netlist and thermal map.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Params {
    pub material: MaterialParams,
    pub thermal: ThermalParams,
    pub sim: SimSettings,
    pub krylov: KrylovConfig,
    pub failure: FailureConfig,
    pub mc: McSettings,
    #[serde(skip)]
    pub layers: LayerTable,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.thermal.validate()?;
        self.sim.validate()?;
        self.krylov.validate()?;
        self.failure.validate()?;
        self.mc.validate()
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            layers: self.layers.clone(),
            coord_unit: self.sim.coord_unit,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (key, (line, value)) in flatten(text)? {
            p.set(&key, &value).map_err(|e| match e {
                Error::Param { key, msg } => Error::Param {
                    key,
                    msg: format!("{msg} (line {line})"),
                },
                other => other,
            })?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Set one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value.parse::<f64>().map_err(|_| Error::Param {
                key: key.to_string(),
                msg: format!("expected a number, got {value:?}"),
            })
        };
        let int = || -> Result<u64> {
            value.parse::<u64>().map_err(|_| Error::Param {
                key: key.to_string(),
                msg: format!("expected a non-negative integer, got {value:?}"),
            })
        };
        let flag = || -> Result<bool> {
            match value {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Param {
                    key: key.to_string(),
                    msg: format!("expected true/false, got {value:?}"),
                }),
            }
        };
        let m = &mut self.material;
        let t = &mut self.thermal;
        let s = &mut self.sim;
        let k = &mut self.krylov;
        match key {
            "material.e_charge" => m.e_charge = num()?,
            "material.z_eff" => m.z_eff = num()?,
            "material.rho_el" => m.rho_el = num()?,
            "material.omega" => m.omega = num()?,
            "material.d0" => m.d0 = num()?,
            "material.ea" => m.ea = num()?,
            "material.ea_ev" => m.ea = num()? * m.e_charge,
            "material.kb" => m.kb = num()?,
            "material.bulk_modulus" => m.bulk_modulus = num()?,
            "material.sigma_t" => m.sigma_t = num()?,
            "material.sigma_crit" => m.sigma_crit = num()?,
            "material.delta" => m.delta = num()?,
            "material.q_star" => m.q_star = num()?,
            "material.rho_ta" => m.rho_ta = num()?,
            "material.h_ta" => m.h_ta = num()?,
            "thermal.k_cu" => t.k_cu = num()?,
            "thermal.k_ild" => t.k_ild = num()?,
            "thermal.t_cu" => t.t_cu = num()?,
            "thermal.t_ild" => t.t_ild = num()?,
            "thermal.t0" => t.t0 = num()?,
            "thermal.rho_cu" => t.rho_cu = num()?,
            "sim.outer_steps" => s.outer_steps = int()? as usize,
            "sim.outer_dt" => s.outer_dt = num()?,
            "sim.inner_dt" => s.inner_dt = Some(num()?),
            "sim.target_dx" => s.target_dx = num()?,
            "sim.screening" => s.screening = flag()?,
            "sim.seed" => s.seed = int()?,
            "sim.early_stop" => s.early_stop = flag()?,
            "sim.coord_unit" => s.coord_unit = num()?,
            "krylov.q" => k.q = int()? as usize,
            "krylov.eta" => k.eta = num()?,
            "krylov.breakdown_tol" => k.breakdown_tol = num()?,
            "krylov.enable" => k.enable = flag()?,
            "krylov.cache_capacity" => k.cache_capacity = int()? as usize,
            "failure.ir_threshold_fraction" => self.failure.ir_threshold_fraction = num()?,
            "failure.open_sentinel" => self.failure.open_sentinel = num()?,
            "mc.samples" => self.mc.samples = int()? as usize,
            "mc.cov" => self.mc.cov = num()?,
            "mc.seed" => self.mc.seed = int()?,
            "mc.vary_kappa" => self.mc.vary_kappa = flag()?,
            "mc.vary_sigma_crit" => self.mc.vary_sigma_crit = flag()?,
            _ => return self.set_layer(key, num),
        }
        Ok(())
    }

    /// Parameter-file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let m = &self.material;
        let t = &self.thermal;
        let s = &self.sim;
        let k = &self.krylov;
        let mut out = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            out.push_str(name);
            out.push_str(":\n");
            for (key, v) in rows {
                out.push_str(&format!("  {key}: {v}\n"));
            }
        };
        section(
            "material",
            vec![
                ("e_charge", num(m.e_charge)),
                ("z_eff", num(m.z_eff)),
                ("rho_el", num(m.rho_el)),
                ("omega", num(m.omega)),
                ("d0", num(m.d0)),
                ("ea", num(m.ea)),
                ("kb", num(m.kb)),
                ("bulk_modulus", num(m.bulk_modulus)),
                ("sigma_t", num(m.sigma_t)),
                ("sigma_crit", num(m.sigma_crit)),
                ("delta", num(m.delta)),
                ("q_star", num(m.q_star)),
                ("rho_ta", num(m.rho_ta)),
                ("h_ta", num(m.h_ta)),
            ],
        );
        section(
            "thermal",
            vec![
                ("k_cu", num(t.k_cu)),
                ("k_ild", num(t.k_ild)),
                ("t_cu", num(t.t_cu)),
                ("t_ild", num(t.t_ild)),
                ("t0", num(t.t0)),
                ("rho_cu", num(t.rho_cu)),
            ],
        );
        let mut sim = vec![
            ("outer_steps", s.outer_steps.to_string()),
            ("outer_dt", num(s.outer_dt)),
            ("target_dx", num(s.target_dx)),
            ("screening", s.screening.to_string()),
            ("seed", s.seed.to_string()),
            ("early_stop", s.early_stop.to_string()),
            ("coord_unit", num(s.coord_unit)),
        ];
        if let Some(dt) = s.inner_dt {
            sim.push(("inner_dt", num(dt)));
        }
        section("sim", sim);
        section(
            "krylov",
            vec![
                ("q", k.q.to_string()),
                ("eta", num(k.eta)),
                ("breakdown_tol", num(k.breakdown_tol)),
                ("enable", k.enable.to_string()),
                ("cache_capacity", k.cache_capacity.to_string()),
            ],
        );
        section(
            "failure",
            vec![
                ("ir_threshold_fraction", num(self.failure.ir_threshold_fraction)),
                ("open_sentinel", num(self.failure.open_sentinel)),
            ],
        );
        section(
            "mc",
            vec![
                ("samples", self.mc.samples.to_string()),
                ("cov", num(self.mc.cov)),
                ("seed", self.mc.seed.to_string()),
                ("vary_kappa", self.mc.vary_kappa.to_string()),
                ("vary_sigma_crit", self.mc.vary_sigma_crit.to_string()),
            ],
        );
        if let Some(g) = self.layers.default {
            section(
                "layer_default",
                vec![("width", num(g.width)), ("thickness", num(g.thickness))],
            );
        }
        for (n, g) in &self.layers.layers {
            section(
                &format!("layer_{n}"),
                vec![("width", num(g.width)), ("thickness", num(g.thickness))],
            );
        }
        out
    }

    fn set_layer(&mut self, key: &str, num: impl Fn() -> Result<f64>) -> Result<()> {
        let unknown = || Error::Param {
            key: key.to_string(),
            msg: "unknown parameter".into(),
        };
        let (section, field) = key.split_once('.').ok_or_else(unknown)?;
        let layer = section.strip_prefix("layer_").ok_or_else(unknown)?;
        let fallback = self.layers.default.unwrap_or(LayerGeometry {
            width: 1e-7,
            thickness: 1e-7,
        });
        let slot = if layer == "default" {
            self.layers.default.get_or_insert(fallback)
        } else {
            let n: u32 = layer.parse().map_err(|_| unknown())?;
            self.layers.layers.entry(n).or_insert(fallback)
        };
        match field {
            "width" => slot.width = num()?,
            "thickness" => slot.thickness = num()?,
            _ => return Err(unknown()),
        }
        if !(slot.width > 0.0 && slot.thickness > 0.0) {
            return Err(Error::Param {
                key: key.to_string(),
                msg: "layer geometry must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Flatten sections into dotted keys, keeping the source line for messages.
fn flatten(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let indented = line.starts_with([' ', '\t']);
        let (key, value) = line.trim().split_once(':').ok_or_else(|| Error::Syntax {
            line: line_no,
            msg: format!("expected `key: value`, got {:?}", line.trim()),
        })?;
        let key = key.trim();
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(Error::Syntax {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if value.is_empty() {
            if indented {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: "sections nest one level only".into(),
                });
            }
            section = Some(key.to_string());
            continue;
        }
        let full = match (&section, indented) {
            (Some(s), true) => format!("{s}.{key}"),
            (_, false) => {
                section = None;
                key.to_string()
            }
            (None, true) => {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: "indented key outside a section".into(),
                })
            }
        };
        if out.insert(full.clone(), (line_no, value.to_string())).is_some() {
            return Err(Error::Syntax {
                line: line_no,
                msg: format!("duplicate key {full}"),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let p = Params::parse(
            "# sample\nmaterial:\n  d0: 1e-3   # faster\n  sigma_crit: 5e8\nsim.outer_steps: 4\nkrylov:\n  enable: false\nlayer_2:\n  width: 2e-7\n",
        )
        .unwrap();
        assert_eq!(p.material.d0, 1e-3);
        assert_eq!(p.material.sigma_crit, 5e8);
        assert_eq!(p.sim.outer_steps, 4);
        assert!(!p.krylov.enable);
        let g = p.layers.get(2).unwrap();
        assert_eq!((g.width, g.thickness), (2e-7, 1e-7));
    }

    #[test]
    fn inner_step_default_and_check() {
        let p = Params::parse("sim:\n  outer_dt: 1e6\n").unwrap();
        assert_eq!(p.sim.inner_dt(), 1e4);
        assert!(Params::parse("sim:\n  outer_dt: 1e6\n  inner_dt: 2e6\n").is_err());
    }

    #[test]
    fn activation_energy_in_ev() {
        let p = Params::parse("material.ea_ev: 0.9\n").unwrap();
        assert!((p.material.ea - 0.9 * 1.602176634e-19).abs() < 1e-30);
    }

    #[test]
    fn errors_name_key_and_line() {
        match Params::parse("sim:\n  outer_steps: many\n") {
            Err(Error::Param { key, msg }) => {
                assert_eq!(key, "sim.outer_steps");
                assert!(msg.contains("line 2"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(Params::parse("bogus: 1\n"), Err(Error::Param { .. })));
        assert!(matches!(
            Params::parse("  stray: 1\n"),
            Err(Error::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Params::parse("a.b: 1\na.b: 2\n"),
            Err(Error::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn text_form_parses_back() {
        let mut p = Params::default();
        p.material.d0 = 3.3e-7;
        p.sim.inner_dt = Some(1234.5);
        p.krylov.q = 4;
        p.layers.layers.insert(
            3,
            LayerGeometry {
                width: 4e-7,
                thickness: 2e-7,
            },
        );
        let back = Params::parse(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }
}

//! Run and screening reports, and their file outputs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::failure::FailureMode;
use crate::krylov::CacheStats;
use crate::netlist::TreeId;
use crate::params::Params;
use crate::stress::{Classification, Phase};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRecord {
    pub step: usize,
    pub time: f64,
    pub max_drop_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PathCounts {
    pub krylov: usize,
    pub backward_euler: usize,
    /// Krylov attempts that fell back to backward Euler.
    pub fallbacks: usize,
}

impl PathCounts {
    pub fn add(&mut self, o: &PathCounts) {
        self.krylov += o.krylov;
        self.backward_euler += o.backward_euler;
        self.fallbacks += o.fallbacks;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSummary {
    pub key: String,
    pub id: TreeId,
    pub stress_nodes: usize,
    pub screened_immortal: bool,
    pub phase: Phase,
    pub failure_mode: Option<FailureMode>,
    pub max_stress: f64,
    pub t_nuc: Option<f64>,
    pub t_inc: Option<f64>,
    pub void_volume: f64,
    pub critical_volume: f64,
    pub delta_r: f64,
    pub host_branch: Option<String>,
    /// Time the host wire's resistance first rose 10% above its original.
    pub wire_failure_time: Option<f64>,
    pub solver: PathCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub total_s: f64,
    pub ir_s: f64,
    pub thermal_s: f64,
    pub krylov_s: f64,
    pub backward_euler_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub params: Params,
    pub drop_history: Vec<DropRecord>,
    pub initial_max_drop: f64,
    pub final_max_drop: f64,
    /// Network time to failure; `None` when censored.
    pub ttf: Option<f64>,
    pub censored: bool,
    pub tree_count: usize,
    pub mortal_trees: usize,
    pub never_nucleated: usize,
    pub screened_immortal: usize,
    pub trees: Vec<TreeSummary>,
    pub solver: PathCounts,
    pub cache: CacheStats,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl RunReport {
    /// TTF when failed, otherwise the final max drop.
    pub fn headline_metric(&self) -> f64 {
        self.ttf.unwrap_or(self.final_max_drop)
    }

    /// JSON with the `timing` object removed.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_ir_history(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "step,time,max_drop_fraction")?;
        for r in &self.drop_history {
            writeln!(w, "{},{},{}", r.step, r.time, r.max_drop_fraction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenTree {
    pub key: String,
    pub id: TreeId,
    pub classification: Classification,
    pub max_stress: f64,
    pub branches: Vec<(String, Classification)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenReport {
    pub screening_enabled: bool,
    pub max_drop_fraction: f64,
    pub immortal: usize,
    pub needs_transient: usize,
    pub trees: Vec<ScreenTree>,
    pub warnings: Vec<String>,
}

impl ScreenReport {
    pub fn mortal_keys(&self) -> Vec<&str> {
        self.trees
            .iter()
            .filter(|t| t.classification == Classification::NeedsTransient)
            .map(|t| t.key.as_str())
            .collect()
    }
}

/// One sampled profile row: `tree,branch,arc_pos,value`.
pub type ProfileRow = (String, String, f64, f64);

pub fn write_profile_csv(path: &Path, value: &str, rows: &[ProfileRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "tree,branch,arc_pos,{value}")?;
    for (t, b, x, v) in rows {
        writeln!(w, "{t},{b},{x},{v}")?;
    }
    Ok(())
}

pub fn write_void_csv(path: &Path, trees: &[TreeSummary]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "tree,phase,t_nuc,V_v,delta_R")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in trees {
        writeln!(
            w,
            "{},{:?},{},{},{}",
            t.key,
            t.phase,
            opt(t.t_nuc),
            t.void_volume,
            t.delta_r
        )?;
    }
    Ok(())
}

//! Void states to netlist edits, and network time-to-failure.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::netlist::{NetlistDoc, ViaMap, WireTree, OPEN_SENTINEL};
use crate::stress::{Phase, StressGrid, VoidState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailureConfig {
    /// Network failure when max IR drop reaches this fraction of the supply.
    pub ir_threshold_fraction: f64,
    pub open_sentinel: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            ir_threshold_fraction: 0.10,
            open_sentinel: OPEN_SENTINEL,
        }
    }
}

impl FailureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ir_threshold_fraction > 0.0 && self.ir_threshold_fraction < 1.0) {
            return Err(Error::Param {
                key: "failure.ir_threshold_fraction".into(),
                msg: format!("must lie in (0, 1), got {}", self.ir_threshold_fraction),
            });
        }
        if self.open_sentinel.is_nan() || self.open_sentinel <= 0.0 {
            return Err(Error::Param {
                key: "failure.open_sentinel".into(),
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureMode {
    /// The void opens the upward via at the cathode.
    Early,
    /// The void grows and raises the host wire's resistance.
    Late,
}

/// Early iff the cathode has a via to a strictly higher layer.
pub fn classify_failure_mode(tree: &WireTree, vias: &ViaMap) -> FailureMode {
    match tree.cathode {
        Some(c) if !vias.is_empty() && vias.has_upward(c) => FailureMode::Early,
        _ => FailureMode::Late,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UpdateMode {
    Incremental,
    OpenCircuit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResistanceUpdate {
    pub element: String,
    pub resistance: f64,
    pub mode: UpdateMode,
}

/// Branch index hosting a void at grid node `node`: the branch containing
/// it, or at a shared node the incident branch with the largest |j|
/// (ties: smallest name).
pub fn host_branch(tree: &WireTree, grid: &StressGrid, node: usize) -> usize {
    let incident = grid.incident(node);
    incident
        .iter()
        .map(|&(bi, _)| bi)
        .max_by(|&x, &y| {
            let (bx, by) = (&tree.branches[x], &tree.branches[y]);
            bx.current_density
                .abs()
                .total_cmp(&by.current_density.abs())
                .then_with(|| by.name.cmp(&bx.name))
        })
        .expect("grid node touches at least one branch")
}

/// Netlist edits implied by one tree's void state.
///
/// Late trees in growth re-rate the host branch to `original + ΔR`; early
/// trees that finished incubating open every upward via at the cathode.
pub fn tree_updates(
    tree: &WireTree,
    state: &VoidState,
    mode: FailureMode,
    host: Option<&str>,
    original: &NetlistDoc,
    vias: &ViaMap,
    cfg: &FailureConfig,
) -> Result<Vec<ResistanceUpdate>> {
    match (mode, state.phase) {
        (FailureMode::Late, Phase::Growth) => {
            let name =
                host.ok_or_else(|| Error::Internal(format!("tree {} in growth without a host branch", tree.id)))?;
            let idx = original
                .resistor_idx(name)
                .ok_or_else(|| Error::Internal(format!("host branch {name} missing from the netlist")))?;
            Ok(vec![ResistanceUpdate {
                element: name.to_string(),
                resistance: original.resistors[idx].resistance + state.delta_r,
                mode: UpdateMode::Incremental,
            }])
        }
        (FailureMode::Early, Phase::EarlyFailed) => {
            let cathode = tree
                .cathode
                .ok_or_else(|| Error::Internal(format!("tree {} failed early without a cathode", tree.id)))?;
            Ok(vias
                .get(cathode)
                .iter()
                .filter(|v| v.upward)
                .map(|v| ResistanceUpdate {
                    element: original.resistors[v.resistor].name.clone(),
                    resistance: cfg.open_sentinel,
                    mode: UpdateMode::OpenCircuit,
                })
                .collect())
        }
        _ => Ok(Vec::new()),
    }
}

/// Apply edits to `doc`. Incremental edits never lower a resistance and
/// opened elements stay open.
pub fn apply_resistance_updates(doc: &mut NetlistDoc, updates: &[ResistanceUpdate], cfg: &FailureConfig) -> Result<()> {
    for u in updates {
        let idx = doc
            .resistor_idx(&u.element)
            .ok_or_else(|| Error::Internal(format!("resistance update for unknown element {}", u.element)))?;
        let current = doc.resistors[idx].resistance;
        let next = match u.mode {
            UpdateMode::OpenCircuit => cfg.open_sentinel,
            UpdateMode::Incremental => u.resistance.max(current),
        };
        doc.set_resistance(&u.element, next)?;
    }
    Ok(())
}

/// Network time to failure, or `None` when censored.
///
/// `history` holds `(time, max_drop_fraction)` in time order; the crossing
/// is interpolated linearly between samples.
pub fn check_ttf(history: &[(f64, f64)], cfg: &FailureConfig) -> Option<f64> {
    let th = cfg.ir_threshold_fraction;
    let (&(t0, d0), rest) = history.split_first()?;
    if d0 >= th {
        return Some(t0);
    }
    let mut prev = (t0, d0);
    for &(t, d) in rest {
        if d >= th {
            let frac = (th - prev.1) / (d - prev.1);
            return Some(prev.0 + frac * (t - prev.0));
        }
        prev = (t, d);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irdrop::{analyze, resolve_cathodes};
    use crate::netlist::{build_via_map, extract_trees, parse_netlist};
    use crate::stress::build_stress_grid;

    const VIA_GRID: &str = "\
V1 n2_0_0 0 1
R1 n2_0_0 n2_20_0 0.5
RV n2_20_0 n1_20_0 0.1
R2 n1_20_0 n1_10_0 1
R3 n1_10_0 n1_0_0 1
I1 n1_0_0 0 0.01
";

    #[test]
    fn early_when_cathode_has_upward_via() {
        let doc = parse_netlist(VIA_GRID).unwrap();
        let sol = analyze(&doc).unwrap();
        let mut trees = extract_trees(&doc);
        resolve_cathodes(&doc, &sol, &mut trees);
        let vias = build_via_map(&doc);
        let lower = trees.iter().find(|t| t.id.layer == 1).unwrap();
        // Current enters layer 1 through the via, so electrons leave there:
        // the cathode (electron entry) is the load end.
        assert_eq!(doc.node(lower.cathode.unwrap()).x, 0);
        assert_eq!(classify_failure_mode(lower, &vias), FailureMode::Late);

        let upper = trees.iter().find(|t| t.id.layer == 2).unwrap();
        assert_eq!(doc.node(upper.cathode.unwrap()).x, 20);
        // The via from layer 2 goes down only.
        assert_eq!(classify_failure_mode(upper, &vias), FailureMode::Late);
    }

    #[test]
    fn upward_via_at_cathode_is_early() {
        // Load sits at a via up to layer 2; current flows out of layer 1
        // through it, so the via landing is the cathode.
        let doc = parse_netlist(
            "V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nRV n1_10_0 n2_10_0 0.1\nR2 n2_10_0 n2_20_0 1\nI1 n2_20_0 0 0.01\n",
        )
        .unwrap();
        let sol = analyze(&doc).unwrap();
        let mut trees = extract_trees(&doc);
        resolve_cathodes(&doc, &sol, &mut trees);
        let vias = build_via_map(&doc);
        let t1 = trees.iter().find(|t| t.id.layer == 1).unwrap();
        assert_eq!(classify_failure_mode(t1, &vias), FailureMode::Early);
    }

    #[test]
    fn via_free_netlist_is_late() {
        let doc = parse_netlist("V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nI1 n1_10_0 0 0.01\n").unwrap();
        let sol = analyze(&doc).unwrap();
        let mut trees = extract_trees(&doc);
        resolve_cathodes(&doc, &sol, &mut trees);
        assert_eq!(
            classify_failure_mode(&trees[0], &build_via_map(&doc)),
            FailureMode::Late
        );
    }

    #[test]
    fn late_update_adds_delta_r() {
        let doc = parse_netlist("V1 n1_0_0 0 1\nR17 n1_0_0 n1_10_0 2.0\nI1 n1_10_0 0 0.01\n").unwrap();
        let trees = extract_trees(&doc);
        let state = VoidState {
            phase: Phase::Growth,
            delta_r: 0.3,
            ..Default::default()
        };
        let cfg = FailureConfig::default();
        let ups = tree_updates(
            &trees[0],
            &state,
            FailureMode::Late,
            Some("R17"),
            &doc,
            &ViaMap::default(),
            &cfg,
        )
        .unwrap();
        let mut staged = doc.clone();
        apply_resistance_updates(&mut staged, &ups, &cfg).unwrap();
        assert!((staged.resistors[0].resistance - 2.3).abs() < 1e-12);
        // Idempotent.
        apply_resistance_updates(&mut staged, &ups, &cfg).unwrap();
        assert!((staged.resistors[0].resistance - 2.3).abs() < 1e-12);
        // Never lowered.
        let lower = vec![ResistanceUpdate {
            element: "R17".into(),
            resistance: 2.1,
            mode: UpdateMode::Incremental,
        }];
        apply_resistance_updates(&mut staged, &lower, &cfg).unwrap();
        assert!((staged.resistors[0].resistance - 2.3).abs() < 1e-12);
    }

    #[test]
    fn no_growth_no_change() {
        let doc = parse_netlist(VIA_GRID).unwrap();
        let trees = extract_trees(&doc);
        let cfg = FailureConfig::default();
        for phase in [Phase::PreNucleation, Phase::Incubation] {
            let st = VoidState {
                phase,
                ..Default::default()
            };
            let ups = tree_updates(
                &trees[0],
                &st,
                FailureMode::Late,
                None,
                &doc,
                &build_via_map(&doc),
                &cfg,
            )
            .unwrap();
            assert!(ups.is_empty());
        }
    }

    #[test]
    fn early_failure_opens_via_and_raises_drop() {
        let text = "V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nRV n1_10_0 n2_10_0 0.1\nRV2 n1_0_0 n2_0_0 0.1\nR2 n2_0_0 n2_10_0 5\nR3 n2_10_0 n2_20_0 1\nI1 n2_20_0 0 0.01\n";
        let doc = parse_netlist(text).unwrap();
        let before = analyze(&doc).unwrap();
        let mut trees = extract_trees(&doc);
        resolve_cathodes(&doc, &before, &mut trees);
        let vias = build_via_map(&doc);
        let t1 = trees.iter().find(|t| t.id.layer == 1).unwrap().clone();
        assert_eq!(classify_failure_mode(&t1, &vias), FailureMode::Early);
        let st = VoidState {
            phase: Phase::EarlyFailed,
            ..Default::default()
        };
        let cfg = FailureConfig::default();
        let ups = tree_updates(&t1, &st, FailureMode::Early, None, &doc, &vias, &cfg).unwrap();
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].element, "RV");
        let mut staged = doc.clone();
        apply_resistance_updates(&mut staged, &ups, &cfg).unwrap();
        assert_eq!(
            staged.resistors[staged.resistor_idx("RV").unwrap()].resistance,
            OPEN_SENTINEL
        );
        let after = analyze(&staged).unwrap();
        assert!(after.max_drop_fraction >= before.max_drop_fraction);
    }

    #[test]
    fn junction_host_is_highest_current() {
        let doc =
            parse_netlist("V1 n1_0_0 0 1\nRa n1_0_0 n1_10_0 1\nRb n1_10_0 n1_20_0 1\nRc n1_10_0 n1_10_10 1\n").unwrap();
        let mut tree = extract_trees(&doc).remove(0);
        for (b, j) in tree.branches.iter_mut().zip([1e10, -3e10, 3e10]) {
            b.current_density = j;
        }
        let grid = build_stress_grid(&tree, 5e-6).unwrap();
        let centre = grid.grid_of[&doc.node_idx(&crate::netlist::NodeId::new(1, 10, 0)).unwrap()];
        // Rb and Rc tie on |j|; the smaller name wins.
        assert_eq!(tree.branches[host_branch(&tree, &grid, centre)].name, "Rb");
        let interior = grid.branches[2].nodes[1];
        assert_eq!(host_branch(&tree, &grid, interior), 2);
    }

    #[test]
    fn ttf_cases() {
        let cfg = FailureConfig::default();
        assert_eq!(check_ttf(&[(0.0, 0.05), (1e7, 0.08), (2e7, 0.098)], &cfg), None);
        let t = check_ttf(&[(0.0, 0.05), (1e7, 0.08), (2e7, 0.12)], &cfg).unwrap();
        assert!((t - 1.5e7).abs() < 1e-6);
        assert_eq!(check_ttf(&[(0.0, 0.11), (1e7, 0.2)], &cfg), Some(0.0));
    }
}

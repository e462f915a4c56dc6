//! Outer aging loop: IR solve, per-tree stress transients, void phases and
//! resistance feedback, repeated over the outer time steps.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::failure::{
    apply_resistance_updates, check_ttf, classify_failure_mode, host_branch, tree_updates, FailureMode,
};
use crate::irdrop::{analyze, branch_current_densities, resolve_cathodes, write_voltage_csv, IrSolution};
use crate::krylov::{
    build_for_system, select_solver, shift_time, system_fingerprint, BasisCache, KrylovConfig, ReducedModel, SolverPath,
};
use crate::netlist::{build_via_map, extract_trees, parse_netlist_with, NetlistDoc, TreeId, ViaMap, WireTree};
use crate::params::Params;
use crate::report::{
    write_profile_csv, write_void_csv, DropRecord, PathCounts, ProfileRow, RunReport, ScreenReport, ScreenTree, Timing,
    TreeSummary,
};
use crate::stress::{
    assemble_stress_system, build_stress_grid, detect_nucleation, growth_delta_r, phase_advance, screen_tree,
    solve_steady_state, stamp_void_robin, step_transient, uniform_steps, void_volume, Classification, MaterialParams,
    Phase, StressGrid, StressSystem, Trajectory, VoidState,
};
use crate::thermal::{pinned_nodes, resolve_tree_endpoints, BranchProfile, ThermalMap};

/// Parsed inputs of one run.
#[derive(Debug, Clone)]
pub struct SimInputs {
    pub doc: NetlistDoc,
    pub params: Params,
    pub thermal_map: Option<ThermalMap>,
}

impl SimInputs {
    pub fn new(doc: NetlistDoc, params: Params, thermal_map: Option<ThermalMap>) -> Self {
        Self {
            doc,
            params,
            thermal_map,
        }
    }

    pub fn load(netlist: &Path, params: Option<&Path>, tmap: Option<&Path>) -> Result<Self> {
        let params = match params {
            Some(p) => Params::parse(&std::fs::read_to_string(p)?)
                .map_err(|e| e.context(format!("parameter file {}", p.display())))?,
            None => Params::default(),
        };
        let text = std::fs::read_to_string(netlist)?;
        let doc = parse_netlist_with(&text, &params.parse_options())
            .map_err(|e| e.context(format!("netlist {}", netlist.display())))?;
        let thermal_map = tmap
            .map(|p| -> Result<ThermalMap> {
                ThermalMap::parse(&std::fs::read_to_string(p)?)
                    .map_err(|e| e.context(format!("thermal map {}", p.display())))
            })
            .transpose()?;
        Ok(Self::new(doc, params, thermal_map))
    }
}

/// Optional per-step file outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions<'a> {
    pub dir: Option<&'a Path>,
    pub stress_maps: bool,
    pub voltage_maps: bool,
    pub staged_netlists: bool,
}

impl<'a> OutputOptions<'a> {
    pub fn all(dir: &'a Path) -> Self {
        Self {
            dir: Some(dir),
            stress_maps: true,
            voltage_maps: true,
            staged_netlists: true,
        }
    }
}

/// Wire temperature profiles, computed once from the initial IR solution
/// and keyed by resistor name.
#[derive(Debug, Clone, Default)]
pub struct ThermalCache {
    pub profiles: BTreeMap<String, BranchProfile>,
    pub warnings: Vec<String>,
}

impl ThermalCache {
    pub fn build(doc: &NetlistDoc, sol: &IrSolution, map: Option<&ThermalMap>, p: &Params) -> Result<Self> {
        let mut trees = extract_trees(doc);
        branch_current_densities(sol, &mut trees);
        let pinned = pinned_nodes(doc);
        let mut out = Self::default();
        for tree in &trees {
            let ends = resolve_tree_endpoints(doc, &pinned, tree, map, &p.thermal)?;
            out.warnings.extend(ends.warnings);
            let temp = |n: usize| ends.temps.get(&n).copied().unwrap_or(p.thermal.t0);
            for b in &tree.branches {
                let prof = BranchProfile::new(b.length, b.current_density, temp(b.a), temp(b.b), &p.thermal)
                    .map_err(|e| e.context(format!("branch {}", b.name)))?;
                out.profiles.insert(b.name.clone(), prof);
            }
            for &c in &tree.chords {
                let r = &doc.resistors[c];
                let g = doc.resistor_geometry(r);
                let j = sol.branch_currents[c] / (g.width * g.thickness);
                let len = doc.resistor_length(r);
                let prof = BranchProfile::new(len, j, temp(r.a), temp(r.b), &p.thermal)
                    .map_err(|e| e.context(format!("branch {}", r.name)))?;
                out.profiles.insert(r.name.clone(), prof);
            }
        }
        Ok(out)
    }

    /// Profiles for `tree`'s branches, in branch order.
    pub fn for_tree(&self, tree: &WireTree) -> Result<Vec<BranchProfile>> {
        tree.branches
            .iter()
            .map(|b| {
                self.profiles
                    .get(&b.name)
                    .copied()
                    .ok_or_else(|| Error::Internal(format!("no temperature profile for {}", b.name)))
            })
            .collect()
    }
}

/// Where a void sits, independent of grid numbering.
#[derive(Debug, Clone, PartialEq)]
enum VoidSite {
    Node(usize),
    Interior { branch: String, index: usize },
}

#[derive(Debug, Clone)]
struct TreeState {
    key: String,
    id: TreeId,
    nodes: usize,
    simulated: bool,
    void: VoidState,
    site: Option<VoidSite>,
    host: Option<String>,
    mode: Option<FailureMode>,
    /// Node stresses along each branch, `a` end first.
    branch_stress: BTreeMap<String, Vec<f64>>,
    max_stress: f64,
    wire_failure_time: Option<f64>,
    paths: PathCounts,
    bracket_warned: bool,
}

impl TreeState {
    fn new(key: String, id: TreeId) -> Self {
        Self {
            key,
            id,
            nodes: 0,
            simulated: false,
            void: VoidState::default(),
            site: None,
            host: None,
            mode: None,
            branch_stress: BTreeMap::new(),
            max_stress: f64::NEG_INFINITY,
            wire_failure_time: None,
            paths: PathCounts::default(),
            bracket_warned: false,
        }
    }

    /// Initial stress on a (possibly re-spanned) grid.
    fn initial_stress(&self, tree: &WireTree, grid: &StressGrid, doc: &NetlistDoc, sigma_t: f64) -> Vec<f64> {
        let mut sigma = vec![sigma_t; grid.len()];
        let mut at_node: BTreeMap<usize, f64> = BTreeMap::new();
        for (name, vals) in &self.branch_stress {
            if let Some(i) = doc.resistor_idx(name) {
                let r = &doc.resistors[i];
                at_node.insert(r.a, vals[0]);
                at_node.insert(r.b, *vals.last().unwrap());
            }
        }
        for (bg, br) in grid.branches.iter().zip(&tree.branches) {
            match self.branch_stress.get(&br.name) {
                Some(vals) if vals.len() == bg.nodes.len() => {
                    for (&g, &v) in bg.nodes.iter().zip(vals) {
                        sigma[g] = v;
                    }
                }
                _ => {
                    // A former chord: interpolate between its end stresses.
                    let sa = at_node.get(&br.a).copied().unwrap_or(sigma_t);
                    let sb = at_node.get(&br.b).copied().unwrap_or(sigma_t);
                    let m = bg.intervals() as f64;
                    for (k, &g) in bg.nodes.iter().enumerate() {
                        let w = k as f64 / m;
                        sigma[g] = (1.0 - w) * sa + w * sb;
                    }
                }
            }
        }
        sigma
    }

    fn store_stress(&mut self, tree: &WireTree, grid: &StressGrid, sigma: &[f64]) {
        self.branch_stress.clear();
        for (bg, br) in grid.branches.iter().zip(&tree.branches) {
            self.branch_stress
                .insert(br.name.clone(), bg.nodes.iter().map(|&g| sigma[g]).collect());
        }
    }

    fn site_node(&self, tree: &WireTree, grid: &StressGrid, doc: &NetlistDoc) -> Option<usize> {
        match self.site.as_ref()? {
            VoidSite::Node(n) => grid.grid_of.get(n).copied(),
            VoidSite::Interior { branch, index } => {
                match tree.branches.iter().position(|b| &b.name == branch) {
                    Some(bi) => grid.branches[bi].nodes.get(*index).copied(),
                    // The host segment left the spanning tree; pin to its a end.
                    None => {
                        let r = &doc.resistors[doc.resistor_idx(branch)?];
                        grid.grid_of.get(&r.a).copied()
                    }
                }
            }
        }
    }
}

fn site_of(grid: &StressGrid, tree: &WireTree, node: usize) -> VoidSite {
    match grid.netlist_node[node] {
        Some(n) => VoidSite::Node(n),
        None => {
            let (bi, k) = grid.locate[node];
            VoidSite::Interior {
                branch: tree.branches[bi].name.clone(),
                index: k,
            }
        }
    }
}

enum Prepared {
    Run(Box<TreeTask>),
    /// Screened immortal before any transient.
    Immortal(Box<TreeState>),
    /// Early failed; nothing left to simulate.
    Done,
}

/// Work item for one tree and one outer step.
struct TreeTask {
    tree: WireTree,
    grid: StressGrid,
    sys: StressSystem,
    sigma0: Vec<f64>,
    state: TreeState,
    mode: FailureMode,
    s0: f64,
    fingerprint: Option<u64>,
    cached: Option<Arc<ReducedModel>>,
}

struct TreeOutcome {
    state: TreeState,
    tree: WireTree,
    grid: StressGrid,
    new_models: Vec<Arc<ReducedModel>>,
    krylov_s: f64,
    be_s: f64,
    warnings: Vec<String>,
}

/// Result of one transient segment.
pub struct Segment {
    pub trajectory: Trajectory,
    pub path: SolverPath,
    pub fell_back: bool,
    pub built: Option<Arc<ReducedModel>>,
    pub seconds: f64,
}

/// Advance `sys` from `sigma0` over `dts` with the selected solver. Any
/// Krylov failure reruns the segment through backward Euler.
pub fn run_segment(
    sys: &StressSystem,
    sigma0: &[f64],
    dts: &[f64],
    cfg: &KrylovConfig,
    cached: Option<Arc<ReducedModel>>,
    s0: f64,
) -> Result<Segment> {
    let start = Instant::now();
    let path = select_solver(sys.len(), cfg.q, cached.is_some(), cfg.enable);
    if path == SolverPath::Krylov {
        let fresh = cached.is_none();
        let attempt = cached
            .map(Ok)
            .unwrap_or_else(|| build_for_system(sys, sigma0, s0, cfg).map(Arc::new))
            .and_then(|m| {
                let tr = m.trajectory(sigma0, dts)?;
                if tr.states.iter().all(|v| v.is_finite()) {
                    Ok((m, tr))
                } else {
                    Err(Error::Krylov("non-finite reduced trajectory".into()))
                }
            });
        match attempt {
            Ok((model, trajectory)) => {
                return Ok(Segment {
                    trajectory,
                    path,
                    fell_back: false,
                    built: fresh.then_some(model),
                    seconds: start.elapsed().as_secs_f64(),
                })
            }
            Err(e) => {
                log::warn!("reduced solve failed, using backward Euler: {e}");
                let trajectory = step_transient(sys, sigma0, dts)?;
                return Ok(Segment {
                    trajectory,
                    path: SolverPath::BackwardEuler,
                    fell_back: true,
                    built: None,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    let trajectory = step_transient(sys, sigma0, dts)?;
    Ok(Segment {
        trajectory,
        path,
        fell_back: false,
        built: None,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Shift `s0 = 1 / (η τ)` for a tree system.
pub fn tree_shift(tree: &WireTree, sys: &StressSystem, eta: f64) -> f64 {
    let kappa_mean = sys.kappa.iter().sum::<f64>() / sys.len() as f64;
    1.0 / shift_time(tree.max_path_length(), kappa_mean, eta)
}

fn record_segment(
    seg: &Segment,
    paths: &mut PathCounts,
    krylov_s: &mut f64,
    be_s: &mut f64,
    models: &mut Vec<Arc<ReducedModel>>,
) {
    match seg.path {
        SolverPath::Krylov => {
            paths.krylov += 1;
            *krylov_s += seg.seconds;
        }
        SolverPath::BackwardEuler => {
            paths.backward_euler += 1;
            *be_s += seg.seconds;
        }
    }
    if seg.fell_back {
        paths.fallbacks += 1;
    }
    if let Some(m) = &seg.built {
        models.push(m.clone());
    }
}

fn advance_tree(task: TreeTask, t_start: f64, dts: &[f64], p: &Params) -> Result<TreeOutcome> {
    let TreeTask {
        tree,
        grid,
        mut sys,
        sigma0,
        mut state,
        mode,
        s0,
        cached,
        ..
    } = task;
    let mat = &p.material;
    let mut new_models = Vec::new();
    let mut warnings = Vec::new();
    let (mut krylov_s, mut be_s) = (0.0, 0.0);

    let seg = run_segment(&sys, &sigma0, dts, &p.krylov, cached, s0)?;
    record_segment(&seg, &mut state.paths, &mut krylov_s, &mut be_s, &mut new_models);
    let mut traj = seg.trajectory;
    state.simulated = true;
    state.mode = Some(mode);
    state.max_stress = state.max_stress.max(
        (0..traj.steps())
            .map(|k| traj.max_at(k).1)
            .fold(f64::NEG_INFINITY, f64::max),
    );

    // Post-void history: absolute times and the trajectory they belong to.
    let mut growth_window: Option<(Vec<f64>, Trajectory)> = None;

    if state.void.phase == Phase::PreNucleation {
        if let Some(nuc) = detect_nucleation(&traj, mat.sigma_crit) {
            let host = host_branch(&tree, &grid, nuc.node);
            let hb = &tree.branches[host];
            let v_crit = hb.width * hb.width * hb.thickness;
            state.void = VoidState::nucleated(nuc.node, t_start + nuc.time, v_crit);
            state.site = Some(site_of(&grid, &tree, nuc.node));
            state.host = Some(hb.name.clone());
            stamp_void_robin(&mut sys, nuc.node, mat.delta);
            let restart = traj.state(nuc.step);
            let rest = &dts[nuc.step.min(dts.len())..];
            let t_restart = t_start + traj.times[nuc.step];
            if rest.is_empty() {
                let states = nalgebra::DMatrix::from_column_slice(restart.len(), 1, &restart);
                traj = Trajectory {
                    times: vec![0.0],
                    states,
                };
            } else {
                let s0_robin = tree_shift(&tree, &sys, p.krylov.eta);
                let seg = run_segment(&sys, &restart, rest, &p.krylov, None, s0_robin)?;
                record_segment(&seg, &mut state.paths, &mut krylov_s, &mut be_s, &mut new_models);
                traj = seg.trajectory;
            }
            let times = traj.times.iter().map(|t| t_restart + t).collect();
            growth_window = Some((times, traj.clone()));
        }
    } else if matches!(state.void.phase, Phase::Incubation | Phase::Growth) {
        let times = traj.times.iter().map(|t| t_start + t).collect();
        growth_window = Some((times, traj.clone()));
    }

    if let Some((times, tr)) = growth_window {
        let volumes: Vec<f64> = (0..tr.steps()).map(|k| void_volume(&sys, &tr.state(k), mat)).collect();
        state.void = phase_advance(state.void.clone(), &times, &volumes);
        if state.void.phase == Phase::Growth {
            match mode {
                FailureMode::Early => {
                    state.void.phase = Phase::EarlyFailed;
                    state.void.delta_r = 0.0;
                }
                FailureMode::Late => {
                    let host = state.host.clone().unwrap_or_default();
                    let hb = tree
                        .branches
                        .iter()
                        .find(|b| b.name == host)
                        .ok_or_else(|| Error::Internal(format!("host branch {host} not in tree")))?;
                    let dr = |v: f64| growth_delta_r(v, state.void.critical_volume, hb.width, hb.thickness, mat);
                    let (delta_r, negative) = dr(state.void.void_volume);
                    if negative && !state.bracket_warned {
                        state.bracket_warned = true;
                        warnings.push(format!(
                            "tree {}: barrier resistivity too small for a positive resistance change; growth adds 0 ohm",
                            state.key
                        ));
                    }
                    state.void.delta_r = state.void.delta_r.max(delta_r);
                    if state.wire_failure_time.is_none() {
                        let r0 = hb.resistance - state.void.delta_r.min(0.0);
                        state.wire_failure_time =
                            first_crossing(&times, &volumes, |v| dr(v).0 >= 0.1 * r0, |v| dr(v).0 - 0.1 * r0);
                    }
                }
            }
        }
        state.store_stress(&tree, &grid, &tr.last());
    } else {
        state.store_stress(&tree, &grid, &traj.last());
    }

    Ok(TreeOutcome {
        state,
        tree,
        grid,
        new_models,
        krylov_s,
        be_s,
        warnings,
    })
}

/// Interpolated first time where `hit` holds, using `gap` (sign change) to
/// locate the crossing between samples.
fn first_crossing(times: &[f64], vals: &[f64], hit: impl Fn(f64) -> bool, gap: impl Fn(f64) -> f64) -> Option<f64> {
    let k = vals.iter().position(|&v| hit(v))?;
    if k == 0 {
        return Some(times[0]);
    }
    let (g0, g1) = (gap(vals[k - 1]), gap(vals[k]));
    let frac = if g1 > g0 {
        (-g0 / (g1 - g0)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Some(times[k - 1] + frac * (times[k] - times[k - 1]))
}

fn prepare_trees(doc: &NetlistDoc, sol: &IrSolution) -> Vec<WireTree> {
    let mut trees = extract_trees(doc);
    branch_current_densities(sol, &mut trees);
    resolve_cathodes(doc, sol, &mut trees);
    trees
}

/// Steady-state screening of every tree.
pub fn run_screening(inputs: &SimInputs) -> Result<ScreenReport> {
    let p = &inputs.params;
    p.validate()?;
    let doc = &inputs.doc;
    let sol = analyze(doc)?;
    let thermal = ThermalCache::build(doc, &sol, inputs.thermal_map.as_ref(), p)?;
    let trees = prepare_trees(doc, &sol);
    let results: Vec<Result<ScreenTree>> = trees
        .par_iter()
        .map(|tree| {
            let key = tree.key(doc);
            let grid = build_stress_grid(tree, p.sim.target_dx)?;
            if !p.sim.screening {
                return Ok(ScreenTree {
                    key,
                    id: tree.id,
                    classification: Classification::NeedsTransient,
                    max_stress: f64::NAN,
                    branches: tree
                        .branches
                        .iter()
                        .map(|b| (b.name.clone(), Classification::NeedsTransient))
                        .collect(),
                });
            }
            let sys = assemble_stress_system(tree, &grid, &thermal.for_tree(tree)?, &p.material)?;
            let ss = solve_steady_state(&sys, p.material.sigma_t)?;
            let r = screen_tree(&grid, &ss, p.material.sigma_crit);
            Ok(ScreenTree {
                key,
                id: tree.id,
                classification: r.tree,
                max_stress: r.max_stress,
                branches: tree.branches.iter().map(|b| b.name.clone()).zip(r.branches).collect(),
            })
        })
        .collect();
    let trees: Vec<ScreenTree> = results.into_iter().collect::<Result<_>>()?;
    let immortal = trees
        .iter()
        .filter(|t| t.classification == Classification::Immortal)
        .count();
    Ok(ScreenReport {
        screening_enabled: p.sim.screening,
        max_drop_fraction: sol.max_drop_fraction,
        immortal,
        needs_transient: trees.len() - immortal,
        trees,
        warnings: thermal.warnings,
    })
}

/// Full coupled aging run.
pub fn run_simulation(inputs: &SimInputs, out: &OutputOptions) -> Result<RunReport> {
    Simulation::new(inputs)?.run(out)
}

struct Simulation<'a> {
    inputs: &'a SimInputs,
    vias: ViaMap,
    cache: BasisCache,
    states: BTreeMap<String, TreeState>,
    warnings: Vec<String>,
    timing: Timing,
}

impl<'a> Simulation<'a> {
    fn new(inputs: &'a SimInputs) -> Result<Self> {
        inputs.params.validate()?;
        Ok(Self {
            inputs,
            vias: build_via_map(&inputs.doc),
            cache: BasisCache::new(inputs.params.krylov.cache_capacity),
            states: BTreeMap::new(),
            warnings: Vec::new(),
            timing: Timing::default(),
        })
    }

    fn run(mut self, out: &OutputOptions) -> Result<RunReport> {
        let clock = Instant::now();
        let p = &self.inputs.params;
        let original = &self.inputs.doc;
        let mut staged = original.clone();
        if let Some(dir) = out.dir {
            std::fs::create_dir_all(dir)?;
        }

        let t = Instant::now();
        let mut sol = analyze(&staged).map_err(|e| e.context("initial IR solve"))?;
        self.timing.ir_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let thermal = ThermalCache::build(original, &sol, self.inputs.thermal_map.as_ref(), p)?;
        self.warnings.extend(thermal.warnings.iter().cloned());
        self.timing.thermal_s += t.elapsed().as_secs_f64();

        // Snapshot files are indexed like the drop history: `k` is the state
        // at `k * outer_dt`.
        self.write_snapshot(out, 0, &staged, &sol)?;
        let mut history = vec![DropRecord {
            step: 0,
            time: 0.0,
            max_drop_fraction: sol.max_drop_fraction,
        }];
        let dts = uniform_steps(p.sim.outer_dt, p.sim.inner_dt());
        let mut last_trees: Vec<(WireTree, StressGrid)> = Vec::new();

        for step in 0..p.sim.outer_steps {
            let t_start = step as f64 * p.sim.outer_dt;
            let trees = prepare_trees(&staged, &sol);
            if step == 0 {
                if let Some(dir) = out.dir {
                    self.write_temperatures(dir, &trees, &thermal)?;
                }
            }

            // Assemble in parallel.
            let prepared: Vec<Result<Prepared>> = trees
                .into_par_iter()
                .map(|tree| self.prepare_task(tree, &staged, &thermal))
                .collect();
            let mut tasks = Vec::new();
            for r in prepared {
                match r? {
                    Prepared::Run(task) => tasks.push(*task),
                    Prepared::Immortal(state) => {
                        self.states.insert(state.key.clone(), *state);
                    }
                    Prepared::Done => {}
                }
            }
            // Cache lookups in tree order keep hit counts reproducible.
            for task in &mut tasks {
                if let Some(fp) = task.fingerprint {
                    task.cached = self.cache.lookup(fp, Some(&task.sigma0));
                }
            }
            let outcomes: Vec<Result<TreeOutcome>> = tasks
                .into_par_iter()
                .map(|task| {
                    let id = task.tree.id;
                    advance_tree(task, t_start, &dts, p)
                        .map_err(|e| e.context(format!("tree {id} at outer step {step}")))
                })
                .collect();

            let mut updates = Vec::new();
            last_trees.clear();
            for o in outcomes {
                let o = o?;
                for m in &o.new_models {
                    self.cache.store(m.clone());
                }
                self.timing.krylov_s += o.krylov_s;
                self.timing.backward_euler_s += o.be_s;
                self.warnings.extend(o.warnings);
                if let Some(mode) = o.state.mode {
                    updates.extend(tree_updates(
                        &o.tree,
                        &o.state.void,
                        mode,
                        o.state.host.as_deref(),
                        original,
                        &self.vias,
                        &p.failure,
                    )?);
                }
                last_trees.push((o.tree, o.grid));
                self.states.insert(o.state.key.clone(), o.state);
            }
            apply_resistance_updates(&mut staged, &updates, &p.failure)?;

            let t = Instant::now();
            let next = analyze(&staged).map_err(|e| e.context(format!("IR solve after outer step {step}")))?;
            self.timing.ir_s += t.elapsed().as_secs_f64();
            self.write_snapshot(out, step + 1, &staged, &next)?;
            if let (Some(dir), true) = (out.dir, out.stress_maps) {
                self.write_stress(dir, step + 1, &last_trees)?;
                write_void_csv(&dir.join(format!("voids_{}.csv", step + 1)), &self.summaries())?;
            }
            history.push(DropRecord {
                step: step + 1,
                time: t_start + p.sim.outer_dt,
                max_drop_fraction: next.max_drop_fraction,
            });
            sol = next;
            let pairs: Vec<(f64, f64)> = history.iter().map(|r| (r.time, r.max_drop_fraction)).collect();
            if p.sim.early_stop && check_ttf(&pairs, &p.failure).is_some() {
                break;
            }
        }

        let pairs: Vec<(f64, f64)> = history.iter().map(|r| (r.time, r.max_drop_fraction)).collect();
        let ttf = check_ttf(&pairs, &p.failure);
        let trees = self.summaries();
        let mut solver = PathCounts::default();
        for t in &trees {
            solver.add(&t.solver);
        }
        let mortal = trees.iter().filter(|t| t.phase != Phase::PreNucleation).count();
        let screened = trees.iter().filter(|t| t.screened_immortal).count();
        self.timing.total_s = clock.elapsed().as_secs_f64();
        let report = RunReport {
            params: p.clone(),
            initial_max_drop: history[0].max_drop_fraction,
            final_max_drop: history.last().unwrap().max_drop_fraction,
            drop_history: history,
            ttf,
            censored: ttf.is_none(),
            tree_count: trees.len(),
            mortal_trees: mortal,
            never_nucleated: trees.len() - mortal - screened,
            screened_immortal: screened,
            trees,
            solver,
            cache: self.cache.stats(),
            warnings: self.warnings,
            timing: self.timing,
        };
        if let Some(dir) = out.dir {
            report.write_json(&dir.join("report.json"))?;
            report.write_ir_history(&dir.join("ir_history.csv"))?;
        }
        Ok(report)
    }

    fn write_snapshot(&self, out: &OutputOptions, k: usize, doc: &NetlistDoc, sol: &IrSolution) -> Result<()> {
        let Some(dir) = out.dir else {
            return Ok(());
        };
        if out.voltage_maps {
            let f = std::fs::File::create(dir.join(format!("voltage_{k}.csv")))?;
            write_voltage_csv(doc, sol, std::io::BufWriter::new(f))?;
        }
        if out.staged_netlists {
            std::fs::write(dir.join(format!("netlist_{k}.sp")), crate::netlist::emit_netlist(doc))?;
        }
        Ok(())
    }

    /// Build a tree's stress system for this step.
    fn prepare_task(&self, tree: WireTree, doc: &NetlistDoc, thermal: &ThermalCache) -> Result<Prepared> {
        let p = &self.inputs.params;
        let key = tree.key(doc);
        let state = self
            .states
            .get(&key)
            .cloned()
            .unwrap_or_else(|| TreeState::new(key.clone(), tree.id));
        if state.void.phase == Phase::EarlyFailed {
            return Ok(Prepared::Done);
        }
        let ctx = |e: Error| e.context(format!("tree {}", tree.id));
        let grid = build_stress_grid(&tree, p.sim.target_dx).map_err(ctx)?;
        let profiles = thermal.for_tree(&tree).map_err(ctx)?;
        let mut sys = assemble_stress_system(&tree, &grid, &profiles, &p.material).map_err(ctx)?;
        let mut state = state;
        state.id = tree.id;
        state.nodes = grid.len();

        if p.sim.screening && !state.simulated && state.void.phase == Phase::PreNucleation {
            let ss = solve_steady_state(&sys, p.material.sigma_t).map_err(ctx)?;
            if screen_tree(&grid, &ss, p.material.sigma_crit).tree == Classification::Immortal {
                return Ok(Prepared::Immortal(Box::new(state)));
            }
        }
        if state.void.phase != Phase::PreNucleation {
            let v = state
                .site_node(&tree, &grid, doc)
                .ok_or_else(|| Error::Internal(format!("tree {}: void site lost", tree.id)))?;
            stamp_void_robin(&mut sys, v, p.material.delta);
        }
        let sigma0 = state.initial_stress(&tree, &grid, doc, p.material.sigma_t);
        // The failure mode is fixed once a void exists.
        let mode = match (state.void.phase, state.mode) {
            (Phase::PreNucleation, _) | (_, None) => classify_failure_mode(&tree, &self.vias),
            (_, Some(m)) => m,
        };
        let s0 = tree_shift(&tree, &sys, p.krylov.eta);
        let fingerprint = (p.krylov.enable && sys.len() >= p.krylov.q + 2).then(|| system_fingerprint(&sys, s0));
        Ok(Prepared::Run(Box::new(TreeTask {
            tree,
            grid,
            sys,
            sigma0,
            state,
            mode,
            s0,
            fingerprint,
            cached: None,
        })))
    }

    fn summaries(&self) -> Vec<TreeSummary> {
        self.states
            .values()
            .map(|s| TreeSummary {
                key: s.key.clone(),
                id: s.id,
                stress_nodes: s.nodes,
                screened_immortal: !s.simulated,
                phase: s.void.phase,
                failure_mode: s.mode,
                max_stress: s.max_stress,
                t_nuc: s.void.t_nuc,
                t_inc: s.void.t_inc,
                void_volume: s.void.void_volume,
                critical_volume: s.void.critical_volume,
                delta_r: s.void.delta_r,
                host_branch: s.host.clone(),
                wire_failure_time: s.wire_failure_time,
                solver: s.paths,
            })
            .collect()
    }

    fn write_stress(&self, dir: &Path, step: usize, trees: &[(WireTree, StressGrid)]) -> Result<()> {
        let mut rows: Vec<ProfileRow> = Vec::new();
        for (tree, grid) in trees {
            let key = tree.key(&self.inputs.doc);
            let Some(state) = self.states.get(&key) else { continue };
            for (bg, br) in grid.branches.iter().zip(&tree.branches) {
                if let Some(vals) = state.branch_stress.get(&br.name) {
                    for (k, v) in vals.iter().enumerate() {
                        rows.push((key.clone(), br.name.clone(), bg.position(k), *v));
                    }
                }
            }
        }
        write_profile_csv(&dir.join(format!("stress_{step}.csv")), "stress", &rows)
    }

    fn write_temperatures(&self, dir: &Path, trees: &[WireTree], thermal: &ThermalCache) -> Result<()> {
        let p = &self.inputs.params;
        let mut rows: Vec<ProfileRow> = Vec::new();
        for tree in trees {
            let key = tree.key(&self.inputs.doc);
            let grid = build_stress_grid(tree, p.sim.target_dx)?;
            for ((bg, br), prof) in grid.branches.iter().zip(&tree.branches).zip(thermal.for_tree(tree)?) {
                for k in 0..bg.nodes.len() {
                    let x = bg.position(k);
                    rows.push((key.clone(), br.name.clone(), x, prof.temperature(x)));
                }
            }
        }
        write_profile_csv(&dir.join("temperature.csv"), "temperature", &rows)
    }
}

/// Perturbed material parameters for sensitivity studies.
pub fn with_material(inputs: &SimInputs, material: MaterialParams) -> SimInputs {
    let mut out = inputs.clone();
    out.params.material = material;
    out
}

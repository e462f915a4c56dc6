//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use emgrid::engine::{run_screening, run_simulation, tree_shift, OutputOptions, SimInputs, ThermalCache};
use emgrid::irdrop::{analyze, branch_current_densities, resolve_cathodes};
use emgrid::krylov::build_for_system;
use emgrid::montecarlo::run_mc;
use emgrid::netlist::{extract_trees, parse_netlist_with, BranchEnd, NetlistDoc, NodeId, WireTree};
use emgrid::params::Params;
use emgrid::stress::{
    assemble_stress_system, build_stress_grid, detect_nucleation, solve_steady_state, stamp_void_robin, step_transient,
    uniform_steps, Classification, StressGrid, StressSystem,
};
use emgrid::synth::{self, MeshSpec, RandomTreeSpec};
use emgrid::thermal::{BranchProfile, ThermalParams};
use emgrid::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Result<Verdict>);

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

/// The first stress tree of a netlist with branches on layer 1, assembled
/// the same way the engine does it.
struct TreeCase {
    doc: NetlistDoc,
    tree: WireTree,
    grid: StressGrid,
    profiles: Vec<BranchProfile>,
    sys: StressSystem,
}

fn layer1_tree(netlist: &str, p: &Params) -> Result<TreeCase> {
    let doc = parse_netlist_with(netlist, &p.parse_options())?;
    let sol = analyze(&doc)?;
    let mut trees = extract_trees(&doc);
    branch_current_densities(&sol, &mut trees);
    resolve_cathodes(&doc, &sol, &mut trees);
    let thermal = ThermalCache::build(&doc, &sol, None, p)?;
    let tree = trees.into_iter().find(|t| t.id.layer == 1).expect("layer-1 tree");
    let grid = build_stress_grid(&tree, p.sim.target_dx)?;
    let profiles = thermal.for_tree(&tree)?;
    let sys = assemble_stress_system(&tree, &grid, &profiles, &p.material)?;
    Ok(TreeCase {
        doc,
        tree,
        grid,
        profiles,
        sys,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1_krylov_nucleation() -> Result<Verdict> {
    let p = synth::accelerated_params();
    let (mut worst, mut used, mut sizes) = (0.0f64, 0, (usize::MAX, 0));
    for seed in 0..30u64 {
        let spec = RandomTreeSpec {
            branches: 5 + 3 * seed as usize,
            ..Default::default()
        };
        let case = layer1_tree(&synth::random_tree(seed, &spec), &p)?;
        let n = case.sys.len();
        if !(100..=2000).contains(&n) {
            continue;
        }
        // Threshold at half the steady peak so every tree nucleates.
        let sigma_t = p.material.sigma_t;
        let steady = solve_steady_state(&case.sys, sigma_t)?;
        let peak = steady.iter().cloned().fold(f64::MIN, f64::max);
        let sigma_crit = sigma_t + 0.5 * (peak - sigma_t);
        let s0 = tree_shift(&case.tree, &case.sys, p.krylov.eta);
        let dts = uniform_steps(2.0 / s0, 2.0 / s0 / 1000.0);
        let sigma0 = vec![sigma_t; n];
        let full = step_transient(&case.sys, &sigma0, &dts)?;
        let model = build_for_system(&case.sys, &sigma0, s0, &p.krylov)?;
        let reduced = model.trajectory(&sigma0, &dts)?;
        let (Some(a), Some(b)) = (
            detect_nucleation(&reduced, sigma_crit),
            detect_nucleation(&full, sigma_crit),
        ) else {
            continue;
        };
        worst = worst.max(rel(a.time, b.time));
        used += 1;
        sizes = (sizes.0.min(n), sizes.1.max(n));
    }
    verdict(
        used >= 20 && worst < 0.01,
        format!(
            "{used} trees, n = {}..{}, q = {}, max t_nuc error {:.3e}",
            sizes.0, sizes.1, p.krylov.q, worst
        ),
    )
}

fn mesh_inputs(spec: &MeshSpec, tweak: impl FnOnce(&mut Params)) -> Result<SimInputs> {
    let mut params = synth::mesh_params(spec);
    tweak(&mut params);
    let doc = parse_netlist_with(&synth::stripe_mesh(spec), &params.parse_options())?;
    Ok(SimInputs::new(doc, params, None))
}

fn c2_pipeline_error() -> Result<Verdict> {
    let spec = MeshSpec {
        load: 1e-5,
        ..Default::default()
    };
    let on = mesh_inputs(&spec, |_| {})?;
    let mut off = on.clone();
    off.params.krylov.enable = false;
    let a = run_simulation(&on, &OutputOptions::default())?;
    let b = run_simulation(&off, &OutputOptions::default())?;
    let (what, err) = match (a.ttf, b.ttf) {
        (Some(x), Some(y)) => ("TTF", rel(x, y)),
        (None, None) => ("final max drop", rel(a.final_max_drop, b.final_max_drop)),
        _ => ("failure status", f64::INFINITY),
    };
    verdict(
        a.tree_count >= 200 && a.solver.krylov > 0 && err < 5e-4,
        format!(
            "{} trees, {} Krylov segments, {what} difference {:.3e}",
            a.tree_count, a.solver.krylov, err
        ),
    )
}

fn c3_speedup() -> Result<Verdict> {
    // Stripes of 1000 µm give 1001 stress nodes per tree. No tree voids, so
    // every step after the first reuses the cached basis.
    let spec = MeshSpec {
        rows: 101,
        cols: 101,
        load: 6e-6,
        ..Default::default()
    };
    let on = mesh_inputs(&spec, |p| {
        p.sim.screening = false;
        p.sim.outer_steps = 10;
        p.material.sigma_crit = 5e9;
    })?;
    let mut off = on.clone();
    off.params.krylov.enable = false;
    let a = run_simulation(&on, &OutputOptions::default())?;
    let b = run_simulation(&off, &OutputOptions::default())?;
    let min_nodes = a.trees.iter().map(|t| t.stress_nodes).min().unwrap_or(0);
    let (k, be) = (a.timing.krylov_s, b.timing.backward_euler_s);
    verdict(
        min_nodes >= 1000 && a.solver.backward_euler == 0 && a.cache.hits > 0 && k <= be,
        format!(
            "{} trees, n >= {min_nodes}, cache hit rate {:.2}, Krylov {k:.2}s vs BE {be:.2}s, speedup {:.2}x",
            a.tree_count,
            a.cache.hit_rate(),
            be / k
        ),
    )
}

fn c4_blech_screen() -> Result<Verdict> {
    let mut params = synth::mesh_params(&MeshSpec::default());
    params.material.q_star = 0.0;
    params.material.sigma_t = 5e7;
    let m = params.material;
    let area = synth::WIRE.width * synth::WIRE.thickness;
    let lengths = [5, 8, 12, 18, 25, 35, 50, 70, 100, 140];
    let (mut mismatches, mut mortal, mut total, mut closest) = (0, 0, 0, f64::INFINITY);
    for k in 0..10 {
        let j = 2e9 * 20f64.powf(k as f64 / 9.0);
        for &len in &lengths {
            let doc = parse_netlist_with(&synth::single_wire(len, j * area, 1.0), &params.parse_options())?;
            let report = run_screening(&SimInputs::new(doc, params.clone(), None))?;
            let wire = report.trees.iter().find(|t| t.id.layer == 1).expect("wire tree");
            let slope = m.e_charge * m.z_eff * m.rho_el * j / m.omega;
            let margin = m.sigma_t + slope * len as f64 * 1e-6 / 2.0 - m.sigma_crit;
            closest = closest.min(margin.abs() / m.sigma_crit);
            let expect_mortal = margin > 0.0;
            mortal += expect_mortal as usize;
            total += 1;
            if (wire.classification == Classification::NeedsTransient) != expect_mortal {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0 && mortal > 0 && mortal < total,
        format!("{total} points, {mortal} mortal, {mismatches} mismatches, closest margin {closest:.2e} σ_crit"),
    )
}

fn c5_robin_split() -> Result<Verdict> {
    let p = synth::accelerated_params();
    let rho = p.material.rho_el;
    let ohms = |um: f64| rho * um * 1e-6 / (synth::WIRE.width * synth::WIRE.thickness);
    let netlist = format!(
        "R1 n1_0_0 n1_50_0 {}\nR2 n1_50_0 n1_100_0 {}\nR3 n1_50_0 n1_50_60 {}\n\
         RV n1_0_0 n2_0_0 0.5\nV1 n2_0_0 0 1\nI1 n1_100_0 0 2e-4\nI2 n1_50_60 0 1e-4\n",
        ohms(50.0),
        ohms(50.0),
        ohms(60.0)
    );
    let case = layer1_tree(&netlist, &p)?;
    let junction = case.doc.node_idx(&NodeId::new(1, 50, 0)).expect("junction node");
    let j_grid = case.grid.grid_of[&junction];
    let n = case.sys.len();
    let tau = 1.0 / tree_shift(&case.tree, &case.sys, 1.0);
    let delta = p.material.delta;

    // State at the moment the void opens.
    let pre = step_transient(
        &case.sys,
        &vec![p.material.sigma_t; n],
        &uniform_steps(0.25 * tau, 0.25 * tau / 50.0),
    )?;
    let sigma_nuc = pre.last();
    let dts = uniform_steps(tau, tau / 200.0);

    let mut joined = case.sys.clone();
    stamp_void_robin(&mut joined, j_grid, delta);
    let y = step_transient(&joined, &sigma_nuc, &dts)?;

    // Relaxation time of the void row: C_J over its Robin leak.
    let leak: f64 = joined
        .faces
        .iter()
        .filter(|f| f.left == j_grid || f.right == j_grid)
        .map(|f| joined.kappa[j_grid] * f.area / delta)
        .sum();
    let settle = 50.0 * joined.capacitance[j_grid] / leak;

    let mut worst = 0.0f64;
    let scale = (0..y.steps())
        .map(|k| y.state(k).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    for (bi, br) in case.tree.branches.iter().enumerate() {
        let split = WireTree {
            id: case.tree.id,
            branches: vec![br.clone()],
            junctions: BTreeMap::from([(br.a, vec![(0, BranchEnd::A)]), (br.b, vec![(0, BranchEnd::B)])]),
            cathode: None,
            chords: Vec::new(),
        };
        let grid = build_stress_grid(&split, p.sim.target_dx)?;
        let mut sys = assemble_stress_system(&split, &grid, &[case.profiles[bi]], &p.material)?;
        let y_nodes = &case.grid.branches[bi].nodes;
        let s_nodes = &grid.branches[0].nodes;
        let local_j = if br.a == junction { 0 } else { s_nodes.len() - 1 };
        stamp_void_robin(&mut sys, s_nodes[local_j], delta);
        let mut s0 = vec![0.0; sys.len()];
        for (&yn, &sn) in y_nodes.iter().zip(s_nodes) {
            s0[sn] = sigma_nuc[yn];
        }
        let s = step_transient(&sys, &s0, &dts)?;
        for k in 0..y.steps() {
            if y.times[k] < settle {
                continue;
            }
            for (&yn, &sn) in y_nodes.iter().zip(s_nodes) {
                worst = worst.max((y.states[(yn, k)] - s.states[(sn, k)]).abs() / scale);
            }
        }
    }
    verdict(
        worst < 0.01,
        format!("3-branch tree, settling {settle:.2e}s, max-norm difference {worst:.3e} of peak stress"),
    )
}

fn c6_conservation() -> Result<Verdict> {
    let mut p = synth::accelerated_params();
    p.material.sigma_t = 5e7;
    let mut worst = 0.0f64;
    for seed in 100..150u64 {
        let case = layer1_tree(&synth::random_tree(seed, &RandomTreeSpec::default()), &p)?;
        let tau = 1.0 / tree_shift(&case.tree, &case.sys, 1.0);
        let traj = step_transient(
            &case.sys,
            &vec![p.material.sigma_t; case.sys.len()],
            &uniform_steps(tau, tau / 50.0),
        )?;
        let c = &case.sys.capacitance;
        for k in 1..traj.steps() {
            let (prev, next) = (traj.state(k - 1), traj.state(k));
            if next.iter().cloned().fold(f64::MIN, f64::max) >= p.material.sigma_crit {
                break;
            }
            let drift = (case.sys.weighted_sum(&next) - case.sys.weighted_sum(&prev)).abs();
            let mass: f64 = c.iter().zip(&next).map(|(c, s)| c * s.abs()).sum();
            worst = worst.max(drift / mass);
        }
    }
    verdict(
        worst < 1e-8,
        format!("50 trees, max relative drift per step {worst:.3e}"),
    )
}

/// Solve `T'' = (T − T̄ − T_m)/Γ²` on `[0, L]` with Dirichlet ends by
/// second-order differences and the Thomas algorithm.
fn fd_profile(len: f64, t1: f64, t2: f64, t_m: f64, gamma: f64, cells: usize) -> Vec<f64> {
    let h = len / cells as f64;
    let m = cells - 1;
    let t_ref = 0.5 * (t1 + t2) + t_m;
    let off = -1.0 / (h * h);
    let diag = 2.0 / (h * h) + 1.0 / (gamma * gamma);
    let mut rhs = vec![t_ref / (gamma * gamma); m];
    rhs[0] -= off * t1;
    rhs[m - 1] -= off * t2;
    let (mut c, mut d) = (vec![0.0; m], vec![0.0; m]);
    c[0] = off / diag;
    d[0] = rhs[0] / diag;
    for i in 1..m {
        let den = diag - off * c[i - 1];
        c[i] = off / den;
        d[i] = (rhs[i] - off * d[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    let mut out = Vec::with_capacity(cells + 1);
    out.push(t1);
    out.extend(x);
    out.push(t2);
    out
}

fn c7_thermal_fd() -> Result<Verdict> {
    let tp = ThermalParams::default();
    let gamma = emgrid::thermal::char_length(&tp);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let cells = 1000;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(0.05..0.9) * std::f64::consts::PI * gamma;
        let j = rng.random_range(1e9..2e11) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let t1 = tp.t0 + rng.random_range(0.0..20.0);
        let t2 = tp.t0 + rng.random_range(0.0..20.0);
        let prof = BranchProfile::new(len, j, t1, t2, &tp)?;
        let t_m = j * j * tp.rho_cu * gamma * gamma / tp.k_cu;
        let fd = fd_profile(len, t1, t2, t_m, gamma, cells);
        let positions: Vec<f64> = (0..=cells).map(|i| len * i as f64 / cells as f64).collect();
        let closed = prof.sample(&positions);
        let scale = fd.iter().fold(0.0f64, |m, t| m.max((t - tp.t0).abs()));
        let err = closed.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    verdict(
        worst < 1e-3,
        format!("200 random branches, max error {worst:.3e} of max |T − T0|"),
    )
}

fn kcl_residual(doc: &NetlistDoc, v: &[f64]) -> f64 {
    let mut net = vec![0.0; doc.nodes.len()];
    for r in &doc.resistors {
        let i = (v[r.a] - v[r.b]) / r.resistance;
        net[r.a] += i;
        net[r.b] -= i;
    }
    for s in &doc.current_sources {
        net[s.node] += s.amps;
    }
    let mut fixed = vec![false; doc.nodes.len()];
    for s in &doc.voltage_sources {
        fixed[s.node] = true;
    }
    net.iter()
        .zip(&fixed)
        .filter(|(_, &f)| !f)
        .fold(0.0f64, |m, (x, _)| m.max(x.abs()))
}

/// Node voltages from a dense conductance matrix and LU.
fn dense_voltages(doc: &NetlistDoc) -> Vec<f64> {
    let n = doc.nodes.len();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for s in &doc.voltage_sources {
        fixed[s.node] = Some(s.volts);
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut row = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        row[i] = k;
    }
    let mut g = DMatrix::<f64>::zeros(free.len(), free.len());
    let mut rhs = DVector::<f64>::zeros(free.len());
    for r in &doc.resistors {
        let c = 1.0 / r.resistance;
        for (p, q) in [(r.a, r.b), (r.b, r.a)] {
            if row[p] == usize::MAX {
                continue;
            }
            g[(row[p], row[p])] += c;
            match fixed[q] {
                Some(u) => rhs[row[p]] += c * u,
                None => g[(row[p], row[q])] -= c,
            }
        }
    }
    for s in &doc.current_sources {
        if row[s.node] != usize::MAX {
            rhs[row[s.node]] -= s.amps;
        }
    }
    let x = g.lu().solve(&rhs).expect("non-singular conductance matrix");
    (0..n).map(|i| fixed[i].unwrap_or_else(|| x[row[i]])).collect()
}

fn c8_ir_drop() -> Result<Verdict> {
    let mut worst_kcl = 0.0f64;
    let mut meshes = 0;
    for (size, seed) in [(10, 1), (10, 2), (30, 3), (60, 4), (100, 5)] {
        let spec = MeshSpec {
            rows: size,
            cols: size,
            seed,
            ..Default::default()
        };
        let doc = parse_netlist_with(&synth::stripe_mesh(&spec), &synth::mesh_params(&spec).parse_options())?;
        worst_kcl = worst_kcl.max(kcl_residual(&doc, &analyze(&doc)?.voltages));
        meshes += 1;
    }
    let spec = MeshSpec {
        rows: 10,
        cols: 10,
        ..Default::default()
    };
    let doc = parse_netlist_with(&synth::stripe_mesh(&spec), &synth::mesh_params(&spec).parse_options())?;
    let sparse = analyze(&doc)?.voltages;
    let dense = dense_voltages(&doc);
    let lu_err = sparse
        .iter()
        .zip(&dense)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / b.abs()));
    verdict(
        worst_kcl < 1e-10 && lu_err < 1e-9,
        format!("{meshes} meshes, max KCL residual {worst_kcl:.3e} A; 10x10 dense LU relative error {lu_err:.3e}"),
    )
}

fn c9_monte_carlo() -> Result<Verdict> {
    let run = |design: synth::Design| -> Result<(usize, Option<f64>)> {
        let inputs = SimInputs::new(design.doc()?, design.params.clone(), None);
        let mut cfg = inputs.params.mc;
        cfg.samples = 100;
        cfg.cov = 0.2;
        cfg.seed = 2024;
        let r = run_mc(&inputs, &cfg)?;
        Ok((r.failed, r.stats.map(|s| s.cov)))
    };
    let (mf, mc) = run(synth::marginal_design())?;
    let (df, dc) = run(synth::deep_mortal_design())?;
    let marginal_ok = mc.is_some_and(|c| (0.06..=0.6).contains(&c));
    let deep_ok = dc.is_some_and(|c| c < 0.01);
    let pct = |c: Option<f64>| c.map_or("n/a".to_string(), |c| format!("{:.4}%", 100.0 * c));
    verdict(
        marginal_ok && deep_ok,
        format!(
            "input CoV 20%; marginal {mf}/100 failed, TTF CoV {}; deep-mortal {df}/100 failed, TTF CoV {}",
            pct(mc),
            pct(dc)
        ),
    )
}

fn c10_determinism() -> Result<Verdict> {
    let design = synth::marginal_design();
    let marginal = SimInputs::new(design.doc()?, design.params.clone(), None);
    let mesh = mesh_inputs(
        &MeshSpec {
            rows: 30,
            cols: 30,
            load: 4e-5,
            seed: 11,
            ..Default::default()
        },
        |_| {},
    )?;
    let mut identical = true;
    for inputs in [&marginal, &mesh] {
        let a = run_simulation(inputs, &OutputOptions::default())?.deterministic_json()?;
        let b = run_simulation(inputs, &OutputOptions::default())?.deterministic_json()?;
        identical &= a == b;
    }
    verdict(
        identical,
        "two designs, reports byte-identical across repeated runs".into(),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Krylov nucleation-time accuracy", c1_krylov_nucleation),
        ("pipeline metric error, Krylov on vs off", c2_pipeline_error),
        ("warm-cache Krylov speedup", c3_speedup),
        ("steady-state screening vs Blech criterion", c4_blech_screen),
        ("Robin void vs split tree", c5_robin_split),
        ("pre-nucleation conservation", c6_conservation),
        ("thermal closed form vs FD", c7_thermal_fd),
        ("IR-drop KCL and dense LU", c8_ir_drop),
        ("Monte Carlo regimes", c9_monte_carlo),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        failed += !v.pass as usize;
        println!(
            "criterion {:>2} {name}: {} ({}; {:.1}s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

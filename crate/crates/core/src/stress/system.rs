use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{MaterialParams, StressGrid, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{spmv, SparseMat, Stamps, SymFactor};
use crate::netlist::WireTree;
use crate::thermal::BranchProfile;

/// Interface between two neighbouring control volumes of one branch,
/// oriented from `left` (towards the branch's `a` end) to `right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub branch: usize,
    /// Harmonic mean of the two node diffusivities.
    pub kappa: f64,
    pub area: f64,
    pub dx: f64,
    /// Thermomigration stress gradient at the face midpoint.
    pub tm_gradient: f64,
}

impl Face {
    /// κ_f A / Δx.
    pub fn conductance(&self) -> f64 {
        self.kappa * self.area / self.dx
    }
}

/// Descriptor system `C σ' = A σ + B j − D` for one tree.
#[derive(Debug, Clone)]
pub struct StressSystem {
    /// Control-volume sizes (diagonal of C), m³.
    pub capacitance: Vec<f64>,
    /// Diffusion stamp; symmetric, negative semidefinite.
    pub diffusion: SparseMat,
    /// Electron-wind input map, one column per branch.
    pub drive: SparseMat,
    /// Thermomigration drive.
    pub thermo: Vec<f64>,
    /// Branch current densities, A/m².
    pub current_density: Vec<f64>,
    pub kappa: Vec<f64>,
    pub temperature: Vec<f64>,
    pub faces: Vec<Face>,
    /// Node carrying a Robin void row, with its interface thickness.
    pub void: Option<(usize, f64)>,
    em_coefficient: f64,
}

impl StressSystem {
    pub fn len(&self) -> usize {
        self.capacitance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.capacitance.is_empty()
    }

    /// Constant input `f = B j − D`.
    pub fn load(&self) -> Vec<f64> {
        let mut f = spmv(&self.drive, &self.current_density);
        for (fi, di) in f.iter_mut().zip(&self.thermo) {
            *fi -= di;
        }
        f
    }

    pub fn capacitance_matrix(&self) -> SparseMat {
        crate::linalg::diag_matrix(&self.capacitance)
    }

    /// Σ C_i σ_i.
    pub fn weighted_sum(&self, sigma: &[f64]) -> f64 {
        self.capacitance.iter().zip(sigma).map(|(c, s)| c * s).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.capacitance.iter().sum()
    }

    /// Rebuild `A`, `B` and `D` from the face list and the void state.
    pub(crate) fn rebuild(&mut self) {
        let n = self.len();
        let p = self.current_density.len();
        let void = self.void.map(|(v, _)| v);
        let mut a = Stamps::new(n, n);
        let mut b = Stamps::new(n, p);
        let mut d = vec![0.0; n];
        for f in &self.faces {
            a.couple(f.left, f.right, -f.conductance());
            let flux = f.kappa * f.area;
            if void != Some(f.left) {
                b.add(f.left, f.branch, -flux * self.em_coefficient);
                d[f.left] += flux * f.tm_gradient;
            }
            if void != Some(f.right) {
                b.add(f.right, f.branch, flux * self.em_coefficient);
                d[f.right] -= flux * f.tm_gradient;
            }
        }
        if let Some((v, delta)) = self.void {
            let leak: f64 = self
                .faces
                .iter()
                .filter(|f| f.left == v || f.right == v)
                .map(|f| self.kappa[v] * f.area / delta)
                .sum();
            a.add(v, v, -leak);
        }
        self.diffusion = a.to_csr();
        self.drive = b.to_csr();
        self.thermo = d;
    }
}

/// Stamp the finite-volume system for `tree` on `grid`. `profiles` holds one
/// temperature profile per branch, in tree branch order.
pub fn assemble_stress_system(
    tree: &WireTree,
    grid: &StressGrid,
    profiles: &[BranchProfile],
    mat: &MaterialParams,
) -> Result<StressSystem> {
    if profiles.len() != tree.branches.len() || grid.branches.len() != tree.branches.len() {
        return Err(Error::Internal(format!(
            "tree {} has {} branches but {} profiles and {} grid branches",
            tree.id,
            tree.branches.len(),
            profiles.len(),
            grid.branches.len()
        )));
    }
    let n = grid.len();
    let mut temperature = vec![0.0; n];
    for (i, &(bi, k)) in grid.locate.iter().enumerate() {
        temperature[i] = profiles[bi].temperature(grid.branches[bi].position(k));
    }
    let mut kappa = Vec::with_capacity(n);
    for (i, &t) in temperature.iter().enumerate() {
        let k = mat.kappa(t);
        if !(t > 0.0 && k.is_finite() && k > 0.0) {
            return Err(Error::Input(format!(
                "tree {}: non-physical diffusivity {k:e} at grid node {i} (T = {t} K)",
                tree.id
            )));
        }
        kappa.push(k);
    }

    let mut capacitance = vec![0.0; n];
    let mut faces = Vec::with_capacity(n);
    for (bi, (bg, br)) in grid.branches.iter().zip(&tree.branches).enumerate() {
        let area = br.area();
        let prof = &profiles[bi];
        for w in 0..bg.intervals() {
            let (l, r) = (bg.nodes[w], bg.nodes[w + 1]);
            capacitance[l] += 0.5 * area * bg.dx;
            capacitance[r] += 0.5 * area * bg.dx;
            let mid = (w as f64 + 0.5) * bg.dx;
            let t_mid = prof.temperature(mid);
            faces.push(Face {
                left: l,
                right: r,
                branch: bi,
                kappa: 2.0 * kappa[l] * kappa[r] / (kappa[l] + kappa[r]),
                area,
                dx: bg.dx,
                tm_gradient: mat.tm_gradient(t_mid, prof.gradient(mid)),
            });
        }
    }

    let mut sys = StressSystem {
        capacitance,
        diffusion: SparseMat::zero((n, n)),
        drive: SparseMat::zero((n, tree.branches.len())),
        thermo: vec![0.0; n],
        current_density: tree.branches.iter().map(|b| b.current_density).collect(),
        kappa,
        temperature,
        faces,
        void: None,
        em_coefficient: mat.em_coefficient(),
    };
    sys.rebuild();
    Ok(sys)
}

/// Stationary stress under blocking terminals. The diffusion stamp is
/// singular, so one node is pinned and the solution is shifted until the
/// volume-weighted mean equals `sigma_t`.
pub fn solve_steady_state(sys: &StressSystem, sigma_t: f64) -> Result<Vec<f64>> {
    if sys.void.is_some() {
        return Err(Error::Input(
            "steady state requires blocking terminals (no void)".into(),
        ));
    }
    let n = sys.len();
    let f = sys.load();
    let mut sigma = vec![0.0; n];
    if n > 1 {
        let mut st = Stamps::new(n - 1, n - 1);
        for face in &sys.faces {
            let g = face.conductance();
            match (face.left, face.right) {
                (0, r) => st.add(r - 1, r - 1, g),
                (l, 0) => st.add(l - 1, l - 1, g),
                (l, r) => st.couple(l - 1, r - 1, g),
            }
        }
        let factor = SymFactor::new(&st.to_csr()).map_err(|e| e.context("pinned steady-state stress system"))?;
        let reduced = factor.solve(&f[1..]);
        sigma[1..].copy_from_slice(&reduced);
    }
    let shift = sigma_t - sys.weighted_sum(&sigma) / sys.total_volume();
    sigma.iter_mut().for_each(|s| *s += shift);
    Ok(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    Immortal,
    NeedsTransient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenResult {
    pub tree: Classification,
    pub branches: Vec<Classification>,
    pub max_stress: f64,
}

/// A branch is immortal iff no node on it exceeds `sigma_crit` at steady
/// state; a tree is immortal iff all its branches are.
pub fn screen_tree(grid: &StressGrid, steady: &[f64], sigma_crit: f64) -> ScreenResult {
    let branches: Vec<Classification> = grid
        .branches
        .iter()
        .map(|bg| {
            let worst = bg
                .nodes
                .iter()
                .map(|&i| steady[i])
                .filter(|s| s.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > sigma_crit {
                Classification::NeedsTransient
            } else {
                Classification::Immortal
            }
        })
        .collect();
    let tree = if branches.contains(&Classification::NeedsTransient) {
        Classification::NeedsTransient
    } else {
        Classification::Immortal
    };
    ScreenResult {
        tree,
        branches,
        max_stress: steady.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Factorized backward Euler step `(C − Δt A) σ⁺ = C σ + Δt f`.
#[derive(Debug, Clone)]
pub struct BackwardEuler {
    pub dt: f64,
    factor: SymFactor,
}

impl BackwardEuler {
    pub fn new(sys: &StressSystem, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Input(format!("time step must be positive, got {dt}")));
        }
        let m = crate::linalg::add_scaled(&sys.capacitance_matrix(), -dt, &sys.diffusion);
        let factor = SymFactor::new(&m).map_err(|e| e.context("backward Euler matrix"))?;
        Ok(Self { dt, factor })
    }

    pub fn step(&self, sys: &StressSystem, load: &[f64], sigma: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = sys
            .capacitance
            .iter()
            .zip(sigma)
            .zip(load)
            .map(|((c, s), f)| c * s + self.dt * f)
            .collect();
        self.factor.solve(&rhs)
    }
}

/// Backward Euler trajectory from `sigma0` over the step list `dts`; one
/// factorization per distinct step length.
pub fn step_transient(sys: &StressSystem, sigma0: &[f64], dts: &[f64]) -> Result<Trajectory> {
    let n = sys.len();
    if sigma0.len() != n {
        return Err(Error::Internal(format!(
            "initial stress has {} entries for {n} nodes",
            sigma0.len()
        )));
    }
    let load = sys.load();
    let mut factors: BTreeMap<u64, BackwardEuler> = BTreeMap::new();
    let mut states = DMatrix::zeros(n, dts.len() + 1);
    states.column_mut(0).copy_from_slice(sigma0);
    let mut times = Vec::with_capacity(dts.len() + 1);
    times.push(0.0);
    let mut sigma = sigma0.to_vec();
    for (k, &dt) in dts.iter().enumerate() {
        let be = match factors.entry(dt.to_bits()) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(BackwardEuler::new(sys, dt)?),
        };
        sigma = be.step(sys, &load, &sigma);
        states.column_mut(k + 1).copy_from_slice(&sigma);
        times.push(times[k] + dt);
    }
    Ok(Trajectory { times, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nucleation {
    pub node: usize,
    /// Interpolated crossing time.
    pub time: f64,
    /// First snapshot index at or above the threshold.
    pub step: usize,
}

/// First snapshot whose maximum stress reaches `sigma_crit`. The crossing
/// time is interpolated linearly on the maximum stress between snapshots.
pub fn detect_nucleation(traj: &Trajectory, sigma_crit: f64) -> Option<Nucleation> {
    let mut prev: Option<f64> = None;
    for k in 0..traj.steps() {
        let (node, m) = traj.max_at(k);
        if m >= sigma_crit {
            let time = match prev {
                None => traj.times[k],
                Some(mp) => {
                    let (t0, t1) = (traj.times[k - 1], traj.times[k]);
                    let frac = ((sigma_crit - mp) / (m - mp)).clamp(0.0, 1.0);
                    // Keep the crossing inside (t_{k-1}, t_k].
                    (t0 + frac * (t1 - t0)).max(t0 + f64::EPSILON * t1.abs()).min(t1)
                }
            };
            return Some(Nucleation { node, time, step: k });
        }
        prev = Some(m);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{extract_trees, parse_netlist};
    use crate::stress::build_stress_grid;
    use crate::thermal::ThermalParams;

    fn wire(len_um: i64, j: f64) -> WireTree {
        let doc = parse_netlist(&format!("V1 n1_0_0 0 1\nR1 n1_0_0 n1_{len_um}_0 1\n")).unwrap();
        let mut t = extract_trees(&doc).remove(0);
        t.branches[0].current_density = j;
        t
    }

    fn isothermal(tree: &WireTree, t: f64) -> Vec<BranchProfile> {
        tree.branches
            .iter()
            .map(|b| BranchProfile::isothermal(b.length, t))
            .collect()
    }

    fn no_tm() -> MaterialParams {
        MaterialParams {
            q_star: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn two_node_stencil() {
        let tree = wire(4, 0.0);
        let grid = build_stress_grid(&tree, 10e-6).unwrap();
        let mat = no_tm();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
        let k = mat.kappa(353.0);
        let (dx, area) = (4e-6, 1e-14);
        let g = k * area / dx;
        assert!((sys.diffusion.get(0, 0).unwrap() + g).abs() < 1e-12 * g);
        assert!((sys.diffusion.get(0, 1).unwrap() - g).abs() < 1e-12 * g);
        // C⁻¹A has the textbook 2κ/Δx² scale.
        let rate = sys.diffusion.get(0, 1).unwrap() / sys.capacitance[0];
        assert!((rate - 2.0 * k / (dx * dx)).abs() < 1e-10 * rate);
    }

    #[test]
    fn pure_diffusion_has_no_drive() {
        let tree = wire(20, 0.0);
        let grid = build_stress_grid(&tree, 1e-6).unwrap();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &no_tm()).unwrap();
        assert!(sys.load().iter().all(|&f| f == 0.0));
        for row in sys.diffusion.outer_iterator() {
            let s: f64 = row.iter().map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-30);
        }
        let ss = solve_steady_state(&sys, 1e7).unwrap();
        assert!(ss.iter().all(|&s| (s - 1e7).abs() < 1e-3));
    }

    #[test]
    fn uniform_wire_linear_steady_state() {
        let (len, j) = (30, 2e10);
        let tree = wire(len, j);
        let grid = build_stress_grid(&tree, 1e-6).unwrap();
        let mat = no_tm();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
        let ss = solve_steady_state(&sys, mat.sigma_t).unwrap();
        let s = mat.em_gradient(j);
        let l = len as f64 * 1e-6;
        for (i, &(_, k)) in grid.locate.iter().enumerate() {
            let x = grid.branches[0].position(k);
            let expect = mat.sigma_t + s * (x - l / 2.0);
            assert!((ss[i] - expect).abs() < 1e-9 * s * l, "{} vs {expect}", ss[i]);
        }
    }

    #[test]
    fn thermomigration_steady_state_matches_quadrature() {
        let (len, j) = (12, 3e10);
        let tree = wire(len, j);
        let l = len as f64 * 1e-6;
        let tp = ThermalParams::default();
        let prof = BranchProfile::new(l, j, 358.0, 349.0, &tp).unwrap();
        let grid = build_stress_grid(&tree, 0.1e-6).unwrap();
        let mat = MaterialParams::default();
        let sys = assemble_stress_system(&tree, &grid, &[prof], &mat).unwrap();
        let ss = solve_steady_state(&sys, mat.sigma_t).unwrap();

        // Oracle: composite Simpson integral of S + M with M from a centred
        // difference of the sampled temperature, then recentred.
        let s = mat.em_gradient(j);
        let m_of = |x: f64| {
            let h = 1e-10;
            let dtdx = (prof.temperature(x + h) - prof.temperature(x - h)) / (2.0 * h);
            mat.tm_gradient(prof.temperature(x), dtdx)
        };
        let integral = |x: f64| {
            let n = 400;
            let h = x / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * (s + m_of((i as f64 * h).clamp(1e-12, l - 1e-12)));
            }
            acc * h / 3.0
        };
        let bg = &grid.branches[0];
        let raw: Vec<f64> = (0..bg.nodes.len()).map(|k| integral(bg.position(k))).collect();
        let mean = raw
            .iter()
            .enumerate()
            .map(|(k, v)| v * if k == 0 || k == raw.len() - 1 { 0.5 } else { 1.0 })
            .sum::<f64>()
            / (raw.len() - 1) as f64;
        let span = raw.last().unwrap() - raw[0];
        for (k, &gi) in bg.nodes.iter().enumerate() {
            let expect = mat.sigma_t + raw[k] - mean;
            assert!((ss[gi] - expect).abs() < 1e-3 * span.abs(), "{} vs {expect}", ss[gi]);
        }
        // Thermomigration visibly changes the profile.
        let pure = s * l;
        assert!((span - pure).abs() > 1e-4 * pure.abs());
    }

    #[test]
    fn steady_face_flux_vanishes() {
        let tree = wire(15, 1.5e10);
        let tp = ThermalParams::default();
        let l = 15e-6;
        let prof = BranchProfile::new(l, 1.5e10, 355.0, 352.0, &tp).unwrap();
        let grid = build_stress_grid(&tree, 0.5e-6).unwrap();
        let mat = MaterialParams::default();
        let sys = assemble_stress_system(&tree, &grid, &[prof], &mat).unwrap();
        let ss = solve_steady_state(&sys, 0.0).unwrap();
        let s = mat.em_gradient(1.5e10);
        for f in &sys.faces {
            let flux = f.kappa * ((ss[f.right] - ss[f.left]) / f.dx - s - f.tm_gradient);
            assert!(flux.abs() < 1e-6 * s.abs() * f.kappa);
        }
    }

    #[test]
    fn screening_uses_max_node_stress() {
        let mat = no_tm();
        let j = 1e10;
        let s = mat.em_gradient(j);
        // σ_max = S L / 2; pick lengths either side of σ_crit.
        let l_crit = 2.0 * mat.sigma_crit / s;
        for (len, expect) in [
            ((0.8 * l_crit * 1e6) as i64, Classification::Immortal),
            ((1.2 * l_crit * 1e6) as i64, Classification::NeedsTransient),
        ] {
            let tree = wire(len, j);
            let grid = build_stress_grid(&tree, 1e-6).unwrap();
            let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
            let ss = solve_steady_state(&sys, 0.0).unwrap();
            assert_eq!(screen_tree(&grid, &ss, mat.sigma_crit).tree, expect);
        }
    }

    #[test]
    fn one_hot_branch_flags_tree_only_there() {
        let doc = parse_netlist("V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nR2 n1_10_0 n1_200_0 1\n").unwrap();
        let mut tree = extract_trees(&doc).remove(0);
        tree.branches[0].current_density = 0.0;
        tree.branches[1].current_density = 2e10;
        let grid = build_stress_grid(&tree, 2e-6).unwrap();
        let mat = no_tm();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
        let ss = solve_steady_state(&sys, 0.0).unwrap();
        let r = screen_tree(&grid, &ss, mat.sigma_crit);
        assert_eq!(r.tree, Classification::NeedsTransient);
        assert_eq!(
            r.branches,
            vec![Classification::Immortal, Classification::NeedsTransient]
        );
    }

    #[test]
    fn zero_drive_trajectory_is_constant() {
        let tree = wire(10, 0.0);
        let grid = build_stress_grid(&tree, 1e-6).unwrap();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &no_tm()).unwrap();
        let s0 = vec![5e6; sys.len()];
        let tr = step_transient(&sys, &s0, &[1e6; 20]).unwrap();
        for k in 0..tr.steps() {
            for v in tr.state(k) {
                assert!((v - 5e6).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn long_transient_reaches_steady_state() {
        let tree = wire(20, 1e10);
        let grid = build_stress_grid(&tree, 1e-6).unwrap();
        let mat = no_tm();
        let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
        let ss = solve_steady_state(&sys, 0.0).unwrap();
        let l = 20e-6;
        let t_long = 50.0 * l * l / (std::f64::consts::PI.powi(2) * mat.kappa(353.0));
        let tr = step_transient(&sys, &vec![0.0; sys.len()], &vec![t_long / 400.0; 400]).unwrap();
        let end = tr.last();
        let err = end.iter().zip(&ss).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = ss.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err / scale < 1e-4, "{}", err / scale);
    }

    #[test]
    fn nucleation_bracket_and_current_monotonicity() {
        let mat = no_tm();
        let l = 100e-6;
        let tau = l * l / (std::f64::consts::PI.powi(2) * mat.kappa(353.0));
        let mut last = f64::INFINITY;
        for j in [1.0e10, 1.5e10, 2.0e10, 3.0e10] {
            let tree = wire(100, j);
            let grid = build_stress_grid(&tree, 2e-6).unwrap();
            let sys = assemble_stress_system(&tree, &grid, &isothermal(&tree, 353.0), &mat).unwrap();
            let tr = step_transient(&sys, &vec![0.0; sys.len()], &vec![tau / 100.0; 200]).unwrap();
            let nuc = detect_nucleation(&tr, mat.sigma_crit).unwrap();
            assert!(nuc.time > tr.times[nuc.step - 1] && nuc.time <= tr.times[nuc.step]);
            // Tensile stress builds up at the b end for positive j.
            assert_eq!(nuc.node, grid.branches[0].nodes.last().copied().unwrap());
            assert!(nuc.time < last);
            last = nuc.time;
        }
    }

    #[test]
    fn conservation_per_step() {
        let doc =
            parse_netlist("V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nR2 n1_10_0 n1_30_0 2\nR3 n1_10_0 n1_10_15 1\n").unwrap();
        let mut tree = extract_trees(&doc).remove(0);
        for (b, j) in tree.branches.iter_mut().zip([2e10, -1e10, 3e10]) {
            b.current_density = j;
        }
        let tp = ThermalParams::default();
        let profiles: Vec<BranchProfile> = tree
            .branches
            .iter()
            .map(|b| BranchProfile::new(b.length, b.current_density, 354.0, 352.0, &tp).unwrap())
            .collect();
        let grid = build_stress_grid(&tree, 1e-6).unwrap();
        let sys = assemble_stress_system(&tree, &grid, &profiles, &MaterialParams::default()).unwrap();
        let tr = step_transient(&sys, &vec![1e6; sys.len()], &[1e8; 50]).unwrap();
        let base = sys.weighted_sum(&tr.state(0));
        for k in 1..tr.steps() {
            let s = sys.weighted_sum(&tr.state(k));
            assert!((s - base).abs() <= 1e-8 * base.abs());
        }
    }
}

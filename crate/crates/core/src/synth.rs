//! Synthetic power grids and wire trees for tests, benchmarks and the
//! `synth` command. Coordinates are in micrometres; layer 1 carries the
//! loads, layer 2 the supply.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::netlist::{parse_netlist_with, LayerGeometry, NetlistDoc};
use crate::params::Params;

/// Cross-section used for every synthetic layer unless overridden.
pub const WIRE: LayerGeometry = LayerGeometry {
    width: 1e-7,
    thickness: 1e-7,
};

/// Parameters with a raised ambient so stress builds within the default
/// outer horizon; the remaining values are the library defaults.
pub fn accelerated_params() -> Params {
    let mut p = Params::default();
    p.thermal.t0 = 473.0;
    p
}

fn wire_ohms(length_um: f64, g: LayerGeometry, rho: f64) -> f64 {
    rho * length_um * 1e-6 / (g.width * g.thickness)
}

/// Netlist text plus the parameters it was designed for.
#[derive(Debug, Clone)]
pub struct Design {
    pub netlist: String,
    pub params: Params,
}

impl Design {
    pub fn doc(&self) -> Result<NetlistDoc> {
        parse_netlist_with(&self.netlist, &self.params.parse_options())
    }
}

/// One straight layer-1 wire from `(0,0)` to `(length,0)`, fed through a via
/// at the origin and loaded at the far end.
pub fn single_wire(length_um: i64, load_amps: f64, vdd: f64) -> String {
    let rho = Params::default().material.rho_el;
    let mut s = String::new();
    writeln!(s, "* single wire").unwrap();
    writeln!(
        s,
        "R1 n1_0_0 n1_{length_um}_0 {}",
        wire_ohms(length_um as f64, WIRE, rho)
    )
    .unwrap();
    writeln!(s, "RV n1_0_0 n2_0_0 0.5").unwrap();
    writeln!(s, "V1 n2_0_0 0 {vdd}").unwrap();
    writeln!(s, "I1 n1_{length_um}_0 0 {load_amps}").unwrap();
    s
}

#[derive(Debug, Clone, Copy)]
pub struct RandomTreeSpec {
    pub branches: usize,
    /// Branch length range, µm.
    pub min_len: i64,
    pub max_len: i64,
    /// Load per leaf, amperes; each leaf draws a uniform fraction in
    /// `[0.2, 1]` of it.
    pub leaf_load: f64,
    pub vdd: f64,
}

impl Default for RandomTreeSpec {
    fn default() -> Self {
        Self {
            branches: 20,
            min_len: 5,
            max_len: 40,
            leaf_load: 1e-4,
            vdd: 1.0,
        }
    }
}

/// A random rectilinear layer-1 tree rooted at a supply via. Branches grow
/// from random existing nodes in random axis directions; endpoints never
/// coincide, so the resistor graph is a tree.
pub fn random_tree(seed: u64, spec: &RandomTreeSpec) -> String {
    let rho = Params::default().material.rho_el;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut points: Vec<(i64, i64)> = vec![(0, 0)];
    let mut used: HashSet<(i64, i64)> = points.iter().copied().collect();
    let mut degree = vec![0usize];
    let mut edges: Vec<(usize, usize, i64)> = Vec::new();
    let dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    while edges.len() < spec.branches {
        let from = rng.random_range(0..points.len());
        let &(dx, dy) = dirs.choose(&mut rng).unwrap();
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let p = (points[from].0 + dx * len, points[from].1 + dy * len);
        if !used.insert(p) {
            continue;
        }
        points.push(p);
        degree.push(1);
        degree[from] += 1;
        edges.push((from, points.len() - 1, len));
    }
    let name = |i: usize| format!("n1_{}_{}", points[i].0, points[i].1);
    let mut s = String::new();
    writeln!(s, "* random tree seed={seed}").unwrap();
    for (k, &(a, b, len)) in edges.iter().enumerate() {
        writeln!(s, "R{k} {} {} {}", name(a), name(b), wire_ohms(len as f64, WIRE, rho)).unwrap();
    }
    writeln!(s, "RV {} n2_0_0 0.5", name(0)).unwrap();
    writeln!(s, "V1 n2_0_0 0 {}", spec.vdd).unwrap();
    for (i, _) in degree.iter().enumerate().skip(1).filter(|(_, &d)| d == 1) {
        let amps = spec.leaf_load * rng.random_range(0.2..1.0);
        writeln!(s, "I{i} {} 0 {amps}", name(i)).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub struct MeshSpec {
    /// Layer-1 stripes (along x).
    pub rows: usize,
    /// Layer-2 stripes (along y).
    pub cols: usize,
    /// Stripe pitch, µm.
    pub pitch: i64,
    /// Vias sit at crossings whose index sum is a multiple of this, so every
    /// stripe gets vias when it crosses at least this many others.
    pub via_every: usize,
    /// Mean load per layer-1 crossing, amperes.
    pub load: f64,
    /// Relative uniform spread of the loads, in `[0, 1)`.
    pub load_spread: f64,
    pub vdd: f64,
    pub via_ohms: f64,
    pub layer2: LayerGeometry,
    pub seed: u64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 100,
            pitch: 10,
            via_every: 3,
            load: 2e-5,
            load_spread: 0.5,
            vdd: 1.0,
            via_ohms: 0.5,
            layer2: LayerGeometry {
                width: 4e-7,
                thickness: 2e-7,
            },
            seed: 1,
        }
    }
}

/// Two-layer stripe mesh: `rows` layer-1 trees and `cols` layer-2 trees.
/// Supply pads sit at both ends of every layer-2 stripe.
pub fn stripe_mesh(spec: &MeshSpec) -> String {
    let rho = Params::default().material.rho_el;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let p = spec.pitch;
    let mut s = String::new();
    writeln!(s, "* stripe mesh {}x{} pitch={}um", spec.rows, spec.cols, p).unwrap();
    let r1 = wire_ohms(p as f64, WIRE, rho);
    let r2 = wire_ohms(p as f64, spec.layer2, rho);
    for i in 0..spec.rows as i64 {
        for j in 0..spec.cols as i64 - 1 {
            let (x, y) = (j * p, i * p);
            writeln!(s, "RH{i}_{j} n1_{x}_{y} n1_{}_{y} {r1}", x + p).unwrap();
        }
    }
    for j in 0..spec.cols as i64 {
        for i in 0..spec.rows as i64 - 1 {
            let (x, y) = (j * p, i * p);
            writeln!(s, "RW{j}_{i} n2_{x}_{y} n2_{x}_{} {r2}", y + p).unwrap();
        }
    }
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let (x, y) = (j as i64 * p, i as i64 * p);
            if (i + j) % spec.via_every == 0 {
                writeln!(s, "RV{i}_{j} n1_{x}_{y} n2_{x}_{y} {}", spec.via_ohms).unwrap();
            }
            let amps = spec.load * (1.0 + spec.load_spread * rng.random_range(-1.0..1.0));
            writeln!(s, "I{i}_{j} n1_{x}_{y} 0 {amps}").unwrap();
        }
    }
    let top = (spec.rows as i64 - 1) * p;
    for j in 0..spec.cols as i64 {
        writeln!(s, "VB{j} n2_{}_0 0 {}", j * p, spec.vdd).unwrap();
        writeln!(s, "VT{j} n2_{}_{top} 0 {}", j * p, spec.vdd).unwrap();
    }
    s
}

/// Parameters matching `stripe_mesh` geometry.
pub fn mesh_params(spec: &MeshSpec) -> Params {
    let mut p = accelerated_params();
    p.layers.default = Some(WIRE);
    p.layers.layers.insert(1, WIRE);
    p.layers.layers.insert(2, spec.layer2);
    p
}

const REGIME_MESH: MeshSpec = MeshSpec {
    rows: 7,
    cols: 7,
    pitch: 20,
    via_every: 3,
    load: 9e-5,
    load_spread: 0.0,
    vdd: 1.0,
    via_ohms: 0.5,
    layer2: LayerGeometry {
        width: 4e-7,
        thickness: 2e-7,
    },
    seed: 1,
};

/// Small mesh whose void nucleation and growth span many outer steps, so
/// the failure time tracks the perturbed diffusivity and critical stress.
pub fn marginal_design() -> Design {
    let spec = REGIME_MESH;
    let mut params = mesh_params(&spec);
    params.sim.outer_steps = 40;
    params.sim.outer_dt = 1e4;
    Design {
        netlist: stripe_mesh(&spec),
        params,
    }
}

/// The same mesh hotter and with a coarse outer step: every mortal tree
/// voids and saturates within the first step for any plausible
/// perturbation, so the drop history and failure time do not move.
pub fn deep_mortal_design() -> Design {
    let spec = REGIME_MESH;
    let mut params = mesh_params(&spec);
    params.thermal.t0 = 573.0;
    params.sim.outer_steps = 10;
    params.sim.outer_dt = 5e6;
    Design {
        netlist: stripe_mesh(&spec),
        params,
    }
}

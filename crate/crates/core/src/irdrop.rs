//! Modified nodal analysis of the resistive grid.
//!
//! Supply pads are Dirichlet nodes and are eliminated, leaving a symmetric
//! positive definite conductance system over the free nodes.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, spmv, SparseMat, Stamps, SymFactor};
use crate::netlist::{NetlistDoc, WireTree};

#[derive(Debug, Clone)]
pub struct MnaSystem {
    /// Reduced conductance matrix over the free nodes.
    pub matrix: SparseMat,
    pub rhs: Vec<f64>,
    /// Free-system row -> netlist node.
    pub free: Vec<usize>,
    /// Netlist node -> free-system row (None for supply nodes).
    pub position: Vec<Option<usize>>,
    /// Supply nodes and their fixed voltage.
    pub dirichlet: Vec<(usize, f64)>,
    pub supply: f64,
    resistors: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct IrSolution {
    /// Voltage at every netlist node.
    pub voltages: Vec<f64>,
    /// Current through every resistor, positive from `a` to `b`.
    pub branch_currents: Vec<f64>,
    pub supply: f64,
    /// max over nodes of (V_src - u) / V_src.
    pub max_drop_fraction: f64,
    /// ‖M u − rhs‖∞ of the reduced solve.
    pub residual: f64,
}

pub fn assemble_mna(doc: &NetlistDoc) -> Result<MnaSystem> {
    let n = doc.nodes.len();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for v in &doc.voltage_sources {
        match fixed[v.node] {
            Some(prev) if prev != v.volts => {
                return Err(Error::Input(format!(
                    "node {} driven by conflicting supplies {prev} V and {} V",
                    doc.nodes[v.node], v.volts
                )))
            }
            _ => fixed[v.node] = Some(v.volts),
        }
    }
    if fixed.iter().all(Option::is_none) {
        return Err(Error::NoSupply);
    }

    // Every free node must reach a supply, otherwise M is singular.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in &doc.resistors {
        adj[r.a].push(r.b);
        adj[r.b].push(r.a);
    }
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| fixed[i].is_some()).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    let floating: Vec<String> = (0..n)
        .filter(|&i| !seen[i])
        .map(|i| doc.nodes[i].raw_name.clone())
        .collect();
    if !floating.is_empty() {
        return Err(Error::FloatingNodes { nodes: floating });
    }

    let mut position = vec![None; n];
    let mut free = Vec::new();
    for i in 0..n {
        if fixed[i].is_none() {
            position[i] = Some(free.len());
            free.push(i);
        }
    }
    let m = free.len();
    let mut st = Stamps::new(m, m);
    let mut rhs = vec![0.0; m];
    let mut resistors = Vec::with_capacity(doc.resistors.len());
    for r in &doc.resistors {
        let g = 1.0 / r.resistance;
        resistors.push((r.a, r.b, r.resistance));
        match (position[r.a], position[r.b]) {
            (Some(pa), Some(pb)) => st.couple(pa, pb, g),
            (Some(pa), None) => {
                st.add(pa, pa, g);
                rhs[pa] += g * fixed[r.b].unwrap();
            }
            (None, Some(pb)) => {
                st.add(pb, pb, g);
                rhs[pb] += g * fixed[r.a].unwrap();
            }
            (None, None) => {}
        }
    }
    for i in &doc.current_sources {
        if let Some(p) = position[i.node] {
            rhs[p] -= i.amps;
        }
    }
    let dirichlet = (0..n).filter_map(|i| fixed[i].map(|v| (i, v))).collect();
    Ok(MnaSystem {
        matrix: st.to_csr(),
        rhs,
        free,
        position,
        dirichlet,
        supply: doc.supply_voltage(),
        resistors,
    })
}

pub fn solve_ir(sys: &MnaSystem) -> Result<IrSolution> {
    let n = sys.position.len();
    let mut voltages = vec![0.0; n];
    for &(i, v) in &sys.dirichlet {
        voltages[i] = v;
    }
    let mut residual = 0.0;
    if !sys.free.is_empty() {
        let factor = SymFactor::new(&sys.matrix)
            .map_err(|e| e.context(format!("MNA system with {} free nodes", sys.free.len())))?;
        let u = factor.solve(&sys.rhs);
        let mu = spmv(&sys.matrix, &u);
        let res: Vec<f64> = mu.iter().zip(&sys.rhs).map(|(a, b)| a - b).collect();
        residual = norm_inf(&res);
        let scale = norm_inf(&sys.rhs).max(f64::MIN_POSITIVE);
        if residual > 1e-10 * scale {
            return Err(Error::Factorization {
                context: Some("MNA".into()),
                msg: format!("residual {residual:e} exceeds tolerance"),
            });
        }
        for (k, &node) in sys.free.iter().enumerate() {
            voltages[node] = u[k];
        }
    }
    let branch_currents = sys
        .resistors
        .iter()
        .map(|&(a, b, r)| (voltages[a] - voltages[b]) / r)
        .collect();
    let max_drop_fraction = voltages
        .iter()
        .map(|&u| (sys.supply - u) / sys.supply)
        .fold(0.0, f64::max);
    Ok(IrSolution {
        voltages,
        branch_currents,
        supply: sys.supply,
        max_drop_fraction,
        residual,
    })
}

/// Assemble and solve in one go.
pub fn analyze(doc: &NetlistDoc) -> Result<IrSolution> {
    solve_ir(&assemble_mna(doc)?)
}

/// Fill in branch current densities `j = I / (W H)`, signed along `a -> b`.
pub fn branch_current_densities(sol: &IrSolution, trees: &mut [WireTree]) {
    for tree in trees {
        for br in &mut tree.branches {
            br.current_density = sol.branch_currents[br.resistor] / br.area();
        }
    }
}

/// Resolve each tree's cathode: the node with the largest net conventional
/// current leaving the tree (electron inflow). Ties go to the lowest node id.
pub fn resolve_cathodes(doc: &NetlistDoc, sol: &IrSolution, trees: &mut [WireTree]) {
    for tree in trees {
        let mut best: Option<(usize, f64)> = None;
        for (&node, ends) in &tree.junctions {
            let outflow: f64 = ends
                .iter()
                .map(|&(bi, end)| {
                    let i = sol.branch_currents[tree.branches[bi].resistor];
                    match end {
                        crate::netlist::BranchEnd::B => i,
                        crate::netlist::BranchEnd::A => -i,
                    }
                })
                .sum();
            best = match best {
                None => Some((node, outflow)),
                Some((bn, bo)) => {
                    if outflow > bo || (outflow == bo && doc.nodes[node] < doc.nodes[bn]) {
                        Some((node, outflow))
                    } else {
                        Some((bn, bo))
                    }
                }
            };
        }
        tree.cathode = best.map(|(n, _)| n);
    }
}

/// Write `node,layer,x,y,voltage` rows.
pub fn write_voltage_csv<W: Write>(doc: &NetlistDoc, sol: &IrSolution, mut w: W) -> Result<()> {
    writeln!(w, "node,layer,x,y,voltage")?;
    for (i, n) in doc.nodes.iter().enumerate() {
        writeln!(w, "{},{},{},{},{}", n.raw_name, n.layer, n.x, n.y, sol.voltages[i])?;
    }
    Ok(())
}

//! Wire temperatures: endpoint resolution from an optional die thermal map,
//! and the closed-form stationary profile along each branch including
//! Joule self-heating.
//!
//! Along a branch of length `L` with endpoint temperatures `T1`, `T2` and
//! current density `j`, the stationary balance
//!
//! ```text
//! k T'' - k (T - T̄) / Γ² + j² ρ = 0,    T̄ = (T1 + T2) / 2
//! ```
//!
//! has the solution (x measured from the branch midpoint)
//!
//! ```text
//! T(x) = T̄ + T_m [1 - cosh(x/Γ) / cosh(L/2Γ)] - T_n sinh(x/Γ) / sinh(L/2Γ)
//! T_m  = j² ρ Γ² / k,   T_n = (T1 - T2) / 2
//! ```
//!
//! which meets both endpoint temperatures exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::netlist::{Branch, BranchEnd, NetlistDoc, WireTree};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ThermalParams {
    /// Copper thermal conductivity, W/(m K).
    pub k_cu: f64,
    /// Inter-layer dielectric thermal conductivity, W/(m K).
    pub k_ild: f64,
    /// Wire thickness used in the characteristic length, m.
    pub t_cu: f64,
    /// Dielectric thickness, m.
    pub t_ild: f64,
    /// Ambient reference temperature, K.
    pub t0: f64,
    /// Electrical resistivity for the Joule term, Ω m.
    pub rho_cu: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            k_cu: 400.0,
            k_ild: 1.2,
            t_cu: 3e-7,
            t_ild: 1e-7,
            t0: 353.0,
            rho_cu: 2.25e-8,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_cu", self.k_cu),
            ("k_ild", self.k_ild),
            ("t_cu", self.t_cu),
            ("t_ild", self.t_ild),
            ("t0", self.t0),
            ("rho_cu", self.rho_cu),
        ];
        for (k, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Param {
                    key: format!("thermal.{k}"),
                    msg: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Joule temperature rise scale `j² ρ Γ² / k_cu`.
    pub fn joule_rise(&self, j: f64) -> f64 {
        let g = char_length(self);
        j * j * self.rho_cu * g * g / self.k_cu
    }
}

/// Thermal characteristic length Γ = sqrt(t_cu t_ILD k_cu / k_ILD).
pub fn char_length(p: &ThermalParams) -> f64 {
    (p.t_cu * p.t_ild * p.k_cu / p.k_ild).sqrt()
}

/// Die temperature map on a regular grid (extent in micrometres).
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalMap {
    pub nx: usize,
    pub ny: usize,
    pub extent: (f64, f64, f64, f64),
    /// Row-major, `temps[iy * nx + ix]`, kelvin.
    pub temps: Vec<f64>,
}

impl ThermalMap {
    /// Parse `nx ny x0 y0 x1 y1` followed by `nx*ny` values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut toks = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| -> Result<&str> {
            toks.next()
                .ok_or_else(|| Error::Input(format!("thermal map: missing {what}")))
        };
        let nx: usize = next("nx")?
            .parse()
            .map_err(|_| Error::Input("thermal map: bad nx".into()))?;
        let ny: usize = next("ny")?
            .parse()
            .map_err(|_| Error::Input("thermal map: bad ny".into()))?;
        let mut ext = [0.0; 4];
        for (i, name) in ["x0", "y0", "x1", "y1"].iter().enumerate() {
            ext[i] = next(name)?
                .parse()
                .map_err(|_| Error::Input(format!("thermal map: bad {name}")))?;
        }
        let mut temps = Vec::with_capacity(nx * ny);
        for k in 0..nx * ny {
            let v: f64 = next("temperature")?
                .parse()
                .map_err(|_| Error::Input(format!("thermal map: bad value #{k}")))?;
            temps.push(v);
        }
        if next("end").is_ok() {
            return Err(Error::Input("thermal map: trailing values".into()));
        }
        let map = Self {
            nx,
            ny,
            extent: (ext[0], ext[1], ext[2], ext[3]),
            temps,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn uniform(value: f64, extent: (f64, f64, f64, f64)) -> Self {
        Self {
            nx: 2,
            ny: 2,
            extent,
            temps: vec![value; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (x0, y0, x1, y1) = self.extent;
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Input("thermal map needs nx, ny >= 2".into()));
        }
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Input("thermal map extent is degenerate".into()));
        }
        if self.temps.len() != self.nx * self.ny || self.temps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("thermal map values malformed".into()));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.temps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.temps.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear lookup at `(x, y)` µm. Points outside the extent are clamped;
    /// the flag reports whether clamping happened.
    pub fn sample(&self, x: f64, y: f64) -> (f64, bool) {
        let (x0, y0, x1, y1) = self.extent;
        let axis = |v: f64, lo: f64, hi: f64, n: usize| -> (usize, f64, bool) {
            let f = (v - lo) / (hi - lo) * (n - 1) as f64;
            let clamped = !(0.0..=(n - 1) as f64).contains(&f);
            let f = f.clamp(0.0, (n - 1) as f64);
            let i = (f.floor() as usize).min(n - 2);
            (i, f - i as f64, clamped)
        };
        let (ix, tx, cx) = axis(x, x0, x1, self.nx);
        let (iy, ty, cy) = axis(y, y0, y1, self.ny);
        let at = |i: usize, j: usize| self.temps[j * self.nx + i];
        let v = (1.0 - tx) * (1.0 - ty) * at(ix, iy)
            + tx * (1.0 - ty) * at(ix + 1, iy)
            + (1.0 - tx) * ty * at(ix, iy + 1)
            + tx * ty * at(ix + 1, iy + 1);
        (v, cx || cy)
    }
}

/// Closed-form profile along one branch. Positions are arc length from the
/// branch's `a` end, `s ∈ [0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BranchProfile {
    pub t1: f64,
    pub t2: f64,
    pub t_m: f64,
    pub gamma: f64,
    pub length: f64,
}

impl BranchProfile {
    pub fn new(length: f64, j: f64, t1: f64, t2: f64, p: &ThermalParams) -> Result<Self> {
        let gamma = char_length(p);
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Input(format!("branch length must be positive, got {length}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Input(format!("thermal characteristic length invalid: {gamma}")));
        }
        if !(t1 > 0.0 && t2 > 0.0) {
            return Err(Error::Input(format!(
                "non-physical endpoint temperatures {t1} K, {t2} K"
            )));
        }
        Ok(Self {
            t1,
            t2,
            t_m: p.joule_rise(j),
            gamma,
            length,
        })
    }

    /// Uniform temperature, no self-heating.
    pub fn isothermal(length: f64, t: f64) -> Self {
        Self {
            t1: t,
            t2: t,
            t_m: 0.0,
            gamma: 1.0,
            length,
        }
    }

    fn t_bar(&self) -> f64 {
        0.5 * (self.t1 + self.t2)
    }

    fn t_n(&self) -> f64 {
        0.5 * (self.t1 - self.t2)
    }

    /// cosh(x/Γ)/cosh(h/Γ) and sinh(x/Γ)/sinh(h/Γ) for |x| ≤ h, without overflow.
    fn ratios(&self, x: f64) -> (f64, f64) {
        let h = 0.5 * self.length / self.gamma;
        let u = x / self.gamma;
        let au = u.abs();
        let scale = (au - h).exp();
        let c = scale * (1.0 + (-2.0 * au).exp()) / (1.0 + (-2.0 * h).exp());
        let s = if au == 0.0 {
            0.0
        } else {
            u.signum() * scale * (-(-2.0 * au).exp_m1()) / (-(-2.0 * h).exp_m1())
        };
        (c, s)
    }

    pub fn temperature(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.t1;
        }
        if s >= self.length {
            return self.t2;
        }
        let x = s - 0.5 * self.length;
        let (c, sh) = self.ratios(x);
        let mut t = self.t_bar() + self.t_m * (1.0 - c);
        if self.t1 != self.t2 {
            t -= self.t_n() * sh;
        }
        t
    }

    /// dT/ds, differentiated analytically.
    pub fn gradient(&self, s: f64) -> f64 {
        let x = s.clamp(0.0, self.length) - 0.5 * self.length;
        let h = 0.5 * self.length / self.gamma;
        let u = x / self.gamma;
        // sinh(u)/cosh(h) and cosh(u)/sinh(h), overflow-safe.
        let au = u.abs();
        let scale = (au - h).exp();
        let sinh_over_cosh = u.signum() * scale * (-(-2.0 * au).exp_m1()) / (1.0 + (-2.0 * h).exp());
        let cosh_over_sinh = scale * (1.0 + (-2.0 * au).exp()) / (-(-2.0 * h).exp_m1());
        let mut g = -self.t_m * sinh_over_cosh / self.gamma;
        if self.t1 != self.t2 {
            g -= self.t_n() * cosh_over_sinh / self.gamma;
        }
        g
    }

    pub fn sample(&self, positions: &[f64]) -> Vec<f64> {
        positions.iter().map(|&s| self.temperature(s)).collect()
    }
}

/// Temperatures at `positions` (arc length from the `a` end) along a branch.
pub fn branch_temperature_profile(
    branch: &Branch,
    j: f64,
    t1: f64,
    t2: f64,
    p: &ThermalParams,
    positions: &[f64],
) -> Result<Vec<f64>> {
    Ok(BranchProfile::new(branch.length, j, t1, t2, p)?.sample(positions))
}

/// Resolved node temperatures for one tree.
#[derive(Debug, Clone, Default)]
pub struct EndpointTemps {
    pub temps: BTreeMap<usize, f64>,
    pub warnings: Vec<String>,
}

/// Nodes whose temperature is pinned to the map: via landings and source
/// nodes. Tree leaves and junctions are added per tree.
pub fn pinned_nodes(doc: &NetlistDoc) -> Vec<bool> {
    let mut pinned = vec![false; doc.nodes.len()];
    for r in doc.resistors.iter().filter(|r| r.is_via) {
        pinned[r.a] = true;
        pinned[r.b] = true;
    }
    for i in &doc.current_sources {
        pinned[i.node] = true;
    }
    for v in &doc.voltage_sources {
        pinned[v.node] = true;
    }
    pinned
}

/// Temperatures at every node of `tree`.
///
/// Without a map every node sits at the ambient `t0`. With a map, pinned
/// nodes, leaves and junctions take the bilinear map value; the remaining
/// pass-through nodes of each chain are solved from the discrete stationary
/// heat balance (a tridiagonal system with the chain ends as Dirichlet data).
pub fn resolve_tree_endpoints(
    doc: &NetlistDoc,
    pinned: &[bool],
    tree: &WireTree,
    map: Option<&ThermalMap>,
    p: &ThermalParams,
) -> Result<EndpointTemps> {
    let mut out = EndpointTemps::default();
    let Some(map) = map else {
        for n in tree.nodes() {
            out.temps.insert(n, p.t0);
        }
        return Ok(out);
    };

    let to_um = doc.coord_unit * 1e6;
    let mut ambient = BTreeMap::new();
    for n in tree.nodes() {
        let id = doc.node(n);
        let (t, clamped) = map.sample(id.x as f64 * to_um, id.y as f64 * to_um);
        if clamped {
            out.warnings.push(format!(
                "node {id} lies outside the thermal map; clamped to the nearest cell"
            ));
        }
        ambient.insert(n, t);
    }

    let constrained = |n: usize| pinned[n] || tree.junctions[&n].len() != 2;
    for (&n, &t) in &ambient {
        if constrained(n) {
            out.temps.insert(n, t);
        }
    }

    let gamma = char_length(p);
    let mut visited = std::collections::HashSet::new();
    for (&start, ends) in &tree.junctions {
        if !constrained(start) {
            continue;
        }
        for &(first, end) in ends {
            if !visited.insert(first) {
                continue;
            }
            // Walk the chain start -> ... -> constrained node.
            let mut chain_nodes = Vec::new();
            let mut chain_branches = vec![first];
            let mut node = other_end(tree, first, end);
            let mut came_by = first;
            while !constrained(node) {
                chain_nodes.push(node);
                let &(next_b, next_end) = tree.junctions[&node]
                    .iter()
                    .find(|(b, _)| *b != came_by)
                    .expect("pass-through node has two branches");
                visited.insert(next_b);
                chain_branches.push(next_b);
                came_by = next_b;
                node = other_end(tree, next_b, next_end);
            }
            if chain_nodes.is_empty() {
                continue;
            }
            let t_start = out.temps[&start];
            let t_end = out.temps[&node];
            let solved = solve_chain(tree, &chain_branches, &chain_nodes, &ambient, t_start, t_end, gamma, p);
            for (n, t) in chain_nodes.into_iter().zip(solved) {
                out.temps.insert(n, t);
            }
        }
    }
    Ok(out)
}

fn other_end(tree: &WireTree, b: usize, end: BranchEnd) -> usize {
    let br = &tree.branches[b];
    match end {
        BranchEnd::A => br.b,
        BranchEnd::B => br.a,
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_chain(
    tree: &WireTree,
    branches: &[usize],
    nodes: &[usize],
    ambient: &BTreeMap<usize, f64>,
    t_start: f64,
    t_end: f64,
    gamma: f64,
    p: &ThermalParams,
) -> Vec<f64> {
    let m = nodes.len();
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let (bl, br) = (&tree.branches[branches[i]], &tree.branches[branches[i + 1]]);
        let gl = p.k_cu * bl.area() / bl.length;
        let gr = p.k_cu * br.area() / br.length;
        let vol = 0.5 * (bl.area() * bl.length + br.area() * br.length);
        let sink = p.k_cu * vol / (gamma * gamma);
        let joule = 0.5
            * p.rho_cu
            * (bl.current_density.powi(2) * bl.area() * bl.length + br.current_density.powi(2) * br.area() * br.length);
        diag[i] = gl + gr + sink;
        rhs[i] = joule + sink * ambient[&nodes[i]];
        if i > 0 {
            lower[i] = -gl;
        } else {
            rhs[i] += gl * t_start;
        }
        if i + 1 < m {
            upper[i] = -gr;
        } else {
            rhs[i] += gr * t_end;
        }
    }
    thomas(&lower, &diag, &upper, &rhs)
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

//! Power-grid netlist parsing, wire-tree extraction and via connectivity.
//!
//! The accepted format is a SPICE subset. Node names encode placement as
//! `n<layer>_<x>_<y>`, with coordinates in integer multiples of the
//! configured coordinate unit (micrometres by default):
//!
//! ```text
//! * comment
//! R1  n1_0_0  n1_10_0  2.0          resistor, optional w=<m> h=<m>
//! Rv1 n1_10_0 n2_10_0  0.5          via (endpoints on different layers)
//! I1  n1_10_0 0 1e-3                load drawn from node to ground
//! V1  n2_10_0 0 0.95                supply pad
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Resistance written for an open-circuited element.
pub const OPEN_SENTINEL: f64 = 1e12;

/// Placement-encoded node name. Equality and ordering use `(layer, x, y)` only.
#[derive(Debug, Clone)]
pub struct NodeId {
    pub layer: u32,
    pub x: i64,
    pub y: i64,
    pub raw_name: String,
}

impl NodeId {
    pub fn new(layer: u32, x: i64, y: i64) -> Self {
        Self {
            layer,
            x,
            y,
            raw_name: format!("n{layer}_{x}_{y}"),
        }
    }

    /// Parse `n<layer>_<x>_<y>`.
    pub fn parse(name: &str) -> Option<Self> {
        let body = name.strip_prefix('n').or_else(|| name.strip_prefix('N'))?;
        let mut parts = body.split('_');
        let layer: u32 = parts.next()?.parse().ok()?;
        let x: i64 = parts.next()?.parse().ok()?;
        let y: i64 = parts.next()?.parse().ok()?;
        if parts.next().is_some() || layer < 1 {
            return None;
        }
        Some(Self {
            layer,
            x,
            y,
            raw_name: name.to_string(),
        })
    }

    fn key(&self) -> (u32, i64, i64) {
        (self.layer, self.x, self.y)
    }
}

impl PartialEq for NodeId {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for NodeId {}
impl Hash for NodeId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}
impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}
impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.raw_name)
    }
}

/// Cross-section of a metal layer, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerGeometry {
    pub width: f64,
    pub thickness: f64,
}

/// Per-layer geometry with an optional catch-all default.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    pub layers: BTreeMap<u32, LayerGeometry>,
    pub default: Option<LayerGeometry>,
}

impl Default for LayerTable {
    fn default() -> Self {
        Self {
            layers: BTreeMap::new(),
            default: Some(LayerGeometry {
                width: 1e-7,
                thickness: 1e-7,
            }),
        }
    }
}

impl LayerTable {
    pub fn get(&self, layer: u32) -> Option<LayerGeometry> {
        self.layers.get(&layer).copied().or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResistorElem {
    pub name: String,
    pub a: usize,
    pub b: usize,
    pub resistance: f64,
    pub is_via: bool,
    /// Per-element overrides of the layer cross-section.
    pub width: Option<f64>,
    pub thickness: Option<f64>,
}

impl ResistorElem {
    pub fn is_open(&self) -> bool {
        self.resistance >= OPEN_SENTINEL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSourceElem {
    pub name: String,
    pub node: usize,
    pub amps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSourceElem {
    pub name: String,
    pub node: usize,
    pub volts: f64,
}

/// Parse options: layer cross-sections and the coordinate unit (metres per
/// integer coordinate step).
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOptions {
    pub layers: LayerTable,
    pub coord_unit: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            layers: LayerTable::default(),
            coord_unit: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetlistDoc {
    pub nodes: Vec<NodeId>,
    pub resistors: Vec<ResistorElem>,
    pub current_sources: Vec<CurrentSourceElem>,
    pub voltage_sources: Vec<VoltageSourceElem>,
    pub layers: LayerTable,
    pub coord_unit: f64,
    node_index: HashMap<NodeId, usize>,
    resistor_index: HashMap<String, usize>,
}

impl PartialEq for NetlistDoc {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.raw_name == b.raw_name)
            && self.resistors == other.resistors
            && self.current_sources == other.current_sources
            && self.voltage_sources == other.voltage_sources
            && self.layers == other.layers
            && self.coord_unit == other.coord_unit
    }
}

impl NetlistDoc {
    pub fn node(&self, idx: usize) -> &NodeId {
        &self.nodes[idx]
    }

    pub fn node_idx(&self, id: &NodeId) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn resistor_idx(&self, name: &str) -> Option<usize> {
        self.resistor_index.get(name).copied()
    }

    /// Physical length of a resistor from its endpoint coordinates, in metres.
    pub fn resistor_length(&self, r: &ResistorElem) -> f64 {
        let (a, b) = (&self.nodes[r.a], &self.nodes[r.b]);
        let dx = (a.x - b.x) as f64;
        let dy = (a.y - b.y) as f64;
        dx.hypot(dy) * self.coord_unit
    }

    pub fn resistor_geometry(&self, r: &ResistorElem) -> LayerGeometry {
        let base = self
            .layers
            .get(self.nodes[r.a].layer)
            .expect("layer validated at parse time");
        LayerGeometry {
            width: r.width.unwrap_or(base.width),
            thickness: r.thickness.unwrap_or(base.thickness),
        }
    }

    /// Highest supply voltage in the netlist (the reference for drop fractions).
    pub fn supply_voltage(&self) -> f64 {
        self.voltage_sources.iter().map(|v| v.volts).fold(0.0, f64::max)
    }

    /// Set a resistor value by name.
    pub fn set_resistance(&mut self, name: &str, ohms: f64) -> Result<()> {
        let idx = self
            .resistor_idx(name)
            .ok_or_else(|| Error::Internal(format!("no resistor named `{name}`")))?;
        self.resistors[idx].resistance = ohms;
        Ok(())
    }

    /// Scale every current-source load by `factor`.
    pub fn scale_loads(&mut self, factor: f64) {
        for i in &mut self.current_sources {
            i.amps *= factor;
        }
    }
}

fn intern(nodes: &mut Vec<NodeId>, index: &mut HashMap<NodeId, usize>, id: NodeId) -> usize {
    if let Some(&i) = index.get(&id) {
        return i;
    }
    let i = nodes.len();
    index.insert(id.clone(), i);
    nodes.push(id);
    i
}

fn parse_value(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Syntax {
        line,
        msg: format!("invalid {what} `{tok}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Syntax {
            line,
            msg: format!("non-finite {what} `{tok}`"),
        });
    }
    Ok(v)
}

/// Parse with default options (default layer geometry, micrometre coordinates).
pub fn parse_netlist(text: &str) -> Result<NetlistDoc> {
    parse_netlist_with(text, &ParseOptions::default())
}

pub fn parse_netlist_with(text: &str, opts: &ParseOptions) -> Result<NetlistDoc> {
    let mut nodes = Vec::new();
    let mut node_index = HashMap::new();
    let mut resistors = Vec::new();
    let mut current_sources = Vec::new();
    let mut voltage_sources = Vec::new();
    let mut names: HashSet<String> = HashSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('*') || content.starts_with('.') {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let name = toks[0];
        let node_of = |tok: &str| -> Result<NodeId> {
            let id = NodeId::parse(tok).ok_or_else(|| Error::Syntax {
                line,
                msg: format!("malformed node name `{tok}`"),
            })?;
            if opts.layers.get(id.layer).is_none() {
                return Err(Error::UnknownLayer { line, layer: id.layer });
            }
            Ok(id)
        };
        let kind = name.chars().next().unwrap().to_ascii_uppercase();
        match kind {
            'R' => {
                if toks.len() < 4 {
                    return Err(Error::Syntax {
                        line,
                        msg: "resistor needs `R<name> <nodeA> <nodeB> <ohms>`".into(),
                    });
                }
                let a = node_of(toks[1])?;
                let b = node_of(toks[2])?;
                if a == b {
                    return Err(Error::Syntax {
                        line,
                        msg: format!("resistor `{name}` connects node {a} to itself"),
                    });
                }
                let resistance = parse_value(toks[3], line, "resistance")?;
                if resistance <= 0.0 {
                    return Err(Error::Syntax {
                        line,
                        msg: format!("resistance must be positive, got {resistance}"),
                    });
                }
                let mut width = None;
                let mut thickness = None;
                for kv in &toks[4..] {
                    let (k, v) = kv.split_once('=').ok_or_else(|| Error::Syntax {
                        line,
                        msg: format!("unexpected token `{kv}`"),
                    })?;
                    let v = parse_value(v, line, k)?;
                    if v <= 0.0 {
                        return Err(Error::Syntax {
                            line,
                            msg: format!("`{k}` must be positive"),
                        });
                    }
                    match k.to_ascii_lowercase().as_str() {
                        "w" => width = Some(v),
                        "h" => thickness = Some(v),
                        _ => {
                            return Err(Error::Syntax {
                                line,
                                msg: format!("unknown resistor attribute `{k}`"),
                            })
                        }
                    }
                }
                if !names.insert(name.to_string()) {
                    return Err(Error::DuplicateElement {
                        line,
                        name: name.to_string(),
                    });
                }
                let is_via = a.layer != b.layer;
                let a = intern(&mut nodes, &mut node_index, a);
                let b = intern(&mut nodes, &mut node_index, b);
                resistors.push(ResistorElem {
                    name: name.to_string(),
                    a,
                    b,
                    resistance,
                    is_via,
                    width,
                    thickness,
                });
            }
            'I' | 'V' => {
                if toks.len() != 4 || toks[2] != "0" {
                    return Err(Error::Syntax {
                        line,
                        msg: format!("source needs `{kind}<name> <node> 0 <value>`"),
                    });
                }
                let node = node_of(toks[1])?;
                let value = parse_value(toks[3], line, "source value")?;
                if kind == 'I' && value < 0.0 {
                    return Err(Error::Syntax {
                        line,
                        msg: "current source must draw a non-negative current".into(),
                    });
                }
                if kind == 'V' && value <= 0.0 {
                    return Err(Error::Syntax {
                        line,
                        msg: "supply voltage must be positive".into(),
                    });
                }
                if !names.insert(name.to_string()) {
                    return Err(Error::DuplicateElement {
                        line,
                        name: name.to_string(),
                    });
                }
                let node = intern(&mut nodes, &mut node_index, node);
                if kind == 'I' {
                    current_sources.push(CurrentSourceElem {
                        name: name.to_string(),
                        node,
                        amps: value,
                    });
                } else {
                    voltage_sources.push(VoltageSourceElem {
                        name: name.to_string(),
                        node,
                        volts: value,
                    });
                }
            }
            _ => {
                return Err(Error::Syntax {
                    line,
                    msg: format!("unknown element `{name}`"),
                })
            }
        }
    }

    if voltage_sources.is_empty() {
        return Err(Error::NoSupply);
    }

    // Every load must reach a supply through the resistive network.
    let mut uf = UnionFind::new(nodes.len());
    for r in &resistors {
        uf.union(r.a, r.b);
    }
    let supplied: HashSet<usize> = voltage_sources.iter().map(|v| uf.find(v.node)).collect();
    for i in &current_sources {
        if !supplied.contains(&uf.find(i.node)) {
            return Err(Error::DisconnectedSource {
                node: nodes[i.node].raw_name.clone(),
            });
        }
    }

    let resistor_index = resistors.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect();

    Ok(NetlistDoc {
        nodes,
        resistors,
        current_sources,
        voltage_sources,
        layers: opts.layers.clone(),
        coord_unit: opts.coord_unit,
        node_index,
        resistor_index,
    })
}

fn fmt_value(v: f64) -> String {
    if v >= OPEN_SENTINEL {
        "1e12".to_string()
    } else {
        format!("{v}")
    }
}

/// Write a netlist back in the input grammar.
pub fn emit_netlist(doc: &NetlistDoc) -> String {
    let mut out = String::new();
    out.push_str("* emgrid netlist\n");
    for r in &doc.resistors {
        let _ = write!(
            out,
            "{} {} {} {}",
            r.name,
            doc.nodes[r.a].raw_name,
            doc.nodes[r.b].raw_name,
            fmt_value(r.resistance)
        );
        if let Some(w) = r.width {
            let _ = write!(out, " w={w}");
        }
        if let Some(h) = r.thickness {
            let _ = write!(out, " h={h}");
        }
        out.push('\n');
    }
    for i in &doc.current_sources {
        let _ = writeln!(out, "{} {} 0 {}", i.name, doc.nodes[i.node].raw_name, i.amps);
    }
    for v in &doc.voltage_sources {
        let _ = writeln!(out, "{} {} 0 {}", v.name, doc.nodes[v.node].raw_name, v.volts);
    }
    out
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Tree identifier: metal layer plus index among that layer's trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct TreeId {
    pub layer: u32,
    pub index: usize,
}

impl std::fmt::Display for TreeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}-T{}", self.layer, self.index)
    }
}

/// One straight interconnect segment of a wire tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Index of the source resistor in the netlist.
    pub resistor: usize,
    pub name: String,
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    pub resistance: f64,
    /// Signed current density, positive from `a` to `b` (A/m²).
    pub current_density: f64,
}

impl Branch {
    pub fn area(&self) -> f64 {
        self.width * self.thickness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchEnd {
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct WireTree {
    pub id: TreeId,
    pub branches: Vec<Branch>,
    /// Netlist node -> incident branch ends.
    pub junctions: BTreeMap<usize, Vec<(usize, BranchEnd)>>,
    /// Resolved after the first IR solve.
    pub cathode: Option<usize>,
    /// Same-layer resistors dropped from the stress tree to break loops.
    pub chords: Vec<usize>,
}

impl WireTree {
    pub fn node_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.junctions.keys().copied()
    }

    /// Nodes incident to exactly one branch.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.junctions
            .iter()
            .filter(|(_, ends)| ends.len() == 1)
            .map(|(&n, _)| n)
    }

    /// Stable key across re-extraction: the lexicographically smallest
    /// resistor name in the underlying same-layer component.
    pub fn key(&self, doc: &NetlistDoc) -> String {
        self.branches
            .iter()
            .map(|b| b.name.as_str())
            .chain(self.chords.iter().map(|&c| doc.resistors[c].name.as_str()))
            .min()
            .unwrap_or_default()
            .to_string()
    }

    /// Longest terminal-to-terminal path length along the branches.
    pub fn max_path_length(&self) -> f64 {
        let Some(&start) = self.junctions.keys().next() else {
            return 0.0;
        };
        let (far, _) = self.farthest_from(start);
        let (_, d) = self.farthest_from(far);
        d
    }

    fn farthest_from(&self, start: usize) -> (usize, f64) {
        let mut dist: HashMap<usize, f64> = HashMap::new();
        dist.insert(start, 0.0);
        let mut stack = vec![start];
        let mut best = (start, 0.0);
        while let Some(n) = stack.pop() {
            let d = dist[&n];
            if d > best.1 {
                best = (n, d);
            }
            for &(bi, end) in &self.junctions[&n] {
                let br = &self.branches[bi];
                let other = if end == BranchEnd::A { br.b } else { br.a };
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(other) {
                    e.insert(d + br.length);
                    stack.push(other);
                }
            }
        }
        best
    }
}

/// Partition the same-layer resistors into acyclic wire trees.
///
/// Vias separate trees. Loops inside a layer component are broken by
/// dropping the highest-resistance edge of every cycle (ties: the
/// lexicographically larger name goes); dropped edges are recorded as
/// chords and remain in the electrical network.
pub fn extract_trees(doc: &NetlistDoc) -> Vec<WireTree> {
    let mut uf = UnionFind::new(doc.nodes.len());
    let wires: Vec<usize> = (0..doc.resistors.len()).filter(|&i| !doc.resistors[i].is_via).collect();
    for &i in &wires {
        let r = &doc.resistors[i];
        uf.union(r.a, r.b);
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &wires {
        let root = uf.find(doc.resistors[i].a);
        components.entry(root).or_default().push(i);
    }

    let mut comps: Vec<(u32, String, Vec<usize>)> = components
        .into_values()
        .map(|members| {
            let layer = doc.nodes[doc.resistors[members[0]].a].layer;
            let first = members.iter().map(|&i| doc.resistors[i].name.clone()).min().unwrap();
            (layer, first, members)
        })
        .collect();
    comps.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));

    let mut per_layer: BTreeMap<u32, usize> = BTreeMap::new();
    let mut trees = Vec::with_capacity(comps.len());
    for (layer, _, mut members) in comps {
        members.sort_by(|&x, &y| {
            let (rx, ry) = (&doc.resistors[x], &doc.resistors[y]);
            rx.resistance
                .total_cmp(&ry.resistance)
                .then_with(|| rx.name.cmp(&ry.name))
        });
        let mut span = UnionFind::new(doc.nodes.len());
        let mut kept = Vec::new();
        let mut chords = Vec::new();
        for i in members {
            let r = &doc.resistors[i];
            if span.union(r.a, r.b) {
                kept.push(i);
            } else {
                chords.push(i);
            }
        }
        kept.sort_by(|&x, &y| doc.resistors[x].name.cmp(&doc.resistors[y].name));
        chords.sort_by(|&x, &y| doc.resistors[x].name.cmp(&doc.resistors[y].name));

        let mut junctions: BTreeMap<usize, Vec<(usize, BranchEnd)>> = BTreeMap::new();
        let branches: Vec<Branch> = kept
            .iter()
            .enumerate()
            .map(|(bi, &ri)| {
                let r = &doc.resistors[ri];
                let geom = doc.resistor_geometry(r);
                junctions.entry(r.a).or_default().push((bi, BranchEnd::A));
                junctions.entry(r.b).or_default().push((bi, BranchEnd::B));
                Branch {
                    resistor: ri,
                    name: r.name.clone(),
                    a: r.a,
                    b: r.b,
                    length: doc.resistor_length(r),
                    width: geom.width,
                    thickness: geom.thickness,
                    resistance: r.resistance,
                    current_density: 0.0,
                }
            })
            .collect();

        let idx = per_layer.entry(layer).or_insert(0);
        trees.push(WireTree {
            id: TreeId { layer, index: *idx },
            branches,
            junctions,
            cathode: None,
            chords,
        });
        *idx += 1;
    }
    trees
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViaEntry {
    pub resistor: usize,
    /// The other endpoint sits on a strictly higher layer.
    pub upward: bool,
}

/// Node -> vias touching it.
#[derive(Debug, Clone, Default)]
pub struct ViaMap {
    pub entries: BTreeMap<usize, Vec<ViaEntry>>,
}

impl ViaMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, node: usize) -> &[ViaEntry] {
        self.entries.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_upward(&self, node: usize) -> bool {
        self.get(node).iter().any(|v| v.upward)
    }
}

pub fn build_via_map(doc: &NetlistDoc) -> ViaMap {
    let mut entries: BTreeMap<usize, Vec<ViaEntry>> = BTreeMap::new();
    for (i, r) in doc.resistors.iter().enumerate().filter(|(_, r)| r.is_via) {
        let (la, lb) = (doc.nodes[r.a].layer, doc.nodes[r.b].layer);
        entries.entry(r.a).or_default().push(ViaEntry {
            resistor: i,
            upward: lb > la,
        });
        entries.entry(r.b).or_default().push(ViaEntry {
            resistor: i,
            upward: la > lb,
        });
    }
    ViaMap { entries }
}

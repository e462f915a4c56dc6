use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::netlist::WireTree;

/// Discretization of one branch: grid node indices from its `a` end to its
/// `b` end, uniformly spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrid {
    pub nodes: Vec<usize>,
    pub dx: f64,
}

impl BranchGrid {
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Arc-length position of local node `k`.
    pub fn position(&self, k: usize) -> f64 {
        k as f64 * self.dx
    }
}

/// Finite-volume grid over a wire tree. Nodes shared by several branches
/// (tree nodes of the netlist) appear once.
#[derive(Debug, Clone, PartialEq)]
pub struct StressGrid {
    pub branches: Vec<BranchGrid>,
    /// Grid node -> (branch, local index) of its first occurrence.
    pub locate: Vec<(usize, usize)>,
    /// Grid node -> netlist node, for nodes that coincide with one.
    pub netlist_node: Vec<Option<usize>>,
    /// Netlist node -> grid node.
    pub grid_of: BTreeMap<usize, usize>,
}

impl StressGrid {
    pub fn len(&self) -> usize {
        self.locate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locate.is_empty()
    }

    /// Branches touching a grid node, with the local index there.
    pub fn incident(&self, node: usize) -> Vec<(usize, usize)> {
        match self.netlist_node[node] {
            None => vec![self.locate[node]],
            Some(_) => self
                .branches
                .iter()
                .enumerate()
                .filter_map(|(bi, bg)| {
                    if bg.nodes[0] == node {
                        Some((bi, 0))
                    } else if *bg.nodes.last().unwrap() == node {
                        Some((bi, bg.intervals()))
                    } else {
                        None
                    }
                })
                .collect(),
        }
    }
}

/// Subdivide each branch into `ceil(L / target_dx)` intervals (at least one).
pub fn build_stress_grid(tree: &WireTree, target_dx: f64) -> Result<StressGrid> {
    if !(target_dx > 0.0 && target_dx.is_finite()) {
        return Err(Error::Input(format!("grid spacing must be positive, got {target_dx}")));
    }
    let mut locate = Vec::new();
    let mut netlist_node = Vec::new();
    let mut grid_of = BTreeMap::new();
    let mut branches = Vec::with_capacity(tree.branches.len());

    let mut tree_node =
        |n: usize, bi: usize, k: usize, locate: &mut Vec<(usize, usize)>, netlist_node: &mut Vec<Option<usize>>| {
            *grid_of.entry(n).or_insert_with(|| {
                locate.push((bi, k));
                netlist_node.push(Some(n));
                locate.len() - 1
            })
        };

    for (bi, br) in tree.branches.iter().enumerate() {
        // Guard against L/dx landing a hair above an integer.
        let m = ((br.length / target_dx) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let mut nodes = Vec::with_capacity(m + 1);
        nodes.push(tree_node(br.a, bi, 0, &mut locate, &mut netlist_node));
        for k in 1..m {
            locate.push((bi, k));
            netlist_node.push(None);
            nodes.push(locate.len() - 1);
        }
        nodes.push(tree_node(br.b, bi, m, &mut locate, &mut netlist_node));
        branches.push(BranchGrid {
            nodes,
            dx: br.length / m as f64,
        });
    }
    Ok(StressGrid {
        branches,
        locate,
        netlist_node,
        grid_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{extract_trees, parse_netlist};

    fn tree(text: &str) -> WireTree {
        let doc = parse_netlist(text).unwrap();
        extract_trees(&doc).remove(0)
    }

    #[test]
    fn single_branch_ten_intervals() {
        let t = tree("V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\n");
        let g = build_stress_grid(&t, 1e-6).unwrap();
        assert_eq!(g.len(), 11);
        assert!((g.branches[0].dx - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn t_junction_shares_centre() {
        let t = tree("V1 n1_0_0 0 1\nR1 n1_0_0 n1_10_0 1\nR2 n1_10_0 n1_20_0 1\nR3 n1_10_0 n1_10_10 1\n");
        let g = build_stress_grid(&t, 10e-6).unwrap();
        assert_eq!(g.len(), 4);
        let centre = g.grid_of[&t.nodes().find(|&n| t.junctions[&n].len() == 3).unwrap()];
        assert_eq!(g.incident(centre).len(), 3);
    }

    #[test]
    fn star_inclusion_exclusion() {
        let t =
            tree("V1 n1_0_0 0 1\nR1 n1_0_0 n1_7_0 1\nR2 n1_0_0 n1_0_5 1\nR3 n1_0_0 n1_0_-3 1\nR4 n1_0_0 n1_-2_0 1\n");
        let g = build_stress_grid(&t, 1e-6).unwrap();
        let per_branch: usize = g.branches.iter().map(|b| b.nodes.len()).sum();
        assert_eq!(g.len(), per_branch - 3);
        assert_eq!(per_branch, 8 + 6 + 4 + 3);
    }

    #[test]
    fn short_branch_keeps_one_interval() {
        let t = tree("V1 n1_0_0 0 1\nR1 n1_0_0 n1_1_0 1\n");
        let g = build_stress_grid(&t, 50e-6).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn zero_spacing_rejected() {
        let t = tree("V1 n1_0_0 0 1\nR1 n1_0_0 n1_1_0 1\n");
        assert!(build_stress_grid(&t, 0.0).is_err());
    }
}

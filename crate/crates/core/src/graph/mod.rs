//! Attributed undirected graphs with labels, sensitive attributes and splits.

mod adjacency;
mod io;
mod paths;
mod split;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjacency::{normalized_row, Normalization, Propagation, Row};
pub use io::{load_graph, load_mask, save_graph, save_mask, AttributeSchema, GraphFiles};
pub use paths::{path_stats, threshold_edges, PathStats, ThresholdRule, MAX_PATH_COUNT, MAX_PATH_HOPS};
pub use split::{split, SplitPolicy};

/// Train/validation/test membership, one flag per node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn from_lists(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut masks = Self::empty(n);
        for (mask, list) in [(&mut masks.train, train), (&mut masks.val, val), (&mut masks.test, test)] {
            for &v in list {
                *mask.get_mut(v).ok_or(Error::UnknownNode(v))? = true;
            }
        }
        masks.check_disjoint()?;
        Ok(masks)
    }

    fn check_disjoint(&self) -> Result<()> {
        for v in 0..self.train.len() {
            let hits = self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8;
            if hits > 1 {
                return Err(Error::InvalidGraph(format!("node {v} is in more than one split")));
            }
        }
        Ok(())
    }
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(v, &on)| on.then_some(v))
        .collect()
}

/// Immutable attributed graph. Node ids are dense `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Vec<f64>,
    dim: usize,
    labels: Vec<Option<usize>>,
    sensitive: Vec<usize>,
    masks: Masks,
    num_classes: usize,
    sensitive_arity: usize,
    original_ids: Vec<usize>,
}

impl Graph {
    /// Builds a graph, symmetrizing and deduplicating `edges` and dropping
    /// self-edges. `features` is row-major `n x dim`.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Vec<f64>,
        dim: usize,
        labels: Vec<Option<usize>>,
        sensitive: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != node_count * dim {
            return Err(Error::DimensionMismatch {
                expected: node_count * dim,
                actual: features.len(),
            });
        }
        if labels.len() != node_count || sensitive.len() != node_count {
            return Err(Error::InvalidGraph("labels/sensitive length differs from node count".into()));
        }
        if let Some(bad) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidGraph(format!("non-finite attribute at node {}", bad / dim.max(1))));
        }
        let mut canonical = BTreeSet::new();
        for (u, v) in edges {
            for w in [u, v] {
                if w >= node_count {
                    return Err(Error::UnknownNode(w));
                }
            }
            if u != v {
                canonical.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<_> = canonical.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let num_classes = labels.iter().flatten().max().map_or(0, |&c| c + 1).max(2);
        let sensitive_arity = sensitive.iter().max().map_or(0, |&s| s + 1).max(2);
        Ok(Self {
            edges,
            neighbors,
            features,
            dim,
            labels,
            sensitive,
            masks: Masks::empty(node_count),
            num_classes,
            sensitive_arity,
            original_ids: (0..node_count).collect(),
        })
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        let n = self.node_count();
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(Error::InvalidGraph("mask length differs from node count".into()));
        }
        masks.check_disjoint()?;
        if let Some(v) = (0..n).find(|&v| masks.train[v] && self.labels[v].is_none()) {
            return Err(Error::MissingLabel(v));
        }
        self.masks = masks;
        Ok(self)
    }

    /// Overrides the inferred class count (must cover every label present).
    pub fn with_num_classes(mut self, classes: usize) -> Result<Self> {
        if self.labels.iter().flatten().any(|&y| y >= classes) {
            return Err(Error::InvalidGraph(format!("label outside 0..{classes}")));
        }
        self.num_classes = classes;
        Ok(self)
    }

    /// Overrides the inferred sensitive arity (must cover every value present).
    pub fn with_sensitive_arity(mut self, arity: usize) -> Result<Self> {
        if let Some(v) = self.sensitive.iter().position(|&s| s >= arity) {
            return Err(Error::InvalidGraph(format!(
                "node {v} has sensitive value {} beyond declared arity {arity}",
                self.sensitive[v]
            )));
        }
        self.sensitive_arity = arity;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, v: usize) -> &[f64] {
        &self.features[v * self.dim..(v + 1) * self.dim]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn sensitive(&self) -> &[usize] {
        &self.sensitive
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sensitive_arity(&self) -> usize {
        self.sensitive_arity
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        indices(&self.masks.train)
    }

    pub fn val_nodes(&self) -> Vec<usize> {
        indices(&self.masks.val)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        indices(&self.masks.test)
    }

    pub fn is_train(&self, v: usize) -> bool {
        self.masks.train[v]
    }

    /// Id of each node in the graph this one was derived from by deletions.
    pub fn original_ids(&self) -> &[usize] {
        &self.original_ids
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v < self.node_count() {
            Ok(())
        } else {
            Err(Error::UnknownNode(v))
        }
    }

    /// BFS ball of radius `hops` around `center`.
    pub fn computation_graph(&self, center: usize, hops: usize) -> Result<ComputationGraph> {
        self.check_node(center)?;
        let members = self.ball(center, hops);
        let member_training_nodes = members.iter().copied().filter(|&v| self.masks.train[v]).collect();
        Ok(ComputationGraph {
            center,
            hops,
            members,
            member_training_nodes,
        })
    }

    /// Sorted node ids within `hops` of `center`.
    pub fn ball(&self, center: usize, hops: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::from([center]);
        dist[center] = 0;
        let mut members = vec![center];
        while let Some(u) = queue.pop_front() {
            if dist[u] == hops {
                continue;
            }
            for &w in &self.neighbors[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    members.push(w);
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        members
    }

    /// Hop distance between two nodes, if connected.
    pub fn distance(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(u) = queue.pop_front() {
            if u == to {
                return Some(dist[u]);
            }
            for &w in &self.neighbors[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        None
    }

    pub fn remove_node(&self, v: usize) -> Result<(Graph, IdMap)> {
        self.remove_nodes(&[v])
    }

    /// Deletes nodes with their attributes, incident edges and split
    /// membership. Surviving nodes keep their relative order.
    pub fn remove_nodes(&self, nodes: &[usize]) -> Result<(Graph, IdMap)> {
        let n = self.node_count();
        let mut dead = vec![false; n];
        for &v in nodes {
            self.check_node(v)?;
            dead[v] = true;
        }
        let mut old_to_new = vec![None; n];
        let mut next = 0;
        for v in 0..n {
            if !dead[v] {
                old_to_new[v] = Some(next);
                next += 1;
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&v| !dead[v]).collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter_map(|&(u, w)| Some((old_to_new[u]?, old_to_new[w]?)))
            .collect();
        let mut features = Vec::with_capacity(keep.len() * self.dim);
        for &v in &keep {
            features.extend_from_slice(self.feature_row(v));
        }
        let pick = |mask: &[bool]| keep.iter().map(|&v| mask[v]).collect::<Vec<_>>();
        let mut out = Graph::new(
            keep.len(),
            edges,
            features,
            self.dim,
            keep.iter().map(|&v| self.labels[v]).collect(),
            keep.iter().map(|&v| self.sensitive[v]).collect(),
        )?;
        out.masks = Masks {
            train: pick(&self.masks.train),
            val: pick(&self.masks.val),
            test: pick(&self.masks.test),
        };
        out.num_classes = self.num_classes;
        out.sensitive_arity = self.sensitive_arity;
        out.original_ids = keep.iter().map(|&v| self.original_ids[v]).collect();
        Ok((out, IdMap { old_to_new }))
    }
}

/// Old-to-new node id mapping produced by deletions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub old_to_new: Vec<Option<usize>>,
}

impl IdMap {
    pub fn get(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied().flatten()
    }
}

/// The `hops`-hop subgraph around a node that determines its prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComputationGraph {
    pub center: usize,
    pub hops: usize,
    pub members: Vec<usize>,
    pub member_training_nodes: Vec<usize>,
}

impl ComputationGraph {
    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    pub fn shares_training_nodes(&self, other: &ComputationGraph) -> bool {
        sorted_intersect(&self.member_training_nodes, &other.member_training_nodes)
    }
}

pub(crate) fn sorted_intersect(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Path 0-1-2 with two attributes, alternating labels and groups.
    pub fn path3() -> Graph {
        Graph::new(
            3,
            [(0, 1), (1, 2)],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            2,
            vec![Some(0), Some(1), Some(0)],
            vec![0, 1, 0],
        )
        .unwrap()
    }

    pub fn triangle() -> Graph {
        Graph::new(
            3,
            [(0, 1), (1, 2), (0, 2)],
            vec![0.0; 3],
            1,
            vec![Some(0); 3],
            vec![0, 1, 0],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let g = Graph::new(2, [(0, 1), (1, 0), (0, 1), (1, 1)], vec![0.0; 2], 1, vec![Some(0); 2], vec![0, 1])
            .unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn unknown_node_in_edge_is_rejected() {
        let err = Graph::new(3, [(0, 99)], vec![0.0; 3], 1, vec![Some(0); 3], vec![0; 3]).unwrap_err();
        assert!(matches!(err, Error::UnknownNode(99)));
    }

    #[test]
    fn zero_hop_ball_is_the_center() {
        let g = path3();
        assert_eq!(g.computation_graph(1, 0).unwrap().members, vec![1]);
        assert_eq!(g.computation_graph(1, 1).unwrap().members, vec![0, 1, 2]);
        assert_eq!(g.computation_graph(0, 1).unwrap().members, vec![0, 1]);
        assert!(g.computation_graph(5, 1).is_err());
    }

    #[test]
    fn computation_graph_tracks_training_members() {
        let g = path3()
            .with_masks(Masks::from_lists(3, &[0, 2], &[], &[1]).unwrap())
            .unwrap();
        let cg = g.computation_graph(0, 2).unwrap();
        assert_eq!(cg.member_training_nodes, vec![0, 2]);
        assert!(cg.contains(1));
    }

    #[test]
    fn removing_path_center_leaves_singletons() {
        let g = path3()
            .with_masks(Masks::from_lists(3, &[0, 1], &[], &[2]).unwrap())
            .unwrap();
        let (h, map) = g.remove_node(1).unwrap();
        assert_eq!(h.node_count(), 2);
        assert!(h.edges().is_empty());
        assert_eq!(map.get(0), Some(0));
        assert_eq!(map.get(1), None);
        assert_eq!(map.get(2), Some(1));
        assert_eq!(h.train_nodes().len(), g.train_nodes().len() - 1);
        assert_eq!(h.original_ids(), &[0, 2]);
        assert_eq!(h.feature_row(1), g.feature_row(2));
        assert_eq!(h.label(1), g.label(2));
    }

    #[test]
    fn removing_isolated_node_keeps_other_rows() {
        let g = Graph::new(4, [(0, 1), (1, 2)], vec![0.0; 4], 1, vec![Some(0); 4], vec![0, 1, 0, 1]).unwrap();
        let before = Propagation::new(&g, Normalization::Row, true).unwrap();
        let (h, _) = g.remove_node(3).unwrap();
        let after = Propagation::new(&h, Normalization::Row, true).unwrap();
        for v in 0..3 {
            assert_eq!(before.row(v), after.row(v));
        }
    }

    #[test]
    fn ball_is_monotone_in_hops() {
        let g = Graph::new(
            6,
            [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)],
            vec![0.0; 6],
            1,
            vec![Some(0); 6],
            vec![0; 6],
        )
        .unwrap();
        for v in 0..6 {
            let mut prev = g.ball(v, 0);
            for hops in 1..6 {
                let cur = g.ball(v, hops);
                assert!(prev.iter().all(|x| cur.contains(x)));
                prev = cur;
            }
        }
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        assert!(Masks::from_lists(3, &[0], &[0], &[]).is_err());
    }
}

use rayon::prelude::*;

use super::{KdTree, LocationSet};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    /// Parents of position `i` are among positions `< i` of the same set.
    Training,
    /// Parents index into a separate training set.
    Prediction,
}

/// Parent sets per position, each sorted by ascending distance with ties
/// broken by ascending index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    m: usize,
    kind: GraphKind,
    offsets: Vec<usize>,
    parents: Vec<usize>,
}

impl NeighborGraph {
    fn from_lists(m: usize, kind: GraphKind, lists: Vec<Vec<(f64, usize)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut parents = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for list in lists {
            parents.extend(list.into_iter().map(|(_, j)| j));
            offsets.push(parents.len());
        }
        Self { m, kind, offsets, parents }
    }

    /// Builds a graph from explicit parent lists (no ordering checks).
    pub fn from_parents(m: usize, kind: GraphKind, lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut parents = Vec::new();
        for l in lists {
            parents.extend_from_slice(l);
            offsets.push(parents.len());
        }
        Self { m, kind, offsets, parents }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    /// Number of positions (rows).
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |i| self.parents(i))
    }

    /// Total number of parent entries.
    pub fn nnz(&self) -> usize {
        self.parents.len()
    }
}

/// Directed graph over ordered locations: each position's `min(i, m)`
/// nearest predecessors.
pub fn build_training_neighbors(locs: &LocationSet, m: usize) -> Result<NeighborGraph> {
    if m == 0 {
        return invalid("neighbor budget m must be at least 1");
    }
    if locs.is_empty() {
        return invalid("cannot build a neighbor graph over an empty location set");
    }
    let tree = KdTree::new(locs.coords());
    let lists: Vec<Vec<(f64, usize)>> = (0..locs.len())
        .into_par_iter()
        .map(|i| tree.nearest(locs.coord(i), m.min(i), i))
        .collect();
    Ok(NeighborGraph::from_lists(m, GraphKind::Training, lists))
}

/// Each prediction site's `m` nearest training locations.
pub fn build_prediction_neighbors(train: &LocationSet, pred: &LocationSet, m: usize) -> Result<NeighborGraph> {
    if train.is_empty() {
        return invalid("prediction neighbors need a nonempty training set");
    }
    if m == 0 || m > train.len() {
        return invalid(format!("neighbor budget m = {m} must lie in 1..={}", train.len()));
    }
    let tree = KdTree::new(train.coords());
    let lists: Vec<Vec<(f64, usize)>> = pred
        .coords()
        .par_iter()
        .map(|&q| tree.nearest(q, m, train.len()))
        .collect();
    Ok(NeighborGraph::from_lists(m, GraphKind::Prediction, lists))
}

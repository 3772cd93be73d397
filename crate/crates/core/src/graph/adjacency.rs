use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `D^-1 A`
    Row,
    /// `D^-1/2 A D^-1/2`
    Symmetric,
}

/// One sparse row of the normalized adjacency: `(column, weight)` pairs
/// sorted by column.
pub type Row = Vec<(usize, f64)>;

/// Normalized adjacency `Â` stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    rows: Vec<Row>,
    normalization: Normalization,
    self_loops: bool,
}

impl Propagation {
    pub fn new(graph: &Graph, normalization: Normalization, self_loops: bool) -> Result<Self> {
        if graph.node_count() == 0 {
            return Err(Error::InvalidGraph("empty graph".into()));
        }
        let rows = (0..graph.node_count())
            .map(|v| normalized_row(graph, v, normalization, self_loops, None))
            .collect::<Result<_>>()?;
        Ok(Self {
            rows,
            normalization,
            self_loops,
        })
    }

    pub fn row(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; n];
                for &(k, w) in row {
                    dense[k] = w;
                }
                dense
            })
            .collect()
    }

    /// `Â · M` for a row-major `n x cols` matrix.
    pub fn apply(&self, matrix: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * cols];
        for (v, row) in self.rows.iter().enumerate() {
            let dst = &mut out[v * cols..(v + 1) * cols];
            for &(k, w) in row {
                for (d, s) in dst.iter_mut().zip(&matrix[k * cols..(k + 1) * cols]) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

fn effective_degree(graph: &Graph, v: usize, self_loops: bool, excluded: Option<usize>) -> usize {
    let lost = excluded.is_some_and(|x| x != v && graph.has_edge(v, x)) as usize;
    graph.degree(v) - lost + self_loops as usize
}

/// Row `v` of `Â`, optionally as it would be with node `excluded` deleted
/// from the graph (its column dropped and all degrees updated).
pub fn normalized_row(
    graph: &Graph,
    v: usize,
    normalization: Normalization,
    self_loops: bool,
    excluded: Option<usize>,
) -> Result<Row> {
    graph.check_node(v)?;
    let dv = effective_degree(graph, v, self_loops, excluded);
    if dv == 0 {
        return Err(Error::IsolatedNode(v));
    }
    let mut cols: Vec<usize> = graph
        .neighbors(v)
        .iter()
        .copied()
        .filter(|&k| Some(k) != excluded)
        .collect();
    if self_loops {
        let at = cols.partition_point(|&k| k < v);
        cols.insert(at, v);
    }
    let row = cols
        .into_iter()
        .map(|k| {
            let w = match normalization {
                Normalization::Row => 1.0 / dv as f64,
                Normalization::Symmetric => {
                    let dk = effective_degree(graph, k, self_loops, excluded);
                    1.0 / ((dv as f64).sqrt() * (dk as f64).sqrt())
                }
            };
            (k, w)
        })
        .collect();
    Ok(row)
}

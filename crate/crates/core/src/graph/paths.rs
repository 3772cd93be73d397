use serde::Serialize;

use super::Graph;
use crate::error::{Error, Result};

pub const MAX_PATH_HOPS: usize = 4;
pub const MAX_PATH_COUNT: usize = 1_000_000;

/// Simple-path statistics from `source` to `target` up to a hop limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub source: usize,
    pub target: usize,
    /// Shortest hop distance; `None` when no path within the limit exists.
    pub shortest_distance: Option<usize>,
    pub path_count: usize,
    /// Geometric mean of the degrees along each path, endpoint `target`
    /// excluded.
    pub geo_mean_degrees: Vec<f64>,
    pub min_geo_mean: Option<f64>,
}

impl PathStats {
    pub fn is_reachable(&self) -> bool {
        self.path_count > 0
    }

    /// `q / d_min^h`, or `None` when unreachable.
    pub fn representation_bound(&self) -> Option<f64> {
        let h = self.shortest_distance?;
        let d = self.min_geo_mean?;
        Some(self.path_count as f64 / d.powi(h as i32))
    }
}

/// Enumerates simple paths `source -> target` of length at most `hops`.
/// Degrees count the self-loop when `self_loops` is set, matching `Â`.
pub fn path_stats(graph: &Graph, source: usize, target: usize, hops: usize, self_loops: bool) -> Result<PathStats> {
    graph.check_node(source)?;
    graph.check_node(target)?;
    if source == target {
        return Err(Error::InvalidGraph("path statistics need distinct endpoints".into()));
    }
    if hops > MAX_PATH_HOPS {
        return Err(Error::PathOverflow(format!("hop limit {hops} exceeds {MAX_PATH_HOPS}")));
    }
    let degree = |v: usize| (graph.degree(v) + self_loops as usize) as f64;

    let mut geo = Vec::new();
    let mut shortest: Option<usize> = None;
    let mut on_path = vec![false; graph.node_count()];
    let mut stack = vec![source];
    on_path[source] = true;
    let mut overflow = false;

    fn walk(
        graph: &Graph,
        target: usize,
        hops: usize,
        stack: &mut Vec<usize>,
        on_path: &mut [bool],
        geo: &mut Vec<f64>,
        shortest: &mut Option<usize>,
        overflow: &mut bool,
        degree: &dyn Fn(usize) -> f64,
    ) {
        let u = *stack.last().expect("non-empty");
        for &w in graph.neighbors(u) {
            if *overflow {
                return;
            }
            if w == target {
                let len = stack.len();
                let log_sum: f64 = stack.iter().map(|&v| degree(v).ln()).sum();
                geo.push((log_sum / len as f64).exp());
                *shortest = Some(shortest.map_or(len, |s| s.min(len)));
                if geo.len() > MAX_PATH_COUNT {
                    *overflow = true;
                }
                continue;
            }
            if on_path[w] || stack.len() >= hops {
                continue;
            }
            on_path[w] = true;
            stack.push(w);
            walk(graph, target, hops, stack, on_path, geo, shortest, overflow, degree);
            stack.pop();
            on_path[w] = false;
        }
    }

    if hops > 0 {
        walk(graph, target, hops, &mut stack, &mut on_path, &mut geo, &mut shortest, &mut overflow, &degree);
    }
    if overflow {
        return Err(Error::PathOverflow(format!(
            "more than {MAX_PATH_COUNT} paths between {source} and {target}"
        )));
    }
    let min_geo_mean = geo.iter().copied().reduce(f64::min);
    Ok(PathStats {
        source,
        target,
        shortest_distance: shortest,
        path_count: geo.len(),
        geo_mean_degrees: geo,
        min_geo_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    /// Connect when the distance exceeds `ratio * min(dmax_i, dmax_j)`.
    Farther,
    /// Connect when the distance is below `ratio * min(dmax_i, dmax_j)`.
    Closer,
}

/// Euclidean threshold graph over attribute rows, where `dmax_i` is the
/// largest distance from row `i` to any other row.
pub fn threshold_edges(features: &[f64], dim: usize, ratio: f64, rule: ThresholdRule) -> Vec<(usize, usize)> {
    let n = if dim == 0 { 0 } else { features.len() / dim };
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let dist = |i: usize, j: usize| {
        row(i)
            .iter()
            .zip(row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let dmax: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| dist(i, j)).fold(0.0, f64::max))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let threshold = ratio * dmax[i].min(dmax[j]);
            let d = dist(i, j);
            let connect = match rule {
                ThresholdRule::Farther => d > threshold,
                ThresholdRule::Closer => d < threshold,
            };
            if connect {
                edges.push((i, j));
            }
        }
    }
    edges
}

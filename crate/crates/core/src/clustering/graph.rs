use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusteringError;
use crate::geometry::WorldPoint;
use crate::reconstruction::SpaceTimeCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Same-frame link distance, metres.
    pub r_static: f64,
    /// Consecutive-frame link distance, metres.
    pub r_dynamic: f64,
    /// Weight decay scale, metres.
    pub sigma_w: f64,
}

impl LinkParams {
    /// 3x and 5x the blur radius for the two thresholds, half the static
    /// threshold for the weight scale.
    pub fn from_blur_radius(blur: f64) -> Self {
        Self {
            r_static: 3.0 * blur,
            r_dynamic: 5.0 * blur,
            sigma_w: 1.5 * blur,
        }
    }

    pub fn validate(&self) -> Result<(), ClusteringError> {
        for (name, v) in [("r_static", self.r_static), ("r_dynamic", self.r_dynamic), ("sigma_w", self.sigma_w)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ClusteringError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, d2: f64) -> f64 {
        (-d2 / (self.sigma_w * self.sigma_w)).exp()
    }
}

/// Symmetric weighted graph in compressed sparse row form. Rows list
/// neighbours in ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceTimeGraph {
    frames: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl SpaceTimeGraph {
    /// Builds from undirected edges; each pair must appear once.
    pub fn from_edges(frames: Vec<u32>, edges: &[(u32, u32, f64)]) -> Self {
        let n = frames.len();
        let mut deg = vec![0usize; n + 1];
        for &(i, j, _) in edges {
            deg[i as usize + 1] += 1;
            deg[j as usize + 1] += 1;
        }
        for k in 0..n {
            deg[k + 1] += deg[k];
        }
        let offsets = deg;
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut weights = vec![0f64; offsets[n]];
        for &(i, j, w) in edges {
            for (a, b) in [(i, j), (j, i)] {
                let slot = &mut fill[a as usize];
                targets[*slot] = b;
                weights[*slot] = w;
                *slot += 1;
            }
        }
        let mut g = Self {
            frames,
            offsets,
            targets,
            weights,
        };
        g.sort_rows();
        g
    }

    fn sort_rows(&mut self) {
        let mut row: Vec<(u32, f64)> = Vec::new();
        for i in 0..self.node_count() {
            let r = self.offsets[i]..self.offsets[i + 1];
            row.clear();
            row.extend(self.targets[r.clone()].iter().copied().zip(self.weights[r.clone()].iter().copied()));
            row.sort_by_key(|e| e.0);
            for (k, (t, w)) in r.zip(&row) {
                self.targets[k] = *t;
                self.weights[k] = *w;
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.frames.len()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn frame(&self, i: u32) -> u32 {
        self.frames[i as usize]
    }

    pub fn neighbors(&self, i: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.offsets[i as usize]..self.offsets[i as usize + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn degree(&self, i: u32) -> f64 {
        self.neighbors(i).map(|(_, w)| w).sum()
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.node_count() as u32).flat_map(move |i| self.neighbors(i).filter(move |e| e.0 > i).map(move |(j, w)| (i, j, w)))
    }
}

type Cell = [i64; 3];

fn cell_of(p: &WorldPoint, size: f64) -> Cell {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

struct HashGrid {
    size: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl HashGrid {
    fn new(points: impl Iterator<Item = (u32, WorldPoint)>, size: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points {
            cells.entry(cell_of(&p, size)).or_default().push(i);
        }
        Self { size, cells }
    }

    /// Calls `f` for every stored index in the 27 cells around `p`.
    fn around(&self, p: &WorldPoint, mut f: impl FnMut(u32)) {
        let c = cell_of(p, self.size);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(v) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        v.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

/// Links same-frame points within `r_static` and consecutive-frame points
/// within `r_dynamic`, using one hash grid per frame.
pub fn build_graph(cloud: &SpaceTimeCloud, params: &LinkParams) -> Result<SpaceTimeGraph, ClusteringError> {
    params.validate()?;
    let slices = cloud.frame_slices();
    let cell = params.r_static.max(params.r_dynamic);
    let (rs2, rd2) = (params.r_static * params.r_static, params.r_dynamic * params.r_dynamic);
    let pos = |i: u32| cloud.points[i as usize].position;
    let per_frame: Vec<Vec<(u32, u32, f64)>> = (0..slices.len())
        .into_par_iter()
        .map(|s| {
            let (frame, range) = &slices[s];
            let grid = HashGrid::new(range.clone().map(|i| (i as u32, pos(i as u32))), cell);
            let mut out = Vec::new();
            for i in range.clone() {
                let p = pos(i as u32);
                grid.around(&p, |j| {
                    if j as usize > i {
                        let d2 = (pos(j) - p).norm_squared();
                        if d2 <= rs2 {
                            out.push((i as u32, j, params.weight(d2)));
                        }
                    }
                });
            }
            if let Some((next, nrange)) = slices.get(s + 1) {
                if *next == frame + 1 {
                    for j in nrange.clone() {
                        let p = pos(j as u32);
                        grid.around(&p, |i| {
                            let d2 = (pos(i) - p).norm_squared();
                            if d2 <= rd2 {
                                out.push((i, j as u32, params.weight(d2)));
                            }
                        });
                    }
                }
            }
            out
        })
        .collect();
    let frames = cloud.points.iter().map(|p| p.frame).collect();
    let edges: Vec<(u32, u32, f64)> = per_frame.into_iter().flatten().collect();
    Ok(SpaceTimeGraph::from_edges(frames, &edges))
}

/// A cluster's induced subgraph with local node numbering. `nodes[k]` is
/// the graph node of local node `k`; `nodes` is ascending.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub nodes: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    degree: Vec<f64>,
}

impl Subgraph {
    pub fn induced(graph: &SpaceTimeGraph, nodes: &[u32]) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for &g in nodes {
            for (j, w) in graph.neighbors(g) {
                if let Ok(k) = nodes.binary_search(&j) {
                    targets.push(k as u32);
                    weights.push(w);
                }
            }
            offsets.push(targets.len());
        }
        let degree = (0..nodes.len())
            .map(|k| weights[offsets[k]..offsets[k + 1]].iter().sum())
            .collect();
        Self {
            nodes: nodes.to_vec(),
            offsets,
            targets,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[k]..self.offsets[k + 1];
        self.targets[r.clone()].iter().map(|&t| t as usize).zip(self.weights[r].iter().copied())
    }

    pub fn degree(&self, k: usize) -> f64 {
        self.degree[k]
    }

    /// `y <- W x`.
    pub fn weight_mul(&self, x: &[f64], y: &mut [f64]) {
        for (k, yk) in y.iter_mut().enumerate() {
            *yk = self.neighbors(k).map(|(j, w)| w * x[j]).sum();
        }
    }
}

//! Space-time proximity graph, connected components labeling and recursive
//! normalized-cut splitting of clusters that hold several targets.

mod ccl;
mod eigen;
mod graph;
mod ncut;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reconstruction::SpaceTimeCloud;

pub use ccl::{components_from_edges, connected_components, UnionFind};
pub use eigen::{fiedler_vector, smallest_pairs, Eigenpair};
pub use graph::{build_graph, LinkParams, SpaceTimeGraph, Subgraph};
pub use ncut::{
    is_split_candidate, ncut_value, recursive_split, spectral_bipartition, sweep_cut, Bipartition, Coexistence, SplitOutcome,
    SplitRecord,
};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate partition: one side has zero association")]
    DegeneratePartition,
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("labels file {path}: {message}")]
    Labels { path: std::path::PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcutParams {
    /// A split is accepted only when its Ncut is below this; in (0, 2).
    pub ncut_accept_threshold: f64,
    pub min_cluster_points: usize,
    pub max_recursion_depth: usize,
    /// Bound on `|(D - W) y - lambda D y| / |y|`.
    pub eig_tolerance: f64,
    pub sweep_candidates: usize,
    /// A cluster is a split candidate only if at least this many of its
    /// frames hold two or more same-frame groups of `min_cluster_points`.
    /// The two sides of a split must also share this many frames, or every
    /// frame of a cluster spanning fewer.
    pub min_multi_frames: usize,
    /// Fraction of the shorter side's frames the two sides of a split must
    /// share; in [0, 1].
    pub min_coexistence: f64,
    /// Eigenvectors swept when the Fiedler vector yields no admissible cut,
    /// counting the Fiedler vector.
    pub max_eigenvectors: usize,
}

impl Default for NcutParams {
    fn default() -> Self {
        Self {
            ncut_accept_threshold: 0.2,
            min_cluster_points: 5,
            max_recursion_depth: 64,
            eig_tolerance: 1e-6,
            sweep_candidates: 256,
            min_multi_frames: 2,
            min_coexistence: 0.5,
            max_eigenvectors: 4,
        }
    }
}

impl NcutParams {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        let bad = |m: String| Err(ClusteringError::InvalidParams(m));
        if !(self.ncut_accept_threshold > 0.0 && self.ncut_accept_threshold < 2.0) {
            return bad(format!("ncut_accept_threshold must be in (0, 2), got {}", self.ncut_accept_threshold));
        }
        if self.min_cluster_points < 2 {
            return bad(format!("min_cluster_points must be >= 2, got {}", self.min_cluster_points));
        }
        if !(self.eig_tolerance > 0.0) {
            return bad(format!("eig_tolerance must be > 0, got {}", self.eig_tolerance));
        }
        if !(0.0..=1.0).contains(&self.min_coexistence) {
            return bad(format!("min_coexistence must be in [0, 1], got {}", self.min_coexistence));
        }
        if self.max_eigenvectors == 0 {
            return bad("max_eigenvectors must be >= 1".into());
        }
        if self.sweep_candidates == 0 {
            return bad("sweep_candidates must be >= 1".into());
        }
        Ok(())
    }
}

/// A partition of the graph nodes into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterLabeling {
    pub labels: Vec<u32>,
    /// Node lists per label, each ascending.
    pub clusters: Vec<Vec<u32>>,
}

impl ClusterLabeling {
    /// Renumbers arbitrary group keys so labels ascend with each cluster's
    /// smallest node.
    pub fn from_keys<K: Eq + std::hash::Hash + Copy>(keys: &[K]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut clusters: Vec<Vec<u32>> = Vec::new();
        let labels = keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let l = *map.entry(*k).or_insert_with(|| {
                    clusters.push(Vec::new());
                    clusters.len() as u32 - 1
                });
                clusters[l as usize].push(i as u32);
                l
            })
            .collect();
        Self { labels, clusters }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Disjoint, covering and consistent with `labels`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.labels.len()];
        for (l, c) in self.clusters.iter().enumerate() {
            if c.is_empty() {
                return false;
            }
            for &i in c {
                let i = i as usize;
                if i >= seen.len() || seen[i] || self.labels[i] as usize != l {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    point_index: u32,
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    cluster_id: u32,
}

/// Writes `point_index,frame,x,y,z,cluster_id`.
pub fn write_labels(path: &Path, cloud: &SpaceTimeCloud, labeling: &ClusterLabeling) -> Result<(), ClusteringError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if cloud.is_empty() {
        w.write_record(["point_index", "frame", "x", "y", "z", "cluster_id"])?;
    }
    for (i, (p, l)) in cloud.points.iter().zip(&labeling.labels).enumerate() {
        w.serialize(LabelRow {
            point_index: i as u32,
            frame: p.frame,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            cluster_id: *l,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads cluster ids back; `point_index` must run 0, 1, 2, ...
pub fn read_labels(path: &Path) -> Result<ClusterLabeling, ClusteringError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    for row in rdr.deserialize() {
        let r: LabelRow = row?;
        if r.point_index as usize != labels.len() {
            return Err(ClusteringError::Labels {
                path: path.to_path_buf(),
                message: format!("expected point_index {}, found {}", labels.len(), r.point_index),
            });
        }
        labels.push(r.cluster_id);
    }
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if clusters.len() <= l as usize {
            clusters.resize(l as usize + 1, Vec::new());
        }
        clusters[l as usize].push(i as u32);
    }
    let out = ClusterLabeling { labels, clusters };
    if !out.is_partition() {
        return Err(ClusteringError::Labels {
            path: path.to_path_buf(),
            message: "cluster ids are not contiguous".into(),
        });
    }
    Ok(out)
}

/// Writes `parent_id,child_a,child_b,ncut,accepted`; children are empty for
/// rejected attempts.
pub fn write_splits(path: &Path, records: &[SplitRecord]) -> Result<(), ClusteringError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parent_id", "child_a", "child_b", "ncut", "accepted"])?;
    for r in records {
        let child = |c: Option<u32>| c.map_or(String::new(), |c| c.to_string());
        let ncut = r.ncut.map_or(String::new(), |v| v.to_string());
        w.write_record([
            r.parent_id.to_string(),
            child(r.children.map(|c| c.0)),
            child(r.children.map(|c| c.1)),
            ncut,
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::SpaceTimePoint;
    use nalgebra::{Point2, Point3};

    #[test]
    fn labeling_from_keys_orders_by_smallest_node() {
        let l = ClusterLabeling::from_keys(&[7, 3, 7, 9, 3]);
        assert_eq!(l.labels, vec![0, 1, 0, 2, 1]);
        assert_eq!(l.clusters, vec![vec![0, 2], vec![1, 4], vec![3]]);
        assert!(l.is_partition());
        let broken = ClusterLabeling {
            labels: vec![0, 0],
            clusters: vec![vec![0]],
        };
        assert!(!broken.is_partition());
    }

    #[test]
    fn params_are_validated() {
        assert!(NcutParams::default().validate().is_ok());
        for bad in [
            NcutParams { ncut_accept_threshold: 2.0, ..Default::default() },
            NcutParams { min_cluster_points: 1, ..Default::default() },
            NcutParams { eig_tolerance: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let pt = |f: u32| SpaceTimePoint {
            position: Point3::new(f as f64, 0.5, -1.0),
            frame: f,
            source_triplet: [Point2::origin(); 3],
            reprojection_error: 0.0,
        };
        let cloud = SpaceTimeCloud {
            points: vec![pt(0), pt(0), pt(1)],
            frame_range: Some((0, 1)),
        };
        let l = ClusterLabeling::from_keys(&[1, 2, 1]);
        write_labels(&path, &cloud, &l).unwrap();
        assert_eq!(read_labels(&path).unwrap(), l);
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::clustering::ClusterLabeling;
use crate::geometry::WorldPoint;
use crate::reconstruction::SpaceTimeCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub frame: u32,
    pub centroid: WorldPoint,
    pub point_count: u32,
}

/// Per-frame centroids of one cluster. Frames without points are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: u32,
    pub samples: Vec<TrackSample>,
}

impl Trajectory {
    pub fn first_frame(&self) -> Option<u32> {
        self.samples.first().map(|s| s.frame)
    }

    /// Frames missing between the first and last sample.
    pub fn gaps(&self) -> Vec<u32> {
        self.samples
            .windows(2)
            .flat_map(|w| w[0].frame + 1..w[1].frame)
            .collect()
    }

    pub fn point_count(&self) -> u64 {
        self.samples.iter().map(|s| s.point_count as u64).sum()
    }
}

/// One trajectory per cluster, numbered by first frame, then cluster label.
pub fn extract_trajectories(labeling: &ClusterLabeling, cloud: &SpaceTimeCloud) -> Vec<Trajectory> {
    let mut tracks: Vec<(u32, Vec<TrackSample>)> = labeling
        .clusters
        .iter()
        .enumerate()
        .map(|(label, members)| {
            let mut per_frame: BTreeMap<u32, (Vector3<f64>, u32)> = BTreeMap::new();
            for &i in members {
                let p = &cloud.points[i as usize];
                let e = per_frame.entry(p.frame).or_insert((Vector3::zeros(), 0));
                e.0 += p.position.coords;
                e.1 += 1;
            }
            let samples = per_frame
                .into_iter()
                .map(|(frame, (sum, n))| TrackSample {
                    frame,
                    centroid: WorldPoint::from(sum / n as f64),
                    point_count: n,
                })
                .collect();
            (label as u32, samples)
        })
        .collect();
    tracks.sort_by_key(|(label, s)| (s.first().map(|x| x.frame), *label));
    tracks
        .into_iter()
        .enumerate()
        .map(|(id, (_, samples))| Trajectory {
            track_id: id as u32,
            samples,
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    track_id: u32,
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    n_points: u32,
}

/// Writes `track_id,frame,x,y,z,n_points`.
pub fn write_tracks(path: &Path, tracks: &[Trajectory]) -> Result<(), PipelineError> {
    let err = |e: csv::Error| PipelineError::stage("track", e);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::stage("track", e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    if tracks.iter().all(|t| t.samples.is_empty()) {
        w.write_record(["track_id", "frame", "x", "y", "z", "n_points"]).map_err(err)?;
    }
    for t in tracks {
        for s in &t.samples {
            w.serialize(TrackRow {
                track_id: t.track_id,
                frame: s.frame,
                x: s.centroid.x,
                y: s.centroid.y,
                z: s.centroid.z,
                n_points: s.point_count,
            })
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| PipelineError::stage("track", e))
}

pub fn read_tracks(path: &Path) -> Result<Vec<Trajectory>, PipelineError> {
    let err = |e: csv::Error| PipelineError::stage("evaluate", e);
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut by_id: BTreeMap<u32, Vec<TrackSample>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: TrackRow = row.map_err(err)?;
        by_id.entry(r.track_id).or_default().push(TrackSample {
            frame: r.frame,
            centroid: WorldPoint::new(r.x, r.y, r.z),
            point_count: r.n_points,
        });
    }
    Ok(by_id
        .into_iter()
        .map(|(track_id, mut samples)| {
            samples.sort_by_key(|s| s.frame);
            Trajectory { track_id, samples }
        })
        .collect())
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundTruthTrajectory, SynthError};
use crate::geometry::WorldPoint;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame: u32,
    target_id: u32,
    x: f64,
    y: f64,
    z: f64,
}

/// Writes `frame,target_id,x,y,z` rows ordered by frame, then target.
pub fn write_ground_truth(path: &Path, trajs: &[GroundTruthTrajectory]) -> Result<(), SynthError> {
    let mut rows: Vec<Row> = trajs
        .iter()
        .flat_map(|t| {
            t.samples().map(|(frame, p)| Row {
                frame,
                target_id: t.target_id,
                x: p.x,
                y: p.y,
                z: p.z,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.target_id));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthTrajectory>, SynthError> {
    let bad = |message: String| SynthError::GroundTruth {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let mut by_target: BTreeMap<u32, Vec<(u32, WorldPoint)>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        by_target
            .entry(r.target_id)
            .or_default()
            .push((r.frame, WorldPoint::new(r.x, r.y, r.z)));
    }
    by_target
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by_key(|s| s.0);
            let first = samples[0].0;
            for (i, (f, _)) in samples.iter().enumerate() {
                if *f != first + i as u32 {
                    return Err(bad(format!("target {id}: frames are not contiguous at frame {f}")));
                }
            }
            Ok(GroundTruthTrajectory::new(id, first, samples.into_iter().map(|s| s.1).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn ground_truth_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        let trajs = vec![
            GroundTruthTrajectory::new(3, 2, vec![Point3::new(0.1, 1.0 / 3.0, -2.5e-7), Point3::new(1e9, -0.0, 7.0)]),
            GroundTruthTrajectory::new(1, 0, vec![Point3::new(std::f64::consts::PI, 0.2, 0.3); 4]),
        ];
        write_ground_truth(&p, &trajs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("frame,target_id,x,y,z\n"));
        let back = read_ground_truth(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], trajs[1]);
        assert_eq!(back[1], trajs[0]);
        write_ground_truth(&p, &back).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
    }

    #[test]
    fn gaps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        std::fs::write(&p, "frame,target_id,x,y,z\n0,1,0,0,0\n2,1,0,0,0\n").unwrap();
        assert!(matches!(read_ground_truth(&p), Err(SynthError::GroundTruth { .. })));
    }
}

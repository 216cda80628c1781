//! Semi-natural test data: smoothed and upsampled trajectories rendered as
//! Gaussian blobs in three views, with the exact ground truth.

mod io;
mod render;
pub mod scenarios;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::{GeometryError, WorldPoint};
use crate::pnm::PnmError;

pub use io::{read_ground_truth, write_ground_truth};
pub use render::{
    blob_radius_px, frame_seed, generate_scene, positions_at, occlusion_report, render_frame, SceneConfig,
    SceneManifest, TargetOcclusion,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory {target_id} has {len} samples, need at least {need}")]
    TooShort { target_id: u32, len: usize, need: usize },
    #[error("smoothing window must be odd and positive, got {0}")]
    BadWindow(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("ground truth {path}: {message}")]
    GroundTruth { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Positions of one target on consecutive frames starting at `first_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrajectory {
    pub target_id: u32,
    pub first_frame: u32,
    pub positions: Vec<WorldPoint>,
}

impl GroundTruthTrajectory {
    pub fn new(target_id: u32, first_frame: u32, positions: Vec<WorldPoint>) -> Self {
        Self {
            target_id,
            first_frame,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last_frame(&self) -> Option<u32> {
        (!self.is_empty()).then(|| self.first_frame + self.positions.len() as u32 - 1)
    }

    pub fn at(&self, frame: u32) -> Option<&WorldPoint> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|i| self.positions.get(i as usize))
    }

    pub fn samples(&self) -> impl Iterator<Item = (u32, &WorldPoint)> {
        self.positions
            .iter()
            .enumerate()
            .map(move |(i, p)| (self.first_frame + i as u32, p))
    }
}

/// Centred moving average over `window` samples; the ends use the widest
/// symmetric window that fits.
pub fn smooth_trajectory(
    traj: &GroundTruthTrajectory,
    window: usize,
) -> Result<GroundTruthTrajectory, SynthError> {
    if window == 0 || window % 2 == 0 {
        return Err(SynthError::BadWindow(window));
    }
    let n = traj.len();
    if n < window {
        return Err(SynthError::TooShort {
            target_id: traj.target_id,
            len: n,
            need: window,
        });
    }
    let half = window / 2;
    let positions = (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let slice = &traj.positions[i - k..=i + k];
            let sum = slice.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
            WorldPoint::from(sum / slice.len() as f64)
        })
        .collect();
    Ok(GroundTruthTrajectory {
        positions,
        ..traj.clone()
    })
}

/// Doubles the sampling rate: even outputs copy the input, odd outputs are
/// midpoints of their neighbours. Frame numbers double as well.
pub fn upsample_double(traj: &GroundTruthTrajectory) -> Result<GroundTruthTrajectory, SynthError> {
    let n = traj.len();
    if n < 2 {
        return Err(SynthError::TooShort {
            target_id: traj.target_id,
            len: n,
            need: 2,
        });
    }
    let mut positions = Vec::with_capacity(2 * n - 1);
    for w in traj.positions.windows(2) {
        positions.push(w[0]);
        positions.push(nalgebra::center(&w[0], &w[1]));
    }
    positions.push(traj.positions[n - 1]);
    Ok(GroundTruthTrajectory {
        target_id: traj.target_id,
        first_frame: traj.first_frame * 2,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn traj(points: Vec<WorldPoint>) -> GroundTruthTrajectory {
        GroundTruthTrajectory::new(0, 0, points)
    }

    #[test]
    fn smoothing_fixes_constant_and_affine_sequences() {
        let c = traj(vec![Point3::new(1.0, -2.0, 0.5); 12]);
        assert_eq!(smooth_trajectory(&c, 7).unwrap(), c);
        let line = traj((0..15).map(|i| Point3::new(i as f64 * 0.25, 1.0 - i as f64, 2.0)).collect());
        let s = smooth_trajectory(&line, 7).unwrap();
        for (a, b) in s.positions.iter().zip(&line.positions) {
            // symmetric windows keep affine sequences fixed everywhere
            assert!((a - b).norm() < 1e-12);
        }
    }

    /// Brute-force windowed mean, written independently of the implementation.
    fn windowed_mean_oracle(xs: &[WorldPoint], window: usize) -> Vec<WorldPoint> {
        let n = xs.len() as i64;
        let half = (window / 2) as i64;
        (0..n)
            .map(|i| {
                let mut k = half;
                while i - k < 0 || i + k >= n {
                    k -= 1;
                }
                let (mut sx, mut sy, mut sz, mut c) = (0.0, 0.0, 0.0, 0.0);
                for j in (i - k)..=(i + k) {
                    let p = xs[j as usize];
                    sx += p.x;
                    sy += p.y;
                    sz += p.z;
                    c += 1.0;
                }
                Point3::new(sx / c, sy / c, sz / c)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn smoothing_matches_brute_force(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<WorldPoint> = (0..20)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let s = smooth_trajectory(&traj(pts.clone()), 7).unwrap();
            for (a, b) in s.positions.iter().zip(windowed_mean_oracle(&pts, 7)) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn upsampling_keeps_originals_on_even_indices(n in 2usize..60) {
            let pts: Vec<WorldPoint> = (0..n).map(|i| Point3::new(i as f64, (i * i) as f64, 0.0)).collect();
            let up = upsample_double(&traj(pts.clone())).unwrap();
            prop_assert_eq!(up.len(), 2 * n - 1);
            let evens: Vec<WorldPoint> = up.positions.iter().step_by(2).copied().collect();
            prop_assert_eq!(evens, pts);
        }
    }

    #[test]
    fn upsample_midpoint_and_length() {
        let t = traj(vec![Point3::origin(), Point3::new(2.0, 2.0, 2.0)]);
        let up = upsample_double(&t).unwrap();
        assert_eq!(up.positions[1], Point3::new(1.0, 1.0, 1.0));
        let long = traj(vec![Point3::origin(); 200]);
        assert_eq!(upsample_double(&long).unwrap().len(), 399);
        assert!(matches!(upsample_double(&traj(vec![Point3::origin()])), Err(SynthError::TooShort { .. })));
    }

    #[test]
    fn smoothing_errors() {
        let t = traj(vec![Point3::origin(); 5]);
        assert!(matches!(smooth_trajectory(&t, 7), Err(SynthError::TooShort { .. })));
        assert!(matches!(smooth_trajectory(&t, 4), Err(SynthError::BadWindow(4))));
        assert_eq!(smooth_trajectory(&t, 1).unwrap(), t);
    }
}

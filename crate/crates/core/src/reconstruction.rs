//! Pixel-level three-view matching and triangulation into a (3D + 1) cloud.
//!
//! View 1 is the pivot. For each of its foreground pixels the view-2
//! candidates are the foreground pixels inside the epipolar band; each
//! candidate pair is transferred into view 3 with the trifocal tensor and
//! completed by the nearest view-3 foreground pixel. Ghost triplets are
//! kept; clustering deals with them.

use std::path::Path;

use nalgebra::{Matrix3, Point2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    epipolar_line, line_distance, triangulate_views, GeometryError, ImagePoint, Rig, Tolerances, TrifocalTensor,
    WorldPoint,
};
use crate::imaging::{common_frames, read_masks, ImagingError};
use crate::pnm::BitMap;

#[derive(Debug, Error)]
pub enum ReconstructionError {
    #[error("invalid match parameters: {0}")]
    InvalidParams(String),
    #[error("mask sequences cover different frames")]
    FrameRangeMismatch,
    #[error("mask is {got:?}, camera sensor is {expected:?}")]
    MaskSize { expected: (u32, u32), got: (u32, u32) },
    #[error("cloud file {path}: {message}")]
    Cloud { path: std::path::PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    pub epipolar_band_px: f64,
    pub match_tolerance_px: f64,
    /// Metres from every camera centre, along its optical axis.
    pub max_depth: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            epipolar_band_px: 1.5,
            match_tolerance_px: 1.5,
            max_depth: 20.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), ReconstructionError> {
        for (name, v) in [
            ("epipolar_band_px", self.epipolar_band_px),
            ("match_tolerance_px", self.match_tolerance_px),
            ("max_depth", self.max_depth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ReconstructionError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint {
    pub position: WorldPoint,
    pub frame: u32,
    pub source_triplet: [ImagePoint; 3],
    /// RMS over the three views, pixels.
    pub reprojection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceTimeCloud {
    /// Ordered by frame, then by view-1 pixel in raster order.
    pub points: Vec<SpaceTimePoint>,
    pub frame_range: Option<(u32, u32)>,
}

impl SpaceTimeCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index ranges of each frame's points, in frame order.
    pub fn frame_slices(&self) -> Vec<(u32, std::ops::Range<usize>)> {
        let mut out: Vec<(u32, std::ops::Range<usize>)> = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            match out.last_mut() {
                Some((f, r)) if *f == p.frame => r.end = i + 1,
                _ => out.push((p.frame, i..i + 1)),
            }
        }
        out
    }
}

/// Foreground pixels grouped by row: only non-empty rows are stored, each
/// with its columns ascending.
struct RowIndex {
    rows: Vec<(u32, Vec<u32>)>,
}

impl RowIndex {
    fn new(mask: &BitMap) -> Self {
        let mut rows: Vec<(u32, Vec<u32>)> = Vec::new();
        for (x, y) in mask.pixels() {
            match rows.last_mut() {
                Some((row, xs)) if *row == y => xs.push(x),
                _ => rows.push((y, vec![x])),
            }
        }
        Self { rows }
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn columns_in(xs: &[u32], lo: f64, hi: f64) -> &[u32] {
        let a = xs.partition_point(|&x| (x as f64) < lo);
        let b = xs.partition_point(|&x| (x as f64) <= hi);
        &xs[a..b.max(a)]
    }

    /// Pixels within `band` of the unit-normal line `l`, raster order.
    fn in_band(&self, l: &crate::geometry::Line2, band: f64, out: &mut Vec<ImagePoint>) {
        out.clear();
        let (a, b, c) = (l.x, l.y, l.z);
        for (y, xs) in &self.rows {
            let y = *y as f64;
            let r = b * y + c;
            let cols = if a.abs() < 1e-12 {
                if r.abs() <= band {
                    &xs[..]
                } else {
                    &[][..]
                }
            } else {
                let (u0, u1) = ((-r - band) / a, (-r + band) / a);
                Self::columns_in(xs, u0.min(u1), u0.max(u1))
            };
            for &x in cols {
                let p = Point2::new(x as f64, y);
                // the interval is exact up to rounding; recheck the distance
                if line_distance(l, &p).abs() <= band {
                    out.push(p);
                }
            }
        }
    }

    /// Nearest pixel within `tol` of `q`; ties go to the first in raster order.
    fn nearest(&self, q: &ImagePoint, tol: f64) -> Option<ImagePoint> {
        let lo = self.rows.partition_point(|(y, _)| (*y as f64) < q.y - tol);
        let mut best: Option<(f64, ImagePoint)> = None;
        for (y, xs) in &self.rows[lo..] {
            let y = *y as f64;
            if y > q.y + tol {
                break;
            }
            for &x in Self::columns_in(xs, q.x - tol, q.x + tol) {
                let p = Point2::new(x as f64, y);
                let d = (p - q).norm_squared();
                if d <= tol * tol && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, p));
                }
            }
        }
        best.map(|b| b.1)
    }
}

/// Precomputed view geometry shared by all frames.
#[derive(Debug, Clone)]
pub struct Matcher {
    rig: Rig,
    tensor: TrifocalTensor,
    f12: Matrix3<f64>,
    params: MatchParams,
}

impl Matcher {
    pub fn new(rig: &Rig, params: &MatchParams) -> Result<Self, ReconstructionError> {
        params.validate()?;
        Ok(Self {
            rig: rig.clone(),
            tensor: rig.trifocal()?,
            f12: rig.fundamental(0, 1)?,
            params: params.clone(),
        })
    }

    pub fn params(&self) -> &MatchParams {
        &self.params
    }

    pub fn match_frame(&self, masks: [&BitMap; 3], frame: u32) -> Result<Vec<SpaceTimePoint>, ReconstructionError> {
        for (m, c) in masks.iter().zip(&self.rig.cameras) {
            if (m.width, m.height) != c.sensor_size {
                return Err(ReconstructionError::MaskSize {
                    expected: c.sensor_size,
                    got: (m.width, m.height),
                });
            }
        }
        let idx2 = RowIndex::new(masks[1]);
        let idx3 = RowIndex::new(masks[2]);
        let mut out = Vec::new();
        if idx2.is_empty() || idx3.is_empty() {
            return Ok(out);
        }
        let MatchParams {
            epipolar_band_px: band,
            match_tolerance_px: tol,
            max_depth,
        } = self.params;
        let geo_tol = Tolerances::default();
        let mut cands = Vec::new();
        for (x, y) in masks[0].pixels() {
            let p1 = Point2::new(x as f64, y as f64);
            let Ok(l) = epipolar_line(&self.f12, &p1) else { continue };
            idx2.in_band(&l, band, &mut cands);
            for p2 in &cands {
                let Ok(q3) = self.tensor.transfer(&p1, p2) else { continue };
                let Some(p3) = idx3.nearest(&q3, tol) else { continue };
                let triplet = [p1, *p2, p3];
                let Ok(t) = triangulate_views(&self.rig.cameras, &triplet, &geo_tol) else { continue };
                if t.max_error > tol {
                    continue;
                }
                let depth_ok = self.rig.cameras.iter().all(|c| {
                    let d = c.depth(&t.point);
                    d > 0.0 && d <= max_depth
                });
                if depth_ok {
                    out.push(SpaceTimePoint {
                        position: t.point,
                        frame,
                        source_triplet: triplet,
                        reprojection_error: t.reprojection_error,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Matches every frame; results are merged in frame order.
pub fn build_cloud(
    frames: &[(u32, [BitMap; 3])],
    rig: &Rig,
    params: &MatchParams,
) -> Result<SpaceTimeCloud, ReconstructionError> {
    let matcher = Matcher::new(rig, params)?;
    if frames.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(ReconstructionError::FrameRangeMismatch);
    }
    let per_frame: Vec<Vec<SpaceTimePoint>> = frames
        .par_iter()
        .map(|(f, [a, b, c])| matcher.match_frame([a, b, c], *f))
        .collect::<Result<_, _>>()?;
    Ok(SpaceTimeCloud {
        points: per_frame.into_iter().flatten().collect(),
        frame_range: frames.first().map(|f| (f.0, frames[frames.len() - 1].0)),
    })
}

/// [`build_cloud`] over a mask directory, reading frames in bounded chunks.
pub fn build_cloud_from_dir(masks: &Path, rig: &Rig, params: &MatchParams) -> Result<SpaceTimeCloud, ReconstructionError> {
    let matcher = Matcher::new(rig, params)?;
    let frames = common_frames(masks, "pbm").map_err(|e| match e {
        ImagingError::FrameMismatch => ReconstructionError::FrameRangeMismatch,
        e => e.into(),
    })?;
    let mut points = Vec::new();
    for chunk in frames.chunks(32) {
        let per_frame: Vec<Vec<SpaceTimePoint>> = chunk
            .par_iter()
            .map(|&f| {
                let [a, b, c] = read_masks(masks, f)?;
                matcher.match_frame([&a.bits, &b.bits, &c.bits], f)
            })
            .collect::<Result<_, _>>()?;
        points.extend(per_frame.into_iter().flatten());
    }
    Ok(SpaceTimeCloud {
        points,
        frame_range: Some((frames[0], frames[frames.len() - 1])),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CloudRow {
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    err: f64,
    u1: f64,
    v1: f64,
    u2: f64,
    v2: f64,
    u3: f64,
    v3: f64,
}

/// Writes `frame,x,y,z,err,u1,v1,u2,v2,u3,v3`.
pub fn write_cloud(path: &Path, cloud: &SpaceTimeCloud) -> Result<(), ReconstructionError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if cloud.is_empty() {
        w.write_record(["frame", "x", "y", "z", "err", "u1", "v1", "u2", "v2", "u3", "v3"])?;
    }
    for p in &cloud.points {
        let [a, b, c] = p.source_triplet;
        w.serialize(CloudRow {
            frame: p.frame,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            err: p.reprojection_error,
            u1: a.x,
            v1: a.y,
            u2: b.x,
            v2: b.y,
            u3: c.x,
            v3: c.y,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cloud file. The frame range is that of the points present.
pub fn read_cloud(path: &Path) -> Result<SpaceTimeCloud, ReconstructionError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for row in rdr.deserialize() {
        let r: CloudRow = row?;
        points.push(SpaceTimePoint {
            position: WorldPoint::new(r.x, r.y, r.z),
            frame: r.frame,
            source_triplet: [Point2::new(r.u1, r.v1), Point2::new(r.u2, r.v2), Point2::new(r.u3, r.v3)],
            reprojection_error: r.err,
        });
    }
    if points.windows(2).any(|w| w[0].frame > w[1].frame) {
        return Err(ReconstructionError::Cloud {
            path: path.to_path_buf(),
            message: "points are not ordered by frame".into(),
        });
    }
    let frame_range = points.first().map(|p| (p.frame, points[points.len() - 1].frame));
    Ok(SpaceTimeCloud { points, frame_range })
}

//! Built-in scenes covering the occlusion taxonomy, plus a seeded swarm.
//!
//! All scenes share [`default_rig`] and are laid out in units of the scene
//! resolution (the world size of one blur sigma at the scene centre, about
//! 1 cm with the default rig).

use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{read_ground_truth, smooth_trajectory, upsample_double, GroundTruthTrajectory, SceneConfig, SynthError};
use crate::geometry::{CameraModel, Rig, WorldPoint};

/// Three cameras about 5.4 m from the origin. Views 1 and 3 are about 31
/// degrees apart; view 2 sits 44 degrees to the side of view 1.
pub fn default_rig() -> Rig {
    let target = Point3::origin();
    let up = Vector3::z();
    let cam = |x: f64, y: f64, z: f64| {
        CameraModel::look_at(Point3::new(x, y, z), target, up, 800.0, (640, 480)).expect("valid default camera")
    };
    Rig::new([cam(-2.0, -5.0, 0.8), cam(2.2, -5.0, 0.6), cam(0.1, -4.6, 2.9)]).expect("valid default rig")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Two targets apart in space and in every view.
    Fig1a,
    /// Two targets apart in space but overlapping in views 1 and 3.
    Fig1b,
    /// Two targets in 3D proximity, overlapping everywhere.
    Fig1c,
    /// Two straight tracks that cross in views 1 and 3 at different times.
    Fig2,
    /// Two tracks that come within the blur for three frames.
    Fig3,
    /// Two tracks that travel together for a long stretch.
    Fig5,
    /// Seeded random swarm.
    Swarm,
    /// One motionless target.
    Static,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Fig1a,
        ScenarioKind::Fig1b,
        ScenarioKind::Fig1c,
        ScenarioKind::Fig2,
        ScenarioKind::Fig3,
        ScenarioKind::Fig5,
        ScenarioKind::Swarm,
        ScenarioKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Fig1a => "fig1a",
            ScenarioKind::Fig1b => "fig1b",
            ScenarioKind::Fig1c => "fig1c",
            ScenarioKind::Fig2 => "fig2",
            ScenarioKind::Fig3 => "fig3",
            ScenarioKind::Fig5 => "fig5",
            ScenarioKind::Swarm => "swarm",
            ScenarioKind::Static => "static",
        }
    }

    /// Single-frame scenes have no temporal context for a sliding-window
    /// background model.
    pub fn is_single_frame(self) -> bool {
        matches!(self, ScenarioKind::Fig1a | ScenarioKind::Fig1b | ScenarioKind::Fig1c)
    }
}

impl FromStr for ScenarioKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SynthError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioOptions {
    pub frames: Option<u32>,
    pub targets: Option<u32>,
    pub noise_sigma: Option<f64>,
    /// Seeds trajectory generation (swarm only).
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub trajectories: Vec<GroundTruthTrajectory>,
    pub scene: SceneConfig,
    pub center: WorldPoint,
}

impl Scenario {
    /// World size of one blur sigma at the scene centre.
    pub fn resolution(&self) -> f64 {
        self.scene.blur_radius_world(&self.center)
    }

    pub fn build(kind: ScenarioKind, opts: &ScenarioOptions) -> Result<Self, SynthError> {
        let rig = default_rig();
        let mut scene = SceneConfig::with_rig(rig);
        if let Some(n) = opts.noise_sigma {
            scene.noise_sigma = n;
        }
        let center = Point3::origin();
        let res = scene.blur_radius_world(&center);
        let trajectories = match kind {
            ScenarioKind::Fig1a => pair_frame(Vector3::new(12.0, 1.0, 3.0) * res),
            ScenarioKind::Fig1b => {
                let u = occluding_direction(&scene.rig, &center, [0, 2]);
                pair_frame(u * 12.0 * res)
            }
            ScenarioKind::Fig1c => pair_frame(Vector3::new(0.8, 0.3, 1.2).normalize() * 1.5 * res),
            ScenarioKind::Fig2 => fig2(&scene.rig, res, opts.frames.unwrap_or(40)),
            ScenarioKind::Fig3 => fig3(res, opts.frames.unwrap_or(24)),
            ScenarioKind::Fig5 => fig5(res, opts.frames.unwrap_or(60)),
            ScenarioKind::Swarm => swarm(
                res,
                opts.targets.unwrap_or(42),
                opts.frames.unwrap_or(200),
                opts.seed,
            )?,
            ScenarioKind::Static => {
                let frames = opts.frames.unwrap_or(10) as usize;
                vec![GroundTruthTrajectory::new(0, 0, vec![Point3::new(0.03, -0.02, 0.05); frames])]
            }
        };
        scene.frame_count = trajectories
            .iter()
            .filter_map(|t| t.last_frame())
            .max()
            .map_or(1, |f| f + 1);
        Ok(Scenario {
            name: kind.name().to_string(),
            trajectories,
            scene,
            center,
        })
    }

    /// Trajectories read from a ground-truth CSV, viewed by the default rig.
    pub fn from_file(path: &Path, opts: &ScenarioOptions) -> Result<Self, SynthError> {
        let trajectories = read_ground_truth(path)?;
        let mut scene = SceneConfig::with_rig(default_rig());
        if let Some(n) = opts.noise_sigma {
            scene.noise_sigma = n;
        }
        scene.frame_count = trajectories
            .iter()
            .filter_map(|t| t.last_frame())
            .max()
            .map_or(1, |f| f + 1);
        let n = trajectories.iter().map(|t| t.len()).sum::<usize>().max(1) as f64;
        let sum = trajectories
            .iter()
            .flat_map(|t| t.positions.iter())
            .fold(Vector3::zeros(), |a, p| a + p.coords);
        Ok(Scenario {
            name: path.file_stem().map_or("file".into(), |s| s.to_string_lossy().into_owned()),
            trajectories,
            scene,
            center: Point3::from(sum / n),
        })
    }
}

fn pair_frame(offset: Vector3<f64>) -> Vec<GroundTruthTrajectory> {
    let c = Point3::origin();
    vec![
        GroundTruthTrajectory::new(0, 0, vec![c - offset / 2.0]),
        GroundTruthTrajectory::new(1, 0, vec![c + offset / 2.0]),
    ]
}

fn unit_toward(cam: &CameraModel, p: &WorldPoint) -> Vector3<f64> {
    (p - cam.center()).normalize()
}

/// Direction whose angle to both listed viewing rays through `p` is smallest.
fn occluding_direction(rig: &Rig, p: &WorldPoint, views: [usize; 2]) -> Vector3<f64> {
    (unit_toward(&rig.cameras[views[0]], p) + unit_toward(&rig.cameras[views[1]], p)).normalize()
}

fn linear(id: u32, start: WorldPoint, velocity: Vector3<f64>, frames: u32) -> GroundTruthTrajectory {
    GroundTruthTrajectory::new(id, 0, (0..frames).map(|t| start + velocity * t as f64).collect())
}

/// Target A moves sideways; B sits 15 resolutions behind A along the view-1
/// ray at one third of the run and along the view-3 ray at two thirds.
fn fig2(rig: &Rig, res: f64, frames: u32) -> Vec<GroundTruthTrajectory> {
    let frames = frames.max(8);
    let (t1, t3) = ((frames * 3 / 10) as f64, (frames * 7 / 10) as f64);
    let va = Vector3::new(1.1, 0.0, 0.25) * res;
    let a0 = Point3::new(-(frames as f64) / 2.0 * 1.1 * res, 0.0, -0.05);
    let a = |t: f64| a0 + va * t;
    let gap = 15.0 * res;
    let b1 = a(t1) + unit_toward(&rig.cameras[0], &a(t1)) * gap;
    let b3 = a(t3) + unit_toward(&rig.cameras[2], &a(t3)) * gap;
    let vb = (b3 - b1) / (t3 - t1);
    let b0 = b1 - vb * t1;
    vec![linear(0, a0, va, frames), linear(1, b0, vb, frames)]
}

/// Two tracks crossing with a miss distance of 2.5 resolutions and a
/// relative speed of 2.5 resolutions per frame: closer than 4 resolutions
/// on exactly three frames around the middle of the run.
fn fig3(res: f64, frames: u32) -> Vec<GroundTruthTrajectory> {
    let frames = frames.max(6);
    let tc = (frames / 2) as f64;
    let along = Vector3::new(1.0, 0.0, 0.35).normalize();
    let across = Vector3::new(-0.2, 0.3, 1.0);
    let across = (across - along * along.dot(&across)).normalize();
    let drift = Vector3::new(0.1, 0.0, -0.4) * res;
    let miss = 2.5 * res;
    let rel = 2.5 * res;
    let c = Point3::origin() - drift * tc;
    let a = c + across * (miss / 2.0) - along * (rel / 2.0 * tc);
    let b = c - across * (miss / 2.0) + along * (rel / 2.0 * tc);
    vec![
        linear(0, a, drift + along * rel / 2.0, frames),
        linear(1, b, drift - along * rel / 2.0, frames),
    ]
}

/// Two tracks side by side (2.5 resolutions apart) for the middle third of
/// the run, 15 resolutions apart outside it, with smooth transitions.
fn fig5(res: f64, frames: u32) -> Vec<GroundTruthTrajectory> {
    let frames = frames.max(12);
    let along = Vector3::new(1.0, 0.0, 0.2).normalize();
    let across = Vector3::new(0.0, 0.25, 1.0).normalize();
    let (lo, hi) = (frames as f64 / 3.0, 2.0 * frames as f64 / 3.0);
    let ramp = frames as f64 / 8.0;
    let smooth = |x: f64| {
        let x = x.clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    };
    let half_gap = |t: f64| {
        let closeness = smooth((t - (lo - ramp)) / ramp) * (1.0 - smooth((t - hi) / ramp));
        (15.0 - 12.5 * closeness) * res / 2.0
    };
    let centre = |t: f64| Point3::origin() + along * (t - frames as f64 / 2.0) * 1.2 * res;
    let make = |id: u32, sign: f64| {
        GroundTruthTrajectory::new(
            id,
            0,
            (0..frames)
                .map(|t| centre(t as f64) + across * sign * half_gap(t as f64))
                .collect(),
        )
    };
    vec![make(0, 1.0), make(1, -1.0)]
}

/// Random smooth walks in a ball of radius 45 resolutions. Raw walks are
/// generated at half the frame rate, smoothed with a 7-sample moving
/// average and upsampled by two.
fn swarm(res: f64, targets: u32, frames: u32, seed: u64) -> Result<Vec<GroundTruthTrajectory>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5357_4152_4d00);
    let raw_len = (frames as usize).div_ceil(2) + 1;
    let raw_len = raw_len.max(7);
    let radius = 120.0 * res;
    let (v_min, v_max) = (1.6 * res, 3.2 * res);
    let mut gauss = || -> Vector3<f64> {
        Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        )
    };
    let mut out = Vec::with_capacity(targets as usize);
    for id in 0..targets {
        let mut p = loop {
            let g = gauss();
            if g.norm() > 1e-9 {
                let r = radius * 0.8 * (id as f64 * 0.618_033_988_7).fract().cbrt();
                break Point3::origin() + g.normalize() * r;
            }
        };
        let mut v = gauss().normalize() * (v_min + v_max) / 2.0;
        let mut raw = Vec::with_capacity(raw_len);
        for _ in 0..raw_len {
            raw.push(p);
            let pull = -(p.coords) / radius * 0.35 * res;
            v += gauss() * 0.5 * res + pull;
            let s = v.norm().clamp(v_min, v_max);
            v = v.normalize() * s;
            p += v;
        }
        let t = GroundTruthTrajectory::new(id, 0, raw);
        let mut t = upsample_double(&smooth_trajectory(&t, 7)?)?;
        t.positions.truncate(frames as usize);
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{blob_radius_px, occlusion_report};

    fn image_gap(rig: &Rig, view: usize, a: &WorldPoint, b: &WorldPoint) -> f64 {
        let c = &rig.cameras[view];
        (c.project(a).image().unwrap() - c.project(b).image().unwrap()).norm()
    }

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("fig4".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn fig1_layouts() {
        let opts = ScenarioOptions::default();
        let blob = blob_radius_px(1.5, 230.0, 15.0);
        for (kind, overlapping_views, far) in [
            (ScenarioKind::Fig1a, vec![], true),
            (ScenarioKind::Fig1b, vec![0, 2], true),
            (ScenarioKind::Fig1c, vec![0, 1, 2], false),
        ] {
            let s = Scenario::build(kind, &opts).unwrap();
            let (a, b) = (s.trajectories[0].positions[0], s.trajectories[1].positions[0]);
            let d = (a - b).norm() / s.resolution();
            assert_eq!(d >= 10.0, far, "{kind:?}: 3D gap {d}");
            for v in 0..3 {
                let g = image_gap(&s.scene.rig, v, &a, &b);
                assert_eq!(g < 2.0 * blob, overlapping_views.contains(&v), "{kind:?} view {v}: {g}px");
            }
        }
    }

    #[test]
    fn fig2_occludes_views_one_and_three_only() {
        let s = Scenario::build(ScenarioKind::Fig2, &ScenarioOptions::default()).unwrap();
        let res = s.resolution();
        let (a, b) = (&s.trajectories[0], &s.trajectories[1]);
        let min_gap = a.positions.iter().zip(&b.positions).map(|(p, q)| (p - q).norm()).fold(f64::MAX, f64::min);
        assert!(min_gap >= 10.0 * res, "3D gap {}", min_gap / res);
        let occ = occlusion_report(&s.trajectories, &s.scene.rig, 2.0 * blob_radius_px(1.5, 230.0, 15.0));
        assert!(occ[0].occluded_frames[0] > 0 && occ[0].occluded_frames[2] > 0);
        assert_eq!(occ[0].occluded_frames[1], 0);
        assert_eq!(occ[0].all_view_frames, 0);
    }

    #[test]
    fn fig3_is_close_for_three_frames() {
        let s = Scenario::build(ScenarioKind::Fig3, &ScenarioOptions::default()).unwrap();
        let res = s.resolution();
        let (a, b) = (&s.trajectories[0], &s.trajectories[1]);
        let close = a.positions.iter().zip(&b.positions).filter(|(p, q)| (*p - *q).norm() < 4.0 * res).count();
        assert_eq!(close, 3);
        let occ = occlusion_report(&s.trajectories, &s.scene.rig, 2.0 * blob_radius_px(1.5, 230.0, 15.0));
        assert!(occ[0].all_view_frames >= 3);
    }

    #[test]
    fn swarm_is_seeded_and_sized() {
        let opts = ScenarioOptions {
            seed: 9,
            ..Default::default()
        };
        let a = Scenario::build(ScenarioKind::Swarm, &opts).unwrap();
        let b = Scenario::build(ScenarioKind::Swarm, &opts).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.trajectories.len(), 42);
        assert_eq!(a.scene.frame_count, 200);
        assert!(a.trajectories.iter().all(|t| t.len() == 200));
        for t in &a.trajectories {
            for p in &t.positions {
                for c in &a.scene.rig.cameras {
                    assert!(c.contains(&c.project(p).image().unwrap()));
                }
            }
        }
    }
}

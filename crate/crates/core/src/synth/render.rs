use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{write_ground_truth, GroundTruthTrajectory, SynthError};
use crate::geometry::{write_rig, Rig, WorldPoint};
use crate::pnm::{frame_path, write_pgm, GrayImage};

/// Rendering parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Physical radius of the spheres (meters). Only the projected blur
    /// (`gaussian_sigma_px`) shapes the images.
    pub target_radius: f64,
    pub gaussian_sigma_px: f64,
    pub peak_intensity: u8,
    pub background_intensity: u8,
    /// Standard deviation of the additive sensor noise (gray levels).
    pub noise_sigma: f64,
    pub frame_count: u32,
    pub rig: Rig,
}

impl SceneConfig {
    pub fn with_rig(rig: Rig) -> Self {
        Self {
            target_radius: 0.005,
            gaussian_sigma_px: 1.5,
            peak_intensity: 230,
            background_intensity: 20,
            noise_sigma: 3.0,
            frame_count: 1,
            rig,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.peak_intensity <= self.background_intensity {
            return bad(format!(
                "peak intensity {} must exceed background {}",
                self.peak_intensity, self.background_intensity
            ));
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if !(self.gaussian_sigma_px > 0.0) {
            return bad(format!("gaussian sigma {} must be positive", self.gaussian_sigma_px));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        Ok(())
    }

    /// Blob contribution above background at `d2` squared pixels from the centre.
    #[inline]
    pub fn profile(&self, d2: f64) -> f64 {
        let s = self.gaussian_sigma_px;
        self.peak_intensity as f64 * (-d2 / (2.0 * s * s)).exp()
    }

    /// World size of the Gaussian blur (one sigma) at `at`, averaged over the
    /// three cameras. This is the natural length unit of a scene.
    pub fn blur_radius_world(&self, at: &WorldPoint) -> f64 {
        self.rig
            .cameras
            .iter()
            .map(|c| self.gaussian_sigma_px * c.pixel_footprint(c.depth(at)))
            .sum::<f64>()
            / 3.0
    }
}

/// Radius in pixels inside which a blob exceeds `threshold` gray levels
/// above background.
pub fn blob_radius_px(sigma_px: f64, peak: f64, threshold: f64) -> f64 {
    if peak <= threshold {
        return 0.0;
    }
    sigma_px * (2.0 * (peak / threshold).ln()).sqrt()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one frame of a scene.
pub fn frame_seed(scene_seed: u64, frame: u32) -> u64 {
    splitmix(splitmix(scene_seed) ^ frame as u64)
}

fn camera_seed(frame_seed: u64, view: usize) -> u64 {
    splitmix(frame_seed ^ (0xA5A5_0000 + view as u64))
}

/// Renders one frame in the three views. Each visible target is a Gaussian
/// blob; overlapping blobs combine by per-pixel maximum; sensor noise is
/// seeded per camera from `seed`.
pub fn render_frame(scene: &SceneConfig, positions: &[WorldPoint], seed: u64) -> [GrayImage; 3] {
    let sigma = scene.gaussian_sigma_px;
    let reach = sigma * (2.0 * (scene.peak_intensity as f64 / 1e-3).ln()).sqrt();
    std::array::from_fn(|view| {
        let cam = &scene.rig.cameras[view];
        let (w, h) = cam.sensor_size;
        let mut contrib = vec![0f64; w as usize * h as usize];
        for p in positions {
            let Some(c) = cam.project(p).image() else { continue };
            if !cam.contains(&c) {
                continue;
            }
            let x0 = (c.x - reach).floor().max(0.0) as u32;
            let x1 = ((c.x + reach).ceil() as u32).min(w - 1);
            let y0 = (c.y - reach).floor().max(0.0) as u32;
            let y1 = ((c.y + reach).ceil() as u32).min(h - 1);
            for y in y0..=y1 {
                let dy = y as f64 - c.y;
                let row = y as usize * w as usize;
                for x in x0..=x1 {
                    let dx = x as f64 - c.x;
                    let v = scene.profile(dx * dx + dy * dy);
                    let slot = &mut contrib[row + x as usize];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        let bg = scene.background_intensity as f64;
        let data = if scene.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, scene.noise_sigma).expect("finite sigma");
            let mut rng = ChaCha8Rng::seed_from_u64(camera_seed(seed, view));
            contrib
                .iter()
                .map(|c| (bg + c + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect()
        } else {
            contrib.iter().map(|c| (bg + c).round().clamp(0.0, 255.0) as u8).collect()
        };
        GrayImage { width: w, height: h, data }
    })
}

/// Files written by [`generate_scene`].
#[derive(Debug, Clone)]
pub struct SceneManifest {
    pub ground_truth: PathBuf,
    pub rig: PathBuf,
    pub images: PathBuf,
    /// Noise-free empty-scene plate per view, `cam{1,2,3}.pgm`.
    pub background: PathBuf,
    pub frame_count: u32,
}

pub fn positions_at(trajs: &[GroundTruthTrajectory], frame: u32) -> Vec<WorldPoint> {
    trajs.iter().filter_map(|t| t.at(frame).copied()).collect()
}

/// Writes the ground truth and rig, then renders every frame to
/// `<out>/images/cam{1,2,3}/frame_%06d.pgm`, plus an empty-scene plate
/// per view under `<out>/background`.
pub fn generate_scene(
    trajs: &[GroundTruthTrajectory],
    scene: &SceneConfig,
    seed: u64,
    out: &Path,
) -> Result<SceneManifest, SynthError> {
    scene.validate()?;
    for t in trajs {
        if let Some(last) = t.last_frame() {
            if last >= scene.frame_count {
                return Err(SynthError::InvalidScene(format!(
                    "trajectory {} ends at frame {last}, beyond frame_count {}",
                    t.target_id, scene.frame_count
                )));
            }
        }
        if t.positions.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(SynthError::InvalidScene(format!("trajectory {} has non-finite positions", t.target_id)));
        }
    }
    std::fs::create_dir_all(out)?;
    let manifest = SceneManifest {
        ground_truth: out.join("ground_truth.csv"),
        rig: out.join("rig.txt"),
        images: out.join("images"),
        background: out.join("background"),
        frame_count: scene.frame_count,
    };
    write_ground_truth(&manifest.ground_truth, trajs)?;
    write_rig(&manifest.rig, &scene.rig)?;
    let plate = SceneConfig {
        noise_sigma: 0.0,
        ..scene.clone()
    };
    for (view, img) in render_frame(&plate, &[], 0).iter().enumerate() {
        write_pgm(&manifest.background.join(format!("cam{}.pgm", view + 1)), img)?;
    }

    const CHUNK: u32 = 16;
    let mut start = 0;
    while start < scene.frame_count {
        let end = (start + CHUNK).min(scene.frame_count);
        let rendered: Vec<[GrayImage; 3]> = (start..end)
            .into_par_iter()
            .map(|f| render_frame(scene, &positions_at(trajs, f), frame_seed(seed, f)))
            .collect();
        for (f, imgs) in (start..end).zip(rendered) {
            for (view, img) in imgs.iter().enumerate() {
                write_pgm(&frame_path(&manifest.images, view, f, "pgm"), img)?;
            }
        }
        start = end;
    }
    Ok(manifest)
}

/// How often a target's image overlaps another target's image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetOcclusion {
    pub target_id: u32,
    pub occluded_frames: [u32; 3],
    /// Frames on which the target is occluded in all three views at once.
    pub all_view_frames: u32,
}

impl TargetOcclusion {
    pub fn ever_fully_occluded(&self) -> bool {
        self.all_view_frames > 0
    }
}

/// A target is occluded in a view when the projected centre of another
/// target lies within `occlusion_px` of its own.
pub fn occlusion_report(trajs: &[GroundTruthTrajectory], rig: &Rig, occlusion_px: f64) -> Vec<TargetOcclusion> {
    let first = trajs.iter().map(|t| t.first_frame).min().unwrap_or(0);
    let last = trajs.iter().filter_map(|t| t.last_frame()).max().unwrap_or(0);
    let mut report: Vec<TargetOcclusion> = trajs
        .iter()
        .map(|t| TargetOcclusion {
            target_id: t.target_id,
            occluded_frames: [0; 3],
            all_view_frames: 0,
        })
        .collect();
    let r2 = occlusion_px * occlusion_px;
    for f in first..=last {
        let proj: Vec<Option<[Option<nalgebra::Point2<f64>>; 3]>> = trajs
            .iter()
            .map(|t| t.at(f).map(|p| std::array::from_fn(|v| rig.cameras[v].project(p).image())))
            .collect();
        for (i, pi) in proj.iter().enumerate() {
            let Some(pi) = pi else { continue };
            let mut hit = [false; 3];
            for (j, pj) in proj.iter().enumerate() {
                let Some(pj) = pj else { continue };
                if i == j {
                    continue;
                }
                for v in 0..3 {
                    if let (Some(a), Some(b)) = (pi[v], pj[v]) {
                        if (a - b).norm_squared() < r2 {
                            hit[v] = true;
                        }
                    }
                }
            }
            for v in 0..3 {
                report[i].occluded_frames[v] += hit[v] as u32;
            }
            if hit.iter().all(|h| *h) {
                report[i].all_view_frames += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scenarios::default_rig;
    use nalgebra::Point3;

    fn quiet_scene() -> SceneConfig {
        SceneConfig {
            noise_sigma: 0.0,
            ..SceneConfig::with_rig(default_rig())
        }
    }

    #[test]
    fn empty_scene_is_flat_background() {
        let scene = quiet_scene();
        let imgs = render_frame(&scene, &[], 7);
        for img in &imgs {
            assert!(img.data.iter().all(|v| *v == scene.background_intensity));
        }
        let noisy = SceneConfig::with_rig(default_rig());
        let imgs = render_frame(&noisy, &[], 7);
        let mean = imgs[0].data.iter().map(|v| *v as f64).sum::<f64>() / imgs[0].data.len() as f64;
        assert!((mean - 20.0).abs() < 0.1);
    }

    #[test]
    fn on_axis_target_peaks_at_principal_point() {
        let scene = quiet_scene();
        let cam = &scene.rig.cameras[0];
        let pp = nalgebra::Point2::new(cam.principal_point.x, cam.principal_point.y);
        let on_axis = cam.backproject(&pp).at(5.0);
        let imgs = render_frame(&scene, &[on_axis], 1);
        let img = &imgs[0];
        let (idx, _) = img.data.iter().enumerate().max_by_key(|(i, v)| (**v, std::cmp::Reverse(*i))).unwrap();
        let (x, y) = (idx as u32 % img.width, idx as u32 / img.width);
        assert_eq!((x as f64, y as f64), (pp.x, pp.y));
        assert_eq!(img.get(x, y), scene.background_intensity + scene.peak_intensity);
    }

    #[test]
    fn rendering_is_seeded() {
        let scene = SceneConfig::with_rig(default_rig());
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(0.1, 0.05, -0.02)];
        assert_eq!(render_frame(&scene, &pts, 11), render_frame(&scene, &pts, 11));
        assert_ne!(render_frame(&scene, &pts, 11), render_frame(&scene, &pts, 12));
    }

    #[test]
    fn overlapping_blobs_do_not_exceed_single_peak() {
        let scene = quiet_scene();
        let p = Point3::new(0.01, 0.0, 0.0);
        let imgs = render_frame(&scene, &[p, p], 0);
        let max = *imgs[1].data.iter().max().unwrap();
        assert!(max <= scene.background_intensity + scene.peak_intensity);
    }

    /// Sub-pixel peak by a 1D quadratic fit through the brightest pixel and its neighbours.
    fn subpixel_peak(img: &GrayImage) -> (f64, f64) {
        let (idx, _) = img.data.iter().enumerate().max_by_key(|(_, v)| **v).unwrap();
        let (x, y) = (idx as u32 % img.width, idx as u32 / img.width);
        let fit = |a: f64, b: f64, c: f64| 0.5 * (a - c) / (a - 2.0 * b + c);
        let v = |x: u32, y: u32| img.get(x, y) as f64;
        (
            x as f64 + fit(v(x - 1, y), v(x, y), v(x + 1, y)),
            y as f64 + fit(v(x, y - 1), v(x, y), v(x, y + 1)),
        )
    }

    #[test]
    fn one_pixel_shift_moves_peak_one_pixel() {
        let mut scene = quiet_scene();
        scene.gaussian_sigma_px = 2.0;
        let cam = scene.rig.cameras[2].clone();
        let base = Point3::new(0.02, -0.03, 0.01);
        let depth = cam.depth(&base);
        let c0 = cam.project(&base).image().unwrap();
        // world displacement equal to one pixel along the camera's u axis
        let du = cam.rotation.row(0).transpose() * cam.pixel_footprint(depth);
        let moved = base + du;
        let c1 = cam.project(&moved).image().unwrap();
        assert!(((c1 - c0).norm() - 1.0).abs() < 1e-3);
        let a = subpixel_peak(&render_frame(&scene, &[base], 0)[2]);
        let b = subpixel_peak(&render_frame(&scene, &[moved], 0)[2]);
        assert!(((b.0 - a.0) - 1.0).abs() < 0.1, "{a:?} -> {b:?}");
        assert!((b.1 - a.1).abs() < 0.1);
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let mut s = quiet_scene();
        s.peak_intensity = 10;
        assert!(s.validate().is_err());
        let mut s = quiet_scene();
        s.frame_count = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn blob_radius_matches_profile() {
        let r = blob_radius_px(1.5, 230.0, 15.0);
        let scene = quiet_scene();
        assert!((scene.profile(r * r) - 15.0).abs() < 1e-9);
        assert_eq!(blob_radius_px(1.0, 10.0, 20.0), 0.0);
    }
}

//! Foreground extraction: per-pixel temporal median background, absolute
//! difference threshold, morphological opening and a minimum region size.

use std::collections::VecDeque;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnm::{frame_path, list_frames, read_pbm, read_pgm, write_pbm, BitMap, GrayImage, PnmError};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image is {got:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("empty background window")]
    EmptyWindow,
    #[error("invalid background parameters: {0}")]
    InvalidParams(String),
    #[error("no frames under {0}")]
    NoFrames(std::path::PathBuf),
    #[error("views have different frame lists")]
    FrameMismatch,
    #[error(transparent)]
    Pnm(#[from] PnmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundParams {
    /// Odd, at least 3.
    pub window_frames: usize,
    /// Gray levels; a pixel is foreground when its difference exceeds this.
    pub threshold: f64,
    pub denoise_radius: u32,
    pub min_component_px: usize,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            window_frames: 151,
            threshold: 120.0,
            denoise_radius: 1,
            min_component_px: 3,
        }
    }
}

impl BackgroundParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.window_frames < 3 || self.window_frames % 2 == 0 {
            return Err(ImagingError::InvalidParams(format!(
                "window_frames must be odd and >= 3, got {}",
                self.window_frames
            )));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(ImagingError::InvalidParams(format!("threshold must be > 0, got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub camera_index: usize,
    pub frame_index: u32,
    pub bits: BitMap,
}

fn check_dims(expected: (u32, u32), got: (u32, u32)) -> Result<(), ImagingError> {
    if expected != got {
        return Err(ImagingError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Per-pixel temporal median. Even-length windows take the upper median.
pub fn background_model(frames: &[&GrayImage]) -> Result<GrayImage, ImagingError> {
    let first = frames.first().ok_or(ImagingError::EmptyWindow)?;
    for f in frames {
        check_dims(first.dims(), f.dims())?;
    }
    let n = frames.len();
    let mut buf = vec![0u8; n];
    let data = (0..first.data.len())
        .map(|i| {
            for (slot, f) in buf.iter_mut().zip(frames) {
                *slot = f.data[i];
            }
            *buf.select_nth_unstable(n / 2).1
        })
        .collect();
    Ok(GrayImage {
        width: first.width,
        height: first.height,
        data,
    })
}

/// `background_model` over `window_bounds(t, len, window)` for every `t`,
/// maintained incrementally as a sorted window per pixel.
pub fn sliding_backgrounds(frames: &[GrayImage], window: usize) -> Result<Vec<GrayImage>, ImagingError> {
    let first = frames.first().ok_or(ImagingError::EmptyWindow)?;
    for f in frames {
        check_dims(first.dims(), f.dims())?;
    }
    let (len, n) = (frames.len(), first.data.len());
    let w = window.min(len);
    const CHUNK: usize = 4096;
    // per chunk: medians laid out frame-major within the chunk
    let chunks: Vec<Vec<u8>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let pixels = c * CHUNK..((c + 1) * CHUNK).min(n);
            let m = pixels.len();
            let mut out = vec![0u8; m * len];
            let mut sorted: Vec<u8> = Vec::with_capacity(w);
            for (k, i) in pixels.enumerate() {
                sorted.clear();
                sorted.extend(frames[..w].iter().map(|f| f.data[i]));
                sorted.sort_unstable();
                let mut start = 0;
                for t in 0..len {
                    let want = window_bounds(t, len, w).start;
                    while start < want {
                        let old = frames[start].data[i];
                        let pos = sorted.binary_search(&old).expect("value in window");
                        sorted.remove(pos);
                        let new = frames[start + w].data[i];
                        let pos = sorted.partition_point(|&v| v < new);
                        sorted.insert(pos, new);
                        start += 1;
                    }
                    out[t * m + k] = sorted[w / 2];
                }
            }
            out
        })
        .collect();
    let mut data = vec![vec![0u8; n]; len];
    for (c, chunk) in chunks.iter().enumerate() {
        let base = c * CHUNK;
        let m = chunk.len() / len;
        for (t, d) in data.iter_mut().enumerate() {
            d[base..base + m].copy_from_slice(&chunk[t * m..(t + 1) * m]);
        }
    }
    Ok(data
        .into_iter()
        .map(|data| GrayImage {
            width: first.width,
            height: first.height,
            data,
        })
        .collect())
}

/// Indices of the window centred on `t`, shifted to stay inside `0..len`.
pub fn window_bounds(t: usize, len: usize, window: usize) -> Range<usize> {
    let w = window.min(len);
    let start = t.saturating_sub(w / 2).min(len - w);
    start..start + w
}

/// Pixels whose absolute difference from the background exceeds `threshold`.
pub fn threshold_difference(frame: &GrayImage, background: &GrayImage, threshold: f64) -> Result<BitMap, ImagingError> {
    check_dims(background.dims(), frame.dims())?;
    Ok(BitMap {
        width: frame.width,
        height: frame.height,
        bits: frame
            .data
            .iter()
            .zip(&background.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs() > threshold)
            .collect(),
    })
}

fn disk(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion followed by dilation with a disk. Pixels outside the image count
/// as background.
pub fn opening(map: &BitMap, radius: u32) -> BitMap {
    if radius == 0 {
        return map.clone();
    }
    let se = disk(radius);
    let eroded: Vec<(u32, u32)> = map
        .pixels()
        .filter(|&(x, y)| se.iter().all(|&(dx, dy)| map.get(x as i64 + dx, y as i64 + dy)))
        .collect();
    let mut out = BitMap::new(map.width, map.height);
    for (x, y) in eroded {
        for &(dx, dy) in &se {
            // every dilated pixel lies inside the original set, hence in bounds
            out.set((x as i64 + dx) as u32, (y as i64 + dy) as u32, true);
        }
    }
    out
}

/// Drops 8-connected regions with fewer than `min_px` pixels.
pub fn remove_small_components(map: &BitMap, min_px: usize) -> BitMap {
    if min_px <= 1 {
        return map.clone();
    }
    let w = map.width as usize;
    let mut seen = vec![false; map.bits.len()];
    let mut out = map.clone();
    let mut queue = VecDeque::new();
    let mut region = Vec::new();
    for start in 0..map.bits.len() {
        if !map.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        region.clear();
        while let Some(i) = queue.pop_front() {
            region.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if map.get(nx, ny) {
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        if region.len() < min_px {
            for &i in &region {
                out.bits[i] = false;
            }
        }
    }
    out
}

pub fn extract_foreground(
    frame: &GrayImage,
    background: &GrayImage,
    params: &BackgroundParams,
) -> Result<BitMap, ImagingError> {
    params.validate()?;
    let raw = threshold_difference(frame, background, params.threshold)?;
    Ok(remove_small_components(&opening(&raw, params.denoise_radius), params.min_component_px))
}

/// Masks for one view's sequence. With a `plate`, every frame is compared
/// against it; otherwise frame `t` uses the sliding median window at `t`.
pub fn foreground_sequence(
    frames: &[GrayImage],
    params: &BackgroundParams,
    plate: Option<&GrayImage>,
) -> Result<Vec<BitMap>, ImagingError> {
    params.validate()?;
    if let Some(first) = frames.first() {
        for f in frames {
            check_dims(first.dims(), f.dims())?;
        }
    }
    if let Some(bg) = plate {
        return frames.par_iter().map(|f| extract_foreground(f, bg, params)).collect();
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let backgrounds = sliding_backgrounds(frames, params.window_frames)?;
    frames
        .par_iter()
        .zip(&backgrounds)
        .map(|(f, bg)| extract_foreground(f, bg, params))
        .collect()
}

/// Frame numbers shared by all three views under `root`.
pub fn common_frames(root: &Path, ext: &str) -> Result<Vec<u32>, ImagingError> {
    let frames = list_frames(root, 0, ext)?;
    for view in 1..3 {
        if list_frames(root, view, ext)? != frames {
            return Err(ImagingError::FrameMismatch);
        }
    }
    if frames.is_empty() {
        return Err(ImagingError::NoFrames(root.to_path_buf()));
    }
    Ok(frames)
}

/// Reads `<images>/cam{1,2,3}/frame_*.pgm`, writes P4 masks to the same
/// layout under `out`, and returns the frame numbers processed.
/// `plate_dir` holds optional `cam{1,2,3}.pgm` background plates.
pub fn run_foreground(
    images: &Path,
    out: &Path,
    params: &BackgroundParams,
    plate_dir: Option<&Path>,
) -> Result<Vec<u32>, ImagingError> {
    params.validate()?;
    let frames = common_frames(images, "pgm")?;
    for view in 0..3 {
        let seq: Vec<GrayImage> = frames
            .iter()
            .map(|&f| read_pgm(&frame_path(images, view, f, "pgm")))
            .collect::<Result<_, _>>()?;
        let plate = plate_dir
            .map(|d| read_pgm(&d.join(format!("cam{}.pgm", view + 1))))
            .transpose()?;
        let masks = foreground_sequence(&seq, params, plate.as_ref())?;
        for (&f, m) in frames.iter().zip(&masks) {
            write_pbm(&frame_path(out, view, f, "pbm"), m)?;
        }
        log::debug!("view {}: {} masks", view + 1, masks.len());
    }
    Ok(frames)
}

/// Reads the three masks of `frame` from a mask directory.
pub fn read_masks(root: &Path, frame: u32) -> Result<[ForegroundMask; 3], ImagingError> {
    let read = |view: usize| -> Result<ForegroundMask, ImagingError> {
        Ok(ForegroundMask {
            camera_index: view,
            frame_index: frame,
            bits: read_pbm(&frame_path(root, view, frame, "pbm"))?,
        })
    };
    Ok([read(0)?, read(1)?, read(2)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scenarios::default_rig;
    use crate::synth::{render_frame, SceneConfig};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn img(w: u32, h: u32, data: Vec<u8>) -> GrayImage {
        GrayImage { width: w, height: h, data }
    }

    #[test]
    fn median_of_static_window_is_the_frame() {
        let f = img(3, 2, vec![1, 2, 3, 4, 5, 6]);
        let win = vec![&f; 7];
        assert_eq!(background_model(&win).unwrap(), f);
    }

    #[test]
    fn median_ignores_brief_crossings() {
        let bg = GrayImage::filled(4, 4, 20);
        let mut hot = bg.clone();
        hot.data[5] = 250;
        let mut win = vec![&bg; 7];
        win.push(&hot);
        win.push(&hot);
        let m = background_model(&win).unwrap();
        // direct oracle: sort the nine samples of the crossed pixel
        let mut samples: Vec<u8> = win.iter().map(|f| f.data[5]).collect();
        samples.sort();
        assert_eq!(m.data[5], samples[4]);
        assert_eq!(m, bg);
    }

    #[test]
    fn median_rejects_mismatched_sizes() {
        let a = GrayImage::filled(4, 4, 0);
        let b = GrayImage::filled(4, 5, 0);
        assert!(matches!(background_model(&[&a, &b]), Err(ImagingError::DimensionMismatch { .. })));
        assert!(matches!(background_model(&[]), Err(ImagingError::EmptyWindow)));
        let p = BackgroundParams::default();
        assert!(extract_foreground(&a, &b, &p).is_err());
    }

    proptest! {
        #[test]
        fn sliding_medians_match_direct_medians(
            len in 1usize..12,
            window in (1usize..6).prop_map(|k| 2 * k + 1),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // few distinct values force ties
            let frames: Vec<GrayImage> = (0..len)
                .map(|_| img(5, 3, (0..15).map(|_| rng.random_range(0..4u8) * 60).collect()))
                .collect();
            let sliding = sliding_backgrounds(&frames, window).unwrap();
            for t in 0..len {
                let win: Vec<&GrayImage> = frames[window_bounds(t, len, window)].iter().collect();
                prop_assert_eq!(&sliding[t], &background_model(&win).unwrap());
            }
        }
    }

    #[test]
    fn window_is_clamped_inside_sequence() {
        assert_eq!(window_bounds(0, 100, 15), 0..15);
        assert_eq!(window_bounds(50, 100, 15), 43..58);
        assert_eq!(window_bounds(99, 100, 15), 85..100);
        assert_eq!(window_bounds(2, 5, 15), 0..5);
    }

    #[test]
    fn params_are_validated() {
        let ok = BackgroundParams::default();
        assert!(ok.validate().is_ok());
        for bad in [
            BackgroundParams { threshold: 0.0, ..ok.clone() },
            BackgroundParams { window_frames: 4, ..ok.clone() },
            BackgroundParams { window_frames: 1, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(ImagingError::InvalidParams(_))));
        }
    }

    #[test]
    fn opening_removes_specks_and_keeps_blobs() {
        let mut m = BitMap::new(20, 20);
        m.set(2, 2, true);
        for y in 8..14 {
            for x in 8..14 {
                m.set(x, y, true);
            }
        }
        let o = opening(&m, 1);
        assert!(!o.get(2, 2));
        assert!(o.get(10, 10));
        // opening is anti-extensive
        assert!(o.pixels().all(|(x, y)| m.get(x as i64, y as i64)));
    }

    #[test]
    fn size_filter_uses_eight_connectivity() {
        let mut m = BitMap::new(10, 10);
        // a diagonal chain of three is one region under 8-connectivity
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(3, 3, true);
        m.set(7, 7, true);
        let f = remove_small_components(&m, 3);
        assert_eq!(f.count(), 3);
        assert!(!f.get(7, 7));
    }

    fn quiet_scene() -> SceneConfig {
        SceneConfig {
            noise_sigma: 0.0,
            ..SceneConfig::with_rig(default_rig())
        }
    }

    #[test]
    fn noise_free_target_is_one_region_around_its_centre() {
        let scene = quiet_scene();
        let p = Point3::new(0.05, 0.1, -0.02);
        let bg = render_frame(&scene, &[], 0);
        let fg = render_frame(&scene, &[p], 0);
        for v in 0..3 {
            let m = extract_foreground(&fg[v], &bg[v], &BackgroundParams::default()).unwrap();
            let c = scene.rig.cameras[v].project(&p).image().unwrap();
            assert!(m.get(c.x.round() as i64, c.y.round() as i64));
            assert_eq!(remove_small_components(&m, m.count()).count(), m.count(), "single region");
        }
    }

    #[test]
    fn noise_rarely_survives() {
        // P(|N(0,3)| > 15) ~ 5.7e-7 per pixel, before opening
        let scene = SceneConfig::with_rig(default_rig());
        let params = BackgroundParams {
            threshold: 15.0,
            ..Default::default()
        };
        let bg = render_frame(&quiet_scene(), &[], 0);
        let mut stray = 0;
        let mut pixels = 0;
        for seed in 0..4 {
            let noisy = render_frame(&scene, &[], seed);
            for v in 0..3 {
                stray += extract_foreground(&noisy[v], &bg[v], &params).unwrap().count();
                pixels += noisy[v].data.len();
            }
        }
        assert!(stray as f64 / pixels as f64 * 1e6 <= 5.0, "{stray} stray pixels");
    }

    proptest! {
        #[test]
        fn raising_the_threshold_never_adds_pixels(
            data in proptest::collection::vec(any::<u8>(), 64),
            bgv in any::<u8>(),
            lo in 0.5f64..100.0,
            step in 0.0f64..100.0,
        ) {
            let f = img(8, 8, data);
            let bg = GrayImage::filled(8, 8, bgv);
            let a = threshold_difference(&f, &bg, lo).unwrap();
            let b = threshold_difference(&f, &bg, lo + step).unwrap();
            prop_assert!(b.bits.iter().zip(&a.bits).all(|(hi, lo)| !hi || *lo));
        }
    }

    #[test]
    fn sequence_run_writes_every_mask_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let scene = quiet_scene();
        let images = dir.path().join("images");
        for f in 0..5u32 {
            let p = Point3::new(-0.1 + 0.05 * f as f64, 0.0, 0.0);
            for (v, im) in render_frame(&scene, &[p], 0).iter().enumerate() {
                crate::pnm::write_pgm(&frame_path(&images, v, f, "pgm"), im).unwrap();
            }
        }
        let params = BackgroundParams::default();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        assert_eq!(run_foreground(&images, &a, &params, None).unwrap(), vec![0, 1, 2, 3, 4]);
        run_foreground(&images, &b, &params, None).unwrap();
        for f in 0..5 {
            for v in 0..3 {
                let pa = std::fs::read(frame_path(&a, v, f, "pbm")).unwrap();
                assert_eq!(pa, std::fs::read(frame_path(&b, v, f, "pbm")).unwrap());
            }
            assert!(read_masks(&a, f).unwrap().iter().all(|m| m.bits.count() > 0));
        }
    }
}

//! 8-bit grayscale images and binary masks, with the binary PGM (P5) and
//! PBM (P4) file formats.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    /// Row-major pixels.
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// A binary map, `true` for set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMap {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl BitMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set pixels as `(x, y)` in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PnmError + '_ {
    move |source| PnmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, message: impl Into<String>) -> PnmError {
    PnmError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_file(path: &Path, header: &str, body: &[u8]) -> Result<(), PnmError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    w.write_all(body).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), PnmError> {
    write_file(path, &format!("P5\n{} {}\n255\n", img.width, img.height), &img.data)
}

pub fn write_pbm(path: &Path, map: &BitMap) -> Result<(), PnmError> {
    let stride = (map.width as usize).div_ceil(8);
    let mut body = vec![0u8; stride * map.height as usize];
    for (x, y) in map.pixels() {
        body[y as usize * stride + x as usize / 8] |= 0x80 >> (x % 8);
    }
    write_file(path, &format!("P4\n{} {}\n", map.width, map.height), &body)
}

/// Reads whitespace-separated header tokens, skipping `#` comments. Leaves
/// the reader positioned after the single whitespace byte that ends the
/// last token.
fn header_tokens<R: BufRead>(r: &mut R, n: usize, path: &Path) -> Result<Vec<String>, PnmError> {
    let mut out = Vec::with_capacity(n);
    let mut cur = String::new();
    let mut byte = [0u8; 1];
    while out.len() < n {
        r.read_exact(&mut byte).map_err(io_err(path))?;
        let c = byte[0];
        if c == b'#' && cur.is_empty() {
            let mut sink = Vec::new();
            r.read_until(b'\n', &mut sink).map_err(io_err(path))?;
        } else if c.is_ascii_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c as char);
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>, PnmError> {
    Ok(BufReader::new(std::fs::File::open(path).map_err(io_err(path))?))
}

fn parse_dims(t: &[String], path: &Path) -> Result<(u32, u32), PnmError> {
    let w = t[1].parse::<u32>().map_err(|_| fmt_err(path, "bad width"))?;
    let h = t[2].parse::<u32>().map_err(|_| fmt_err(path, "bad height"))?;
    Ok((w, h))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PnmError> {
    let mut r = open(path)?;
    let t = header_tokens(&mut r, 4, path)?;
    if t[0] != "P5" {
        return Err(fmt_err(path, format!("expected P5, found {}", t[0])));
    }
    let (width, height) = parse_dims(&t, path)?;
    if t[3] != "255" {
        return Err(fmt_err(path, "only 8-bit images (maxval 255) are supported"));
    }
    let mut data = vec![0u8; width as usize * height as usize];
    r.read_exact(&mut data).map_err(io_err(path))?;
    Ok(GrayImage { width, height, data })
}

pub fn read_pbm(path: &Path) -> Result<BitMap, PnmError> {
    let mut r = open(path)?;
    let t = header_tokens(&mut r, 3, path)?;
    if t[0] != "P4" {
        return Err(fmt_err(path, format!("expected P4, found {}", t[0])));
    }
    let (width, height) = parse_dims(&t, path)?;
    let stride = (width as usize).div_ceil(8);
    let mut body = vec![0u8; stride * height as usize];
    r.read_exact(&mut body).map_err(io_err(path))?;
    let mut map = BitMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            if body[y as usize * stride + x as usize / 8] & (0x80 >> (x % 8)) != 0 {
                map.set(x, y, true);
            }
        }
    }
    Ok(map)
}

/// `<root>/cam<view+1>/frame_<frame>.<ext>`
pub fn frame_path(root: &Path, view: usize, frame: u32, ext: &str) -> PathBuf {
    root.join(format!("cam{}", view + 1)).join(format!("frame_{frame:06}.{ext}"))
}

/// Frame numbers present in `<root>/cam<view+1>/`, sorted.
pub fn list_frames(root: &Path, view: usize, ext: &str) -> Result<Vec<u32>, PnmError> {
    let dir = root.join(format!("cam{}", view + 1));
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
        let entry = entry.map_err(io_err(&dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(&format!(".{ext}")))
            .and_then(|s| s.parse::<u32>().ok())
        {
            frames.push(n);
        }
    }
    frames.sort_unstable();
    Ok(frames)
}

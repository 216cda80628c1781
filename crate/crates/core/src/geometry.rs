//! Pinhole camera algebra for a three-camera rig.
//!
//! Cameras map world points to pixels with `x ~ K (R X + t)`. Pixel centres
//! sit on integer coordinates. The trifocal tensor and the fundamental
//! matrices are computed in closed form from the camera matrices, never
//! estimated from correspondences.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point2, Point3, RowVector4, Unit, Vector2, Vector3};
use thiserror::Error;

/// A point in world coordinates (meters).
pub type WorldPoint = Point3<f64>;

/// A point on a sensor (pixels, `u` along columns, `v` along rows).
pub type ImagePoint = Point2<f64>;

/// Homogeneous image line `(a, b, c)` with `a u + b v + c = 0`.
pub type Line2 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("camera centres are collinear (sine of spread angle {0:e})")]
    DegenerateConfiguration(f64),
    #[error("trifocal transfer is rank-deficient for this point pair")]
    UnstableTransfer,
    #[error("point coincides with the epipole; its epipolar line is undefined")]
    DegenerateEpipolarLine,
    #[error("viewing rays are parallel")]
    ParallelRays,
    #[error("need at least two rays to triangulate, got {0}")]
    NotEnoughRays(usize),
    #[error("view index {0} out of range")]
    BadView(usize),
    #[error("rig file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerical thresholds for the degenerate cases. Overridable per run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Minimum sine of the angle spanned by the three camera centres.
    pub collinear: f64,
    /// Minimum angle (radians) between two rays for them to count as distinct.
    pub parallel_rad: f64,
    /// Minimum relative magnitude of a transferred homogeneous point.
    pub transfer: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            collinear: 1e-9,
            parallel_rad: 1e-9,
            transfer: 1e-9,
        }
    }
}

/// A back-projected viewing ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: WorldPoint,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn at(&self, s: f64) -> WorldPoint {
        self.origin + self.direction.into_inner() * s
    }

    /// Euclidean distance from `p` to the infinite line carrying the ray.
    pub fn distance_to(&self, p: &WorldPoint) -> f64 {
        let d = p - self.origin;
        (d - self.direction.into_inner() * d.dot(&self.direction)).norm()
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Image(ImagePoint),
    /// The point has non-positive depth in the camera frame.
    BehindCamera,
}

impl Projection {
    pub fn image(self) -> Option<ImagePoint> {
        match self {
            Projection::Image(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

/// Ideal pinhole camera with square pixels and no skew.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal_length_px: f64,
    pub principal_point: Vector2<f64>,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation (meters).
    pub translation: Vector3<f64>,
    /// Sensor width and height in pixels.
    pub sensor_size: (u32, u32),
}

impl CameraModel {
    pub fn new(
        focal_length_px: f64,
        principal_point: Vector2<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        sensor_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            focal_length_px,
            principal_point,
            rotation,
            translation,
            sensor_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` looking at `target`, with `up` projecting to the
    /// negative `v` direction. The principal point is the pixel at the
    /// sensor centre.
    pub fn look_at(
        center: WorldPoint,
        target: WorldPoint,
        up: Vector3<f64>,
        focal_length_px: f64,
        sensor_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let forward = (target - center).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(GeometryError::InvalidCamera(
                "up vector is parallel to the viewing direction".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center.coords);
        let principal_point = Vector2::new((sensor_size.0 / 2) as f64, (sensor_size.1 / 2) as f64);
        Self::new(focal_length_px, principal_point, rotation, translation, sensor_size)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let err = |m: String| Err(GeometryError::InvalidCamera(m));
        if !(self.focal_length_px > 0.0 && self.focal_length_px.is_finite()) {
            return err(format!("focal length {} must be positive", self.focal_length_px));
        }
        let (w, h) = self.sensor_size;
        if w == 0 || h == 0 {
            return err(format!("sensor size {w}x{h} must be non-zero"));
        }
        let pp = self.principal_point;
        if !(pp.x >= 0.0 && pp.y >= 0.0 && pp.x <= w as f64 && pp.y <= h as f64) {
            return err(format!("principal point ({}, {}) outside sensor", pp.x, pp.y));
        }
        let defect = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(defect < 1e-9) {
            return err(format!("rotation is not orthonormal (defect {defect:e})"));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return err("translation is not finite".into());
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let f = self.focal_length_px;
        let pp = self.principal_point;
        Matrix3::new(f, 0.0, pp.x, 0.0, f, pp.y, 0.0, 0.0, 1.0)
    }

    /// The 3×4 camera matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics() * rt
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> WorldPoint {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Depth of `p` along the optical axis.
    pub fn depth(&self, p: &WorldPoint) -> f64 {
        (self.rotation * p.coords + self.translation).z
    }

    pub fn project(&self, p: &WorldPoint) -> Projection {
        let c = self.rotation * p.coords + self.translation;
        if !(c.z > 0.0) {
            return Projection::BehindCamera;
        }
        let f = self.focal_length_px;
        Projection::Image(Point2::new(
            f * c.x / c.z + self.principal_point.x,
            f * c.y / c.z + self.principal_point.y,
        ))
    }

    pub fn backproject(&self, p: &ImagePoint) -> Ray {
        let f = self.focal_length_px;
        let dir_cam = Vector3::new(
            (p.x - self.principal_point.x) / f,
            (p.y - self.principal_point.y) / f,
            1.0,
        );
        Ray {
            origin: self.center(),
            direction: Unit::new_normalize(self.rotation.transpose() * dir_cam),
        }
    }

    /// Whether `p` falls on the sensor (pixel centres at integer coordinates).
    pub fn contains(&self, p: &ImagePoint) -> bool {
        let (w, h) = self.sensor_size;
        p.x >= -0.5 && p.y >= -0.5 && p.x < w as f64 - 0.5 && p.y < h as f64 - 0.5
    }

    /// Size in meters of one pixel at depth `depth`.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        depth / self.focal_length_px
    }
}

/// The three cameras of the acquisition system.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub cameras: [CameraModel; 3],
}

impl Rig {
    pub fn new(cameras: [CameraModel; 3]) -> Result<Self, GeometryError> {
        for c in &cameras {
            c.validate()?;
        }
        Ok(Self { cameras })
    }

    pub fn camera(&self, view: usize) -> Result<&CameraModel, GeometryError> {
        self.cameras.get(view).ok_or(GeometryError::BadView(view))
    }

    pub fn trifocal(&self) -> Result<TrifocalTensor, GeometryError> {
        self.trifocal_with(&Tolerances::default())
    }

    pub fn trifocal_with(&self, tol: &Tolerances) -> Result<TrifocalTensor, GeometryError> {
        let [c1, c2, c3] = &self.cameras;
        compute_trifocal(c1, c2, c3, tol)
    }

    /// Fundamental matrix `F` with `x_to^T F x_from = 0`.
    pub fn fundamental(&self, from: usize, to: usize) -> Result<Matrix3<f64>, GeometryError> {
        if from == to {
            return Err(GeometryError::BadView(to));
        }
        Ok(fundamental_matrix(
            &self.camera(from)?.projection_matrix(),
            &self.camera(to)?.projection_matrix(),
        ))
    }

    /// Epipolar line in `to` of the pixel `p` seen in `from`, scaled so that
    /// `|l . (u, v, 1)|` is the point-line distance in pixels.
    pub fn epipolar_line(&self, from: usize, p: &ImagePoint, to: usize) -> Result<Line2, GeometryError> {
        epipolar_line(&self.fundamental(from, to)?, p)
    }

    /// Triangulates one pixel per view and reports the RMS reprojection error.
    pub fn triangulate(&self, pixels: &[ImagePoint; 3]) -> Result<Triangulation, GeometryError> {
        triangulate_views(&self.cameras, pixels, &Tolerances::default())
    }
}

/// Three-view tensor `T_i^{jk}` stored as three 3×3 slices, plus the
/// fundamental matrix from view 1 to view 2 that point transfer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrifocalTensor {
    pub slices: [Matrix3<f64>; 3],
    pub f21: Matrix3<f64>,
    tolerance: f64,
}

fn row4(p: &Matrix3x4<f64>, r: usize) -> RowVector4<f64> {
    p.row(r).into_owned()
}

fn det_rows(rows: [RowVector4<f64>; 4]) -> f64 {
    Matrix4::from_rows(&rows).determinant()
}

/// Closed-form tensor from three camera matrices: the `(i, j, k)` entry is
/// `(-1)^(i+1) det[a^~i; b^j; c^k]` where `a^~i` is camera 1 with row `i`
/// removed and `b^j`, `c^k` are rows of cameras 2 and 3.
pub fn compute_trifocal(
    c1: &CameraModel,
    c2: &CameraModel,
    c3: &CameraModel,
    tol: &Tolerances,
) -> Result<TrifocalTensor, GeometryError> {
    let (o1, o2, o3) = (c1.center(), c2.center(), c3.center());
    let (u, v) = (o2 - o1, o3 - o1);
    let scale = u.norm() * v.norm();
    let spread = if scale > 0.0 { u.cross(&v).norm() / scale } else { 0.0 };
    if !(spread > tol.collinear) {
        return Err(GeometryError::DegenerateConfiguration(spread));
    }

    let (a, b, c) = (c1.projection_matrix(), c2.projection_matrix(), c3.projection_matrix());
    let mut slices = [Matrix3::zeros(); 3];
    for (i, slice) in slices.iter_mut().enumerate() {
        let kept: Vec<usize> = (0..3).filter(|&r| r != i).collect();
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..3 {
            for k in 0..3 {
                slice[(j, k)] = sign
                    * det_rows([row4(&a, kept[0]), row4(&a, kept[1]), row4(&b, j), row4(&c, k)]);
            }
        }
    }
    // Overall scale is arbitrary; normalising keeps the transfer thresholds meaningful.
    let norm = slices.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
    for s in &mut slices {
        *s /= norm;
    }
    let f21 = fundamental_matrix(&a, &b);
    Ok(TrifocalTensor {
        slices,
        f21,
        tolerance: tol.transfer,
    })
}

/// Fundamental matrix from two camera matrices, `x2^T F x1 = 0`, with
/// `F[(j, i)] = (-1)^(i+j) det[a^~i; b^~j]`.
pub fn fundamental_matrix(p1: &Matrix3x4<f64>, p2: &Matrix3x4<f64>) -> Matrix3<f64> {
    let mut f = Matrix3::zeros();
    for i in 0..3 {
        let ka: Vec<usize> = (0..3).filter(|&r| r != i).collect();
        for j in 0..3 {
            let kb: Vec<usize> = (0..3).filter(|&r| r != j).collect();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            f[(j, i)] = sign
                * det_rows([row4(p1, ka[0]), row4(p1, ka[1]), row4(p2, kb[0]), row4(p2, kb[1])]);
        }
    }
    let m = f.abs().max();
    if m > 0.0 {
        f /= m;
    }
    f
}

/// Homogeneous vector scaled so its largest-magnitude component is 1.
fn unit_max(v: Vector3<f64>) -> Vector3<f64> {
    let m = v.abs().max();
    if m > 0.0 {
        v / m
    } else {
        v
    }
}

fn homogeneous(p: &ImagePoint) -> Vector3<f64> {
    unit_max(Vector3::new(p.x, p.y, 1.0))
}

/// Epipolar line `F p`, normalised so `(a, b)` has unit length.
pub fn epipolar_line(f: &Matrix3<f64>, p: &ImagePoint) -> Result<Line2, GeometryError> {
    let x = homogeneous(p);
    let l = f * x;
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if !(n > 1e-12 * f.abs().max() * x.abs().max()) {
        return Err(GeometryError::DegenerateEpipolarLine);
    }
    Ok(l / n)
}

/// Signed distance in pixels from `p` to a line with unit `(a, b)`.
pub fn line_distance(l: &Line2, p: &ImagePoint) -> f64 {
    l.x * p.x + l.y * p.y + l.z
}

impl TrifocalTensor {
    /// Point transfer `x3^k = x1^i l2_j T_i^{jk}` where `l2` is the line
    /// through `p2` perpendicular to the epipolar line of `p1`.
    pub fn transfer(&self, p1: &ImagePoint, p2: &ImagePoint) -> Result<ImagePoint, GeometryError> {
        let le = epipolar_line(&self.f21, p1).map_err(|_| GeometryError::UnstableTransfer)?;
        let l2 = unit_max(Vector3::new(le.y, -le.x, -p2.x * le.y + p2.y * le.x));
        self.transfer_with_line(&homogeneous(p1), &l2)
    }

    /// Point-line-point transfer for an arbitrary line in view 2.
    pub fn transfer_with_line(&self, x1: &Vector3<f64>, l2: &Vector3<f64>) -> Result<ImagePoint, GeometryError> {
        let mut x3 = Vector3::zeros();
        for i in 0..3 {
            x3 += self.slices[i].transpose() * l2 * x1[i];
        }
        let scale = x1.norm() * l2.norm();
        let n = x3.norm();
        if !(n > self.tolerance * scale) || !(x3.z.abs() > self.tolerance * n) {
            return Err(GeometryError::UnstableTransfer);
        }
        Ok(Point2::new(x3.x / x3.z, x3.y / x3.z))
    }

    /// Algebraic residual of the point-line-line incidence for a triplet,
    /// using the horizontal and vertical lines through `p2` and `p3`.
    pub fn incidence_residual(&self, p1: &ImagePoint, p2: &ImagePoint, p3: &ImagePoint) -> f64 {
        let x1 = Vector3::new(p1.x, p1.y, 1.0);
        let l2s = [Vector3::new(1.0, 0.0, -p2.x), Vector3::new(0.0, 1.0, -p2.y)];
        let l3s = [Vector3::new(1.0, 0.0, -p3.x), Vector3::new(0.0, 1.0, -p3.y)];
        let mut worst: f64 = 0.0;
        for l2 in &l2s {
            for l3 in &l3s {
                let mut s = 0.0;
                for i in 0..3 {
                    s += x1[i] * (l2.transpose() * self.slices[i] * l3)[(0, 0)];
                }
                worst = worst.max(s.abs());
            }
        }
        worst
    }
}

/// Linear least-squares point closest to all rays (sum of squared
/// perpendicular distances).
pub fn triangulate_rays(rays: &[Ray], tol: &Tolerances) -> Result<WorldPoint, GeometryError> {
    if rays.len() < 2 {
        return Err(GeometryError::NotEnoughRays(rays.len()));
    }
    let d0 = rays[0].direction;
    let distinct = rays[1..].iter().any(|r| {
        let s = d0.cross(&r.direction).norm();
        s.atan2(d0.dot(&r.direction).abs()) > tol.parallel_rad
    });
    if !distinct {
        return Err(GeometryError::ParallelRays);
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for r in rays {
        let d = r.direction.into_inner();
        let m = Matrix3::identity() - d * d.transpose();
        a += m;
        b += m * r.origin.coords;
    }
    let x = a
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .ok_or(GeometryError::ParallelRays)?;
    Ok(Point3::from(x))
}

/// A triangulated point with its RMS reprojection error over the views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: WorldPoint,
    pub reprojection_error: f64,
    /// Largest single-view reprojection error.
    pub max_error: f64,
}

pub fn triangulate_views(
    cameras: &[CameraModel],
    pixels: &[ImagePoint],
    tol: &Tolerances,
) -> Result<Triangulation, GeometryError> {
    debug_assert_eq!(cameras.len(), pixels.len());
    let rays: Vec<Ray> = cameras.iter().zip(pixels).map(|(c, p)| c.backproject(p)).collect();
    let point = triangulate_rays(&rays, tol)?;
    let mut sum = 0.0;
    let mut max_error: f64 = 0.0;
    for (c, p) in cameras.iter().zip(pixels) {
        let e = match c.project(&point) {
            Projection::Image(q) => (q - p).norm(),
            Projection::BehindCamera => f64::INFINITY,
        };
        sum += e * e;
        max_error = max_error.max(e);
    }
    Ok(Triangulation {
        point,
        reprojection_error: (sum / pixels.len() as f64).sqrt(),
        max_error,
    })
}

// Rig files: one block per camera.
//
//   camera 1
//   focal_length_px 800
//   principal_point 319.5 239.5
//   rotation r00 r01 r02 r10 r11 r12 r20 r21 r22
//   translation tx ty tz
//   sensor_size 640 480
//
// Floats are printed in shortest round-trip form, so reading a written rig
// reproduces it bit for bit.

pub fn format_rig(rig: &Rig) -> String {
    let mut s = String::new();
    for (i, c) in rig.cameras.iter().enumerate() {
        let r = &c.rotation;
        let _ = writeln!(s, "camera {}", i + 1);
        let _ = writeln!(s, "focal_length_px {}", c.focal_length_px);
        let _ = writeln!(s, "principal_point {} {}", c.principal_point.x, c.principal_point.y);
        let _ = writeln!(
            s,
            "rotation {} {} {} {} {} {} {} {} {}",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]
        );
        let t = &c.translation;
        let _ = writeln!(s, "translation {} {} {}", t.x, t.y, t.z);
        let _ = writeln!(s, "sensor_size {} {}", c.sensor_size.0, c.sensor_size.1);
    }
    s
}

pub fn parse_rig(text: &str) -> Result<Rig, GeometryError> {
    #[derive(Default)]
    struct Partial {
        focal: Option<f64>,
        pp: Option<Vec<f64>>,
        rot: Option<Vec<f64>>,
        trans: Option<Vec<f64>>,
        sensor: Option<(u32, u32)>,
    }
    let perr = |line: usize, m: &str| GeometryError::Parse(format!("line {line}: {m}"));
    let mut blocks: Vec<Partial> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or_default();
        let vals: Vec<&str> = it.collect();
        let floats = || -> Result<Vec<f64>, GeometryError> {
            vals.iter()
                .map(|v| v.parse::<f64>().map_err(|_| perr(ln, &format!("bad number {v:?}"))))
                .collect()
        };
        if key == "camera" {
            blocks.push(Partial::default());
            continue;
        }
        let cur = blocks.last_mut().ok_or_else(|| perr(ln, "value before any `camera` line"))?;
        let want = |n: usize, v: Vec<f64>| {
            if v.len() == n {
                Ok(v)
            } else {
                Err(perr(ln, &format!("`{key}` expects {n} values, got {}", v.len())))
            }
        };
        match key {
            "focal_length_px" => cur.focal = Some(want(1, floats()?)?[0]),
            "principal_point" => cur.pp = Some(want(2, floats()?)?),
            "rotation" => cur.rot = Some(want(9, floats()?)?),
            "translation" => cur.trans = Some(want(3, floats()?)?),
            "sensor_size" => {
                let v: Vec<u32> = vals
                    .iter()
                    .map(|v| v.parse::<u32>().map_err(|_| perr(ln, &format!("bad size {v:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 2 {
                    return Err(perr(ln, "`sensor_size` expects 2 values"));
                }
                cur.sensor = Some((v[0], v[1]));
            }
            other => return Err(perr(ln, &format!("unknown key `{other}`"))),
        }
    }
    if blocks.len() != 3 {
        return Err(GeometryError::Parse(format!("expected 3 cameras, found {}", blocks.len())));
    }
    let mut cams = Vec::with_capacity(3);
    for (i, b) in blocks.into_iter().enumerate() {
        let missing = |f: &str| GeometryError::Parse(format!("camera {}: missing `{f}`", i + 1));
        let pp = b.pp.ok_or_else(|| missing("principal_point"))?;
        let rot = b.rot.ok_or_else(|| missing("rotation"))?;
        let t = b.trans.ok_or_else(|| missing("translation"))?;
        cams.push(CameraModel::new(
            b.focal.ok_or_else(|| missing("focal_length_px"))?,
            Vector2::new(pp[0], pp[1]),
            Matrix3::from_row_slice(&rot),
            Vector3::new(t[0], t[1], t[2]),
            b.sensor.ok_or_else(|| missing("sensor_size"))?,
        )?);
    }
    let cams: [CameraModel; 3] = cams.try_into().expect("three cameras");
    Rig::new(cams)
}

pub fn read_rig(path: &Path) -> Result<Rig, GeometryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::Parse(format!("{}: {e}", path.display())))?;
    parse_rig(&text)
}

pub fn write_rig(path: &Path, rig: &Rig) -> Result<(), GeometryError> {
    std::fs::write(path, format_rig(rig))?;
    Ok(())
}

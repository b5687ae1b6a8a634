//! Ground-truth scenes built from axis-aligned rectangles.
//!
//! World axes follow the camera convention of an upright camera looking down
//! the corridor: `x` right, `y` down, `z` forward. The scene raycasts 2D LiDAR
//! scans, renders a flat-shaded image with its exact edge set, and perturbs
//! poses by exact magnitudes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::config::{parse_entries, parse_floats, parse_value, read_text, ConfigError};
use crate::geometry::{project_world, CameraIntrinsics, Pixel, Point3, Pose};
use crate::imaging::{EdgeMap, GrayImage};
use crate::lidar_features::{FeatureSet, LidarFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// World coordinates spanning a plane normal to this axis.
    fn in_plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Rectangle in the plane `coord[axis] = offset`, spanning `lo..hi` in the
/// two remaining coordinates (in x, y, z order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub axis: Axis,
    pub offset: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub intensity: f64,
}

impl Patch {
    /// Ray parameter of the hit, if the ray crosses the rectangle ahead of `o`.
    pub fn intersect(&self, o: &Point3, d: &Vector3<f64>) -> Option<f64> {
        let a = self.axis.index();
        if d[a].abs() < 1e-15 {
            return None;
        }
        let t = (self.offset - o[a]) / d[a];
        if t <= 1e-9 {
            return None;
        }
        let (i, j) = self.axis.in_plane();
        let (pi, pj) = (o[i] + t * d[i], o[j] + t * d[j]);
        let inside = pi >= self.lo[0] && pi <= self.hi[0] && pj >= self.lo[1] && pj <= self.hi[1];
        inside.then_some(t)
    }

    fn point(&self, a: f64, b: f64) -> Point3 {
        let mut p = Point3::origin();
        let (i, j) = self.axis.in_plane();
        p[self.axis.index()] = self.offset;
        p[i] = a;
        p[j] = b;
        p
    }

    pub fn corners(&self) -> [Point3; 4] {
        [
            self.point(self.lo[0], self.lo[1]),
            self.point(self.hi[0], self.lo[1]),
            self.point(self.hi[0], self.hi[1]),
            self.point(self.lo[0], self.hi[1]),
        ]
    }
}

/// Planar 2D scanner: rays `cos(a) e1 + sin(a) e2` from `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPlane {
    pub origin: Point3,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl ScanPlane {
    /// Orthonormalizes the two axes; `None` when they are parallel.
    pub fn new(origin: Point3, e1: Vector3<f64>, e2: Vector3<f64>) -> Option<Self> {
        let e1 = e1.try_normalize(1e-12)?;
        let e2 = (e2 - e1 * e1.dot(&e2)).try_normalize(1e-9)?;
        Some(Self { origin, e1, e2 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub patches: Vec<Patch>,
    pub scans: Vec<ScanPlane>,
    /// World-to-camera poses the cases are drawn from.
    pub camera_poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub resolution_deg: f64,
    pub max_range: f64,
    pub background: f64,
    pub seed: u64,
}

/// World-to-camera pose of a camera at `center` turned by `yaw` about the
/// down axis and then by `pitch` about its right axis.
pub fn look_pose(center: Point3, yaw: f64, pitch: f64) -> Pose {
    let cam_to_world = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch);
    let r = cam_to_world.inverse();
    Pose::new(r, -(r * center.coords))
}

impl SceneSpec {
    pub fn empty(intrinsics: CameraIntrinsics) -> Self {
        Self {
            patches: Vec::new(),
            scans: Vec::new(),
            camera_poses: Vec::new(),
            intrinsics,
            resolution_deg: 0.1,
            max_range: 40.0,
            background: 0.0,
            seed: 0,
        }
    }

    pub fn add_patch(&mut self, axis: Axis, offset: f64, lo: [f64; 2], hi: [f64; 2], intensity: f64) {
        self.patches.push(Patch {
            axis,
            offset,
            lo,
            hi,
            intensity,
        });
    }

    /// Six faces of an axis-aligned box; `shades` are for the faces normal to
    /// x, y and z.
    pub fn add_box(&mut self, min: [f64; 3], max: [f64; 3], shades: [f64; 3]) {
        for (axis, shade) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(shades) {
            let a = axis.index();
            let (i, j) = axis.in_plane();
            for off in [min[a], max[a]] {
                self.add_patch(axis, off, [min[i], min[j]], [max[i], max[j]], shade);
            }
        }
    }

    /// Indoor corridor with wall-mounted boxes, a floor cabinet and flat door
    /// panels.
    pub fn corridor(seed: u64) -> Self {
        let intr = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).expect("valid intrinsics");
        let mut s = Self::empty(intr);
        s.seed = seed;
        let (xl, xr, yc, yf, z0, z1) = (-1.5, 1.5, -1.3, 1.4, -5.0, 25.0);

        s.add_patch(Axis::Y, yf, [xl, z0], [xr, z1], 15.0);
        s.add_patch(Axis::Y, yc, [xl, z0], [xr, z1], 35.0);
        s.add_patch(Axis::X, xl, [yc, z0], [yf, z1], 140.0);
        s.add_patch(Axis::X, xr, [yc, z0], [yf, z1], 125.0);
        s.add_patch(Axis::Z, z1, [xl, yc], [xr, yf], 250.0);
        s.add_patch(Axis::Z, z0, [xl, yc], [xr, yf], 200.0);

        let boxes: [([f64; 3], [f64; 3]); 10] = [
            ([xl, 0.8, 2.6], [-1.15, yf, 3.1]),
            ([1.1, yc, 2.8], [xr, -0.85, 3.3]),
            ([-0.3, yc, 3.0], [0.3, -1.05, 3.3]),
            ([xl, -0.3, 3.5], [-1.1, 0.6, 4.8]),
            ([1.1, 0.2, 5.0], [xr, yf, 6.2]),
            ([xl, yc, 7.5], [-1.05, -0.5, 8.7]),
            ([1.15, -0.8, 9.5], [xr, 0.1, 10.4]),
            ([-0.45, 0.7, 12.0], [0.35, yf, 12.8]),
            ([xl, 0.3, 14.5], [-1.1, yf, 15.5]),
            ([1.05, yc, 16.5], [xr, -0.4, 17.6]),
        ];
        for (lo, hi) in boxes {
            s.add_box(lo, hi, [55.0, 180.0, 235.0]);
        }
        // flat panels a hair in front of the walls: image edges without depth steps
        s.add_patch(Axis::X, xl + 0.002, [-0.8, 10.5], [yf, 11.6], 230.0);
        s.add_patch(Axis::X, xr - 0.002, [-0.8, 13.0], [yf, 14.1], 220.0);

        let mut z = 0.5;
        while z < 24.0 {
            s.scans.push(ScanPlane::new(Point3::new(0.0, 0.0, z), Vector3::x(), Vector3::y()).unwrap());
            z += 0.2;
        }
        for (zs, step) in [(-2.0, 0.1), (6.5, 0.25), (13.0, 0.25)] {
            let mut y = -1.2;
            while y < 1.35 {
                s.scans.push(ScanPlane::new(Point3::new(0.0, y, zs), Vector3::z(), Vector3::x()).unwrap());
                y += step;
            }
        }
        for (zs, tilt) in [(0.0, 12.0f64), (0.0, -12.0), (8.0, 20.0), (8.0, -20.0)] {
            let t = tilt.to_radians();
            let e1 = Vector3::new(0.0, t.sin(), t.cos());
            s.scans.push(ScanPlane::new(Point3::new(0.0, 0.0, zs), e1, Vector3::x()).unwrap());
        }

        for k in 0..8 {
            let f = k as f64;
            let center = Point3::new(0.25 * (0.9 * f).sin(), -0.1 + 0.05 * (1.3 * f).cos(), 0.25 * f);
            let yaw = (4.0 * (0.7 * f + 0.3).sin()).to_radians();
            let pitch = (2.0 * (1.1 * f).cos()).to_radians();
            s.camera_poses.push(look_pose(center, yaw, pitch));
        }
        s
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, p) in self.patches.iter().enumerate() {
            let ok = [p.offset, p.lo[0], p.lo[1], p.hi[0], p.hi[1], p.intensity]
                .iter()
                .all(|v| v.is_finite());
            if !ok || p.hi[0] <= p.lo[0] || p.hi[1] <= p.lo[1] {
                return Err(format!("patch {i} is degenerate"));
            }
        }
        if !(self.resolution_deg > 0.0 && self.resolution_deg <= 90.0) {
            return Err(format!("lidar.resolution_deg out of range: {}", self.resolution_deg));
        }
        if !(self.max_range > 0.0) {
            return Err(format!("lidar.max_range must be positive: {}", self.max_range));
        }
        self.intrinsics.validate().map_err(|e| e.to_string())
    }

    /// Nearest patch hit: `(t, patch index)`; ties go to the lower index.
    pub fn raycast(&self, o: &Point3, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, p) in self.patches.iter().enumerate() {
            if let Some(t) = p.intersect(o, d) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, k));
                }
            }
        }
        best
    }

    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &self.patches {
            for c in p.corners() {
                lo = lo.inf(&c);
                hi = hi.sup(&c);
            }
        }
        self.patches.first().map(|_| (lo, hi))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    /// Reads the scene text format written by [`SceneSpec::to_ini`].
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let mut intr = None;
        let mut s = Self::empty(CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            u0: 0.0,
            v0: 0.0,
            width: 1,
            height: 1,
        });
        let bad = |line: usize, msg: String| ConfigError::Parse {
            file: source.to_owned(),
            line,
            msg,
        };
        for e in parse_entries(text, source)? {
            match e.key.as_str() {
                "seed" => s.seed = parse_value(&e, source)?,
                "lidar.resolution_deg" => s.resolution_deg = parse_value(&e, source)?,
                "lidar.max_range" => s.max_range = parse_value(&e, source)?,
                "render.background" => s.background = parse_value(&e, source)?,
                "camera.intrinsics" => intr = Some(parse_value::<CameraIntrinsics>(&e, source)?),
                "camera.pose" => s.camera_poses.push(parse_value(&e, source)?),
                "lidar.scan" => {
                    let v = parse_floats(&e, source, 9)?;
                    let scan = ScanPlane::new(
                        Point3::new(v[0], v[1], v[2]),
                        Vector3::new(v[3], v[4], v[5]),
                        Vector3::new(v[6], v[7], v[8]),
                    )
                    .ok_or_else(|| bad(e.line, "scan axes are parallel".into()))?;
                    s.scans.push(scan);
                }
                "patch" => {
                    let (axis_tok, rest) = e
                        .value
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| bad(e.line, "patch: expected axis and 6 numbers".into()))?;
                    let axis = match axis_tok {
                        "x" => Axis::X,
                        "y" => Axis::Y,
                        "z" => Axis::Z,
                        other => return Err(bad(e.line, format!("patch: unknown axis {other:?}"))),
                    };
                    let sub = crate::config::Entry {
                        value: rest.trim().to_owned(),
                        ..e.clone()
                    };
                    let v = parse_floats(&sub, source, 6)?;
                    s.add_patch(axis, v[0], [v[1], v[3]], [v[2], v[4]], v[5]);
                }
                other => return Err(bad(e.line, format!("unknown key {other}"))),
            }
        }
        s.intrinsics = intr.ok_or_else(|| ConfigError::Missing {
            file: source.to_owned(),
            key: "camera.intrinsics".into(),
        })?;
        s.validate().map_err(|msg| ConfigError::Invalid {
            file: source.to_owned(),
            msg,
        })?;
        Ok(s)
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "camera.intrinsics = {}", self.intrinsics);
        let _ = writeln!(out, "lidar.resolution_deg = {:?}", self.resolution_deg);
        let _ = writeln!(out, "lidar.max_range = {:?}", self.max_range);
        let _ = writeln!(out, "render.background = {:?}", self.background);
        out.push_str("# patch = axis offset a_min a_max b_min b_max intensity\n");
        for p in &self.patches {
            let _ = writeln!(
                out,
                "patch = {} {:?} {:?} {:?} {:?} {:?} {:?}",
                p.axis.name(),
                p.offset,
                p.lo[0],
                p.hi[0],
                p.lo[1],
                p.hi[1],
                p.intensity
            );
        }
        out.push_str("# lidar.scan = origin e1 e2\n");
        for sc in &self.scans {
            let _ = writeln!(
                out,
                "lidar.scan = {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                sc.origin.x, sc.origin.y, sc.origin.z, sc.e1.x, sc.e1.y, sc.e1.z, sc.e2.x, sc.e2.y, sc.e2.z
            );
        }
        for p in &self.camera_poses {
            let _ = writeln!(out, "camera.pose = {p}");
        }
        out
    }
}

/// Seeded generator for one purpose of one case.
fn case_rng(scene_seed: u64, case_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ case_seed);
    rng.set_stream(stream);
    rng
}

/// One frame per scan plane, points in increasing angle, misses omitted.
/// With `range_noise > 0` each range gets Gaussian noise from `rng`.
pub fn raycast_frames_with_noise(spec: &SceneSpec, range_noise: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<LidarFrame> {
    let steps = (360.0 / spec.resolution_deg).round() as usize;
    let mut frames: Vec<(LidarFrame, Vec<f64>)> = spec
        .scans
        .par_iter()
        .enumerate()
        .map(|(id, sc)| {
            let mut pts = Vec::new();
            let mut ranges = Vec::new();
            for k in 0..steps {
                let a = (k as f64 * spec.resolution_deg).to_radians();
                let d = sc.e1 * a.cos() + sc.e2 * a.sin();
                if let Some((t, _)) = spec.raycast(&sc.origin, &d) {
                    if t <= spec.max_range {
                        pts.push(sc.origin + d * t);
                        ranges.push(t);
                    }
                }
            }
            (LidarFrame::new(id as u32, pts), ranges)
        })
        .collect();
    if let (Some(rng), true) = (rng, range_noise > 0.0) {
        let normal = Normal::new(0.0, range_noise).expect("finite sigma");
        for ((frame, ranges), sc) in frames.iter_mut().zip(&spec.scans) {
            for (p, r) in frame.points.iter_mut().zip(ranges.iter()) {
                let dir = (*p - sc.origin) / *r;
                *p += dir * normal.sample(rng);
            }
        }
    }
    frames.into_iter().map(|(f, _)| f).collect()
}

pub fn raycast_frames(spec: &SceneSpec) -> Vec<LidarFrame> {
    raycast_frames_with_noise(spec, 0.0, None)
}

/// Flat-shaded rendering, one ray through each pixel centre.
fn render_ids(spec: &SceneSpec, pose: &Pose, intr: &CameraIntrinsics) -> Vec<Option<usize>> {
    let inv = pose.inverse();
    let origin = pose.camera_center();
    (0..intr.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let inv = inv;
            (0..intr.width).map(move |x| {
                let ray_cam = intr.ray(&Pixel::new(x as f64, y as f64));
                let d = inv.rotation() * ray_cam;
                spec.raycast(&origin, &d).map(|(_, k)| k)
            })
        })
        .collect()
}

fn shade_at(spec: &SceneSpec, origin: &Point3, inv: &Pose, intr: &CameraIntrinsics, px: &Pixel) -> f64 {
    let d = inv.rotation() * intr.ray(px);
    spec.raycast(origin, &d)
        .map_or(spec.background, |(_, k)| spec.patches[k].intensity)
}

/// Cells crossed by visible patch boundaries that separate two intensities.
///
/// Each boundary is clipped to the front of the camera and sampled at quarter
/// pixel spacing; a sample counts when nothing occludes it and the rendered
/// intensity is not constant on a 0.3 px circle around it. The marked cell is the 2×2 stencil
/// cell whose centre lies within half a pixel of the sample.
pub fn analytic_edges(spec: &SceneSpec, pose: &Pose, intr: &CameraIntrinsics) -> EdgeMap {
    const NEAR: f64 = 0.05;
    let (w, h) = (intr.width, intr.height);
    let inv = pose.inverse();
    let origin = pose.camera_center();
    let segments: Vec<(Point3, Point3)> = spec
        .patches
        .iter()
        .flat_map(|p| {
            let c = p.corners();
            (0..4).map(move |i| (c[i], c[(i + 1) % 4]))
        })
        .collect();
    let cells: Vec<(usize, usize)> = segments
        .par_iter()
        .flat_map_iter(|&(a, b)| {
            let mut out = Vec::new();
            let (ca, cb) = (pose.transform(&a), pose.transform(&b));
            if ca.z < NEAR && cb.z < NEAR {
                return out;
            }
            // clip the world segment to the part in front of the near plane
            let mut s0 = 0.0;
            let mut s1 = 1.0;
            if ca.z < NEAR {
                s0 = (NEAR - ca.z) / (cb.z - ca.z);
            } else if cb.z < NEAR {
                s1 = (NEAR - ca.z) / (cb.z - ca.z);
            }
            let at = |s: f64| a + (b - a) * s;
            let (Ok(pa), Ok(pb)) = (project_world(intr, pose, &at(s0)), project_world(intr, pose, &at(s1))) else {
                return out;
            };
            let len_px = ((pb.pixel.u - pa.pixel.u).powi(2) + (pb.pixel.v - pa.pixel.v).powi(2)).sqrt();
            let n = (len_px * 4.0).ceil().min(1e6) as usize + 1;
            for k in 0..=n {
                let s = s0 + (s1 - s0) * k as f64 / n as f64;
                let p = at(s);
                let Ok(proj) = project_world(intr, pose, &p) else { continue };
                let (u, v) = (proj.pixel.u, proj.pixel.v);
                if u < 0.0 || v < 0.0 || u >= (w - 1) as f64 || v >= (h - 1) as f64 {
                    continue;
                }
                let to = p - origin;
                let dist = to.norm();
                let occluded = spec
                    .raycast(&origin, &(to / dist))
                    .is_some_and(|(t, _)| t < dist * (1.0 - 1e-9));
                if occluded {
                    continue;
                }
                let probe = |k: usize| {
                    let a = k as f64 * PI / 4.0;
                    shade_at(spec, &origin, &inv, intr, &Pixel::new(u + 0.3 * a.cos(), v + 0.3 * a.sin()))
                };
                let first = probe(0);
                if (1..8).any(|k| probe(k) != first) {
                    out.push((u.floor() as usize, v.floor() as usize));
                }
            }
            out
        })
        .collect();
    EdgeMap::from_pixels(w, h, &cells).with_offset(0.5)
}

/// Rendered image plus its analytic edge set (see [`analytic_edges`]).
pub fn render_edges(spec: &SceneSpec, pose: &Pose, intr: &CameraIntrinsics) -> (GrayImage, EdgeMap) {
    let ids = render_ids(spec, pose, intr);
    let (w, h) = (intr.width, intr.height);
    let shade = |k: Option<usize>| k.map_or(spec.background, |k| spec.patches[k].intensity);
    let img = GrayImage::from_fn(w, h, |x, y| shade(ids[y * w + x]));
    (img, analytic_edges(spec, pose, intr))
}

/// Adds Gaussian noise and re-quantizes to 8-bit levels.
pub fn add_image_noise(img: &GrayImage, sigma: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let data = img
        .data()
        .iter()
        .map(|v| (v + if sigma > 0.0 { normal.sample(rng) } else { 0.0 }).round().clamp(0.0, 255.0))
        .collect();
    GrayImage::from_vec(img.width(), img.height(), data).expect("same size")
}

/// Patch corners seen by the camera, as pixels.
pub fn visible_corners(spec: &SceneSpec, pose: &Pose, intr: &CameraIntrinsics) -> Vec<Pixel> {
    let origin = pose.camera_center();
    let mut out = Vec::new();
    for p in &spec.patches {
        for c in p.corners() {
            let Ok(proj) = project_world(intr, pose, &c) else {
                continue;
            };
            let inside = proj.pixel.u >= 1.0
                && proj.pixel.v >= 1.0
                && proj.pixel.u <= intr.width as f64 - 2.0
                && proj.pixel.v <= intr.height as f64 - 2.0;
            if !inside {
                continue;
            }
            let to = c - origin;
            let dist = to.norm();
            let hidden = spec
                .raycast(&origin, &(to / dist))
                .is_some_and(|(t, _)| t < dist * (1.0 - 1e-6));
            if !hidden {
                out.push(proj.pixel);
            }
        }
    }
    out
}

/// Fraction of `truth` cells with a `found` cell within `tol` cells (chessboard).
pub fn edge_recall(truth: &EdgeMap, found: &EdgeMap, tol: usize) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let (w, h) = (found.width() as isize, found.height() as isize);
    let t = tol as isize;
    let hits = truth
        .pixels()
        .iter()
        .filter(|&&(x, y)| {
            (-t..=t).any(|dy| {
                (-t..=t).any(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && found.is_edge(nx as usize, ny as usize)
                })
            })
        })
        .count();
    hits as f64 / truth.len() as f64
}

/// Rotation of exactly `rot_deg` about a random axis and a camera-centre shift
/// of exactly `trans_m` in a random direction. The rotation is applied in the
/// camera frame about the camera centre.
pub fn perturb(pose: &Pose, rot_deg: f64, trans_m: f64, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        if let Some(u) = v.try_normalize(1e-6) {
            break u;
        }
    };
    let axis = unit();
    let dir = unit();
    let dq = UnitQuaternion::from_scaled_axis(axis * rot_deg.to_radians());
    let rotation = dq * pose.rotation();
    let center = pose.camera_center().coords + dir * trans_m;
    Pose::new(rotation, -(rotation * center))
}

/// Replaces `fraction` of the features by points drawn uniformly in the box.
pub fn inject_outliers(features: &FeatureSet, fraction: f64, bounds: (Point3, Point3), seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let n = features.len();
    let count = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = features.clone();
    let (lo, hi) = bounds;
    for &k in &idx[..count.min(n)] {
        out.features[k].point = Point3::from(Vector3::from_fn(|c, _| rng.random_range(lo[c]..=hi[c])));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Range noise standard deviation in metres.
    pub range_sigma: f64,
    /// Image noise standard deviation in intensity levels.
    pub image_sigma: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            range_sigma: 0.0,
            image_sigma: 0.0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            range_sigma: 0.005,
            image_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruthCase {
    pub seed: u64,
    pub frames: Vec<LidarFrame>,
    pub image: GrayImage,
    pub edges: EdgeMap,
    pub intrinsics: CameraIntrinsics,
    pub true_pose: Pose,
    pub perturbed_pose: Pose,
    pub rot_deg: f64,
    pub trans_m: f64,
}

/// Builds case `seed`: the camera pose cycles through the trajectory, noise
/// and perturbation direction come from the seed.
pub fn generate_case(spec: &SceneSpec, seed: u64, rot_deg: f64, trans_m: f64, noise: &NoiseModel) -> GroundTruthCase {
    let intr = spec.intrinsics;
    let true_pose = if spec.camera_poses.is_empty() {
        Pose::identity()
    } else {
        spec.camera_poses[(seed % spec.camera_poses.len() as u64) as usize]
    };
    let mut range_rng = case_rng(spec.seed, seed, 1);
    let frames = raycast_frames_with_noise(spec, noise.range_sigma, Some(&mut range_rng));
    let (clean, edges) = render_edges(spec, &true_pose, &intr);
    let image = add_image_noise(&clean, noise.image_sigma, &mut case_rng(spec.seed, seed, 2));
    let perturbed_pose = perturb(&true_pose, rot_deg, trans_m, case_rng(spec.seed, seed, 3).random());
    GroundTruthCase {
        seed,
        frames,
        image,
        edges,
        intrinsics: intr,
        true_pose,
        perturbed_pose,
        rot_deg,
        trans_m,
    }
}

/// Angle in degrees, wrapped to `[0, 180]`.
pub fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    (a.rotation_distance(b) * 180.0 / PI).abs()
}

//! Depth maps from projected LiDAR points and the occlusion test.
//!
//! Points are splatted into a sparse map (nearest pixel, minimum depth wins),
//! then filled with an occlusion-aware Gaussian interpolation: around each
//! pixel, samples deeper than the shallowest nearby one by more than a margin
//! are ignored before averaging, so background depth does not bleed into
//! foreground surfaces.

use rayon::prelude::*;

use crate::geometry::{project_world, CameraIntrinsics, Pixel, Point3, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Map from per-pixel optional depths; non-positive depths count as missing.
    pub fn from_options(width: usize, height: usize, cells: &[Option<f64>]) -> Self {
        assert_eq!(cells.len(), width * height, "depth grid size mismatch");
        let mut map = Self::invalid(width, height);
        for (k, c) in cells.iter().enumerate() {
            if let Some(d) = c.filter(|d| *d > 0.0 && d.is_finite()) {
                map.depth[k] = d;
                map.valid[k] = true;
            }
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let k = y * self.width + x;
        self.valid[k].then_some(self.depth[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Minimum and maximum valid depth.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.depth
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(d, _)| *d)
            .fold(None, |acc, d| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }

    /// Nearest integer pixel of a continuous location, if inside the map.
    pub fn nearest_pixel(&self, p: &Pixel) -> Option<(usize, usize)> {
        let x = p.u.round();
        let y = p.v.round();
        let inside = x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64;
        inside.then_some((x as usize, y as usize))
    }

    /// Millimetre samples for 16-bit export, `0` marking invalid pixels.
    pub fn to_u16_mm(&self) -> Vec<u16> {
        self.depth
            .iter()
            .zip(&self.valid)
            .map(|(d, v)| {
                if *v {
                    (d * 1000.0).round().clamp(1.0, 65535.0) as u16
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Splats world points into a sparse depth map; collisions keep the minimum.
pub fn sparse_depth(points: &[Point3], pose: &Pose, intr: &CameraIntrinsics) -> DepthMap {
    let mut map = DepthMap::invalid(intr.width, intr.height);
    for p in points {
        let Ok(proj) = project_world(intr, pose, p) else {
            continue;
        };
        let Some((x, y)) = map.nearest_pixel(&proj.pixel) else {
            continue;
        };
        let k = y * map.width + x;
        if !map.valid[k] || proj.depth < map.depth[k] {
            map.depth[k] = proj.depth;
            map.valid[k] = true;
        }
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    /// Search radius in pixels.
    pub radius: usize,
    /// Number of neighbours averaged.
    pub neighbours: usize,
    /// Samples deeper than the shallowest reference sample by more than this
    /// are dropped (m).
    pub occlusion_margin: f64,
    /// Gaussian weight bandwidth in pixels.
    pub bandwidth: f64,
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self {
            radius: 7,
            neighbours: 8,
            occlusion_margin: 0.3,
            bandwidth: 3.5,
        }
    }
}

/// Occlusion-aware fill of a sparse depth map.
///
/// The reference depth of a pixel is the shallowest of its `k` closest valid
/// samples and of every sample within one bandwidth of it. Samples deeper than
/// the reference by more than the margin are dropped, and the `k` closest of the
/// rest within the radius are averaged with Gaussian weights on pixel distance.
///
/// A background sample lying inside a foreground surface is therefore hidden
/// as long as that surface has a sample within one bandwidth, however densely
/// the background itself is sampled.
pub fn densify(sparse: &DepthMap, p: &DensifyParams) -> DepthMap {
    let (w, h) = (sparse.width, sparse.height);
    let r = p.radius as isize;
    // disk offsets, nearest first with a fixed tie order
    let mut offsets: Vec<(isize, isize, f64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= (r * r) as f64 {
                offsets.push((dx, dy, d2));
            }
        }
    }
    offsets.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let two_sigma2 = 2.0 * p.bandwidth * p.bandwidth;

    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let sample = |&(dx, dy, d2): &(isize, isize, f64)| {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            return None;
                        }
                        sparse.get(nx as usize, ny as usize).map(|d| (d, d2))
                    };
                    let k = p.neighbours.max(1);
                    let core = p.bandwidth * p.bandwidth;
                    let shallowest = offsets
                        .iter()
                        .filter_map(sample)
                        .enumerate()
                        .take_while(|(i, (_, d2))| *i < k || *d2 <= core)
                        .map(|(_, s)| s.0)
                        .reduce(f64::min)?;
                    let cutoff = shallowest + p.occlusion_margin;
                    let kept = offsets
                        .iter()
                        .filter_map(sample)
                        .filter(|(d, _)| *d <= cutoff)
                        .take(p.neighbours.max(1));
                    let (mut num, mut den) = (0.0, 0.0);
                    for (d, d2) in kept {
                        let wgt = (-d2 / two_sigma2).exp();
                        num += wgt * d;
                        den += wgt;
                    }
                    Some(num / den)
                })
                .collect()
        })
        .collect();
    let cells: Vec<Option<f64>> = rows.into_iter().flatten().collect();
    DepthMap::from_options(w, h, &cells)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityParams {
    /// Relative depth tolerance ρ.
    pub relative: f64,
    /// Absolute depth tolerance ε (m).
    pub absolute: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            relative: 0.02,
            absolute: 0.05,
        }
    }
}

/// Outcome of the occlusion test for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Visibility {
    Visible { pixel: Pixel, depth: f64 },
    BehindCamera,
    OutOfFrustum,
    NoDepth,
    Occluded { depth: f64, map_depth: f64 },
}

impl Visibility {
    pub fn is_visible(&self) -> bool {
        matches!(self, Visibility::Visible { .. })
    }
}

/// Culls features behind the camera, outside the image, over missing depth,
/// or deeper than `map_depth (1 + ρ) + ε`.
pub fn visible(
    feature: &Point3,
    pose: &Pose,
    intr: &CameraIntrinsics,
    depth: &DepthMap,
    params: &VisibilityParams,
) -> Visibility {
    let Ok(proj) = project_world(intr, pose, feature) else {
        return Visibility::BehindCamera;
    };
    if !intr.contains(&proj.pixel) {
        return Visibility::OutOfFrustum;
    }
    let Some((x, y)) = depth.nearest_pixel(&proj.pixel) else {
        return Visibility::OutOfFrustum;
    };
    let Some(map_depth) = depth.get(x, y) else {
        return Visibility::NoDepth;
    };
    if proj.depth > map_depth * (1.0 + params.relative) + params.absolute {
        return Visibility::Occluded {
            depth: proj.depth,
            map_depth,
        };
    }
    Visibility::Visible {
        pixel: proj.pixel,
        depth: proj.depth,
    }
}

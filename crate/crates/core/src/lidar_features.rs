//! Corner features from single LiDAR scan frames.
//!
//! Each frame is an ordered point chain. The chain is cut at range gaps, split
//! recursively at the point farthest from the chord, merged back where a single
//! fitted line explains two neighbours, and filtered by size. A junction point
//! shared by two consecutive kept segments becomes a feature; the free ends of
//! the segment chain are never features.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Point3, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid split parameters: {0}")]
    InvalidParams(String),
}

/// One scan in acquisition order.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub frame_id: u32,
    pub points: Vec<Point3>,
}

impl LidarFrame {
    pub fn new(frame_id: u32, points: Vec<Point3>) -> Self {
        Self { frame_id, points }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            frame_id: self.frame_id,
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub point: Point3,
    pub frame_id: u32,
    /// Position of the point in its source frame.
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point3> {
        self.features.iter().map(|f| &f.point)
    }

    /// Free-standing points tagged with a single frame id.
    pub fn from_points(frame_id: u32, pts: &[Point3]) -> Self {
        Self {
            features: pts
                .iter()
                .enumerate()
                .map(|(index, &point)| Feature {
                    point,
                    frame_id,
                    index,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    /// Split while a point sits farther than this from the chord (m).
    pub max_point_line_distance: f64,
    pub min_segment_points: usize,
    /// Minimum end-to-end length of a kept segment (m).
    pub min_segment_length: f64,
    /// Consecutive points farther apart than this start a new chain (m).
    pub max_range_gap: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            max_point_line_distance: 0.03,
            min_segment_points: 8,
            min_segment_length: 0.2,
            max_range_gap: 0.5,
        }
    }
}

impl SplitParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.max_point_line_distance > 0.0
            && self.min_segment_points > 0
            && self.min_segment_length > 0.0
            && self.max_range_gap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Infinite 3-D line through `point` along unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Point3,
    pub direction: Vector3<f64>,
}

impl Line3 {
    pub fn through(a: &Point3, b: &Point3) -> Option<Self> {
        let d = b - a;
        let n = d.norm();
        (n > 1e-12).then(|| Self {
            point: *a,
            direction: d / n,
        })
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        let r = p - self.point;
        (r - self.direction * r.dot(&self.direction)).norm()
    }

    /// Total-least-squares fit: centroid plus principal axis of the scatter.
    pub fn fit(points: &[Point3]) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let mut scatter = Matrix3::zeros();
        for p in points {
            let r = p.coords - centroid;
            scatter += r * r.transpose();
        }
        let eig = SymmetricEigen::new(scatter);
        let (imax, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        let dir = eig.eigenvectors.column(imax).into_owned();
        let norm = dir.norm();
        (norm > 1e-12).then(|| Self {
            point: Point3::from(centroid),
            direction: dir / norm,
        })
    }
}

/// Inclusive index range `[start, end]` of a frame with its fitted line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub line: Line3,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Splits at consecutive-point distances above `max_gap`.
fn chains(points: &[Point3], max_gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if points.is_empty() {
        return out;
    }
    let mut start = 0;
    for i in 1..points.len() {
        if (points[i] - points[i - 1]).norm() > max_gap {
            out.push((start, i - 1));
            start = i;
        }
    }
    out.push((start, points.len() - 1));
    out
}

fn chord_distance(points: &[Point3], a: usize, b: usize, k: usize) -> f64 {
    match Line3::through(&points[a], &points[b]) {
        Some(line) => line.distance(&points[k]),
        None => (points[k] - points[a]).norm(),
    }
}

/// Recursive chord splitting of `[a, b]`; leaves share their boundary index.
fn split_recursive(points: &[Point3], a: usize, b: usize, thr: f64, out: &mut Vec<(usize, usize)>) {
    let mut stack = vec![(a, b)];
    let mut leaves = Vec::new();
    while let Some((a, b)) = stack.pop() {
        let mut best = (a, 0.0);
        for k in a + 1..b {
            let d = chord_distance(points, a, b, k);
            if d > best.1 {
                best = (k, d);
            }
        }
        if best.1 > thr {
            // right half first so leaves pop out left to right
            stack.push((best.0, b));
            stack.push((a, best.0));
        } else {
            leaves.push((a, b));
        }
    }
    out.extend(leaves);
}

fn max_line_distance(points: &[Point3], a: usize, b: usize) -> f64 {
    match Line3::fit(&points[a..=b]) {
        Some(line) => points[a..=b]
            .iter()
            .map(|p| line.distance(p))
            .fold(0.0, f64::max),
        None => 0.0,
    }
}

/// Merges neighbouring ranges whose union still fits one line within `thr`.
fn merge_collinear(points: &[Point3], ranges: Vec<(usize, usize)>, thr: f64) -> Vec<(usize, usize)> {
    let mut ranges = ranges;
    loop {
        let mut merged_any = false;
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
        for r in ranges {
            if let Some(last) = out.last_mut() {
                if last.1 == r.0 && max_line_distance(points, last.0, r.1) <= thr {
                    last.1 = r.1;
                    merged_any = true;
                    continue;
                }
            }
            out.push(r);
        }
        ranges = out;
        if !merged_any {
            return ranges;
        }
    }
}

/// Split-and-merge line segmentation of one frame.
pub fn split_into_segments(frame: &LidarFrame, p: &SplitParams) -> Vec<Segment> {
    let pts = &frame.points;
    let mut segments = Vec::new();
    for (a, b) in chains(pts, p.max_range_gap) {
        if b <= a {
            continue;
        }
        let mut leaves = Vec::new();
        split_recursive(pts, a, b, p.max_point_line_distance, &mut leaves);
        for (s, e) in merge_collinear(pts, leaves, p.max_point_line_distance) {
            let count = e - s + 1;
            let length = (pts[e] - pts[s]).norm();
            if count < p.min_segment_points || length < p.min_segment_length {
                continue;
            }
            if let Some(line) = Line3::fit(&pts[s..=e]) {
                segments.push(Segment {
                    start: s,
                    end: e,
                    line,
                });
            }
        }
    }
    segments
}

/// Junctions between consecutive kept segments of one frame.
pub fn extract_features(frame: &LidarFrame, p: &SplitParams) -> FeatureSet {
    let segments = split_into_segments(frame, p);
    let features = segments
        .windows(2)
        .filter(|w| w[0].end == w[1].start)
        .filter_map(|w| {
            let idx = w[0].end;
            let pt = frame.points[idx];
            let on_both = w[0].line.distance(&pt) <= p.max_point_line_distance
                && w[1].line.distance(&pt) <= p.max_point_line_distance;
            on_both.then_some(Feature {
                point: pt,
                frame_id: frame.frame_id,
                index: idx,
            })
        })
        .collect();
    FeatureSet { features }
}

/// Grid cell used for de-duplication.
pub const DEDUP_CELL: f64 = 0.01;

fn cell_key(p: &Point3) -> (i64, i64, i64) {
    (
        (p.x / DEDUP_CELL).round() as i64,
        (p.y / DEDUP_CELL).round() as i64,
        (p.z / DEDUP_CELL).round() as i64,
    )
}

fn feature_order(a: &Feature, b: &Feature) -> std::cmp::Ordering {
    a.frame_id
        .cmp(&b.frame_id)
        .then(a.index.cmp(&b.index))
        .then(a.point.x.total_cmp(&b.point.x))
        .then(a.point.y.total_cmp(&b.point.y))
        .then(a.point.z.total_cmp(&b.point.z))
}

/// Union of per-frame features, de-duplicated on a 1 cm grid.
///
/// Within a cell the feature with the smallest `(frame_id, index)` wins, so the
/// result does not depend on frame order.
pub fn aggregate_features(frames: &[LidarFrame], p: &SplitParams) -> FeatureSet {
    let per_frame: Vec<FeatureSet> = frames.par_iter().map(|f| extract_features(f, p)).collect();
    let mut cells: BTreeMap<(i64, i64, i64), Feature> = BTreeMap::new();
    for f in per_frame.into_iter().flat_map(|s| s.features) {
        cells
            .entry(cell_key(&f.point))
            .and_modify(|cur| {
                if feature_order(&f, cur).is_lt() {
                    *cur = f;
                }
            })
            .or_insert(f);
    }
    let mut features: Vec<Feature> = cells.into_values().collect();
    features.sort_by(feature_order);
    FeatureSet { features }
}

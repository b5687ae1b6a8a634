//! Plain-text data files and atomic output.
//!
//! | file        | one line per                | fields                          |
//! |-------------|-----------------------------|---------------------------------|
//! | frames      | LiDAR point                 | `frame_id x y z`                |
//! | features    | corner feature              | `frame_id index x y z`          |
//! | pose        | (single line)               | `qw qx qy qz tx ty tz`          |
//! | intrinsics  | (single line)               | `fx fy u0 v0 width height`      |
//!
//! `#` starts a comment line. Points of a frame keep their file order.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{read_text, ConfigError};
use crate::geometry::{CameraIntrinsics, Point3, Pose};
use crate::lidar_features::{Feature, FeatureSet, LidarFrame};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(source: &str, line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        file: source.to_owned(),
        line,
        msg: msg.into(),
    }
}

fn fields<const N: usize>(line: &str, source: &str, n: usize) -> Result<[f64; N], ConfigError> {
    let vals: Vec<&str> = line.split_whitespace().collect();
    if vals.len() != N {
        return Err(parse_err(source, n, format!("expected {N} fields, found {}", vals.len())));
    }
    let mut out = [0.0f64; N];
    for (o, v) in out.iter_mut().zip(vals) {
        *o = v
            .parse()
            .map_err(|_| parse_err(source, n, format!("not a number: {v:?}")))?;
        if !o.is_finite() {
            return Err(parse_err(source, n, format!("non-finite value {v:?}")));
        }
    }
    Ok(out)
}

fn frame_id(v: f64, source: &str, n: usize) -> Result<u32, ConfigError> {
    if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
        return Err(parse_err(source, n, format!("bad frame id {v}")));
    }
    Ok(v as u32)
}

pub fn parse_frames(text: &str, source: &str) -> Result<Vec<LidarFrame>, ConfigError> {
    let mut frames: Vec<LidarFrame> = Vec::new();
    for (n, line) in data_lines(text) {
        let [id, x, y, z] = fields::<4>(line, source, n)?;
        let id = frame_id(id, source, n)?;
        let p = Point3::new(x, y, z);
        match frames.iter_mut().find(|f| f.frame_id == id) {
            Some(f) => f.points.push(p),
            None => frames.push(LidarFrame::new(id, vec![p])),
        }
    }
    Ok(frames)
}

pub fn format_frames(frames: &[LidarFrame]) -> String {
    let mut out = String::from("# frame_id x y z\n");
    for f in frames {
        for p in &f.points {
            let _ = writeln!(out, "{} {:?} {:?} {:?}", f.frame_id, p.x, p.y, p.z);
        }
    }
    out
}

pub fn parse_features(text: &str, source: &str) -> Result<FeatureSet, ConfigError> {
    let mut features = Vec::new();
    for (n, line) in data_lines(text) {
        let [id, idx, x, y, z] = fields::<5>(line, source, n)?;
        let frame_id = frame_id(id, source, n)?;
        if idx < 0.0 || idx.fract() != 0.0 {
            return Err(parse_err(source, n, format!("bad point index {idx}")));
        }
        features.push(Feature {
            point: Point3::new(x, y, z),
            frame_id,
            index: idx as usize,
        });
    }
    Ok(FeatureSet { features })
}

pub fn format_features(fs: &FeatureSet) -> String {
    let mut out = String::from("# frame_id index x y z\n");
    for f in &fs.features {
        let _ = writeln!(out, "{} {} {:?} {:?} {:?}", f.frame_id, f.index, f.point.x, f.point.y, f.point.z);
    }
    out
}

fn single_line<'a>(text: &'a str, source: &str) -> Result<(usize, &'a str), ConfigError> {
    let mut it = data_lines(text);
    let first = it.next().ok_or_else(|| parse_err(source, 1, "file is empty"))?;
    if let Some((n, _)) = it.next() {
        return Err(parse_err(source, n, "expected a single data line"));
    }
    Ok(first)
}

pub fn parse_pose(text: &str, source: &str) -> Result<Pose, ConfigError> {
    let (n, line) = single_line(text, source)?;
    line.parse().map_err(|e| parse_err(source, n, format!("{e}")))
}

pub fn parse_intrinsics(text: &str, source: &str) -> Result<CameraIntrinsics, ConfigError> {
    let (n, line) = single_line(text, source)?;
    line.parse().map_err(|e| parse_err(source, n, format!("{e}")))
}

pub fn read_frames(path: &Path) -> Result<Vec<LidarFrame>, ConfigError> {
    parse_frames(&read_text(path)?, &path.display().to_string())
}

pub fn read_features(path: &Path) -> Result<FeatureSet, ConfigError> {
    parse_features(&read_text(path)?, &path.display().to_string())
}

pub fn read_pose(path: &Path) -> Result<Pose, ConfigError> {
    parse_pose(&read_text(path)?, &path.display().to_string())
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, ConfigError> {
    parse_intrinsics(&read_text(path)?, &path.display().to_string())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip_and_grouping() {
        let frames = vec![
            LidarFrame::new(3, vec![Point3::new(0.1, 0.2, 0.3), Point3::new(1.0 / 3.0, -2.0, 1e-9)]),
            LidarFrame::new(0, vec![Point3::new(5.0, 6.0, 7.0)]),
        ];
        let text = format_frames(&frames);
        assert_eq!(parse_frames(&text, "f.txt").unwrap(), frames);
    }

    #[test]
    fn features_round_trip() {
        let fs = FeatureSet {
            features: vec![Feature {
                point: Point3::new(0.1, -0.7, 12.25),
                frame_id: 4,
                index: 17,
            }],
        };
        assert_eq!(parse_features(&format_features(&fs), "x").unwrap(), fs);
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let err = parse_frames("# c\n0 1 2 3\n0 1 two 3\n", "scan.txt").unwrap_err();
        assert_eq!(err.to_string(), "scan.txt:3: not a number: \"two\"");
        let err = parse_frames("0 1 2\n", "scan.txt").unwrap_err();
        assert!(err.to_string().starts_with("scan.txt:1:"));
        assert!(parse_frames("-1 0 0 0\n", "s").is_err());
        assert!(parse_pose("", "p.txt").is_err());
        assert!(parse_pose("1 0 0 0 0 0 0\n1 0 0 0 0 0 0\n", "p.txt").is_err());
    }

    #[test]
    fn pose_and_intrinsics_round_trip() {
        let p = Pose::from_components([0.9, 0.1, -0.2, 0.3], [0.5, -1.25, 3.0]).unwrap();
        assert_eq!(parse_pose(&format!("# pose\n{p}\n"), "p").unwrap(), p);
        let k = CameraIntrinsics::new(500.0, 501.5, 319.5, 239.5, 640, 480).unwrap();
        assert_eq!(parse_intrinsics(&k.to_string(), "k").unwrap(), k);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}

//! Flat `section.key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::cost_map::DEFAULT_TRUNCATION;
use crate::depth_occlusion::{DensifyParams, VisibilityParams};
use crate::imaging::CannyParams;
use crate::lidar_features::SplitParams;
use crate::pose_optimizer::{LossKind, RobustLoss, SolverSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}: missing required key {key}")]
    Missing { file: String, key: String },
    #[error("{file}: {msg}")]
    Invalid { file: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries; `source` names the file in diagnostics.
pub fn parse_entries(text: &str, source: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                file: source.to_owned(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Parse {
                file: source.to_owned(),
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_owned(),
            value: v.trim().to_owned(),
        });
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses an entry value, reporting file and line on failure.
pub fn parse_value<T: FromStr>(e: &Entry, source: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    e.value.parse().map_err(|err| ConfigError::Parse {
        file: source.to_owned(),
        line: e.line,
        msg: format!("{}: cannot parse {:?}: {err}", e.key, e.value),
    })
}

/// Whitespace-separated floats with an exact count.
pub fn parse_floats(e: &Entry, source: &str, count: usize) -> Result<Vec<f64>, ConfigError> {
    let vals: Result<Vec<f64>, _> = e.value.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == count => Ok(v),
        _ => Err(ConfigError::Parse {
            file: source.to_owned(),
            line: e.line,
            msg: format!("{}: expected {count} numbers, got {:?}", e.key, e.value),
        }),
    }
}

/// Every tunable of the registration pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub canny: CannyParams,
    pub split: SplitParams,
    pub truncation: f64,
    pub densify: DensifyParams,
    pub visibility: VisibilityParams,
    pub loss: RobustLoss,
    pub solver: SolverSettings,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            split: SplitParams::default(),
            truncation: DEFAULT_TRUNCATION,
            densify: DensifyParams::default(),
            visibility: VisibilityParams::default(),
            loss: RobustLoss::default(),
            solver: SolverSettings::default(),
        }
    }
}

/// Input files of a `register` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterInputs {
    pub image: PathBuf,
    pub intrinsics: PathBuf,
    pub pose: PathBuf,
    /// Either raw scans (features extracted here) or a ready feature file.
    pub frames: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

/// Sweep parameters of a `bench` run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    /// Scene file; the built-in corridor when absent.
    pub scene: Option<PathBuf>,
    pub seeds: usize,
    pub first_seed: u64,
    pub rotations_deg: Vec<f64>,
    pub translations_m: Vec<f64>,
    pub range_noise: f64,
    pub image_noise: f64,
    pub outlier_fraction: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            scene: None,
            seeds: 20,
            first_seed: 0,
            rotations_deg: vec![2.0],
            translations_m: vec![0.05],
            range_noise: 0.0,
            image_noise: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: PipelineParams,
    pub register: Option<RegisterInputs>,
    pub bench: BenchParams,
    pub output_dir: PathBuf,
}

fn parse_list(e: &Entry, source: &str) -> Result<Vec<f64>, ConfigError> {
    let vals: Result<Vec<f64>, _> = e
        .value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(ConfigError::Parse {
            file: source.to_owned(),
            line: e.line,
            msg: format!("{}: expected a list of numbers, got {:?}", e.key, e.value),
        }),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, source: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut p = PipelineParams::default();
        let mut bench = BenchParams::default();
        let mut paths: BTreeMap<&'static str, PathBuf> = BTreeMap::new();
        let mut output_dir = base.join("out");
        let resolve = |v: &str| {
            let pth = Path::new(v);
            if pth.is_absolute() {
                pth.to_path_buf()
            } else {
                base.join(pth)
            }
        };
        let mut seen = BTreeMap::new();

        for e in parse_entries(text, source)? {
            if let Some(prev) = seen.insert(e.key.clone(), e.line) {
                return Err(ConfigError::Parse {
                    file: source.to_owned(),
                    line: e.line,
                    msg: format!("duplicate key {} (first on line {prev})", e.key),
                });
            }
            let s = source;
            match e.key.as_str() {
                "input.image" => drop(paths.insert("image", resolve(&e.value))),
                "input.intrinsics" => drop(paths.insert("intrinsics", resolve(&e.value))),
                "input.pose" => drop(paths.insert("pose", resolve(&e.value))),
                "input.frames" => drop(paths.insert("frames", resolve(&e.value))),
                "input.features" => drop(paths.insert("features", resolve(&e.value))),
                "output.dir" => output_dir = resolve(&e.value),
                "canny.low_threshold" => p.canny.low_threshold = parse_value(&e, s)?,
                "canny.ratio" => p.canny.ratio = parse_value(&e, s)?,
                "canny.aperture" => p.canny.aperture = parse_value(&e, s)?,
                "split.max_point_line_distance" => p.split.max_point_line_distance = parse_value(&e, s)?,
                "split.min_segment_points" => p.split.min_segment_points = parse_value(&e, s)?,
                "split.min_segment_length" => p.split.min_segment_length = parse_value(&e, s)?,
                "split.max_range_gap" => p.split.max_range_gap = parse_value(&e, s)?,
                "cost.truncation" => p.truncation = parse_value(&e, s)?,
                "depth.radius" => p.densify.radius = parse_value(&e, s)?,
                "depth.neighbours" => p.densify.neighbours = parse_value(&e, s)?,
                "depth.occlusion_margin" => p.densify.occlusion_margin = parse_value(&e, s)?,
                "depth.bandwidth" => p.densify.bandwidth = parse_value(&e, s)?,
                "visibility.relative" => p.visibility.relative = parse_value(&e, s)?,
                "visibility.absolute" => p.visibility.absolute = parse_value(&e, s)?,
                "loss.kind" => p.loss.kind = parse_value::<LossKind>(&e, s)?,
                "loss.scale" => p.loss.scale = parse_value(&e, s)?,
                "solver.max_iterations" => p.solver.max_iterations = parse_value(&e, s)?,
                "solver.step_tolerance" => p.solver.step_tolerance = parse_value(&e, s)?,
                "solver.cost_tolerance" => p.solver.cost_tolerance = parse_value(&e, s)?,
                "solver.initial_lambda" => p.solver.initial_lambda = parse_value(&e, s)?,
                "bench.scene" => bench.scene = Some(resolve(&e.value)),
                "bench.seeds" => bench.seeds = parse_value(&e, s)?,
                "bench.first_seed" => bench.first_seed = parse_value(&e, s)?,
                "bench.rotation_deg" => bench.rotations_deg = parse_list(&e, s)?,
                "bench.translation_m" => bench.translations_m = parse_list(&e, s)?,
                "bench.range_noise" => bench.range_noise = parse_value(&e, s)?,
                "bench.image_noise" => bench.image_noise = parse_value(&e, s)?,
                "bench.outlier_fraction" => bench.outlier_fraction = parse_value(&e, s)?,
                other => {
                    return Err(ConfigError::Parse {
                        file: source.to_owned(),
                        line: e.line,
                        msg: format!("unknown key {other}"),
                    })
                }
            }
        }

        let invalid = |msg: String| ConfigError::Invalid {
            file: source.to_owned(),
            msg,
        };
        p.canny.validate().map_err(|e| invalid(e.to_string()))?;
        p.split.validate().map_err(|e| invalid(e.to_string()))?;
        p.loss.validate().map_err(|e| invalid(e.to_string()))?;
        if !(p.truncation.is_finite() && p.truncation > 0.0) {
            return Err(invalid(format!("cost.truncation must be positive, got {}", p.truncation)));
        }
        if !(0.0..1.0).contains(&bench.outlier_fraction) {
            return Err(invalid(format!(
                "bench.outlier_fraction must be in [0, 1), got {}",
                bench.outlier_fraction
            )));
        }

        let any_input = ["image", "intrinsics", "pose", "frames", "features"]
            .iter()
            .any(|k| paths.contains_key(k));
        let register = if any_input {
            let mut take = |k: &'static str| {
                paths.remove(k).ok_or_else(|| ConfigError::Missing {
                    file: source.to_owned(),
                    key: format!("input.{k}"),
                })
            };
            let image = take("image")?;
            let intrinsics = take("intrinsics")?;
            let pose = take("pose")?;
            let frames = paths.remove("frames");
            let features = paths.remove("features");
            if frames.is_none() == features.is_none() {
                return Err(invalid("exactly one of input.frames and input.features is required".into()));
            }
            Some(RegisterInputs {
                image,
                intrinsics,
                pose,
                frames,
                features,
            })
        } else {
            None
        };

        Ok(Self {
            params: p,
            register,
            bench,
            output_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_keys() {
        let cfg = PipelineConfig::parse("# nothing\n\n", "c.ini", Path::new("/base")).unwrap();
        assert_eq!(cfg.params, PipelineParams::default());
        assert_eq!(cfg.params.canny.low_threshold, 50.0);
        assert_eq!(cfg.params.canny.high_threshold(), 150.0);
        assert_eq!(cfg.params.canny.aperture, 3);
        assert_eq!(cfg.params.truncation, 50.0);
        assert_eq!(cfg.params.loss, RobustLoss::huber(3.0));
        assert!(cfg.register.is_none());
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = PipelineConfig::parse("loss.kind = none\ncanny.sigma = 2\n", "c.ini", Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c.ini:2") && msg.contains("canny.sigma"), "{msg}");
    }

    #[test]
    fn bad_value_names_line() {
        let err = PipelineConfig::parse("\n\ncanny.aperture = three\n", "c.ini", Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("c.ini:3"));
        assert!(PipelineConfig::parse("canny.aperture = 4\n", "c.ini", Path::new(".")).is_err());
        assert!(PipelineConfig::parse("noequals\n", "c.ini", Path::new(".")).is_err());
    }

    #[test]
    fn paths_are_relative_to_config() {
        let text = "input.image = img.pgm\ninput.intrinsics = k.txt\ninput.pose = /abs/p.txt\ninput.features = f.txt\noutput.dir = res\n";
        let cfg = PipelineConfig::parse(text, "c.ini", Path::new("/data/run")).unwrap();
        let r = cfg.register.unwrap();
        assert_eq!(r.image, Path::new("/data/run/img.pgm"));
        assert_eq!(r.pose, Path::new("/abs/p.txt"));
        assert_eq!(r.features.unwrap(), Path::new("/data/run/f.txt"));
        assert_eq!(cfg.output_dir, Path::new("/data/run/res"));
    }

    #[test]
    fn incomplete_inputs_rejected() {
        let err = PipelineConfig::parse("input.image = a.pgm\n", "c.ini", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Missing { .. }));
        let both = "input.image = a\ninput.intrinsics = b\ninput.pose = c\ninput.frames = d\ninput.features = e\n";
        assert!(PipelineConfig::parse(both, "c.ini", Path::new(".")).is_err());
    }

    #[test]
    fn bench_lists_and_overrides() {
        let text = "bench.rotation_deg = 0, 1, 2\nbench.translation_m = 0 0.02 0.05\nbench.seeds = 4\nloss.kind = cauchy\nloss.scale = 2\n";
        let cfg = PipelineConfig::parse(text, "c.ini", Path::new(".")).unwrap();
        assert_eq!(cfg.bench.rotations_deg, vec![0.0, 1.0, 2.0]);
        assert_eq!(cfg.bench.translations_m, vec![0.0, 0.02, 0.05]);
        assert_eq!(cfg.bench.seeds, 4);
        assert_eq!(cfg.params.loss, RobustLoss::cauchy(2.0));
        assert!(PipelineConfig::parse("bench.seeds = 1\nbench.seeds = 2\n", "c.ini", Path::new(".")).is_err());
    }
}

//! End-to-end registration and the synthetic sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{BenchParams, ConfigError, PipelineConfig, PipelineParams};
use crate::cost_map::{CostMap, CostMapError};
use crate::depth_occlusion::{densify, sparse_depth, DepthMap};
use crate::geometry::{project_world, CameraIntrinsics, Pose};
use crate::imaging::{canny, encode_pgm16, encode_pgm8, encode_ppm, read_pnm, EdgeMap, GrayImage, ImagingError, RgbImage};
use crate::io::{read_features, read_frames, read_intrinsics, read_pose, write_atomic};
use crate::lidar_features::{aggregate_features, FeatureSet, LidarFrame};
use crate::pose_optimizer::{build_problem, solve, OptimizerError, RegistrationProblem, SolveReport, Termination};
use crate::synthetic_bench::{generate_case, inject_outliers, rotation_error_deg, GroundTruthCase, NoiseModel, SceneSpec};

pub const RED: [u8; 3] = [255, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("image: {0}")]
    Image(#[from] ImagingError),
    #[error("cost map: {0}")]
    CostMap(#[from] CostMapError),
    #[error("image is {image_width}x{image_height} but intrinsics expect {intr_width}x{intr_height}")]
    DimensionMismatch {
        image_width: usize,
        image_height: usize,
        intr_width: usize,
        intr_height: usize,
    },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Optimizer(OptimizerError::InsufficientResiduals { .. }) => 2,
            _ => 1,
        }
    }
}

/// Exit status of a finished solve.
pub fn report_exit_code(report: &SolveReport) -> u8 {
    match report.termination {
        Termination::NumericalFailure => 3,
        _ => 0,
    }
}

/// Everything produced by one registration.
#[derive(Debug, Clone)]
pub struct Registration {
    pub edges: EdgeMap,
    pub cost_map: CostMap,
    pub depth_map: DepthMap,
    pub problem: RegistrationProblem,
    pub report: SolveReport,
}

/// Depth and feature inputs of a registration.
pub struct LidarInput<'a> {
    /// Points used for the depth map.
    pub frames: &'a [LidarFrame],
    pub features: &'a FeatureSet,
}

/// Edges, cost map, frozen depth map at `pose0`, culling and the solve.
pub fn register(
    image: &GrayImage,
    intr: &CameraIntrinsics,
    pose0: &Pose,
    lidar: &LidarInput<'_>,
    p: &PipelineParams,
) -> Result<Registration, PipelineError> {
    if image.width() != intr.width || image.height() != intr.height {
        return Err(PipelineError::DimensionMismatch {
            image_width: image.width(),
            image_height: image.height(),
            intr_width: intr.width,
            intr_height: intr.height,
        });
    }
    let edges = canny(image, &p.canny)?;
    let cost_map = CostMap::build(&edges, p.truncation)?;
    let depth_points: Vec<_> = if lidar.frames.is_empty() {
        lidar.features.points().copied().collect()
    } else {
        lidar.frames.iter().flat_map(|f| f.points.iter().copied()).collect()
    };
    let depth_map = densify(&sparse_depth(&depth_points, pose0, intr), &p.densify);
    let problem = build_problem(
        lidar.features,
        pose0,
        intr,
        &cost_map,
        &depth_map,
        &p.visibility,
        p.loss,
        p.solver,
    )?;
    let report = solve(&problem);
    for it in &report.history {
        log::info!("{it}");
    }
    Ok(Registration {
        edges,
        cost_map,
        depth_map,
        problem,
        report,
    })
}

/// Image with edge cells in blue and the active features at `pose` as 3×3
/// squares of `color`.
pub fn overlay(base: &RgbImage, reg: &Registration, pose: &Pose, color: [u8; 3]) -> RgbImage {
    let mut img = base.clone();
    for &(x, y) in reg.edges.pixels() {
        img.put(x, y, BLUE);
    }
    for p in &reg.problem.points {
        if let Ok(proj) = project_world(&reg.problem.intrinsics, pose, p) {
            img.draw_square(proj.pixel.u, proj.pixel.v, 1, color);
        }
    }
    img
}

/// Paths of the files written by [`write_register_outputs`].
pub const REGISTER_OUTPUTS: [&str; 6] = [
    "report.txt",
    "pose_refined.txt",
    "overlay_initial.ppm",
    "overlay_refined.ppm",
    "costmap.pgm",
    "depth.pgm",
];

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })
}

pub fn write_register_outputs(dir: &Path, base: &RgbImage, reg: &Registration) -> Result<(), PipelineError> {
    create_dir(dir)?;
    let r = &reg.report;
    write_file(&dir.join("report.txt"), r.to_kv().as_bytes())?;
    write_file(&dir.join("pose_refined.txt"), format!("{}\n", r.pose).as_bytes())?;
    let initial = overlay(base, reg, &r.initial_pose, RED);
    write_file(&dir.join("overlay_initial.ppm"), &encode_ppm(&initial))?;
    let refined = overlay(base, reg, &r.pose, GREEN);
    write_file(&dir.join("overlay_refined.ppm"), &encode_ppm(&refined))?;
    let cm = &reg.cost_map;
    write_file(&dir.join("costmap.pgm"), &encode_pgm8(cm.width(), cm.height(), &cm.to_u8()))?;
    let dm = &reg.depth_map;
    write_file(&dir.join("depth.pgm"), &encode_pgm16(dm.width(), dm.height(), &dm.to_u16_mm()))?;
    Ok(())
}

/// `register <config>`: returns the process exit status.
pub fn run_register(config_path: &Path) -> Result<(u8, SolveReport), PipelineError> {
    let cfg = PipelineConfig::load(config_path)?;
    let inputs = cfg.register.clone().ok_or_else(|| {
        PipelineError::Usage(format!("{}: register needs input.* keys", config_path.display()))
    })?;
    let pnm = read_pnm(&inputs.image).map_err(|e| match e {
        ImagingError::Io(source) => PipelineError::Io {
            path: inputs.image.display().to_string(),
            source,
        },
        other => PipelineError::Image(other),
    })?;
    let intr = read_intrinsics(&inputs.intrinsics)?;
    let pose0 = read_pose(&inputs.pose)?;
    let (frames, features) = match (&inputs.frames, &inputs.features) {
        (Some(fp), _) => {
            let frames = read_frames(fp)?;
            let features = aggregate_features(&frames, &cfg.params.split);
            (frames, features)
        }
        (None, Some(fp)) => (Vec::new(), read_features(fp)?),
        (None, None) => unreachable!("config requires one feature source"),
    };
    let lidar = LidarInput {
        frames: &frames,
        features: &features,
    };
    let reg = register(&pnm.to_gray(), &intr, &pose0, &lidar, &cfg.params)?;
    write_register_outputs(&cfg.output_dir, &pnm.to_rgb(), &reg)?;
    Ok((report_exit_code(&reg.report), reg.report))
}

/// One row of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub seed: u64,
    pub rot_deg: f64,
    pub trans_m: f64,
    pub rot_err_init_deg: f64,
    pub trans_err_init_m: f64,
    pub rot_err_final_deg: f64,
    pub trans_err_final_m: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `ok`, or the failure that stopped the case.
    pub status: String,
}

impl CaseResult {
    pub fn within(&self, rot_deg: f64, trans_m: f64) -> bool {
        self.rot_err_final_deg <= rot_deg && self.trans_err_final_m <= trans_m
    }
}

/// Features of a case, with `outlier_fraction` of them replaced.
pub fn case_features(spec: &SceneSpec, case: &GroundTruthCase, p: &PipelineParams, outlier_fraction: f64) -> FeatureSet {
    let features = aggregate_features(&case.frames, &p.split);
    match spec.bounds() {
        Some(b) if outlier_fraction > 0.0 => inject_outliers(&features, outlier_fraction, b, case.seed),
        _ => features,
    }
}

/// Registers one generated case starting from its perturbed pose.
pub fn run_case(spec: &SceneSpec, case: &GroundTruthCase, p: &PipelineParams, outlier_fraction: f64) -> CaseResult {
    let features = case_features(spec, case, p, outlier_fraction);
    let lidar = LidarInput {
        frames: &case.frames,
        features: &features,
    };
    let init = &case.perturbed_pose;
    let truth = &case.true_pose;
    let mut row = CaseResult {
        seed: case.seed,
        rot_deg: case.rot_deg,
        trans_m: case.trans_m,
        rot_err_init_deg: rotation_error_deg(init, truth),
        trans_err_init_m: init.center_distance(truth),
        rot_err_final_deg: rotation_error_deg(init, truth),
        trans_err_final_m: init.center_distance(truth),
        iterations: 0,
        converged: false,
        status: "ok".into(),
    };
    match register(&case.image, &case.intrinsics, init, &lidar, p) {
        Ok(reg) => {
            row.rot_err_final_deg = rotation_error_deg(&reg.report.pose, truth);
            row.trans_err_final_m = reg.report.pose.center_distance(truth);
            row.iterations = reg.report.iterations;
            row.converged = reg.report.converged;
            if !reg.report.converged {
                row.status = reg.report.termination.to_string();
            }
        }
        Err(e) => row.status = format!("{e}").replace(',', ";"),
    }
    row
}

/// Every (rotation, translation) magnitude for every seed, in that order.
pub fn run_sweep(spec: &SceneSpec, bench: &BenchParams, p: &PipelineParams) -> Vec<CaseResult> {
    let noise = NoiseModel {
        range_sigma: bench.range_noise,
        image_sigma: bench.image_noise,
    };
    let mut jobs = Vec::new();
    for &r in &bench.rotations_deg {
        for &t in &bench.translations_m {
            for s in 0..bench.seeds as u64 {
                jobs.push((r, t, bench.first_seed + s));
            }
        }
    }
    jobs.par_iter()
        .map(|&(r, t, seed)| {
            let case = generate_case(spec, seed, r, t, &noise);
            run_case(spec, &case, p, bench.outlier_fraction)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "seed,rot_err_init_deg,trans_err_init_m,rot_err_final_deg,trans_err_final_m,iterations,converged,status";

pub fn format_csv(rows: &[CaseResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{},{},{}",
            r.seed,
            r.rot_err_init_deg,
            r.trans_err_init_m,
            r.rot_err_final_deg,
            r.trans_err_final_m,
            r.iterations,
            r.converged,
            r.status
        );
    }
    out
}

/// `bench <config>`: writes `bench.csv` into the output directory.
pub fn run_bench(config_path: &Path) -> Result<(PathBuf, Vec<CaseResult>), PipelineError> {
    let cfg = PipelineConfig::load(config_path)?;
    let spec = match &cfg.bench.scene {
        Some(path) => SceneSpec::load(path)?,
        None => SceneSpec::corridor(0),
    };
    let rows = run_sweep(&spec, &cfg.bench, &cfg.params);
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("bench.csv");
    write_file(&path, format_csv(&rows).as_bytes())?;
    Ok((path, rows))
}

/// Writes a self-contained case directory that `register` can run directly.
pub fn write_case(dir: &Path, spec: &SceneSpec, case: &GroundTruthCase) -> Result<(), PipelineError> {
    use crate::io::format_frames;
    create_dir(dir)?;
    let (w, h) = (case.image.width(), case.image.height());
    write_file(&dir.join("image.pgm"), &encode_pgm8(w, h, &case.image.to_u8()))?;
    let edge_bytes: Vec<u8> = case.edges.grid().iter().map(|e| if *e { 255 } else { 0 }).collect();
    write_file(&dir.join("edges_truth.pgm"), &encode_pgm8(w, h, &edge_bytes))?;
    write_file(&dir.join("intrinsics.txt"), format!("{}\n", case.intrinsics).as_bytes())?;
    write_file(&dir.join("pose_true.txt"), format!("{}\n", case.true_pose).as_bytes())?;
    write_file(&dir.join("pose_initial.txt"), format!("{}\n", case.perturbed_pose).as_bytes())?;
    write_file(&dir.join("frames.txt"), format_frames(&case.frames).as_bytes())?;
    write_file(&dir.join("scene.ini"), spec.to_ini().as_bytes())?;
    let config = "# registration of a generated case\n\
                  input.image = image.pgm\n\
                  input.intrinsics = intrinsics.txt\n\
                  input.pose = pose_initial.txt\n\
                  input.frames = frames.txt\n\
                  output.dir = out\n";
    write_file(&dir.join("register.ini"), config.as_bytes())?;
    Ok(())
}

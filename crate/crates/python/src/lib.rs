//! Python module `edgereg_py`: poses, intrinsics, the edge detector, cost maps,
//! synthetic cases and registration.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use edgereg::config::{ConfigError, PipelineParams};
use edgereg::cost_map::CostMap;
use edgereg::geometry::{project_world, CameraIntrinsics, Pixel, Point3, Pose};
use edgereg::imaging::{canny, CannyParams, GrayImage};
use edgereg::lidar_features::{aggregate_features, FeatureSet, LidarFrame};
use edgereg::pipeline::{self, LidarInput, PipelineError};
use edgereg::pose_optimizer::{LossKind, RobustLoss, SolveReport};
use edgereg::synthetic_bench::{self, GroundTruthCase, NoiseModel, SceneSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Io { .. } | PipelineError::Config(ConfigError::Io { .. }) => {
            PyIOError::new_err(e.to_string())
        }
        PipelineError::Optimizer(_) => PyRuntimeError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn gray(width: usize, height: usize, data: Vec<f64>) -> PyResult<GrayImage> {
    GrayImage::from_vec(width, height, data).map_err(value_err)
}

/// World-to-camera pose: unit quaternion `(w, x, y, z)` and translation.
#[pyclass(name = "Pose", module = "edgereg_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyPose(Pose);

#[pymethods]
impl PyPose {
    #[new]
    fn new(quaternion: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        Pose::from_components(quaternion, translation).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(Pose::identity())
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(value_err)
    }

    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        let q = self.0.rotation().quaternion();
        [q.w, q.i, q.j, q.k]
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.0.translation();
        [t.x, t.y, t.z]
    }

    fn camera_center(&self) -> [f64; 3] {
        let c = self.0.camera_center();
        [c.x, c.y, c.z]
    }

    fn transform(&self, point: [f64; 3]) -> [f64; 3] {
        let p = self.0.transform(&Point3::from(point));
        [p.x, p.y, p.z]
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    /// Left increment `[ω; ν]` in the camera frame.
    fn retract(&self, delta: [f64; 6]) -> Self {
        Self(self.0.retract(&delta.into()))
    }

    fn rotation_error_deg(&self, other: &PyPose) -> f64 {
        synthetic_bench::rotation_error_deg(&self.0, &other.0)
    }

    fn center_distance(&self, other: &PyPose) -> f64 {
        self.0.center_distance(&other.0)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Pose({:?}, {:?})", self.quaternion(), self.translation())
    }
}

#[pyclass(name = "Intrinsics", module = "edgereg_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, u0: f64, v0: f64, width: usize, height: usize) -> PyResult<Self> {
        CameraIntrinsics::new(fx, fy, u0, v0, width, height).map(Self).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    /// Pixel `(u, v)` and depth of a world point, or `None` behind the camera.
    fn project(&self, pose: &PyPose, point: [f64; 3]) -> Option<(f64, f64, f64)> {
        project_world(&self.0, &pose.0, &Point3::from(point))
            .ok()
            .map(|p| (p.pixel.u, p.pixel.v, p.depth))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }
}

/// Edge pixels `(x, y)` of a row-major grayscale image.
#[pyfunction]
#[pyo3(signature = (width, height, data, low_threshold=50.0, ratio=3.0, aperture=3))]
fn detect_edges(
    width: usize,
    height: usize,
    data: Vec<f64>,
    low_threshold: f64,
    ratio: f64,
    aperture: usize,
) -> PyResult<Vec<(usize, usize)>> {
    let params = CannyParams {
        low_threshold,
        ratio,
        aperture,
    };
    let edges = canny(&gray(width, height, data)?, &params).map_err(value_err)?;
    Ok(edges.pixels().to_vec())
}

/// Truncated distance-to-edge map over a Canny edge grid.
#[pyclass(name = "CostMap", module = "edgereg_py", frozen)]
struct PyCostMap(CostMap);

#[pymethods]
impl PyCostMap {
    #[staticmethod]
    #[pyo3(signature = (width, height, data, truncation=50.0))]
    fn from_image(width: usize, height: usize, data: Vec<f64>, truncation: f64) -> PyResult<Self> {
        let edges = canny(&gray(width, height, data)?, &CannyParams::default()).map_err(value_err)?;
        CostMap::build(&edges, truncation).map(Self).map_err(value_err)
    }

    #[getter]
    fn truncation(&self) -> f64 {
        self.0.truncation()
    }

    fn grid(&self) -> Vec<f64> {
        self.0.grid().to_vec()
    }

    fn sample(&self, u: f64, v: f64) -> PyResult<f64> {
        self.0.sample(&Pixel::new(u, v)).map_err(value_err)
    }

    fn gradient(&self, u: f64, v: f64) -> PyResult<(f64, f64)> {
        let [gu, gv] = self.0.sample_gradient(&Pixel::new(u, v)).map_err(value_err)?;
        Ok((gu, gv))
    }
}

/// One generated ground-truth case of the built-in corridor or a scene file.
#[pyclass(name = "Case", module = "edgereg_py", frozen)]
struct PyCase(GroundTruthCase);

#[pymethods]
impl PyCase {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn intrinsics(&self) -> PyIntrinsics {
        PyIntrinsics(self.0.intrinsics)
    }

    #[getter]
    fn true_pose(&self) -> PyPose {
        PyPose(self.0.true_pose)
    }

    #[getter]
    fn perturbed_pose(&self) -> PyPose {
        PyPose(self.0.perturbed_pose)
    }

    fn image(&self) -> Vec<f64> {
        self.0.image.data().to_vec()
    }

    fn point_count(&self) -> usize {
        self.0.frames.iter().map(|f| f.points.len()).sum()
    }

    fn write(&self, directory: PathBuf, scene: Option<PathBuf>) -> PyResult<()> {
        let spec = load_scene(scene)?;
        pipeline::write_case(&directory, &spec, &self.0).map_err(pipeline_err)
    }
}

fn load_scene(scene: Option<PathBuf>) -> PyResult<SceneSpec> {
    match scene {
        Some(path) => SceneSpec::load(&path).map_err(value_err),
        None => Ok(SceneSpec::corridor(0)),
    }
}

#[pyfunction]
#[pyo3(signature = (seed, rot_deg=2.0, trans_m=0.05, range_noise=0.0, image_noise=0.0, scene=None))]
fn generate_case(
    py: Python<'_>,
    seed: u64,
    rot_deg: f64,
    trans_m: f64,
    range_noise: f64,
    image_noise: f64,
    scene: Option<PathBuf>,
) -> PyResult<PyCase> {
    let spec = load_scene(scene)?;
    let noise = NoiseModel {
        range_sigma: range_noise,
        image_sigma: image_noise,
    };
    Ok(PyCase(py.detach(|| synthetic_bench::generate_case(&spec, seed, rot_deg, trans_m, &noise))))
}

#[pyclass(name = "Report", module = "edgereg_py", frozen)]
struct PyReport(SolveReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn pose(&self) -> PyPose {
        PyPose(self.0.pose)
    }

    #[getter]
    fn initial_pose(&self) -> PyPose {
        PyPose(self.0.initial_pose)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn termination(&self) -> String {
        self.0.termination.to_string()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[getter]
    fn initial_cost(&self) -> f64 {
        self.0.initial_cost
    }

    #[getter]
    fn final_cost(&self) -> f64 {
        self.0.final_cost
    }

    #[getter]
    fn active_residuals(&self) -> usize {
        self.0.active_residuals
    }

    #[getter]
    fn total_features(&self) -> usize {
        self.0.total_features
    }

    fn to_kv(&self) -> String {
        self.0.to_kv()
    }
}

/// Registers a generated case from its perturbed pose.
#[pyfunction]
#[pyo3(signature = (case, loss="huber", loss_scale=3.0))]
fn register_case(py: Python<'_>, case: &PyCase, loss: &str, loss_scale: f64) -> PyResult<PyReport> {
    let kind: LossKind = loss.parse().map_err(value_err)?;
    let params = PipelineParams {
        loss: RobustLoss { kind, scale: loss_scale },
        ..PipelineParams::default()
    };
    let c = &case.0;
    let result = py.detach(|| {
        let features = aggregate_features(&c.frames, &params.split);
        let lidar = LidarInput {
            frames: &c.frames,
            features: &features,
        };
        pipeline::register(&c.image, &c.intrinsics, &c.perturbed_pose, &lidar, &params)
    });
    result.map(|r| PyReport(r.report)).map_err(pipeline_err)
}

/// Registers world points against an image; the points serve both as
/// features and as depth samples.
#[pyfunction]
fn register_points(
    py: Python<'_>,
    width: usize,
    height: usize,
    image: Vec<f64>,
    intrinsics: &PyIntrinsics,
    initial_pose: &PyPose,
    points: Vec<[f64; 3]>,
) -> PyResult<PyReport> {
    let img = gray(width, height, image)?;
    let pts: Vec<Point3> = points.into_iter().map(Point3::from).collect();
    let frames = vec![LidarFrame::new(0, pts.clone())];
    let features = FeatureSet::from_points(0, &pts);
    let (intr, pose0) = (intrinsics.0, initial_pose.0);
    let result = py.detach(|| {
        let lidar = LidarInput {
            frames: &frames,
            features: &features,
        };
        pipeline::register(&img, &intr, &pose0, &lidar, &PipelineParams::default())
    });
    result.map(|r| PyReport(r.report)).map_err(pipeline_err)
}

/// Runs `register <config>`; returns the exit status and the report.
#[pyfunction]
fn run_register(py: Python<'_>, config: PathBuf) -> PyResult<(u8, PyReport)> {
    let result = py.detach(|| pipeline::run_register(&config));
    match result {
        Ok((code, report)) => Ok((code, PyReport(report))),
        Err(e) => Err(pipeline_err(e)),
    }
}

/// Runs `bench <config>`; returns the CSV path.
#[pyfunction]
fn run_bench(py: Python<'_>, config: PathBuf) -> PyResult<PathBuf> {
    let result = py.detach(|| pipeline::run_bench(&config));
    result.map(|(path, _)| path).map_err(pipeline_err)
}

#[pymodule]
fn edgereg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyCostMap>()?;
    m.add_class::<PyCase>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(detect_edges, m)?)?;
    m.add_function(wrap_pyfunction!(generate_case, m)?)?;
    m.add_function(wrap_pyfunction!(register_case, m)?)?;
    m.add_function(wrap_pyfunction!(register_points, m)?)?;
    m.add_function(wrap_pyfunction!(run_register, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}

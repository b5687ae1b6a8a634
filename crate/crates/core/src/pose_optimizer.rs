//! Pose refinement against the edge cost map.
//!
//! Every active feature contributes one scalar residual: the cost-map value at
//! its projection. The robustified objective `Σ ρ(r_i²)` is minimized with
//! Levenberg–Marquardt over the 6-dof left tangent of [`Pose`], using
//! iteratively reweighted normal equations (`w_i = ρ'(r_i²)`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix6, RowVector6, Vector6};
use rayon::prelude::*;
use thiserror::Error;

use crate::cost_map::CostMap;
use crate::depth_occlusion::{visible, DepthMap, Visibility, VisibilityParams};
use crate::geometry::{project_jacobian, project_world, CameraIntrinsics, Pixel, Point3, Pose};
use crate::lidar_features::FeatureSet;

/// Fewest residuals that can pin down six degrees of freedom.
pub const MIN_RESIDUALS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("only {active} residuals survive culling, need at least {required}")]
    InsufficientResiduals { active: usize, required: usize },
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
    #[error("report parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Huber,
    Cauchy,
    None,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Huber => "huber",
            LossKind::Cauchy => "cauchy",
            LossKind::None => "none",
        })
    }
}

impl FromStr for LossKind {
    type Err = OptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "huber" => Ok(LossKind::Huber),
            "cauchy" => Ok(LossKind::Cauchy),
            "none" => Ok(LossKind::None),
            other => Err(OptimizerError::InvalidLoss(format!("unknown loss {other:?}"))),
        }
    }
}

/// Robust loss on the squared residual `s = r²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLoss {
    pub kind: LossKind,
    /// Residual scale in pixels.
    pub scale: f64,
}

impl Default for RobustLoss {
    fn default() -> Self {
        Self {
            kind: LossKind::Huber,
            scale: 3.0,
        }
    }
}

impl RobustLoss {
    pub fn none() -> Self {
        Self {
            kind: LossKind::None,
            scale: 1.0,
        }
    }

    pub fn huber(scale: f64) -> Self {
        Self {
            kind: LossKind::Huber,
            scale,
        }
    }

    pub fn cauchy(scale: f64) -> Self {
        Self {
            kind: LossKind::Cauchy,
            scale,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.kind != LossKind::None && !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(OptimizerError::InvalidLoss(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// `(ρ(s), ρ'(s))`.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        let a2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => (s, 1.0),
            LossKind::Huber => {
                if s <= a2 {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * self.scale * r - a2, self.scale / r)
                }
            }
            LossKind::Cauchy => {
                let q = 1.0 + s / a2;
                (a2 * q.ln(), 1.0 / q)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Damping above this means the normal equations cannot be recovered.
    pub max_lambda: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-8,
            cost_tolerance: 1e-10,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_lambda: 1e16,
        }
    }
}

/// Features dropped while building a problem, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CullCounts {
    pub behind_camera: usize,
    pub out_of_frustum: usize,
    pub no_depth: usize,
    pub occluded: usize,
    /// Projected at or beyond the truncation radius.
    pub saturated: usize,
}

impl CullCounts {
    pub fn total(&self) -> usize {
        self.behind_camera + self.out_of_frustum + self.no_depth + self.occluded + self.saturated
    }
}

/// A fixed set of residuals ready to solve.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub points: Vec<Point3>,
    /// Index of each active point in the input feature set.
    pub source_index: Vec<usize>,
    pub cost_map: CostMap,
    pub intrinsics: CameraIntrinsics,
    pub initial_pose: Pose,
    pub loss: RobustLoss,
    pub settings: SolverSettings,
    pub culled: CullCounts,
    pub total_features: usize,
}

/// Keeps features that are visible at `pose0` and project below truncation.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    features: &FeatureSet,
    pose0: &Pose,
    intr: &CameraIntrinsics,
    cost_map: &CostMap,
    depth_map: &DepthMap,
    visibility: &VisibilityParams,
    loss: RobustLoss,
    settings: SolverSettings,
) -> Result<RegistrationProblem, OptimizerError> {
    loss.validate()?;
    let mut culled = CullCounts::default();
    let mut points = Vec::new();
    let mut source_index = Vec::new();
    for (i, f) in features.features.iter().enumerate() {
        let pixel = match visible(&f.point, pose0, intr, depth_map, visibility) {
            Visibility::Visible { pixel, .. } => pixel,
            Visibility::BehindCamera => {
                culled.behind_camera += 1;
                continue;
            }
            Visibility::OutOfFrustum => {
                culled.out_of_frustum += 1;
                continue;
            }
            Visibility::NoDepth => {
                culled.no_depth += 1;
                continue;
            }
            Visibility::Occluded { .. } => {
                culled.occluded += 1;
                continue;
            }
        };
        match cost_map.sample(&pixel) {
            Err(_) => culled.out_of_frustum += 1,
            Ok(c) if c >= cost_map.truncation() => culled.saturated += 1,
            Ok(_) => {
                points.push(f.point);
                source_index.push(i);
            }
        }
    }
    if points.len() < MIN_RESIDUALS {
        return Err(OptimizerError::InsufficientResiduals {
            active: points.len(),
            required: MIN_RESIDUALS,
        });
    }
    Ok(RegistrationProblem {
        points,
        source_index,
        cost_map: cost_map.clone(),
        intrinsics: *intr,
        initial_pose: *pose0,
        loss,
        settings,
        culled,
        total_features: features.len(),
    })
}

impl RegistrationProblem {
    pub fn active_count(&self) -> usize {
        self.points.len()
    }

    /// Residual and Jacobian row of one point; clamped to `τ` with a zero row
    /// when the projection leaves the map.
    fn evaluate_point(&self, pose: &Pose, p: &Point3) -> (f64, RowVector6<f64>) {
        let tau = self.cost_map.truncation();
        let clamped = (tau, RowVector6::zeros());
        let Ok(proj) = project_world(&self.intrinsics, pose, p) else {
            return clamped;
        };
        let (Ok(r), Ok(g)) = (
            self.cost_map.sample(&proj.pixel),
            self.cost_map.sample_gradient(&proj.pixel),
        ) else {
            return clamped;
        };
        let Ok(jp) = project_jacobian(&self.intrinsics, pose, p) else {
            return clamped;
        };
        let row = jp.row(0) * g[0] + jp.row(1) * g[1];
        (r, row)
    }

    /// Residual vector and N×6 Jacobian at `pose`.
    pub fn residual_and_jacobian(&self, pose: &Pose) -> (DVector<f64>, DMatrix<f64>) {
        let rows: Vec<(f64, RowVector6<f64>)> = self
            .points
            .par_iter()
            .map(|p| self.evaluate_point(pose, p))
            .collect();
        let n = rows.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 6);
        for (i, (ri, row)) in rows.into_iter().enumerate() {
            r[i] = ri;
            j.row_mut(i).copy_from(&row);
        }
        (r, j)
    }

    /// Residuals only.
    pub fn residuals(&self, pose: &Pose) -> Vec<f64> {
        self.points
            .par_iter()
            .map(|p| self.evaluate_point(pose, p).0)
            .collect()
    }

    /// `Σ ρ(r_i²)`, summed in feature order.
    pub fn robust_cost(&self, residuals: &[f64]) -> f64 {
        residuals.iter().map(|r| self.loss.evaluate(r * r).0).sum()
    }

    /// Projected pixel of each active point at `pose`, `None` when not imageable.
    pub fn projections(&self, pose: &Pose) -> Vec<Option<Pixel>> {
        self.points
            .iter()
            .map(|p| project_world(&self.intrinsics, pose, p).ok().map(|pr| pr.pixel))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTolerance,
    CostTolerance,
    ZeroCost,
    MaxIterations,
    NumericalFailure,
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(
            self,
            Termination::StepTolerance | Termination::CostTolerance | Termination::ZeroCost
        )
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::StepTolerance => "step_tolerance",
            Termination::CostTolerance => "cost_tolerance",
            Termination::ZeroCost => "zero_cost",
            Termination::MaxIterations => "max_iterations",
            Termination::NumericalFailure => "numerical_failure",
        })
    }
}

impl FromStr for Termination {
    type Err = OptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "step_tolerance" => Termination::StepTolerance,
            "cost_tolerance" => Termination::CostTolerance,
            "zero_cost" => Termination::ZeroCost,
            "max_iterations" => Termination::MaxIterations,
            "numerical_failure" => Termination::NumericalFailure,
            other => return Err(OptimizerError::Parse(format!("unknown termination {other:?}"))),
        })
    }
}

/// One LM iteration as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Cost after the iteration (unchanged when the step was rejected).
    pub cost: f64,
    pub step_norm: f64,
    pub lambda: f64,
    pub accepted: bool,
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter {:3}  cost {:.6e}  step {:.3e}  lambda {:.1e}  {}",
            self.iteration,
            self.cost,
            self.step_norm,
            self.lambda,
            if self.accepted { "accepted" } else { "rejected" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial_pose: Pose,
    pub pose: Pose,
    /// Robustified cost, pixels².
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub active_residuals: usize,
    pub total_features: usize,
    pub culled: CullCounts,
    pub converged: bool,
    pub termination: Termination,
    pub history: Vec<IterationLog>,
}

/// Damped normal equations `(H + λ D) δ = -g` with `D = diag(H)` floored.
fn damped_step(h: &Matrix6<f64>, g: &Vector6<f64>, lambda: f64) -> Option<Vector6<f64>> {
    let max_diag = h.diagonal().max().max(1.0);
    let mut a = *h;
    for k in 0..6 {
        a[(k, k)] += lambda * h[(k, k)].max(1e-12 * max_diag);
    }
    let step = a.cholesky()?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Levenberg–Marquardt over the tangent space of the pose.
pub fn solve(problem: &RegistrationProblem) -> SolveReport {
    let s = &problem.settings;
    let mut pose = problem.initial_pose;
    let (mut r, mut j) = problem.residual_and_jacobian(&pose);
    let initial_cost = problem.robust_cost(r.as_slice());
    let mut cost = initial_cost;
    let mut lambda = s.initial_lambda;
    let mut iterations = 0;
    let mut history = Vec::new();

    let termination = loop {
        if cost == 0.0 {
            break Termination::ZeroCost;
        }
        if iterations >= s.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for i in 0..r.len() {
            let w = problem.loss.evaluate(r[i] * r[i]).1;
            let row = Vector6::from_iterator(j.row(i).iter().copied());
            h += w * row * row.transpose();
            g += w * r[i] * row;
        }
        if g.iter().all(|v| *v == 0.0) {
            history.push(IterationLog {
                iteration: iterations,
                cost,
                step_norm: 0.0,
                lambda,
                accepted: false,
            });
            break Termination::StepTolerance;
        }

        let Some(step) = damped_step(&h, &g, lambda) else {
            lambda *= s.lambda_up;
            history.push(IterationLog {
                iteration: iterations,
                cost,
                step_norm: f64::NAN,
                lambda,
                accepted: false,
            });
            if lambda > s.max_lambda {
                break Termination::NumericalFailure;
            }
            continue;
        };
        let step_norm = step.norm();
        if step_norm < s.step_tolerance {
            history.push(IterationLog {
                iteration: iterations,
                cost,
                step_norm,
                lambda,
                accepted: false,
            });
            break Termination::StepTolerance;
        }

        let candidate = pose.retract(&step);
        let (r_new, j_new) = problem.residual_and_jacobian(&candidate);
        let new_cost = problem.robust_cost(r_new.as_slice());
        if new_cost.is_finite() && new_cost < cost {
            let decrease = (cost - new_cost) / cost;
            pose = candidate;
            r = r_new;
            j = j_new;
            cost = new_cost;
            lambda = (lambda * s.lambda_down).max(1e-15);
            history.push(IterationLog {
                iteration: iterations,
                cost,
                step_norm,
                lambda,
                accepted: true,
            });
            log::debug!("{}", history.last().unwrap());
            if decrease < s.cost_tolerance {
                break Termination::CostTolerance;
            }
        } else {
            lambda *= s.lambda_up;
            history.push(IterationLog {
                iteration: iterations,
                cost,
                step_norm,
                lambda,
                accepted: false,
            });
            log::debug!("{}", history.last().unwrap());
            if lambda > s.max_lambda {
                break Termination::NumericalFailure;
            }
        }
    };

    SolveReport {
        initial_pose: problem.initial_pose,
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
        active_residuals: problem.active_count(),
        total_features: problem.total_features,
        culled: problem.culled,
        converged: termination.is_converged(),
        termination,
        history,
    }
}

impl SolveReport {
    /// Flat `key = value` text, one entry per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let c = &self.culled;
        let entries: [(&str, String); 15] = [
            ("converged", self.converged.to_string()),
            ("termination", self.termination.to_string()),
            ("iterations", self.iterations.to_string()),
            ("initial_cost", format!("{:?}", self.initial_cost)),
            ("final_cost", format!("{:?}", self.final_cost)),
            ("total_features", self.total_features.to_string()),
            ("active_residuals", self.active_residuals.to_string()),
            ("culled_behind_camera", c.behind_camera.to_string()),
            ("culled_out_of_frustum", c.out_of_frustum.to_string()),
            ("culled_no_depth", c.no_depth.to_string()),
            ("culled_occluded", c.occluded.to_string()),
            ("culled_saturated", c.saturated.to_string()),
            ("initial_pose", self.initial_pose.to_string()),
            ("final_pose", self.pose.to_string()),
            ("history_length", self.history.len().to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parses [`SolveReport::to_kv`] output. The iteration history is not
    /// stored in the file and comes back empty.
    pub fn from_kv(text: &str) -> Result<Self, OptimizerError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| OptimizerError::Parse(format!("line {}: missing '='", n + 1)))?;
            map.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        fn get<'a>(map: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str, OptimizerError> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| OptimizerError::Parse(format!("missing key {k}")))
        }
        fn num<T: FromStr>(map: &BTreeMap<String, String>, k: &str) -> Result<T, OptimizerError> {
            get(map, k)?
                .parse()
                .map_err(|_| OptimizerError::Parse(format!("bad value for {k}")))
        }
        let pose = |k: &str| -> Result<Pose, OptimizerError> {
            get(&map, k)?
                .parse()
                .map_err(|e| OptimizerError::Parse(format!("{k}: {e}")))
        };
        Ok(Self {
            initial_pose: pose("initial_pose")?,
            pose: pose("final_pose")?,
            initial_cost: num(&map, "initial_cost")?,
            final_cost: num(&map, "final_cost")?,
            iterations: num(&map, "iterations")?,
            active_residuals: num(&map, "active_residuals")?,
            total_features: num(&map, "total_features")?,
            culled: CullCounts {
                behind_camera: num(&map, "culled_behind_camera")?,
                out_of_frustum: num(&map, "culled_out_of_frustum")?,
                no_depth: num(&map, "culled_no_depth")?,
                occluded: num(&map, "culled_occluded")?,
                saturated: num(&map, "culled_saturated")?,
            },
            converged: num(&map, "converged")?,
            termination: get(&map, "termination")?.parse()?,
            history: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::EdgeMap;
    use crate::lidar_features::FeatureSet;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 80.0, 60.0, 160, 120).unwrap()
    }

    /// Back-projects the given edge pixels to depth `z` so the identity pose
    /// lands every feature exactly on an edge node.
    fn exact_scene(edge_px: &[(usize, usize)], depth_of: impl Fn(usize) -> f64) -> (FeatureSet, CostMap) {
        let k = intr();
        let edges = EdgeMap::from_pixels(k.width, k.height, edge_px);
        let map = CostMap::build(&edges, 50.0).unwrap();
        let pts: Vec<Point3> = edge_px
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let z = depth_of(i);
                Point3::from(k.ray(&Pixel::new(x as f64, y as f64)) * z)
            })
            .collect();
        (FeatureSet::from_points(0, &pts), map)
    }

    fn dense_depth() -> DepthMap {
        let k = intr();
        DepthMap::from_options(k.width, k.height, &vec![Some(100.0); k.width * k.height])
    }

    /// Edges along several lines of different orientation.
    fn line_edges() -> Vec<(usize, usize)> {
        let mut px = Vec::new();
        for t in 10..150 {
            px.push((t, 30));
            px.push((t, 95));
        }
        for t in 10..110 {
            px.push((25, t));
            px.push((130, t));
            if t + 20 < 160 {
                px.push((t + 20, t));
            }
        }
        px.sort();
        px.dedup();
        px
    }

    fn line_problem(loss: RobustLoss) -> (RegistrationProblem, FeatureSet) {
        let edges = line_edges();
        let pick: Vec<(usize, usize)> = edges.iter().step_by(7).cloned().collect();
        let (features, _) = exact_scene(&pick, |i| 3.0 + (i % 5) as f64);
        let k = intr();
        let map = CostMap::build(&EdgeMap::from_pixels(k.width, k.height, &edges), 50.0).unwrap();
        let problem = build_problem(
            &features,
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            loss,
            SolverSettings::default(),
        )
        .unwrap();
        (problem, features)
    }

    #[test]
    fn loss_functions_basic_shape() {
        for loss in [RobustLoss::huber(3.0), RobustLoss::cauchy(3.0), RobustLoss::none()] {
            assert_eq!(loss.evaluate(0.0), (0.0, 1.0));
            let mut prev = 0.0;
            let mut prev_d = f64::INFINITY;
            for i in 1..200 {
                let s = i as f64 * 0.5;
                let (rho, d) = loss.evaluate(s);
                assert!(rho > prev && d <= prev_d + 1e-15 && d > 0.0);
                // finite-difference check of ρ'
                let h = 1e-6;
                let fd = (loss.evaluate(s + h).0 - loss.evaluate(s - h).0) / (2.0 * h);
                assert!((fd - d).abs() < 1e-6);
                prev = rho;
                prev_d = d;
            }
        }
        assert!(RobustLoss::huber(0.0).validate().is_err());
        assert!("tukey".parse::<LossKind>().is_err());
    }

    #[test]
    fn all_behind_camera_is_insufficient() {
        let k = intr();
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64 * 0.1, 0.0, -3.0)).collect();
        let map = CostMap::build(&EdgeMap::from_pixels(k.width, k.height, &[(5, 5)]), 50.0).unwrap();
        let err = build_problem(
            &FeatureSet::from_points(0, &pts),
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            RobustLoss::default(),
            SolverSettings::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            OptimizerError::InsufficientResiduals {
                active: 0,
                required: 6
            }
        );
    }

    #[test]
    fn exact_features_have_zero_residual() {
        let (problem, _) = line_problem(RobustLoss::default());
        let r = problem.residuals(&Pose::identity());
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn partition_of_features() {
        let k = intr();
        let (mut features, map) = exact_scene(&line_edges(), |_| 4.0);
        // add some behind-camera, off-image and occluded points
        features.features.extend(FeatureSet::from_points(1, &[
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(50.0, 0.0, 1.0),
            Point3::new(0.0, 0.0, 500.0),
        ]).features);
        let problem = build_problem(
            &features,
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            RobustLoss::default(),
            SolverSettings::default(),
        )
        .unwrap();
        assert_eq!(problem.active_count() + problem.culled.total(), features.len());
        assert_eq!(problem.culled.behind_camera, 1);
        assert_eq!(problem.culled.out_of_frustum, 1);
        assert_eq!(problem.culled.occluded, 1);
    }

    #[test]
    fn saturated_features_are_dropped() {
        let k = intr();
        let map = CostMap::build(&EdgeMap::from_pixels(k.width, k.height, &[(0, 0)]), 20.0).unwrap();
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(Point3::from(k.ray(&Pixel::new(2.0 + i as f64, 3.0)) * 5.0));
            pts.push(Point3::from(k.ray(&Pixel::new(100.0, 50.0 + i as f64)) * 5.0));
        }
        let problem = build_problem(
            &FeatureSet::from_points(0, &pts),
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            RobustLoss::default(),
            SolverSettings::default(),
        )
        .unwrap();
        assert_eq!(problem.active_count(), 10);
        assert_eq!(problem.culled.saturated, 10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (problem, _) = line_problem(RobustLoss::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-7;
        let mut compared = 0;
        for _ in 0..30 {
            let d0 = Vector6::from_fn(|k, _| {
                if k < 3 {
                    rng.random_range(-0.01..0.01)
                } else {
                    rng.random_range(-0.02..0.02)
                }
            });
            let pose = Pose::identity().retract(&d0);
            let (_, j) = problem.residual_and_jacobian(&pose);
            for (i, p) in problem.points.iter().enumerate() {
                // skip points sitting within reach of a cell boundary
                let Ok(proj) = project_world(&problem.intrinsics, &pose, p) else { continue };
                let fu = proj.pixel.u.fract();
                let fv = proj.pixel.v.fract();
                if fu < 0.02 || fu > 0.98 || fv < 0.02 || fv > 0.98 {
                    continue;
                }
                let single = |q: &Pose| problem.evaluate_point(q, p).0;
                for c in 0..6 {
                    let mut d = Vector6::zeros();
                    d[c] = h;
                    let fd = (single(&pose.retract(&d)) - single(&pose.retract(&(-d)))) / (2.0 * h);
                    let scale = j.row(i).norm().max(1e-6);
                    assert!((fd - j[(i, c)]).abs() / scale < 1e-3, "{fd} vs {}", j[(i, c)]);
                }
                compared += 1;
            }
        }
        assert!(compared > 100);
    }

    #[test]
    fn positive_directional_derivative_on_rising_cost() {
        // cost grows with u everywhere: a single edge column at the left border
        let k = intr();
        let edges: Vec<(usize, usize)> = (0..k.height).map(|y| (0, y)).collect();
        let map = CostMap::build(&EdgeMap::from_pixels(k.width, k.height, &edges), 200.0).unwrap();
        let pts: Vec<Point3> = (0..10)
            .map(|i| Point3::from(k.ray(&Pixel::new(40.5 + 3.0 * i as f64, 30.5 + 4.0 * i as f64)) * 4.0))
            .collect();
        let problem = build_problem(
            &FeatureSet::from_points(0, &pts),
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            RobustLoss::none(),
            SolverSettings::default(),
        )
        .unwrap();
        let (r0, j) = problem.residual_and_jacobian(&Pose::identity());
        // one pixel along +u at depth 4 is 4/fx metres along +x
        let step = Vector6::new(0.0, 0.0, 0.0, 4.0 / k.fx, 0.0, 0.0);
        let dir = &j * step;
        assert!(dir.iter().all(|d| *d > 0.0));
        let r1 = problem.residuals(&Pose::identity().retract(&step));
        for i in 0..r0.len() {
            assert!(r1[i] > r0[i]);
        }
    }

    #[test]
    fn solve_at_optimum_stops_immediately() {
        let (problem, _) = line_problem(RobustLoss::default());
        let report = solve(&problem);
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert!(report.pose.rotation_distance(&Pose::identity()) < 1e-9);
        assert!(report.pose.center_distance(&Pose::identity()) < 1e-9);
        assert!(report.final_cost < 1e-18);
    }

    fn perturbed(problem: &RegistrationProblem, seed: u64) -> RegistrationProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Vector6::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
        );
        let mut p = problem.clone();
        p.initial_pose = Pose::identity().retract(&d);
        p
    }

    #[test]
    fn solve_recovers_small_perturbation() {
        let (problem, _) = line_problem(RobustLoss::default());
        for seed in 0..5 {
            let p = perturbed(&problem, seed);
            let report = solve(&p);
            assert!(report.final_cost <= report.initial_cost);
            let rot = report.pose.rotation_distance(&Pose::identity()).to_degrees();
            let trans = report.pose.center_distance(&Pose::identity());
            assert!(rot < 0.2, "seed {seed}: rotation error {rot}");
            assert!(trans < 0.02, "seed {seed}: translation error {trans}");
            // monotone accepted steps, unit quaternion
            let mut last = report.initial_cost;
            for it in report.history.iter().filter(|h| h.accepted) {
                assert!(it.cost <= last);
                last = it.cost;
            }
            assert!((report.pose.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let (problem, _) = line_problem(RobustLoss::default());
        let p = perturbed(&problem, 9);
        assert_eq!(solve(&p), solve(&p));
    }

    #[test]
    fn scaling_residuals_keeps_minimizer() {
        let (problem, _) = line_problem(RobustLoss::none());
        let p = perturbed(&problem, 3);
        let mut scaled = p.clone();
        let m = &p.cost_map;
        scaled.cost_map = CostMap::from_grid(
            m.width(),
            m.height(),
            m.grid().iter().map(|c| c * 4.0).collect(),
            m.truncation() * 4.0,
        )
        .unwrap();
        let a = solve(&p);
        let b = solve(&scaled);
        assert!(a.pose.rotation_distance(&b.pose) < 1e-6);
        assert!(a.pose.center_distance(&b.pose) < 1e-6);
    }

    #[test]
    fn singular_normal_equations_reported() {
        // every Jacobian row identical: rank one, can only be damped away
        let k = intr();
        let edges: Vec<(usize, usize)> = (0..k.height).map(|y| (0, y)).collect();
        let map = CostMap::build(&EdgeMap::from_pixels(k.width, k.height, &edges), 200.0).unwrap();
        let pts = vec![Point3::new(0.0, 0.0, 4.0); 8];
        let mut problem = build_problem(
            &FeatureSet::from_points(0, &pts),
            &Pose::identity(),
            &k,
            &map,
            &dense_depth(),
            &VisibilityParams::default(),
            RobustLoss::none(),
            SolverSettings::default(),
        )
        .unwrap();
        problem.settings.max_iterations = 200;
        let report = solve(&problem);
        // the rank-deficient system is still damped into a valid descent
        assert!(report.final_cost <= report.initial_cost);
        assert!((report.pose.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_round_trip() {
        let (problem, _) = line_problem(RobustLoss::default());
        let report = solve(&perturbed(&problem, 1));
        let back = SolveReport::from_kv(&report.to_kv()).unwrap();
        assert_eq!(back.pose, report.pose);
        assert_eq!(back.final_cost, report.final_cost);
        assert_eq!(back.culled, report.culled);
        assert_eq!(back.termination, report.termination);
        assert!(SolveReport::from_kv("converged = maybe").is_err());
    }

    #[test]
    fn rotation_about_axis_helper_consistent() {
        // sanity on the perturbation helper used above
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.01, 0.0));
        let p = Pose::new(q, Vector3::zeros());
        assert!((p.rotation_distance(&Pose::identity()) - 0.01).abs() < 1e-12);
    }
}

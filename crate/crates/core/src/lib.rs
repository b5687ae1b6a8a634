//! Targetless LiDAR-camera extrinsic registration by aligning projected LiDAR
//! corner features with image edges.

pub mod config;
pub mod cost_map;
pub mod depth_occlusion;
pub mod geometry;
pub mod imaging;
pub mod lidar_features;
pub mod pose_optimizer;
pub mod synthetic_bench;
pub mod io;
pub mod pipeline;

//! Visual localization on a Gaussian-splatting map: reconstruction from posed
//! RGB-D keyframes, a distilled 3D descriptor field, saliency-driven landmark
//! selection, and RANSAC + PnP pose estimation.

mod binio;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod keyframe;
pub mod landmarks;
pub mod localize;
pub mod mapper;
pub mod maps;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod spatial;
pub mod synth;
pub mod volume;

pub use geometry::{CameraIntrinsics, Pose};
pub use keyframe::{FeatureMap, KeyframeRecord};
pub use scene::{GaussianPrimitive, SceneBounds, SceneModel};

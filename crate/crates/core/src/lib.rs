//! Face-mask detection toolkit.
//!
//! - [`geometry`]: boxes, IoU, greedy NMS
//! - [`yolo_head`]: grid-tensor decoding and box encoding
//! - [`loss`]: weighted classification/objectness/box loss with gradients
//! - [`fewshot`]: Mahalanobis few-shot head and episodic evaluation
//! - [`dataset`]: VOC annotations, face slices, undersampling, splits
//! - [`augment`]: seeded geometric and photometric augmentation
//! - [`train_config`]: Darknet-style config files and the LR schedule
//! - [`metrics`]: matching, precision/recall/F1, speed, report tables
//! - [`video`]: raw video streams, frame skipping, tracking, annotation
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for common uses.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod fewshot;
pub mod geometry;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod scalar;
pub mod train_config;
pub mod video;
pub mod yolo_head;

pub use error::{Error, Result};
pub use image::RgbImage;
pub use scalar::Real;

pub type BBox32 = geometry::BBox<f32>;
pub type BBox64 = geometry::BBox<f64>;
pub type Detection32 = geometry::Detection<f32>;
pub type Detection64 = geometry::Detection<f64>;
pub type GridTensor32 = yolo_head::GridTensor<f32>;
pub type GridTensor64 = yolo_head::GridTensor<f64>;
pub type AnchorSet32 = yolo_head::AnchorSet<f32>;
pub type AnchorSet64 = yolo_head::AnchorSet<f64>;
pub type LossWeights32 = loss::LossWeights<f32>;
pub type LossWeights64 = loss::LossWeights<f64>;
pub type LossComponents32 = loss::LossComponents<f32>;
pub type LossComponents64 = loss::LossComponents<f64>;
pub type ClassStatistics32 = fewshot::ClassStatistics<f32>;
pub type ClassStatistics64 = fewshot::ClassStatistics<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;

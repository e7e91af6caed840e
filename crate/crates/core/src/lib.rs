//! Floor-level line recognition machinery.
//!
//! The crate covers everything around the segmentation network: synthetic
//! sample generation by warping rectified facades onto street-view quads,
//! dataset statistics, a small verified height-attention kernel, the
//! geometry post-processing that turns two segmentation masks into
//! vanishing-point-consistent floor-level lines, and the evaluation metrics.

pub mod attention;
pub mod augment;
pub mod config;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod overlay;
pub mod palette;
pub mod postprocess;
pub mod stats;

mod linalg;

pub use config::RunConfig;
pub use geometry::{
    apply_homography, homography_from_points, homography_from_quads, invert_homography, warp_mask, GeometryError,
    Homography, LabelMask, Line5Tuple, Orientation, Point2, Quad,
};
pub use io::{FacadeLines, LinesDocument};
pub use postprocess::{run_pipeline, PipelineConfig, PipelineResult};

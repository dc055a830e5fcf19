#![cfg_attr(not(feature = "std"), no_std)]
//! Detection of chequerboard calibration grids in low-resolution
//! amplitude/range image pairs, such as those produced by time-of-flight
//! cameras.
//!
//! The projection of a chequerboard is a pair of line pencils. The detector
//! recovers both pencils directly, instead of hunting for individual
//! corners, which makes it robust to the sampling artefacts that break
//! corner-based heuristics at resolutions like 176x144. The stages are:
//!
//! 1. **Preprocess** - depth-band segmentation, perimeter erosion, and
//!    central-difference gradients ([`preprocess`]).
//! 2. **Cluster** - each gradient pixel is assigned to one of the two edge
//!    orientation families via the double-angle map, by principal-component
//!    or RANSAC classification ([`cluster`]).
//! 3. **Local frame** - a board-centred, board-aligned coordinate system
//!    ([`frame`]).
//! 4. **Hough transform** - one Cartesian (intercept/slope) accumulator per
//!    family ([`hough`]).
//! 5. **Sweep** - a dual line swept through each accumulator finds the
//!    collinear peak set of each pencil ([`sweep`]).
//! 6. **Verify** - interval-ratio and transition-ratio acceptance tests,
//!    then subpixel refinement of the vertices ([`verify`]).
//!
//! [`pipeline::detect`] runs the whole chain; [`synth`] renders
//! ground-truthed scenes for evaluation, and [`metrics`] measures geometric
//! and photometric error against the ideal grid.
//!
//! The crate is `no_std`-compatible (with `alloc`) when built without the
//! default `std` feature; file formats and the command-line front end live
//! in the companion `gridline-cli` crate.

extern crate alloc;

pub mod cluster;
pub mod frame;
pub mod geometry;
pub mod hough;
pub mod image;
pub(crate) mod linalg;
pub(crate) mod math;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod sweep;
pub mod synth;
pub mod verify;

pub use cluster::{ClusterModel, Family, LabelMap, Method};
pub use geometry::{GridSpec, HomLine, HomPoint, Pencil, VertexGrid};
pub use image::{AmplitudeImage, DepthImage, MaskedImage};
pub use metrics::Homography;
pub use pipeline::{detect, DetectionResult, DetectorConfig, RejectReason};
pub use preprocess::GradientField;

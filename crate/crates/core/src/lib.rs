//! Global similarity-transform synchronization of 3D point-cloud views.

pub mod acceptance;
pub mod assembly;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod graph;
pub mod ipm;
pub mod refine;
pub mod registration;
pub mod robust;
pub mod sdp;
pub mod simulate;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::SimilarityTransform;
pub use graph::{Correspondence, Edge, Frame, ViewGraph};

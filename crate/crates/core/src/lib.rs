//! Level-set shape optimization of image functionals with shape and
//! topological derivatives.
//!
//! The crate evolves closed curves (2D) and closed surfaces (3D) stored as
//! the zero level of a dense grid. Boundary motion comes from shape
//! derivatives; hole and phase nucleation come from topological derivatives.
//! Both act through a single Hamilton-Jacobi update of the level set.
//!
//! Conventions used throughout:
//! - `phi <= 0` is the interior (foreground), `phi > 0` the exterior.
//! - All derivative fields are *speed oriented*: evolving with
//!   `phi_t = speed * |grad phi|` decreases the functional to first order.

pub mod checks;
pub mod error;
pub mod evolve2d;
pub mod evolve3d;
pub mod grid;
pub mod image;
pub mod math;
pub mod render3d;
pub mod scenarios;
pub mod scene2d;
pub mod vector;

pub use error::{Error, Result};
pub use grid::{ContourSet, LevelSetGrid, Mollifier, TriMesh};
pub use image::ImageBuffer;

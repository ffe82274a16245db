//! Coarse simplicial meshes with newest-vertex bisection, their barycentric
//! dual control volumes, and the periodic cell triangulation.

mod coarse;
mod dual;
mod torus;

pub use coarse::{CoarseMesh, PointLocator, Rect};
pub use dual::{BoundaryFace, DualCell, DualFace, DualMesh, Fragment};
pub use torus::{TorusEdge, TorusMesh};

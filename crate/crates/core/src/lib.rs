//! Localized orthogonal decomposition for heterogeneous curl-curl problems on structured
//! simplicial meshes, with an explicit edge-based Falk–Winther projection.

pub mod assembly;
pub mod error;
pub mod falk_winther;
pub mod fe_spaces;
pub mod harness;
pub mod linsolve;
pub mod lod;
pub mod mesh;
pub mod quadrature;
pub mod sparse;

pub use error::{Error, Result};
pub use fe_spaces::{DofMap, Family, SpaceTag, SparseOperator};
pub use mesh::{Mesh, NestedPair, Patch};
pub use sparse::CsrMatrix;

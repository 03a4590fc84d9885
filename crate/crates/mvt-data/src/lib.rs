//! Procedural multi-view silhouette dataset: parametric solids rendered
//! from an azimuth camera circuit into persisted, checksummed splits,
//! plus a nearest-centroid separability baseline.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod geom;
pub mod render;
pub mod shapes;

pub use dataset::{
    load_manifest, load_split, make_dataset, DatasetConfig, DatasetManifest, SplitInfo, ViewSet,
};
pub use error::{DataError, Result};
pub use shapes::{ShapeCategory, ShapeSpec, CLASS_NAMES};

//! Synthetic shapes, labeled datasets, and point-cloud file formats.

pub mod dataset;
pub mod io;
pub mod shapes;

pub use dataset::{load_dataset_dir, make_dataset, DatasetSplits, LabeledCloud, LabeledDataset, Split};
pub use io::{load_off, load_xyz, parse_off, parse_xyz, save_xyz, write_xyz, TriMesh};
pub use shapes::{gen_shape, sample_surface, ShapeFamily, ShapeKind};

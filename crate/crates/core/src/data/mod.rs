//! Synthetic phantoms, intensity preprocessing, the on-disk volume
//! container and support/query slice matching.

pub mod container;
pub mod phantom;
pub mod preprocess;
pub mod slice_match;

pub use container::{load_dataset, load_volume, save_dataset, save_volume};
pub use phantom::{generate_phantoms, IntensityProfile, OrganShape, PhantomSpec};
pub use preprocess::{ingest, preprocess_ct, preprocess_mr};
pub use slice_match::{build_slice_match, SliceMatchPlan};

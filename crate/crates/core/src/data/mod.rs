//! Dynamic text-attributed graph data: storage, file formats, synthetic
//! generation, chronological splits, history indexes and sampling.

mod dataset;
pub mod dtgb;
pub mod io;
mod history;
mod sampling;
mod split;
pub mod synthetic;

pub use dataset::{DyTagDataset, InteractionEvent};
pub use dtgb::convert_dtgb;
pub use history::{History, HistoryEntry, HistoryIndex};
pub use io::{load_dataset, load_dataset_dir, write_dataset_dir};
pub use sampling::{build_candidate_pool, sample_negative, CandidatePool, RetrievalQuery};
pub use split::{chronological_split, DatasetSplits, Setting, Split, DEFAULT_RATIOS};
pub use synthetic::{generate_synthetic, SyntheticConfig};

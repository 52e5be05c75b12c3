//! Dataset files and the round-by-round model store.

pub mod dataset;
pub mod store;

pub use dataset::{load_stream, parse_phase, parse_phase_str, serialize_phase, write_phase, write_stream};
pub use store::{load_latest, load_round, save_round, RoundMeta, FORMAT_VERSION};

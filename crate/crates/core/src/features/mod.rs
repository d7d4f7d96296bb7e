//! Feature providers: the synthetic generator and `FPK1` packs.

mod dataset;
pub mod pack;
mod synth;

pub use dataset::{ClassRecord, FeatureDataset, FeatureVideo, DataOrigin};
pub use pack::{read_feature_pack, write_feature_pack};
pub use synth::{generate_synthetic, order_pair_patterns, pattern_name, SpatialJitter, SynthSpec, TemporalMode};

//! Shared data model and file formats: item ids, embeddings, distance matrices,
//! triplet judgments, feature containers, and planted synthetic corpora.

mod distance;
mod embedding;
mod features;
mod ids;
mod judgment;
pub mod space;
pub mod synth;

pub use distance::{DistanceMatrix, SYMMETRY_TOL};
pub use embedding::{pairwise_distances, EmbeddingSet, Metric};
pub use embedding::looks_like_embedding;
pub use features::{
    decode as decode_feature_bytes, encode_containers, encode_pairs, load_containers, load_feature_file,
    load_view_pairs, save_containers, save_pairs, FeatureContainer, FeatureFile, ViewPair, WoundMask, MAGIC,
};
pub use ids::{read_id_list, sequential_ids, write_id_list, ItemId};
pub use judgment::{
    judgments_to_jsonl, parse_judgments, read_judgments, synthetic_epoch, write_judgments, Choice, Source,
    TripletJudgment,
};
pub use space::{sample_triplet_space, TripletIndex};
pub use synth::{synth_dataset, SynthConfig, SynthCorpus};

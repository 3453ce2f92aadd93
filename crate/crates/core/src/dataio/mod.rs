//! Image IO, dataset manifests, stitch swatches and the synthetic unpaired corpus.

mod image;
mod manifest;
pub mod demo;
pub mod swatches;
pub mod synth;

pub use demo::{demo_image, DEMO_PNG};
pub use image::Image;
pub use manifest::{build_manifest, list_pngs, split_indices, train_count, DatasetManifest, Domain};
pub use synth::{generate_synthetic_corpus, CorpusLayout, SynthSample, SyntheticCorpus};
pub use swatches::{is_valid_stitch_id, list_swatches, procedural_swatches, write_procedural_swatches, SwatchEntry};

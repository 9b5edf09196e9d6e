//! Datasets: taxonomy, manifests, images, splits, label maps and the
//! synthetic style corpus.

pub mod image;
pub mod labelmap;
pub mod manifest;
pub mod rng;
pub mod split;
pub mod synth;
pub mod taxonomy;

pub use image::{decode_image, decode_pnm, encode_pgm, encode_ppm, resize_bilinear};
pub use labelmap::{remap_labels, LabelMap};
pub use manifest::{parse_manifest, read_manifest, task_labels, write_manifest, SampleRecord};
pub use rng::SplitMix64;
pub use split::{generate_splits, id_list, parse_id_list, Split, SplitReport, SplitSpec, SplitStats};
pub use synth::{synth_style_dataset, SynthConfig, SynthDataset};
pub use taxonomy::{TaskSpec, Taxonomy};

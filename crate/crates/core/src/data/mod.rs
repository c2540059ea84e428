//! File formats, datasets and synthetic scene generation.

pub mod checkpoint;
pub mod dataset;
pub mod heatmap_io;
pub mod labels;
pub mod pgm;
pub mod synth;

pub use checkpoint::{checkpoint_load, checkpoint_save, decode_checkpoint, encode_checkpoint, TensorTable};
pub use dataset::{list_images, load_dataset_dir, load_sample, write_dataset_dir, Dataset, Sample, SplitManifest};
pub use heatmap_io::{decode_raw_heatmap, dump_heatmap, encode_heatmap_pgm, encode_raw_heatmap, HeatmapFormat};
pub use labels::{format_labels, parse_labels};
pub use pgm::{decode_pgm, encode_pgm, quantize, read_image, read_mask, write_image, Image, Pgm};
pub use synth::{synth_dataset, synth_scene, Scene, MIN_SEPARATION};

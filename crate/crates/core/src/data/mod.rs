//! Synthetic data, pseudocoloring, augmentation and dataset assembly.

pub mod augment;
pub mod color;
pub mod ctc;
pub mod dataset;
pub mod io;
pub mod synth;

pub use augment::{augment, resize_to_input, AugmentConfig, Augmentation};
pub use color::{colormap, minmax_normalize, pseudocolor, NCAR_LUT};
pub use ctc::{list_images, load_ctc_sequence, CtcFrame};
pub use dataset::{
    build_dataset, model_input, prepare_example, split_indices, split_sizes, write_dataset, DataConfig, Dataset,
    Example, Manifest, Split,
};
pub use synth::{synth_generate, PlantedCell, SynthConfig, SynthSample};

//! Dataset formats, the synthetic exam generator, patch extraction,
//! augmentation and splitting.

pub mod augment;
pub mod manifest;
pub mod patches;
pub mod pgm;
pub mod split;
pub mod synthetic;

pub use augment::{augment, AugmentParams};
pub use manifest::{
    lesion_class, DatasetKind, Dataset, Entry, Lesion, LesionKind, LesionShape, Manifest, Metadata, Sample,
    MANIFEST_VERSION, PATCH_CLASSES,
};
pub use patches::{extract_patches, patch_dataset, write_patches, PatchOptions, PatchRecord};
pub use pgm::{decode_pgm, encode_pgm, load_image, save_image};
pub use split::{class_key, stratified_indices, stratified_split};
pub use synthetic::{gen_synthetic, render_synthetic, LabelRule, Rendered, SyntheticSpec};

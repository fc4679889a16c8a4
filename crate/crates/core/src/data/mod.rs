//! Annotations, dataset splits, images on disk and synthetic scenes.

mod image;
mod labels;
mod manifest;
mod scene;
mod split;

pub use image::{images_to_tensor, GrayImage};
pub use labels::{parse_yolo_labels, serialize_yolo_labels, GroundTruth, CLAMP_TOLERANCE};
pub use manifest::{load_split, Manifest, ManifestEntry, Sample, SplitName};
pub use scene::{generate_scene, item_seed, Scene, SceneSpec, PLACEMENT_ATTEMPTS};
pub use split::{split_dataset, Split};

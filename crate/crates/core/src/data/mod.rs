//! Sketch ingestion, rasterization, patch cropping, healing masks and the
//! synthetic test corpus.

pub mod cache;
pub mod mask;
pub mod ndjson;
pub mod patch;
pub mod raster;
pub mod stroke;
pub mod synthetic;

/// Canvas side in pixels.
pub const CANVAS_SIDE: usize = 640;

/// Patch (and mask) side in pixels.
pub const PATCH_SIDE: usize = 256;

/// Fraction of the canvas the normalized sketch's bounding box fills.
pub const CANVAS_FILL: f32 = 0.9;

pub use mask::{apply_masks, MaskSpec};
pub use ndjson::{parse_quickdraw_ndjson, write_ndjson, LabeledSketch, ParseStats};
pub use patch::{crop_patches, select_patch_centers, PatchSet};
pub use raster::{area_resize, bilinear_resize, blank_canvas, rasterize, Image};
pub use stroke::{to_stroke5_target, Pen, Stroke5, StrokePoint, StrokeSequence, STROKE5_END, STROKE5_START};
pub use synthetic::{generate_synthetic, toy_dataset, Shape};

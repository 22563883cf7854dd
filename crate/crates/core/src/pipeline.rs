//! Sequence-to-model-input plumbing shared by training, evaluation and the
//! CLI: rasterize, pick centers, optionally corrupt, crop, stack.

use dcg_tensor::{Scalar, Tensor};

use crate::config::ModelConfig;
use crate::data::raster::Image;
use crate::data::{apply_masks, crop_patches, rasterize, select_patch_centers, MaskSpec, StrokeSequence};

/// Prepared encoder input for one sketch.
pub struct SketchInput<T: Scalar> {
    /// [M+1, 1, s, s] stack, full-sketch view in row 0.
    pub images: Tensor<T>,
    pub centers: Vec<(i64, i64)>,
    /// Clean rasterization of the (normalized) sequence.
    pub canvas: Image,
    /// Corrupted canvas, present when a mask spec was applied.
    pub masked_canvas: Option<Image>,
}

/// Rasterize a normalized sequence, pick the M cropping centers in drawing
/// order, optionally corrupt the canvas with masks (before cropping), and
/// stack the patches plus the full view for the encoder.
pub fn prepare_input<T: Scalar>(
    seq: &StrokeSequence,
    cfg: &ModelConfig,
    mask: Option<&mut MaskSpec>,
) -> SketchInput<T> {
    let canvas = rasterize(seq, cfg.pen_thickness);
    let centers = select_patch_centers(seq, cfg.patch_count);
    let (source, masked_canvas) = match mask {
        Some(spec) => {
            let corrupted = apply_masks(&canvas, &centers, spec);
            (corrupted.clone(), Some(corrupted))
        }
        None => (canvas.clone(), None),
    };
    let patchset = crop_patches(&source, &centers);
    let images = patchset.to_model_input(cfg.input_size).cast::<T>();
    SketchInput {
        images,
        centers,
        canvas,
        masked_canvas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Shape, CANVAS_FILL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_stack_has_expected_shape() {
        let cfg = ModelConfig::toy();
        let seq = generate_synthetic(Shape::Circle, &mut ChaCha8Rng::seed_from_u64(0))
            .normalized(CANVAS_FILL);
        let input = prepare_input::<f32>(&seq, &cfg, None);
        assert_eq!(
            input.images.shape(),
            &[cfg.patch_count + 1, 1, cfg.input_size, cfg.input_size]
        );
        assert_eq!(input.centers.len(), cfg.patch_count);
        assert!(input.masked_canvas.is_none());
    }

    #[test]
    fn masked_input_reads_from_corrupted_canvas() {
        let cfg = ModelConfig::toy();
        let seq = generate_synthetic(Shape::Square, &mut ChaCha8Rng::seed_from_u64(1))
            .normalized(CANVAS_FILL);
        let mut spec = MaskSpec::new(1.0, 4);
        let masked = prepare_input::<f32>(&seq, &cfg, Some(&mut spec));
        // All centers masked: every patch crops from a zeroed region.
        let m = cfg.patch_count;
        let per = cfg.input_size * cfg.input_size;
        for p in 0..m {
            let patch = &masked.images.data()[(p + 1) * per..(p + 2) * per];
            assert!(patch.iter().all(|&v| v == 0.0), "patch {p} not blank");
        }
        assert_eq!(spec.applied.len(), m);
        assert!(masked.masked_canvas.is_some());
    }
}

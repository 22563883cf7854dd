//! Patch-center selection by drawing order and 256x256 patch cropping.

use dcg_tensor::Tensor;

use crate::data::raster::{bilinear_resize, Image};
use crate::data::stroke::StrokeSequence;
use crate::data::PATCH_SIDE;

/// M ordered patches plus the resized full-sketch view.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// p_1..p_M, cropping centers in drawing order.
    pub patches: Vec<Image>,
    /// p_0: the whole canvas resized to the patch side.
    pub full: Image,
    /// Canvas coordinates of the patch centers, drawing order.
    pub centers: Vec<(i64, i64)>,
}

/// Pick M cropping centers from the sequence's points, ordered by drawing
/// order: evenly spaced indices when enough points exist, cyclic repetition
/// (preserving order within each cycle) when the sketch has fewer than M
/// points.
pub fn select_patch_centers(seq: &StrokeSequence, m: usize) -> Vec<(i64, i64)> {
    assert!(m >= 1, "need at least one patch center");
    let abs = seq.absolute_points();
    assert!(!abs.is_empty(), "cannot pick centers on an empty sketch");
    let n = abs.len();
    let mut centers = Vec::with_capacity(m);
    if n >= m {
        for k in 0..m {
            let idx = k * n / m;
            let (x, y, _) = abs[idx];
            centers.push((x.round() as i64, y.round() as i64));
        }
    } else {
        for k in 0..m {
            let (x, y, _) = abs[k % n];
            centers.push((x.round() as i64, y.round() as i64));
        }
    }
    centers
}

/// Crop a zero-padded square of `side` pixels centered at (cx, cy).
pub fn crop_centered(canvas: &Image, cx: i64, cy: i64, side: usize) -> Image {
    let mut out = Tensor::zeros(&[side, side]);
    let half = side as i64 / 2;
    let canvas_side = canvas.shape()[0] as i64;
    for py in 0..side as i64 {
        let sy = cy - half + py;
        if sy < 0 || sy >= canvas_side {
            continue;
        }
        for px in 0..side as i64 {
            let sx = cx - half + px;
            if sx < 0 || sx >= canvas_side {
                continue;
            }
            out.set2(py as usize, px as usize, canvas.at2(sy as usize, sx as usize));
        }
    }
    out
}

/// Crop the 256x256 patches at the given centers and attach the full-sketch
/// view bilinearly resized to the same side.
pub fn crop_patches(canvas: &Image, centers: &[(i64, i64)]) -> PatchSet {
    let patches = centers
        .iter()
        .map(|&(cx, cy)| crop_centered(canvas, cx, cy, PATCH_SIDE))
        .collect();
    let full = bilinear_resize(canvas, PATCH_SIDE, PATCH_SIDE);
    PatchSet {
        patches,
        full,
        centers: centers.to_vec(),
    }
}

impl PatchSet {
    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    /// All views resized to the model input side, stacked as [M+1, 1, s, s]
    /// with the full-sketch view in row 0.
    pub fn to_model_input(&self, input_size: usize) -> Tensor<f32> {
        use crate::data::raster::area_resize;
        let m = self.patches.len();
        let s = input_size;
        let mut out = Tensor::zeros(&[m + 1, 1, s, s]);
        let mut write = |slot: usize, img: &Image| {
            let resized = if img.shape()[0] == s {
                img.clone()
            } else {
                area_resize(img, s, s)
            };
            let base = slot * s * s;
            out.data_mut()[base..base + s * s].copy_from_slice(resized.data());
        };
        write(0, &self.full);
        for (i, p) in self.patches.iter().enumerate() {
            write(i + 1, p);
        }
        out
    }
}

/// Sanity helper used by tests and the ingest report: stroke index that owns
/// each chosen center (monotone when the sketch has >= M points).
pub fn center_stroke_indices(seq: &StrokeSequence, m: usize) -> Vec<usize> {
    let strokes = seq.stroke_indices();
    let n = seq.len();
    let mut out = Vec::with_capacity(m);
    if n >= m {
        for k in 0..m {
            out.push(strokes[k * n / m]);
        }
    } else {
        for k in 0..m {
            out.push(strokes[k % n]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raster::blank_canvas;
    use crate::data::stroke::{Pen, StrokePoint};
    use crate::data::CANVAS_SIDE;

    fn line_seq(n: usize) -> StrokeSequence {
        let mut points = vec![StrokePoint { dx: 10.0, dy: 10.0, pen: Pen::Down }];
        for _ in 1..n {
            points.push(StrokePoint { dx: 5.0, dy: 0.0, pen: Pen::Down });
        }
        points.last_mut().unwrap().pen = Pen::Lift;
        StrokeSequence::new(points)
    }

    #[test]
    fn exact_count_takes_every_point_in_order() {
        let seq = line_seq(20);
        let centers = select_patch_centers(&seq, 20);
        let abs = seq.absolute_points();
        for (k, &(cx, _)) in centers.iter().enumerate() {
            assert_eq!(cx, abs[k].0.round() as i64);
        }
    }

    #[test]
    fn double_count_takes_every_second_point() {
        let seq = line_seq(40);
        let centers = select_patch_centers(&seq, 20);
        let abs = seq.absolute_points();
        for (k, &(cx, _)) in centers.iter().enumerate() {
            assert_eq!(cx, abs[2 * k].0.round() as i64);
        }
    }

    #[test]
    fn too_few_points_repeat_cyclically() {
        let seq = line_seq(5);
        let centers = select_patch_centers(&seq, 20);
        for k in 0..20 {
            assert_eq!(centers[k], centers[k % 5]);
        }
    }

    #[test]
    fn blank_canvas_gives_all_zero_patches() {
        let canvas = blank_canvas();
        let ps = crop_patches(&canvas, &[(100, 100), (320, 320)]);
        for p in &ps.patches {
            assert!(p.data().iter().all(|&v| v == 0.0));
        }
        assert!(ps.full.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corner_center_zero_pads_outside() {
        let mut canvas = blank_canvas();
        for d in canvas.data_mut().iter_mut() {
            *d = 1.0;
        }
        let ps = crop_patches(&canvas, &[(0, 0)]);
        let p = &ps.patches[0];
        // Top-left quadrant of the patch lies off-canvas: zeros.
        assert_eq!(p.at2(0, 0), 0.0);
        assert_eq!(p.at2(127, 127), 0.0);
        assert_eq!(p.at2(128, 128), 1.0);
    }

    #[test]
    fn centered_crop_is_pixel_identical_to_source_region() {
        let mut canvas = blank_canvas();
        // Distinctive block in the central 256x256 region.
        for y in 200..440 {
            for x in 200..440 {
                canvas.set2(y, x, ((x + y) % 7) as f32 / 7.0);
            }
        }
        let c = (CANVAS_SIDE / 2) as i64;
        let ps = crop_patches(&canvas, &[(c, c)]);
        let p = &ps.patches[0];
        for py in 0..PATCH_SIDE {
            for px in 0..PATCH_SIDE {
                let sy = (c - 128) as usize + py;
                let sx = (c - 128) as usize + px;
                assert_eq!(p.at2(py, px), canvas.at2(sy, sx));
            }
        }
    }

    #[test]
    fn center_stroke_ownership_is_monotone_with_enough_points() {
        let mut points = Vec::new();
        for s in 0..4 {
            for _ in 0..5 {
                points.push(StrokePoint { dx: 5.0, dy: 2.0, pen: Pen::Down });
            }
            points.last_mut().unwrap().pen = Pen::Lift;
            let _ = s;
        }
        let seq = StrokeSequence::new(points);
        let owners = center_stroke_indices(&seq, 8);
        for w in owners.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }
}

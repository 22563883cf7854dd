//! Rasterization of stroke sequences onto the 640x640 canvas, plus the
//! image resampling helpers the pipeline needs.

use dcg_tensor::Tensor;

use crate::data::stroke::{Pen, StrokeSequence};
use crate::data::CANVAS_SIDE;

/// Grayscale image, shape [h, w], intensities in [0, 1].
pub type Image = Tensor<f32>;

pub fn blank_canvas() -> Image {
    Tensor::zeros(&[CANVAS_SIDE, CANVAS_SIDE])
}

/// Draw the sequence: a segment is rendered between consecutive points when
/// the earlier point's pen is down. Pen thickness stamps a square of the
/// given side at every Bresenham pixel (thickness 1 = exact Bresenham).
pub fn rasterize(seq: &StrokeSequence, thickness: usize) -> Image {
    let mut canvas = blank_canvas();
    let abs = seq.absolute_points();
    for idx in 0..abs.len() {
        let (x0, y0, pen) = abs[idx];
        if idx + 1 < abs.len() {
            if pen == Pen::Down {
                let (x1, y1, _) = abs[idx + 1];
                draw_segment(&mut canvas, x0, y0, x1, y1, thickness);
            }
        } else {
            // Final point: a dot when it terminates a drawn stroke, so a
            // one-point sketch still leaves ink.
            stamp(&mut canvas, x0.round() as i64, y0.round() as i64, thickness);
        }
    }
    canvas
}

fn draw_segment(canvas: &mut Image, x0: f32, y0: f32, x1: f32, y1: f32, thickness: usize) {
    let (mut x, mut y) = (x0.round() as i64, y0.round() as i64);
    let (xe, ye) = (x1.round() as i64, y1.round() as i64);
    let dx = (xe - x).abs();
    let dy = -(ye - y).abs();
    let sx = if x < xe { 1 } else { -1 };
    let sy = if y < ye { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        stamp(canvas, x, y, thickness);
        if x == xe && y == ye {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn stamp(canvas: &mut Image, cx: i64, cy: i64, thickness: usize) {
    let side = CANVAS_SIDE as i64;
    let r = (thickness.max(1) as i64 - 1) / 2;
    let extra = (thickness.max(1) as i64 - 1) - r;
    for y in (cy - r)..=(cy + extra) {
        if y < 0 || y >= side {
            continue;
        }
        for x in (cx - r)..=(cx + extra) {
            if x < 0 || x >= side {
                continue;
            }
            canvas.data_mut()[(y as usize) * CANVAS_SIDE + x as usize] = 1.0;
        }
    }
}

/// Bilinear resampling (used for the full-sketch view).
pub fn bilinear_resize(img: &Image, new_h: usize, new_w: usize) -> Image {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = Tensor::zeros(&[new_h, new_w]);
    if h == 0 || w == 0 {
        return out;
    }
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    for oy in 0..new_h {
        // Sample at pixel centers.
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        for ox in 0..new_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            let v00 = img.at2(y0, x0);
            let v01 = img.at2(y0, x1);
            let v10 = img.at2(y1, x0);
            let v11 = img.at2(y1, x1);
            let top = v00 * (1.0 - tx) + v01 * tx;
            let bot = v10 * (1.0 - tx) + v11 * tx;
            out.set2(oy, ox, top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Area-average downsampling; preserves stroke mass much better than
/// bilinear when shrinking sparse line drawings.
pub fn area_resize(img: &Image, new_h: usize, new_w: usize) -> Image {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if new_h == h && new_w == w {
        return img.clone();
    }
    let mut out = Tensor::zeros(&[new_h, new_w]);
    for oy in 0..new_h {
        let y_start = oy * h / new_h;
        let y_end = (((oy + 1) * h).div_ceil(new_h)).max(y_start + 1).min(h);
        for ox in 0..new_w {
            let x_start = ox * w / new_w;
            let x_end = (((ox + 1) * w).div_ceil(new_w)).max(x_start + 1).min(w);
            let mut acc = 0.0f32;
            for y in y_start..y_end {
                for x in x_start..x_end {
                    acc += img.at2(y, x);
                }
            }
            let count = ((y_end - y_start) * (x_end - x_start)) as f32;
            out.set2(oy, ox, acc / count);
        }
    }
    out
}

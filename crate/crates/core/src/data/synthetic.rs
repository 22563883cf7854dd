//! Deterministic synthetic sketches so tests and the toy pipeline never need
//! external downloads.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::stroke::{Pen, StrokePoint, StrokeSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Zigzag,
    TwoStrokes,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Zigzag => "zigzag",
            Shape::TwoStrokes => "two_strokes",
        }
    }
}

/// Generate one sketch of the given shape. Deterministic for a seed; the rng
/// draws the shape's rotation and aspect ratio so different seeds give
/// distinct sketches. Coordinates land inside the 640x640 canvas, >= 8
/// points each.
pub fn generate_synthetic<R: Rng>(shape: Shape, rng: &mut R) -> StrokeSequence {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    // Rotation ranges respect each shape's own symmetry so two draws never
    // alias to the same geometry.
    let u3: f64 = rng.random();
    match shape {
        Shape::Circle | Shape::Square => {
            let phi = match shape {
                Shape::Circle => u1 as f32 * std::f32::consts::PI,
                _ => u1 as f32 * std::f32::consts::FRAC_PI_2,
            };
            let aspect = 0.35 + 0.6 * u2 as f32;
            let start_half = u3 >= 0.5;
            synthetic_with_factors(shape, phi, aspect, start_half)
        }
        Shape::Zigzag => quantized_zigzag((u1 * 16.0) as u8 & 0x0f, rng),
        Shape::TwoStrokes => quantized_two_strokes((u1 * 16.0) as u8 & 0x0f, rng),
    }
}

/// Zigzag whose interior vertex amplitudes take one of two discrete levels
/// per a 4-bit pattern. Level flips move a vertex by 120 canvas pixels, so
/// the 16 patterns stay far apart even under sloppy regeneration.
pub fn quantized_zigzag<R: Rng>(bits: u8, rng: &mut R) -> StrokeSequence {
    let n = 8;
    let x0 = 110.0f32;
    let step = 60.0f32;
    let mut abs = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if i % 2 == 0 { -1.0f32 } else { 1.0 };
        // Interior vertices 2..=5 carry the instance bits.
        let level = if (2..=5).contains(&i) && bits >> (i - 2) & 1 == 1 {
            210.0
        } else {
            90.0
        };
        let u: f64 = rng.random();
        let jitter = (u as f32 - 0.5) * 10.0;
        let pen = if i + 1 == n { Pen::Lift } else { Pen::Down };
        abs.push((x0 + step * i as f32, 320.0 + sign * level + jitter, pen));
    }
    to_sequence(abs)
}

/// Two horizontal strokes; the second stroke's vertical gap, horizontal
/// shift, length and the first stroke's height each take one of two levels
/// per a 4-bit pattern.
pub fn quantized_two_strokes<R: Rng>(bits: u8, rng: &mut R) -> StrokeSequence {
    let gap = if bits & 1 == 1 { 150.0f32 } else { 310.0 };
    let shift = if bits >> 1 & 1 == 1 { -100.0f32 } else { 100.0 };
    let len2 = if bits >> 2 & 1 == 1 { 180.0f32 } else { 400.0 };
    let y1 = if bits >> 3 & 1 == 1 { 160.0f32 } else { 280.0 };
    let mut abs = Vec::with_capacity(10);
    for i in 0..5 {
        let u: f64 = rng.random();
        let jitter = (u as f32 - 0.5) * 8.0;
        let x = 120.0 + 400.0 * i as f32 / 4.0;
        let pen = if i == 4 { Pen::Lift } else { Pen::Down };
        abs.push((x, y1 + jitter, pen));
    }
    for i in 0..5 {
        let u: f64 = rng.random();
        let jitter = (u as f32 - 0.5) * 8.0;
        let x = 320.0 + shift - len2 / 2.0 + len2 * i as f32 / 4.0;
        let pen = if i == 4 { Pen::Lift } else { Pen::Down };
        abs.push((x, y1 + gap + jitter, pen));
    }
    to_sequence(abs)
}

fn to_sequence(abs: Vec<(f32, f32, Pen)>) -> StrokeSequence {
    let mut points = Vec::with_capacity(abs.len());
    let (mut px, mut py) = (0.0f32, 0.0f32);
    for (x, y, pen) in abs {
        points.push(StrokePoint { dx: x - px, dy: y - py, pen });
        px = x;
        py = y;
    }
    StrokeSequence::new(points)
}

/// Deterministic shape construction from explicit factors: `phi` is the
/// rotation, `aspect` the height/width ratio in (0, 1], and `start_half`
/// begins the drawing on the opposite side of the outline. The start factor
/// leaves the raster untouched and changes only the drawing order, which the
/// drawing-order encodings make visible in the sketch code.
pub fn synthetic_with_factors(shape: Shape, phi: f32, aspect: f32, start_half: bool) -> StrokeSequence {
    // Variation must survive the bounding-box normalization applied at
    // ingestion: overall scale and translation are normalized away, so
    // instances differ by aspect ratio and rotation, factors that stay
    // visible after normalization and downscaling.
    let (cx, cy) = (320.0, 320.0);
    let rot = |x: f32, y: f32, angle: f32| -> (f32, f32) {
        let (s, c) = angle.sin_cos();
        (cx + (x - cx) * c - (y - cy) * s, cy + (x - cx) * s + (y - cy) * c)
    };
    let mut abs: Vec<(f32, f32, Pen)> = Vec::new();
    match shape {
        Shape::Circle => {
            // Rotated ellipse, 8 perimeter points plus the closing point.
            let rx = 240.0;
            let ry = rx * aspect;
            let n = 8;
            let start = if start_half { n / 2 } else { 0 };
            for i in 0..=n {
                let theta = ((start + i) as f32 / n as f32) * std::f32::consts::TAU;
                let (x, y) = rot(cx + rx * theta.cos(), cy + ry * theta.sin(), phi);
                let pen = if i == n { Pen::Lift } else { Pen::Down };
                abs.push((x, y, pen));
            }
        }
        Shape::Square => {
            // Rotated rectangle: 4 pen-down corner segments with their edge
            // midpoints, plus the closing point back at the first corner.
            let half_w = 200.0;
            let half_h = 200.0 * aspect;
            let angle = phi;
            let corners = [
                (cx - half_w, cy - half_h),
                (cx + half_w, cy - half_h),
                (cx + half_w, cy + half_h),
                (cx - half_w, cy + half_h),
            ];
            let first = if start_half { 2 } else { 0 };
            for k in 0..4 {
                let (x0, y0) = corners[(first + k) % 4];
                let (x1, y1) = corners[(first + k + 1) % 4];
                abs.push((rot(x0, y0, angle).0, rot(x0, y0, angle).1, Pen::Down));
                let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                abs.push((rot(mx, my, angle).0, rot(mx, my, angle).1, Pen::Down));
            }
            let (x0, y0) = rot(corners[first].0, corners[first].1, angle);
            abs.push((x0, y0, Pen::Lift));
        }
        Shape::Zigzag | Shape::TwoStrokes => {
            unreachable!("quantized constructors handle these shapes")
        }
    }

    let mut points = Vec::with_capacity(abs.len());
    let (mut px, mut py) = (0.0f32, 0.0f32);
    for (x, y, pen) in abs {
        points.push(StrokePoint {
            dx: x - px,
            dy: y - py,
            pen,
        });
        px = x;
        py = y;
    }
    StrokeSequence::new(points)
}

/// The two-category toy corpus used by the overfit/retrieval runs: ellipses
/// and rectangles, `count` sketches alternating categories. Factors are
/// stratified over a jittered grid so instances keep a guaranteed minimum
/// separation in (rotation, aspect) space; a uniform draw would produce
/// near-duplicate pairs that no desk-scale model could tell apart.
/// The two-category toy corpus used by the overfit/retrieval runs: ellipses
/// and rectangles over a stratified (rotation, aspect) grid, so instances
/// keep a guaranteed minimum separation; a uniform draw would produce
/// near-duplicate pairs no desk-scale model could tell apart.
pub fn toy_dataset(count: usize, seed: u64) -> Vec<(StrokeSequence, String)> {
    let mut out = Vec::with_capacity(count);
    use rand::RngExt;
    let per_category = count.div_ceil(2).max(1);
    let phi_bins = per_category.div_ceil(2).max(1);
    for i in 0..count {
        let shape = if i % 2 == 0 { Shape::Circle } else { Shape::Square };
        let j = i / 2;
        let phi_bin = j % phi_bins;
        let aspect_bin = j / phi_bins;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let phi_range = match shape {
            Shape::Circle => std::f32::consts::PI,
            _ => std::f32::consts::FRAC_PI_2,
        };
        let phi = (phi_bin as f32 + 0.25 + 0.5 * u1 as f32) / phi_bins as f32 * phi_range;
        let aspect = 0.35 + (aspect_bin as f32 + 0.25 + 0.5 * u2 as f32) / 2.0 * 0.6;
        let seq = synthetic_with_factors(shape, phi, aspect, false);
        out.push((seq, shape.name().to_string()));
    }
    out
}

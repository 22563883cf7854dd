//! Stroke-3 sequences: ordered (dx, dy, pen) triplets recording drawing order.

use serde::{Deserialize, Serialize};

use crate::data::CANVAS_SIDE;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pen {
    /// Pen touches the paper; a segment is drawn to the next point.
    Down,
    /// Pen lifts after this point; no segment to the next point.
    Lift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub dx: f32,
    pub dy: f32,
    pub pen: Pen,
}

/// A sketch in stroke-3 form. The first point's (dx, dy) is relative to the
/// canvas origin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrokeSequence {
    pub points: Vec<StrokePoint>,
}

impl StrokeSequence {
    pub fn new(points: Vec<StrokePoint>) -> Self {
        StrokeSequence { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Absolute coordinates by prefix sum, carrying each point's pen state.
    pub fn absolute_points(&self) -> Vec<(f32, f32, Pen)> {
        let mut out = Vec::with_capacity(self.points.len());
        let (mut x, mut y) = (0.0f32, 0.0f32);
        for p in &self.points {
            x += p.dx;
            y += p.dy;
            out.push((x, y, p.pen));
        }
        out
    }

    /// Index of the stroke (0-based) each point belongs to. A point after a
    /// lift starts the next stroke.
    pub fn stroke_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut stroke = 0usize;
        let mut prev_lifted = false;
        for p in &self.points {
            if prev_lifted {
                stroke += 1;
            }
            out.push(stroke);
            prev_lifted = p.pen == Pen::Lift;
        }
        out
    }

    /// Translate and scale so the bounding box of drawn points fits centrally
    /// into `fill_fraction` of the square canvas, preserving aspect ratio.
    pub fn normalized(&self, fill_fraction: f32) -> StrokeSequence {
        let abs = self.absolute_points();
        if abs.is_empty() {
            return self.clone();
        }
        let (mut min_x, mut min_y) = (f32::INFINITY, f32::INFINITY);
        let (mut max_x, mut max_y) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
        for &(x, y, _) in &abs {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let side = CANVAS_SIDE as f32;
        let extent = (max_x - min_x).max(max_y - min_y);
        let scale = if extent > 0.0 {
            side * fill_fraction / extent
        } else {
            1.0
        };
        let cx = (min_x + max_x) / 2.0;
        let cy = (min_y + max_y) / 2.0;
        let target = side / 2.0;

        let mut points = Vec::with_capacity(abs.len());
        let (mut px, mut py) = (0.0f32, 0.0f32);
        for &(x, y, pen) in &abs {
            let nx = (x - cx) * scale + target;
            let ny = (y - cy) * scale + target;
            points.push(StrokePoint {
                dx: nx - px,
                dy: ny - py,
                pen,
            });
            px = nx;
            py = ny;
        }
        StrokeSequence { points }
    }

    /// Translate so the drawn bounding box is centered on the canvas,
    /// leaving scale and aspect untouched. Ingestion normalization leaves
    /// every dataset sketch centered, so query pipelines recenter generated
    /// sketches to match; a start-position error would otherwise translate
    /// the whole sketch and perturb every patch for no identity-relevant
    /// reason.
    pub fn centered(&self) -> StrokeSequence {
        let abs = self.absolute_points();
        if abs.is_empty() {
            return self.clone();
        }
        let (mut min_x, mut min_y) = (f32::INFINITY, f32::INFINITY);
        let (mut max_x, mut max_y) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
        for &(x, y, _) in &abs {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let target = CANVAS_SIDE as f32 / 2.0;
        let shift_x = target - (min_x + max_x) / 2.0;
        let shift_y = target - (min_y + max_y) / 2.0;
        let mut points = self.points.clone();
        if let Some(first) = points.first_mut() {
            first.dx += shift_x;
            first.dy += shift_y;
        }
        StrokeSequence { points }
    }

    /// Standard deviation of the decoder-facing deltas. Each sequence's
    /// first delta is excluded: it only encodes the absolute canvas position
    /// of the first point, which the decoder never has to predict.
    pub fn delta_std(sequences: &[StrokeSequence]) -> f32 {
        let mut values = Vec::new();
        for s in sequences {
            for p in s.points.iter().skip(1) {
                values.push(p.dx);
                values.push(p.dy);
            }
        }
        if values.is_empty() {
            return 1.0;
        }
        let n = values.len() as f32;
        let mean: f32 = values.iter().sum::<f32>() / n;
        let var: f32 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let std = var.sqrt();
        if std > 1e-6 {
            std
        } else {
            1.0
        }
    }
}

/// One stroke-5 step: (dx, dy, down, lift, end).
pub type Stroke5 = [f32; 5];

pub const STROKE5_START: Stroke5 = [0.0, 0.0, 1.0, 0.0, 0.0];
pub const STROKE5_END: Stroke5 = [0.0, 0.0, 0.0, 0.0, 1.0];

/// Decoder target: the sequence's points plus one end step, deltas divided
/// by `delta_scale`. The first delta is kept as-is (the absolute canvas
/// position of the first point), so generated sequences live directly in the
/// canvas frame. Rejected when longer than `max_len`.
pub fn to_stroke5_target(
    seq: &StrokeSequence,
    delta_scale: f32,
    max_len: usize,
) -> Result<Vec<Stroke5>> {
    if seq.len() + 1 > max_len {
        return Err(CoreError::SequenceTooLong {
            len: seq.len() + 1,
            max: max_len,
        });
    }
    let mut out = Vec::with_capacity(seq.len() + 1);
    for p in &seq.points {
        let (down, lift) = match p.pen {
            Pen::Down => (1.0, 0.0),
            Pen::Lift => (0.0, 1.0),
        };
        out.push([p.dx / delta_scale, p.dy / delta_scale, down, lift, 0.0]);
    }
    out.push(STROKE5_END);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(points: &[(f32, f32, Pen)]) -> StrokeSequence {
        StrokeSequence::new(
            points
                .iter()
                .map(|&(dx, dy, pen)| StrokePoint { dx, dy, pen })
                .collect(),
        )
    }

    #[test]
    fn absolute_points_prefix_sum() {
        let s = seq(&[(0.0, 0.0, Pen::Down), (10.0, 0.0, Pen::Lift)]);
        let abs = s.absolute_points();
        assert_eq!(abs[0].0, 0.0);
        assert_eq!(abs[1], (10.0, 0.0, Pen::Lift));
    }

    #[test]
    fn stroke_indices_advance_after_lift() {
        let s = seq(&[
            (0.0, 0.0, Pen::Down),
            (1.0, 0.0, Pen::Lift),
            (5.0, 5.0, Pen::Down),
            (1.0, 0.0, Pen::Lift),
        ]);
        assert_eq!(s.stroke_indices(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn normalized_fills_ninety_percent_centrally() {
        let s = seq(&[(0.0, 0.0, Pen::Down), (10.0, 0.0, Pen::Lift)]);
        let n = s.normalized(0.9);
        let abs = n.absolute_points();
        let side = CANVAS_SIDE as f32;
        assert!((abs[0].0 - side * 0.05).abs() < 1e-3);
        assert!((abs[1].0 - side * 0.95).abs() < 1e-3);
        assert!((abs[0].1 - side * 0.5).abs() < 1e-3);
    }

    #[test]
    fn stroke5_target_appends_end_and_scales() {
        let s = seq(&[(2.0, 4.0, Pen::Down), (6.0, 0.0, Pen::Lift)]);
        let t = to_stroke5_target(&s, 2.0, 10).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0], [1.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(t[1], [3.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(t[2], STROKE5_END);
    }

    #[test]
    fn over_length_target_rejected() {
        let s = seq(&[(1.0, 1.0, Pen::Down); 10]);
        assert!(matches!(
            to_stroke5_target(&s, 1.0, 10),
            Err(CoreError::SequenceTooLong { len: 11, max: 10 })
        ));
    }
}

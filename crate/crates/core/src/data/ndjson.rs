//! QuickDraw simplified-drawing NDJSON ingestion and the matching export.
//!
//! Each line is one JSON object whose "drawing" field is an array of strokes,
//! each stroke a pair of x and y coordinate arrays. An optional "word" field
//! carries the category label.

use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::data::stroke::{Pen, StrokePoint, StrokeSequence};
use crate::error::Result;

#[derive(Debug, Deserialize)]
struct DrawingLine {
    drawing: Vec<Vec<Vec<f32>>>,
    #[serde(default)]
    word: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParseStats {
    pub parsed: usize,
    pub skipped_malformed: usize,
    pub skipped_empty: usize,
}

/// A parsed sketch with its optional category label.
#[derive(Debug, Clone)]
pub struct LabeledSketch {
    pub seq: StrokeSequence,
    pub category: Option<String>,
}

/// Parse NDJSON lines into stroke-3 sequences, preserving file order.
/// Malformed lines and empty drawings are skipped and counted.
pub fn parse_quickdraw_ndjson<R: BufRead>(reader: R) -> Result<(Vec<LabeledSketch>, ParseStats)> {
    let mut out = Vec::new();
    let mut stats = ParseStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DrawingLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(_) => {
                stats.skipped_malformed += 1;
                continue;
            }
        };
        match drawing_to_stroke3(&parsed.drawing) {
            Some(seq) => {
                stats.parsed += 1;
                out.push(LabeledSketch {
                    seq,
                    category: parsed.word,
                });
            }
            None => stats.skipped_empty += 1,
        }
    }
    Ok((out, stats))
}

/// Convert per-stroke absolute coordinates to stroke-3 deltas. The pen lifts
/// exactly at each stroke's final point.
fn drawing_to_stroke3(drawing: &[Vec<Vec<f32>>]) -> Option<StrokeSequence> {
    let mut points = Vec::new();
    let (mut px, mut py) = (0.0f32, 0.0f32);
    for stroke in drawing {
        if stroke.len() != 2 || stroke[0].is_empty() || stroke[0].len() != stroke[1].len() {
            continue;
        }
        let n = stroke[0].len();
        for i in 0..n {
            let (x, y) = (stroke[0][i], stroke[1][i]);
            let pen = if i + 1 == n { Pen::Lift } else { Pen::Down };
            points.push(StrokePoint {
                dx: x - px,
                dy: y - py,
                pen,
            });
            px = x;
            py = y;
        }
    }
    if points.is_empty() {
        None
    } else {
        Some(StrokeSequence::new(points))
    }
}

/// Export sequences in the ingestion schema so generated sketches round-trip.
pub fn write_ndjson<W: Write>(
    w: &mut W,
    sketches: &[(StrokeSequence, Option<String>)],
) -> Result<()> {
    for (seq, category) in sketches {
        let mut strokes: Vec<(Vec<f32>, Vec<f32>)> = Vec::new();
        let mut current: (Vec<f32>, Vec<f32>) = (Vec::new(), Vec::new());
        for (x, y, pen) in seq.absolute_points() {
            current.0.push((x * 100.0).round() / 100.0);
            current.1.push((y * 100.0).round() / 100.0);
            if pen == Pen::Lift {
                strokes.push(std::mem::take(&mut current));
            }
        }
        if !current.0.is_empty() {
            strokes.push(current);
        }
        let drawing: Vec<Vec<Vec<f32>>> = strokes.into_iter().map(|(xs, ys)| vec![xs, ys]).collect();
        let value = match category {
            Some(word) => serde_json::json!({ "word": word, "drawing": drawing }),
            None => serde_json::json!({ "drawing": drawing }),
        };
        writeln!(w, "{}", serde_json::to_string(&value)?)?;
    }
    Ok(())
}

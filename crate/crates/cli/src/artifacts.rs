//! Output artifacts: grayscale PNGs, NDJSON sequence dumps, CSV graph dumps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dcg_core::data::{write_ndjson, Image, StrokeSequence};
use dcg_core::graph::GraphMatrices;

/// Write a [0,1]-intensity canvas as an 8-bit grayscale PNG, ink black on a
/// white background. Deterministic bytes for identical input.
pub fn write_png(path: &Path, img: &Image) -> Result<(), String> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let pixels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| 255u8.saturating_sub((v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    writer
        .write_image_data(&pixels)
        .map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_sequences_ndjson(
    path: &Path,
    sketches: &[(StrokeSequence, Option<String>)],
) -> Result<(), String> {
    let mut file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    write_ndjson(&mut file, sketches).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn dump_graph_csvs(
    dir: &Path,
    tag: &str,
    graph: &GraphMatrices<f32>,
) -> Result<(), String> {
    let write = |name: &str, body: String| -> Result<(), String> {
        let path = dir.join(format!("graph_{tag}_{name}.csv"));
        std::fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))
    };
    write("a", GraphMatrices::to_csv(&graph.a))?;
    write("atilde", GraphMatrices::to_csv(&graph.a_tilde))?;
    write("ahat", GraphMatrices::to_csv(&graph.a_hat))
}

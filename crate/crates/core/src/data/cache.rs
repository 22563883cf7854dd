//! Binary dataset cache.
//!
//! Layout, little-endian:
//!   magic "DCS1" | count u32
//!   per sketch: category-name len u16 + utf8 bytes (len 0 = unlabeled)
//!   | point count u32 | per point: dx i16, dy i16, pen u8 (0 down, 1 lift)

use std::io::{Read, Write};

use crate::data::ndjson::LabeledSketch;
use crate::data::stroke::{Pen, StrokePoint, StrokeSequence};
use crate::error::{CoreError, Result};

pub const MAGIC: [u8; 4] = *b"DCS1";

pub fn write_cache<W: Write>(w: &mut W, sketches: &[LabeledSketch]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&(sketches.len() as u32).to_le_bytes())?;
    for s in sketches {
        let name = s.category.as_deref().unwrap_or("");
        if name.len() > u16::MAX as usize {
            return Err(CoreError::Data("category name too long".into()));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(s.seq.len() as u32).to_le_bytes())?;
        for p in &s.seq.points {
            let dx = p.dx.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
            let dy = p.dy.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
            w.write_all(&dx.to_le_bytes())?;
            w.write_all(&dy.to_le_bytes())?;
            w.write_all(&[match p.pen {
                Pen::Down => 0u8,
                Pen::Lift => 1u8,
            }])?;
        }
    }
    Ok(())
}

pub fn read_cache<R: Read>(r: &mut R) -> Result<Vec<LabeledSketch>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Data(format!(
            "bad cache magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut count_b = [0u8; 4];
    r.read_exact(&mut count_b)?;
    let count = u32::from_le_bytes(count_b) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len_b = [0u8; 2];
        r.read_exact(&mut len_b)?;
        let name_len = u16::from_le_bytes(len_b) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let category = if name.is_empty() {
            None
        } else {
            Some(String::from_utf8(name).map_err(|e| CoreError::Data(e.to_string()))?)
        };
        let mut n_b = [0u8; 4];
        r.read_exact(&mut n_b)?;
        let n = u32::from_le_bytes(n_b) as usize;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 5];
            r.read_exact(&mut buf)?;
            let dx = i16::from_le_bytes([buf[0], buf[1]]) as f32;
            let dy = i16::from_le_bytes([buf[2], buf[3]]) as f32;
            let pen = match buf[4] {
                0 => Pen::Down,
                1 => Pen::Lift,
                other => {
                    return Err(CoreError::Data(format!("bad pen code {other}")));
                }
            };
            points.push(StrokePoint { dx, dy, pen });
        }
        out.push(LabeledSketch {
            seq: StrokeSequence::new(points),
            category,
        });
    }
    Ok(out)
}

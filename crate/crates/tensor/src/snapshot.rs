//! Binary tensor snapshots.
//!
//! Layout, all little-endian:
//!   magic "DCT1" | dtype code u8 (0 = f32, 1 = f64) | rank u8
//!   | extents u32 x rank | raw row-major element bytes

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DCT1";

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[T::DTYPE.code()])?;
    let rank = t.rank();
    if rank > u8::MAX as usize {
        return Err(TensorError::Snapshot(format!("rank {rank} too large")));
    }
    w.write_all(&[rank as u8])?;
    for &e in t.shape() {
        if e > u32::MAX as usize {
            return Err(TensorError::Snapshot(format!("extent {e} too large")));
        }
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.byte_width());
    for &x in t.data() {
        x.to_le_byte_vec(&mut bytes);
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// A snapshot whose element type is only known at runtime.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn cast_to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(TensorError::Snapshot(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = DType::from_code(head[0])
        .ok_or_else(|| TensorError::Snapshot(format!("unknown dtype code {}", head[0])))?;
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 4];
        r.read_exact(&mut e)?;
        shape.push(u32::from_le_bytes(e) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * dtype.byte_width()];
    r.read_exact(&mut bytes)?;
    match dtype {
        DType::F32 => {
            let data: Vec<f32> = bytes.chunks_exact(4).map(f32::from_le_byte_slice).collect();
            Ok(AnyTensor::F32(Tensor::from_vec(&shape, data)?))
        }
        DType::F64 => {
            let data: Vec<f64> = bytes.chunks_exact(8).map(f64::from_le_byte_slice).collect();
            Ok(AnyTensor::F64(Tensor::from_vec(&shape, data)?))
        }
    }
}

//! Little-endian binary tensor container used for intermediate artifacts.
//!
//! Layout:
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 4            | magic `BSST`                                     |
//! | 4 (u32)      | dtype code: 1 = f64, 2 = complex128 (re, im)      |
//! | 4 (u32)      | rank                                             |
//! | 8 × rank     | dimensions (u64)                                 |
//! | rest         | row-major data, f64 values                       |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const MAGIC: &[u8; 4] = b"BSST";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    F64 = 1,
    Complex128 = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Real(ArrayD<f64>),
    Complex(ArrayD<C64>),
}

impl Tensor {
    pub fn dtype(&self) -> DType {
        match self {
            Tensor::Real(_) => DType::F64,
            Tensor::Complex(_) => DType::Complex128,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Real(a) => a.shape(),
            Tensor::Complex(a) => a.shape(),
        }
    }

    pub fn into_real(self) -> Result<ArrayD<f64>> {
        match self {
            Tensor::Real(a) => Ok(a),
            Tensor::Complex(_) => Err(Error::MalformedTensor("expected real tensor".into())),
        }
    }

    pub fn into_complex(self) -> Result<ArrayD<C64>> {
        match self {
            Tensor::Complex(a) => Ok(a),
            Tensor::Real(_) => Err(Error::MalformedTensor("expected complex tensor".into())),
        }
    }
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.dtype() as u32).to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match tensor {
        Tensor::Real(a) => {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Complex(a) => {
            for z in a.iter() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::MalformedTensor("unexpected end of data".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

fn take_f64(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor> {
    let bytes = &mut bytes;
    if take(bytes, 4)? != MAGIC {
        return Err(Error::MalformedTensor("bad magic".into()));
    }
    let dtype = take_u32(bytes)?;
    let rank = take_u32(bytes)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(bytes, 8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| Error::MalformedTensor("dimension overflow".into()))?);
    }
    let count: usize = shape.iter().product();
    let tensor = match dtype {
        1 => {
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(take_f64(bytes)?);
            }
            Tensor::Real(
                ArrayD::from_shape_vec(IxDyn(&shape), data)
                    .map_err(|e| Error::MalformedTensor(e.to_string()))?,
            )
        }
        2 => {
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let re = take_f64(bytes)?;
                let im = take_f64(bytes)?;
                data.push(C64::new(re, im));
            }
            Tensor::Complex(
                ArrayD::from_shape_vec(IxDyn(&shape), data)
                    .map_err(|e| Error::MalformedTensor(e.to_string()))?,
            )
        }
        other => return Err(Error::MalformedTensor(format!("unknown dtype code {other}"))),
    };
    if !bytes.is_empty() {
        return Err(Error::MalformedTensor("trailing bytes".into()));
    }
    Ok(tensor)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

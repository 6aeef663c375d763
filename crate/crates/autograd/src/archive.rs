//! Flat binary container mapping names to shaped arrays.
//!
//! Layout (little endian): magic `KFSGARR1`, `u32` entry count, then per
//! entry `u32` name length, UTF-8 name, `u8` dtype tag, `u32` rank, `u64`
//! extents, raw element data. Values are stored in their native precision
//! so a round trip is bit-exact.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::DType;

const MAGIC: &[u8; 8] = b"KFSGARR1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not an array archive (bad magic)")]
    BadMagic,
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

pub fn write_archive<W: Write>(mut w: W, entries: &[ArchiveEntry]) -> Result<(), ArchiveError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for e in entries {
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(ArchiveError::Corrupt(format!("entry {} has inconsistent dims", e.name)));
        }
        let name = e.name.as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        w.write_u8(e.data.dtype().tag())?;
        w.write_u32::<LittleEndian>(e.dims.len() as u32)?;
        for d in &e.dims {
            w.write_u64::<LittleEndian>(*d as u64)?;
        }
        match &e.data {
            ArrayData::F32(v) => v.iter().try_for_each(|x| w.write_f32::<LittleEndian>(*x))?,
            ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_f64::<LittleEndian>(*x))?,
        }
    }
    w.flush()?;
    Ok(())
}

fn eof_as_corrupt(e: io::Error) -> ArchiveError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ArchiveError::Corrupt("truncated archive".into())
    } else {
        ArchiveError::Io(e)
    }
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Vec<ArchiveEntry>, ArchiveError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(eof_as_corrupt)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof_as_corrupt)?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let nlen = r.read_u32::<LittleEndian>().map_err(eof_as_corrupt)? as usize;
        if nlen > 1 << 16 {
            return Err(ArchiveError::Corrupt("name too long".into()));
        }
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name).map_err(eof_as_corrupt)?;
        let name =
            String::from_utf8(name).map_err(|_| ArchiveError::Corrupt("name is not utf-8".into()))?;
        let tag = r.read_u8().map_err(eof_as_corrupt)?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| ArchiveError::Corrupt(format!("unknown dtype tag {tag}")))?;
        let rank = r.read_u32::<LittleEndian>().map_err(eof_as_corrupt)? as usize;
        if rank > 8 {
            return Err(ArchiveError::Corrupt(format!("rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u64::<LittleEndian>().map_err(eof_as_corrupt)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|n| *n <= 1 << 32)
            .ok_or_else(|| ArchiveError::Corrupt(format!("entry {name} too large")))?;
        let data = match dtype {
            DType::F32 => {
                let mut v = vec![0f32; n];
                r.read_f32_into::<LittleEndian>(&mut v).map_err(eof_as_corrupt)?;
                ArrayData::F32(v)
            }
            DType::F64 => {
                let mut v = vec![0f64; n];
                r.read_f64_into::<LittleEndian>(&mut v).map_err(eof_as_corrupt)?;
                ArrayData::F64(v)
            }
        };
        out.push(ArchiveEntry { name, dims, data });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ArchiveError::Corrupt("trailing bytes".into()));
    }
    Ok(out)
}

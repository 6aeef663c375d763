//! Conversions between parameter sets and the named-array archive.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use autograd::{read_archive, write_archive, ArchiveEntry, ArchiveError, ArrayData, DType, Param, Real};

use crate::error::{Error, Result};

pub(crate) fn to_array<T: Real>(v: &[T]) -> ArrayData {
    match T::DTYPE {
        DType::F32 => ArrayData::F32(v.iter().map(|x| x.as_f64() as f32).collect()),
        DType::F64 => ArrayData::F64(v.iter().map(|x| x.as_f64()).collect()),
    }
}

pub(crate) fn from_array<T: Real>(a: &ArrayData) -> Vec<T> {
    a.to_f64().into_iter().map(T::of).collect()
}

pub(crate) fn param_entries<T: Real>(params: &[Param<T>]) -> Vec<ArchiveEntry> {
    params
        .iter()
        .map(|p| ArchiveEntry {
            name: p.name().to_string(),
            dims: p.dims().to_vec(),
            data: to_array(&p.value()),
        })
        .collect()
}

fn archive_err(path: &Path, e: ArchiveError) -> Error {
    match e {
        ArchiveError::Io(io) => Error::io(path, io),
        other => Error::CorruptArchive(format!("{}: {other}", path.display())),
    }
}

pub(crate) fn write_entries(path: &Path, entries: &[ArchiveEntry]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(BufWriter::new(f), entries).map_err(|e| archive_err(path, e))
}

pub(crate) fn read_entries(path: &Path) -> Result<Vec<ArchiveEntry>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(BufReader::new(f)).map_err(|e| archive_err(path, e))
}

/// Copies archive arrays into every parameter whose name starts with
/// `prefix`. Missing names or shape differences are `WeightsMismatch`.
pub(crate) fn assign_params<T: Real>(params: &[Param<T>], entries: &[ArchiveEntry], prefix: &str) -> Result<()> {
    let by_name: HashMap<&str, &ArchiveEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for p in params.iter().filter(|p| p.name().starts_with(prefix)) {
        let e = by_name
            .get(p.name())
            .ok_or_else(|| Error::WeightsMismatch(format!("archive lacks {}", p.name())))?;
        if e.dims != p.dims() {
            return Err(Error::WeightsMismatch(format!(
                "{}: archive shape {:?}, model shape {:?}",
                p.name(),
                e.dims,
                p.dims()
            )));
        }
        p.set_value(&from_array::<T>(&e.data));
    }
    Ok(())
}

pub(crate) fn load_params_from_archive<T: Real>(params: &[Param<T>], path: &Path, prefix: &str) -> Result<()> {
    let entries = read_entries(path)?;
    assign_params(params, &entries, prefix)
}

/// Writes `params` as a weights archive (e.g. to seed an encoder).
pub fn save_params<T: Real>(params: &[Param<T>], path: &Path) -> Result<()> {
    write_entries(path, &param_entries(params))
}

//! Binary tensor dump: `"VINF"`, version `u32 = 1`, `F H W C` as `u32`, then
//! `F*H*W*C` floats. Every integer and float is little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, LatentTensor, TensorError};

pub const DUMP_MAGIC: [u8; 4] = *b"VINF";
pub const DUMP_VERSION: u32 = 1;

pub fn write_dump_to<W: Write>(t: &LatentTensor, mut w: W) -> std::io::Result<()> {
    let d = t.dims();
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    for v in [d.frames, d.height, d.width, d.channels] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in t.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn write_dump(t: &LatentTensor, path: &Path) -> std::io::Result<()> {
    write_dump_to(t, BufWriter::new(File::create(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Dump(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dump_from<R: Read>(mut r: R) -> Result<LatentTensor, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| TensorError::Dump(format!("truncated magic: {e}")))?;
    if magic != DUMP_MAGIC {
        return Err(TensorError::Dump(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != DUMP_VERSION {
        return Err(TensorError::Dump(format!("unsupported version {version}")));
    }
    let mut ext = [0usize; 4];
    for e in &mut ext {
        *e = read_u32(&mut r)? as usize;
    }
    let dims = Dims::new(ext[0], ext[1], ext[2], ext[3]);
    let mut bytes = vec![0u8; dims.len() * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| TensorError::Dump(format!("truncated body: {e}")))?;
    let mut extra = [0u8; 1];
    if matches!(r.read(&mut extra), Ok(n) if n > 0) {
        return Err(TensorError::Dump("trailing bytes after body".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LatentTensor::from_vec(dims, data)
}

pub fn read_dump(path: &Path) -> Result<LatentTensor, TensorError> {
    let f = File::open(path).map_err(|e| TensorError::Dump(format!("{}: {e}", path.display())))?;
    read_dump_from(BufReader::new(f))
}

//! The on-disk tensor container (little-endian, bit-exact):
//! magic `LAFT` (4 bytes), format version u32 = 1, rank u32, rank u64
//! dimension sizes, then `product(dims)` IEEE-754 f32 values, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LAFT";
pub const VERSION: u32 = 1;

/// Upper bound on rank; anything larger is a corrupt header.
const MAX_RANK: u32 = 16;

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut filled = 0usize;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::format(
                *offset + filled as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        filled += n;
    }
    *offset += buf.len() as u64;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    read_exact_at(r, &mut magic, &mut offset, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}, expected \"LAFT\"")));
    }
    let mut word = [0u8; 4];
    read_exact_at(r, &mut word, &mut offset, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    read_exact_at(r, &mut word, &mut offset, "rank")?;
    let rank = u32::from_le_bytes(word);
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(8, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count = 1usize;
    for i in 0..rank {
        let mut dword = [0u8; 8];
        read_exact_at(r, &mut dword, &mut offset, "dimension")?;
        let d = u64::from_le_bytes(dword);
        if d == 0 {
            return Err(Error::format(
                offset - 8,
                format!("dimension {i} is zero"),
            ));
        }
        let d = usize::try_from(d)
            .map_err(|_| Error::format(offset - 8, format!("dimension {d} overflows usize")))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format(offset - 8, "element count overflows".to_string()))?;
        shape.push(d);
    }
    let mut data = vec![0.0f32; count];
    for v in data.iter_mut() {
        read_exact_at(r, &mut word, &mut offset, "payload")?;
        *v = f32::from_le_bytes(word);
    }
    // Trailing junk means the file is not what it claims to be.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format(offset, "trailing bytes after payload".to_string()));
    }
    Tensor::new(shape, data)
        .map_err(|e| Error::format(12 + 8 * rank as u64, format!("invalid payload: {e}")))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    read_tensor(&mut r)
}

//! `SGF1` dense tensor blocks: the magic bytes `SGF1`, then rows and cols
//! as little-endian `u32`, then `rows × cols` little-endian IEEE-754
//! `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGF1";

#[derive(Clone, Debug, PartialEq)]
pub struct SgfBlock {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

pub fn write_block(w: &mut impl Write, rows: usize, cols: usize, values: &[f32]) -> std::io::Result<()> {
    assert_eq!(values.len(), rows * cols, "SGF1 payload does not match its header");
    w.write_all(MAGIC)?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads one block. `what` names the source in error messages.
pub fn read_block(r: &mut impl Read, what: &Path) -> Result<SgfBlock> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(what, "truncated SGF1 header"))?;
    if &header[..4] != MAGIC {
        return Err(Error::format(what, "bad magic bytes, expected SGF1"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; rows * cols * 4];
    r.read_exact(&mut payload).map_err(|_| {
        Error::format(what, format!("SGF1 payload shorter than {rows}x{cols} values"))
    })?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SgfBlock { rows, cols, values })
}

pub fn write_file(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_block(&mut w, rows, cols, values)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a file holding exactly one block.
pub fn read_file(path: &Path) -> Result<SgfBlock> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let block = read_block(&mut r, path)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(block),
        Ok(_) => Err(Error::format(path, "trailing bytes after SGF1 payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}

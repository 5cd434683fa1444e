//! `ARGD01` checkpoint format: 6-byte magic, rows and cols as u64 LE, then
//! `rows*cols` f64 LE values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LinalgError, Matrix, Result};

pub const MAGIC: &[u8; 6] = b"ARGD01";

pub fn write_matrix<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Matrix> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(LinalgError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let mut word = [0u8; 8];
    read_exact(&mut r, &mut word, "row count")?;
    let rows = u64::from_le_bytes(word);
    read_exact(&mut r, &mut word, "column count")?;
    let cols = u64::from_le_bytes(word);
    let len = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .filter(|&n| n > 0 && n <= (1 << 28))
        .ok_or_else(|| LinalgError::Format(format!("unsupported shape {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        read_exact(&mut r, &mut word, "payload")?;
        data.push(f64::from_le_bytes(word));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(LinalgError::Format("trailing bytes after payload".into()));
    }
    Matrix::from_vec(rows as usize, cols as usize, data)
        .map_err(|e| LinalgError::Format(format!("invalid payload: {e}")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => LinalgError::Format(format!("truncated file while reading {what}")),
        _ => LinalgError::Io(e),
    })
}

/// Writes atomically through a sibling temp file.
pub fn write_matrix_file(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(22 + 8 * m.data().len());
    write_matrix(&mut bytes, m)?;
    let tmp = path.with_extension("argd.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    read_matrix(bytes.as_slice())
}

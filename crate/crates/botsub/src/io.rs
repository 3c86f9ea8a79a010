//! Shared file I/O: the binary matrix format and little-endian primitives
//! used by the model and subgraph-cache files.
//!
//! A matrix file starts with one ASCII header line `rows cols\n` followed
//! by `rows * cols` row-major little-endian 32-bit floats. `.csv` files
//! (one row per line, comma-separated) are accepted as a fallback.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Read one `\n`-terminated line from a byte stream without buffering past
/// it, so binary payload can follow text headers in the same file.
fn read_text_line(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let got = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if got == 0 {
            break;
        }
        if byte[0] == b'\n' {
            break;
        }
        buf.push(byte[0]);
        if buf.len() > 1 << 16 {
            return Err(Error::format(path, "header line too long"));
        }
    }
    String::from_utf8(buf).map_err(|_| Error::format(path, "header line is not UTF-8"))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_matrix_to(&mut w, m, path)
}

pub(crate) fn write_matrix_to(w: &mut impl Write, m: &Array2<f64>, path: &Path) -> Result<()> {
    let err = |e| Error::io(path, e);
    writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(err)?;
    for &v in m.iter() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(err)?;
    }
    Ok(())
}

/// Read a matrix, dispatching on the `.csv` extension.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_matrix_csv(path)
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        read_matrix_from(&mut r, path)
    }
}

pub(crate) fn read_matrix_from(r: &mut impl Read, path: &Path) -> Result<Array2<f64>> {
    let header = read_text_line(r, path)?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad matrix header `{header}`")))?;
    let cols: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad matrix header `{header}`")))?;
    if parts.next().is_some() {
        return Err(Error::format(path, format!("bad matrix header `{header}`")));
    }
    let mut bytes = vec![0u8; rows * cols * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format(path, format!("truncated matrix payload: {e}")))?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::format(path, format!("shape error: {e}")))
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut width = 0usize;
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad float `{tok}`")))?;
            data.push(v);
            width += 1;
        }
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected {c} columns, found {width}"),
                ));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::format(path, format!("shape error: {e}")))
}

// Little-endian primitives for the versioned binary formats.

pub(crate) fn put_u64(w: &mut impl Write, v: u64, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn put_str(w: &mut impl Write, s: &str, path: &Path) -> Result<()> {
    put_u64(w, s.len() as u64, path)?;
    w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn get_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated file: {e}")))?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn get_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = get_u64(r, path)? as usize;
    if len > 1 << 20 {
        return Err(Error::format(path, "string length out of bounds"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(path, format!("truncated file: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::format(path, "invalid UTF-8 string"))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(path, format!("truncated file: {e}")))?;
    if &b != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&b)
            ),
        ));
    }
    Ok(())
}

pub(crate) fn put_vec(w: &mut impl Write, v: &[f64], path: &Path) -> Result<()> {
    put_u64(w, v.len() as u64, path)?;
    for &x in v {
        put_f64(w, x, path)?;
    }
    Ok(())
}

pub(crate) fn get_vec(r: &mut impl Read, path: &Path) -> Result<Vec<f64>> {
    let len = get_u64(r, path)? as usize;
    if len > 1 << 28 {
        return Err(Error::format(path, "vector length out of bounds"));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(get_f64(r, path)?);
    }
    Ok(out)
}

pub(crate) fn put_array2(w: &mut impl Write, m: &Array2<f64>, path: &Path) -> Result<()> {
    put_u64(w, m.nrows() as u64, path)?;
    put_u64(w, m.ncols() as u64, path)?;
    for &v in m.iter() {
        put_f64(w, v, path)?;
    }
    Ok(())
}

pub(crate) fn get_array2(r: &mut impl Read, path: &Path) -> Result<Array2<f64>> {
    let rows = get_u64(r, path)? as usize;
    let cols = get_u64(r, path)? as usize;
    if rows.saturating_mul(cols) > 1 << 28 {
        return Err(Error::format(path, "tensor size out of bounds"));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(get_f64(r, path)?);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::format(path, format!("shape error: {e}")))
}

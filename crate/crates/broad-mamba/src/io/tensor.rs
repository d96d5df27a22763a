//! Single-tensor binary format, fixed little-endian layout:
//!
//! ```text
//! magic   4 bytes  "BMTF"
//! version 1 byte   1
//! dtype   1 byte   1 = 32-bit float
//! rank    1 byte
//! dims    rank * u32
//! payload product(dims) * f32, row-major
//! crc32   u32 over the payload bytes
//! ```
//!
//! Writes go to a temp file in the target directory and are renamed into
//! place. Loads verify the checksum and every structural field.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BMTF";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut crc = i as u32;
            for _ in 0..8 {
                crc = if crc & 1 == 1 {
                    0xEDB8_8320 ^ (crc >> 1)
                } else {
                    crc >> 1
                };
            }
            *slot = crc;
        }
        table
    })
}

/// CRC-32 (IEEE reflected polynomial).
pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// Serializes one tensor to bytes.
pub fn encode(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch {
            what: "tensor payload",
            expected: format!("{expected} values"),
            got: format!("{}", data.len()),
        });
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::InvalidParameter("tensor rank exceeds 255".into()));
    }
    let mut out = Vec::with_capacity(7 + dims.len() * 4 + data.len() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidParameter(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    let payload_start = out.len();
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses one tensor from bytes, verifying structure and checksum.
pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let fail = |msg: &str| Error::Corrupt(format!("tensor: {msg}"));
    if bytes.len() < 7 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(fail(&format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(fail(&format!("unsupported dtype {}", bytes[5])));
    }
    let rank = bytes[6] as usize;
    let dims_end = 7 + rank * 4;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let start = 7 + i * 4;
        let d = u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap());
        dims.push(d as usize);
    }
    let count: usize = dims.iter().product();
    let payload_end = dims_end + count * 4;
    if bytes.len() != payload_end + 4 {
        return Err(fail(&format!(
            "size mismatch: expected {} bytes, got {}",
            payload_end + 4,
            bytes.len()
        )));
    }
    let payload = &bytes[dims_end..payload_end];
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    let actual = crc32(payload);
    if stored != actual {
        return Err(fail(&format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode(dims, data)?;
    write_atomic(path, &bytes)
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Corrupt(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes `bytes` to `path` through a temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.to_path_buf();
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("bad path {}", path.display())))?;
    tmp.set_file_name(format!("{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// f64 helpers: tensors are stored single precision.
pub fn write_array2(path: &Path, arr: &ndarray::Array2<f64>) -> Result<()> {
    let data: Vec<f32> = arr.iter().map(|&v| v as f32).collect();
    write_tensor(path, &[arr.nrows(), arr.ncols()], &data)
}

pub fn read_array2(path: &Path) -> Result<ndarray::Array2<f64>> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(Error::Corrupt(format!(
            "{}: expected rank 2, got {}",
            path.display(),
            dims.len()
        )));
    }
    let data: Vec<f64> = data.into_iter().map(f64::from).collect();
    ndarray::Array2::from_shape_vec((dims[0], dims[1]), data)
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

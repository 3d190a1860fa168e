//! IDX files: big-endian header `00 00 <type> <ndims>`, one u32 per
//! dimension, then raw unsigned bytes.

use std::path::Path;

use super::{Dataset, DatasetMeta};
use crate::error::{io_error, Error, Location, Result};
use crate::linalg::Matrix;

const UBYTE: u8 = 0x08;

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn format_error(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location: Location::Byte(offset),
        message: message.into(),
    }
}

fn parse(path: &Path, bytes: &[u8], expected_dims: u8) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_error(
            path,
            bytes.len() as u64,
            "truncated magic number",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_error(
            path,
            0,
            "magic number must start with two zero bytes",
        ));
    }
    if bytes[2] != UBYTE {
        return Err(format_error(
            path,
            2,
            format!("unsupported element type 0x{:02x}, expected 0x08", bytes[2]),
        ));
    }
    if bytes[3] != expected_dims {
        return Err(format_error(
            path,
            3,
            format!(
                "magic 0x08{:02x} has {} dimensions, expected 0x08{:02x}",
                bytes[3], bytes[3], expected_dims
            ),
        ));
    }
    let ndims = expected_dims as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format_error(
            path,
            bytes.len() as u64,
            "truncated dimension header",
        ));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available != count {
        return Err(format_error(
            path,
            (header + available.min(count)) as u64,
            format!("header declares {count} bytes of data, file has {available}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_error(path))
}

/// Loads an image file (magic 0x0803) and a label file (magic 0x0801).
/// Pixels are scaled to `[0, 1]`; the class count is `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse(images, &read(images)?, 3)?;
    let lab = parse(labels, &read(labels)?, 1)?;
    let (n, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != n {
        return Err(format_error(
            labels,
            4,
            format!("{} labels for {n} images", lab.dims[0]),
        ));
    }
    let d = rows * cols;
    let inputs = Matrix::from_vec(n, d, img.data.iter().map(|&p| p as f64 / 255.0).collect())?;
    let label_idx: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let classes = label_idx.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(
        Dataset::from_labels(inputs, &label_idx, classes)?.with_meta(DatasetMeta {
            source: format!("idx:{}", images.display()),
            phases: None,
            input_scale: Some(255.0),
        }),
    )
}

fn encode(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Writes a classification dataset as an image/label IDX pair. Inputs are
/// mapped back to bytes with `round(255 v)`.
pub fn write_idx(
    ds: &Dataset,
    rows: usize,
    cols: usize,
    images: &Path,
    labels: &Path,
) -> Result<()> {
    if rows * cols != ds.input_dim() {
        return Err(Error::Argument(format!(
            "{rows}x{cols} images need {} features, dataset has {}",
            rows * cols,
            ds.input_dim()
        )));
    }
    let label_idx = ds
        .labels()
        .ok_or_else(|| Error::Unsupported("IDX export needs a classification dataset".into()))?;
    if label_idx.iter().any(|&l| l > 255) {
        return Err(Error::Unsupported("IDX labels must fit in one byte".into()));
    }
    let pixels: Vec<u8> = ds
        .inputs
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    std::fs::write(images, encode(&[ds.len(), rows, cols], &pixels)).map_err(io_error(images))?;
    let lab: Vec<u8> = label_idx.iter().map(|&l| l as u8).collect();
    std::fs::write(labels, encode(&[ds.len()], &lab)).map_err(io_error(labels))
}

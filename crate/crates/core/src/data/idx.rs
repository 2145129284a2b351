use std::path::Path;

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(what: &str, need: usize, have: usize) -> Error {
    Error::io(
        what,
        std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("need {need} bytes, file has {have}"),
        ),
    )
}

fn header(bytes: &[u8], magic: u32, words: usize, what: &str) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "{what}: too short for an IDX header ({} bytes)",
            bytes.len()
        )));
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if found != magic {
        return Err(Error::Format(format!(
            "{what}: bad IDX magic {found:#010x}, expected {magic:#010x}"
        )));
    }
    let need = 4 + 4 * words;
    if bytes.len() < need {
        return Err(Error::Format(format!("{what}: IDX header truncated")));
    }
    Ok((0..words)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect())
}

/// Decode a rank-3 unsigned-byte IDX image file into `[N, rows, cols, 1]`
/// scaled to `[0, 1]`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8], what: &str) -> Result<Tensor<T>> {
    let dims = header(bytes, IDX_IMAGES_MAGIC, 3, what)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "{what}: empty image set {count}x{rows}x{cols}"
        )));
    }
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(truncated(what, need, bytes.len()));
    }
    let data = bytes[16..need]
        .iter()
        .map(|&b| T::from_f64(b as f64 / 255.0))
        .collect();
    Tensor::new(Dims::new(count, rows, cols, 1), data)
}

/// Decode a rank-1 unsigned-byte IDX label file.
pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>> {
    let count = header(bytes, IDX_LABELS_MAGIC, 1, what)?[0];
    let need = 8 + count;
    if bytes.len() < need {
        return Err(truncated(what, need, bytes.len()));
    }
    Ok(bytes[8..need].iter().map(|&b| b as usize).collect())
}

pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledBatch<T>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let images = parse_idx_images(&ib, &ip.display().to_string())?;
    let labels = parse_idx_labels(&lb, &lp.display().to_string())?;
    if images.dims().batch != labels.len() {
        return Err(Error::Consistency(format!(
            "{} holds {} images but {} holds {} labels",
            ip.display(),
            images.dims().batch,
            lp.display(),
            labels.len()
        )));
    }
    LabeledBatch::new(images, labels)
}

/// Encode `[N,H,W,1]` images in `[0,1]` as an IDX image file.
pub fn encode_idx_images<T: Scalar>(images: &Tensor<T>) -> Result<Vec<u8>> {
    let d = images.dims();
    if d.channels != 1 {
        return Err(Error::dims(
            "idx encode",
            &d.as_array(),
            &[d.batch, d.height, d.width, 1],
        ));
    }
    let mut out = Vec::with_capacity(16 + d.len());
    for word in [
        IDX_IMAGES_MAGIC,
        d.batch as u32,
        d.height as u32,
        d.width as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|v| (v.widen().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l).map_err(|_| Error::Range(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

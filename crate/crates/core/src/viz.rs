//! Grayscale exports of attention and local POCA maps as binary PGM (P5).

use crate::error::{Error, Result};
use crate::heads::NoahCache;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{Head, Model};

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::dims("pgm", &[height, width], &[pixels.len()]));
        }
        Ok(Pgm {
            width,
            height,
            maxval: 255,
            pixels,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parse a P5 file with an 8-bit maxval; `#` comments are allowed in the header.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("PGM header ends early".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .unwrap_or("?")
                    .to_string(),
            );
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!(
                "not a binary PGM: magic {:?}",
                fields[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let raster = bytes.get(pos + 1..).unwrap_or(&[]);
        if raster.len() != width * height {
            return Err(Error::Format(format!(
                "PGM raster holds {} bytes, header says {width}x{height}",
                raster.len()
            )));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            pixels: raster.to_vec(),
        })
    }
}

fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Min-max scaling to `[0, 255]`; a constant map becomes all zeros.
pub fn normalize_minmax(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                quantize((v - lo) / span)
            } else {
                0
            }
        })
        .collect()
}

/// Symmetric scaling: divide by the largest magnitude into `[-1, 1]`, then
/// map affinely to `[0, 255]` so that zero lands on mid-gray.
pub fn normalize_symmetric(values: &[f64]) -> Vec<u8> {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .iter()
        .map(|&v| {
            let s = if peak > 0.0 { v / peak } else { 0.0 };
            quantize((s + 1.0) / 2.0)
        })
        .collect()
}

/// Mass in each quadrant (0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right) of an `h×w` map. A pixel straddling a midline of an odd
/// extent is split between the two sides.
pub fn quadrant_mass(values: &[f64], h: usize, w: usize) -> [f64; 4] {
    let mut mass = [0.0; 4];
    let (mh, mw) = (h as f64 / 2.0, w as f64 / 2.0);
    for i in 0..h {
        let top = (mh - i as f64).clamp(0.0, 1.0);
        for j in 0..w {
            let left = (mw - j as f64).clamp(0.0, 1.0);
            let v = values[i * w + j];
            mass[0] += v * top * left;
            mass[1] += v * top * (1.0 - left);
            mass[2] += v * (1.0 - top) * left;
            mass[3] += v * (1.0 - top) * (1.0 - left);
        }
    }
    mass
}

fn slice<T: Scalar>(t: &Tensor<T>, b: usize, c: usize) -> Vec<f64> {
    let d = t.dims();
    let mut out = Vec::with_capacity(d.height * d.width);
    for i in 0..d.height {
        for j in 0..d.width {
            out.push(t.get(b, i, j, c).widen());
        }
    }
    out
}

/// Attention slice `A_n[b, ·, ·, m]`, row-major; in the shared variant the
/// single map serves every category.
pub fn attention_slice<T: Scalar>(
    cache: &NoahCache<T>,
    sample: usize,
    block: usize,
    category: usize,
) -> Vec<f64> {
    let a = cache.attention(block);
    let c = if a.dims().channels == 1 { 0 } else { category };
    slice(a, sample, c)
}

/// Merged local map `Σ_n Z_n[b, ·, ·, m]`.
pub fn poca_map<T: Scalar>(cache: &NoahCache<T>, sample: usize, category: usize) -> Vec<f64> {
    let mut acc = slice(cache.poca(0), sample, category);
    for n in 1..cache.groups() {
        for (a, v) in acc.iter_mut().zip(slice(cache.poca(n), sample, category)) {
            *a += v;
        }
    }
    acc
}

/// What to export: every `(sample, category)` pair for one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VizRequest {
    pub samples: Vec<usize>,
    pub block: usize,
    pub categories: Vec<usize>,
}

/// Named images for the requested slices: `attn_s{b}_n{n}_m{m}.pgm` and
/// `poca_s{b}_m{m}.pgm`.
pub fn render_maps<T: Scalar>(
    model: &Model<T>,
    images: &Tensor<T>,
    request: &VizRequest,
) -> Result<Vec<(String, Pgm)>> {
    let Head::Noah(head) = model.head() else {
        return Err(Error::Unsupported(
            "attention maps need a NOAH checkpoint, found a GAP head".into(),
        ));
    };
    let m = head.config().categories;
    let batch = images.dims().batch;
    if request.block >= head.config().groups {
        return Err(Error::Range(format!(
            "block {} outside 0..{}",
            request.block,
            head.config().groups
        )));
    }
    if let Some(c) = request.categories.iter().find(|&&c| c >= m) {
        return Err(Error::Range(format!("category {c} outside 0..{m}")));
    }
    if let Some(s) = request.samples.iter().find(|&&s| s >= batch) {
        return Err(Error::Range(format!("sample {s} outside 0..{batch}")));
    }
    let picked = images.select_batch(&request.samples)?;
    let (_, cache) = model.forward(&picked)?;
    let cache = cache.noah().expect("NOAH head yields a NOAH cache");
    let d = cache.attention(request.block).dims();
    let mut out = Vec::new();
    for (k, &s) in request.samples.iter().enumerate() {
        for &c in &request.categories {
            let attn = normalize_minmax(&attention_slice(cache, k, request.block, c));
            out.push((
                format!("attn_s{s}_n{}_m{c}.pgm", request.block),
                Pgm::new(d.width, d.height, attn)?,
            ));
            let poca = normalize_symmetric(&poca_map(cache, k, c));
            out.push((
                format!("poca_s{s}_m{c}.pgm"),
                Pgm::new(d.width, d.height, poca)?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_slice_is_flat() {
        let px = normalize_minmax(&[1.0 / 9.0; 9]);
        assert!(px.iter().all(|&p| p == px[0]));
        assert_eq!(normalize_symmetric(&[0.0; 4]), vec![128; 4]);
    }

    #[test]
    fn one_hot_is_single_white_pixel() {
        let mut v = vec![0.0; 12];
        v[5] = 1.0;
        let px = normalize_minmax(&v);
        assert_eq!(px[5], 255);
        assert_eq!(px.iter().filter(|&&p| p == 0).count(), 11);
    }

    #[test]
    fn symmetric_scaling_centres_zero() {
        assert_eq!(
            normalize_symmetric(&[-2.0, 0.0, 2.0, 1.0]),
            vec![0, 128, 255, 191]
        );
    }

    #[test]
    fn pgm_roundtrips() {
        let img = Pgm::new(3, 2, vec![0, 1, 2, 3, 4, 255]).unwrap();
        let bytes = img.to_bytes();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(Pgm::parse(&bytes).unwrap(), img);
        let commented = b"P5 # made by hand\n3 2\n# max\n255\n\x00\x01\x02\x03\x04\xff";
        assert_eq!(Pgm::parse(commented).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_bad_files() {
        assert!(Pgm::parse(b"").is_err());
        assert!(Pgm::parse(b"P2\n1 1\n255\n\x00").is_err());
        assert!(Pgm::parse(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Pgm::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn quadrant_mass_even_and_odd() {
        let mut v = vec![0.0; 16];
        v[4 + 3] = 2.0;
        assert_eq!(quadrant_mass(&v, 4, 4), [0.0, 2.0, 0.0, 0.0]);
        let centre = [0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(quadrant_mass(&centre, 3, 3), [1.0; 4]);
        let total: f64 = quadrant_mass(&[1.0; 49], 7, 7).iter().sum();
        assert!((total - 49.0).abs() < 1e-12);
    }
}

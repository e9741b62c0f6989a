//! Grayscale image ingestion (PGM, IDX) and the histogram raster used for
//! frames.
//!
//! Pixel `(i, j)` sits at `(i/(n−1), j/(n−1))` in the unit square, `i`
//! counting rows from the top. A point's first coordinate is therefore the
//! vertical position, growing downwards.

use std::fs;
use std::path::Path;

use gradnetot_core::{DenseMatrix, DenseVector};

use crate::error::{CliError, CliResult};

/// Intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> CliResult<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(CliError::MalformedData(format!(
                "{} values for a {rows}x{cols} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CliError::MalformedData(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_vec(self.rows, self.cols, self.data.clone()).expect("shape checked at construction")
    }
}

/// Reads a PGM (P2 or P5) or an IDX image file, picking the format from the
/// leading bytes. `index` selects the image inside an IDX file and must be
/// 0 for PGM.
pub fn load_image(path: &Path, index: usize) -> CliResult<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"P") {
        if index != 0 {
            return Err(CliError::IndexOutOfRange { index, count: 1 });
        }
        parse_pgm(&bytes)
    } else {
        parse_idx(&bytes, index)
    }
}

pub fn load_pgm(path: &Path) -> CliResult<ImageGrid> {
    parse_pgm(&fs::read(path).map_err(|e| CliError::io(path, e))?)
}

pub fn load_idx(path: &Path, index: usize) -> CliResult<ImageGrid> {
    parse_idx(&fs::read(path).map_err(|e| CliError::io(path, e))?, index)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> CliResult<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' && self.bytes[self.pos] != b'\r' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(CliError::MalformedHeader("unexpected end of file".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| CliError::MalformedHeader("header is not ASCII".into()))
    }

    fn number(&mut self, what: &str) -> CliResult<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| CliError::MalformedHeader(format!("{what} is not a number: {tok:?}")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> CliResult<ImageGrid> {
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?.to_owned();
    if magic != "P2" && magic != "P5" {
        return Err(CliError::UnsupportedMagic(magic));
    }
    let cols = h.number("width")?;
    let rows = h.number("height")?;
    let maxval = h.number("maxval")?;
    if cols == 0 || rows == 0 {
        return Err(CliError::MalformedHeader(format!("empty {cols}x{rows} image")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CliError::MalformedHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = rows * cols;
    let raw: Vec<usize> = if magic == "P2" {
        (0..n)
            .map(|_| {
                let tok = h.token().map_err(|_| CliError::MalformedData(format!("fewer than {n} samples")))?;
                tok.parse()
                    .map_err(|_| CliError::MalformedData(format!("sample is not a number: {tok:?}")))
            })
            .collect::<CliResult<_>>()?
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = h.pos + 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let body = bytes.get(start..start + n * width).ok_or_else(|| {
            CliError::MalformedData(format!("raster needs {} bytes, file has {}", n * width, bytes.len().saturating_sub(start)))
        })?;
        if width == 1 {
            body.iter().map(|&b| b as usize).collect()
        } else {
            body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        }
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(CliError::MalformedData(format!("sample {v} exceeds maxval {maxval}")));
    }
    let data = raw.into_iter().map(|v| v as f64 / maxval as f64).collect();
    ImageGrid::new(rows, cols, data)
}

/// Magic number of an IDX file of unsigned bytes with three dimensions.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

pub fn parse_idx(bytes: &[u8], index: usize) -> CliResult<ImageGrid> {
    let word = |k: usize| -> CliResult<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| CliError::MalformedHeader(format!("IDX header truncated at {} bytes", bytes.len())))
    };
    let magic = word(0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::UnsupportedMagic(format!("0x{magic:08x}")));
    }
    let count = word(1)? as usize;
    let rows = word(2)? as usize;
    let cols = word(3)? as usize;
    if rows == 0 || cols == 0 {
        return Err(CliError::MalformedHeader(format!("empty {rows}x{cols} images")));
    }
    if index >= count {
        return Err(CliError::IndexOutOfRange { index, count });
    }
    let size = rows * cols;
    let start = 16 + index * size;
    let body = bytes
        .get(start..start + size)
        .ok_or_else(|| CliError::MalformedData(format!("file ends before image {index}")))?;
    ImageGrid::new(rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Binary 8-bit PGM.
pub fn encode_pgm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend(img.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(path: &Path, img: &ImageGrid) -> CliResult<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| CliError::io(path, e))
}

/// 2-D histogram of `points` on an `n×n` pixel grid, each point counted at
/// its nearest pixel centre, normalized so the fullest pixel is 1. Points
/// outside the unit square (by more than half a pixel) are dropped.
pub fn rasterize(points: &[DenseVector], n: usize) -> CliResult<ImageGrid> {
    if n < 2 {
        return Err(CliError::Config(format!("raster size must be at least 2, got {n}")));
    }
    let mut counts = vec![0.0; n * n];
    let scale = (n - 1) as f64;
    for p in points {
        if p.dim() != 2 {
            return Err(CliError::Core(gradnetot_core::Error::InvalidArgument(format!(
                "rasterize needs 2-D points, got {}",
                p.dim()
            ))));
        }
        let (i, j) = ((p[0] * scale).round(), (p[1] * scale).round());
        if (0.0..=scale).contains(&i) && (0.0..=scale).contains(&j) {
            counts[i as usize * n + j as usize] += 1.0;
        }
    }
    let max = counts.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        counts.iter_mut().for_each(|c| *c /= max);
    }
    ImageGrid::new(n, n, counts)
}

/// Pearson correlation of the two pixel arrays; 0 when either is constant.
pub fn ncc(a: &ImageGrid, b: &ImageGrid) -> CliResult<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(CliError::MalformedData(format!(
            "cannot correlate {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let n = a.data.len() as f64;
    let ma = a.data.iter().sum::<f64>() / n;
    let mb = b.data.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data.iter().zip(&b.data) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    Ok(if va > 0.0 && vb > 0.0 { num / (va * vb).sqrt() } else { 0.0 })
}

//! Bit-exact file formats.
//!
//! HSC1 cube format, little-endian throughout:
//!
//! ```text
//! offset  size        content
//! 0       4           magic "HSC1"
//! 4       4           u32 C (bands)
//! 8       4           u32 H (height)
//! 12      4           u32 W (width)
//! 16      4*C         f32 wavelengths, nm, strictly increasing
//! 16+4C   4*C*H*W     f32 reflectance, band-major (band, row, column)
//! ```
//!
//! Masks are binary PGM (P5, maxval 255): 0 = background, 255 = lesion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HsiCube, HsiError, Mask};

pub const HSC1_MAGIC: &[u8; 4] = b"HSC1";

/// File size implied by the header (useful for integrity checks).
pub fn hsc1_file_size(bands: usize, height: usize, width: usize) -> usize {
    16 + 4 * bands + 4 * bands * height * width
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<(), HsiError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HSC1_MAGIC)?;
    for dim in [cube.bands(), cube.height(), cube.width()] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &nm in cube.wavelengths() {
        w.write_all(&(nm as f32).to_le_bytes())?;
    }
    for &v in cube.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube, HsiError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != HSC1_MAGIC {
        return Err(HsiError::BadMagic {
            expected: "HSC1",
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let mut buf = [0u8; 4];
        read_exact(&mut r, &mut buf, ["bands", "height", "width"][i])?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [bands, height, width] = dims;
    let wavelengths = read_f32s(&mut r, bands, "wavelengths")?;
    for i in 1..bands {
        if wavelengths[i] <= wavelengths[i - 1] {
            return Err(HsiError::NonIncreasingWavelengths { index: i });
        }
    }
    let data = read_f32s(&mut r, bands * height * width, "reflectance payload")?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(HsiError::TrailingBytes);
    }
    HsiCube::new(wavelengths, height, width, data)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), HsiError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            HsiError::Truncated(what.to_string())
        } else {
            HsiError::Io(e)
        }
    })
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>, HsiError> {
    let mut bytes = vec![0u8; 4 * n];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn save_mask_pgm(mask: &Mask, path: &Path) -> Result<(), HsiError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Write any grayscale grid as 8-bit PGM after per-image min-max
/// normalization (rendering concern only; raw values belong in CSV).
pub fn save_gray_pgm(values: &[f64], height: usize, width: usize, path: &Path) -> Result<(), HsiError> {
    if values.len() != height * width {
        return Err(HsiError::InvalidCube(format!(
            "{} values for {height}x{width} image",
            values.len()
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask_pgm(path: &Path) -> Result<Mask, HsiError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| HsiError::Truncated("pgm header".into()))?;
    if magic != b"P5" {
        return Err(HsiError::BadMagic {
            expected: "P5",
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = parse_usize(&bytes, &mut pos, "width")?;
    let height = parse_usize(&bytes, &mut pos, "height")?;
    let maxval = parse_usize(&bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(HsiError::InvalidCube(format!("pgm maxval {maxval}, expected 255")));
    }
    pos += 1; // single whitespace byte after maxval
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(HsiError::Truncated("pgm payload".into()));
    }
    let data = bytes[pos..pos + need].iter().map(|&b| b >= 128).collect();
    Mask::new(height, width, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn parse_usize(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, HsiError> {
    let tok = next_token(bytes, pos).ok_or_else(|| HsiError::Truncated(format!("pgm {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HsiError::InvalidCube(format!("unparseable pgm {what}")))
}

//! Image buffers and the two on-disk image formats: 8-bit binary PPM (P6)
//! and the lossless float dump (header line `HOIGS-IMG v1 W H C`, then
//! row-major little-endian f32).

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved image with `channels` f64 values per pixel in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageBuf {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn rgb(width: usize, height: usize) -> Self {
        Self::new(width, height, 3)
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// Write as binary PPM. Requires 3 channels; values clamped to [0,1]
    /// and quantized to 8 bits.
    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        assert_eq!(self.channels, 3, "PPM output needs an RGB image");
        let mut bytes = Vec::with_capacity(self.width * self.height * 3 + 32);
        bytes.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for v in &self.data {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Write the lossless float dump: values cast to f32 little-endian.
    pub fn save_float_dump(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4 + 32);
        bytes.extend_from_slice(
            format!("HOIGS-IMG v1 {} {} {}\n", self.width, self.height, self.channels).as_bytes(),
        );
        for v in &self.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_float_dump(path: &Path) -> Result<ImageBuf> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::MalformedContainer("float dump has no header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::MalformedContainer("float dump header is not utf-8".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "HOIGS-IMG" {
            return Err(Error::MalformedContainer(format!(
                "bad float dump header: {header}"
            )));
        }
        if parts[1] != "v1" {
            return Err(Error::VersionMismatch(parts[1].to_string()));
        }
        let width: usize = parts[2]
            .parse()
            .map_err(|_| Error::MalformedContainer("bad width".into()))?;
        let height: usize = parts[3]
            .parse()
            .map_err(|_| Error::MalformedContainer("bad height".into()))?;
        let channels: usize = parts[4]
            .parse()
            .map_err(|_| Error::MalformedContainer("bad channel count".into()))?;
        let body = &bytes[nl + 1..];
        let expected = width * height * channels * 4;
        if body.len() != expected {
            return Err(Error::MalformedContainer(format!(
                "float dump body is {} bytes, expected {expected}",
                body.len()
            )));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for chunk in body.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        Ok(ImageBuf {
            width,
            height,
            channels,
            data,
        })
    }

    /// Exact f32-level equality with another image, the comparison used by
    /// the bit-exactness checks (renders are stored as f32).
    pub fn bit_equal_f32(&self, other: &ImageBuf) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits())
    }
}

/// Format a float like C's `%.9g`: nine significant digits, trailing zeros
/// stripped, scientific notation outside [1e-4, 1e9). Used by every CSV
/// writer in the crate.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if exp < -4 || exp >= 9 {
        let s = format!("{:.*e}", 8, x);
        // trim trailing zeros in the mantissa: "1.20000000e5" -> "1.2e5"
        if let Some(epos) = s.find('e') {
            let (mant, e) = s.split_at(epos);
            let mant = mant.trim_end_matches('0').trim_end_matches('.');
            let epart: i32 = e[1..].parse().unwrap();
            format!("{mant}e{epart:+03}")
        } else {
            s
        }
    } else {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    s
}

//! Rendered rasters and the raw frame dump format.

use std::io::{self, Read, Write};

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default resolution side, matching the reference corpus statistics.
pub const DEFAULT_SIDE: u32 = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("resolution must be at least 1x1, got {width}x{height}")]
pub struct InvalidResolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Result<Self, InvalidResolution> {
        if width == 0 || height == 0 {
            return Err(InvalidResolution { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn square(side: u32) -> Result<Self, InvalidResolution> {
        Self::new(side, side)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn byte_len(&self) -> usize {
        self.pixel_count() * 3
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self { width: DEFAULT_SIDE, height: DEFAULT_SIDE }
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Resolution {
    type Err = String;

    /// Accepts `N` (square) or `WxH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("bad resolution `{s}`: {e}"));
        let (w, h) = match s.split_once(['x', 'X']) {
            Some((w, h)) => (parse(w)?, parse(h)?),
            None => {
                let n = parse(s)?;
                (n, n)
            }
        };
        Resolution::new(w, h).map_err(|e| e.to_string())
    }
}

/// A row-major RGB8 raster. Row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub shader_id: String,
    pub t: f64,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, shader_id: impl Into<String>, t: f64) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize * 3, "pixel buffer size");
        Self { width, height, pixels, shader_id: shader_id.into(), t }
    }

    pub fn filled(res: Resolution, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(res.byte_len()).collect();
        Self::new(res.width, res.height, pixels, "", 0.0)
    }

    pub fn resolution(&self) -> Resolution {
        Resolution { width: self.width, height: self.height }
    }

    #[inline]
    pub fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn same_dimensions(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Baseline JPEG encoding at the given quality (1..=100).
    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>, image::ImageError> {
        let mut out = Vec::new();
        JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100)).encode(
            &self.pixels,
            self.width,
            self.height,
            ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<(), image::ImageError> {
        image::save_buffer(path, &self.pixels, self.width, self.height, ExtendedColorType::Rgb8)
    }
}

/// Ordered frames of one program at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub resolution: Resolution,
    pub frames: Vec<Image>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Raw dump: width, height, frame count as little-endian `u32`, then
    /// every frame's RGB8 bytes back to back.
    pub fn write_raw<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.resolution.width.to_le_bytes())?;
        w.write_all(&self.resolution.height.to_le_bytes())?;
        w.write_all(&(self.frames.len() as u32).to_le_bytes())?;
        for f in &self.frames {
            w.write_all(&f.pixels)?;
        }
        Ok(())
    }
}

/// Decoded raw dump: resolution and per-frame pixel buffers.
pub fn read_raw<R: Read>(mut r: R) -> io::Result<(Resolution, Vec<Vec<u8>>)> {
    let mut word = [0u8; 4];
    let mut next = |r: &mut R| -> io::Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let width = next(&mut r)?;
    let height = next(&mut r)?;
    let count = next(&mut r)?;
    let res = Resolution::new(width, height).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut buf = vec![0u8; res.byte_len()];
        r.read_exact(&mut buf)?;
        frames.push(buf);
    }
    Ok((res, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_resolution() {
        assert_eq!("64".parse::<Resolution>().unwrap(), Resolution::square(64).unwrap());
        assert_eq!("32x16".parse::<Resolution>().unwrap(), Resolution::new(32, 16).unwrap());
        assert!("0x4".parse::<Resolution>().is_err());
        assert!("abc".parse::<Resolution>().is_err());
    }

    #[test]
    fn raw_dump_layout() {
        let res = Resolution::new(2, 1).unwrap();
        let a = Image::filled(res, [1, 2, 3]);
        let b = Image::filled(res, [4, 5, 6]);
        let batch = ImageBatch { resolution: res, frames: vec![a, b] };
        let mut buf = Vec::new();
        batch.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 2 * 6);
        assert_eq!(&buf[..12], &[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        let (r, frames) = read_raw(&buf[..]).unwrap();
        assert_eq!(r, res);
        assert_eq!(frames[1], vec![4, 5, 6, 4, 5, 6]);
    }

    #[test]
    fn jpeg_is_baseline_jfif() {
        let img = Image::filled(Resolution::square(16).unwrap(), [200, 10, 10]);
        let bytes = img.encode_jpeg(90).unwrap();
        assert_eq!(&bytes[..2], &[0xFF, 0xD8]);
        // SOF0 marker = baseline DCT
        assert!(bytes.windows(2).any(|w| w == [0xFF, 0xC0]));
    }
}

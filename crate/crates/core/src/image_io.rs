//! Binary Netpbm (P5/P6, maxval 255) input and output.
//!
//! Pixels live in the unit interval: sample `k` maps to `k / 255` on read and
//! back to `round(v * 255)` on write, so a read/write/read cycle is lossless.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("netpbm parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("dimension error: {0}")]
    Dimension(String),
}

impl ImageError {
    fn parse(offset: usize, reason: impl Into<String>) -> Self {
        ImageError::Parse {
            offset,
            reason: reason.into(),
        }
    }
}

/// A row-major, channel-interleaved raster with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Dimension(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ImageError::Dimension(format!(
                "expected {expected} samples for {width}x{height}x{channels}, got {}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Dimension(format!(
                "sample {bad} = {} outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds an image from 8-bit samples.
    pub fn from_bytes(width: u32, height: u32, channels: u8, bytes: &[u8]) -> Result<Self, ImageError> {
        Image::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: f64) -> Result<Self, ImageError> {
        let n = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Sample at column `x`, row `y`, channel `c`.
    pub fn get(&self, x: u32, y: u32, c: u8) -> f64 {
        self.pixels[self.index(x, y, c)]
    }

    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    /// Quantizes every sample to 8 bits, rounding half away from zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize_sample(v)).collect()
    }
}

fn quantize_sample(v: f64) -> u8 {
    // f64::round is half-away-from-zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Parses a binary P5 or P6 stream with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(ImageError::parse(0, "expected magic P5 or P6")),
    };
    cursor.pos = 2;
    let (width, _) = cursor.next_number("width")?;
    let (height, _) = cursor.next_number("height")?;
    let (maxval, maxval_offset) = cursor.next_number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::parse(
            maxval_offset,
            format!("maxval {maxval} unsupported, only 255"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(ImageError::parse(cursor.pos, "missing whitespace before raster")),
    }
    if width == 0 || height == 0 {
        return Err(ImageError::parse(2, "zero image dimension"));
    }
    let needed = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| ImageError::parse(2, "image dimensions overflow"))?;
    let raster = &bytes[cursor.pos..];
    if raster.len() < needed {
        return Err(ImageError::parse(
            bytes.len(),
            format!("truncated raster: need {needed} bytes, have {}", raster.len()),
        ));
    }
    Image::from_bytes(width, height, channels, &raster[..needed])
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Returns the parsed value and the offset of its first digit.
    fn next_number(&mut self, what: &str) -> Result<(u32, usize), ImageError> {
        let before = self.pos;
        self.skip_separators();
        if self.pos == before {
            return Err(ImageError::parse(self.pos, format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u32::from(b - b'0')))
                .ok_or_else(|| ImageError::parse(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImageError::parse(start, format!("expected {what}")));
        }
        Ok((value, start))
    }
}

/// Serializes to canonical Netpbm: `P6\n<w> <h>\n255\n` (or `P5`) + raster.
pub fn write_ppm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

/// Extracts a `w`×`h` window centered in `img` without resampling.
pub fn center_crop(img: &Image, w: u32, h: u32) -> Result<Image, ImageError> {
    if w > img.width || h > img.height || w == 0 || h == 0 {
        return Err(ImageError::Dimension(format!(
            "cannot crop {w}x{h} from {}x{}",
            img.width, img.height
        )));
    }
    let x0 = (img.width - w) / 2;
    let y0 = (img.height - h) / 2;
    let c = img.channels as usize;
    let mut pixels = Vec::with_capacity(w as usize * h as usize * c);
    for y in y0..y0 + h {
        let start = img.index(x0, y, 0);
        pixels.extend_from_slice(&img.pixels[start..start + w as usize * c]);
    }
    Ok(Image {
        width: w,
        height: h,
        channels: img.channels,
        pixels,
    })
}

//! Patch vector quantization: images become grids of codebook indices.
//!
//! An image is cut into `p`×`p` patches, each flattened row-major with
//! interleaved channels into a `p²·c` vector. A k-means codebook maps every
//! vector to the index of its nearest entry. Multi-scale mode quantizes a
//! residual pyramid coarse to fine against the same codebook.

pub mod kmeans;
mod multiscale;
pub mod nearest;

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::image_io::Image;
use nearest::NearestIndex;

pub use multiscale::{
    detokenize_multiscale, dyadic_resolutions, ideal_residuals, reconstruct_multiscale, tokenize_multiscale,
    validate_resolutions, Resolution, ScalePyramid,
};

pub const MIN_CODEBOOK_SIZE: usize = 2;
pub const MAX_CODEBOOK_SIZE: usize = 1 << 18;
pub const DEFAULT_PATCH_SIZE: u8 = 8;
pub const DEFAULT_CODEBOOK_SIZE: usize = 4096;

const CODEBOOK_MAGIC: &[u8; 4] = b"ARCB";
const CODEBOOK_VERSION: u8 = 1;
const FLAG_ZERO_RESERVED: u8 = 0x01;
const CODEBOOK_HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1 + 1 + 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("token {id} out of range for codebook of size {size}")]
    Corrupt { id: u32, size: usize },
    #[error("invalid scale resolutions: {0}")]
    Resolutions(String),
    #[error("invalid codebook: {0}")]
    Codebook(String),
    #[error("codebook file: {0}")]
    Format(String),
}

/// A grid of `dim`-vectors, one per patch position, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    cols: usize,
    rows: usize,
    patch_size: u8,
    channels: u8,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(cols: usize, rows: usize, patch_size: u8, channels: u8, data: Vec<f64>) -> Result<Self, TokenizerError> {
        let dim = patch_dim(patch_size, channels);
        if cols == 0 || rows == 0 || patch_size == 0 || data.len() != cols * rows * dim {
            return Err(TokenizerError::Dimension(format!(
                "{cols}x{rows} grid of {dim}-vectors cannot hold {} values",
                data.len()
            )));
        }
        Ok(FeatureMap {
            cols,
            rows,
            patch_size,
            channels,
            data,
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        patch_dim(self.patch_size, self.channels)
    }

    pub fn patch_size(&self) -> u8 {
        self.patch_size
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn vector(&self, col: usize, row: usize) -> &[f64] {
        let d = self.dim();
        let i = row * self.cols + col;
        &self.data[i * d..(i + 1) * d]
    }

    /// Reassembles the patches into an image, clamping samples to `[0, 1]`.
    pub fn to_image(&self) -> Image {
        let p = self.patch_size as usize;
        let c = self.channels as usize;
        let width = self.cols * p;
        let height = self.rows * p;
        let mut pixels = vec![0.0; width * height * c];
        for row in 0..self.rows {
            for col in 0..self.cols {
                let v = self.vector(col, row);
                for py in 0..p {
                    let dst = ((row * p + py) * width + col * p) * c;
                    let src = py * p * c;
                    for (o, &s) in pixels[dst..dst + p * c].iter_mut().zip(&v[src..src + p * c]) {
                        *o = s.clamp(0.0, 1.0);
                    }
                }
            }
        }
        Image::new(width as u32, height as u32, self.channels, pixels).expect("clamped samples form a valid image")
    }
}

pub fn patch_dim(patch_size: u8, channels: u8) -> usize {
    patch_size as usize * patch_size as usize * channels as usize
}

/// Cuts `img` into non-overlapping `patch_size`² patches.
pub fn extract_features(img: &Image, patch_size: u8) -> Result<FeatureMap, TokenizerError> {
    let p = patch_size as usize;
    if p == 0 || img.width() as usize % p != 0 || img.height() as usize % p != 0 {
        return Err(TokenizerError::Dimension(format!(
            "{}x{} image is not divisible into {patch_size}x{patch_size} patches",
            img.width(),
            img.height()
        )));
    }
    let c = img.channels() as usize;
    let width = img.width() as usize;
    let cols = width / p;
    let rows = img.height() as usize / p;
    let pixels = img.pixels();
    let mut data = Vec::with_capacity(pixels.len());
    for row in 0..rows {
        for col in 0..cols {
            for py in 0..p {
                let start = ((row * p + py) * width + col * p) * c;
                data.extend_from_slice(&pixels[start..start + p * c]);
            }
        }
    }
    FeatureMap::new(cols, rows, patch_size, img.channels(), data)
}

/// Non-overlapping patch tilings of `img` at every offset `(dx, dy)` with
/// both components multiples of `stride` below `patch_size`. Each tiling
/// covers the largest whole number of patches from its offset. A stride
/// equal to the patch size gives the single aligned tiling.
pub fn shifted_tilings(img: &Image, patch_size: u8, stride: u8) -> Result<Vec<FeatureMap>, TokenizerError> {
    let (p, s) = (u32::from(patch_size), u32::from(stride));
    if p == 0 || s == 0 || s > p {
        return Err(TokenizerError::Dimension(format!(
            "stride {stride} must lie in 1..={patch_size}"
        )));
    }
    let mut maps = Vec::new();
    for dy in (0..p).step_by(s as usize) {
        for dx in (0..p).step_by(s as usize) {
            let w = img.width().saturating_sub(dx) / p * p;
            let h = img.height().saturating_sub(dy) / p * p;
            if w == 0 || h == 0 {
                continue;
            }
            let c = img.channels() as usize;
            let mut pixels = Vec::with_capacity((w * h) as usize * c);
            for y in dy..dy + h {
                let start = (y as usize * img.width() as usize + dx as usize) * c;
                pixels.extend_from_slice(&img.pixels()[start..start + w as usize * c]);
            }
            let window = Image::new(w, h, img.channels(), pixels).expect("window of a valid image");
            maps.push(extract_features(&window, patch_size)?);
        }
    }
    if maps.is_empty() {
        return Err(TokenizerError::Dimension(format!(
            "{}x{} image is smaller than one {patch_size}x{patch_size} patch",
            img.width(),
            img.height()
        )));
    }
    Ok(maps)
}

/// Token ids laid out row-major over a `cols`×`rows` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub cols: usize,
    pub rows: usize,
    pub tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(cols: usize, rows: usize, tokens: Vec<u32>) -> Result<Self, TokenizerError> {
        if tokens.len() != cols * rows {
            return Err(TokenizerError::Dimension(format!(
                "{} tokens cannot fill a {cols}x{rows} grid",
                tokens.len()
            )));
        }
        Ok(TokenGrid { cols, rows, tokens })
    }

    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.tokens[row * self.cols + col]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The quantizer dictionary. Entries are stored at `f32` precision so the
/// in-memory codebook and its file form are the same values.
#[derive(Clone)]
pub struct Codebook {
    patch_size: u8,
    channels: u8,
    zero_reserved: bool,
    vectors: Vec<f64>,
    id: u64,
    index: OnceLock<NearestIndex>,
}

impl fmt::Debug for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codebook")
            .field("size", &self.size())
            .field("patch_size", &self.patch_size)
            .field("channels", &self.channels)
            .field("zero_reserved", &self.zero_reserved)
            .field("id", &format_args!("{:016x}", self.id))
            .finish()
    }
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.patch_size == other.patch_size
            && self.channels == other.channels
            && self.zero_reserved == other.zero_reserved
            && self.vectors == other.vectors
    }
}

impl Codebook {
    /// Builds a codebook from flat vectors, rounding every entry to `f32`.
    pub fn new(patch_size: u8, channels: u8, vectors: &[f64], zero_reserved: bool) -> Result<Self, TokenizerError> {
        let rounded: Vec<f32> = vectors.iter().map(|&v| v as f32).collect();
        Codebook::from_f32(patch_size, channels, &rounded, zero_reserved)
    }

    pub fn from_f32(patch_size: u8, channels: u8, vectors: &[f32], zero_reserved: bool) -> Result<Self, TokenizerError> {
        let dim = patch_dim(patch_size, channels);
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(TokenizerError::Codebook(format!(
                "{} values are not a whole number of {dim}-vectors",
                vectors.len()
            )));
        }
        let size = vectors.len() / dim;
        if !(MIN_CODEBOOK_SIZE..=MAX_CODEBOOK_SIZE).contains(&size) {
            return Err(TokenizerError::Codebook(format!(
                "size {size} outside [{MIN_CODEBOOK_SIZE}, {MAX_CODEBOOK_SIZE}]"
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(TokenizerError::Codebook("non-finite entry".into()));
        }
        if zero_reserved && vectors[..dim].iter().any(|&v| v != 0.0) {
            return Err(TokenizerError::Codebook(
                "entry 0 must be the zero vector when reserved".into(),
            ));
        }
        Ok(Codebook {
            patch_size,
            channels,
            zero_reserved,
            vectors: vectors.iter().map(|&v| f64::from(v)).collect(),
            id: fnv1a_64(vectors.iter().flat_map(|v| v.to_le_bytes())),
            index: OnceLock::new(),
        })
    }

    /// Trains a `size`-entry codebook on the vectors of `features`.
    pub fn train(features: &[FeatureMap], size: usize, seed: u64) -> Result<Self, TokenizerError> {
        let (patch_size, channels, points) = gather(features.iter().map(|f| (f.patch_size, f.channels, f.data())))?;
        let km = run_kmeans(&points, patch_dim(patch_size, channels), size, seed)?;
        Codebook::new(patch_size, channels, &km.centroids, false)
    }

    /// Trains a multi-scale codebook: entry 0 is the zero vector and the other
    /// `size − 1` entries are k-means centroids of the exact (unquantized)
    /// residual pyramid of every feature map.
    pub fn train_multiscale(features: &[FeatureMap], size: usize, seed: u64) -> Result<Self, TokenizerError> {
        if size < MIN_CODEBOOK_SIZE {
            return Err(TokenizerError::Training(format!("codebook size {size} < {MIN_CODEBOOK_SIZE}")));
        }
        let residuals: Vec<(u8, u8, Vec<f64>)> = features
            .iter()
            .map(|f| {
                let res = dyadic_resolutions(f.cols, f.rows);
                Ok((f.patch_size, f.channels, ideal_residuals(f, &res)?))
            })
            .collect::<Result<_, TokenizerError>>()?;
        let (patch_size, channels, points) = gather(residuals.iter().map(|(p, c, d)| (*p, *c, d.as_slice())))?;
        let dim = patch_dim(patch_size, channels);
        let km = run_kmeans(&points, dim, size - 1, seed)?;
        let mut vectors = vec![0.0; dim];
        vectors.extend_from_slice(&km.centroids);
        Codebook::new(patch_size, channels, &vectors, true)
    }

    pub fn size(&self) -> usize {
        self.vectors.len() / self.dim()
    }

    pub fn dim(&self) -> usize {
        patch_dim(self.patch_size, self.channels)
    }

    pub fn patch_size(&self) -> u8 {
        self.patch_size
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn zero_reserved(&self) -> bool {
        self.zero_reserved
    }

    /// FNV-1a-64 of the little-endian `f32` payload.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors[id * d..(id + 1) * d]
    }

    /// Nearest entry under squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, v: &[f64]) -> u32 {
        let index = self.index.get_or_init(|| NearestIndex::new(&self.vectors, self.dim()));
        index.nearest(&self.vectors, v, None).0 as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CODEBOOK_HEADER_LEN + self.vectors.len() * 4);
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.push(CODEBOOK_VERSION);
        out.extend_from_slice(&(self.size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(self.patch_size);
        out.push(self.channels);
        out.push(if self.zero_reserved { FLAG_ZERO_RESERVED } else { 0 });
        for &v in &self.vectors {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let format = |m: String| TokenizerError::Format(m);
        if bytes.len() < CODEBOOK_HEADER_LEN {
            return Err(format(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != CODEBOOK_MAGIC {
            return Err(format("bad magic".into()));
        }
        if bytes[4] != CODEBOOK_VERSION {
            return Err(format(format!("unsupported version {}", bytes[4])));
        }
        let size = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let (patch_size, channels, flags) = (bytes[13], bytes[14], bytes[15]);
        if flags & !FLAG_ZERO_RESERVED != 0 {
            return Err(format(format!("unknown flags {flags:#04x}")));
        }
        if dim != patch_dim(patch_size, channels) {
            return Err(format(format!(
                "dimension {dim} does not match {patch_size}x{patch_size}x{channels} patches"
            )));
        }
        let payload = &bytes[CODEBOOK_HEADER_LEN..];
        let expected = size.checked_mul(dim).and_then(|n| n.checked_mul(4));
        if expected != Some(payload.len()) {
            return Err(format(format!(
                "payload of {} bytes does not hold {size}x{dim} floats",
                payload.len()
            )));
        }
        let vectors: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Codebook::from_f32(patch_size, channels, &vectors, flags & FLAG_ZERO_RESERVED != 0)
    }
}

fn gather<'a>(
    parts: impl Iterator<Item = (u8, u8, &'a [f64])>,
) -> Result<(u8, u8, Vec<f64>), TokenizerError> {
    let mut shape = None;
    let mut points = Vec::new();
    for (p, c, data) in parts {
        match shape {
            None => shape = Some((p, c)),
            Some(s) if s != (p, c) => {
                return Err(TokenizerError::Training(format!(
                    "mixed patch shapes {s:?} and {:?}",
                    (p, c)
                )))
            }
            _ => {}
        }
        points.extend_from_slice(data);
    }
    let (p, c) = shape.ok_or_else(|| TokenizerError::Training("no training features".into()))?;
    Ok((p, c, points))
}

fn run_kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<kmeans::KMeans, TokenizerError> {
    let n = points.len() / dim;
    if k < 1 {
        return Err(TokenizerError::Training("need at least one centroid".into()));
    }
    if n < k {
        return Err(TokenizerError::Training(format!("{n} training vectors for {k} centroids")));
    }
    Ok(kmeans::kmeans(points, dim, k, seed))
}

pub(crate) fn fnv1a_64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .into_iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

fn check_shape(features: &FeatureMap, cb: &Codebook) -> Result<(), TokenizerError> {
    if features.dim() != cb.dim() || features.channels != cb.channels {
        return Err(TokenizerError::Dimension(format!(
            "features of dimension {} ({} channels) against codebook of dimension {} ({} channels)",
            features.dim(),
            features.channels,
            cb.dim(),
            cb.channels
        )));
    }
    Ok(())
}

/// Maps every feature vector to its nearest codebook entry.
pub fn tokenize(features: &FeatureMap, cb: &Codebook) -> Result<TokenGrid, TokenizerError> {
    check_shape(features, cb)?;
    let tokens = features.data.chunks_exact(cb.dim()).map(|v| cb.nearest(v)).collect();
    TokenGrid::new(features.cols, features.rows, tokens)
}

/// Replaces every token with its codebook vector.
pub fn dequantize(grid: &TokenGrid, cb: &Codebook) -> Result<FeatureMap, TokenizerError> {
    let mut data = Vec::with_capacity(grid.len() * cb.dim());
    for &t in &grid.tokens {
        if t as usize >= cb.size() {
            return Err(TokenizerError::Corrupt { id: t, size: cb.size() });
        }
        data.extend_from_slice(cb.vector(t as usize));
    }
    FeatureMap::new(grid.cols, grid.rows, cb.patch_size, cb.channels, data)
}

pub fn detokenize(grid: &TokenGrid, cb: &Codebook) -> Result<Image, TokenizerError> {
    Ok(dequantize(grid, cb)?.to_image())
}

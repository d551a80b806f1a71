//! The `.aric` container: a fixed little-endian header followed by the raw
//! range-coder payload. The codebook itself travels separately and is
//! referenced by its 64-bit id.

use std::fmt;

use thiserror::Error;

use crate::prob_model::ModelKind;
use crate::tokenizer::{validate_resolutions, Resolution};

pub const MAGIC: &[u8; 4] = b"ARIC";
pub const VERSION: u8 = 1;
/// Header bytes before the scale list plus those after it.
const FIXED_LEN: usize = 4 + 1 + 1 + 4 + 4 + 1 + 1 + 1 + 1 + 8 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("not an ARIC stream (bad magic)")]
    BadMagic,
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("invalid header: {0}")]
    Invalid(String),
    #[error("codebook mismatch: stream expects {expected:016x}, got {found:016x}")]
    CodebookMismatch { expected: u64, found: u64 },
}

/// Token layout of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Mode {
    /// One token grid, raster order.
    SingleScale = 0,
    /// Residual pyramid, coarse to fine.
    MultiScale = 1,
}

impl Mode {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Mode::SingleScale),
            1 => Some(Mode::MultiScale),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub mode: Mode,
    /// Pixel dimensions after cropping.
    pub width: u32,
    pub height: u32,
    pub patch_size: u8,
    pub channels: u8,
    pub model: ModelKind,
    /// Empty in single-scale mode.
    pub scales: Vec<Resolution>,
    pub codebook_id: u64,
}

impl Header {
    /// Serialized size, including the trailing payload length field.
    pub fn encoded_len(&self) -> usize {
        FIXED_LEN + 4 * self.scales.len()
    }

    pub fn token_cols(&self) -> usize {
        (self.width / u32::from(self.patch_size)) as usize
    }

    pub fn token_rows(&self) -> usize {
        (self.height / u32::from(self.patch_size)) as usize
    }

    /// Grid shapes in coding order.
    pub fn layout(&self) -> Vec<Resolution> {
        match self.mode {
            Mode::SingleScale => vec![Resolution::new(self.token_cols(), self.token_rows())],
            Mode::MultiScale => self.scales.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let invalid = |m: String| Err(StreamError::Invalid(m));
        if self.patch_size == 0 {
            return invalid("patch size 0".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return invalid(format!("{} channels", self.channels));
        }
        let p = u32::from(self.patch_size);
        if self.width == 0 || self.height == 0 || self.width % p != 0 || self.height % p != 0 {
            return invalid(format!(
                "{}x{} is not a positive multiple of patch size {p}",
                self.width, self.height
            ));
        }
        match self.mode {
            Mode::SingleScale if !self.scales.is_empty() => invalid("single-scale stream lists scales".into()),
            Mode::SingleScale => Ok(()),
            Mode::MultiScale => {
                if self.scales.len() > usize::from(u8::MAX) {
                    return invalid(format!("{} scales", self.scales.len()));
                }
                if self.scales.iter().any(|r| r.cols > 0xFFFF || r.rows > 0xFFFF) {
                    return invalid("scale resolution exceeds 65535".into());
                }
                validate_resolutions(&self.scales, self.token_cols(), self.token_rows())
                    .map_err(|e| StreamError::Invalid(e.to_string()))
            }
        }
    }
}

pub fn write_stream(header: &Header, payload: &[u8]) -> Result<Vec<u8>, StreamError> {
    header.validate()?;
    let payload_len = u32::try_from(payload.len())
        .map_err(|_| StreamError::Invalid(format!("payload of {} bytes", payload.len())))?;
    let mut out = Vec::with_capacity(header.encoded_len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(header.mode.id());
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.height.to_le_bytes());
    out.push(header.patch_size);
    out.push(header.channels);
    out.push(header.model.id());
    out.push(header.scales.len() as u8);
    for r in &header.scales {
        out.extend_from_slice(&(r.cols as u16).to_le_bytes());
        out.extend_from_slice(&(r.rows as u16).to_le_bytes());
    }
    out.extend_from_slice(&header.codebook_id.to_le_bytes());
    out.extend_from_slice(&payload_len.to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StreamError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(StreamError::Truncated {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, StreamError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StreamError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StreamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StreamError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn parse_stream(bytes: &[u8]) -> Result<(Header, &[u8]), StreamError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4.min(bytes.len()))?;
    if magic != MAGIC {
        return Err(StreamError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(StreamError::UnsupportedVersion(version));
    }
    let mode_id = r.u8()?;
    let mode = Mode::from_id(mode_id).ok_or_else(|| StreamError::Invalid(format!("mode {mode_id}")))?;
    let width = r.u32()?;
    let height = r.u32()?;
    let patch_size = r.u8()?;
    let channels = r.u8()?;
    let model_id = r.u8()?;
    let model = ModelKind::from_id(model_id).map_err(|e| StreamError::Invalid(e.to_string()))?;
    let num_scales = r.u8()?;
    let mut scales = Vec::with_capacity(num_scales.into());
    for _ in 0..num_scales {
        let cols = r.u16()?;
        let rows = r.u16()?;
        scales.push(Resolution::new(cols.into(), rows.into()));
    }
    let codebook_id = r.u64()?;
    let payload_len = r.u32()? as usize;
    let header = Header {
        mode,
        width,
        height,
        patch_size,
        channels,
        model,
        scales,
        codebook_id,
    };
    header.validate()?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(StreamError::Invalid(format!(
            "{} bytes after the payload",
            bytes.len() - r.pos
        )));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single() -> Header {
        Header {
            mode: Mode::SingleScale,
            width: 512,
            height: 512,
            patch_size: 8,
            channels: 3,
            model: ModelKind::RasterPpm,
            scales: vec![],
            codebook_id: 0x0123_4567_89ab_cdef,
        }
    }

    fn multi() -> Header {
        Header {
            mode: Mode::MultiScale,
            width: 64,
            height: 32,
            patch_size: 8,
            channels: 1,
            model: ModelKind::ScaleParentWest,
            scales: vec![Resolution::new(2, 1), Resolution::new(4, 2), Resolution::new(8, 4)],
            codebook_id: 7,
        }
    }

    #[test]
    fn single_scale_header_is_thirty_bytes() {
        let h = single();
        let bytes = write_stream(&h, &[]).unwrap();
        assert_eq!(bytes.len(), 30);
        assert_eq!(h.encoded_len(), 30);
        assert_eq!(&bytes[..6], b"ARIC\x01\x00");
        assert_eq!(&bytes[6..10], &512u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &[8, 3, 1, 0]);
        assert_eq!(&bytes[18..26], &0x0123_4567_89ab_cdefu64.to_le_bytes());
        assert_eq!(&bytes[26..30], &[0, 0, 0, 0]);
    }

    #[test]
    fn scale_list_layout() {
        let h = multi();
        let bytes = write_stream(&h, &[9, 9]).unwrap();
        assert_eq!(bytes.len(), 30 + 12 + 2);
        assert_eq!(bytes[17], 3);
        assert_eq!(&bytes[18..22], &[2, 0, 1, 0]);
        assert_eq!(&bytes[38..42], &[2, 0, 0, 0]);
    }

    #[test]
    fn round_trip() {
        for h in [single(), multi()] {
            let payload: Vec<u8> = (0..=255).collect();
            let bytes = write_stream(&h, &payload).unwrap();
            let (back, p) = parse_stream(&bytes).unwrap();
            assert_eq!(back, h);
            assert_eq!(p, &payload[..]);
        }
    }

    #[test]
    fn typed_errors() {
        let bytes = write_stream(&single(), &[1, 2, 3]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(parse_stream(&bad), Err(StreamError::BadMagic));
        assert_eq!(parse_stream(b"AR"), Err(StreamError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(parse_stream(&bad), Err(StreamError::UnsupportedVersion(2)));
        assert!(matches!(parse_stream(&bytes[..32]), Err(StreamError::Truncated { .. })));
        assert!(matches!(parse_stream(&bytes[..20]), Err(StreamError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(parse_stream(&long), Err(StreamError::Invalid(_))));
        let mut bad = bytes;
        bad[16] = 9;
        assert!(matches!(parse_stream(&bad), Err(StreamError::Invalid(_))));
    }

    #[test]
    fn rejects_inconsistent_headers() {
        let mut h = multi();
        h.scales.pop();
        assert!(write_stream(&h, &[]).is_err());
        let mut h = single();
        h.scales.push(Resolution::new(64, 64));
        assert!(write_stream(&h, &[]).is_err());
        let mut h = single();
        h.width = 510;
        assert!(write_stream(&h, &[]).is_err());
        let mut h = multi();
        h.mode = Mode::MultiScale;
        h.scales.clear();
        assert!(write_stream(&h, &[]).is_err());
    }

    proptest! {
        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
            let _ = parse_stream(&bytes);
        }

        #[test]
        fn mutated_streams_never_panic(at in any::<proptest::sample::Index>(), v in any::<u8>()) {
            let mut bytes = write_stream(&multi(), &[1, 2, 3, 4]).unwrap();
            let i = at.index(bytes.len());
            bytes[i] = v;
            if let Ok((h, p)) = parse_stream(&bytes) {
                prop_assert_eq!(write_stream(&h, p).unwrap(), bytes);
            }
        }

        #[test]
        fn prefixed_magic_never_panics(tail in proptest::collection::vec(any::<u8>(), 0..60)) {
            let mut bytes = b"ARIC\x01".to_vec();
            bytes.extend(tail);
            let _ = parse_stream(&bytes);
        }
    }
}

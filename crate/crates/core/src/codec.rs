//! Image ⇄ bitstream pipeline: tokenize, predict each token from the ones
//! already coded, quantize the prediction, range-code. Decoding replays the
//! same model on the same history, so both sides see identical tables.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::bitstream::{parse_stream, write_stream, Header, Mode, StreamError};
use crate::error::{Error, Result};
use crate::image_io::{center_crop, Image};
use crate::metrics::RateReport;
use crate::prob_model::{Context, ModelKind, ProbabilityModel};
use crate::range_coder::{quantize, RangeDecoder, RangeEncoder, TOTAL_BITS};
use crate::tokenizer::{
    detokenize, detokenize_multiscale, dyadic_resolutions, extract_features, tokenize, tokenize_multiscale,
    validate_resolutions, Codebook, Resolution, ScalePyramid, TokenGrid,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodeOptions {
    pub mode: Mode,
    pub model: ModelKind,
    /// Pyramid schedule for multi-scale mode; the dyadic schedule if `None`.
    pub resolutions: Option<Vec<Resolution>>,
}

impl EncodeOptions {
    pub fn new(mode: Mode, model: ModelKind) -> Self {
        EncodeOptions {
            mode,
            model,
            resolutions: None,
        }
    }
}

/// Largest centered window whose sides are multiples of `patch_size`.
pub fn crop_to_patches(img: &Image, patch_size: u8) -> Result<Image> {
    let p = u32::from(patch_size);
    let (w, h) = (img.width() - img.width() % p, img.height() - img.height() % p);
    if w == 0 || h == 0 {
        return Err(Error::Invalid(format!(
            "{}x{} image is smaller than one {p}x{p} patch",
            img.width(),
            img.height()
        )));
    }
    if (w, h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    Ok(center_crop(img, w, h)?)
}

/// Token grids of `img` in coding order, with the cropped image they came from.
pub fn image_tokens(img: &Image, cb: &Codebook, opts: &EncodeOptions) -> Result<(Image, Vec<TokenGrid>)> {
    let img = crop_to_patches(img, cb.patch_size())?;
    let features = extract_features(&img, cb.patch_size())?;
    let grids = match opts.mode {
        Mode::SingleScale => vec![tokenize(&features, cb)?],
        Mode::MultiScale => {
            let res = opts
                .resolutions
                .clone()
                .unwrap_or_else(|| dyadic_resolutions(features.cols(), features.rows()));
            tokenize_multiscale(&features, cb, &res)?.scales
        }
    };
    Ok((img, grids))
}

/// Image rebuilt from token grids laid out as `mode` prescribes.
pub fn reconstruct(grids: Vec<TokenGrid>, cb: &Codebook, mode: Mode) -> Result<Image> {
    match mode {
        Mode::SingleScale => {
            let grid = grids
                .into_iter()
                .next()
                .ok_or_else(|| Error::Invalid("no token grid".into()))?;
            Ok(detokenize(&grid, cb)?)
        }
        Mode::MultiScale => Ok(detokenize_multiscale(&ScalePyramid { scales: grids }, cb)?),
    }
}

/// What the token-level path alone would reconstruct for `img`: the target
/// a lossless decode must match.
pub fn tokenizer_reconstruction(img: &Image, cb: &Codebook, opts: &EncodeOptions) -> Result<Image> {
    let (_, grids) = image_tokens(img, cb, opts)?;
    reconstruct(grids, cb, opts.mode)
}

/// Context for the token at (`x`, `y`) of scale `k`, built from `grids`
/// which must already hold every earlier token in coding order.
fn context_at(
    kind: ModelKind,
    grids: &[Vec<u32>],
    layout: &[Resolution],
    k: usize,
    x: usize,
    y: usize,
    sentinel: u32,
) -> Context {
    let r = layout[k];
    let g = &grids[k];
    let west = if x > 0 { g[y * r.cols + x - 1] } else { sentinel };
    let north = if y > 0 { g[(y - 1) * r.cols + x] } else { sentinel };
    let parent = if k > 0 {
        let pr = layout[k - 1];
        grids[k - 1][(y * pr.rows / r.rows) * pr.cols + x * pr.cols / r.cols]
    } else {
        sentinel
    };
    kind.context(west, north, parent, k as u32)
}

/// Visits every token position of `layout` in coding order.
fn for_each_position(layout: &[Resolution], mut f: impl FnMut(usize, usize, usize) -> Result<()>) -> Result<()> {
    for (k, r) in layout.iter().enumerate() {
        for y in 0..r.rows {
            for x in 0..r.cols {
                f(k, x, y)?;
            }
        }
    }
    Ok(())
}

/// Entropy-codes `grids` in coding order with `model`. Returns the payload
/// and the self-information of every token under its quantized table.
pub fn encode_tokens(grids: &[TokenGrid], model: &mut dyn ProbabilityModel, kind: ModelKind) -> Result<(Vec<u8>, Vec<f64>)> {
    let size = model.alphabet_size();
    let sentinel = size as u32;
    let layout: Vec<Resolution> = grids.iter().map(|g| Resolution::new(g.cols, g.rows)).collect();
    let tokens: Vec<Vec<u32>> = grids.iter().map(|g| g.tokens.clone()).collect();
    let mut enc = RangeEncoder::new();
    let mut info = Vec::with_capacity(grids.iter().map(TokenGrid::len).sum());
    for_each_position(&layout, |k, x, y| {
        let ctx = context_at(kind, &tokens, &layout, k, x, y, sentinel);
        let symbol = tokens[k][y * layout[k].cols + x];
        let table = quantize(&model.predict(&ctx))?;
        enc.encode(&table, symbol)?;
        info.push(table.self_information(symbol as usize));
        model.update(&ctx, symbol)?;
        Ok(())
    })?;
    Ok((enc.finish(), info))
}

/// Mirror of [`encode_tokens`] for grids of the given shapes.
pub fn decode_tokens(
    payload: &[u8],
    layout: &[Resolution],
    model: &mut dyn ProbabilityModel,
    kind: ModelKind,
) -> Result<Vec<TokenGrid>> {
    let sentinel = model.alphabet_size() as u32;
    // Grids grow as symbols arrive, so a corrupt header claiming a huge image
    // runs out of payload long before it can exhaust memory.
    let mut tokens: Vec<Vec<u32>> = layout
        .iter()
        .map(|r| Vec::with_capacity((r.cols * r.rows).min(payload.len() * 8)))
        .collect();
    let mut dec = RangeDecoder::new(payload)?;
    for_each_position(layout, |k, x, y| {
        let ctx = context_at(kind, &tokens, layout, k, x, y, sentinel);
        let table = quantize(&model.predict(&ctx))?;
        let symbol = dec.decode(&table)?;
        tokens[k].push(symbol);
        model.update(&ctx, symbol)?;
        Ok(())
    })?;
    dec.finish()?;
    layout
        .iter()
        .zip(tokens)
        .map(|(r, t)| Ok(TokenGrid::new(r.cols, r.rows, t)?))
        .collect()
}

pub fn encode_image(img: &Image, cb: &Codebook, mode: Mode, model: ModelKind) -> Result<(Vec<u8>, RateReport)> {
    encode_image_with(img, cb, &EncodeOptions::new(mode, model))
}

pub fn encode_image_with(img: &Image, cb: &Codebook, opts: &EncodeOptions) -> Result<(Vec<u8>, RateReport)> {
    let (img, grids) = image_tokens(img, cb, opts)?;
    let header = Header {
        mode: opts.mode,
        width: img.width(),
        height: img.height(),
        patch_size: cb.patch_size(),
        channels: cb.channels(),
        model: opts.model,
        scales: match opts.mode {
            Mode::SingleScale => Vec::new(),
            Mode::MultiScale => grids.iter().map(|g| Resolution::new(g.cols, g.rows)).collect(),
        },
        codebook_id: cb.id(),
    };
    let mut model = opts.model.instantiate(cb.size());
    let (payload, info) = encode_tokens(&grids, model.as_mut(), opts.model)?;
    let bytes = write_stream(&header, &payload)?;
    let report = RateReport::new(
        img.width(),
        img.height(),
        img.channels(),
        cb.size(),
        info,
        payload.len(),
        header.encoded_len(),
    );
    Ok((bytes, report))
}

/// Parses a stream and recovers its token grids.
pub fn decode_stream(bytes: &[u8], cb: &Codebook) -> Result<(Header, Vec<TokenGrid>)> {
    let (header, payload) = parse_stream(bytes)?;
    if header.codebook_id != cb.id() {
        return Err(StreamError::CodebookMismatch {
            expected: header.codebook_id,
            found: cb.id(),
        }
        .into());
    }
    if header.patch_size != cb.patch_size() || header.channels != cb.channels() {
        return Err(StreamError::Invalid(format!(
            "stream uses {0}x{0} patches with {1} channels, codebook has {2}x{2} with {3}",
            header.patch_size,
            header.channels,
            cb.patch_size(),
            cb.channels()
        ))
        .into());
    }
    let mut model = header.model.instantiate(cb.size());
    let grids = decode_tokens(payload, &header.layout(), model.as_mut(), header.model)?;
    Ok((header, grids))
}

pub fn decode_image(bytes: &[u8], cb: &Codebook) -> Result<Image> {
    let (header, grids) = decode_stream(bytes, cb)?;
    reconstruct(grids, cb, header.mode)
}

/// Token grid shapes for a `width`×`height` image under `mode`.
pub fn layout_for(width: u32, height: u32, patch_size: u8, mode: Mode) -> Result<Vec<Resolution>> {
    let p = u32::from(patch_size);
    if width == 0 || height == 0 || width % p != 0 || height % p != 0 {
        return Err(Error::Invalid(format!(
            "{width}x{height} is not a positive multiple of patch size {p}"
        )));
    }
    let (cols, rows) = ((width / p) as usize, (height / p) as usize);
    Ok(match mode {
        Mode::SingleScale => vec![Resolution::new(cols, rows)],
        Mode::MultiScale => dyadic_resolutions(cols, rows),
    })
}

/// Draws token grids from `model` one token at a time in coding order.
///
/// Each prediction is sharpened to `p^(1/temperature)`, quantized, and
/// sampled by inverse CDF with a 22-bit uniform draw.
pub fn sample_tokens(
    layout: &[Resolution],
    model: &mut dyn ProbabilityModel,
    kind: ModelKind,
    seed: u64,
    temperature: f64,
) -> Result<Vec<TokenGrid>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Invalid(format!("temperature {temperature} must be positive")));
    }
    validate_resolutions(layout, layout.last().map_or(0, |r| r.cols), layout.last().map_or(0, |r| r.rows))?;
    let sentinel = model.alphabet_size() as u32;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut tokens: Vec<Vec<u32>> = layout.iter().map(|r| vec![0; r.cols * r.rows]).collect();
    for_each_position(layout, |k, x, y| {
        let ctx = context_at(kind, &tokens, layout, k, x, y, sentinel);
        let mut dist = model.predict(&ctx);
        if temperature != 1.0 {
            dist = dist.sharpen(temperature);
        }
        let table = quantize(&dist)?;
        let target = (rng.next_u64() >> (64 - TOTAL_BITS)) as u32;
        let symbol = table.symbol_at(target) as u32;
        tokens[k][y * layout[k].cols + x] = symbol;
        model.update(&ctx, symbol)?;
        Ok(())
    })?;
    layout
        .iter()
        .zip(tokens)
        .map(|(r, t)| Ok(TokenGrid::new(r.cols, r.rows, t)?))
        .collect()
}

/// Generates a `width`×`height` image by sampling a fresh model.
pub fn sample_unconditional(
    cb: &Codebook,
    mode: Mode,
    model: ModelKind,
    width: u32,
    height: u32,
    seed: u64,
    temperature: f64,
) -> Result<Image> {
    let layout = layout_for(width, height, cb.patch_size(), mode)?;
    let mut m = model.instantiate(cb.size());
    let grids = sample_tokens(&layout, m.as_mut(), model, seed, temperature)?;
    reconstruct(grids, cb, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob_model::{Distribution, PpmModel, UniformModel};

    fn two_entry_codebook(zero_reserved: bool) -> Codebook {
        let mut v = vec![0.0; 3 * 4];
        v.extend(vec![1.0; 3 * 4]);
        Codebook::new(2, 3, &v, zero_reserved).unwrap()
    }

    fn gradient(w: u32, h: u32) -> Image {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    px.push(f64::from((x * 7 + y * 3 + c * 50) % 256) / 255.0);
                }
            }
        }
        Image::new(w, h, 3, px).unwrap()
    }

    #[test]
    fn crop_keeps_center() {
        let img = gradient(13, 10);
        let c = crop_to_patches(&img, 4).unwrap();
        assert_eq!((c.width(), c.height()), (12, 8));
        assert_eq!(c.get(0, 0, 0), img.get(0, 1, 0));
        assert!(crop_to_patches(&gradient(3, 10), 4).is_err());
    }

    #[test]
    fn round_trip_every_mode_and_model() {
        let cb = two_entry_codebook(true);
        let img = gradient(16, 8);
        for mode in [Mode::SingleScale, Mode::MultiScale] {
            for kind in ModelKind::ALL {
                let opts = EncodeOptions::new(mode, kind);
                let (bytes, report) = encode_image_with(&img, &cb, &opts).unwrap();
                let expected = tokenizer_reconstruction(&img, &cb, &opts).unwrap();
                assert_eq!(decode_image(&bytes, &cb).unwrap(), expected, "{mode} {kind}");
                let slack = report.payload_bits as f64 - report.ideal_bits;
                assert!((0.0..=64.0).contains(&slack));
                assert_eq!(report.header_bits as usize + report.payload_bits as usize, bytes.len() * 8);
            }
        }
    }

    #[test]
    fn header_records_cropped_size() {
        let cb = two_entry_codebook(false);
        let (bytes, report) = encode_image(&gradient(17, 9), &cb, Mode::SingleScale, ModelKind::RasterPpm).unwrap();
        let (header, _) = parse_stream(&bytes).unwrap();
        assert_eq!((header.width, header.height), (16, 8));
        assert_eq!((report.width, report.height, report.n_tokens), (16, 8, 32));
    }

    #[test]
    fn wrong_codebook_is_rejected() {
        let cb = two_entry_codebook(false);
        let other = two_entry_codebook(true);
        let mut v = other.vectors().to_vec();
        v[0] = 0.5;
        let other = Codebook::new(2, 3, &v, false).unwrap();
        let (bytes, _) = encode_image(&gradient(8, 8), &cb, Mode::SingleScale, ModelKind::Uniform).unwrap();
        assert!(matches!(
            decode_image(&bytes, &other),
            Err(Error::Stream(StreamError::CodebookMismatch { .. }))
        ));
    }

    #[test]
    fn multiscale_needs_reserved_zero() {
        let cb = two_entry_codebook(false);
        assert!(encode_image(&gradient(8, 8), &cb, Mode::MultiScale, ModelKind::ScaleParentWest).is_err());
    }

    #[test]
    fn constant_image_compresses_well() {
        let cb = two_entry_codebook(false);
        let img = Image::filled(64, 64, 3, 1.0).unwrap();
        let (_, report) = encode_image(&img, &cb, Mode::SingleScale, ModelKind::RasterPpm).unwrap();
        assert!(report.ar_ratio > 2.0, "{}", report.ar_ratio);
    }

    #[test]
    fn uniform_model_costs_log2_v() {
        let cb = two_entry_codebook(false);
        let (_, report) = encode_image(&gradient(32, 32), &cb, Mode::SingleScale, ModelKind::Uniform).unwrap();
        assert_eq!(report.ideal_bits, 256.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let cb = two_entry_codebook(true);
        for mode in [Mode::SingleScale, Mode::MultiScale] {
            let a = sample_unconditional(&cb, mode, ModelKind::RasterPpm, 16, 16, 5, 1.0).unwrap();
            let b = sample_unconditional(&cb, mode, ModelKind::RasterPpm, 16, 16, 5, 1.0).unwrap();
            assert_eq!(a, b);
        }
        assert!(sample_unconditional(&cb, Mode::SingleScale, ModelKind::Uniform, 16, 16, 5, 0.0).is_err());
        assert!(sample_unconditional(&cb, Mode::SingleScale, ModelKind::Uniform, 15, 16, 5, 1.0).is_err());
    }

    #[test]
    fn near_zero_temperature_takes_the_mode() {
        // Prime a model so every context has a clear favourite, then check
        // each sampled token was the argmax of the prediction it came from.
        let size = 16;
        let mut model = PpmModel::new(ModelKind::RasterPpm, size);
        for i in 0..200u32 {
            let ctx = Context::Raster { west: i % 17, north: (i / 17) % 17 };
            model.update(&ctx, (i * 7) % 5).unwrap();
        }
        struct Recorder<'a> {
            inner: &'a mut PpmModel,
            seen: Vec<(Distribution, u32)>,
        }
        impl ProbabilityModel for Recorder<'_> {
            fn alphabet_size(&self) -> usize {
                self.inner.alphabet_size()
            }
            fn predict(&self, ctx: &Context) -> Distribution {
                self.inner.predict(ctx)
            }
            fn update(&mut self, ctx: &Context, symbol: u32) -> std::result::Result<(), crate::prob_model::ModelError> {
                self.seen.push((self.inner.predict(ctx), symbol));
                self.inner.update(ctx, symbol)
            }
        }
        let mut rec = Recorder { inner: &mut model, seen: Vec::new() };
        let layout = [Resolution::new(8, 8)];
        sample_tokens(&layout, &mut rec, ModelKind::RasterPpm, 3, 1e-6).unwrap();
        for (dist, symbol) in &rec.seen {
            let max = dist.probs()[dist.argmax()];
            assert_eq!(dist.probs()[*symbol as usize], max);
        }
    }

    #[test]
    fn uniform_sampling_covers_alphabet() {
        let mut m = UniformModel::new(4);
        let grids = sample_tokens(&[Resolution::new(40, 25)], &mut m, ModelKind::Uniform, 1, 1.0).unwrap();
        let mut counts = [0usize; 4];
        for &t in &grids[0].tokens {
            counts[t as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (200..=300).contains(&c)), "{counts:?}");
    }
}

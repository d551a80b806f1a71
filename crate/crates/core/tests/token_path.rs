use std::cell::RefCell;

use aric::codec::{decode_tokens, encode_tokens, image_tokens};
use aric::{
    decode_image, decode_stream, encode_image, parse_stream, tokenizer_reconstruction, Codebook, Context, Distribution,
    EncodeOptions, Image, Mode, ModelError, ModelKind, ProbabilityModel,
};
use proptest::prelude::*;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn unit(r: &mut Xoshiro256PlusPlus) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn noise_image(seed: u64, width: u32, height: u32, channels: u8) -> Image {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = (width * height) as usize * channels as usize;
    let bytes: Vec<u8> = (0..n).map(|_| (r.next_u64() >> 56) as u8).collect();
    Image::from_bytes(width, height, channels, &bytes).unwrap()
}

/// Smooth content so adaptive models have something to learn.
fn smooth_image(seed: u64, width: u32, height: u32) -> Image {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let fx = 0.02 + 0.1 * unit(&mut r);
    let fy = 0.02 + 0.1 * unit(&mut r);
    let mut bytes = Vec::new();
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let v = 0.5 + 0.4 * (fx * f64::from(x) + fy * f64::from(y) + f64::from(c)).sin();
                bytes.push((v * 255.0) as u8);
            }
        }
    }
    Image::from_bytes(width, height, 3, &bytes).unwrap()
}

fn random_codebook(seed: u64, patch: u8, channels: u8, size: usize, zero: bool) -> Codebook {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let dim = patch as usize * patch as usize * channels as usize;
    let mut v: Vec<f64> = (0..size * dim).map(|_| unit(&mut r)).collect();
    if zero {
        v[..dim].fill(0.0);
        // Residuals are signed, so give the rest of the book both signs.
        for x in &mut v[dim..] {
            *x -= 0.5;
        }
    }
    Codebook::new(patch, channels, &v, zero).unwrap()
}

fn check_round_trip(img: &Image, cb: &Codebook, mode: Mode, model: ModelKind) {
    let (bytes, report) = encode_image(img, cb, mode, model).unwrap();
    let target = tokenizer_reconstruction(img, cb, &EncodeOptions::new(mode, model)).unwrap();
    assert_eq!(decode_image(&bytes, cb).unwrap(), target, "mode {mode} model {model}");

    let (_, grids) = image_tokens(img, cb, &EncodeOptions::new(mode, model)).unwrap();
    assert_eq!(decode_stream(&bytes, cb).unwrap().1, grids);

    let (_, payload) = parse_stream(&bytes).unwrap();
    let bits = 8.0 * payload.len() as f64;
    assert!(bits >= report.ideal_bits && bits <= report.ideal_bits + 64.0, "{bits} vs {}", report.ideal_bits);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decode_reproduces_tokenizer_output(
        cols in 1u32..7,
        rows in 1u32..7,
        size in 2usize..40,
        seed in any::<u64>(),
        multi in any::<bool>(),
        model in 0u8..4,
    ) {
        let mode = if multi { Mode::MultiScale } else { Mode::SingleScale };
        let img = noise_image(seed, cols * 4, rows * 4, 3);
        let cb = random_codebook(seed ^ 1, 4, 3, size, multi);
        check_round_trip(&img, &cb, mode, ModelKind::from_id(model).unwrap());
    }
}

#[test]
fn every_mode_and_model_at_three_alphabet_sizes() {
    for size in [256, 4096, 65536] {
        let cb_single = random_codebook(size as u64, 2, 1, size, false);
        let cb_multi = random_codebook(size as u64 + 1, 2, 1, size, true);
        let img = noise_image(size as u64, 48, 40, 1);
        for model in ModelKind::ALL {
            check_round_trip(&img, &cb_single, Mode::SingleScale, model);
            check_round_trip(&img, &cb_multi, Mode::MultiScale, model);
        }
    }
}

#[test]
fn uncroppable_edges_are_dropped_before_coding() {
    let img = smooth_image(3, 37, 29);
    let cb = random_codebook(9, 8, 3, 32, true);
    for mode in [Mode::SingleScale, Mode::MultiScale] {
        let (bytes, _) = encode_image(&img, &cb, mode, ModelKind::RasterPpm).unwrap();
        let out = decode_image(&bytes, &cb).unwrap();
        assert_eq!((out.width(), out.height()), (32, 24));
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Call {
    Predict(Context),
    Update(Context, u32),
}

/// Wraps a model and records every call made on it.
struct Logged {
    inner: Box<dyn ProbabilityModel + Send>,
    calls: RefCell<Vec<Call>>,
}

impl ProbabilityModel for Logged {
    fn alphabet_size(&self) -> usize {
        self.inner.alphabet_size()
    }

    fn predict(&self, ctx: &Context) -> Distribution {
        self.calls.borrow_mut().push(Call::Predict(*ctx));
        self.inner.predict(ctx)
    }

    fn update(&mut self, ctx: &Context, symbol: u32) -> Result<(), ModelError> {
        self.calls.borrow_mut().push(Call::Update(*ctx, symbol));
        self.inner.update(ctx, symbol)
    }
}

#[test]
fn encoder_and_decoder_make_identical_model_calls() {
    let img = smooth_image(11, 64, 48);
    let cb = random_codebook(5, 4, 3, 64, true);
    for mode in [Mode::SingleScale, Mode::MultiScale] {
        for kind in ModelKind::ALL {
            let (_, grids) = image_tokens(&img, &cb, &EncodeOptions::new(mode, kind)).unwrap();
            let logged = || Logged { inner: kind.instantiate(cb.size()), calls: RefCell::new(Vec::new()) };

            let mut enc = logged();
            let (payload, _) = encode_tokens(&grids, &mut enc, kind).unwrap();
            let layout: Vec<_> = grids.iter().map(|g| aric::Resolution::new(g.cols, g.rows)).collect();
            let mut dec = logged();
            let decoded = decode_tokens(&payload, &layout, &mut dec, kind).unwrap();

            assert_eq!(decoded, grids);
            let (a, b) = (enc.calls.into_inner(), dec.calls.into_inner());
            let tokens: usize = grids.iter().map(|g| g.len()).sum();
            assert_eq!(a.len(), 2 * tokens);
            assert!(a == b, "mode {mode} model {kind}: traces diverge");
        }
    }
}

#[test]
fn every_single_bit_flip_is_detected() {
    let img = smooth_image(21, 48, 32);
    let cb = random_codebook(2, 4, 3, 24, true);
    for (mode, model) in [(Mode::SingleScale, ModelKind::RasterPpm), (Mode::MultiScale, ModelKind::ScaleParentWest)] {
        let (bytes, _) = encode_image(&img, &cb, mode, model).unwrap();
        let clean = decode_image(&bytes, &cb).unwrap();
        let (header, _) = parse_stream(&bytes).unwrap();
        let header_len = header.encoded_len();
        let mut typed = 0;
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut bad = bytes.clone();
                bad[i] ^= 1 << bit;
                match decode_image(&bad, &cb) {
                    Err(_) => typed += 1,
                    Ok(out) => assert!(out != clean, "flip at byte {i} bit {bit} decoded silently"),
                }
            }
        }
        // Header damage never yields an image.
        assert!(typed >= 8 * header_len, "{typed} typed errors over {} bytes", bytes.len());
    }
}

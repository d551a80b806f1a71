//! Rate bookkeeping and distortion measures.

use thiserror::Error;

use crate::image_io::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("image shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("{width}x{height} is too small for an {window}-pixel window")]
    TooSmall { width: u32, height: u32, window: usize },
}

/// Bits per token without entropy coding, `ceil(log2 V)`.
pub fn bits_per_token(codebook_size: usize) -> u32 {
    if codebook_size <= 1 {
        0
    } else {
        usize::BITS - (codebook_size - 1).leading_zeros()
    }
}

/// The three-way compression-ratio split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub raw_bits: u64,
    pub token_raw_bits: u64,
    /// Raw image bits over un-entropy-coded token bits.
    pub tokenizer_ratio: f64,
    /// Un-entropy-coded token bits over payload bits.
    pub ar_ratio: f64,
    /// Raw image bits over payload bits.
    pub overall_ratio: f64,
}

pub fn compression_ratios(
    width: u32,
    height: u32,
    channels: u8,
    n_tokens: usize,
    codebook_size: usize,
    payload_bits: u64,
) -> Ratios {
    let raw_bits = u64::from(width) * u64::from(height) * u64::from(channels) * 8;
    let token_raw_bits = n_tokens as u64 * u64::from(bits_per_token(codebook_size));
    Ratios {
        raw_bits,
        token_raw_bits,
        tokenizer_ratio: raw_bits as f64 / token_raw_bits as f64,
        ar_ratio: token_raw_bits as f64 / payload_bits as f64,
        overall_ratio: raw_bits as f64 / payload_bits as f64,
    }
}

/// Everything measured about one encode.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub n_tokens: usize,
    pub codebook_size: usize,
    pub raw_bits: u64,
    pub token_raw_bits: u64,
    /// Sum of the per-token self-information under the coded tables.
    pub ideal_bits: f64,
    pub payload_bits: u64,
    pub header_bits: u64,
    pub bpp_payload: f64,
    pub bpp_total: f64,
    pub tokenizer_ratio: f64,
    pub ar_ratio: f64,
    pub overall_ratio: f64,
    /// `−log2(f/T)` of every token, in coding order.
    pub self_information: Vec<f64>,
}

impl RateReport {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        codebook_size: usize,
        self_information: Vec<f64>,
        payload_bytes: usize,
        header_bytes: usize,
    ) -> Self {
        let n_tokens = self_information.len();
        let payload_bits = payload_bytes as u64 * 8;
        let header_bits = header_bytes as u64 * 8;
        let r = compression_ratios(width, height, channels, n_tokens, codebook_size, payload_bits);
        let pixels = f64::from(width) * f64::from(height);
        RateReport {
            width,
            height,
            channels,
            n_tokens,
            codebook_size,
            raw_bits: r.raw_bits,
            token_raw_bits: r.token_raw_bits,
            ideal_bits: self_information.iter().sum(),
            payload_bits,
            header_bits,
            bpp_payload: payload_bits as f64 / pixels,
            bpp_total: (payload_bits + header_bits) as f64 / pixels,
            tokenizer_ratio: r.tokenizer_ratio,
            ar_ratio: r.ar_ratio,
            overall_ratio: r.overall_ratio,
            self_information,
        }
    }

    /// Scalar fields as `key=value` lines.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("channels", self.channels.to_string()),
            ("n_tokens", self.n_tokens.to_string()),
            ("V", self.codebook_size.to_string()),
            ("raw_bits", self.raw_bits.to_string()),
            ("token_raw_bits", self.token_raw_bits.to_string()),
            ("ideal_bits", format!("{:.3}", self.ideal_bits)),
            ("payload_bits", self.payload_bits.to_string()),
            ("header_bits", self.header_bits.to_string()),
            ("bpp_payload", format!("{:.6}", self.bpp_payload)),
            ("bpp_total", format!("{:.6}", self.bpp_total)),
            ("tokenizer_ratio", format!("{:.6}", self.tokenizer_ratio)),
            ("ar_ratio", format!("{:.6}", self.ar_ratio)),
            ("overall_ratio", format!("{:.6}", self.overall_ratio)),
        ]
    }
}

fn check_same_shape(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples, peak 1.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// A single-channel plane of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_channel(img: &Image, c: u8) -> Self {
        let ch = img.channels() as usize;
        Plane {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().iter().skip(c as usize).step_by(ch).copied().collect(),
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 2×2 mean pooling; an odd last row or column is dropped.
    pub fn downsample(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        Plane { width: w, height: h, data }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let center = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g
}

/// 'Valid' separable filtering: rows first, then columns.
fn filter_valid(p: &Plane, g: &[f64; WINDOW]) -> Plane {
    let ow = p.width + 1 - WINDOW;
    let oh = p.height + 1 - WINDOW;
    let mut rows = vec![0.0; ow * p.height];
    for y in 0..p.height {
        let line = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            let mut s = 0.0;
            for (k, w) in g.iter().enumerate() {
                s += w * line[x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (k, w) in g.iter().enumerate() {
            let src = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    Plane {
        width: ow,
        height: oh,
        data: out,
    }
}

/// Mean contrast-structure and mean full SSIM over one scale.
fn ssim_terms(a: &Plane, b: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let product = |f: fn(f64, f64) -> f64| Plane {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    };
    let mu_a = filter_valid(a, g);
    let mu_b = filter_valid(b, g);
    let aa = filter_valid(&product(|x, _| x * x), g);
    let bb = filter_valid(&product(|_, y| y * y), g);
    let ab = filter_valid(&product(|x, y| x * y), g);
    let n = mu_a.data.len() as f64;
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (cs_sum / n, ssim_sum / n)
}

/// Number of scales whose coarsest level still fits the window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut m = 0;
    let (mut w, mut h) = (width, height);
    while m < MS_SSIM_WEIGHTS.len() && w.min(h) >= WINDOW {
        m += 1;
        w /= 2;
        h /= 2;
    }
    m
}

/// Combines per-scale terms: contrast-structure at every scale but the
/// last, full SSIM at the last, each clamped at 0 and weighted.
pub fn combine_scales(cs: &[f64], last_ssim: f64) -> f64 {
    let m = cs.len() + 1;
    let total: f64 = MS_SSIM_WEIGHTS[..m].iter().sum();
    let mut score = 1.0;
    for (j, &v) in cs.iter().enumerate() {
        score *= v.max(0.0).powf(MS_SSIM_WEIGHTS[j] / total);
    }
    score * last_ssim.max(0.0).powf(MS_SSIM_WEIGHTS[m - 1] / total)
}

fn ms_ssim_plane(a: Plane, b: Plane, scales: usize, g: &[f64; WINDOW]) -> f64 {
    let (mut a, mut b) = (a, b);
    let mut cs = Vec::with_capacity(scales);
    for j in 0..scales {
        let (c, s) = ssim_terms(&a, &b, g);
        if j + 1 == scales {
            return combine_scales(&cs, s);
        }
        cs.push(c);
        a = a.downsample();
        b = b.downsample();
    }
    unreachable!("at least one scale")
}

/// Multi-scale SSIM, averaged over channels. Up to five scales are used; an
/// image too small for all five drops the coarsest ones and renormalizes the
/// remaining weights.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let scales = ms_ssim_scales(a.width() as usize, a.height() as usize);
    if scales == 0 {
        return Err(MetricsError::TooSmall {
            width: a.width(),
            height: a.height(),
            window: WINDOW,
        });
    }
    let g = gaussian_window();
    let mut sum = 0.0;
    for c in 0..a.channels() {
        sum += ms_ssim_plane(Plane::from_channel(a, c), Plane::from_channel(b, c), scales, &g);
    }
    Ok(sum / f64::from(a.channels()))
}

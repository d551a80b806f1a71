//! Rate/distortion sweep over a corpus: one row per (image, mode, model, V).

use std::io::Write;
use std::time::Instant;

use anyhow::{Context as _, Result};
use rayon::prelude::*;

use aric::codec::crop_to_patches;
use aric::{decode_image, encode_image, ms_ssim, psnr, Codebook, Image, Mode, ModelKind};

use crate::Crop;

pub const CSV_HEADER: [&str; 14] = [
    "file",
    "mode",
    "model",
    "V",
    "patch",
    "bpp_payload",
    "bpp_total",
    "psnr",
    "msssim",
    "tokenizer_ratio",
    "ar_ratio",
    "overall_ratio",
    "enc_ms",
    "dec_ms",
];

/// Columns holding wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 2] = ["enc_ms", "dec_ms"];

pub const NO_PARALLEL_ENV: &str = "ARIC_NO_PARALLEL";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
    pub models: Vec<ModelKind>,
    pub crop: Crop,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub file: String,
    pub mode: Mode,
    pub model: ModelKind,
    pub codebook_size: usize,
    /// Position of the codebook on the command line; orders rows that share V.
    pub codebook_index: usize,
    pub patch: u8,
    pub bpp_payload: f64,
    pub bpp_total: f64,
    pub psnr: f64,
    pub msssim: f64,
    pub tokenizer_ratio: f64,
    pub ar_ratio: f64,
    pub overall_ratio: f64,
    pub enc_ms: f64,
    pub dec_ms: f64,
}

impl BenchRow {
    pub fn fields(&self) -> [String; 14] {
        [
            self.file.clone(),
            self.mode.id().to_string(),
            self.model.id().to_string(),
            self.codebook_size.to_string(),
            self.patch.to_string(),
            format!("{:.6}", self.bpp_payload),
            format!("{:.6}", self.bpp_total),
            format!("{:.4}", self.psnr),
            format!("{:.6}", self.msssim),
            format!("{:.6}", self.tokenizer_ratio),
            format!("{:.6}", self.ar_ratio),
            format!("{:.6}", self.overall_ratio),
            format!("{:.3}", self.enc_ms),
            format!("{:.3}", self.dec_ms),
        ]
    }

    fn sort_key(&self) -> (&str, Mode, ModelKind, usize, usize) {
        (&self.file, self.mode, self.model, self.codebook_size, self.codebook_index)
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Every configured (codebook, mode, model) on one image.
pub fn bench_image(name: &str, img: &Image, codebooks: &[Codebook], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let img = cfg.crop.apply(img)?;
    let mut rows = Vec::new();
    for (ci, cb) in codebooks.iter().enumerate() {
        let reference = crop_to_patches(&img, cb.patch_size())?;
        for &mode in &cfg.modes {
            for &model in &cfg.models {
                let start = Instant::now();
                let (bytes, report) = encode_image(&img, cb, mode, model)
                    .with_context(|| format!("encoding {name} (mode {mode}, model {model}, V={})", cb.size()))?;
                let enc_ms = millis(start);
                let start = Instant::now();
                let decoded = decode_image(&bytes, cb).with_context(|| format!("decoding {name}"))?;
                let dec_ms = millis(start);
                rows.push(BenchRow {
                    file: name.to_string(),
                    mode,
                    model,
                    codebook_size: cb.size(),
                    codebook_index: ci,
                    patch: cb.patch_size(),
                    bpp_payload: report.bpp_payload,
                    bpp_total: report.bpp_total,
                    psnr: psnr(&reference, &decoded)?,
                    msssim: ms_ssim(&reference, &decoded).unwrap_or(f64::NAN),
                    tokenizer_ratio: report.tokenizer_ratio,
                    ar_ratio: report.ar_ratio,
                    overall_ratio: report.overall_ratio,
                    enc_ms,
                    dec_ms,
                });
            }
        }
    }
    Ok(rows)
}

pub fn parallel_allowed() -> bool {
    std::env::var(NO_PARALLEL_ENV).map_or(true, |v| v != "1")
}

/// Benchmarks every image and returns the rows sorted by
/// (file, mode, model, V). Images run concurrently on up to `cfg.jobs`
/// threads unless parallelism is disabled through the environment.
pub fn run_bench(images: &[(String, Image)], codebooks: &[Codebook], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let per_image = |(name, img): &(String, Image)| bench_image(name, img, codebooks, cfg);
    let results: Vec<Result<Vec<BenchRow>>> = if cfg.jobs > 1 && parallel_allowed() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .context("starting worker threads")?;
        pool.install(|| images.par_iter().map(per_image).collect())
    } else {
        images.iter().map(per_image).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

//! Commands behind the `aric` binary.

pub mod bench;
pub mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use aric::codec::tokenizer_reconstruction;
use aric::tokenizer::DEFAULT_PATCH_SIZE;
use aric::{
    center_crop, decode_image, encode_image, psnr, read_ppm, sample_unconditional, shifted_tilings, write_ppm,
    Codebook, EncodeOptions, Error as CoreError, Image, Mode, ModelKind, StreamError,
};

use crate::bench::{run_bench, write_csv, BenchConfig};
use crate::config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_HASH_MISMATCH: i32 = 5;

/// Longest side kept by the default crop.
pub const DEFAULT_CROP: u32 = 512;

/// A request the tool cannot carry out as stated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit status for an error, from the first recognizable cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_exit_code(e);
        }
        if cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Stream(StreamError::CodebookMismatch { .. }) => EXIT_HASH_MISMATCH,
        e if e.is_corruption() => EXIT_FORMAT,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "aric", version, about = "Token-based lossy image codec with an adaptive context model")]
pub struct Cli {
    /// key=value file supplying defaults for any long flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a codebook from a directory of PPM/PGM images
    Codebook(CodebookArgs),
    /// Compress one image
    Encode(EncodeArgs),
    /// Decompress one stream
    Decode(DecodeArgs),
    /// Rate/distortion sweep over a corpus, written as CSV
    Bench(BenchArgs),
    /// Generate an image by sampling the context model
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct CodebookArgs {
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Number of codebook entries (V)
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub patch: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Offset step between training tilings; defaults to the patch size
    #[arg(long)]
    pub stride: Option<u8>,
    /// Reserve entry 0 for the zero vector and fit the rest to pyramid residuals
    #[arg(long)]
    pub multiscale: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// 0 = single-scale, 1 = multi-scale
    #[arg(long)]
    pub mode: Option<ModeArg>,
    /// 0 uniform, 1 raster, 2 parent, 3 parent-west
    #[arg(long)]
    pub model: Option<ModelArg>,
    /// WxH window, or "none"; images above 512x512 are cropped by default
    #[arg(long)]
    pub crop: Option<Crop>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// May be repeated; one set of rows per codebook
    #[arg(long)]
    pub codebook: Vec<PathBuf>,
    /// Comma-separated modes
    #[arg(long)]
    pub modes: Option<String>,
    /// Comma-separated model ids or names
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub crop: Option<Crop>,
    /// CSV destination; "-" for stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub model: Option<ModelArg>,
    /// Output size WxH in pixels
    #[arg(long)]
    pub size: Option<Size>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeArg(pub Mode);

impl FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" | "single" => Ok(ModeArg(Mode::SingleScale)),
            "1" | "multi" => Ok(ModeArg(Mode::MultiScale)),
            other => Err(format!("unknown mode {other:?} (expected 0/single or 1/multi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArg(pub ModelKind);

impl FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.id().to_string() == s)
            .map(ModelArg)
            .ok_or_else(|| format!("unknown model {s:?} (expected 0-3 or uniform/raster/parent/parent-west)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub width: u32,
    pub height: u32,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let parse = |v: &str| v.parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
        let size = Size {
            width: parse(w)?,
            height: parse(h)?,
        };
        if size.width == 0 || size.height == 0 {
            return Err(format!("empty size {s:?}"));
        }
        Ok(size)
    }
}

/// How an input image is windowed before coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Crop {
    /// Center window of at most 512×512.
    #[default]
    Default,
    None,
    To(Size),
}

impl FromStr for Crop {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(Crop::None),
            "default" => Ok(Crop::Default),
            other => Ok(Crop::To(other.parse()?)),
        }
    }
}

impl Crop {
    /// Centered window, never larger than the image.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let (w, h) = match self {
            Crop::None => return Ok(img.clone()),
            Crop::Default => (DEFAULT_CROP, DEFAULT_CROP),
            Crop::To(s) => (s.width, s.height),
        };
        let (w, h) = (w.min(img.width()), h.min(img.height()));
        if (w, h) == (img.width(), img.height()) {
            return Ok(img.clone());
        }
        Ok(center_crop(img, w, h).map_err(CoreError::from)?)
    }
}

fn parse_list<T>(text: &str) -> Result<Vec<T>>
where
    T: FromStr<Err = String>,
{
    let items: Vec<T> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(usage))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(usage(format!("empty list {text:?}")));
    }
    Ok(items)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_ppm(&bytes)
        .map_err(CoreError::from)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Codebook::from_bytes(&bytes)
        .map_err(CoreError::from)
        .with_context(|| format!("parsing codebook {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Netpbm files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let is_pnm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "pnm"));
        if is_pnm && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no .ppm/.pgm images in {}", dir.display())));
    }
    Ok(paths)
}

fn default_model(mode: Mode) -> ModelKind {
    match mode {
        Mode::SingleScale => ModelKind::RasterPpm,
        Mode::MultiScale => ModelKind::ScaleParentWest,
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Codebook(a) => cmd_codebook(a, &config, out),
        Command::Encode(a) => cmd_encode(a, &config, out),
        Command::Decode(a) => cmd_decode(a, &config, out),
        Command::Bench(a) => cmd_bench(a, &config, out),
        Command::Sample(a) => cmd_sample(a, &config, out),
    }
}

fn cmd_codebook(a: CodebookArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let dir: PathBuf = cfg.require(a.train_dir, "train-dir")?;
    let size: usize = cfg.require(a.size, "size")?;
    let patch = cfg.pick_or(a.patch, "patch", DEFAULT_PATCH_SIZE)?;
    let seed = cfg.pick_or(a.seed, "seed", 0u64)?;
    let stride = cfg.pick_or(a.stride, "stride", patch)?;
    let multiscale = a.multiscale || cfg.pick_or(None, "multiscale", false)?;
    let dest: PathBuf = cfg.require(a.out, "out")?;
    if size < aric::tokenizer::MIN_CODEBOOK_SIZE {
        return Err(usage(format!("codebook size must be at least 2, got {size}")));
    }
    if patch == 0 || stride == 0 || stride > patch {
        return Err(usage(format!("need 1 <= stride ({stride}) <= patch ({patch})")));
    }

    let mut features = Vec::new();
    for path in list_images(&dir)? {
        let img = read_image(&path)?;
        features.extend(shifted_tilings(&img, patch, stride).map_err(CoreError::from)?);
    }
    log::info!("training V={size} on {} tilings", features.len());
    let cb = if multiscale {
        Codebook::train_multiscale(&features, size, seed)
    } else {
        Codebook::train(&features, size, seed)
    }
    .map_err(|e| usage(e.to_string()))?;
    write_file(&dest, &cb.to_bytes())?;
    writeln!(out, "codebook_id={:016x}", cb.id())?;
    writeln!(out, "V={}", cb.size())?;
    writeln!(out, "dim={}", cb.dim())?;
    Ok(())
}

fn cmd_encode(a: EncodeArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let cb = read_codebook(&cfg.require(a.codebook, "codebook")?)?;
    let mode = cfg.pick_or(a.mode, "mode", ModeArg(Mode::SingleScale))?.0;
    let model = cfg.pick(a.model, "model")?.map_or(default_model(mode), |m| m.0);
    let crop = cfg.pick_or(a.crop, "crop", Crop::Default)?;
    let dest: PathBuf = cfg.require(a.out, "out")?;
    let img = crop.apply(&read_image(&a.input)?)?;

    let start = Instant::now();
    let (bytes, report) = encode_image(&img, &cb, mode, model).map_err(|e| match e {
        CoreError::Tokenizer(_) | CoreError::Invalid(_) => usage(e.to_string()),
        e => e.into(),
    })?;
    let enc_ms = start.elapsed().as_secs_f64() * 1e3;
    write_file(&dest, &bytes)?;

    let target = tokenizer_reconstruction(&img, &cb, &EncodeOptions::new(mode, model))?;
    let original = aric::codec::crop_to_patches(&img, cb.patch_size())?;
    writeln!(out, "mode={}", mode.id())?;
    writeln!(out, "model={}", model.id())?;
    for (k, v) in report.to_key_values() {
        writeln!(out, "{k}={v}")?;
    }
    writeln!(out, "psnr={:.4}", psnr(&original, &target)?)?;
    writeln!(out, "enc_ms={enc_ms:.3}")?;
    Ok(())
}

fn cmd_decode(a: DecodeArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let cb = read_codebook(&cfg.require(a.codebook, "codebook")?)?;
    let dest: PathBuf = cfg.require(a.out, "out")?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let start = Instant::now();
    let img = decode_image(&bytes, &cb).with_context(|| format!("decoding {}", a.input.display()))?;
    let dec_ms = start.elapsed().as_secs_f64() * 1e3;
    write_file(&dest, &write_ppm(&img))?;
    writeln!(out, "width={}", img.width())?;
    writeln!(out, "height={}", img.height())?;
    writeln!(out, "dec_ms={dec_ms:.3}")?;
    Ok(())
}

fn cmd_bench(a: BenchArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let corpus: PathBuf = cfg.require(a.corpus, "corpus")?;
    let mut codebook_paths = a.codebook;
    if codebook_paths.is_empty() {
        if let Some(list) = cfg.get_str("codebook") {
            codebook_paths = list.split(',').map(|s| PathBuf::from(s.trim())).collect();
        }
    }
    if codebook_paths.is_empty() {
        return Err(usage("missing --codebook (flag or config key)"));
    }
    let modes: Vec<Mode> = parse_list::<ModeArg>(&cfg.pick_or(a.modes, "modes", "0".to_string())?)?
        .into_iter()
        .map(|m| m.0)
        .collect();
    let models: Vec<ModelKind> = parse_list::<ModelArg>(&cfg.pick_or(a.models, "models", "0,1".to_string())?)?
        .into_iter()
        .map(|m| m.0)
        .collect();
    let crop = cfg.pick_or(a.crop, "crop", Crop::Default)?;
    let jobs = cfg.pick_or(a.jobs, "jobs", 1usize)?.max(1);
    let dest = cfg.pick_or(a.out, "out", PathBuf::from("-"))?;

    let codebooks = codebook_paths.iter().map(|p| read_codebook(p)).collect::<Result<Vec<_>>>()?;
    if modes.contains(&Mode::MultiScale) {
        if let Some(p) = codebook_paths.iter().zip(&codebooks).find(|(_, cb)| !cb.zero_reserved()) {
            return Err(usage(format!(
                "{} has no reserved zero vector; train it with --multiscale for mode 1",
                p.0.display()
            )));
        }
    }
    let mut images = Vec::new();
    for path in list_images(&corpus)? {
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        images.push((name, read_image(&path)?));
    }
    let rows = run_bench(&images, &codebooks, &BenchConfig { modes, models, crop, jobs })?;
    if dest.as_os_str() == "-" {
        write_csv(&rows, out)?;
    } else {
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf)?;
        write_file(&dest, &buf)?;
        writeln!(out, "rows={}", rows.len())?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let cb = read_codebook(&cfg.require(a.codebook, "codebook")?)?;
    let mode = cfg.pick_or(a.mode, "mode", ModeArg(Mode::SingleScale))?.0;
    let model = cfg.pick(a.model, "model")?.map_or(default_model(mode), |m| m.0);
    let size = cfg.pick_or(a.size, "size", Size { width: 256, height: 256 })?;
    let seed = cfg.pick_or(a.seed, "seed", 0u64)?;
    let temp = cfg.pick_or(a.temp, "temp", 1.0f64)?;
    let dest: PathBuf = cfg.require(a.out, "out")?;
    if !(temp > 0.0 && temp.is_finite()) {
        return Err(usage(format!("temperature must be positive, got {temp}")));
    }
    let img = sample_unconditional(&cb, mode, model, size.width, size.height, seed, temp)
        .map_err(|e| usage(e.to_string()))?;
    write_file(&dest, &write_ppm(&img))?;
    writeln!(out, "width={}", img.width())?;
    writeln!(out, "height={}", img.height())?;
    Ok(())
}

//! Lossy image compression with a vector-quantized token representation and
//! an adaptive context model driving a range coder.
//!
//! ```
//! use aric::{decode_image, encode_image, Codebook, Image, Mode, ModelKind};
//!
//! let mut v = vec![0.0; 12];
//! v.extend(vec![1.0; 12]);
//! let cb = Codebook::new(2, 3, &v, true).unwrap();
//! let img = Image::filled(8, 8, 3, 1.0).unwrap();
//! let (bytes, report) = encode_image(&img, &cb, Mode::MultiScale, ModelKind::ScaleParentWest).unwrap();
//! assert_eq!(decode_image(&bytes, &cb).unwrap(), img);
//! assert!(report.payload_bits as f64 >= report.ideal_bits);
//! ```

pub mod bitstream;
pub mod codec;
mod error;
pub mod image_io;
pub mod metrics;
pub mod prob_model;
pub mod range_coder;
pub mod tokenizer;

pub use bitstream::{parse_stream, write_stream, Header, Mode, StreamError};
pub use codec::{
    decode_image, decode_stream, encode_image, encode_image_with, sample_unconditional, tokenizer_reconstruction,
    EncodeOptions,
};
pub use error::{Error, Result};
pub use image_io::{center_crop, read_ppm, write_ppm, Image, ImageError};
pub use metrics::{compression_ratios, ms_ssim, psnr, MetricsError, RateReport, Ratios};
pub use prob_model::{Context, Distribution, ModelError, ModelKind, PpmModel, ProbabilityModel, UniformModel};
pub use range_coder::{quantize, CoderError, FreqTable};
pub use tokenizer::{
    detokenize, detokenize_multiscale, extract_features, shifted_tilings, tokenize, tokenize_multiscale, Codebook, FeatureMap,
    Resolution, ScalePyramid, TokenGrid, TokenizerError,
};

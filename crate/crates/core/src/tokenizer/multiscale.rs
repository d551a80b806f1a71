//! Coarse-to-fine residual quantization.
//!
//! Scale `k` quantizes the average-pooled residual between the features and
//! everything reconstructed by scales `1..k`. Each token map is upsampled by
//! replication back to full resolution before it is added to the running
//! reconstruction, so the pyramid decodes with the same arithmetic it was
//! encoded with.

use super::{check_shape, Codebook, FeatureMap, TokenGrid, TokenizerError};
use crate::image_io::Image;

/// Token-grid dimensions of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub cols: usize,
    pub rows: usize,
}

impl Resolution {
    pub fn new(cols: usize, rows: usize) -> Self {
        Resolution { cols, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalePyramid {
    pub scales: Vec<TokenGrid>,
}

impl ScalePyramid {
    pub fn resolutions(&self) -> Vec<Resolution> {
        self.scales.iter().map(|g| Resolution::new(g.cols, g.rows)).collect()
    }

    pub fn token_count(&self) -> usize {
        self.scales.iter().map(TokenGrid::len).sum()
    }
}

/// Checks that `res` is strictly increasing, ends at `cols`×`rows`, and that
/// every level divides the full grid by the same factor on both axes.
pub fn validate_resolutions(res: &[Resolution], cols: usize, rows: usize) -> Result<(), TokenizerError> {
    let fail = |m: String| Err(TokenizerError::Resolutions(m));
    let Some(last) = res.last() else {
        return fail("no scales".into());
    };
    if *last != Resolution::new(cols, rows) {
        return fail(format!(
            "last scale {}x{} differs from the {cols}x{rows} token grid",
            last.cols, last.rows
        ));
    }
    for r in res {
        if r.cols == 0 || r.rows == 0 || cols % r.cols != 0 || rows % r.rows != 0 || cols / r.cols != rows / r.rows {
            return fail(format!(
                "{}x{} does not evenly divide {cols}x{rows} with a common factor",
                r.cols, r.rows
            ));
        }
    }
    for w in res.windows(2) {
        if w[1].cols <= w[0].cols || w[1].rows <= w[0].rows {
            return fail(format!(
                "scales must strictly increase: {}x{} then {}x{}",
                w[0].cols, w[0].rows, w[1].cols, w[1].rows
            ));
        }
    }
    Ok(())
}

/// Every power-of-two reduction of `cols`×`rows` that divides both sides,
/// coarsest first.
pub fn dyadic_resolutions(cols: usize, rows: usize) -> Vec<Resolution> {
    let mut factor = 1;
    while cols % (factor * 2) == 0 && rows % (factor * 2) == 0 {
        factor *= 2;
    }
    let mut out = Vec::new();
    while factor >= 1 {
        out.push(Resolution::new(cols / factor, rows / factor));
        factor /= 2;
    }
    out
}

/// Block means of `residual` over the cells of `res`, summed row-major.
fn pool(residual: &[f64], cols: usize, dim: usize, res: Resolution, block: usize) -> Vec<f64> {
    let mut pooled = vec![0.0; res.cols * res.rows * dim];
    let count = (block * block) as f64;
    for by in 0..res.rows {
        for bx in 0..res.cols {
            let out = &mut pooled[(by * res.cols + bx) * dim..(by * res.cols + bx + 1) * dim];
            for y in by * block..(by + 1) * block {
                for x in bx * block..(bx + 1) * block {
                    let v = &residual[(y * cols + x) * dim..(y * cols + x + 1) * dim];
                    for (o, &r) in out.iter_mut().zip(v) {
                        *o += r;
                    }
                }
            }
            for o in out.iter_mut() {
                *o /= count;
            }
        }
    }
    pooled
}

/// Adds the replicated coarse vectors onto the full-resolution accumulator.
fn accumulate<'a>(
    acc: &mut [f64],
    cols: usize,
    rows: usize,
    dim: usize,
    block: usize,
    coarse_cols: usize,
    coarse: impl Fn(usize) -> &'a [f64],
) {
    for y in 0..rows {
        for x in 0..cols {
            let v = coarse((y / block) * coarse_cols + x / block);
            for (a, &c) in acc[(y * cols + x) * dim..(y * cols + x + 1) * dim].iter_mut().zip(v) {
                *a += c;
            }
        }
    }
}

pub fn tokenize_multiscale(
    features: &FeatureMap,
    cb: &Codebook,
    resolutions: &[Resolution],
) -> Result<ScalePyramid, TokenizerError> {
    Ok(quantize_pyramid(features, cb, resolutions)?.0)
}

/// Returns the pyramid and the pre-clamp reconstruction it encodes.
pub(crate) fn quantize_pyramid(
    features: &FeatureMap,
    cb: &Codebook,
    resolutions: &[Resolution],
) -> Result<(ScalePyramid, Vec<f64>), TokenizerError> {
    check_shape(features, cb)?;
    if !cb.zero_reserved() {
        return Err(TokenizerError::Codebook(
            "multi-scale quantization needs the zero vector at index 0".into(),
        ));
    }
    let (cols, rows, dim) = (features.cols, features.rows, features.dim());
    validate_resolutions(resolutions, cols, rows)?;
    let mut acc = vec![0.0; features.data.len()];
    let mut scales = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        let block = cols / r.cols;
        let residual: Vec<f64> = features.data.iter().zip(&acc).map(|(f, a)| f - a).collect();
        let pooled = pool(&residual, cols, dim, r, block);
        let tokens: Vec<u32> = pooled.chunks_exact(dim).map(|v| cb.nearest(v)).collect();
        accumulate(&mut acc, cols, rows, dim, block, r.cols, |i| cb.vector(tokens[i] as usize));
        scales.push(TokenGrid::new(r.cols, r.rows, tokens)?);
    }
    Ok((ScalePyramid { scales }, acc))
}

/// Sum of the upsampled codebook vectors of every scale, before clamping.
pub fn reconstruct_multiscale(pyr: &ScalePyramid, cb: &Codebook) -> Result<FeatureMap, TokenizerError> {
    let res = pyr.resolutions();
    let last = *res.last().ok_or_else(|| TokenizerError::Resolutions("no scales".into()))?;
    validate_resolutions(&res, last.cols, last.rows)?;
    let (cols, rows, dim) = (last.cols, last.rows, cb.dim());
    for grid in &pyr.scales {
        if let Some(&id) = grid.tokens.iter().find(|&&t| t as usize >= cb.size()) {
            return Err(TokenizerError::Corrupt { id, size: cb.size() });
        }
    }
    let mut acc = vec![0.0; cols * rows * dim];
    for grid in &pyr.scales {
        accumulate(&mut acc, cols, rows, dim, cols / grid.cols, grid.cols, |i| {
            cb.vector(grid.tokens[i] as usize)
        });
    }
    FeatureMap::new(cols, rows, cb.patch_size(), cb.channels(), acc)
}

pub fn detokenize_multiscale(pyr: &ScalePyramid, cb: &Codebook) -> Result<Image, TokenizerError> {
    Ok(reconstruct_multiscale(pyr, cb)?.to_image())
}

/// Unquantized residual vectors of every scale: the training set a
/// multi-scale codebook is fitted to.
pub fn ideal_residuals(features: &FeatureMap, resolutions: &[Resolution]) -> Result<Vec<f64>, TokenizerError> {
    let (cols, rows, dim) = (features.cols, features.rows, features.dim());
    validate_resolutions(resolutions, cols, rows)?;
    let mut acc = vec![0.0; features.data.len()];
    let mut out = Vec::new();
    for &r in resolutions {
        let block = cols / r.cols;
        let residual: Vec<f64> = features.data.iter().zip(&acc).map(|(f, a)| f - a).collect();
        let pooled = pool(&residual, cols, dim, r, block);
        accumulate(&mut acc, cols, rows, dim, block, r.cols, |i| &pooled[i * dim..(i + 1) * dim]);
        out.extend_from_slice(&pooled);
    }
    Ok(out)
}

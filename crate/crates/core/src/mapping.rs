//! Encoder and decoder structures: randomized piecewise-affine encoders,
//! tabulated MMSE decoders, and the discrete channel kernels that tie the
//! two together.
//!
//! The channel is discretized by spreading the probability mass of each
//! noisy output g_k(x) + n onto the two bracketing nodes of a uniform
//! y-grid with linear-interpolation weights. Costs evaluated through the
//! same kernel are then exactly consistent with decoder tables read back
//! via linear interpolation, which keeps decoder rebuilds and Gibbs
//! updates exactly non-increasing on the discrete model.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::prob_model::{DiscretizedSource, Grid, NoiseModel};

/// One local model g_k(x) = slope·x + intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalAffineModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LocalAffineModel {
    pub fn new(slope: f64, intercept: f64) -> Self {
        LocalAffineModel { slope, intercept }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Euclidean distance in parameter space, used by the merge test.
    pub fn distance(&self, other: &LocalAffineModel) -> f64 {
        let ds = self.slope - other.slope;
        let di = self.intercept - other.intercept;
        (ds * ds + di * di).sqrt()
    }
}

/// Randomized piecewise encoder: K local models plus a column-stochastic
/// association matrix p(k|x) of shape K × |source grid|.
#[derive(Debug, Clone)]
pub struct PiecewiseEncoder {
    models: Vec<LocalAffineModel>,
    assoc: Array2<f64>,
}

impl PiecewiseEncoder {
    pub fn new(models: Vec<LocalAffineModel>, assoc: Array2<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid_parameter("models", "need at least one model"));
        }
        if assoc.nrows() != models.len() {
            return Err(Error::InvalidArgument(format!(
                "assoc has {} rows but there are {} models",
                assoc.nrows(),
                models.len()
            )));
        }
        for m in &models {
            if !m.slope.is_finite() || !m.intercept.is_finite() {
                return Err(Error::invalid_parameter("models", "parameters must be finite"));
            }
        }
        for (j, col) in assoc.columns().into_iter().enumerate() {
            let mut sum = 0.0;
            for &p in col {
                if !(-1e-12..=1.0 + 1e-9).contains(&p) {
                    return Err(Error::InvalidArgument(format!(
                        "association probability {p} out of [0,1] in column {j}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "association column {j} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(PiecewiseEncoder { models, assoc })
    }

    /// Single deterministic model applied everywhere.
    pub fn deterministic(model: LocalAffineModel, grid_len: usize) -> Result<Self> {
        PiecewiseEncoder::new(vec![model], Array2::ones((1, grid_len)))
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn grid_len(&self) -> usize {
        self.assoc.ncols()
    }

    pub fn models(&self) -> &[LocalAffineModel] {
        &self.models
    }

    pub fn assoc(&self) -> &Array2<f64> {
        &self.assoc
    }

    /// g_k evaluated at every gridpoint.
    pub fn model_values(&self, k: usize, grid: &Grid) -> Vec<f64> {
        let m = self.models[k];
        grid.points().iter().map(|&x| m.eval(x)).collect()
    }

    /// Replaces the association matrix; shape must match.
    pub fn set_assoc(&mut self, assoc: Array2<f64>) -> Result<()> {
        let checked = PiecewiseEncoder::new(self.models.clone(), assoc)?;
        self.assoc = checked.assoc;
        Ok(())
    }

    pub fn set_model(&mut self, k: usize, model: LocalAffineModel) {
        self.models[k] = model;
    }

    /// Hard argmin-style collapse: per gridpoint take the model with the
    /// largest association probability (ties to the lowest index).
    pub fn hard_values(&self, grid: &Grid) -> DeterministicEncoder {
        let values = grid
            .points()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let col = self.assoc.column(i);
                let mut best = 0;
                for k in 1..col.len() {
                    if col[k] > col[best] {
                        best = k;
                    }
                }
                self.models[best].eval(x)
            })
            .collect();
        DeterministicEncoder { values }
    }
}

/// An encoder given directly as channel inputs, one per source gridpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicEncoder {
    pub values: Vec<f64>,
}

impl DeterministicEncoder {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_parameter("values", "must be finite"));
        }
        Ok(DeterministicEncoder { values })
    }

    pub fn from_affine(model: LocalAffineModel, grid: &Grid) -> Self {
        DeterministicEncoder {
            values: grid.points().iter().map(|&x| model.eval(x)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Tabulated decoder estimate on a 2-D grid. The first axis is a channel
/// output; the second is either the side-information axis or the second
/// channel output.
#[derive(Debug, Clone)]
pub struct DecoderTable {
    y_grid: Grid,
    second_grid: Grid,
    values: Array2<f64>,
}

impl DecoderTable {
    pub fn new(y_grid: Grid, second_grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (y_grid.len(), second_grid.len()) {
            return Err(Error::InvalidArgument(format!(
                "table shape {:?} does not match grids ({}, {})",
                values.dim(),
                y_grid.len(),
                second_grid.len()
            )));
        }
        Ok(DecoderTable { y_grid, second_grid, values })
    }

    pub fn y_grid(&self) -> &Grid {
        &self.y_grid
    }

    pub fn second_grid(&self) -> &Grid {
        &self.second_grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Bilinear interpolation, clamped to the nearest edge cell outside
    /// the table.
    pub fn lookup(&self, y: f64, second: f64) -> f64 {
        let (i, ti) = self.y_grid.locate(y);
        let (j, tj) = self.second_grid.locate(second);
        let v = &self.values;
        let a = v[(i, j)] * (1.0 - ti) + v[(i + 1, j)] * ti;
        let b = v[(i, j + 1)] * (1.0 - ti) + v[(i + 1, j + 1)] * ti;
        a * (1.0 - tj) + b * tj
    }
}

/// Decoder set for the two-encoder setting.
#[derive(Debug, Clone)]
pub enum DistributedDecoder {
    Reconstruction { x1: DecoderTable, x2: DecoderTable },
    Function(DecoderTable),
}

impl DistributedDecoder {
    pub fn tables(&self) -> Vec<&DecoderTable> {
        match self {
            DistributedDecoder::Reconstruction { x1, x2 } => vec![x1, x2],
            DistributedDecoder::Function(t) => vec![t],
        }
    }
}

/// Decoding objective for the two-encoder setting.
pub enum DecoderTarget<'a> {
    Reconstruction,
    Function(&'a dyn Fn(f64, f64) -> f64),
}

/// Uniform channel-output grid covering every encoder value ± the noise
/// support, capped at `max_points` by widening the spacing.
pub fn default_y_grid(
    g_min: f64,
    g_max: f64,
    noise: &NoiseModel,
    spacing: f64,
    max_points: usize,
) -> Result<Grid> {
    let lo = g_min + noise.grid.first();
    let hi = g_max + noise.grid.last();
    let span = hi - lo;
    let mut step = spacing;
    if max_points >= 3 {
        step = step.max(span / (max_points - 1) as f64);
    }
    Grid::covering(lo, hi, step)
}

/// Discrete channel kernel of a deterministic map: column i holds the
/// probability of each y-grid node given x_i, with the mass of every
/// noisy output g(x_i) + n split between its two bracketing nodes by
/// linear-interpolation weights (clamped at the edges). Columns sum to 1
/// exactly up to rounding.
pub fn spread_kernel(values: &[f64], noise: &NoiseModel, y_grid: &Grid) -> Array2<f64> {
    let mut k = Array2::zeros((y_grid.len(), values.len()));
    for (i, &g) in values.iter().enumerate() {
        for (&n, &wn) in noise.grid.points().iter().zip(&noise.weights) {
            let (m, t) = y_grid.locate(g + n);
            k[(m, i)] += wn * (1.0 - t);
            k[(m + 1, i)] += wn * t;
        }
    }
    k
}

/// Channel kernel of a randomized encoder: Σ_k p(k|x)·spread_kernel(g_k).
pub fn channel_kernel(
    enc: &PiecewiseEncoder,
    x_grid: &Grid,
    noise: &NoiseModel,
    y_grid: &Grid,
) -> Result<Array2<f64>> {
    if enc.grid_len() != x_grid.len() {
        return Err(Error::InvalidArgument(format!(
            "encoder over {} points but source grid has {}",
            enc.grid_len(),
            x_grid.len()
        )));
    }
    let mut total = Array2::zeros((y_grid.len(), x_grid.len()));
    for k in 0..enc.num_models() {
        let vals = enc.model_values(k, x_grid);
        let part = spread_kernel(&vals, noise, y_grid);
        for (i, p) in enc.assoc().row(k).iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for m in 0..y_grid.len() {
                total[(m, i)] += p * part[(m, i)];
            }
        }
    }
    Ok(total)
}

fn scale_columns(kernel: &Array2<f64>, scales: &[f64]) -> Array2<f64> {
    let mut out = kernel.clone();
    for (mut col, &s) in out.columns_mut().into_iter().zip(scales) {
        col.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// MMSE decoder table from a precomputed channel kernel; shared by the
/// public builder and the cost layer (which caches kernels).
pub fn decoder_from_kernel_side_info(
    kernel: &Array2<f64>,
    joint: &DiscretizedSource,
    y_grid: &Grid,
) -> Result<DecoderTable> {
    let (gx, gz) = joint.grids2()?;
    let w = joint.weights2()?;
    if kernel.dim() != (y_grid.len(), gx.len()) {
        return Err(Error::InvalidArgument("kernel shape mismatch".into()));
    }
    let den = kernel.dot(w);
    let num = scale_columns(kernel, gx.points()).dot(w);
    let fallback = joint.mean_first_given_second()?;
    let mut values = Array2::zeros(den.dim());
    for ((idx, &d), &n) in den.indexed_iter().zip(num.iter()) {
        values[idx] = if d > 1e-300 { n / d } else { fallback[idx.1] };
    }
    DecoderTable::new(y_grid.clone(), gz.clone(), values)
}

/// MMSE decoder for the side-information setting: a table of E{X | y, z}
/// under the discrete channel kernel of `enc`.
pub fn build_decoder_side_info(
    enc: &PiecewiseEncoder,
    joint: &DiscretizedSource,
    noise: &NoiseModel,
    y_grid: &Grid,
) -> Result<DecoderTable> {
    if y_grid.is_empty() {
        return Err(Error::InvalidArgument("empty y grid".into()));
    }
    let (gx, _) = joint.grids2()?;
    let kernel = channel_kernel(enc, gx, noise, y_grid)?;
    decoder_from_kernel_side_info(&kernel, joint, y_grid)
}

/// Distributed decoder tables from precomputed per-encoder kernels.
pub fn decoder_from_kernels_distributed(
    kernel1: &Array2<f64>,
    kernel2: &Array2<f64>,
    joint: &DiscretizedSource,
    y1_grid: &Grid,
    y2_grid: &Grid,
    target: &DecoderTarget<'_>,
) -> Result<DistributedDecoder> {
    let (gx1, gx2) = joint.grids2()?;
    let w = joint.weights2()?;
    if kernel1.dim() != (y1_grid.len(), gx1.len()) || kernel2.dim() != (y2_grid.len(), gx2.len()) {
        return Err(Error::InvalidArgument("kernel shape mismatch".into()));
    }
    // posterior weight of (x1, x2) at (y1, y2) ∝ K1[y1,x1]·w(x1,x2)·K2[y2,x2]
    let den = kernel1.dot(w).dot(&kernel2.t());

    let table = |weighted: Array2<f64>, fallback: f64| -> Result<DecoderTable> {
        let num = kernel1.dot(&weighted).dot(&kernel2.t());
        let mut values = Array2::zeros(den.dim());
        for ((idx, &d), &n) in den.indexed_iter().zip(num.iter()) {
            values[idx] = if d > 1e-300 { n / d } else { fallback };
        }
        DecoderTable::new(y1_grid.clone(), y2_grid.clone(), values)
    };

    match target {
        DecoderTarget::Reconstruction => {
            let mut w1 = w.clone();
            for (mut row, &x) in w1.rows_mut().into_iter().zip(gx1.points()) {
                row.iter_mut().for_each(|v| *v *= x);
            }
            let mut w2 = w.clone();
            for (mut col, &x) in w2.columns_mut().into_iter().zip(gx2.points()) {
                col.iter_mut().for_each(|v| *v *= x);
            }
            let e1 = joint.marginal_first()?.expect(|p| p[0])?;
            let e2 = joint.marginal_second()?.expect(|p| p[0])?;
            Ok(DistributedDecoder::Reconstruction {
                x1: table(w1, e1)?,
                x2: table(w2, e2)?,
            })
        }
        DecoderTarget::Function(gamma) => {
            let mut wg = w.clone();
            for (i, &x1) in gx1.points().iter().enumerate() {
                for (j, &x2) in gx2.points().iter().enumerate() {
                    wg[(i, j)] *= gamma(x1, x2);
                }
            }
            let eg = joint.expect(|p| gamma(p[0], p[1]))?;
            Ok(DistributedDecoder::Function(table(wg, eg)?))
        }
    }
}

/// MMSE decoder(s) for the two-encoder setting.
#[allow(clippy::too_many_arguments)]
pub fn build_decoder_distributed(
    enc1: &PiecewiseEncoder,
    enc2: &PiecewiseEncoder,
    joint: &DiscretizedSource,
    noise1: &NoiseModel,
    noise2: &NoiseModel,
    y1_grid: &Grid,
    y2_grid: &Grid,
    target: &DecoderTarget<'_>,
) -> Result<DistributedDecoder> {
    if y1_grid.is_empty() || y2_grid.is_empty() {
        return Err(Error::InvalidArgument("empty y grid".into()));
    }
    let (gx1, gx2) = joint.grids2()?;
    let k1 = channel_kernel(enc1, gx1, noise1, y1_grid)?;
    let k2 = channel_kernel(enc2, gx2, noise2, y2_grid)?;
    decoder_from_kernels_distributed(&k1, &k2, joint, y1_grid, y2_grid, target)
}

/// Transmit power E{g(X)²} of a randomized encoder over a 1-D source.
pub fn encoder_power(enc: &PiecewiseEncoder, source: &DiscretizedSource) -> Result<f64> {
    let grid = source.grid1()?;
    let weights = source.weights1()?;
    if enc.grid_len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "encoder over {} points but source grid has {}",
            enc.grid_len(),
            grid.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&x, &f)) in grid.points().iter().zip(weights).enumerate() {
        let mut s = 0.0;
        for (k, m) in enc.models().iter().enumerate() {
            let g = m.eval(x);
            s += enc.assoc()[(k, i)] * g * g;
        }
        total += f * s;
    }
    Ok(total)
}

/// H(K|X) in nats, with 0·log 0 = 0.
pub fn conditional_entropy(enc: &PiecewiseEncoder, source: &DiscretizedSource) -> Result<f64> {
    let grid = source.grid1()?;
    let weights = source.weights1()?;
    if enc.grid_len() != grid.len() {
        return Err(Error::InvalidArgument("encoder/source length mismatch".into()));
    }
    let mut total = 0.0;
    for (i, &f) in weights.iter().enumerate() {
        let mut h = 0.0;
        for k in 0..enc.num_models() {
            let p = enc.assoc()[(k, i)];
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        total += f * h;
    }
    let _ = grid;
    Ok(total)
}

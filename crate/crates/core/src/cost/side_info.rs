//! Costs for the side-information (Wyner-Ziv style) setting.

use ndarray::Array2;

use crate::cost::{noise_average, CostBreakdown};
use crate::error::{Error, Result};
use crate::mapping::{
    channel_kernel, conditional_entropy, decoder_from_kernel_side_info, encoder_power,
    DecoderTable, LocalAffineModel, PiecewiseEncoder,
};
use crate::prob_model::{DiscretizedSource, Grid, NoiseModel};

/// Problem data for a single encoder with decoder side information.
#[derive(Debug, Clone)]
pub struct SideInfoProblem {
    pub joint: DiscretizedSource,
    pub noise: NoiseModel,
    pub lambda: f64,
    pub power_target: f64,
}

impl SideInfoProblem {
    pub fn new(
        joint: DiscretizedSource,
        noise: NoiseModel,
        lambda: f64,
        power_target: f64,
    ) -> Result<Self> {
        if joint.dim() != 2 {
            return Err(Error::invalid_parameter("joint", "must be 2-D over (x, z)"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid_parameter("lambda", "must be finite and >= 0"));
        }
        if !(power_target > 0.0) {
            return Err(Error::invalid_parameter("power_target", "must be positive"));
        }
        Ok(SideInfoProblem { joint, noise, lambda, power_target })
    }
}

/// Distortion tables for a fixed decoder: for every channel-output node m
/// and source point i,
///   E{(x_i − w(y_m, Z))² | X = x_i} = consts[i] + u[(m, i)]
/// with consts[i] = x_i² and u = −2·x_i·E{w|·} + E{w²|·}, the conditional
/// expectations taken over Z given X = x_i.
pub fn side_info_cost_tables(
    joint: &DiscretizedSource,
    decoder: &DecoderTable,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let (gx, gz) = joint.grids2()?;
    if decoder.second_grid().len() != gz.len() {
        return Err(Error::InvalidArgument(
            "decoder side-information axis does not match the source grid".into(),
        ));
    }
    let cond = joint.conditional_given_first()?; // |X|×|Z|
    let v = decoder.values(); // |Y|×|Z|
    let w1 = v.dot(&cond.t()); // E{w | y, x}
    let w2 = v.mapv(|a| a * a).dot(&cond.t()); // E{w² | y, x}
    let mut u = w2;
    for (i, &x) in gx.points().iter().enumerate() {
        for m in 0..u.nrows() {
            u[(m, i)] -= 2.0 * x * w1[(m, i)];
        }
    }
    let consts = gx.points().iter().map(|&x| x * x).collect();
    Ok((consts, u))
}

/// J_k(x) = E{(x − w(g_k(x)+N, Z))²} + λ·g_k(x)² for one gridpoint and
/// local model, against an explicitly supplied decoder table.
pub fn pointwise_cost_side_info(
    problem: &SideInfoProblem,
    enc: &PiecewiseEncoder,
    x_index: usize,
    model_k: usize,
    decoder: &DecoderTable,
) -> Result<f64> {
    let (consts, u) = side_info_cost_tables(&problem.joint, decoder)?;
    let gx = problem.joint.grids2()?.0;
    let g = enc.models()[model_k].eval(gx.points()[x_index]);
    Ok(consts[x_index]
        + noise_average(&u, x_index, decoder.y_grid(), &problem.noise, g)
        + problem.lambda * g * g)
}

/// Full cost accounting of (encoder, decoder) at temperature `t`.
pub fn lagrangian_side_info(
    problem: &SideInfoProblem,
    enc: &PiecewiseEncoder,
    decoder: &DecoderTable,
    t: f64,
    h0: f64,
) -> Result<CostBreakdown> {
    let (consts, u) = side_info_cost_tables(&problem.joint, decoder)?;
    let src = problem.joint.marginal_first()?;
    let gx = src.grid1()?;
    let fx = src.weights1()?;
    let mut distortion = 0.0;
    for (i, (&x, &f)) in gx.points().iter().zip(fx).enumerate() {
        for (k, m) in enc.models().iter().enumerate() {
            let p = enc.assoc()[(k, i)];
            if p == 0.0 {
                continue;
            }
            let g = m.eval(x);
            distortion +=
                f * p * (consts[i] + noise_average(&u, i, decoder.y_grid(), &problem.noise, g));
        }
    }
    let power = encoder_power(enc, &src)?;
    let entropy = conditional_entropy(enc, &src)?;
    Ok(CostBreakdown::new(
        distortion,
        vec![power],
        &[problem.lambda],
        &[problem.power_target],
        entropy,
        t,
        h0,
    ))
}

/// Mutable optimization state for the side-information setting: the
/// problem, the current encoder, and cached decoder/cost tables.
pub struct SideInfoSystem {
    problem: SideInfoProblem,
    y_grid: Grid,
    enc: PiecewiseEncoder,
    src: DiscretizedSource,
    decoder: Option<DecoderTable>,
    tables: Option<(Vec<f64>, Array2<f64>)>,
}

impl SideInfoSystem {
    pub fn new(problem: SideInfoProblem, enc: PiecewiseEncoder, y_grid: Grid) -> Result<Self> {
        let src = problem.joint.marginal_first()?;
        if enc.grid_len() != src.grid1()?.len() {
            return Err(Error::InvalidArgument("encoder/source length mismatch".into()));
        }
        Ok(SideInfoSystem { problem, y_grid, enc, src, decoder: None, tables: None })
    }

    pub fn problem(&self) -> &SideInfoProblem {
        &self.problem
    }

    pub fn y_grid(&self) -> &Grid {
        &self.y_grid
    }

    pub fn source(&self) -> &DiscretizedSource {
        &self.src
    }

    pub fn encoder(&self) -> &PiecewiseEncoder {
        &self.enc
    }

    pub fn decoder(&self) -> Result<&DecoderTable> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidState("decoder not built yet".into()))
    }

    /// Replaces the encoder. The cached decoder is kept: costs are always
    /// evaluated against the most recently built decoder, as the
    /// alternating optimization requires.
    pub fn set_encoder(&mut self, enc: PiecewiseEncoder) -> Result<()> {
        if enc.grid_len() != self.src.grid1()?.len() {
            return Err(Error::InvalidArgument("encoder/source length mismatch".into()));
        }
        self.enc = enc;
        Ok(())
    }

    /// Rebuilds the MMSE decoder for the current encoder and refreshes
    /// the cost tables.
    pub fn rebuild_decoder(&mut self) -> Result<()> {
        let gx = self.problem.joint.grids2()?.0;
        let kernel = channel_kernel(&self.enc, gx, &self.problem.noise, &self.y_grid)?;
        let dec = decoder_from_kernel_side_info(&kernel, &self.problem.joint, &self.y_grid)?;
        self.tables = Some(side_info_cost_tables(&self.problem.joint, &dec)?);
        self.decoder = Some(dec);
        Ok(())
    }

    fn tables(&self) -> Result<&(Vec<f64>, Array2<f64>)> {
        self.tables
            .as_ref()
            .ok_or_else(|| Error::InvalidState("decoder not built yet".into()))
    }

    /// J_k(x_i) for an arbitrary local model (used by gradient probes and
    /// line search), against the cached decoder.
    pub fn cost_row(&self, model: LocalAffineModel) -> Result<Vec<f64>> {
        let (consts, u) = self.tables()?;
        let gx = self.src.grid1()?;
        let lambda = self.problem.lambda;
        Ok(gx
            .points()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let g = model.eval(x);
                consts[i]
                    + noise_average(u, i, &self.y_grid, &self.problem.noise, g)
                    + lambda * g * g
            })
            .collect())
    }

    /// The full K × |X| matrix of per-model pointwise costs J_k(x).
    pub fn cost_matrix(&self) -> Result<Array2<f64>> {
        let n = self.src.grid1()?.len();
        let mut j = Array2::zeros((self.enc.num_models(), n));
        for (k, &m) in self.enc.models().iter().enumerate() {
            let row = self.cost_row(m)?;
            for (i, v) in row.into_iter().enumerate() {
                j[(k, i)] = v;
            }
        }
        Ok(j)
    }

    pub fn breakdown(&self, t: f64, h0: f64) -> Result<CostBreakdown> {
        let (consts, u) = self.tables()?;
        let gx = self.src.grid1()?;
        let fx = self.src.weights1()?;
        let mut distortion = 0.0;
        for (i, (&x, &f)) in gx.points().iter().zip(fx).enumerate() {
            for (k, m) in self.enc.models().iter().enumerate() {
                let p = self.enc.assoc()[(k, i)];
                if p == 0.0 {
                    continue;
                }
                let g = m.eval(x);
                distortion +=
                    f * p * (consts[i] + noise_average(u, i, &self.y_grid, &self.problem.noise, g));
            }
        }
        let power = encoder_power(&self.enc, &self.src)?;
        let entropy = conditional_entropy(&self.enc, &self.src)?;
        Ok(CostBreakdown::new(
            distortion,
            vec![power],
            &[self.problem.lambda],
            &[self.problem.power_target],
            entropy,
            t,
            h0,
        ))
    }
}

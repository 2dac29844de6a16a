//! Costs for the two-encoder distributed setting (reconstruction of both
//! sources, or computation of a function of them).
//!
//! Per-point per-model costs for encoder i are conditional expectations
//! over (X_other, K_other, N1, N2) given (X_i, K_i); K1 ↔ X1 ↔ X2 ↔ K2
//! form a Markov chain, so the other encoder enters only through its
//! channel kernel. All the heavy sums are folded into per-route tables
//! over (own channel output, own source point) once per decoder rebuild
//! or other-encoder change.

use std::sync::Arc;

use ndarray::Array2;

use crate::cost::{noise_average, CostBreakdown};
use crate::error::{Error, Result};
use crate::mapping::{
    channel_kernel, conditional_entropy, decoder_from_kernels_distributed, encoder_power,
    DecoderTarget, DistributedDecoder, LocalAffineModel, PiecewiseEncoder,
};
use crate::prob_model::{DiscretizedSource, Grid, NoiseModel};

pub type GammaFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// What the decoder is asked to produce.
#[derive(Clone)]
pub enum Objective {
    Reconstruction,
    Function(GammaFn),
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::Reconstruction => f.write_str("Reconstruction"),
            Objective::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Problem data for the two-encoder setting.
#[derive(Debug, Clone)]
pub struct DistributedProblem {
    pub joint: DiscretizedSource,
    pub noise1: NoiseModel,
    pub noise2: NoiseModel,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub objective: Objective,
    pub power_targets: [f64; 2],
}

impl DistributedProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        joint: DiscretizedSource,
        noise1: NoiseModel,
        noise2: NoiseModel,
        lambda1: f64,
        lambda2: f64,
        eta: f64,
        objective: Objective,
        power_targets: [f64; 2],
    ) -> Result<Self> {
        if joint.dim() != 2 {
            return Err(Error::invalid_parameter("joint", "must be 2-D over (x1, x2)"));
        }
        for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::invalid_parameter(name, "must be finite and >= 0"));
            }
        }
        if !(eta > 0.0) {
            return Err(Error::invalid_parameter("eta", "must be positive"));
        }
        Ok(DistributedProblem {
            joint,
            noise1,
            noise2,
            lambda1,
            lambda2,
            eta,
            objective,
            power_targets,
        })
    }

    pub fn lambda(&self, i: usize) -> f64 {
        if i == 0 {
            self.lambda1
        } else {
            self.lambda2
        }
    }

    pub fn noise(&self, i: usize) -> &NoiseModel {
        if i == 0 {
            &self.noise1
        } else {
            &self.noise2
        }
    }
}

/// One distortion component of a route's cost:
/// E{component | x_i, y_i = node m} = consts[i] + u[(m, i)], weighted by
/// `weight` in the total distortion.
pub(crate) struct Component {
    pub(crate) weight: f64,
    pub(crate) consts: Vec<f64>,
    pub(crate) u: Array2<f64>,
}

/// All distortion components seen from one encoder's side.
pub(crate) struct RouteTables {
    pub(crate) comps: Vec<Component>,
}

impl RouteTables {
    /// Distortion part of J_k(x_i) for own channel value g (no λ term).
    pub(crate) fn distortion_at(&self, i: usize, g: f64, y_grid: &Grid, noise: &NoiseModel) -> f64 {
        let mut acc = 0.0;
        for c in &self.comps {
            acc += c.weight * (c.consts[i] + noise_average(&c.u, i, y_grid, noise, g));
        }
        acc
    }
}

/// Scales column j of `m` by `s[j]`.
fn scale_cols(m: &Array2<f64>, s: &[f64]) -> Array2<f64> {
    let mut out = m.clone();
    for (mut col, &v) in out.columns_mut().into_iter().zip(s) {
        col.iter_mut().for_each(|e| *e *= v);
    }
    out
}

/// Mutable optimization state for the two-encoder setting, with lazy
/// cache invalidation: changing encoder i stales the other route's
/// tables; a decoder rebuild stales both.
pub struct DistributedSystem {
    problem: DistributedProblem,
    y_grids: [Grid; 2],
    encs: [PiecewiseEncoder; 2],
    srcs: [DiscretizedSource; 2],
    /// f(x_other | x_i) for each route, shape |X_i| × |X_other|.
    conds: [Array2<f64>; 2],
    kernels: [Option<Array2<f64>>; 2],
    decoder: Option<DistributedDecoder>,
    routes: [Option<RouteTables>; 2],
}

impl DistributedSystem {
    pub fn new(
        problem: DistributedProblem,
        enc1: PiecewiseEncoder,
        enc2: PiecewiseEncoder,
        y1_grid: Grid,
        y2_grid: Grid,
    ) -> Result<Self> {
        let src1 = problem.joint.marginal_first()?;
        let src2 = problem.joint.marginal_second()?;
        if enc1.grid_len() != src1.grid1()?.len() || enc2.grid_len() != src2.grid1()?.len() {
            return Err(Error::InvalidArgument("encoder/source length mismatch".into()));
        }
        let cond12 = problem.joint.conditional_given_first()?;
        let cond21 = problem.joint.conditional_given_second()?.t().to_owned();
        Ok(DistributedSystem {
            problem,
            y_grids: [y1_grid, y2_grid],
            encs: [enc1, enc2],
            srcs: [src1, src2],
            conds: [cond12, cond21],
            kernels: [None, None],
            decoder: None,
            routes: [None, None],
        })
    }

    pub fn problem(&self) -> &DistributedProblem {
        &self.problem
    }

    pub fn y_grid(&self, i: usize) -> &Grid {
        &self.y_grids[i]
    }

    pub fn source(&self, i: usize) -> &DiscretizedSource {
        &self.srcs[i]
    }

    pub fn encoder(&self, i: usize) -> &PiecewiseEncoder {
        &self.encs[i]
    }

    pub fn decoder(&self) -> Result<&DistributedDecoder> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidState("decoder not built yet".into()))
    }

    pub fn set_encoder(&mut self, i: usize, enc: PiecewiseEncoder) -> Result<()> {
        if enc.grid_len() != self.srcs[i].grid1()?.len() {
            return Err(Error::InvalidArgument("encoder/source length mismatch".into()));
        }
        self.encs[i] = enc;
        self.kernels[i] = None;
        self.routes[1 - i] = None;
        Ok(())
    }

    fn ensure_kernel(&mut self, i: usize) -> Result<()> {
        if self.kernels[i].is_none() {
            let gx = self.srcs[i].grid1()?;
            self.kernels[i] = Some(channel_kernel(
                &self.encs[i],
                gx,
                self.problem.noise(i),
                &self.y_grids[i],
            )?);
        }
        Ok(())
    }

    pub fn rebuild_decoder(&mut self) -> Result<()> {
        self.ensure_kernel(0)?;
        self.ensure_kernel(1)?;
        let objective = self.problem.objective.clone();
        let target = match &objective {
            Objective::Reconstruction => DecoderTarget::Reconstruction,
            Objective::Function(g) => DecoderTarget::Function(g.as_ref()),
        };
        let dec = decoder_from_kernels_distributed(
            self.kernels[0].as_ref().unwrap(),
            self.kernels[1].as_ref().unwrap(),
            &self.problem.joint,
            &self.y_grids[0],
            &self.y_grids[1],
            &target,
        )?;
        self.decoder = Some(dec);
        self.routes = [None, None];
        Ok(())
    }

    fn ensure_route(&mut self, i: usize) -> Result<()> {
        if self.routes[i].is_none() {
            let other = 1 - i;
            self.ensure_kernel(other)?;
            let dec = self
                .decoder
                .as_ref()
                .ok_or_else(|| Error::InvalidState("decoder not built yet".into()))?;
            let r = route_cost_tables(
                &self.problem,
                dec,
                self.kernels[other].as_ref().unwrap(),
                &self.conds[i],
                i,
            )?;
            self.routes[i] = Some(r);
        }
        Ok(())
    }
}

/// Folds the decoder and the other encoder's channel kernel into route
/// i's cost tables. `cond` is f(x_other | x_i), shape |X_i| × |X_other|.
pub(crate) fn route_cost_tables(
    problem: &DistributedProblem,
    dec: &DistributedDecoder,
    k_other: &Array2<f64>,
    cond: &Array2<f64>,
    i: usize,
) -> Result<RouteTables> {
    {
        let (gx1, gx2) = problem.joint.grids2()?;
        let (own_pts, other_pts) = if i == 0 {
            (gx1.points(), gx2.points())
        } else {
            (gx2.points(), gx1.points())
        };

        // Collapses a |Y_i| × |X_other| table over the other source given
        // our own point, with an optional per-(own, other) scaling.
        let project = |p: &Array2<f64>, c: &Array2<f64>| p.dot(&c.t());
        // Averages a decoder table against the other kernel, yielding a
        // |Y_i| × |X_other| table. Route 0 holds y1 on rows already;
        // route 1 needs the transpose.
        let fold = |v: &Array2<f64>| -> Array2<f64> {
            if i == 0 {
                v.dot(k_other)
            } else {
                v.t().dot(k_other)
            }
        };

        let comps = match (&problem.objective, dec) {
            (Objective::Reconstruction, DistributedDecoder::Reconstruction { x1, x2 }) => {
                let (v_own, v_other, w_own, w_other) = if i == 0 {
                    (x1.values(), x2.values(), 1.0, problem.eta)
                } else {
                    (x2.values(), x1.values(), problem.eta, 1.0)
                };
                // own-source error: x_i² − 2x_i·E{ŵ_i} + E{ŵ_i²}
                let a = fold(v_own);
                let b = fold(&v_own.mapv(|e| e * e));
                let mut u_own = project(&b, cond);
                let ga = project(&a, cond);
                for (idx, &x) in own_pts.iter().enumerate() {
                    for m in 0..u_own.nrows() {
                        u_own[(m, idx)] -= 2.0 * x * ga[(m, idx)];
                    }
                }
                let own = Component {
                    weight: w_own,
                    consts: own_pts.iter().map(|&x| x * x).collect(),
                    u: u_own,
                };
                // other-source error: E{x_o²|x_i} − 2E{x_o·ŵ_o} + E{ŵ_o²}
                let c = fold(v_other);
                let d = fold(&v_other.mapv(|e| e * e));
                let cond_x = scale_cols(cond, other_pts);
                let mut u_oth = project(&d, cond);
                let gcx = project(&c, &cond_x);
                u_oth.iter_mut().zip(gcx.iter()).for_each(|(a, b)| *a -= 2.0 * b);
                let consts_oth: Vec<f64> = (0..own_pts.len())
                    .map(|idx| {
                        cond.row(idx)
                            .iter()
                            .zip(other_pts)
                            .map(|(f, &x)| f * x * x)
                            .sum()
                    })
                    .collect();
                let oth = Component { weight: w_other, consts: consts_oth, u: u_oth };
                vec![own, oth]
            }
            (Objective::Function(gamma), DistributedDecoder::Function(t)) => {
                // (γ − ŵ)² = γ² − 2γ·ŵ + ŵ², with γ = γ(x1, x2) collapsed
                // against the conditional of the other source.
                let pw = fold(t.values());
                let pw2 = fold(&t.values().mapv(|e| e * e));
                // gm[(idx, j)] = γ at (own point idx, other point j)
                let n_own = own_pts.len();
                let n_oth = other_pts.len();
                let mut gm = Array2::zeros((n_own, n_oth));
                for (idx, &xo) in own_pts.iter().enumerate() {
                    for (j, &xt) in other_pts.iter().enumerate() {
                        gm[(idx, j)] = if i == 0 { gamma(xo, xt) } else { gamma(xt, xo) };
                    }
                }
                let cond_g = cond * &gm;
                let mut u = project(&pw2, cond);
                let cross = project(&pw, &cond_g);
                u.iter_mut().zip(cross.iter()).for_each(|(a, b)| *a -= 2.0 * b);
                let consts: Vec<f64> = (0..n_own)
                    .map(|idx| {
                        cond.row(idx)
                            .iter()
                            .zip(gm.row(idx))
                            .map(|(f, g)| f * g * g)
                            .sum()
                    })
                    .collect();
                vec![Component { weight: 1.0, consts, u }]
            }
            _ => {
                return Err(Error::InvalidState(
                    "decoder does not match the problem objective".into(),
                ))
            }
        };
        Ok(RouteTables { comps })
    }
}

impl DistributedSystem {
    /// J_k(x_i) for an arbitrary local model of encoder `i` against the
    /// cached decoder and the other encoder's current kernel.
    pub fn cost_row(&mut self, i: usize, model: LocalAffineModel) -> Result<Vec<f64>> {
        self.ensure_route(i)?;
        let route = self.routes[i].as_ref().unwrap();
        let gx = self.srcs[i].grid1()?;
        let lambda = self.problem.lambda(i);
        let noise = self.problem.noise(i);
        Ok(gx
            .points()
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let g = model.eval(x);
                route.distortion_at(idx, g, &self.y_grids[i], noise) + lambda * g * g
            })
            .collect())
    }

    /// The K × |X_i| matrix of per-model pointwise costs for encoder `i`.
    pub fn cost_matrix(&mut self, i: usize) -> Result<Array2<f64>> {
        self.ensure_route(i)?;
        let models = self.encs[i].models().to_vec();
        let n = self.srcs[i].grid1()?.len();
        let mut j = Array2::zeros((models.len(), n));
        for (k, m) in models.into_iter().enumerate() {
            let row = self.cost_row(i, m)?;
            for (idx, v) in row.into_iter().enumerate() {
                j[(k, idx)] = v;
            }
        }
        Ok(j)
    }

    /// Unweighted distortion of each component (own-source error first
    /// for reconstruction; the single function error otherwise), averaged
    /// through route 0.
    pub fn component_distortions(&mut self) -> Result<Vec<f64>> {
        self.ensure_route(0)?;
        let route = self.routes[0].as_ref().unwrap();
        let gx = self.srcs[0].grid1()?;
        let fx = self.srcs[0].weights1()?;
        let noise = self.problem.noise(0);
        let mut out = vec![0.0; route.comps.len()];
        for (idx, (&x, &f)) in gx.points().iter().zip(fx).enumerate() {
            for (k, m) in self.encs[0].models().iter().enumerate() {
                let p = self.encs[0].assoc()[(k, idx)];
                if p == 0.0 {
                    continue;
                }
                let g = m.eval(x);
                for (c, acc) in route.comps.iter().zip(&mut out) {
                    *acc += f
                        * p
                        * (c.consts[idx] + noise_average(&c.u, idx, &self.y_grids[0], noise, g));
                }
            }
        }
        Ok(out)
    }

    pub fn breakdown(&mut self, t: f64, h0: f64) -> Result<CostBreakdown> {
        let comps = self.component_distortions()?;
        let weights: Vec<f64> = {
            self.ensure_route(0)?;
            self.routes[0]
                .as_ref()
                .unwrap()
                .comps
                .iter()
                .map(|c| c.weight)
                .collect()
        };
        let distortion: f64 = comps.iter().zip(&weights).map(|(d, w)| d * w).sum();
        let p1 = encoder_power(&self.encs[0], &self.srcs[0])?;
        let p2 = encoder_power(&self.encs[1], &self.srcs[1])?;
        let entropy = conditional_entropy(&self.encs[0], &self.srcs[0])?
            + conditional_entropy(&self.encs[1], &self.srcs[1])?;
        Ok(CostBreakdown::new(
            distortion,
            vec![p1, p2],
            &[self.problem.lambda1, self.problem.lambda2],
            &self.problem.power_targets,
            entropy,
            t,
            h0,
        ))
    }
}

/// Cost accounting for explicitly supplied encoders against a freshly
/// built MMSE decoder (convenience wrapper used by tests and baselines).
pub fn lagrangian_distributed(
    problem: &DistributedProblem,
    enc1: &PiecewiseEncoder,
    enc2: &PiecewiseEncoder,
    y1_grid: &Grid,
    y2_grid: &Grid,
    t: f64,
    h0: f64,
) -> Result<CostBreakdown> {
    let mut sys = DistributedSystem::new(
        problem.clone(),
        enc1.clone(),
        enc2.clone(),
        y1_grid.clone(),
        y2_grid.clone(),
    )?;
    sys.rebuild_decoder()?;
    sys.breakdown(t, h0)
}

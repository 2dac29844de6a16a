//! Discretized probability models: uniform quadrature grids with
//! renormalized probability weights for sources, joint sources and
//! additive channel noise.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A uniform one-dimensional sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    spacing: f64,
}

impl Grid {
    /// Builds `len` points starting at `start` with uniform `spacing`.
    pub fn uniform(start: f64, spacing: f64, len: usize) -> Result<Grid> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid_parameter("spacing", "must be positive"));
        }
        if len < 3 {
            return Err(Error::invalid_parameter("len", "grid needs at least 3 points"));
        }
        let points = (0..len).map(|i| start + spacing * i as f64).collect();
        Ok(Grid { points, spacing })
    }

    /// Smallest uniform grid with the given spacing covering `[lo, hi]`.
    pub fn covering(lo: f64, hi: f64, spacing: f64) -> Result<Grid> {
        if !(hi > lo) {
            return Err(Error::invalid_parameter("lo/hi", "need lo < hi"));
        }
        let n = ((hi - lo) / spacing).round() as usize + 1;
        Grid::uniform(lo, spacing, n.max(3))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Interval index and fractional offset for linear interpolation,
    /// clamped to the grid ends.
    #[inline]
    pub fn locate(&self, q: f64) -> (usize, f64) {
        let n = self.points.len();
        let t = (q - self.points[0]) / self.spacing;
        if t <= 0.0 {
            (0, 0.0)
        } else if t >= (n - 1) as f64 {
            (n - 2, 1.0)
        } else {
            let i = t as usize;
            (i.min(n - 2), t - i as f64)
        }
    }

    /// Index of the gridpoint closest to `q` (clamped).
    #[inline]
    pub fn nearest(&self, q: f64) -> usize {
        let t = ((q - self.points[0]) / self.spacing).round();
        (t.max(0.0) as usize).min(self.points.len() - 1)
    }
}

/// Compensated (Kahan) summation; keeps quadrature results independent of
/// how callers might batch the terms.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A source density sampled on a bounded uniform grid, weights
/// renormalized to sum to one.
#[derive(Debug, Clone)]
pub enum DiscretizedSource {
    Dim1 {
        grid: Grid,
        weights: Vec<f64>,
    },
    Dim2 {
        grid_x: Grid,
        grid_z: Grid,
        /// weights[(i, j)] = P{X = x_i, Z = z_j}
        weights: Array2<f64>,
    },
}

impl DiscretizedSource {
    pub fn dim(&self) -> usize {
        match self {
            DiscretizedSource::Dim1 { .. } => 1,
            DiscretizedSource::Dim2 { .. } => 2,
        }
    }

    fn normalize_in_place(&mut self) -> Result<()> {
        let total = match self {
            DiscretizedSource::Dim1 { weights, .. } => kahan_sum(weights.iter().copied()),
            DiscretizedSource::Dim2 { weights, .. } => kahan_sum(weights.iter().copied()),
        };
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight mass {total} cannot be normalized"
            )));
        }
        match self {
            DiscretizedSource::Dim1 { weights, .. } => {
                weights.iter_mut().for_each(|w| *w /= total)
            }
            DiscretizedSource::Dim2 { weights, .. } => {
                weights.iter_mut().for_each(|w| *w /= total)
            }
        }
        Ok(())
    }

    /// Quadrature expectation of a pointwise integrand. The closure
    /// receives the coordinates of each gridpoint (one or two values).
    pub fn expect(&self, integrand: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let check = |val: f64, point: f64| -> Result<f64> {
            if val.is_finite() {
                Ok(val)
            } else {
                Err(Error::NumericalDomain {
                    point,
                    reason: format!("integrand evaluated to {val}"),
                })
            }
        };
        match self {
            DiscretizedSource::Dim1 { grid, weights } => {
                let mut terms = Vec::with_capacity(weights.len());
                for (x, w) in grid.points().iter().zip(weights) {
                    terms.push(w * check(integrand(&[*x]), *x)?);
                }
                Ok(kahan_sum(terms.into_iter()))
            }
            DiscretizedSource::Dim2 {
                grid_x,
                grid_z,
                weights,
            } => {
                let mut terms = Vec::with_capacity(weights.len());
                for (i, x) in grid_x.points().iter().enumerate() {
                    for (j, z) in grid_z.points().iter().enumerate() {
                        terms.push(weights[(i, j)] * check(integrand(&[*x, *z]), *x)?);
                    }
                }
                Ok(kahan_sum(terms.into_iter()))
            }
        }
    }

    pub fn grid1(&self) -> Result<&Grid> {
        match self {
            DiscretizedSource::Dim1 { grid, .. } => Ok(grid),
            _ => Err(Error::InvalidArgument("expected 1-D source".into())),
        }
    }

    pub fn weights1(&self) -> Result<&[f64]> {
        match self {
            DiscretizedSource::Dim1 { weights, .. } => Ok(weights),
            _ => Err(Error::InvalidArgument("expected 1-D source".into())),
        }
    }

    pub fn grids2(&self) -> Result<(&Grid, &Grid)> {
        match self {
            DiscretizedSource::Dim2 { grid_x, grid_z, .. } => Ok((grid_x, grid_z)),
            _ => Err(Error::InvalidArgument("expected 2-D source".into())),
        }
    }

    pub fn weights2(&self) -> Result<&Array2<f64>> {
        match self {
            DiscretizedSource::Dim2 { weights, .. } => Ok(weights),
            _ => Err(Error::InvalidArgument("expected 2-D source".into())),
        }
    }

    /// Marginal over the first coordinate of a 2-D source.
    pub fn marginal_first(&self) -> Result<DiscretizedSource> {
        let (gx, _) = self.grids2()?;
        let w = self.weights2()?;
        let weights = (0..gx.len())
            .map(|i| kahan_sum(w.row(i).iter().copied()))
            .collect();
        Ok(DiscretizedSource::Dim1 {
            grid: gx.clone(),
            weights,
        })
    }

    /// Marginal over the second coordinate of a 2-D source.
    pub fn marginal_second(&self) -> Result<DiscretizedSource> {
        let (_, gz) = self.grids2()?;
        let w = self.weights2()?;
        let weights = (0..gz.len())
            .map(|j| kahan_sum(w.column(j).iter().copied()))
            .collect();
        Ok(DiscretizedSource::Dim1 {
            grid: gz.clone(),
            weights,
        })
    }

    /// Row-conditional matrix: row i holds P{second = z_j | first = x_i}.
    /// Rows whose marginal mass is below 1e-300 are unreachable and left
    /// all-zero.
    pub fn conditional_given_first(&self) -> Result<Array2<f64>> {
        let w = self.weights2()?;
        let mut cond = w.clone();
        for mut row in cond.rows_mut() {
            let mass = kahan_sum(row.iter().copied());
            if mass > 1e-300 {
                row.iter_mut().for_each(|v| *v /= mass);
            } else {
                row.fill(0.0);
            }
        }
        Ok(cond)
    }

    /// P{first = x_i | second = z_j} as a matrix with the same layout as
    /// the joint weights (columns normalized).
    pub fn conditional_given_second(&self) -> Result<Array2<f64>> {
        let w = self.weights2()?;
        let mut cond = w.clone();
        for mut col in cond.columns_mut() {
            let mass = kahan_sum(col.iter().copied());
            if mass > 1e-300 {
                col.iter_mut().for_each(|v| *v /= mass);
            } else {
                col.fill(0.0);
            }
        }
        Ok(cond)
    }

    /// E{first | second = z_j} for every column; unreachable columns fall
    /// back to the unconditional mean.
    pub fn mean_first_given_second(&self) -> Result<Vec<f64>> {
        let (gx, gz) = self.grids2()?;
        let w = self.weights2()?;
        let prior = self.marginal_first()?.expect(|p| p[0])?;
        let mut out = Vec::with_capacity(gz.len());
        for j in 0..gz.len() {
            let mass = kahan_sum(w.column(j).iter().copied());
            if mass > 1e-300 {
                let m = kahan_sum(
                    w.column(j)
                        .iter()
                        .zip(gx.points())
                        .map(|(wi, x)| wi * x),
                );
                out.push(m / mass);
            } else {
                out.push(prior);
            }
        }
        Ok(out)
    }
}

/// Additive noise model: zero-mean density on a bounded grid.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub grid: Grid,
    pub weights: Vec<f64>,
    pub variance: f64,
}

fn gaussian_weights(points: &[f64], mean: f64, variance: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * variance);
    let raw: Vec<f64> = points
        .iter()
        .map(|x| (-(x - mean) * (x - mean) * inv).exp())
        .collect();
    let total = kahan_sum(raw.iter().copied());
    raw.into_iter().map(|w| w / total).collect()
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        Err(Error::invalid_parameter(name, format!("must be positive, got {value}")))
    } else {
        Ok(())
    }
}

/// Gaussian source truncated to `mean ± support_sigmas·σ`, renormalized.
pub fn build_gaussian_source(
    mean: f64,
    variance: f64,
    spacing: f64,
    support_sigmas: f64,
) -> Result<DiscretizedSource> {
    check_positive("variance", variance)?;
    check_positive("spacing", spacing)?;
    check_positive("support_sigmas", support_sigmas)?;
    let sigma = variance.sqrt();
    let grid = Grid::covering(mean - support_sigmas * sigma, mean + support_sigmas * sigma, spacing)?;
    let weights = gaussian_weights(grid.points(), mean, variance);
    Ok(DiscretizedSource::Dim1 { grid, weights })
}

/// Zero-mean bivariate Gaussian with covariance σ²[[1, ρ], [ρ, 1]] on the
/// product grid.
pub fn build_joint_gaussian(
    correlation: f64,
    variance: f64,
    spacing: f64,
    support_sigmas: f64,
) -> Result<DiscretizedSource> {
    if !(correlation.abs() < 1.0) {
        return Err(Error::invalid_parameter(
            "correlation",
            format!("need |rho| < 1, got {correlation}"),
        ));
    }
    check_positive("variance", variance)?;
    check_positive("spacing", spacing)?;
    check_positive("support_sigmas", support_sigmas)?;
    let sigma = variance.sqrt();
    let grid = Grid::covering(-support_sigmas * sigma, support_sigmas * sigma, spacing)?;
    let n = grid.len();
    let det = variance * variance * (1.0 - correlation * correlation);
    // inverse covariance entries
    let a = variance / det;
    let b = -correlation * variance / det;
    let mut weights = Array2::zeros((n, n));
    for (i, &x) in grid.points().iter().enumerate() {
        for (j, &z) in grid.points().iter().enumerate() {
            let q = a * x * x + 2.0 * b * x * z + a * z * z;
            weights[(i, j)] = (-0.5 * q).exp();
        }
    }
    let mut src = DiscretizedSource::Dim2 {
        grid_x: grid.clone(),
        grid_z: grid,
        weights,
    };
    src.normalize_in_place()?;
    Ok(src)
}

/// Mixture of bivariate Gaussians sharing one covariance; the grid covers
/// every center ± support·σ on both axes.
pub fn build_gaussian_mixture(
    centers: &[[f64; 2]],
    mix_weights: &[f64],
    covariance: [[f64; 2]; 2],
    spacing: f64,
    support_sigmas: f64,
) -> Result<DiscretizedSource> {
    if centers.is_empty() || centers.len() != mix_weights.len() {
        return Err(Error::invalid_parameter(
            "centers",
            "need equally many centers and mixture weights",
        ));
    }
    if mix_weights.iter().any(|w| *w < 0.0) {
        return Err(Error::invalid_parameter("mix_weights", "must be nonnegative"));
    }
    let total: f64 = mix_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_parameter("mix_weights", "must sum to 1"));
    }
    check_positive("spacing", spacing)?;
    check_positive("support_sigmas", support_sigmas)?;
    let det = covariance[0][0] * covariance[1][1] - covariance[0][1] * covariance[1][0];
    if !(det > 0.0) || !(covariance[0][0] > 0.0) {
        return Err(Error::invalid_parameter(
            "covariance",
            "must be positive definite",
        ));
    }
    let sx = covariance[0][0].sqrt();
    let sz = covariance[1][1].sqrt();
    let lo_x = centers.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min) - support_sigmas * sx;
    let hi_x = centers.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max) + support_sigmas * sx;
    let lo_z = centers.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min) - support_sigmas * sz;
    let hi_z = centers.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max) + support_sigmas * sz;
    let grid_x = Grid::covering(lo_x, hi_x, spacing)?;
    let grid_z = Grid::covering(lo_z, hi_z, spacing)?;
    // inverse covariance
    let ia = covariance[1][1] / det;
    let ib = -covariance[0][1] / det;
    let ic = covariance[0][0] / det;
    let mut weights = Array2::zeros((grid_x.len(), grid_z.len()));
    for (i, &x) in grid_x.points().iter().enumerate() {
        for (j, &z) in grid_z.points().iter().enumerate() {
            let mut w = 0.0;
            for (c, mw) in centers.iter().zip(mix_weights) {
                let dx = x - c[0];
                let dz = z - c[1];
                let q = ia * dx * dx + 2.0 * ib * dx * dz + ic * dz * dz;
                w += mw * (-0.5 * q).exp();
            }
            weights[(i, j)] = w;
        }
    }
    let mut src = DiscretizedSource::Dim2 {
        grid_x,
        grid_z,
        weights,
    };
    src.normalize_in_place()?;
    Ok(src)
}

/// Zero-mean Gaussian noise model.
pub fn build_noise(variance: f64, spacing: f64, support_sigmas: f64) -> Result<NoiseModel> {
    let src = build_gaussian_source(0.0, variance, spacing, support_sigmas)?;
    match src {
        DiscretizedSource::Dim1 { grid, weights } => Ok(NoiseModel {
            grid,
            weights,
            variance,
        }),
        _ => unreachable!(),
    }
}

/// Free-function form of [`DiscretizedSource::expect`].
pub fn expect(source: &DiscretizedSource, integrand: impl Fn(&[f64]) -> f64) -> Result<f64> {
    source.expect(integrand)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_source_reference_grid() {
        let s = build_gaussian_source(0.0, 1.0, 0.02, 5.0).unwrap();
        let g = s.grid1().unwrap();
        assert_eq!(g.len(), 501);
        assert!((g.first() + 5.0).abs() < 1e-12);
        assert!((g.last() - 5.0).abs() < 1e-12);
        let total: f64 = s.weights1().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_source_three_point_weights() {
        let s = build_gaussian_source(0.0, 1.0, 1.0, 1.0).unwrap();
        let w = s.weights1().unwrap();
        assert_eq!(w.len(), 3);
        let expected = 1.0 / (1.0 + 2.0 * (-0.5f64).exp());
        assert!((w[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn gaussian_source_translation_invariance() {
        let a = build_gaussian_source(0.0, 2.0, 0.1, 4.0).unwrap();
        let b = build_gaussian_source(1.5, 2.0, 0.1, 4.0).unwrap();
        for (wa, wb) in a.weights1().unwrap().iter().zip(b.weights1().unwrap()) {
            assert!((wa - wb).abs() < 1e-12);
        }
        for (pa, pb) in a.grid1().unwrap().points().iter().zip(b.grid1().unwrap().points()) {
            assert!((pa + 1.5 - pb).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_source_rejects_bad_params() {
        assert!(build_gaussian_source(0.0, -1.0, 0.1, 5.0).is_err());
        assert!(build_gaussian_source(0.0, 1.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn joint_gaussian_factorizes_at_zero_correlation() {
        let j = build_joint_gaussian(0.0, 1.0, 0.5, 3.0).unwrap();
        let mx = j.marginal_first().unwrap();
        let mz = j.marginal_second().unwrap();
        let w = j.weights2().unwrap();
        let wx = mx.weights1().unwrap();
        let wz = mz.weights1().unwrap();
        for i in 0..wx.len() {
            for k in 0..wz.len() {
                assert!((w[(i, k)] - wx[i] * wz[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_gaussian_conditional_variance() {
        let rho: f64 = 0.99;
        let j = build_joint_gaussian(rho, 1.0, 0.02, 5.0).unwrap();
        let (gx, gz) = j.grids2().unwrap();
        let cond = j.conditional_given_second().unwrap();
        // conditional variance of X given Z at the central z column
        let jmid = gz.len() / 2;
        let col = cond.column(jmid);
        let mean: f64 = col.iter().zip(gx.points()).map(|(w, x)| w * x).sum();
        let var: f64 = col
            .iter()
            .zip(gx.points())
            .map(|(w, x)| w * (x - mean) * (x - mean))
            .sum();
        let expected = 1.0 - rho * rho;
        assert!(
            (var - expected).abs() / expected < 0.01,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn joint_gaussian_symmetry_and_errors() {
        let j = build_joint_gaussian(0.7, 1.0, 0.25, 3.0).unwrap();
        let w = j.weights2().unwrap();
        for i in 0..w.nrows() {
            for k in 0..w.ncols() {
                assert!((w[(i, k)] - w[(k, i)]).abs() < 1e-15);
            }
        }
        assert!(build_joint_gaussian(1.0, 1.0, 0.25, 3.0).is_err());
    }

    #[test]
    fn mixture_bimodal_modes() {
        let j = build_gaussian_mixture(
            &[[-3.0, -3.0], [3.0, 3.0]],
            &[0.5, 0.5],
            [[1.0, 0.95], [0.95, 1.0]],
            0.05,
            5.0,
        )
        .unwrap();
        let mx = j.marginal_first().unwrap();
        let g = mx.grid1().unwrap().points().to_vec();
        let w = mx.weights1().unwrap();
        // mode on the negative half and positive half, each within one step of ±3
        let (neg_idx, _) = w
            .iter()
            .enumerate()
            .filter(|(i, _)| g[*i] < 0.0)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (pos_idx, _) = w
            .iter()
            .enumerate()
            .filter(|(i, _)| g[*i] > 0.0)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert!((g[neg_idx] + 3.0).abs() <= 0.05 + 1e-12);
        assert!((g[pos_idx] - 3.0).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn mixture_single_component_matches_joint_gaussian() {
        let m = build_gaussian_mixture(
            &[[0.0, 0.0]],
            &[1.0],
            [[1.0, 0.6], [0.6, 1.0]],
            0.25,
            3.0,
        )
        .unwrap();
        let j = build_joint_gaussian(0.6, 1.0, 0.25, 3.0).unwrap();
        let wm = m.weights2().unwrap();
        let wj = j.weights2().unwrap();
        assert_eq!(wm.dim(), wj.dim());
        for (a, b) in wm.iter().zip(wj.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_mirror_symmetry() {
        let j = build_gaussian_mixture(
            &[[-3.0, -3.0], [3.0, 3.0]],
            &[0.5, 0.5],
            [[1.0, 0.95], [0.95, 1.0]],
            0.1,
            5.0,
        )
        .unwrap();
        let w = j.weights2().unwrap();
        let (n, m) = w.dim();
        for i in 0..n {
            for k in 0..m {
                assert!((w[(i, k)] - w[(n - 1 - i, m - 1 - k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_rejects_bad_covariance() {
        assert!(build_gaussian_mixture(
            &[[0.0, 0.0]],
            &[1.0],
            [[1.0, 2.0], [2.0, 1.0]],
            0.1,
            3.0
        )
        .is_err());
    }

    #[test]
    fn noise_model_examples() {
        let n = build_noise(1.0, 0.02, 5.0).unwrap();
        assert_eq!(n.grid.len(), 501);
        let mean: f64 = n.grid.points().iter().zip(&n.weights).map(|(p, w)| p * w).sum();
        let var: f64 = n
            .grid
            .points()
            .iter()
            .zip(&n.weights)
            .map(|(p, w)| w * (p - mean) * (p - mean))
            .sum();
        assert!(mean.abs() < 1e-3);
        assert!((var - 1.0).abs() < 0.01);

        let coarse = build_noise(1.0, 0.5, 5.0).unwrap();
        assert_eq!(coarse.grid.len(), 21);
        let total: f64 = coarse.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);

        let wide = build_noise(4.0, 0.02, 5.0).unwrap();
        assert!((wide.grid.first() + 10.0).abs() < 1e-9);
        assert!((wide.grid.last() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn expect_examples() {
        let s = build_gaussian_source(0.0, 1.0, 0.02, 5.0).unwrap();
        assert!((s.expect(|_| 1.0).unwrap() - 1.0).abs() < 1e-9);
        let second = s.expect(|p| p[0] * p[0]).unwrap();
        assert!((second - 1.0).abs() < 0.01);
        assert!(s.expect(|p| p[0]).unwrap().abs() < 1e-9);
        assert!(s.expect(|p| (1.0 / p[0]).max(f64::NAN)).is_err());
    }

    #[test]
    fn expect_is_linear() {
        let s = build_gaussian_source(0.3, 2.0, 0.05, 4.0).unwrap();
        let f = |x: f64| x * x;
        let g = |x: f64| (x * 1.3).sin();
        let lhs = s.expect(|p| 2.5 * f(p[0]) + 0.75 * g(p[0])).unwrap();
        let rhs = 2.5 * s.expect(|p| f(p[0])).unwrap() + 0.75 * s.expect(|p| g(p[0])).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn quadrature_convergence_smoke() {
        let a = build_gaussian_source(0.0, 1.0, 0.02, 5.0)
            .unwrap()
            .expect(|p| p[0] * p[0])
            .unwrap();
        let b = build_gaussian_source(0.0, 1.0, 0.01, 5.0)
            .unwrap()
            .expect(|p| p[0] * p[0])
            .unwrap();
        assert!((a - b).abs() / b < 0.001);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // locate() always returns an in-bounds interval with a
            // fraction in [0, 1], and interpolating it back stays on
            // the queried point whenever the query is inside the grid.
            #[test]
            fn grid_locate_is_a_clamped_inverse(
                first in -50.0f64..50.0,
                spacing in 0.01f64..2.0,
                len in 3usize..200,
                q in -200.0f64..200.0,
            ) {
                let g = Grid::uniform(first, spacing, len).unwrap();
                let (m, t) = g.locate(q);
                prop_assert!(m + 1 < g.len());
                prop_assert!((0.0..=1.0).contains(&t));
                let rebuilt = (1.0 - t) * g.points()[m] + t * g.points()[m + 1];
                let clamped = q.clamp(g.first(), g.last());
                prop_assert!((rebuilt - clamped).abs() <= 1e-9 * (1.0 + clamped.abs()));
            }

            // quadrature weights of any Gaussian source form a
            // probability vector
            #[test]
            fn gaussian_source_weights_normalized(
                mean in -5.0f64..5.0,
                var in 0.1f64..4.0,
                spacing in 0.02f64..0.2,
            ) {
                let s = build_gaussian_source(mean, var, spacing, 4.0).unwrap();
                let w = s.weights1().unwrap();
                prop_assert!(w.iter().all(|p| *p >= 0.0));
                let total: f64 = w.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}

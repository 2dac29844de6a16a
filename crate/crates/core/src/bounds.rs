//! Asymptotic performance references: AWGN capacity, the side-information
//! distortion bound, and the quadratic-Gaussian two-encoder rate region.

use crate::error::{Error, Result};

/// Distortion lower bound together with the capacities it came from.
#[derive(Debug, Clone)]
pub struct OptaResult {
    pub capacities: Vec<f64>,
    pub distortion_bound: f64,
    pub per_source: Vec<f64>,
}

/// C(P) = ½·log2(1 + P/σ_N²) bits per use.
pub fn awgn_capacity(power: f64, noise_variance: f64) -> Result<f64> {
    if power < 0.0 {
        return Err(Error::invalid_parameter("power", "must be nonnegative"));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::invalid_parameter("noise_variance", "must be positive"));
    }
    Ok(0.5 * (1.0 + power / noise_variance).log2())
}

/// Side-information bound D = (1 − ρ²)σ² / (1 + P/σ_N²), from equating the
/// Wyner-Ziv rate-distortion function with channel capacity.
pub fn opta_side_info(
    rho: f64,
    sigma_x2: f64,
    power: f64,
    noise_variance: f64,
) -> Result<OptaResult> {
    if rho.abs() > 1.0 {
        return Err(Error::invalid_parameter("rho", "need |rho| <= 1"));
    }
    let c = awgn_capacity(power, noise_variance)?;
    let d = (1.0 - rho * rho) * sigma_x2 / (1.0 + power / noise_variance);
    Ok(OptaResult {
        capacities: vec![c],
        distortion_bound: d,
        per_source: vec![d],
    })
}

/// Wyner-Ziv rate-distortion function R(D) = ½·log2⁺((1 − ρ²)σ²/D) in bits.
pub fn wyner_ziv_rate(rho: f64, sigma_x2: f64, d: f64) -> f64 {
    0.5 * log2_plus((1.0 - rho * rho) * sigma_x2 / d)
}

#[inline]
fn log2_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.log2()
    } else {
        0.0
    }
}

/// Membership test for the complete rate region of the two-encoder
/// quadratic-Gaussian problem (unit-variance sources, correlation ρ).
/// Distortions are variance ratios; rates in bits.
pub fn wagner_region_contains(r1: f64, r2: f64, d1: f64, d2: f64, rho: f64) -> bool {
    if !(d1 > 0.0 && d2 > 0.0) || r1 < 0.0 || r2 < 0.0 || rho.abs() >= 1.0 {
        return false;
    }
    let r2b = 2.0f64.powf(-2.0 * r2);
    let r1b = 2.0f64.powf(-2.0 * r1);
    let one_m_r2 = 1.0 - rho * rho;
    // R1 >= ½ log⁺[ (1 − ρ² + ρ²·2^{−2R2}) / D1 ], and symmetrically.
    let need1 = 0.5 * log2_plus((one_m_r2 + rho * rho * r2b) / d1);
    let need2 = 0.5 * log2_plus((one_m_r2 + rho * rho * r1b) / d2);
    if r1 < need1 - 1e-12 || r2 < need2 - 1e-12 {
        return false;
    }
    let beta = 1.0 + (1.0 + 4.0 * rho * rho * d1 * d2 / (one_m_r2 * one_m_r2)).sqrt();
    let sum_need = 0.5 * log2_plus(one_m_r2 * beta / (2.0 * d1 * d2));
    r1 + r2 >= sum_need - 1e-12
}

/// Minimizes D1 + η·D2 over the rate region at rates C(P1), C(P2).
/// The feasible set is convex, so a golden-section search over D1 with
/// the minimal feasible D2 found by bisection suffices.
pub fn opta_distributed(
    power1: f64,
    power2: f64,
    noise_var1: f64,
    noise_var2: f64,
    rho: f64,
    eta: f64,
) -> Result<OptaResult> {
    if !(eta > 0.0) {
        return Err(Error::invalid_parameter("eta", "must be positive"));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::invalid_parameter("rho", "need |rho| < 1"));
    }
    let c1 = awgn_capacity(power1, noise_var1)?;
    let c2 = awgn_capacity(power2, noise_var2)?;

    // Smallest feasible D2 at a given D1 (the boundary is monotone in
    // each distortion at fixed rates).
    let min_d2 = |d1: f64| -> Option<f64> {
        if !wagner_region_contains(c1, c2, d1, 1.0, rho) {
            return None;
        }
        let mut lo = 1e-15;
        let mut hi = 1.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if wagner_region_contains(c1, c2, d1, mid, rho) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    };

    // Smallest feasible D1 overall bounds the search interval.
    let mut lo = {
        let (mut a, mut b) = (1e-15, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if wagner_region_contains(c1, c2, mid, 1.0, rho) {
                b = mid;
            } else {
                a = mid;
            }
        }
        b
    };
    let mut hi = 1.0;

    let objective = |d1: f64| -> f64 {
        match min_d2(d1) {
            Some(d2) => d1 + eta * d2,
            None => f64::INFINITY,
        }
    };

    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while hi - lo > 1e-12 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    let d1 = 0.5 * (lo + hi);
    let d2 = min_d2(d1).unwrap_or(1.0);
    Ok(OptaResult {
        capacities: vec![c1, c2],
        distortion_bound: d1 + eta * d2,
        per_source: vec![d1, d2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_examples() {
        assert!((awgn_capacity(3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(awgn_capacity(0.0, 1.0).unwrap(), 0.0);
        assert!((awgn_capacity(15.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(awgn_capacity(-1.0, 1.0).is_err());
    }

    #[test]
    fn side_info_examples() {
        let r = opta_side_info(0.0, 1.0, 3.0, 1.0).unwrap();
        assert!((r.distortion_bound - 0.25).abs() < 1e-15);

        let p = 10f64.powf(1.43);
        let r = opta_side_info(0.99, 1.0, p, 1.0).unwrap();
        let want = (1.0 - 0.99f64 * 0.99) / (1.0 + p);
        assert!((r.distortion_bound - want).abs() < 1e-15);
        // ≈ 31.5 dB SDR at 14.3 dB CSNR
        assert!((-10.0 * r.distortion_bound.log10() - 31.5).abs() < 0.2);

        let r = opta_side_info(1.0, 1.0, 3.0, 1.0).unwrap();
        assert_eq!(r.distortion_bound, 0.0);
    }

    #[test]
    fn side_info_matches_point_to_point_at_zero_rho() {
        for (p, nv) in [(3.0, 1.0), (10.0, 0.5), (100.0, 2.0)] {
            let r = opta_side_info(0.0, 1.0, p, nv).unwrap();
            let want = nv / (p + nv);
            assert!((r.distortion_bound - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn wagner_examples() {
        // rho = 0 decouples: R_i >= ½ log⁺(1/D_i)
        assert!(wagner_region_contains(1.0, 1.0, 0.25, 0.25, 0.0));
        assert!(!wagner_region_contains(1.0, 1.0, 0.24, 0.25, 0.0));
        assert!(wagner_region_contains(0.0, 0.0, 1.0, 1.0, 0.5));
        assert!(wagner_region_contains(1.7, 1.0, 0.25, 0.25, 0.0));
    }

    #[test]
    fn wagner_rate_monotone() {
        for rho in [0.0, 0.5, 0.9] {
            assert!(wagner_region_contains(1.0, 1.2, 0.3, 0.3, rho));
            assert!(wagner_region_contains(1.5, 1.2, 0.3, 0.3, rho));
        }
    }

    #[test]
    fn opta_distributed_decouples_at_zero_rho() {
        let r = opta_distributed(3.0, 15.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let d1 = 1.0 / 4.0;
        let d2 = 1.0 / 16.0;
        assert!((r.per_source[0] - d1).abs() < 1e-9);
        assert!((r.per_source[1] - d2).abs() < 1e-9);
        assert!((r.distortion_bound - (d1 + d2)).abs() < 1e-9);
    }

    #[test]
    fn opta_distributed_zero_power_is_prior() {
        let r = opta_distributed(0.0, 0.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert!((r.per_source[0] - 1.0).abs() < 1e-9);
        assert!((r.per_source[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn opta_distributed_symmetric_under_swap() {
        let a = opta_distributed(5.0, 20.0, 1.0, 1.0, 0.9, 1.0).unwrap();
        let b = opta_distributed(20.0, 5.0, 1.0, 1.0, 0.9, 1.0).unwrap();
        assert!((a.distortion_bound - b.distortion_bound).abs() < 1e-9);
    }

    #[test]
    fn opta_distributed_not_undercut_by_grid_scan() {
        let (p1, p2, rho) = (30.0, 60.0, 0.99);
        let r = opta_distributed(p1, p2, 1.0, 1.0, rho, 1.0).unwrap();
        let c1 = awgn_capacity(p1, 1.0).unwrap();
        let c2 = awgn_capacity(p2, 1.0).unwrap();
        let n = 200;
        for i in 1..=n {
            for j in 1..=n {
                let d1 = i as f64 / n as f64;
                let d2 = j as f64 / n as f64;
                if wagner_region_contains(c1, c2, d1, d2, rho) {
                    assert!(d1 + d2 >= r.distortion_bound - 1e-9);
                }
            }
        }
    }
}

//! Monte-Carlo cross-validation: samples the continuous source and
//! noise (no grids), encodes by nearest-gridpoint table read, decodes by
//! table interpolation, and reports the empirical distortion ± stderr.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zdsc_core::baselines::Decoders;
use zdsc_core::mapping::DistributedDecoder;
use zdsc_core::prob_model::Grid;

use crate::config::{ExperimentConfig, SourceKind};

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws one (x1, x2) pair from the continuous source density.
fn sample_pair(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let s = &cfg.source;
    let sd = s.variance.sqrt();
    let (mu1, mu2) = match s.kind {
        SourceKind::Gaussian => (0.0, 0.0),
        SourceKind::Mixture => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut c = *s.mixture_centers.last().unwrap();
            for (center, w) in s.mixture_centers.iter().zip(&s.mixture_weights) {
                acc += w;
                if u < acc {
                    c = *center;
                    break;
                }
            }
            (c, c)
        }
    };
    let n1 = standard_normal(rng);
    let n2 = standard_normal(rng);
    let x1 = mu1 + sd * n1;
    let x2 = mu2 + sd * (s.rho * n1 + (1.0 - s.rho * s.rho).sqrt() * n2);
    (x1, x2)
}

fn encode(grid: &Grid, values: &[f64], x: f64) -> f64 {
    values[grid.nearest(x)]
}

pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Empirical distortion of final mappings over `samples` continuous
/// draws. Deterministic given the seed.
pub fn monte_carlo_validate(
    cfg: &ExperimentConfig,
    x_grids: &[Grid],
    values: &[Vec<f64>],
    decoders: &Decoders,
    samples: usize,
    seed: u64,
) -> anyhow::Result<McEstimate> {
    if samples < 10_000 {
        return Err(crate::config::ConfigError("mc.samples: need at least 10000".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd_n: Vec<f64> = cfg.noise_vars.iter().map(|v| v.sqrt()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let (x1, x2) = sample_pair(cfg, &mut rng);
        let err = match decoders {
            Decoders::SideInfo(table) => {
                let y = encode(&x_grids[0], &values[0], x1) + sd_n[0] * standard_normal(&mut rng);
                let xhat = table.lookup(y, x2);
                (xhat - x1) * (xhat - x1)
            }
            Decoders::Distributed(dec) => {
                let y1 = encode(&x_grids[0], &values[0], x1) + sd_n[0] * standard_normal(&mut rng);
                let y2 = encode(&x_grids[1], &values[1], x2) + sd_n[1] * standard_normal(&mut rng);
                match dec {
                    DistributedDecoder::Reconstruction { x1: t1, x2: t2 } => {
                        let e1 = t1.lookup(y1, y2) - x1;
                        let e2 = t2.lookup(y1, y2) - x2;
                        e1 * e1 + cfg.eta * e2 * e2
                    }
                    DistributedDecoder::Function(table) => {
                        let gamma = cfg.coeffs[0] * x1 + cfg.coeffs[1] * x2;
                        let e = table.lookup(y1, y2) - gamma;
                        e * e
                    }
                }
            }
        };
        sum += err;
        sum_sq += err * err;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(McEstimate { mean, stderr: (var / n).sqrt() })
}

/// Full cost accounting of a system state at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub distortion: f64,
    /// Transmit power per encoder (one entry in the side-info setting).
    pub powers: Vec<f64>,
    /// distortion + Σ λ_i·(power_i − target_i)
    pub lagrangian: f64,
    /// Σ H(K_i|X_i), nats.
    pub entropy: f64,
    /// lagrangian − T·(entropy − H0)
    pub free_energy: f64,
    pub temperature: f64,
}

impl CostBreakdown {
    pub fn new(
        distortion: f64,
        powers: Vec<f64>,
        lambdas: &[f64],
        power_targets: &[f64],
        entropy: f64,
        temperature: f64,
        h0: f64,
    ) -> Self {
        let mut lagrangian = distortion;
        for ((&p, &l), &pt) in powers.iter().zip(lambdas).zip(power_targets) {
            lagrangian += l * (p - pt);
        }
        let free_energy = lagrangian - temperature * (entropy - h0);
        CostBreakdown {
            distortion,
            powers,
            lagrangian,
            entropy,
            free_energy,
            temperature,
        }
    }
}

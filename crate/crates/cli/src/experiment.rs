//! Experiment orchestration: setting construction, λ calibration,
//! method dispatch, and artifact files (CSV tables + comparison text).

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zdsc_core::annealer::run_da;
use zdsc_core::baselines::{
    greedy_descent, ncr_run, optimal_linear, optimal_linear_numeric_side_info, Decoders,
    DescentConfig, DescentOutcome, DescentSetting, LinearSetting, NcrSchedule,
};
use zdsc_core::bounds::{opta_distributed, opta_side_info};
use zdsc_core::cost::{DistributedProblem, DistributedSystem, Objective, SideInfoProblem, SideInfoSystem};
use zdsc_core::mapping::{default_y_grid, DeterministicEncoder, PiecewiseEncoder};
use zdsc_core::prob_model::{
    build_gaussian_mixture, build_joint_gaussian, build_noise, DiscretizedSource, Grid,
    NoiseModel,
};

use crate::config::{Calibration, ExperimentConfig, SettingKind, SourceKind};

/// Error that maps to process exit code 3 (violated numerical assertion).
#[derive(Debug)]
pub struct AssertionError(pub String);

impl std::fmt::Display for AssertionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "assertion failed: {}", self.0)
    }
}

impl std::error::Error for AssertionError {}

/// A config resolved into calibrated multipliers and power targets.
pub struct Instance {
    pub cfg: ExperimentConfig,
    pub lambdas: [f64; 2],
    pub power_targets: [f64; 2],
    /// Continuous-model optimal linear gains (numeric for mixtures).
    pub linear_gains: Vec<f64>,
}

/// One optimizer's final mappings plus its metrics.
pub struct MethodResult {
    pub method: String,
    /// Evaluation-grid encoder values, one vector per source.
    pub values: Vec<Vec<f64>>,
    pub decoders: Option<Decoders>,
    pub distortion: f64,
    pub powers: Vec<f64>,
    pub lagrangian: Option<f64>,
    pub trace: Vec<TraceLine>,
    pub warnings: Vec<String>,
}

pub struct TraceLine {
    pub step: usize,
    pub temperature: Option<f64>,
    pub models: Option<String>,
    pub distortion: f64,
    pub powers: Vec<f64>,
    pub lagrangian: f64,
    pub entropy: f64,
    pub free_energy: f64,
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn snr_db(setting: SettingKind, d: f64) -> f64 {
    match setting {
        SettingKind::DistributedReconstruction => db(2.0 / d),
        _ => db(1.0 / d),
    }
}

fn gamma_fn(coeffs: [f64; 2]) -> Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> {
    Arc::new(move |x1, x2| coeffs[0] * x1 + coeffs[1] * x2)
}

fn build_joint(cfg: &ExperimentConfig, spacing: f64) -> anyhow::Result<DiscretizedSource> {
    let s = &cfg.source;
    Ok(match s.kind {
        SourceKind::Gaussian => {
            build_joint_gaussian(s.rho, s.variance, spacing, s.support_sigmas)?
        }
        SourceKind::Mixture => {
            let centers: Vec<[f64; 2]> =
                s.mixture_centers.iter().map(|&c| [c, c]).collect();
            let cov = [
                [s.variance, s.rho * s.variance],
                [s.rho * s.variance, s.variance],
            ];
            build_gaussian_mixture(&centers, &s.mixture_weights, cov, spacing, s.support_sigmas)?
        }
    })
}

fn build_noise_i(cfg: &ExperimentConfig, i: usize, spacing: f64) -> anyhow::Result<NoiseModel> {
    Ok(build_noise(cfg.noise_vars[i], spacing, cfg.source.support_sigmas)?)
}

fn y_grid_for(
    power_target: f64,
    noise: &NoiseModel,
    spacing: f64,
    max_points: usize,
) -> anyhow::Result<Grid> {
    // linear-interp quadrature spans |g| up to ~5σ_g = 5√P, with margin
    let span = 5.0 * power_target.max(1e-6).sqrt() * 1.05;
    Ok(default_y_grid(-span, span, noise, spacing, max_points)?)
}

fn linear_setting(cfg: &ExperimentConfig) -> Option<LinearSetting> {
    if cfg.source.kind != SourceKind::Gaussian {
        return None;
    }
    let (rho, sigma2) = (cfg.source.rho, cfg.source.variance);
    Some(match cfg.setting {
        SettingKind::SideInfo => LinearSetting::SideInfo {
            rho,
            sigma2,
            noise_var: cfg.noise_vars[0],
        },
        SettingKind::DistributedReconstruction => LinearSetting::DistributedReconstruction {
            rho,
            sigma2,
            noise_vars: cfg.noise_vars,
            eta: cfg.eta,
        },
        SettingKind::DistributedFunction => LinearSetting::DistributedLinearFunction {
            rho,
            sigma2,
            noise_vars: cfg.noise_vars,
            coeffs: cfg.coeffs,
        },
    })
}

/// Log-domain bisection of a decreasing map λ ↦ power onto `target`.
fn bisect_lambda(
    mut power_of: impl FnMut(f64) -> anyhow::Result<f64>,
    target: f64,
) -> anyhow::Result<f64> {
    let (mut lo, mut hi) = (1e-12f64.ln(), 1e9f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if power_of(mid.exp())? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Resolves λ and the power targets per the config's calibration mode,
/// keeping the linear-baseline CSNR within ±0.05 dB of any target.
pub fn calibrate(cfg: &ExperimentConfig) -> anyhow::Result<Instance> {
    let lin = linear_setting(cfg);
    let empty = Instance {
        cfg: cfg.clone(),
        lambdas: [0.0; 2],
        power_targets: [0.0; 2],
        linear_gains: Vec::new(),
    };
    let mut inst = empty;

    match (&cfg.calibration, &lin) {
        (Calibration::Direct { lambdas }, Some(setting)) => {
            let nl = if cfg.setting == SettingKind::SideInfo { 1 } else { 2 };
            let sol = optimal_linear(setting, &lambdas[..nl])?;
            inst.lambdas = *lambdas;
            inst.power_targets = [
                sol.powers[0],
                sol.powers.get(1).copied().unwrap_or(0.0),
            ];
            inst.linear_gains = sol.gains;
        }
        (Calibration::Direct { lambdas }, None) => {
            // mixture: numeric linear baseline fixes gains and targets
            let joint = build_joint(cfg, cfg.grid.spacing)?;
            let noise = build_noise_i(cfg, 0, cfg.grid.spacing)?;
            let problem = SideInfoProblem::new(joint, noise.clone(), lambdas[0], 1.0)?;
            let x_hi = problem.joint.grids2()?.0.last().abs();
            let a_hi = (1.0 / lambdas[0]).sqrt() * 1.5 + 1.0;
            let y = default_y_grid(
                -a_hi * x_hi,
                a_hi * x_hi,
                &noise,
                cfg.grid.spacing,
                cfg.grid.y_max_points,
            )?;
            let sol = optimal_linear_numeric_side_info(&problem, &y)?;
            inst.lambdas = *lambdas;
            inst.power_targets = [sol.powers[0], 0.0];
            inst.linear_gains = sol.gains;
        }
        (Calibration::SideInfoCsnr { csnr_db }, Some(setting)) => {
            let target = 10f64.powf(csnr_db / 10.0);
            let lambda = bisect_lambda(
                |l| Ok(optimal_linear(setting, &[l])?.powers[0]),
                target,
            )?;
            let sol = optimal_linear(setting, &[lambda])?;
            check_csnr("calibrate.csnr_db", sol.powers[0], *csnr_db)?;
            inst.lambdas = [lambda, lambda];
            inst.power_targets = [target, 0.0];
            inst.linear_gains = sol.gains;
        }
        (Calibration::TotalPowerCsnr { csnr_db }, Some(setting)) => {
            let target = 10f64.powf(csnr_db / 10.0);
            let lambda = bisect_lambda(
                |l| {
                    let s = optimal_linear(setting, &[l, l])?;
                    Ok(0.5 * (s.powers[0] + s.powers[1]))
                },
                target,
            )?;
            let sol = optimal_linear(setting, &[lambda, lambda])?;
            check_csnr("calibrate.csnr_db", 0.5 * (sol.powers[0] + sol.powers[1]), *csnr_db)?;
            inst.lambdas = [lambda, lambda];
            inst.power_targets = [sol.powers[0], sol.powers[1]];
            inst.linear_gains = sol.gains;
        }
        (Calibration::PerEncoderCsnr { csnr1_db, csnr2_db }, Some(setting)) => {
            let targets = [10f64.powf(csnr1_db / 10.0), 10f64.powf(csnr2_db / 10.0)];
            let mut lambdas = [0.01f64, 0.01];
            for _ in 0..40 {
                lambdas[0] = bisect_lambda(
                    |l| Ok(optimal_linear(setting, &[l, lambdas[1]])?.powers[0]),
                    targets[0],
                )?;
                lambdas[1] = bisect_lambda(
                    |l| Ok(optimal_linear(setting, &[lambdas[0], l])?.powers[1]),
                    targets[1],
                )?;
            }
            let sol = optimal_linear(setting, &lambdas)?;
            check_csnr("calibrate.csnr1_db", sol.powers[0], *csnr1_db)?;
            check_csnr("calibrate.csnr2_db", sol.powers[1], *csnr2_db)?;
            inst.lambdas = lambdas;
            inst.power_targets = targets;
            inst.linear_gains = sol.gains;
        }
        (_, None) => unreachable!("config validation requires Gaussian for calibration"),
    }
    Ok(inst)
}

fn check_csnr(name: &str, power: f64, target_db: f64) -> anyhow::Result<()> {
    let got = db(power);
    if (got - target_db).abs() > 0.05 {
        return Err(AssertionError(format!(
            "{name}: calibrated linear CSNR {got:.4} dB misses target {target_db} dB"
        ))
        .into());
    }
    Ok(())
}

/// Everything needed to run or evaluate at one grid fidelity.
struct Fidelity {
    joint: DiscretizedSource,
    noises: Vec<NoiseModel>,
    x_grids: Vec<Grid>,
    y_grids: Vec<Grid>,
}

impl Instance {
    fn fidelity(&self, spacing: f64, y_cap: usize) -> anyhow::Result<Fidelity> {
        let cfg = &self.cfg;
        let joint = build_joint(cfg, spacing)?;
        let (g1, g2) = joint.grids2()?;
        let (x_grids, n_srcs) = if cfg.setting.is_distributed() {
            (vec![g1.clone(), g2.clone()], 2)
        } else {
            (vec![g1.clone()], 1)
        };
        let mut noises = Vec::new();
        let mut y_grids = Vec::new();
        for i in 0..n_srcs {
            let noise = build_noise_i(cfg, i, spacing)?;
            let p = if self.power_targets[i] > 0.0 {
                self.power_targets[i]
            } else {
                self.power_targets[0]
            };
            y_grids.push(y_grid_for(p, &noise, spacing, y_cap)?);
            noises.push(noise);
        }
        Ok(Fidelity { joint, noises, x_grids, y_grids })
    }

    fn side_problem(&self, f: &Fidelity) -> anyhow::Result<SideInfoProblem> {
        Ok(SideInfoProblem::new(
            f.joint.clone(),
            f.noises[0].clone(),
            self.lambdas[0],
            self.power_targets[0],
        )?)
    }

    fn dist_problem(&self, f: &Fidelity) -> anyhow::Result<DistributedProblem> {
        let objective = match self.cfg.setting {
            SettingKind::DistributedReconstruction => Objective::Reconstruction,
            SettingKind::DistributedFunction => Objective::Function(gamma_fn(self.cfg.coeffs)),
            SettingKind::SideInfo => unreachable!(),
        };
        Ok(DistributedProblem::new(
            f.joint.clone(),
            f.noises[0].clone(),
            f.noises[1].clone(),
            self.lambdas[0],
            self.lambdas[1],
            self.cfg.eta,
            objective,
            self.power_targets,
        )?)
    }

    /// Runs greedy descent for `sweeps` sweeps from the given encoder
    /// values at one fidelity (0 sweeps = pure evaluation).
    fn descend(
        &self,
        f: &Fidelity,
        values: Vec<Vec<f64>>,
        sweeps: usize,
        tol: f64,
    ) -> anyhow::Result<DescentOutcome> {
        let cfg = DescentConfig { tol, max_sweeps: sweeps };
        let inits: Vec<DeterministicEncoder> = values
            .into_iter()
            .map(DeterministicEncoder::new)
            .collect::<Result<_, _>>()?;
        if self.cfg.setting.is_distributed() {
            let problem = self.dist_problem(f)?;
            Ok(greedy_descent(
                &DescentSetting::Distributed {
                    problem: &problem,
                    y1_grid: &f.y_grids[0],
                    y2_grid: &f.y_grids[1],
                },
                &inits,
                &cfg,
            )?)
        } else {
            let problem = self.side_problem(f)?;
            Ok(greedy_descent(
                &DescentSetting::SideInfo { problem: &problem, y_grid: &f.y_grids[0] },
                &inits,
                &cfg,
            )?)
        }
    }

    fn linear_values(&self, f: &Fidelity) -> Vec<Vec<f64>> {
        f.x_grids
            .iter()
            .zip(&self.linear_gains)
            .map(|(g, a)| g.points().iter().map(|&x| a * x).collect())
            .collect()
    }

    /// Moves optimization-grid values onto the evaluation grid by linear
    /// interpolation, then polishes with a few greedy sweeps.
    fn lift_and_polish(
        &self,
        opt: &Fidelity,
        eval: &Fidelity,
        values: Vec<Vec<f64>>,
    ) -> anyhow::Result<DescentOutcome> {
        let lifted: Vec<Vec<f64>> = values
            .iter()
            .zip(opt.x_grids.iter().zip(&eval.x_grids))
            .map(|(v, (og, eg))| {
                eg.points()
                    .iter()
                    .map(|&x| {
                        let (m, t) = og.locate(x);
                        (1.0 - t) * v[m] + t * v[m + 1]
                    })
                    .collect()
            })
            .collect();
        self.descend(eval, lifted, self.cfg.polish_sweeps, self.cfg.descent.tol)
    }

    fn outcome_to_result(
        &self,
        method: &str,
        out: DescentOutcome,
        trace: Vec<TraceLine>,
        warnings: Vec<String>,
    ) -> MethodResult {
        MethodResult {
            method: method.to_string(),
            values: out.encoders.iter().map(|e| e.values.clone()).collect(),
            decoders: Some(out.decoders),
            distortion: out.breakdown.distortion,
            powers: out.breakdown.powers.clone(),
            lagrangian: Some(out.breakdown.lagrangian),
            trace,
            warnings,
        }
    }

    fn run_linear(&self, eval: &Fidelity) -> anyhow::Result<MethodResult> {
        let out = self.descend(eval, self.linear_values(eval), 0, self.cfg.descent.tol)?;
        Ok(self.outcome_to_result("linear", out, Vec::new(), Vec::new()))
    }

    fn run_greedy(&self, opt: &Fidelity, eval: &Fidelity) -> anyhow::Result<MethodResult> {
        let out = self.descend(
            opt,
            self.linear_values(opt),
            self.cfg.descent.max_sweeps,
            self.cfg.descent.tol,
        )?;
        let trace = descent_trace(&out);
        let values = out.encoders.iter().map(|e| e.values.clone()).collect();
        let polished = self.lift_and_polish(opt, eval, values)?;
        Ok(self.outcome_to_result("greedy", polished, trace, Vec::new()))
    }

    fn run_ncr(&self, opt: &Fidelity, eval: &Fidelity) -> anyhow::Result<MethodResult> {
        let steps = self.cfg.ncr_steps;
        let decay = self.cfg.ncr_decay;
        let schedule = NcrSchedule::new(1.0 / decay.powi(steps as i32 - 1), decay, steps)?;
        let inits: Vec<DeterministicEncoder> = self
            .linear_values(opt)
            .into_iter()
            .map(DeterministicEncoder::new)
            .collect::<Result<_, _>>()?;
        let cfg = DescentConfig {
            tol: self.cfg.descent.tol,
            max_sweeps: self.cfg.descent.max_sweeps,
        };
        // The inter-level jitter makes the relaxation path stochastic, so
        // run a few seeds and keep the best. Candidates are compared by
        // the distortion they deliver once rescaled onto the calibrated
        // power target — the raw Lagrangian would systematically favor
        // low-power basins that look worse at the reported CSNR.
        let mut out: Option<(f64, DescentOutcome)> = None;
        for s in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed.wrapping_add(s));
            let cand = if self.cfg.setting.is_distributed() {
                let problem = self.dist_problem(opt)?;
                ncr_run(
                    &DescentSetting::Distributed {
                        problem: &problem,
                        y1_grid: &opt.y_grids[0],
                        y2_grid: &opt.y_grids[1],
                    },
                    &schedule,
                    &inits,
                    &cfg,
                    &mut rng,
                )?
            } else {
                let problem = self.side_problem(opt)?;
                ncr_run(
                    &DescentSetting::SideInfo { problem: &problem, y_grid: &opt.y_grids[0] },
                    &schedule,
                    &inits,
                    &cfg,
                    &mut rng,
                )?
            };
            let score = if self.power_targets[0] > 0.0 {
                let values: Vec<Vec<f64>> = cand
                    .encoders
                    .iter()
                    .zip(self.power_scales(&cand.breakdown.powers))
                    .map(|(e, c)| e.values.iter().map(|x| c * x).collect())
                    .collect();
                self.descend(opt, values, 0, self.cfg.descent.tol)?.breakdown.distortion
            } else {
                cand.breakdown.lagrangian
            };
            if out.as_ref().map_or(true, |(b, _)| score < *b) {
                out = Some((score, cand));
            }
        }
        let (_, out) = out.unwrap();
        let trace = descent_trace(&out);
        let values = out.encoders.iter().map(|e| e.values.clone()).collect();
        let polished = self.lift_and_polish(opt, eval, values)?;
        Ok(self.outcome_to_result("ncr", polished, trace, Vec::new()))
    }

    fn run_da(&self, opt: &Fidelity, eval: &Fidelity) -> anyhow::Result<MethodResult> {
        let mut acfg = self.cfg.anneal.clone();
        acfg.rng_seed = self.cfg.rng_seed;
        let n = opt.x_grids[0].len();
        let (outcome, final_encoders): (_, Vec<PiecewiseEncoder>) =
            if self.cfg.setting.is_distributed() {
                let problem = self.dist_problem(opt)?;
                let init = PiecewiseEncoder::deterministic(
                    zdsc_core::mapping::LocalAffineModel::new(1.0, 0.0),
                    n,
                )?;
                let mut sys = DistributedSystem::new(
                    problem,
                    init.clone(),
                    init,
                    opt.y_grids[0].clone(),
                    opt.y_grids[1].clone(),
                )?;
                let out = run_da(&mut sys, &acfg)?;
                let encs = vec![sys.encoder(0).clone(), sys.encoder(1).clone()];
                (out, encs)
            } else {
                let problem = self.side_problem(opt)?;
                let init = PiecewiseEncoder::deterministic(
                    zdsc_core::mapping::LocalAffineModel::new(1.0, 0.0),
                    n,
                )?;
                let mut sys = SideInfoSystem::new(problem, init, opt.y_grids[0].clone())?;
                let out = run_da(&mut sys, &acfg)?;
                let encs = vec![sys.encoder().clone()];
                (out, encs)
            };

        // extend each hardened piecewise-affine encoder to the fine grid:
        // a fine point inherits the model of its nearest coarse point and
        // evaluates that model exactly
        let lifted: Vec<Vec<f64>> = final_encoders
            .iter()
            .zip(opt.x_grids.iter().zip(&eval.x_grids))
            .map(|(enc, (og, eg))| {
                let assoc = enc.assoc();
                let models = enc.models();
                eg.points()
                    .iter()
                    .map(|&x| {
                        let j = og.nearest(x);
                        let mut best = 0;
                        for k in 1..enc.num_models() {
                            if assoc[(k, j)] > assoc[(best, j)] {
                                best = k;
                            }
                        }
                        models[best].eval(x)
                    })
                    .collect()
            })
            .collect();
        let polished = self.descend(eval, lifted, self.cfg.polish_sweeps, self.cfg.descent.tol)?;

        let trace = outcome
            .trace
            .iter()
            .enumerate()
            .map(|(i, row)| TraceLine {
                step: i,
                temperature: Some(row.temperature),
                models: Some(
                    row.model_counts
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join("/"),
                ),
                distortion: row.breakdown.distortion,
                powers: row.breakdown.powers.clone(),
                lagrangian: row.breakdown.lagrangian,
                entropy: row.breakdown.entropy,
                free_energy: row.breakdown.free_energy,
            })
            .collect();
        Ok(self.outcome_to_result("da", polished, trace, outcome.warnings))
    }

    fn run_opta(&self) -> anyhow::Result<MethodResult> {
        let cfg = &self.cfg;
        let r = match cfg.setting {
            SettingKind::SideInfo => opta_side_info(
                cfg.source.rho,
                cfg.source.variance,
                self.power_targets[0],
                cfg.noise_vars[0],
            )?,
            SettingKind::DistributedReconstruction => opta_distributed(
                self.power_targets[0],
                self.power_targets[1],
                cfg.noise_vars[0],
                cfg.noise_vars[1],
                cfg.source.rho,
                cfg.eta,
            )?,
            SettingKind::DistributedFunction => {
                return Err(AssertionError("no OPTA bound for the function setting".into()).into())
            }
        };
        let powers = if cfg.setting.is_distributed() {
            vec![self.power_targets[0], self.power_targets[1]]
        } else {
            vec![self.power_targets[0]]
        };
        Ok(MethodResult {
            method: "opta".to_string(),
            values: Vec::new(),
            decoders: None,
            distortion: r.distortion_bound,
            powers,
            lagrangian: None,
            trace: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn run_method_once(
        &self,
        name: &str,
        opt: &Fidelity,
        eval: &Fidelity,
    ) -> anyhow::Result<MethodResult> {
        match name {
            "linear" => self.run_linear(eval),
            "greedy" => self.run_greedy(opt, eval),
            "ncr" => self.run_ncr(opt, eval),
            "da" => self.run_da(opt, eval),
            "opta" => self.run_opta(),
            other => Err(AssertionError(format!("unknown method {other}")).into()),
        }
    }

    /// Worst per-encoder (or total, in total-power mode) CSNR deviation of
    /// a result from the calibrated power targets, in dB.
    fn csnr_error_db(&self, powers: &[f64]) -> f64 {
        if matches!(self.cfg.calibration, Calibration::TotalPowerCsnr { .. }) {
            let got: f64 = powers.iter().sum();
            let want: f64 = self.power_targets.iter().sum();
            return (db(got.max(1e-12)) - db(want)).abs();
        }
        powers
            .iter()
            .zip(&self.power_targets)
            .map(|(&p, &t)| (db(p.max(1e-12)) - db(t)).abs())
            .fold(0.0, f64::max)
    }

    /// Multiplies each λ by its method's achieved/target power ratio
    /// (the local first-order model is power ∝ 1/λ), clamped so a bad
    /// estimate cannot fling the problem across the λ axis.
    fn rescaled_for(&self, powers: &[f64]) -> Instance {
        let mut lambdas = self.lambdas;
        if matches!(self.cfg.calibration, Calibration::TotalPowerCsnr { .. }) {
            let got: f64 = powers.iter().sum();
            let want: f64 = self.power_targets.iter().sum();
            let f = (got / want).clamp(0.125, 8.0);
            lambdas = [lambdas[0] * f, lambdas[1] * f];
        } else {
            for (i, (&p, &t)) in powers.iter().zip(&self.power_targets).enumerate() {
                lambdas[i] *= (p.max(1e-12) / t).clamp(0.125, 8.0);
            }
        }
        Instance {
            cfg: self.cfg.clone(),
            lambdas,
            power_targets: self.power_targets,
            linear_gains: self.linear_gains.clone(),
        }
    }

    /// Runs a method, then — for the nonlinear optimizers — recalibrates
    /// λ against the method's own achieved power until its operating CSNR
    /// matches the preset's target. λ is calibrated on the linear
    /// baseline, but folded solutions buy more fidelity per watt and
    /// settle at a different power; published comparisons hold the CSNR
    /// fixed across methods, not λ.
    fn run_method(
        &self,
        name: &str,
        opt: &Fidelity,
        eval: &Fidelity,
    ) -> anyhow::Result<MethodResult> {
        // DA gets a single correction pass (each run is minutes); NCR is
        // cheap enough to iterate. Everything else operates at the linear
        // calibration point by construction.
        let result = self.run_method_once(name, opt, eval)?;
        // Only the nonlinear optimizers drift off the calibrated power
        // (folded solutions buy more fidelity per watt than the linear
        // baseline λ was calibrated on), and only CSNR-targeted configs
        // define an operating point to hold them to.
        let wants_match = matches!(name, "da" | "ncr")
            && !matches!(self.cfg.calibration, Calibration::Direct { .. })
            && self.power_targets[0] > 0.0;
        if wants_match {
            self.match_power(result, eval)
        } else {
            Ok(result)
        }
    }

    /// Per-encoder amplitude factors that move achieved powers exactly
    /// onto the calibrated targets (a common factor in total-power mode).
    fn power_scales(&self, powers: &[f64]) -> Vec<f64> {
        if matches!(self.cfg.calibration, Calibration::TotalPowerCsnr { .. }) {
            let got: f64 = powers.iter().sum();
            let want: f64 = self.power_targets.iter().sum();
            let c = (want / got.max(1e-12)).sqrt();
            return vec![c; powers.len()];
        }
        powers
            .iter()
            .zip(&self.power_targets)
            .map(|(&p, &t)| (t / p.max(1e-12)).sqrt())
            .collect()
    }

    /// Moves a method's final encoder onto the preset's CSNR operating
    /// point. Scaling the encoder amplitude hits the power target exactly
    /// while keeping the solution's shape (λ-descent cannot do this
    /// cheaply: near a stationary point the power gradient is O(λ), so
    /// short descents barely move it). A short polish at the
    /// power-consistent λ then re-tunes the shape; if the polish drifts
    /// the power again, a final exact rescale is evaluated as-is.
    fn match_power(&self, mut best: MethodResult, eval: &Fidelity) -> anyhow::Result<MethodResult> {
        let tol_db = 0.2;
        let err0 = self.csnr_error_db(&best.powers);
        if err0 <= tol_db {
            return Ok(best);
        }
        let lam = self.rescaled_for(&best.powers);
        let scale = |values: &[Vec<f64>], powers: &[f64]| -> Vec<Vec<f64>> {
            let cs = self.power_scales(powers);
            values
                .iter()
                .zip(&cs)
                .map(|(v, &c)| v.iter().map(|x| c * x).collect())
                .collect()
        };
        let mut out = lam.descend(
            eval,
            scale(&best.values, &best.powers),
            self.cfg.polish_sweeps,
            self.cfg.descent.tol,
        )?;
        if self.csnr_error_db(&out.breakdown.powers) > tol_db {
            let values: Vec<Vec<f64>> =
                out.encoders.iter().map(|e| e.values.clone()).collect();
            out = lam.descend(eval, scale(&values, &out.breakdown.powers), 0, self.cfg.descent.tol)?;
        }
        let err = self.csnr_error_db(&out.breakdown.powers);
        let method = best.method.clone();
        let mut next = lam.outcome_to_result(&method, out, Vec::new(), best.warnings.clone());
        next.trace = std::mem::take(&mut best.trace);
        next.warnings.push(format!(
            "{method}: encoder rescaled onto the CSNR target \
             (operating-point error {err:.2} dB, was {err0:.2} dB)",
            ));
        Ok(next)
    }
}

fn descent_trace(out: &DescentOutcome) -> Vec<TraceLine> {
    out.trace
        .iter()
        .enumerate()
        .map(|(i, b)| TraceLine {
            step: i,
            temperature: None,
            models: None,
            distortion: b.distortion,
            powers: b.powers.clone(),
            lagrangian: b.lagrangian,
            entropy: b.entropy,
            free_energy: b.free_energy,
        })
        .collect()
}

/// One experiment run (one sweep point): results in method order plus
/// grids needed downstream for Monte-Carlo validation.
pub struct RunOutput {
    pub sweep_value: Option<f64>,
    pub results: Vec<MethodResult>,
    pub instance: Instance,
    pub eval_x_grids: Vec<Grid>,
}

pub fn run_single(cfg: &ExperimentConfig, sweep_value: Option<f64>) -> anyhow::Result<RunOutput> {
    let inst = calibrate(cfg)?;
    let eval = inst.fidelity(cfg.grid.spacing, cfg.grid.y_max_points)?;
    let opt = if cfg.grid.opt_spacing == cfg.grid.spacing {
        inst.fidelity(cfg.grid.spacing, cfg.grid.y_max_points)?
    } else {
        inst.fidelity(cfg.grid.opt_spacing, cfg.grid.y_max_points_opt)?
    };
    let mut results = Vec::new();
    for name in cfg.method.expand(cfg.setting) {
        results.push(inst.run_method(name, &opt, &eval)?);
    }
    let eval_x_grids = eval.x_grids.clone();
    Ok(RunOutput { sweep_value, results, instance: inst, eval_x_grids })
}

/// Expands the sweep (if any) and runs every point.
pub fn run_all(cfg: &ExperimentConfig) -> anyhow::Result<Vec<RunOutput>> {
    match &cfg.sweep {
        None => Ok(vec![run_single(cfg, None)?]),
        Some((key, values)) => {
            let mut outs = Vec::new();
            for &v in values {
                let mut map = std::collections::BTreeMap::new();
                map.insert(key.clone(), v.to_string());
                let point = reresolve_with(cfg, &map)?;
                outs.push(run_single(&point, Some(v))?);
            }
            Ok(outs)
        }
    }
}

/// Re-resolves one sweep point by patching the raw key. Only numeric
/// keys are sweepable, which the config layer already guarantees.
fn reresolve_with(
    cfg: &ExperimentConfig,
    patch: &std::collections::BTreeMap<String, String>,
) -> anyhow::Result<ExperimentConfig> {
    let mut out = cfg.clone();
    out.sweep = None;
    for (k, v) in patch {
        let num: f64 = v.parse().map_err(|_| {
            crate::config::ConfigError(format!("sweep.values: not a number: {v}"))
        })?;
        match k.as_str() {
            "source.rho" => out.source.rho = num,
            "source.variance" => out.source.variance = num,
            "eta" => out.eta = num,
            "noise.variance" => out.noise_vars = [num, num],
            "noise.variance1" => out.noise_vars[0] = num,
            "noise.variance2" => out.noise_vars[1] = num,
            "lambda" => out.calibration = Calibration::Direct { lambdas: [num, num] },
            "calibrate.csnr_db" => {
                out.calibration = if cfg.setting == SettingKind::SideInfo {
                    Calibration::SideInfoCsnr { csnr_db: num }
                } else {
                    Calibration::TotalPowerCsnr { csnr_db: num }
                }
            }
            "rng_seed" => out.rng_seed = num as u64,
            other => {
                return Err(crate::config::ConfigError(format!(
                    "sweep.key: {other} is not sweepable"
                ))
                .into())
            }
        }
    }
    Ok(out)
}

// ---------- artifact files ----------

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn metrics_csv(cfg: &ExperimentConfig, runs: &[RunOutput]) -> String {
    let mut s = String::from(
        "sweep,method,csnr1_db,csnr2_db,snr_db,distortion,power1,power2,lagrangian,seed\n",
    );
    for run in runs {
        for r in &run.results {
            let csnr1 = db(r.powers[0]);
            let csnr2 = r.powers.get(1).map(|p| db(*p));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_opt(run.sweep_value),
                r.method,
                fmt_f64(csnr1),
                fmt_opt(csnr2),
                fmt_f64(snr_db(cfg.setting, r.distortion)),
                fmt_f64(r.distortion),
                fmt_f64(r.powers[0]),
                fmt_opt(r.powers.get(1).copied()),
                fmt_opt(r.lagrangian),
                cfg.rng_seed,
            );
        }
    }
    s
}

fn trace_csv(r: &MethodResult) -> String {
    let mut s = String::from(
        "step,temperature,models,distortion,power1,power2,lagrangian,entropy,free_energy\n",
    );
    for t in &r.trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            t.step,
            fmt_opt(t.temperature),
            t.models.clone().unwrap_or_default(),
            fmt_f64(t.distortion),
            fmt_f64(t.powers[0]),
            fmt_opt(t.powers.get(1).copied()),
            fmt_f64(t.lagrangian),
            fmt_f64(t.entropy),
            fmt_f64(t.free_energy),
        );
    }
    s
}

fn encoder_csv(grid: &Grid, values: &[f64]) -> String {
    let mut s = String::from("x,g\n");
    for (x, v) in grid.points().iter().zip(values) {
        let _ = writeln!(s, "{},{}", fmt_f64(*x), fmt_f64(*v));
    }
    s
}

fn channel_space_csv(runs: &[RunOutput]) -> String {
    let mut s = String::from("sweep,method,x,g1,g2\n");
    for run in runs {
        for r in &run.results {
            if r.values.len() != 2 {
                continue;
            }
            for ((x, g1), g2) in run.eval_x_grids[0]
                .points()
                .iter()
                .zip(&r.values[0])
                .zip(&r.values[1])
            {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    fmt_opt(run.sweep_value),
                    r.method,
                    fmt_f64(*x),
                    fmt_f64(*g1),
                    fmt_f64(*g2),
                );
            }
        }
    }
    s
}

/// Aligned comparison of method rows with an optional OPTA line;
/// duplicate method names gain -1/-2 suffixes. Every finite-delay row
/// must respect the bound.
pub fn compare_table(
    setting: SettingKind,
    rows: &[&MethodResult],
    opta: Option<&MethodResult>,
) -> anyhow::Result<(String, String)> {
    let mut names: Vec<String> = Vec::new();
    {
        let mut counts = std::collections::BTreeMap::new();
        for r in rows {
            *counts.entry(r.method.clone()).or_insert(0usize) += 1;
        }
        let mut seen = std::collections::BTreeMap::new();
        for r in rows {
            if counts[&r.method] > 1 {
                let k = seen.entry(r.method.clone()).or_insert(0usize);
                *k += 1;
                names.push(format!("{}-{}", r.method, k));
            } else {
                names.push(r.method.clone());
            }
        }
    }
    if let Some(bound) = opta {
        for (r, n) in rows.iter().zip(&names) {
            if r.distortion < bound.distortion * (1.0 - 1e-9) {
                return Err(AssertionError(format!(
                    "method {n} reports distortion {} below the OPTA bound {}",
                    r.distortion, bound.distortion
                ))
                .into());
            }
        }
    }
    let dual = setting.is_distributed();
    let mut text = String::new();
    let mut csv = String::new();
    if dual {
        let _ = writeln!(text, "{:<12} {:>12} {:>12} {:>10}", "Method", "CSNR1 (dB)", "CSNR2 (dB)", "SNR (dB)");
        csv.push_str("method,csnr1_db,csnr2_db,snr_db\n");
    } else {
        let _ = writeln!(text, "{:<12} {:>12} {:>10}", "Method", "CSNR (dB)", "SNR (dB)");
        csv.push_str("method,csnr_db,snr_db\n");
    }
    let mut emit = |name: &str, r: &MethodResult| {
        let snr = snr_db(setting, r.distortion);
        if dual {
            let c2 = r.powers.get(1).map(|p| db(*p)).unwrap_or(f64::NAN);
            let _ = writeln!(
                text,
                "{:<12} {:>12.2} {:>12.2} {:>10.2}",
                name,
                db(r.powers[0]),
                c2,
                snr
            );
            let _ = writeln!(csv, "{},{},{},{}", name, fmt_f64(db(r.powers[0])), fmt_f64(c2), fmt_f64(snr));
        } else {
            let _ = writeln!(text, "{:<12} {:>12.2} {:>10.2}", name, db(r.powers[0]), snr);
            let _ = writeln!(csv, "{},{},{}", name, fmt_f64(db(r.powers[0])), fmt_f64(snr));
        }
    };
    for (r, n) in rows.iter().zip(&names) {
        emit(n, r);
    }
    if let Some(bound) = opta {
        emit("OPTA", bound);
    }
    Ok((text, csv))
}

/// Writes every artifact for a finished set of runs.
pub fn write_artifacts(cfg: &ExperimentConfig, runs: &[RunOutput]) -> anyhow::Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(cfg, runs))?;

    let mut any_distributed = false;
    for run in runs {
        let subdir = match run.sweep_value {
            Some(v) => {
                let d = dir.join(format!("sweep_{v}"));
                std::fs::create_dir_all(&d)?;
                d
            }
            None => dir.clone(),
        };
        for r in &run.results {
            if !r.trace.is_empty() {
                std::fs::write(subdir.join(format!("trace_{}.csv", r.method)), trace_csv(r))?;
            }
            for (i, v) in r.values.iter().enumerate() {
                let name = if r.values.len() == 1 {
                    format!("encoder_{}.csv", r.method)
                } else {
                    format!("encoder_{}_{}.csv", r.method, i + 1)
                };
                std::fs::write(subdir.join(name), encoder_csv(&run.eval_x_grids[i], v))?;
            }
            if r.values.len() == 2 {
                any_distributed = true;
            }
            for w in &r.warnings {
                eprintln!("warning [{}]: {w}", r.method);
            }
        }
        let (finite, opta): (Vec<&MethodResult>, Vec<&MethodResult>) =
            run.results.iter().partition(|r| r.method != "opta");
        if !finite.is_empty() {
            let (text, csv) = compare_table(cfg.setting, &finite, opta.first().copied())?;
            std::fs::write(subdir.join("comparison.txt"), text)?;
            std::fs::write(subdir.join("comparison.csv"), csv)?;
        }
    }
    if any_distributed {
        std::fs::write(dir.join("channel_space.csv"), channel_space_csv(runs))?;
    }
    Ok(())
}

pub fn run_experiment(path: &Path, sets: &[String]) -> anyhow::Result<Vec<RunOutput>> {
    let cfg = crate::config::load(path, sets)?;
    let runs = run_all(&cfg)?;
    write_artifacts(&cfg, &runs)?;
    Ok(runs)
}

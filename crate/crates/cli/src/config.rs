//! Flat key = value experiment configs with dotted section keys,
//! command-line overrides, and the shipped preset configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use zdsc_core::annealer::AnnealConfig;
use zdsc_core::baselines::DescentConfig;

/// Error that maps to process exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl AsRef<str>) -> ConfigError {
    ConfigError(format!("{field}: {}", reason.as_ref()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingKind {
    SideInfo,
    DistributedReconstruction,
    DistributedFunction,
}

impl SettingKind {
    pub fn is_distributed(self) -> bool {
        self != SettingKind::SideInfo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSel {
    Da,
    Ncr,
    Greedy,
    Linear,
    Opta,
    All,
}

impl MethodSel {
    /// Methods actually executed, in the metrics row order.
    pub fn expand(self, setting: SettingKind) -> Vec<&'static str> {
        let all = match self {
            MethodSel::Da => vec!["da"],
            MethodSel::Ncr => vec!["ncr"],
            MethodSel::Greedy => vec!["greedy"],
            MethodSel::Linear => vec!["linear"],
            MethodSel::Opta => vec!["opta"],
            MethodSel::All => vec!["da", "ncr", "greedy", "linear", "opta"],
        };
        all.into_iter()
            .filter(|m| *m != "opta" || setting != SettingKind::DistributedFunction)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub rho: f64,
    pub variance: f64,
    /// Mixture node centers c; each component mean is [c, c].
    pub mixture_centers: Vec<f64>,
    pub mixture_weights: Vec<f64>,
    pub support_sigmas: f64,
}

/// How λ and the reported power targets are chosen.
#[derive(Debug, Clone)]
pub enum Calibration {
    /// λ given explicitly; power targets from the linear baseline.
    Direct { lambdas: [f64; 2] },
    /// Bisect λ till the linear baseline hits the CSNR target (dB).
    SideInfoCsnr { csnr_db: f64 },
    /// λ1 = λ2 bisected till average linear-baseline CSNR hits target.
    TotalPowerCsnr { csnr_db: f64 },
    /// Per-encoder λ bisection to individual CSNR targets.
    PerEncoderCsnr { csnr1_db: f64, csnr2_db: f64 },
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Source/noise spacing of the evaluation model.
    pub spacing: f64,
    /// Coarser spacing used while optimizing (defaults to `spacing`).
    pub opt_spacing: f64,
    pub y_max_points: usize,
    pub y_max_points_opt: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub setting: SettingKind,
    pub method: MethodSel,
    pub source: SourceSpec,
    pub noise_vars: [f64; 2],
    pub eta: f64,
    /// γ(x1, x2) = coeffs[0]·x1 + coeffs[1]·x2 for the function setting.
    pub coeffs: [f64; 2],
    pub calibration: Calibration,
    pub grid: GridSpec,
    pub anneal: AnnealConfig,
    pub ncr_steps: usize,
    pub ncr_decay: f64,
    pub descent: DescentConfig,
    pub polish_sweeps: usize,
    pub rng_seed: u64,
    pub mc_samples: usize,
    pub output_dir: PathBuf,
    pub sweep: Option<(String, Vec<f64>)>,
}

/// Raw key/value text: `key = value` lines, `#` comments, no sections.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", lineno + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", lineno + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

pub fn apply_overrides(
    map: &mut BTreeMap<String, String>,
    sets: &[String],
) -> Result<(), ConfigError> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set {s}: expected key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(())
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl<'a> Reader<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, format!("not a number: {v}"))),
        }
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| bad(key, format!("not a number: {v}"))),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, format!("not an integer: {v}"))),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, format!("not an integer: {v}"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(key, format!("not a number: {p}")))
                })
                .collect::<Result<Vec<f64>, _>>()
                .map(Some),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "setting",
    "method",
    "output_dir",
    "rng_seed",
    "eta",
    "lambda",
    "lambda1",
    "lambda2",
    "function.coeffs",
    "source.kind",
    "source.rho",
    "source.variance",
    "source.mixture_centers",
    "source.mixture_weights",
    "source.support_sigmas",
    "noise.variance",
    "noise.variance1",
    "noise.variance2",
    "grid.spacing",
    "grid.opt_spacing",
    "grid.y_max_points",
    "grid.y_max_points_opt",
    "calibrate.csnr_db",
    "calibrate.csnr1_db",
    "calibrate.csnr2_db",
    "calibrate.total",
    "anneal.t_max",
    "anneal.t_min",
    "anneal.alpha",
    "anneal.epsilon",
    "anneal.delta_f",
    "anneal.delta_g",
    "anneal.max_models",
    "anneal.max_equilibrium_iters",
    "anneal.max_restarts",
    "ncr.steps",
    "ncr.decay",
    "descent.tol",
    "descent.max_sweeps",
    "descent.polish_sweeps",
    "mc.samples",
    "sweep.key",
    "sweep.values",
];

pub fn resolve(map: &BTreeMap<String, String>) -> Result<ExperimentConfig, ConfigError> {
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(bad(key, "unknown key"));
        }
    }
    let r = Reader { map };

    let setting = match r.get("setting") {
        Some("side_info") => SettingKind::SideInfo,
        Some("distributed_reconstruction") => SettingKind::DistributedReconstruction,
        Some("distributed_function") => SettingKind::DistributedFunction,
        Some(v) => return Err(bad("setting", format!("unknown setting: {v}"))),
        None => return Err(bad("setting", "required")),
    };
    let method = match r.get("method") {
        Some("da") => MethodSel::Da,
        Some("ncr") => MethodSel::Ncr,
        Some("greedy") => MethodSel::Greedy,
        Some("linear") => MethodSel::Linear,
        Some("opta") => MethodSel::Opta,
        Some("all") => MethodSel::All,
        Some(v) => return Err(bad("method", format!("unknown method: {v}"))),
        None => return Err(bad("method", "required")),
    };
    if method == MethodSel::Opta && setting == SettingKind::DistributedFunction {
        return Err(bad("method", "no OPTA bound is implemented for the function setting"));
    }

    let kind = match r.get("source.kind") {
        None | Some("gaussian") => SourceKind::Gaussian,
        Some("mixture") => SourceKind::Mixture,
        Some(v) => return Err(bad("source.kind", format!("unknown kind: {v}"))),
    };
    let rho = r.f64("source.rho", 0.95)?;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(bad("source.rho", "must be in [-1, 1]"));
    }
    let variance = r.f64("source.variance", 1.0)?;
    if !(variance > 0.0) {
        return Err(bad("source.variance", "must be positive"));
    }
    let mixture_centers = r.f64_list("source.mixture_centers")?.unwrap_or(vec![-3.0, 3.0]);
    let mixture_weights = r
        .f64_list("source.mixture_weights")?
        .unwrap_or_else(|| vec![1.0 / mixture_centers.len() as f64; mixture_centers.len()]);
    if mixture_weights.len() != mixture_centers.len() {
        return Err(bad("source.mixture_weights", "length must match source.mixture_centers"));
    }
    let support_sigmas = r.f64("source.support_sigmas", 5.0)?;
    let source = SourceSpec {
        kind,
        rho,
        variance,
        mixture_centers,
        mixture_weights,
        support_sigmas,
    };
    if kind == SourceKind::Mixture && setting != SettingKind::SideInfo {
        return Err(bad("source.kind", "mixture sources are only supported for side_info"));
    }

    let nv = r.f64("noise.variance", 1.0)?;
    let noise_vars = [r.f64("noise.variance1", nv)?, r.f64("noise.variance2", nv)?];
    if noise_vars.iter().any(|v| !(*v > 0.0)) {
        return Err(bad("noise.variance", "must be positive"));
    }

    let eta = r.f64("eta", 1.0)?;
    let coeffs_v = r.f64_list("function.coeffs")?.unwrap_or(vec![1.0, -1.0]);
    if coeffs_v.len() != 2 {
        return Err(bad("function.coeffs", "need exactly two coefficients"));
    }
    let coeffs = [coeffs_v[0], coeffs_v[1]];

    let total = matches!(r.get("calibrate.total"), Some("true") | Some("1") | Some("yes"));
    let csnr = r.f64_opt("calibrate.csnr_db")?;
    let csnr1 = r.f64_opt("calibrate.csnr1_db")?;
    let csnr2 = r.f64_opt("calibrate.csnr2_db")?;
    let lambda = r.f64_opt("lambda")?;
    let lambda1 = r.f64_opt("lambda1")?;
    let lambda2 = r.f64_opt("lambda2")?;
    let calibration = match (csnr, csnr1, csnr2) {
        (Some(c), None, None) if setting == SettingKind::SideInfo => {
            Calibration::SideInfoCsnr { csnr_db: c }
        }
        (Some(c), None, None) if total => Calibration::TotalPowerCsnr { csnr_db: c },
        (Some(_), None, None) => {
            return Err(bad(
                "calibrate.csnr_db",
                "distributed settings need calibrate.total = true or per-encoder targets",
            ))
        }
        (None, Some(c1), Some(c2)) => {
            if setting == SettingKind::SideInfo {
                return Err(bad("calibrate.csnr1_db", "side_info takes calibrate.csnr_db"));
            }
            Calibration::PerEncoderCsnr { csnr1_db: c1, csnr2_db: c2 }
        }
        (None, None, None) => {
            let l1 = lambda1.or(lambda).ok_or_else(|| {
                bad("lambda", "required when no calibrate.* target is given")
            })?;
            let l2 = lambda2.or(lambda).unwrap_or(l1);
            for (name, l) in [("lambda", l1), ("lambda2", l2)] {
                if !(l > 0.0) {
                    return Err(bad(name, "must be positive"));
                }
            }
            Calibration::Direct { lambdas: [l1, l2] }
        }
        _ => {
            return Err(bad(
                "calibrate",
                "give either calibrate.csnr_db or both calibrate.csnr1_db/csnr2_db",
            ))
        }
    };
    if matches!(calibration, Calibration::SideInfoCsnr { .. } | Calibration::TotalPowerCsnr { .. } | Calibration::PerEncoderCsnr { .. })
        && kind == SourceKind::Mixture
    {
        return Err(bad("calibrate", "CSNR calibration needs a Gaussian source; set lambda"));
    }

    let spacing = r.f64("grid.spacing", 0.02)?;
    let opt_spacing = r.f64("grid.opt_spacing", spacing)?;
    for (name, v) in [("grid.spacing", spacing), ("grid.opt_spacing", opt_spacing)] {
        if !(v > 0.0) {
            return Err(bad(name, "must be positive"));
        }
    }
    let grid = GridSpec {
        spacing,
        opt_spacing,
        y_max_points: r.usize("grid.y_max_points", 2001)?,
        y_max_points_opt: r.usize("grid.y_max_points_opt", 501)?,
    };

    let rng_seed = r.u64("rng_seed", 0)?;
    let mut anneal = AnnealConfig {
        rng_seed,
        ..AnnealConfig::default()
    };
    anneal.t_max = r.f64("anneal.t_max", anneal.t_max)?;
    anneal.t_min = r.f64("anneal.t_min", anneal.t_min)?;
    anneal.alpha = r.f64("anneal.alpha", anneal.alpha)?;
    anneal.epsilon = r.f64("anneal.epsilon", anneal.epsilon)?;
    anneal.delta_f = r.f64("anneal.delta_f", anneal.delta_f)?;
    anneal.delta_g = r.f64("anneal.delta_g", anneal.delta_g)?;
    anneal.max_models = r.usize("anneal.max_models", anneal.max_models)?;
    anneal.max_equilibrium_iters =
        r.usize("anneal.max_equilibrium_iters", anneal.max_equilibrium_iters)?;
    anneal.max_restarts = r.usize("anneal.max_restarts", anneal.max_restarts)?;
    anneal.validate().map_err(|e| ConfigError(format!("anneal: {e}")))?;

    let ncr_steps = r.usize("ncr.steps", 51)?;
    let ncr_decay = r.f64("ncr.decay", 0.8)?;
    if !(ncr_decay > 0.0 && ncr_decay < 1.0) {
        return Err(bad("ncr.decay", "need 0 < decay < 1"));
    }
    if ncr_steps == 0 {
        return Err(bad("ncr.steps", "need >= 1"));
    }

    let descent = DescentConfig {
        tol: r.f64("descent.tol", 1e-7)?,
        max_sweeps: r.usize("descent.max_sweeps", 300)?,
    };
    let polish_sweeps = r.usize("descent.polish_sweeps", 15)?;

    let sweep = match (r.get("sweep.key"), r.f64_list("sweep.values")?) {
        (Some(k), Some(vals)) => {
            if !KNOWN_KEYS.contains(&k) {
                return Err(bad("sweep.key", format!("unknown key: {k}")));
            }
            if vals.is_empty() {
                return Err(bad("sweep.values", "need at least one value"));
            }
            Some((k.to_string(), vals))
        }
        (None, None) => None,
        _ => return Err(bad("sweep.key", "sweep.key and sweep.values go together")),
    };

    Ok(ExperimentConfig {
        setting,
        method,
        source,
        noise_vars,
        eta,
        coeffs,
        calibration,
        grid,
        anneal,
        ncr_steps,
        ncr_decay,
        descent,
        polish_sweeps,
        rng_seed,
        mc_samples: r.usize("mc.samples", 1_000_000)?,
        output_dir: PathBuf::from(r.get("output_dir").unwrap_or("out")),
        sweep,
    })
}

pub fn load(path: &Path, sets: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut map = parse_kv(&text)?;
    apply_overrides(&mut map, sets)?;
    resolve(&map)
}

pub const PRESETS: &[(&str, &str)] = &[
    (
        "fig3",
        "\
# Side-information encoder mappings at two correlations
setting = side_info
method = da
source.rho = 0.97
sweep.key = source.rho
sweep.values = 0.97,0.99
calibrate.csnr_db = 14.3
grid.spacing = 0.02
grid.opt_spacing = 0.1
rng_seed = 1
output_dir = out/fig3
",
    ),
    (
        "fig5",
        "\
# Side information with a bimodal Gaussian-mixture source
setting = side_info
method = da
source.kind = mixture
source.mixture_centers = -3,3
source.rho = 0.95
lambda = 0.04
grid.spacing = 0.02
grid.opt_spacing = 0.1
rng_seed = 1
output_dir = out/fig5
",
    ),
    (
        "fig9",
        "\
# Distributed reconstruction, total-power constraint
setting = distributed_reconstruction
method = all
source.rho = 0.9
eta = 1.0
calibrate.csnr_db = 29
calibrate.total = true
grid.spacing = 0.04
grid.opt_spacing = 0.1
grid.y_max_points = 1501
# The ordered (single-model) phase persists down to T ~ 0.7 here; starting
# higher only burns schedule steps. A faster cooling rate keeps the whole
# preset inside a 20-minute run on one core.
anneal.t_max = 2
anneal.alpha = 0.9
anneal.t_min = 0.001
rng_seed = 1
output_dir = out/fig9
",
    ),
    (
        "table1",
        "\
# Difference-function computation, per-encoder power targets
setting = distributed_function
method = all
source.rho = 0.99
function.coeffs = 1,-1
calibrate.csnr1_db = 19.9
calibrate.csnr2_db = 21.4
grid.spacing = 0.04
grid.opt_spacing = 0.1
grid.y_max_points = 1501
# Faster cooling than the side-info presets: two encoders on the fine
# distributed grids make each temperature step expensive.
anneal.t_max = 20
anneal.alpha = 0.9
anneal.t_min = 0.001
rng_seed = 1
output_dir = out/table1
",
    ),
    (
        "fig6-sweep",
        "\
# Side-information method comparison over a CSNR sweep
setting = side_info
method = all
source.rho = 0.99
sweep.key = calibrate.csnr_db
sweep.values = 8,11,14
grid.spacing = 0.02
grid.opt_spacing = 0.1
rng_seed = 1
output_dir = out/fig6-sweep
",
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

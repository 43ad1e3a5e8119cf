//! Experiment configuration, read from TOML.
//!
//! Every key is optional; missing keys take the desk-scale defaults. Unknown
//! keys are rejected so that typos do not silently fall back to a default.
//!
//! ```toml
//! seeds = [1, 2, 3, 4, 5]
//! n_frames = 10000
//! algorithms = ["dp", "adp", "greedy", "conventional", "fixed_bs"]
//!
//! [energy]
//! e1 = 0.1
//! e2 = [0.1, 0.4, 0.8, 1.2]
//!
//! [grid]
//! battery_levels = 8
//! channel_states = 4
//! ```

use std::fmt;
use std::path::Path;

use fjt_core::adp::{AdpParams, FeatureSet, LspeParams};
use fjt_core::channel::ChannelModelParams;
use fjt_core::dp::RviParams;
use fjt_core::perframe::DEFAULT_DELTA_ALPHA;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Exact DP (relative value iteration) with the fractional-JT stage utility.
    Dp,
    /// Approximate policy iteration with LSPE.
    Adp,
    Greedy,
    Conventional,
    /// DP with the single-BS subframe pinned to the BS with the larger arrival rate.
    FixedBs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Dp,
        Algorithm::Adp,
        Algorithm::Greedy,
        Algorithm::Conventional,
        Algorithm::FixedBs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Dp => "dp",
            Algorithm::Adp => "adp",
            Algorithm::Greedy => "greedy",
            Algorithm::Conventional => "conventional",
            Algorithm::FixedBs => "fixed_bs",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Algorithm::Greedy | Algorithm::Conventional | Algorithm::FixedBs)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected one of dp, adp, greedy, conventional, fixed_bs)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Arrival rate of BS1, W.
    pub e1: f64,
    /// Arrival rate of BS2, W; a list runs a sweep.
    pub e2: OneOrMany,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            e1: 0.1,
            e2: OneOrMany::Many((1..=12).map(|i| i as f64 / 10.0).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Distance from user `i` (row) to BS `k` (column), km.
    pub distance_km: [[f64; 2]; 2],
    pub shadowing_std_db: f64,
    pub shared_shadowing: bool,
    pub edge_snr_db: f64,
    pub ref_tx_power_dbm: f64,
    pub edge_distance_km: f64,
    pub noise_variance: f64,
    /// Frame length, s.
    pub frame_length: f64,
    /// Realizations clustered into the channel grid.
    pub calibration_samples: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = ChannelModelParams::default();
        Self {
            distance_km: p.distance_km,
            shadowing_std_db: p.shadowing_std_db,
            shared_shadowing: p.shared_shadowing,
            edge_snr_db: p.edge_snr_db,
            ref_tx_power_dbm: p.ref_tx_power_dbm,
            edge_distance_km: p.edge_distance_km,
            noise_variance: p.noise_variance,
            frame_length: p.frame_length,
            calibration_samples: 20_000,
        }
    }
}

impl ChannelConfig {
    pub fn params(&self) -> ChannelModelParams {
        ChannelModelParams {
            distance_km: self.distance_km,
            shadowing_std_db: self.shadowing_std_db,
            shared_shadowing: self.shared_shadowing,
            edge_snr_db: self.edge_snr_db,
            ref_tx_power_dbm: self.ref_tx_power_dbm,
            edge_distance_km: self.edge_distance_km,
            noise_variance: self.noise_variance,
            frame_length: self.frame_length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Battery levels per BS.
    pub battery_levels: usize,
    pub channel_states: usize,
    /// Battery steps harvested per frame; the step is `T E_k / quanta`.
    pub quanta_per_frame: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { battery_levels: 8, channel_states: 4, quanta_per_frame: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub delta_alpha: f64,
    pub tol: f64,
    pub tau: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let r = RviParams::default();
        Self { delta_alpha: DEFAULT_DELTA_ALPHA, tol: r.tol, tau: r.tau, max_iter: r.max_iter }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    Standard,
    StandardWithBias,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdpConfig {
    pub beta: f64,
    /// Improvement rounds per exploration.
    pub iterations: usize,
    pub explorations: usize,
    pub lspe_samples: usize,
    pub lspe_min_samples: usize,
    pub eps_c: f64,
    /// Frames used to score each ADP iterate.
    pub eval_frames: usize,
    pub features: Features,
}

impl Default for AdpConfig {
    fn default() -> Self {
        let a = AdpParams::default();
        Self {
            beta: a.lspe.beta,
            iterations: a.iterations,
            explorations: a.explorations,
            lspe_samples: a.lspe.n_samples,
            lspe_min_samples: a.lspe.min_samples,
            eps_c: a.lspe.eps_c,
            eval_frames: a.eval_frames,
            features: Features::Standard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Monte-Carlo evaluation horizon.
    pub n_frames: usize,
    pub algorithms: Vec<Algorithm>,
    pub output: Option<String>,
    pub energy: EnergyConfig,
    pub channel: ChannelConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub adp: AdpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            n_frames: 10_000,
            algorithms: Algorithm::ALL.to_vec(),
            output: None,
            energy: EnergyConfig::default(),
            channel: ChannelConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            adp: AdpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn e2_values(&self) -> Vec<f64> {
        self.energy.e2.values()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "list must not be empty"));
        }
        if self.n_frames < 1 {
            return Err(invalid("n_frames", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("algorithms", "list must not be empty"));
        }
        let e1 = self.energy.e1;
        if !(e1 >= 0.0 && e1.is_finite()) {
            return Err(invalid("energy.e1", format!("must be finite and >= 0, got {e1}")));
        }
        let e2 = self.e2_values();
        if e2.is_empty() {
            return Err(invalid("energy.e2", "sweep list must not be empty"));
        }
        if let Some(x) = e2.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(invalid("energy.e2", format!("must be finite and >= 0, got {x}")));
        }
        self.channel
            .params()
            .validate()
            .map_err(|e| invalid("channel", e.to_string()))?;
        if self.channel.calibration_samples < self.grid.channel_states {
            return Err(invalid("channel.calibration_samples", "must be at least grid.channel_states"));
        }
        for (field, v) in [
            ("grid.battery_levels", self.grid.battery_levels),
            ("grid.channel_states", self.grid.channel_states),
            ("grid.quanta_per_frame", self.grid.quanta_per_frame),
            ("solver.max_iter", self.solver.max_iter),
            ("adp.iterations", self.adp.iterations),
            ("adp.explorations", self.adp.explorations),
            ("adp.lspe_samples", self.adp.lspe_samples),
            ("adp.eval_frames", self.adp.eval_frames),
        ] {
            if v < 1 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        for (field, v) in [
            ("solver.delta_alpha", self.solver.delta_alpha),
            ("solver.tol", self.solver.tol),
            ("adp.eps_c", self.adp.eps_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be > 0, got {v}")));
            }
        }
        if self.solver.delta_alpha >= 1.0 {
            return Err(invalid("solver.delta_alpha", "must be below 1"));
        }
        if !(self.solver.tau > 0.0 && self.solver.tau < 1.0) {
            return Err(invalid("solver.tau", format!("must lie in (0, 1), got {}", self.solver.tau)));
        }
        if !(self.adp.beta >= 0.0 && self.adp.beta < 1.0) {
            return Err(invalid("adp.beta", format!("must lie in [0, 1), got {}", self.adp.beta)));
        }
        if self.adp.lspe_min_samples > self.adp.lspe_samples {
            return Err(invalid("adp.lspe_min_samples", "must not exceed adp.lspe_samples"));
        }
        Ok(())
    }

    pub fn rvi_params(&self) -> RviParams {
        RviParams {
            tau: self.solver.tau,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            reference: None,
        }
    }

    pub fn adp_params(&self, seed: u64) -> AdpParams {
        AdpParams {
            lspe: LspeParams {
                beta: self.adp.beta,
                n_samples: self.adp.lspe_samples,
                min_samples: self.adp.lspe_min_samples,
                eps_c: self.adp.eps_c,
            },
            features: match self.adp.features {
                Features::Standard => FeatureSet::Standard,
                Features::StandardWithBias => FeatureSet::StandardWithBias,
            },
            iterations: self.adp.iterations,
            explorations: self.adp.explorations,
            eval_frames: self.adp.eval_frames,
            seed,
        }
    }
}

//! Scenario files (TOML) and their conversion into a [`Scenario`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dinkelbach::DinkelbachConfig;
use crate::error::{Error, Result};
use crate::metrics::{PowerModel, Scenario};
use crate::propagation::{dbm_per_hz_to_w, dbw_to_w, PathLossParams, IDENTITY};
use crate::trainer::{AdamConfig, PlateauRule, StageSchedule, TrainOptions};
use crate::traffic::{load_field, lognormal_traffic, make_grid, LogNormalTraffic, SpreadModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub edge_m: f64,
    pub samples_per_side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub b_max_hz: f64,
    pub p_max_dbw: f64,
    pub zeta_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub psd_dbm_per_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub pa_efficiency: f64,
    pub circuit_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_bs: usize,
}

/// `intercept_db + 10·exponent·log10(d)`; `alpha`, `beta`, `gamma` and
/// `shape` override the values derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossConfig {
    pub intercept_db: f64,
    pub exponent: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub shape: Option<[[f64; 2]; 2]>,
}

impl PathLossConfig {
    pub fn params(&self) -> PathLossParams {
        let base = PathLossParams::from_db_model(self.intercept_db, self.exponent);
        PathLossParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            gamma: self.gamma.unwrap_or(base.gamma),
            shape: self.shape.unwrap_or(IDENTITY),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficConfig {
    Lognormal {
        location: f64,
        scale: f64,
        /// 1/m²
        spread: f64,
        total_bps: f64,
        /// Length unit the spread is expressed in, metres.
        #[serde(default = "one")]
        spread_unit_m: f64,
        /// Fixed traffic seed; the run seed is used when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        /// CSV `x_m,y_m,density_bps_per_m2`, relative to the scenario file.
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowingConfig {
    pub sigma_db: f64,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub n_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub omega_stage2: f64,
    pub stage1_fraction: f64,
    /// 0 disables the plateau rule.
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    pub diagnostic_every: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = DinkelbachConfig::default();
        let p = PlateauRule::default();
        Self {
            epsilon: d.epsilon,
            max_iterations: d.max_iterations,
            n_epoch: d.adam.n_epoch,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            adam_epsilon: d.adam.epsilon,
            omega_stage2: d.schedule.omega_stage2,
            stage1_fraction: d.schedule.stage1_fraction,
            plateau_window: p.window,
            plateau_rel_tol: p.rel_tol,
            diagnostic_every: None,
        }
    }
}

impl SolverConfig {
    pub fn dinkelbach(&self) -> DinkelbachConfig {
        DinkelbachConfig {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
                n_epoch: self.n_epoch,
            },
            schedule: StageSchedule {
                omega_stage1: 0.0,
                omega_stage2: self.omega_stage2,
                stage1_fraction: self.stage1_fraction,
                plateau: (self.plateau_window > 0).then_some(PlateauRule {
                    window: self.plateau_window,
                    rel_tol: self.plateau_rel_tol,
                }),
            },
            options: TrainOptions {
                diagnostic_every: self.diagnostic_every,
                fixed_locations: false,
            },
            keep_epochs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub area: AreaConfig,
    pub budgets: BudgetConfig,
    pub noise: NoiseConfig,
    pub power: PowerConfig,
    pub network: NetworkConfig,
    pub path_loss: PathLossConfig,
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub shadowing: Option<ShadowingConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const RURAL_TOML: &str = include_str!("../../../scenarios/rural.toml");
pub const URBAN_TOML: &str = include_str!("../../../scenarios/urban.toml");

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Desk-scale rural preset.
    pub fn rural() -> Self {
        Self::from_toml_str(RURAL_TOML).expect("shipped rural scenario parses")
    }

    /// Desk-scale urban preset.
    pub fn urban() -> Self {
        Self::from_toml_str(URBAN_TOML).expect("shipped urban scenario parses")
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    pub fn traffic_spec(&self) -> Option<LogNormalTraffic> {
        match &self.traffic {
            TrafficConfig::Lognormal {
                location,
                scale,
                spread,
                total_bps,
                spread_unit_m,
                ..
            } => Some(LogNormalTraffic {
                location: *location,
                scale: *scale,
                spread: *spread,
                total: *total_bps,
                spread_model: SpreadModel::InverseSquaredLength { unit_m: *spread_unit_m },
            }),
            TrafficConfig::File { .. } => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Scenario> {
        let grid = Arc::new(make_grid(self.area.edge_m, self.area.samples_per_side)?);
        let traffic = match &self.traffic {
            TrafficConfig::Lognormal { seed: fixed, .. } => {
                let spec = self.traffic_spec().expect("lognormal traffic");
                lognormal_traffic(grid.clone(), &spec, fixed.unwrap_or(seed))?
            }
            TrafficConfig::File { path } => load_field(&self.base_dir.join(path), grid.clone())?,
        };
        let scenario = Scenario {
            grid,
            traffic,
            b_max: self.budgets.b_max_hz,
            p_max: dbw_to_w(self.budgets.p_max_dbw),
            zeta_min: self.budgets.zeta_min,
            noise_psd: dbm_per_hz_to_w(self.noise.psd_dbm_per_hz),
            power_model: PowerModel::from_efficiency(self.power.pa_efficiency, self.power.circuit_w),
            n_bs: self.network.n_bs,
            loss_defaults: self.path_loss.params(),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

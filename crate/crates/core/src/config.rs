//! Flat TOML run configuration shared by every CLI workflow.
//!
//! ```toml
//! schema_version = 1
//! plant = "synthetic"        # or "file" (then R_path is required)
//! n_y = 16
//! n_s = 16
//! n_f = 0
//! kappa = 1e4                # synthetic only
//! dt = 1e-4
//! mu = 2
//! a_s = 4398.2
//! a_f = 4398.2
//! alpha = 1.0
//! rho = 0.1
//! weights = "saturated"      # or "imc_matched"
//! q_min = 0.01
//! q_max = 1.0
//! horizon = 1
//! disturbance = "white"
//! dist_sigma = 0.1
//! steps = 65536
//! n_workers = 1
//! seed = 1
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::MpcSettings;
use crate::design::{ObserverNoise, WeightKind};
use crate::io::read_matrix;
use crate::model::{synthetic_plant, PlantConfig, SYNTHETIC_BANDWIDTH, SYNTHETIC_DT, SYNTHETIC_MU};
use crate::sim::{DisturbanceKind, DisturbanceSpec, SineComponent, DEFAULT_IMC_BANDWIDTH_HZ};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_BENCH_CYCLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    ImcMatched,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,

    pub plant: PlantSource,
    pub n_y: usize,
    pub n_s: usize,
    pub n_f: usize,
    pub kappa: f64,
    #[serde(rename = "R_path", skip_serializing_if = "Option::is_none")]
    pub r_path: Option<PathBuf>,
    pub dt: f64,
    pub mu: usize,
    pub a_s: f64,
    pub a_f: f64,
    pub alpha: f64,
    pub rho: f64,

    pub weights: WeightChoice,
    pub lambda: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<u64>,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub sigma_v: f64,
    pub sigma_w: f64,
    pub sigma_m: f64,

    pub disturbance: String,
    pub dist_sigma: f64,
    /// `sinusoid_mix` components as parallel lists.
    pub dist_freqs: Vec<f64>,
    pub dist_amps: Vec<f64>,
    pub dist_modes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_path: Option<PathBuf>,

    pub imc_bandwidth_hz: f64,
    pub steps: usize,
    pub bench_cycles: usize,
    pub n_workers: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub observer_dump: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            plant: PlantSource::Synthetic,
            n_y: 16,
            n_s: 16,
            n_f: 0,
            kappa: 1e4,
            r_path: None,
            dt: SYNTHETIC_DT,
            mu: SYNTHETIC_MU,
            a_s: SYNTHETIC_BANDWIDTH,
            a_f: SYNTHETIC_BANDWIDTH,
            alpha: 1.0,
            rho: 0.1,
            weights: WeightChoice::Saturated,
            lambda: 0.1,
            q_min: 1e-2,
            q_max: 1.0,
            horizon: 1,
            i_max: None,
            epsilon: 1e-3,
            delta: None,
            sigma_v: 1.0,
            sigma_w: 1e-4,
            sigma_m: 1e-2,
            disturbance: "white".into(),
            dist_sigma: 0.1,
            dist_freqs: Vec::new(),
            dist_amps: Vec::new(),
            dist_modes: Vec::new(),
            dist_path: None,
            imc_bandwidth_hz: DEFAULT_IMC_BANDWIDTH_HZ,
            steps: 1 << 16,
            bench_cycles: 1000,
            n_workers: 1,
            seed: 1,
            output_dir: None,
            observer_dump: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for p in [&mut cfg.r_path, &mut cfg.dist_path, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn n_u(&self) -> usize {
        self.n_s + self.n_f
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(1..=2).contains(&self.horizon) {
            return Err(Error::Config(format!("horizon {} not in {{1, 2}}", self.horizon)));
        }
        if self.n_workers == 0 {
            return Err(Error::Config("n_workers must be >= 1".into()));
        }
        if self.n_y == 0 || self.n_u() == 0 {
            return Err(Error::Config("n_y and n_s + n_f must be >= 1".into()));
        }
        if self.plant == PlantSource::File {
            match &self.r_path {
                None => return Err(Error::Config("plant = \"file\" needs R_path".into())),
                Some(p) if !p.exists() => {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "response matrix not found"),
                    ))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.dist_path {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "disturbance file not found"),
                ));
            }
        }
        let n = self.dist_freqs.len();
        if self.dist_amps.len() != n || self.dist_modes.len() != n {
            return Err(Error::Config(format!(
                "dist_freqs, dist_amps and dist_modes differ in length ({n}, {}, {})",
                self.dist_amps.len(),
                self.dist_modes.len()
            )));
        }
        if self.steps < 2 {
            return Err(Error::Config("steps must be >= 2".into()));
        }
        if self.bench_cycles < MIN_BENCH_CYCLES {
            return Err(Error::Config(format!(
                "bench_cycles {} below the minimum {MIN_BENCH_CYCLES}",
                self.bench_cycles
            )));
        }
        self.disturbance_kind()?;
        Ok(())
    }

    fn disturbance_kind(&self) -> Result<DisturbanceKind> {
        self.disturbance.parse()
    }

    /// Builds the plant. Synthetic plants draw their response matrix from
    /// `seed`; the remaining physical parameters come from the config.
    pub fn plant_config(&self) -> Result<PlantConfig> {
        let n_u = self.n_u();
        let response = match self.plant {
            PlantSource::Synthetic => synthetic_plant(self.n_y, n_u, self.kappa, self.seed)?.response,
            PlantSource::File => {
                let path = self.r_path.as_ref().expect("validated");
                let r = read_matrix(path)?;
                if r.shape() != (self.n_y, n_u) {
                    return Err(Error::Dimension(format!(
                        "{}: response matrix is {}x{}, config says {}x{n_u}",
                        path.display(),
                        r.nrows(),
                        r.ncols(),
                        self.n_y
                    )));
                }
                r
            }
        };
        let cfg = PlantConfig {
            n_y: self.n_y,
            n_s: self.n_s,
            n_f: self.n_f,
            response,
            bandwidth: std::iter::repeat_n(self.a_s, self.n_s)
                .chain(std::iter::repeat_n(self.a_f, self.n_f))
                .collect(),
            dt: self.dt,
            mu: self.mu,
            alpha: vec![self.alpha; n_u],
            rho: vec![self.rho; n_u],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weight_kind(&self) -> WeightKind {
        match self.weights {
            WeightChoice::ImcMatched => WeightKind::ImcMatched { lambda: self.lambda },
            WeightChoice::Saturated => WeightKind::Saturated {
                q_min: self.q_min,
                q_max: self.q_max,
            },
        }
    }

    pub fn mpc_settings(&self) -> MpcSettings {
        MpcSettings {
            weights: self.weight_kind(),
            horizon: self.horizon,
            i_max: self.i_max,
            noise: ObserverNoise {
                sigma_v: self.sigma_v,
                sigma_w: self.sigma_w,
                sigma_m: self.sigma_m,
            },
            epsilon: self.epsilon,
            delta: self.delta,
        }
    }

    pub fn disturbance_spec(&self) -> Result<DisturbanceSpec> {
        Ok(DisturbanceSpec {
            kind: self.disturbance_kind()?,
            sigma: self.dist_sigma,
            seed: self.seed,
            components: self
                .dist_freqs
                .iter()
                .zip(&self.dist_amps)
                .zip(&self.dist_modes)
                .map(|((&freq_hz, &amplitude), &mode)| SineComponent {
                    freq_hz,
                    amplitude,
                    mode,
                })
                .collect(),
            path: self.dist_path.clone(),
        })
    }
}

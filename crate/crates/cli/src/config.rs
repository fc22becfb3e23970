use std::path::{Path, PathBuf};

use auction_uh::counterfactual::UhMeasure;
use auction_uh::dataset::DataPrep;
use auction_uh::dist::{BetaParams, SyntheticDgp};
use auction_uh::estimate::FitConfig;
use auction_uh::ident::{LabModel, Partition, PipelineOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Reads a JSON config, or the defaults when no path is given. Errors name
/// the offending key path. Relative paths inside the config are resolved
/// against the returned directory.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, PathBuf), Failure> {
    let Some(path) = path else {
        return Ok((T::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Failure::config(format!("config {} at `{key}`: {}", path.display(), e.inner()))
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, base))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    #[default]
    Triples,
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub mode: DataMode,
    pub dgp: SyntheticDgp,
    /// Number of auctions.
    pub m: usize,
    /// Triples mode: bidders per auction and the rank of the top recorded bid.
    pub n: u32,
    pub r: u32,
    /// Censored mode: auction `i` has `potential[i % len]` potential bidders.
    pub potential: Vec<u32>,
    pub reserve: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mode: DataMode::Triples,
            dgp: SyntheticDgp::default(),
            m: 1000,
            n: 4,
            r: 3,
            potential: vec![5],
            reserve: 0.7,
            seed: 0,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.m == 0 {
            return Err(Failure::config("config at `m`: must be positive"));
        }
        self.dgp.validate().map_err(|e| Failure::config(format!("config at `dgp`: {e}")))?;
        match self.mode {
            DataMode::Triples if self.r < 3 || self.r > self.n => {
                Err(Failure::config(format!("config at `r`: need 3 <= r <= n, got r = {}, n = {}", self.r, self.n)))
            }
            DataMode::Censored if self.potential.is_empty() || self.potential.contains(&0) => {
                Err(Failure::config("config at `potential`: needs positive bidder counts"))
            }
            DataMode::Censored if !(0.0..1.0).contains(&self.reserve) => {
                Err(Failure::config(format!("config at `reserve`: {} outside [0, 1)", self.reserve)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: Option<PathBuf>,
    pub mode: DataMode,
    pub prep: DataPrep,
    /// Defaults depend on `mode`: quadrature for triples, Monte Carlo for
    /// censored auctions.
    pub fit: Option<FitConfig>,
    /// Conditioning values of the reported `f(x | tau)` grids.
    pub taus: Vec<f64>,
    pub grid_points: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            data: None,
            mode: DataMode::Triples,
            prep: DataPrep::default(),
            fit: None,
            taus: vec![0.25, 0.5, 0.75],
            grid_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabModelSpec {
    /// Four Beta conditionals with increasing means.
    Demo {},
    /// `k` identical conditionals: values independent of the UH.
    Independent {
        k: usize,
    },
    Custom {
        taus: Vec<f64>,
        masses: Vec<f64>,
        components: Vec<BetaParams>,
    },
}

impl LabModelSpec {
    pub fn build(&self) -> auction_uh::Result<LabModel> {
        match self {
            Self::Demo {} => Ok(LabModel::demo()),
            Self::Independent { k } if *k == 0 => {
                Err(auction_uh::Error::Config("independent model needs k >= 1".into()))
            }
            Self::Independent { k } => Ok(LabModel::independent_demo(*k)),
            Self::Custom { taus, masses, components } => {
                LabModel::new(taus.clone(), masses.clone(), components.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub model: LabModelSpec,
    /// Defaults to the 1/3 and 2/3 quantiles of the marginal value distribution.
    pub partition: Option<Partition>,
    /// Grid points on the low, middle and high segments.
    pub grid_points: [usize; 3],
    /// Default to 1/3 and 2/3 of the middle segment.
    pub y1: Option<f64>,
    pub y2: Option<f64>,
    pub r: u32,
    pub n: u32,
    pub options: PipelineOptions,
    /// Extra partitions to score.
    pub sweep: Vec<Partition>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            model: LabModelSpec::Demo {},
            partition: None,
            grid_points: [121, 61, 121],
            y1: None,
            y2: None,
            r: 4,
            n: 5,
            options: PipelineOptions::default(),
            sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Parametric process; defaults to the simulation design.
    Dgp { dgp: SyntheticDgp },
    /// Uniform values independent of a uniform UH.
    Uniform {},
    /// Sieve parameters as written by `estimate` (`model.json`).
    Sieve { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub model: ModelSource,
    pub v0: f64,
    pub fixed_reserve: f64,
    pub status_quo_reserve: f64,
    pub reserve_floor: f64,
    /// Probability of each potential-bidder count. Defaults to the empirical
    /// distribution in `data`, or to the reference count without data.
    pub n_dist: Option<Vec<(u32, f64)>>,
    /// Censored dataset supplying the empirical bidder-count distribution.
    pub data: Option<PathBuf>,
    pub prep: DataPrep,
    pub uh: UhMeasure,
    pub tau_grid: Vec<f64>,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::Dgp { dgp: SyntheticDgp::default() },
            v0: 0.5,
            fixed_reserve: 1.0,
            status_quo_reserve: auction_uh::counterfactual::STATUS_QUO_RESERVE,
            reserve_floor: 0.0,
            n_dist: None,
            data: None,
            prep: DataPrep::default(),
            uh: UhMeasure::Continuous { nodes: 32 },
            tau_grid: (1..20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

//! Declarative run configuration (TOML).
//!
//! Every default below is a named constant or a `Default` impl; nothing in the
//! simulator hardcodes an experiment value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LrSchedule, Shape, TrainSpec};
use crate::netsim::Endpoint;
use crate::orchestrator::Variant;
use crate::prune::PruningPolicy;

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_CLIENT_UPLOAD: [f64; 10] = [5.0, 4.0, 3.0, 2.5, 1.5, 1.0, 0.6, 0.5, 0.5, 0.4];
/// Six published download speeds stretched linearly over ten clients.
pub const DEFAULT_CLIENT_DOWNLOAD: [f64; 10] = [20.0, 18.9, 17.3, 14.0, 11.6, 10.4, 8.7, 6.4, 5.1, 4.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub variant: Variant,
    pub clients: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            variant: Variant::PrFl,
            clients: DEFAULT_CLIENT_UPLOAD.len(),
            seed: 0,
            output: None,
            trace: None,
            model: ModelConfig::default(),
            train: TrainSpec::default(),
            network: NetworkConfig::default(),
            density: DensityConfig::default(),
            aggregation: AggregationConfig::default(),
            schedule: ScheduleConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::Constant { rate: 0.25 },
            batch_size: 20,
            local_iterations: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths of the hidden layers; input and output widths come from the data.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

/// A scalar applied to every client or one value per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClient {
    All(f64),
    Each(Vec<f64>),
}

impl PerClient {
    pub fn resolve(&self, clients: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerClient::All(v) => Ok(vec![*v; clients]),
            PerClient::Each(v) if v.len() == clients => Ok(v.clone()),
            PerClient::Each(v) => Err(Error::Config(format!(
                "{what} lists {} values for {clients} clients",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Nominal size of the dense model on the wire; a payload of `k` of the
    /// model's `len` coordinates is timed as `k / len` of this.
    pub model_size_mb: f64,
    pub server: Endpoint,
    pub client_upload: Vec<f64>,
    pub client_download: Vec<f64>,
    pub client_sigma: PerClient,
    /// Seconds per local iteration at full density for a compute factor of 1.
    pub compute_per_iteration: f64,
    pub compute_factor: PerClient,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            model_size_mb: 26.5,
            server: Endpoint {
                upload_speed: 20.0,
                download_speed: 100.0,
                fluctuation_sigma: 0.1,
            },
            client_upload: DEFAULT_CLIENT_UPLOAD.to_vec(),
            client_download: DEFAULT_CLIENT_DOWNLOAD.to_vec(),
            client_sigma: PerClient::All(0.3),
            compute_per_iteration: 0.05,
            compute_factor: PerClient::All(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub rho_min: PerClient,
    pub delta_rho: f64,
    pub pruning_interval: u64,
    pub policy: PruningPolicy,
    pub patience: usize,
    pub min_delta: f64,
    /// Number of recent round times averaged by the density controller.
    pub queue_len: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            rho_min: PerClient::All(0.05),
            delta_rho: 0.2,
            pruning_interval: 50,
            policy: PruningPolicy::GlobalMagnitude,
            patience: 10,
            min_delta: 0.001,
            queue_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Staleness exponent in `(1 + age)^-beta`.
    pub beta: f64,
    /// Global learning rate mixing the new masked average with the old model.
    pub eta_g: f64,
    /// Mixing coefficient of per-arrival updates.
    pub alpha: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            eta_g: 1.0,
            alpha: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Seconds between aggregation ticks; when absent, the median client
    /// latency of the first (dense) round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
    pub t_merge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub max_rounds: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            delta_t: None,
            t_merge: 0.0,
            t_max: None,
            max_rounds: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid,
    LabelSkew { skew_alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dims: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Distance scale between class cluster centres.
    pub separation: f64,
    pub partition: PartitionSpec,
    /// Dataset seed; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dims: 16,
            samples_per_client: 200,
            test_samples: 1000,
            separation: 3.0,
            partition: PartitionSpec::LabelSkew { skew_alpha: 0.5 },
            seed: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be a positive number, got {v}")))
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        self.train.schedule.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }

        let n = &self.network;
        positive("model_size_mb", n.model_size_mb)?;
        n.server.validate("server")?;
        for (i, c) in self.client_endpoints()?.iter().enumerate() {
            c.validate(&format!("client {i}"))?;
        }
        if !(n.compute_per_iteration >= 0.0 && n.compute_per_iteration.is_finite()) {
            return Err(Error::Config("compute_per_iteration must be >= 0".into()));
        }
        for f in n.compute_factor.resolve(self.clients, "compute_factor")? {
            positive("compute_factor", f)?;
        }

        let d = &self.density;
        for r in d.rho_min.resolve(self.clients, "rho_min")? {
            unit_interval("rho_min", r)?;
        }
        unit_interval("delta_rho", d.delta_rho)?;
        if d.pruning_interval == 0 || d.patience == 0 || d.queue_len == 0 {
            return Err(Error::Config(
                "pruning_interval, patience and queue_len must be positive".into(),
            ));
        }
        if d.min_delta.is_nan() || d.min_delta < 0.0 {
            return Err(Error::Config("min_delta must be >= 0".into()));
        }

        let a = &self.aggregation;
        if !(a.beta >= 0.0 && a.beta.is_finite()) {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        unit_interval("eta_g", a.eta_g)?;
        unit_interval("alpha", a.alpha)?;

        let s = &self.schedule;
        if let Some(dt) = s.delta_t {
            positive("delta_t", dt)?;
        }
        if !(s.t_merge >= 0.0 && s.t_merge.is_finite()) {
            return Err(Error::Config("t_merge must be >= 0".into()));
        }
        if let Some(t) = s.t_max {
            positive("t_max", t)?;
        }
        if s.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be positive".into()));
        }

        let data = &self.data;
        if data.classes < 2 || data.dims == 0 || data.samples_per_client == 0 || data.test_samples == 0 {
            return Err(Error::Config(
                "data needs >= 2 classes and positive dims/sample counts".into(),
            ));
        }
        positive("separation", data.separation)?;
        if let PartitionSpec::LabelSkew { skew_alpha } = data.partition {
            positive("skew_alpha", skew_alpha)?;
        }
        Ok(())
    }

    pub fn client_endpoints(&self) -> Result<Vec<Endpoint>> {
        let n = &self.network;
        let m = self.clients;
        let up = PerClient::Each(n.client_upload.clone()).resolve(m, "client_upload")?;
        let down = PerClient::Each(n.client_download.clone()).resolve(m, "client_download")?;
        let sigma = n.client_sigma.resolve(m, "client_sigma")?;
        Ok((0..m)
            .map(|i| Endpoint {
                upload_speed: up[i],
                download_speed: down[i],
                fluctuation_sigma: sigma[i],
            })
            .collect())
    }

    /// `[dims, h1], [h1], ..., [hk, classes], [classes]`.
    pub fn model_shapes(&self) -> Vec<Shape> {
        let mut widths = vec![self.data.dims];
        widths.extend(&self.model.hidden);
        widths.push(self.data.classes);
        widths.windows(2).flat_map(|w| [vec![w[0], w[1]], vec![w[1]]]).collect()
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }
}

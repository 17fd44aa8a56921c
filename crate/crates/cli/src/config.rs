//! Run configuration: one JSON file, every section optional.

use phnls::estlab::{Exponent, SweepPlan};
use phnls::evolve::{InitialData, Normalization, Sign, SimConfig};
use phnls::spectral::BasisParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base run for `simulate`; `growth` overrides its horizon and stride.
    #[serde(default = "default_simulation")]
    pub simulation: SimConfig,
    #[serde(default)]
    pub sweep: SweepPlan,
    #[serde(default)]
    pub estimates: EstimateSettings,
    #[serde(default)]
    pub growth: GrowthSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            simulation: default_simulation(),
            sweep: SweepPlan::default(),
            estimates: EstimateSettings::default(),
            growth: GrowthSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

fn default_simulation() -> SimConfig {
    let init = InitialData::CoherentGaussian {
        center: [0.0, 0.0],
        momentum: [1.0, 0.0],
        width: 1.0,
        normalization: Normalization::H1(1.0),
    };
    let mut cfg = SimConfig::new(BasisParams::default(), Sign::Plus, 1e-3, 1.0, init);
    cfg.output_every = 100;
    cfg
}

fn small_spec() -> BasisParams {
    BasisParams { lx: 8.0, nx: 32, k: 16, nodes: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrichartzSettings {
    pub spec: BasisParams,
    pub q: Exponent,
    pub r: Exponent,
}

impl Default for StrichartzSettings {
    fn default() -> Self {
        StrichartzSettings { spec: small_spec(), q: Exponent::Finite(4.0), r: Exponent::Finite(4.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BernsteinSettings {
    pub p: u32,
    pub q: u32,
    pub s: u32,
}

impl Default for BernsteinSettings {
    fn default() -> Self {
        BernsteinSettings { p: 2, q: 4, s: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrilinearSettings {
    pub spec: BasisParams,
}

impl Default for TrilinearSettings {
    fn default() -> Self {
        TrilinearSettings { spec: small_spec() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSettings {
    pub strichartz: StrichartzSettings,
    pub bernstein: BernsteinSettings,
    pub trilinear: TrilinearSettings,
    /// Exit 0 on an inconclusive verdict.
    pub allow_inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthSettings {
    /// Half-orders to track; one run per entry and sign.
    pub k: Vec<u32>,
    /// Signs to run; empty means the sign of `simulation`.
    pub signs: Vec<Sign>,
    pub horizon: f64,
    pub stride: usize,
}

impl Default for GrowthSettings {
    fn default() -> Self {
        GrowthSettings { k: vec![1], signs: vec![], horizon: 100.0, stride: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    /// Write the field binaries of `simulate`.
    pub trajectory: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv], trajectory: true }
    }
}

impl OutputSettings {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// A config file that failed to load, with the path of the offending key.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError(format!("config error at `{path}`: {}", e.into_inner()))
    })
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

//! Scenario configuration files (TOML, `schema = 1`) and the cell file
//! written by environment generation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{
    half_wavelength_spacing, ArrayGeometry, ArrayKind, CellEnvironment, EnvironmentConfig,
    UncertaintyConfig,
};
use crate::error::{Error, Result};
use crate::parallel::Execution;

/// Experiment families the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentFamily {
    SparsityCdf,
    DownlinkSweep,
    UplinkSweep,
    JointSweep,
    NoisyLearningSweep,
}

impl std::fmt::Display for ExperimentFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentFamily::SparsityCdf => "sparsity_cdf",
            ExperimentFamily::DownlinkSweep => "downlink_sweep",
            ExperimentFamily::UplinkSweep => "uplink_sweep",
            ExperimentFamily::JointSweep => "joint_sweep",
            ExperimentFamily::NoisyLearningSweep => "noisy_learning_sweep",
        };
        f.write_str(s)
    }
}

/// Array description: element counts plus the deployment spacing rule
/// `d = c / (2 f_ref)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub kind: ArrayKind,
    pub n1: usize,
    pub n2: usize,
    pub reference_mhz: f64,
    pub uncertainty: Option<UncertaintyConfig>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            kind: ArrayKind::Ula,
            n1: 32,
            n2: 1,
            reference_mhz: 2010.0,
            uncertainty: None,
        }
    }
}

impl GeometryConfig {
    pub fn elements(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn build(&self) -> Result<ArrayGeometry> {
        let spacing = half_wavelength_spacing(self.reference_mhz * 1e6);
        match self.kind {
            ArrayKind::Ula => ArrayGeometry::ula(self.n1, spacing),
            ArrayKind::Ura => ArrayGeometry::ura(self.n1, self.n2, spacing, spacing),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelsConfig {
    pub downlink_mhz: f64,
    pub uplink_mhz: f64,
    pub ue_antennas: usize,
}

impl Default for ChannelsConfig {
    fn default() -> Self {
        ChannelsConfig {
            downlink_mhz: 2110.0,
            uplink_mhz: 1920.0,
            ue_antennas: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionariesConfig {
    /// Families to compare: any of `dft`, `odft`, `learned`.
    pub families: Vec<String>,
    /// Atom count of overcomplete dictionaries.
    pub atoms: usize,
    /// Per-factor atom counts for rectangular arrays (vertical, horizontal);
    /// their product must equal `atoms`.
    pub atoms1: usize,
    pub atoms2: usize,
    pub training_samples: usize,
    pub mismatch_tolerance: f64,
    pub learn_iterations: usize,
}

impl Default for DictionariesConfig {
    fn default() -> Self {
        DictionariesConfig {
            families: vec!["dft".into(), "odft".into(), "learned".into()],
            atoms: 128,
            atoms1: 0,
            atoms2: 0,
            training_samples: 2000,
            mismatch_tolerance: 0.1,
            learn_iterations: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Swept quantity; informational (each family fixes its own semantics).
    pub variable: String,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            variable: "td".into(),
            grid: vec![8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub snr_db: f64,
    pub td: usize,
    pub tu: usize,
    pub users: usize,
    /// `smv` or `mmv` for multi-antenna downlink estimation.
    pub mode: String,
    /// Uplink pilot kinds to compare: subset of `designed`, `orthogonal`,
    /// `random`.
    pub pilots: Vec<String>,
    /// Confine each user's placement to a distinct azimuth slice.
    pub separated_users: bool,
    /// Channels coded per dictionary in the sparsity CDF.
    pub test_channels: usize,
    /// Include the LS reference method where the family defines one.
    pub include_ls: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            snr_db: 20.0,
            td: 16,
            tu: 5,
            users: 6,
            mode: "smv".into(),
            pilots: vec!["designed".into()],
            separated_users: true,
            test_channels: 1000,
            include_ls: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionChoice {
    Sequential,
    Parallel,
}

impl ExecutionChoice {
    pub fn to_execution(self) -> Execution {
        match self {
            ExecutionChoice::Sequential => Execution::Sequential,
            #[cfg(feature = "parallel")]
            ExecutionChoice::Parallel => Execution::Parallel,
            #[cfg(not(feature = "parallel"))]
            ExecutionChoice::Parallel => Execution::Sequential,
        }
    }
}

/// One experiment run: family, cell, array, dictionaries, sweep, trials.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub experiment: ExperimentFamily,
    pub seed: u64,
    pub trials: usize,
    pub execution: ExecutionChoice,
    pub cell: EnvironmentConfig,
    pub geometry: GeometryConfig,
    pub channels: ChannelsConfig,
    pub dictionaries: DictionariesConfig,
    pub sweep: SweepConfig,
    pub estimation: EstimationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema: 1,
            experiment: ExperimentFamily::DownlinkSweep,
            seed: 0,
            trials: 200,
            execution: ExecutionChoice::Parallel,
            cell: EnvironmentConfig::default(),
            geometry: GeometryConfig::default(),
            channels: ChannelsConfig::default(),
            dictionaries: DictionariesConfig::default(),
            sweep: SweepConfig::default(),
            estimation: EstimationConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Desk-scale preset: N = 32, M = 128, L = 2000, 200 trials per point.
    pub fn desk(experiment: ExperimentFamily) -> Self {
        let mut config = ScenarioConfig {
            experiment,
            ..ScenarioConfig::default()
        };
        match experiment {
            ExperimentFamily::UplinkSweep => {
                config.sweep = SweepConfig {
                    variable: "snr_db".into(),
                    grid: vec![0.0, 10.0, 20.0, 30.0],
                };
            }
            ExperimentFamily::JointSweep => {
                config.sweep = SweepConfig {
                    variable: "td".into(),
                    grid: vec![4.0, 8.0, 12.0, 16.0, 20.0],
                };
                config.estimation.tu = 2;
                config.dictionaries.training_samples = 1500;
            }
            ExperimentFamily::NoisyLearningSweep => {
                config.sweep = SweepConfig {
                    variable: "learning_snr_db".into(),
                    grid: vec![0.0, 10.0, 20.0, 30.0, f64::INFINITY],
                };
                config.estimation.td = 13;
                config.dictionaries.training_samples = 1200;
            }
            _ => {}
        }
        config
    }

    /// Paper-scale preset: N = 100, M = 400, L = 10000 (slow; not used in CI).
    pub fn paper(experiment: ExperimentFamily) -> Self {
        let mut config = Self::desk(experiment);
        config.geometry.n1 = 100;
        config.dictionaries.atoms = 400;
        config.dictionaries.training_samples = 10_000;
        config.estimation.td = 40;
        config.sweep.grid = match experiment {
            ExperimentFamily::DownlinkSweep => (1..=10).map(|k| (k * 10) as f64).collect(),
            _ => config.sweep.grid,
        };
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::Config(format!("unsupported schema {}", self.schema)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let needs_grid = !matches!(self.experiment, ExperimentFamily::SparsityCdf);
        if needs_grid && self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        let n = self.geometry.elements();
        if self.dictionaries.atoms < n {
            return Err(Error::Config(format!(
                "atoms {} below element count {n}",
                self.dictionaries.atoms
            )));
        }
        if self.geometry.kind == ArrayKind::Ura {
            let (m1, m2) = (self.dictionaries.atoms1, self.dictionaries.atoms2);
            if m1 * m2 != self.dictionaries.atoms || m1 < self.geometry.n1 || m2 < self.geometry.n2
            {
                return Err(Error::Config(
                    "URA runs need atoms1 x atoms2 = atoms with atoms_i >= n_i".into(),
                ));
            }
        }
        for family in &self.dictionaries.families {
            if !matches!(family.as_str(), "dft" | "odft" | "learned") {
                return Err(Error::Config(format!("unknown dictionary family `{family}`")));
            }
        }
        for pilot in &self.estimation.pilots {
            if !matches!(pilot.as_str(), "designed" | "orthogonal" | "random") {
                return Err(Error::Config(format!("unknown pilot kind `{pilot}`")));
            }
        }
        if !matches!(self.estimation.mode.as_str(), "smv" | "mmv") {
            return Err(Error::Config(format!(
                "unknown estimation mode `{}`",
                self.estimation.mode
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("scenario serialize: {e}")))
    }
}

/// Frozen cell deployment: scattering environment plus (possibly perturbed)
/// array, as written by environment generation and consumed by the channel
/// and learning subcommands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellFile {
    pub schema: u32,
    pub environment: CellEnvironment,
    pub geometry: ArrayGeometry,
}

pub fn save_cell_file(cell: &CellFile, path: impl AsRef<Path>) -> Result<()> {
    let text =
        toml::to_string(cell).map_err(|e| Error::Config(format!("cell serialize: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_cell_file(path: impl AsRef<Path>) -> Result<CellFile> {
    let text = fs::read_to_string(path)?;
    let cell: CellFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("cell parse: {e}")))?;
    if cell.schema != 1 {
        return Err(Error::Config(format!("unsupported cell schema {}", cell.schema)));
    }
    Ok(cell)
}

//! Experiment configuration: a TOML document whose keys mirror the struct
//! fields, each overridable by a command-line flag of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Region;
use crate::harness::dataset::DatasetFormat;
use crate::harness::prepare::{CheckinProtocol, TaxicabProtocol};
use crate::mechanisms::BaseMechanism;
use crate::metrics::Window;
use crate::peb::EmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Location hiding, swept over α.
    Lh,
    /// Exponential mechanism, swept over ε (km⁻¹).
    Expo,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Lh => "lh",
            Family::Expo => "expo",
        }
    }

    pub fn default_params(&self) -> Vec<f64> {
        match self {
            Family::Lh => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Family::Expo => (0..10).map(|i| i as f64 * 0.02).collect(),
        }
    }

    pub fn default_repetitions(&self) -> usize {
        match self {
            Family::Lh => 40,
            Family::Expo => 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Remapped around a profile trained on the training set.
    SporadicHw,
    /// Remapped step by step under a Markov chain trained on the training set.
    MarkovHw,
    /// Profile re-estimated from the mechanism's own releases.
    Peb,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::SporadicHw => "sporadic-hw",
            ModelKind::MarkovHw => "markov-hw",
            ModelKind::Peb => "peb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Sporadic,
    Markov,
}

/// Which traces the mechanism is trained (or, for PEB, initialized) on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    Scarce,
    Rich,
    /// Scarce set of the next user in the store.
    #[serde(alias = "other-users")]
    #[value(alias = "other-users")]
    OtherUsersScarce,
    /// Rich set of the next user in the store.
    OtherUsersRich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
    pub mechanism: Family,
    /// Base-mechanism parameters; empty means the family's default grid.
    pub params: Vec<f64>,
    pub lh_exclusive: bool,
    pub model: ModelKind,
    pub attack: AttackKind,
    pub training: TrainingMode,
    /// Defaults to 40 for location hiding and 20 for the exponential mechanism.
    pub repetitions: Option<usize>,
    pub seed: u64,
    /// Shuffle each test trace at every repetition.
    pub shuffle: bool,
    pub windows: Vec<Window>,
    pub pseudocount: f64,
    pub gamma: f64,
    pub em_tolerance: f64,
    pub em_max_iters: usize,
    pub em_warm_start: bool,
    pub em_stride: usize,
    pub min_checkins: usize,
    pub n_eval: usize,
    pub n_scarce_users: usize,
    pub trace_length: usize,
    pub utc_offset_minutes: i32,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let region = Region::san_francisco();
        let em = EmConfig::default();
        let checkin = CheckinProtocol::default();
        ExperimentConfig {
            dataset: PathBuf::new(),
            format: DatasetFormat::Store,
            lat_min: region.lat_min,
            lat_max: region.lat_max,
            lon_min: region.lon_min,
            lon_max: region.lon_max,
            rows: region.rows,
            cols: region.cols,
            mechanism: Family::Lh,
            params: Vec::new(),
            lh_exclusive: false,
            model: ModelKind::SporadicHw,
            attack: AttackKind::Sporadic,
            training: TrainingMode::Rich,
            repetitions: None,
            seed: 0,
            shuffle: false,
            windows: vec![Window::All],
            pseudocount: 0.0,
            gamma: 0.5,
            em_tolerance: em.tolerance,
            em_max_iters: em.max_iters,
            em_warm_start: em.warm_start,
            em_stride: 1,
            min_checkins: checkin.min_checkins,
            n_eval: checkin.n_eval,
            n_scarce_users: checkin.n_scarce_users,
            trace_length: checkin.trace_length,
            utc_offset_minutes: 0,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn region(&self) -> Result<Region> {
        Region::new(self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.rows, self.cols)
    }

    pub fn param_grid(&self) -> Vec<f64> {
        if self.params.is_empty() {
            self.mechanism.default_params()
        } else {
            self.params.clone()
        }
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions
            .unwrap_or_else(|| self.mechanism.default_repetitions())
    }

    pub fn base(&self, param: f64) -> BaseMechanism {
        match self.mechanism {
            Family::Lh => BaseMechanism::LocationHiding {
                alpha: param,
                exclusive: self.lh_exclusive,
            },
            Family::Expo => BaseMechanism::Exponential { epsilon: param },
        }
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            tolerance: self.em_tolerance,
            max_iters: self.em_max_iters,
            warm_start: self.em_warm_start,
        }
    }

    pub fn checkin_protocol(&self) -> CheckinProtocol {
        CheckinProtocol {
            min_checkins: self.min_checkins,
            n_eval: self.n_eval,
            n_scarce_users: self.n_scarce_users,
            trace_length: self.trace_length,
        }
    }

    pub fn taxicab_protocol(&self) -> TaxicabProtocol {
        TaxicabProtocol {
            utc_offset_minutes: self.utc_offset_minutes,
            ..TaxicabProtocol::default()
        }
    }

    /// Label used in result rows, e.g. `lh-peb`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.mechanism.name(), self.model.name())
    }

    /// Rejects anything that would only fail halfway through a run.
    pub fn validate(&self) -> Result<()> {
        self.region()?;
        if self.repetitions() == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Config("no report windows".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if !(self.pseudocount.is_finite() && self.pseudocount >= 0.0) {
            return Err(Error::Config(format!("pseudocount {} must be >= 0", self.pseudocount)));
        }
        let probe = crate::geo::DistMatrix::line(2, 1.0);
        for p in self.param_grid() {
            self.base(p).channel(&probe)?;
        }
        if self.model == ModelKind::Peb {
            if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                return Err(Error::Config(format!("gamma {} must be positive", self.gamma)));
            }
            if self.em_stride == 0 {
                return Err(Error::Config("em_stride must be at least 1".into()));
            }
            self.em().validate()?;
        }
        Ok(())
    }
}

macro_rules! overrides {
    ($($(#[$meta:meta])* $field:ident: $ty:ty => $apply:expr;)*) => {
        /// Command-line overrides; each flag replaces the config field of the
        /// same name.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct ConfigOverrides {
            $(
                $(#[$meta])*
                #[arg(long)]
                pub $field: Option<$ty>,
            )*
        }

        impl ConfigOverrides {
            pub fn apply(self, cfg: &mut ExperimentConfig) {
                $(
                    if let Some(v) = self.$field {
                        #[allow(clippy::redundant_closure_call)]
                        { cfg.$field = ($apply)(v); }
                    }
                )*
            }
        }
    };
}

overrides! {
    dataset: PathBuf => |v| v;
    #[arg(value_enum)]
    format: DatasetFormat => |v| v;
    lat_min: f64 => |v| v;
    lat_max: f64 => |v| v;
    lon_min: f64 => |v| v;
    lon_max: f64 => |v| v;
    rows: usize => |v| v;
    cols: usize => |v| v;
    #[arg(value_enum)]
    mechanism: Family => |v| v;
    /// Comma-separated parameter grid.
    #[arg(value_delimiter = ',', num_args = 1..)]
    params: Vec<f64> => |v| v;
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    lh_exclusive: bool => |v| v;
    #[arg(value_enum)]
    model: ModelKind => |v| v;
    #[arg(value_enum)]
    attack: AttackKind => |v| v;
    #[arg(value_enum)]
    training: TrainingMode => |v| v;
    repetitions: usize => Some;
    seed: u64 => |v| v;
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    shuffle: bool => |v| v;
    /// Comma-separated: all, first-half, last-half.
    #[arg(value_delimiter = ',', num_args = 1..)]
    windows: Vec<Window> => |v| v;
    pseudocount: f64 => |v| v;
    gamma: f64 => |v| v;
    em_tolerance: f64 => |v| v;
    em_max_iters: usize => |v| v;
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    em_warm_start: bool => |v| v;
    em_stride: usize => |v| v;
    min_checkins: usize => |v| v;
    n_eval: usize => |v| v;
    n_scarce_users: usize => |v| v;
    trace_length: usize => |v| v;
    #[arg(allow_hyphen_values = true)]
    utc_offset_minutes: i32 => |v| v;
    /// Worker threads; defaults to LPPM_THREADS, then to all cores.
    #[arg(env = "LPPM_THREADS")]
    threads: usize => Some;
}

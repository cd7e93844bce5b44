//! Run configuration: JSON file plus flag overrides (flags win), resolved to
//! a canonical form whose hash is embedded in every report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bnn_core::data::CohortSpec;
use bnn_core::eval::{
    experiment, BaselineFamily, DropoutFamily, Families, HmcFamily, HmcSettings, HyperGrid,
    Profile, TrainSettings,
};
use bnn_core::net::{Activation, Architecture};
use bnn_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(CohortSpec),
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub hidden_layers: Vec<Vec<usize>>,
    pub prior_precisions: Vec<f64>,
    pub dropout_rates: Vec<f64>,
    pub early_stop_patiences: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![
                vec![100],
                vec![200],
                vec![300],
                vec![100, 100],
                vec![200, 200],
                vec![300, 300],
            ],
            prior_precisions: vec![0.01, 0.1, 1.0, 10.0],
            dropout_rates: vec![0.0, 0.1, 0.25, 0.5],
            early_stop_patiences: vec![5, 20],
        }
    }
}

impl GridConfig {
    pub fn fast() -> Self {
        Self {
            hidden_layers: vec![vec![100]],
            prior_precisions: vec![0.1, 1.0],
            dropout_rates: vec![0.0, 0.25],
            early_stop_patiences: vec![5],
        }
    }

    pub fn to_grid(&self, input_dim: usize) -> Result<HyperGrid> {
        let architectures = self
            .hidden_layers
            .iter()
            .map(|h| Architecture::new(input_dim, h.clone(), Activation::Tanh))
            .collect::<Result<Vec<_>>>()?;
        let grid = HyperGrid {
            architectures,
            prior_precisions: self.prior_precisions.clone(),
            dropout_rates: self.dropout_rates.clone(),
            early_stop_patiences: self.early_stop_patiences.clone(),
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilySettings {
    pub hmc_inner: HmcSettings,
    pub hmc_outer: HmcSettings,
    pub train: TrainSettings,
    pub t_samples: usize,
    pub weight_precision: f64,
    pub validation_fraction: f64,
    pub max_epochs: usize,
}

impl FamilySettings {
    pub fn with_profile(profile: Profile) -> Self {
        let (hmc_inner, hmc_outer) = experiment::hmc_settings(profile);
        Self {
            hmc_inner,
            hmc_outer,
            train: experiment::train_settings(profile),
            t_samples: experiment::t_samples(profile),
            weight_precision: experiment::DEFAULT_WEIGHT_PRECISION,
            validation_fraction: experiment::DEFAULT_VALIDATION_FRACTION,
            max_epochs: experiment::max_epochs(profile),
        }
    }

    pub fn to_families(self) -> Families {
        Families {
            hmc: HmcFamily {
                inner: self.hmc_inner,
                outer: self.hmc_outer,
            },
            dropout: DropoutFamily {
                train: self.train,
                t_samples: self.t_samples,
                weight_precision: self.weight_precision,
            },
            baseline: BaselineFamily {
                learning_rate: self.train.learning_rate,
                batch_size: self.train.batch_size,
                validation_fraction: self.validation_fraction,
                max_epochs: self.max_epochs,
            },
        }
    }
}

impl Default for FamilySettings {
    fn default() -> Self {
        Self::with_profile(Profile::Full)
    }
}

/// Full run configuration. Every field has a default so a config file may
/// specify only what it changes; command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub seed: u64,
    /// 0 keeps the default worker pool.
    pub workers: usize,
    pub pca_components: usize,
    pub profile: Profile,
    /// Grid and family settings; `None` resolves from the profile.
    pub grid: Option<GridConfig>,
    pub families: Option<FamilySettings>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(CohortSpec::default()),
            seed: 0,
            workers: 0,
            pca_components: experiment::DEFAULT_PCA_COMPONENTS,
            profile: Profile::Full,
            grid: None,
            families: None,
        }
    }
}

impl RunConfig {
    /// Materializes profile-dependent defaults so the hashed form pins every
    /// effective setting.
    pub fn resolve(mut self) -> Self {
        if self.grid.is_none() {
            self.grid = Some(match self.profile {
                Profile::Full => GridConfig::default(),
                Profile::Fast => GridConfig::fast(),
            });
        }
        if self.families.is_none() {
            self.families = Some(FamilySettings::with_profile(self.profile));
        }
        self
    }

    /// Hash of the canonical (resolved, JSON-serialized) configuration.
    pub fn hash(&self) -> String {
        let canonical =
            serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

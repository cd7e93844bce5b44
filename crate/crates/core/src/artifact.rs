//! Model artifacts: a self-describing header (architecture, Bayes spec,
//! sampler/trainer config, seed, fitted preprocessing) followed by the
//! row-major sample matrix as little-endian `f64` bytes.
//!
//! HMC chains store every kept posterior draw; trained models (MC dropout,
//! baseline) are single-sample artifacts carrying their training metadata.
//! Saving and loading is bit-exact, so predictions can be recomputed without
//! resampling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::BayesSpec;
use crate::dropout::{self, DropoutConfig};
use crate::error::{Error, Result};
use crate::eval::grid::Prediction;
use crate::hmc::{self, HmcChain, HmcConfig};
use crate::net::{self, Architecture, ParamVector};
use crate::preprocess::Preprocessor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    HmcChain,
    McDropout,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcMeta {
    pub config: HmcConfig,
    pub acceptance_rate: f64,
    pub divergences: usize,
    pub step_size_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format_version: u32,
    pub kind: ModelKind,
    pub arch: Architecture,
    pub layer_precisions: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_variance: Option<f64>,
    pub seed: u64,
    pub n_samples: usize,
    pub n_params: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hmc: Option<HmcMeta>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropout: Option<DropoutConfig>,
    /// Fitted scaler/PCA, stored so the artifact can score raw feature rows.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub preprocessing: Option<Preprocessor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub header: ArtifactHeader,
    /// `n_samples x n_params`, row-major.
    pub samples: Vec<Vec<f64>>,
}

impl ModelArtifact {
    pub fn from_hmc(
        arch: &Architecture,
        spec: &BayesSpec,
        chain: &HmcChain,
        config: &HmcConfig,
        preprocessing: Option<Preprocessor>,
    ) -> Self {
        let header = ArtifactHeader {
            format_version: FORMAT_VERSION,
            kind: ModelKind::HmcChain,
            arch: arch.clone(),
            layer_precisions: spec.layer_precisions().to_vec(),
            noise_variance: Some(spec.noise_variance()),
            seed: chain.seed(),
            n_samples: chain.len(),
            n_params: arch.parameter_count(),
            hmc: Some(HmcMeta {
                config: *config,
                acceptance_rate: chain.acceptance_rate(),
                divergences: chain.divergences(),
                step_size_used: chain.step_size_used(),
            }),
            dropout: None,
            preprocessing,
        };
        Self {
            header,
            samples: chain.samples().to_vec(),
        }
    }

    pub fn from_dropout(
        arch: &Architecture,
        spec: &BayesSpec,
        params: &ParamVector,
        config: &DropoutConfig,
        preprocessing: Option<Preprocessor>,
    ) -> Self {
        let header = ArtifactHeader {
            format_version: FORMAT_VERSION,
            kind: ModelKind::McDropout,
            arch: arch.clone(),
            layer_precisions: spec.layer_precisions().to_vec(),
            noise_variance: Some(spec.noise_variance()),
            seed: config.seed,
            n_samples: 1,
            n_params: arch.parameter_count(),
            hmc: None,
            dropout: Some(*config),
            preprocessing,
        };
        Self {
            header,
            samples: vec![params.values().to_vec()],
        }
    }

    pub fn from_baseline(
        arch: &Architecture,
        params: &ParamVector,
        seed: u64,
        preprocessing: Option<Preprocessor>,
    ) -> Self {
        let header = ArtifactHeader {
            format_version: FORMAT_VERSION,
            kind: ModelKind::Baseline,
            arch: arch.clone(),
            layer_precisions: vec![],
            noise_variance: None,
            seed,
            n_samples: 1,
            n_params: arch.parameter_count(),
            hmc: None,
            dropout: None,
            preprocessing,
        };
        Self {
            header,
            samples: vec![params.values().to_vec()],
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_string(&self.header)?;
        debug_assert!(!header.contains('\n'));
        let mut bytes =
            Vec::with_capacity(header.len() + 1 + self.samples.len() * self.header.n_params * 8);
        bytes.extend_from_slice(header.as_bytes());
        bytes.push(b'\n');
        for row in &self.samples {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Artifact("missing header line".into()))?;
        let header: ArtifactHeader = serde_json::from_slice(&bytes[..newline])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.n_params != header.arch.parameter_count() {
            return Err(Error::Artifact(format!(
                "header says {} parameters but the architecture has {}",
                header.n_params,
                header.arch.parameter_count()
            )));
        }
        let body = &bytes[newline + 1..];
        let expected = header.n_samples * header.n_params * 8;
        if body.len() != expected {
            return Err(Error::Artifact(format!(
                "expected {expected} bytes of samples, found {}",
                body.len()
            )));
        }
        let mut samples = Vec::with_capacity(header.n_samples);
        for s in 0..header.n_samples {
            let row: Vec<f64> = (0..header.n_params)
                .map(|p| {
                    let at = (s * header.n_params + p) * 8;
                    f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
                })
                .collect();
            samples.push(row);
        }
        Ok(Self { header, samples })
    }

    fn spec(&self) -> Result<BayesSpec> {
        let noise = self.header.noise_variance.ok_or_else(|| {
            Error::Artifact("artifact carries no noise variance".into())
        })?;
        BayesSpec::new(self.header.layer_precisions.clone(), noise)
    }

    /// Applies the stored preprocessing (when present) and predicts.
    pub fn predict(&self, raw_rows: &[Vec<f64>]) -> Result<Prediction> {
        let rows = match &self.header.preprocessing {
            Some(pre) => pre.transform(raw_rows)?,
            None => raw_rows.to_vec(),
        };
        let arch = &self.header.arch;
        match self.header.kind {
            ModelKind::HmcChain => {
                let spec = self.spec()?;
                let meta = self
                    .header
                    .hmc
                    .as_ref()
                    .ok_or_else(|| Error::Artifact("chain artifact lacks hmc metadata".into()))?;
                let chain = HmcChain::from_parts(
                    self.samples.clone(),
                    meta.acceptance_rate,
                    vec![],
                    self.header.seed,
                    meta.divergences,
                    meta.step_size_used,
                );
                Ok(Prediction::Posterior(hmc::predict(arch, &spec, &chain, &rows)?))
            }
            ModelKind::McDropout => {
                let spec = self.spec()?;
                let config = self
                    .header
                    .dropout
                    .ok_or_else(|| Error::Artifact("dropout artifact lacks its config".into()))?;
                let params = ParamVector::from_values(arch, self.samples[0].clone())?;
                Ok(Prediction::Posterior(dropout::predict(
                    arch, &spec, &params, &rows, &config,
                )?))
            }
            ModelKind::Baseline => {
                let params = ParamVector::from_values(arch, self.samples[0].clone())?;
                Ok(Prediction::Point(net::forward_batch(arch, &params, &rows)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, DesignMatrix};
    use crate::seeding::rng_for;
    use rand::Rng;
    use tempfile::tempdir;

    fn small_problem() -> (Architecture, BayesSpec, DesignMatrix) {
        let arch = Architecture::new(2, vec![3], Activation::Tanh).unwrap();
        let spec = BayesSpec::tied(1.0, 0.5, &arch).unwrap();
        let mut rng = rng_for(&[1300]);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                vec![
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                ]
            })
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| r[0] - 0.5 * r[1]).collect();
        (arch, spec, DesignMatrix::new(rows, targets).unwrap())
    }

    #[test]
    fn hmc_artifact_round_trips_bit_exact() {
        let (arch, spec, data) = small_problem();
        let config = HmcConfig::new(0.05, 5, 25, 10, 1, 31).unwrap();
        let chain = hmc::run_chain(&arch, &spec, &data, &config).unwrap();
        let artifact = ModelArtifact::from_hmc(&arch, &spec, &chain, &config, None);

        let dir = tempdir().unwrap();
        let path = dir.path().join("chain.bnn");
        artifact.save(&path).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        assert_eq!(loaded, artifact);

        // Predictions recomputed from the artifact equal direct predictions.
        let x = vec![vec![0.3, -0.4], vec![1.0, 0.2]];
        let direct = hmc::predict(&arch, &spec, &chain, &x).unwrap();
        match loaded.predict(&x).unwrap() {
            Prediction::Posterior(p) => {
                assert_eq!(p.means, direct.means);
                assert_eq!(p.variances, direct.variances);
            }
            Prediction::Point(_) => panic!("expected a posterior"),
        }
    }

    #[test]
    fn dropout_artifact_is_single_sample_with_metadata() {
        let (arch, spec, data) = small_problem();
        let config = DropoutConfig::new(0.25, 16, 5, 1e-2, 4, 9).unwrap();
        let params = dropout::train(&arch, &spec, &data, &config).unwrap();
        let artifact = ModelArtifact::from_dropout(&arch, &spec, &params, &config, None);
        assert_eq!(artifact.header.n_samples, 1);
        assert_eq!(artifact.header.dropout.unwrap().t_samples, 16);

        let dir = tempdir().unwrap();
        let path = dir.path().join("dropout.bnn");
        artifact.save(&path).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        let x = vec![vec![0.1, 0.9]];
        let direct = dropout::predict(&arch, &spec, &params, &x, &config).unwrap();
        match loaded.predict(&x).unwrap() {
            Prediction::Posterior(p) => assert_eq!(p, direct),
            Prediction::Point(_) => panic!("expected a posterior"),
        }
    }

    #[test]
    fn baseline_artifact_predicts_points() {
        let (arch, _, _) = small_problem();
        let mut rng = rng_for(&[1301]);
        let params = ParamVector::init(&arch, &mut rng);
        let artifact = ModelArtifact::from_baseline(&arch, &params, 4, None);
        let dir = tempdir().unwrap();
        let path = dir.path().join("nn.bnn");
        artifact.save(&path).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        let x = vec![vec![0.2, 0.4]];
        match loaded.predict(&x).unwrap() {
            Prediction::Point(p) => {
                assert_eq!(p, net::forward_batch(&arch, &params, &x).unwrap());
            }
            Prediction::Posterior(_) => panic!("expected points"),
        }
    }

    #[test]
    fn artifact_with_preprocessing_scores_raw_rows() {
        let (arch, _, _) = small_problem();
        // Preprocessing from 4 raw features down to the net's 2 inputs.
        let mut rng = rng_for(&[1302]);
        let raw: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                (0..4)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let pre = Preprocessor::fit(&raw, 2).unwrap();
        let params = ParamVector::init(&arch, &mut rng);
        let artifact = ModelArtifact::from_baseline(&arch, &params, 4, Some(pre.clone()));
        let test: Vec<Vec<f64>> = raw[..3].to_vec();
        match artifact.predict(&test).unwrap() {
            Prediction::Point(p) => {
                let projected = pre.transform(&test).unwrap();
                assert_eq!(p, net::forward_batch(&arch, &params, &projected).unwrap());
            }
            Prediction::Posterior(_) => panic!("expected points"),
        }
    }

    #[test]
    fn corrupted_artifacts_are_rejected() {
        let (arch, spec, data) = small_problem();
        let config = HmcConfig::new(0.05, 5, 10, 0, 1, 3).unwrap();
        let chain = hmc::run_chain(&arch, &spec, &data, &config).unwrap();
        let artifact = ModelArtifact::from_hmc(&arch, &spec, &chain, &config, None);
        let dir = tempdir().unwrap();
        let path = dir.path().join("chain.bnn");
        artifact.save(&path).unwrap();
        // Truncate the sample matrix.
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        match ModelArtifact::load(&path) {
            Err(Error::Artifact(msg)) => assert!(msg.contains("bytes")),
            other => panic!("expected artifact error, got {other:?}"),
        }
    }
}

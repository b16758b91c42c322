use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::{Condition, GeneratorConfig};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, OptConfig};
use crate::onda::AdaptationConfig;

fn condition(s: &str) -> Condition {
    s.parse().expect("built-in condition id")
}

/// Everything an experiment run depends on. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sources: Vec<Condition>,
    /// `None` means every other domain of the grid.
    pub targets: Option<Vec<Condition>>,
    pub seeds: Vec<u64>,
    pub network: NetworkSpec,
    pub opt: OptConfig,
    pub adaptation: AdaptationConfig,
    pub generator: GeneratorConfig,
    pub ablation: AblationConfig,
    /// BN→DIAL gap below which no gap-closure ratio is reported.
    pub gap_threshold: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sources: vec![
                condition("artificial-kinect-white"),
                condition("cloudy-webcam-brown"),
            ],
            targets: None,
            seeds: (1..=5).collect(),
            network: NetworkSpec::default(),
            opt: OptConfig::default(),
            adaptation: AdaptationConfig::default(),
            generator: GeneratorConfig::default(),
            ablation: AblationConfig::default(),
            gap_threshold: 0.05,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub source: Condition,
    pub target: Condition,
    pub alpha_values: Vec<f64>,
    pub nt_values: Vec<usize>,
    /// `n_t` held fixed while α is swept.
    pub fixed_n_t: usize,
    /// α held fixed while `n_t` is swept.
    pub fixed_alpha: f64,
    /// Stream length per class; longer than the benchmark so slow settings settle.
    pub samples_per_class: usize,
    /// Number of trailing updates defining the final accuracy and smoothness.
    pub final_window: usize,
    /// Fraction of the final accuracy that counts as adapted.
    pub threshold_fraction: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            source: condition("cloudy-webcam-brown"),
            target: condition("artificial-kinect-white"),
            alpha_values: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            nt_values: vec![2, 5, 10, 20, 30],
            fixed_n_t: 10,
            fixed_alpha: 0.1,
            samples_per_class: 120,
            final_window: 10,
            threshold_fraction: 0.95,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::Config(
                "at least one source domain is required".into(),
            ));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if let Some(targets) = &self.targets {
            if targets.is_empty() {
                return Err(Error::Config("target list is empty".into()));
            }
            for s in &self.sources {
                if targets.contains(s) {
                    return Err(Error::Config(format!(
                        "source {s} is also listed as a target"
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.gap_threshold) {
            return Err(Error::Config("gap_threshold must lie in [0, 1)".into()));
        }
        self.network
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.opt.validate()?;
        self.adaptation.validate()?;
        self.generator.validate()?;
        if self.network.input_dim != self.generator.dim() {
            return Err(Error::Config(format!(
                "network input_dim {} does not match generator dim {}",
                self.network.input_dim,
                self.generator.dim()
            )));
        }
        if self.network.num_classes != self.generator.prototypes.num_classes {
            return Err(Error::Config(
                "network num_classes does not match the generator".into(),
            ));
        }
        self.ablation.validate()
    }

    /// Targets studied for `source`: the configured list, or every other domain.
    pub fn targets_for(&self, source: Condition) -> Vec<Condition> {
        match &self.targets {
            Some(t) => t.clone(),
            None => Condition::all()
                .into_iter()
                .filter(|c| *c != source)
                .collect(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source == self.target {
            return Err(Error::Config(
                "ablation source and target must differ".into(),
            ));
        }
        if self.alpha_values.is_empty() || self.nt_values.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if self.alpha_values.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("alpha values must lie in [0, 1]".into()));
        }
        if self.nt_values.iter().any(|&n| n < 2) || self.fixed_n_t < 2 {
            return Err(Error::Config("n_t values must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_alpha) {
            return Err(Error::Config("fixed_alpha must lie in [0, 1]".into()));
        }
        if self.samples_per_class == 0 || self.final_window < 2 {
            return Err(Error::Config(
                "ablation needs samples and a final window of at least 2".into(),
            ));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::Config(
                "threshold_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seeds": [7], "adaptation": {"alpha": 0.2}}"#).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.adaptation.alpha, 0.2);
        assert_eq!(cfg.adaptation.n_t, 10);
        assert_eq!(cfg.sources.len(), 2);
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invariant_violations() {
        let mut cfg = ExperimentConfig {
            seeds: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().is_config());
        cfg.seeds = vec![1];
        cfg.targets = Some(vec![cfg.sources[0]]);
        assert!(cfg.validate().unwrap_err().is_config());
        cfg.targets = None;
        cfg.ablation.alpha_values.clear();
        assert!(cfg.validate().unwrap_err().is_config());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sedes": [1]}"#).is_err());
    }

    #[test]
    fn default_targets_exclude_source() {
        let cfg = ExperimentConfig::default();
        let t = cfg.targets_for(cfg.sources[0]);
        assert_eq!(t.len(), 11);
        assert!(!t.contains(&cfg.sources[0]));
    }
}

use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics;
use super::study::{shuffled_stream, train_source};
use crate::dial::{dial_evaluate, dial_train_from, DomainId};
use crate::error::{Error, Result};
use crate::network::{evaluate, Regime};
use crate::onda::{run_stream, update_trajectory, AdaptationConfig};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Nt,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Nt => "nt",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "nt" | "n_t" => Ok(SweepParam::Nt),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected alpha or nt"
            ))),
        }
    }
}

/// Which hyper-parameter is held fixed; the other one is swept.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AblationRequest {
    pub fixed_n_t: Option<usize>,
    pub fixed_alpha: Option<f64>,
}

impl AblationRequest {
    /// Holds the other parameter at its configured value.
    pub fn sweep(param: SweepParam, cfg: &ExperimentConfig) -> Self {
        match param {
            SweepParam::Alpha => Self {
                fixed_n_t: Some(cfg.ablation.fixed_n_t),
                fixed_alpha: None,
            },
            SweepParam::Nt => Self {
                fixed_n_t: None,
                fixed_alpha: Some(cfg.ablation.fixed_alpha),
            },
        }
    }

    fn swept(&self) -> Result<SweepParam> {
        match (self.fixed_n_t, self.fixed_alpha) {
            (Some(_), None) => Ok(SweepParam::Alpha),
            (None, Some(_)) => Ok(SweepParam::Nt),
            _ => Err(Error::Config(
                "exactly one of n_t and alpha must be fixed".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub value: f64,
    pub n_t: usize,
    pub alpha: f64,
    /// One whole-stream accuracy trajectory per seed, one entry per update.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Median over seeds.
    pub frames_to_threshold: f64,
    pub final_accuracy: f64,
    pub smoothness: f64,
    pub post_convergence_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub param: SweepParam,
    /// Seed of the source model the sweep adapts.
    pub model_seed: u64,
    pub stream_len: usize,
    /// Frozen source statistics on the ablation stream.
    pub bn_accuracy: f64,
    /// Per-domain statistics trained with target data; one model shared by all sweep values.
    pub dial_accuracy: f64,
    pub curves: Vec<SweepCurve>,
}

impl AblationResult {
    pub fn values(&self) -> Vec<f64> {
        self.curves.iter().map(|c| c.value).collect()
    }

    fn rho(&self, f: impl Fn(&SweepCurve) -> f64) -> Result<f64> {
        let y: Vec<f64> = self.curves.iter().map(f).collect();
        metrics::spearman(&self.values(), &y)
    }

    pub fn rho_frames_to_threshold(&self) -> Result<f64> {
        self.rho(|c| c.frames_to_threshold)
    }

    pub fn rho_post_convergence_std(&self) -> Result<f64> {
        self.rho(|c| c.post_convergence_std)
    }

    pub fn rho_smoothness(&self) -> Result<f64> {
        self.rho(|c| c.smoothness)
    }
}

/// Sweeps one hyper-parameter on the configured (source, target) pair.
///
/// One source model and one DIAL model serve every swept value; every seed
/// replays a different shuffle of the same stream. Trajectory entry `k` is the accuracy
/// on the whole stream set after update `k + 1`, so a stream of `T` frames
/// yields `⌊T/n_t⌋` entries.
pub fn run_ablation(cfg: &ExperimentConfig, request: AblationRequest) -> Result<AblationResult> {
    cfg.validate()?;
    let param = request.swept()?;
    let ab = &cfg.ablation;
    let configs: Vec<(f64, AdaptationConfig)> = match param {
        SweepParam::Alpha => {
            let n_t = request.fixed_n_t.expect("checked above");
            ab.alpha_values
                .iter()
                .map(|&alpha| (alpha, AdaptationConfig { n_t, alpha }))
                .collect()
        }
        SweepParam::Nt => {
            let alpha = request.fixed_alpha.expect("checked above");
            ab.nt_values
                .iter()
                .map(|&n_t| (n_t as f64, AdaptationConfig { n_t, alpha }))
                .collect()
        }
    };
    for (_, c) in &configs {
        c.validate()?;
    }

    let protos = cfg.generator.prototypes()?;
    let source_data = cfg.generator.dataset(&protos, ab.source)?;
    let mut stream_gen = cfg.generator.clone();
    stream_gen.samples_per_class = ab.samples_per_class;
    let target = stream_gen.dataset(&protos, ab.target)?;

    // A model that already matches DIAL leaves nothing to adapt, so the first
    // seed whose source model leaves a gap of at least `gap_threshold` is used.
    let mut chosen = None;
    for &seed in &cfg.seeds {
        let params = train_source(cfg, &protos, ab.source, seed)?;
        let bn_accuracy = evaluate(&params, &target, Regime::Eval)?;
        let mut rng = RngStream::for_key(seed, &format!("dial/{}/{}", ab.source, ab.target));
        let (dial_params, bank) = dial_train_from(
            params.clone(),
            &source_data,
            &target.features,
            &cfg.opt,
            &mut rng,
        )?;
        let dial_accuracy = dial_evaluate(&dial_params, &bank, &target, DomainId::Target)?;
        if dial_accuracy - bn_accuracy >= cfg.gap_threshold {
            chosen = Some((seed, params, bn_accuracy, dial_accuracy));
            break;
        }
        info!("seed {seed}: BN {bn_accuracy:.4} vs DIAL {dial_accuracy:.4}, gap below threshold");
    }
    let (model_seed, params, bn_accuracy, dial_accuracy) = chosen.ok_or_else(|| {
        Error::Degenerate(format!(
            "no seed leaves a BN→DIAL gap of {} on {} → {}",
            cfg.gap_threshold, ab.source, ab.target
        ))
    })?;

    let streams = cfg
        .seeds
        .iter()
        .map(|&seed| shuffled_stream(&target, ab.target, seed))
        .collect::<Result<Vec<_>>>()?;
    let curves = configs
        .par_iter()
        .map(|&(value, adapt)| {
            let per_seed = streams
                .iter()
                .map(|s| {
                    let trace =
                        run_stream(&params, &params.bn_globals(), &adapt, &s.features, None)?;
                    update_trajectory(&params, &trace, s)
                })
                .collect::<Result<Vec<_>>>()?;
            if per_seed[0].is_empty() {
                return Err(Error::Config(format!(
                    "stream of {} frames completes no window of n_t = {}",
                    target.len(),
                    adapt.n_t
                )));
            }
            let (mean, std) = metrics::across_runs(&per_seed)?;
            let w = ab.final_window;
            let per = |f: &dyn Fn(&[f64]) -> f64| {
                metrics::median(&per_seed.iter().map(|t| f(t)).collect::<Vec<_>>())
            };
            Ok(SweepCurve {
                value,
                n_t: adapt.n_t,
                alpha: adapt.alpha,
                frames_to_threshold: per(&|t| {
                    metrics::frames_to_threshold(
                        t,
                        adapt.n_t,
                        bn_accuracy,
                        ab.threshold_fraction,
                        w,
                    ) as f64
                }),
                final_accuracy: per(&|t| metrics::final_accuracy(t, w)),
                smoothness: per(&|t| metrics::smoothness(t, w)),
                post_convergence_std: metrics::post_convergence_std(&std),
                per_seed,
                mean,
                std,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AblationResult {
        param,
        model_seed,
        stream_len: target.len(),
        bn_accuracy,
        dial_accuracy,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_parameter_fixed() {
        let cfg = ExperimentConfig::default();
        assert!(run_ablation(&cfg, AblationRequest::default())
            .unwrap_err()
            .is_config());
        let both = AblationRequest {
            fixed_n_t: Some(10),
            fixed_alpha: Some(0.1),
        };
        assert!(run_ablation(&cfg, both).unwrap_err().is_config());
        assert_eq!(
            AblationRequest::sweep(SweepParam::Alpha, &cfg)
                .swept()
                .unwrap(),
            SweepParam::Alpha
        );
        assert_eq!(
            AblationRequest::sweep(SweepParam::Nt, &cfg)
                .swept()
                .unwrap(),
            SweepParam::Nt
        );
    }

    #[test]
    fn param_names() {
        assert_eq!("alpha".parse::<SweepParam>().unwrap(), SweepParam::Alpha);
        assert_eq!("nt".parse::<SweepParam>().unwrap(), SweepParam::Nt);
        assert!("beta".parse::<SweepParam>().unwrap_err().is_config());
    }
}

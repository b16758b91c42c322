//! Upper-bound baseline: joint source/target training with shared weights and
//! domain-specific BN statistics.
//!
//! Every mini-batch is split between the two domains in proportion to their
//! sizes. The labeled source part drives the loss, the gradients and the
//! source running statistics. The target part is only forwarded, normalized
//! by its own batch statistics, to update the target running statistics. No
//! loss is computed on target data, so target labels are never needed.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::batchnorm::{ema_update, BnStats};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{
    evaluate, forward, minibatches, train_batch, NetworkSpec, OptConfig, ParamGrads, Params, Regime,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainId {
    Source,
    Target,
}

/// Per-domain `(μ, σ²)` for every BN layer; γ and β stay shared in [`Params`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainBnBank {
    entries: BTreeMap<DomainId, Vec<BnStats>>,
}

impl DomainBnBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, domain: DomainId, stats: Vec<BnStats>) {
        self.entries.insert(domain, stats);
    }

    pub fn get(&self, domain: DomainId) -> Result<&[BnStats]> {
        match self.entries.get(&domain) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(Error::MissingStats(format!(
                "no {domain:?} statistics in bank"
            ))),
        }
    }
}

/// Source and target shares of a batch of `batch_size`.
///
/// The source share is `⌈b·N_s/(N_s+N_t)⌉`; the target share is clamped to at
/// least 2 so its batch statistics are defined.
pub fn split_batch(batch_size: usize, n_source: usize, n_target: usize) -> Result<(usize, usize)> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::Empty("DIAL needs both source and target samples"));
    }
    let mut src = (batch_size * n_source).div_ceil(n_source + n_target);
    let mut tgt = batch_size - src;
    if tgt < 2 {
        warn!("target share {tgt} of batch {batch_size} clamped to 2");
        tgt = 2;
        src = batch_size.saturating_sub(2);
    }
    if src < 2 {
        return Err(Error::Config(format!(
            "batch size {batch_size} leaves {src} source samples per batch; at least 2 are required"
        )));
    }
    Ok((src, tgt))
}

/// Trains from a fresh initialization drawn from `rng`.
pub fn dial_train(
    spec: &NetworkSpec,
    source: &Dataset,
    target: &Tensor,
    opt: &OptConfig,
    rng: &mut RngStream,
) -> Result<(Params, DomainBnBank)> {
    let params = Params::init(spec, rng)?;
    dial_train_from(params, source, target, opt, rng)
}

/// Trains starting from existing parameters. Target statistics start from the
/// parameters' running globals.
pub fn dial_train_from(
    mut params: Params,
    source: &Dataset,
    target: &Tensor,
    opt: &OptConfig,
    rng: &mut RngStream,
) -> Result<(Params, DomainBnBank)> {
    opt.validate()?;
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("DIAL needs both source and target samples"));
    }
    let d = params.spec.input_dim;
    if source.dim() != d || target.cols() != d {
        return Err(Error::dim(
            "dial_train",
            d,
            format!("source {} / target {}", source.dim(), target.cols()),
        ));
    }
    source.check_labels(params.spec.num_classes)?;
    let (n_src, n_tgt) = split_batch(opt.batch_size, source.len(), target.rows())?;
    if n_tgt > target.rows() {
        return Err(Error::Config(format!(
            "target share {n_tgt} exceeds the {} available target samples",
            target.rows()
        )));
    }

    let mut target_stats = params.bn_globals();
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut target_order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for epoch in 0..opt.epochs {
        let order = rng.permutation(source.len());
        for batch in minibatches(&order, n_src) {
            let x = source.features.select_rows(&batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| source.labels[i]).collect();
            train_batch(&mut params, &x, &labels, opt, &mut velocity, epoch)?;

            // Target indices cycle through reshuffled passes of the target set.
            let mut picked = Vec::with_capacity(n_tgt);
            while picked.len() < n_tgt {
                if cursor == target_order.len() {
                    target_order = rng.permutation(target.rows());
                    cursor = 0;
                }
                picked.push(target_order[cursor]);
                cursor += 1;
            }
            let xt = target.select_rows(&picked)?;
            let pass = forward(&params, &xt, Regime::Train)?;
            let caches = pass.caches.expect("train regime keeps caches");
            for ((global, layer), bn) in target_stats.iter_mut().zip(&caches.hidden).zip(&params.bn)
            {
                ema_update(global, &layer.bn.stats, n_tgt, bn.train_momentum)?;
            }
        }
    }
    let mut bank = DomainBnBank::new();
    bank.insert(DomainId::Source, params.bn_globals());
    bank.insert(DomainId::Target, target_stats);
    Ok((params, bank))
}

/// Accuracy on `dataset` normalized with the bank's statistics for `domain`.
pub fn dial_evaluate(
    params: &Params,
    bank: &DomainBnBank,
    dataset: &Dataset,
    domain: DomainId,
) -> Result<f64> {
    let stats = bank.get(domain)?;
    evaluate(params, dataset, Regime::External(stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_split() {
        assert_eq!(split_batch(64, 360, 360).unwrap(), (32, 32));
        assert_eq!(split_batch(64, 100, 300).unwrap(), (16, 48));
        assert_eq!(split_batch(10, 3, 1).unwrap(), (8, 2));
    }

    #[test]
    fn split_errors() {
        assert!(split_batch(64, 0, 10).is_err());
        assert!(split_batch(64, 10, 0).is_err());
        assert!(matches!(split_batch(3, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn missing_bank_entry_is_an_error() {
        let mut bank = DomainBnBank::new();
        bank.insert(DomainId::Source, vec![BnStats::standard(2)]);
        assert!(bank.get(DomainId::Source).is_ok());
        assert!(matches!(
            bank.get(DomainId::Target),
            Err(Error::MissingStats(_))
        ));
        bank.insert(DomainId::Target, vec![]);
        assert!(bank.get(DomainId::Target).is_err());
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Dataset;
use crate::dial::{dial_evaluate, dial_train_from, DomainId};
use crate::domains::{Condition, Prototypes};
use crate::error::{Error, Result};
use crate::network::{evaluate, train, Params, Regime};
use crate::onda::run_stream;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BN")]
    Bn,
    #[serde(rename = "ONDA-25")]
    Onda25,
    #[serde(rename = "ONDA-50")]
    Onda50,
    #[serde(rename = "ONDA-90")]
    Onda90,
    #[serde(rename = "DIAL")]
    Dial,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Bn,
        Method::Onda25,
        Method::Onda50,
        Method::Onda90,
        Method::Dial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bn => "BN",
            Method::Onda25 => "ONDA-25",
            Method::Onda50 => "ONDA-50",
            Method::Onda90 => "ONDA-90",
            Method::Dial => "DIAL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub source: Condition,
    pub target: Condition,
    pub shift_distance: u8,
    pub method: Method,
    pub seed: u64,
    pub accuracy: f64,
}

impl ResultRow {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(Error::Parse(format!(
                "accuracy {} outside [0, 1]",
                self.accuracy
            )));
        }
        if self.shift_distance != self.source.shift_distance(&self.target) {
            return Err(Error::Parse(format!(
                "shift distance {} inconsistent with {} → {}",
                self.shift_distance, self.source, self.target
            )));
        }
        Ok(())
    }
}

/// Hashes of the parameters each method of one cell started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub source: Condition,
    pub target: Condition,
    pub seed: u64,
    pub source_hash: String,
    pub method_hashes: BTreeMap<Method, String>,
}

impl CellProvenance {
    pub fn consistent(&self) -> bool {
        self.method_hashes.len() == Method::ALL.len()
            && self.method_hashes.values().all(|h| *h == self.source_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub provenance: Vec<CellProvenance>,
}

pub(crate) fn train_key(source: Condition) -> String {
    format!("train/{source}")
}

/// The source model for one seed. Deterministic in `(config, source, seed)`.
pub fn train_source(
    cfg: &ExperimentConfig,
    protos: &Prototypes,
    source: Condition,
    seed: u64,
) -> Result<Params> {
    let data = cfg.generator.dataset(protos, source)?;
    train(
        &cfg.network,
        &data,
        &cfg.opt,
        &mut RngStream::for_key(seed, &train_key(source)),
    )
}

/// The target set in the stream order used for `seed`.
pub fn shuffled_stream(dataset: &Dataset, target: Condition, seed: u64) -> Result<Dataset> {
    let order = RngStream::for_key(seed, &format!("stream/{target}")).permutation(dataset.len());
    dataset.subset(&order)
}

struct Cell {
    rows: Vec<ResultRow>,
    provenance: CellProvenance,
}

fn run_cell(
    cfg: &ExperimentConfig,
    source: Condition,
    target: Condition,
    seed: u64,
    params: &Params,
    source_data: &Dataset,
    target_data: &Dataset,
) -> Result<Cell> {
    let source_hash = params.hash();
    let mut hashes = BTreeMap::new();
    let mut acc = BTreeMap::new();

    hashes.insert(Method::Bn, params.hash());
    acc.insert(Method::Bn, evaluate(params, target_data, Regime::Eval)?);

    let stream = shuffled_stream(target_data, target, seed)?;
    let trace = run_stream(
        params,
        &params.bn_globals(),
        &cfg.adaptation,
        &stream.features,
        Some(&stream.labels),
    )?;
    let onda_hash = params.hash();
    for (method, fraction) in [
        (Method::Onda25, 0.25),
        (Method::Onda50, 0.5),
        (Method::Onda90, 0.9),
    ] {
        let cp = trace.checkpoint(fraction).expect("standard checkpoint");
        acc.insert(method, cp.accuracy.expect("labeled stream"));
        hashes.insert(method, onda_hash.clone());
    }

    let start = params.clone();
    hashes.insert(Method::Dial, start.hash());
    let mut rng = RngStream::for_key(seed, &format!("dial/{source}/{target}"));
    let (dial_params, bank) = dial_train_from(
        start,
        source_data,
        &target_data.features,
        &cfg.opt,
        &mut rng,
    )?;
    acc.insert(
        Method::Dial,
        dial_evaluate(&dial_params, &bank, target_data, DomainId::Target)?,
    );

    let shift_distance = source.shift_distance(&target);
    let rows = Method::ALL
        .iter()
        .map(|&method| ResultRow {
            source,
            target,
            shift_distance,
            method,
            seed,
            accuracy: acc[&method],
        })
        .collect();
    Ok(Cell {
        rows,
        provenance: CellProvenance {
            source,
            target,
            seed,
            source_hash,
            method_hashes: hashes,
        },
    })
}

/// Frozen BN, ONDA at three checkpoints and DIAL for every (source, target, seed).
///
/// Cells run in parallel on the current rayon pool; the output order is fixed
/// (source, target, seed, method) regardless of scheduling.
pub fn run_shift_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let protos = cfg.generator.prototypes()?;
    let mut conditions: Vec<Condition> = cfg.sources.clone();
    for s in &cfg.sources {
        conditions.extend(cfg.targets_for(*s));
    }
    conditions.sort();
    conditions.dedup();
    let datasets: BTreeMap<Condition, Dataset> = conditions
        .par_iter()
        .map(|&c| Ok((c, cfg.generator.dataset(&protos, c)?)))
        .collect::<Result<_>>()?;

    let model_jobs: Vec<(Condition, u64)> = cfg
        .sources
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let models: BTreeMap<(Condition, u64), Params> = model_jobs
        .par_iter()
        .map(|&(s, seed)| {
            let p = train(
                &cfg.network,
                &datasets[&s],
                &cfg.opt,
                &mut RngStream::for_key(seed, &train_key(s)),
            )?;
            info!("trained source {s} seed {seed}");
            Ok(((s, seed), p))
        })
        .collect::<Result<_>>()?;

    let cell_jobs: Vec<(Condition, Condition, u64)> = cfg
        .sources
        .iter()
        .flat_map(|&s| {
            cfg.targets_for(s)
                .into_iter()
                .flat_map(move |t| cfg.seeds.iter().map(move |&seed| (s, t, seed)))
        })
        .collect();
    let cells: Vec<Cell> = cell_jobs
        .par_iter()
        .map(|&(s, t, seed)| {
            run_cell(
                cfg,
                s,
                t,
                seed,
                &models[&(s, seed)],
                &datasets[&s],
                &datasets[&t],
            )
        })
        .collect::<Result<_>>()?;

    let mut out = StudyOutput {
        rows: Vec::with_capacity(cells.len() * Method::ALL.len()),
        provenance: Vec::with_capacity(cells.len()),
    };
    for cell in cells {
        out.rows.extend(cell.rows);
        out.provenance.push(cell.provenance);
    }
    Ok(out)
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::mean;
use super::study::{Method, ResultRow};
use crate::domains::Condition;
use crate::error::{Error, Result};

/// Seed-averaged accuracies of one (source, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub source: Condition,
    pub target: Condition,
    pub shift_distance: u8,
    pub seeds: usize,
    pub bn: f64,
    pub onda25: f64,
    pub onda50: f64,
    pub onda90: f64,
    pub dial: f64,
    /// `(ONDA-90 − BN)/(DIAL − BN)`, present only when the gap reaches the threshold.
    pub gap_closure: Option<f64>,
}

impl TargetSummary {
    pub fn gap(&self) -> f64 {
        self.dial - self.bn
    }

    pub fn gain(&self) -> f64 {
        self.onda90 - self.bn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub shift_distance: u8,
    pub targets: usize,
    pub bn: f64,
    pub onda90: f64,
    pub dial: f64,
    /// Mean of ONDA-90 − BN over the targets at this distance.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: Condition,
    pub onda25: f64,
    pub onda50: f64,
    pub onda90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub gap_threshold: f64,
    pub targets: Vec<TargetSummary>,
    pub shifts: Vec<ShiftSummary>,
    pub sources: Vec<SourceSummary>,
    /// Mean gap-closure ratio over the targets that carry one.
    pub mean_gap_closure: Option<f64>,
}

/// Aggregates result rows. Output order depends only on the row contents.
pub fn summarize(rows: &[ResultRow], gap_threshold: f64) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows"));
    }
    let mut cells: BTreeMap<(Condition, Condition), BTreeMap<Method, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        r.validate()?;
        cells
            .entry((r.source, r.target))
            .or_default()
            .entry(r.method)
            .or_default()
            .push(r.accuracy);
    }

    let mut targets = Vec::with_capacity(cells.len());
    for ((source, target), by_method) in &cells {
        let m = |method: Method| -> Result<f64> {
            by_method
                .get(&method)
                .map(|v| mean(v))
                .ok_or_else(|| Error::Parse(format!("{source} → {target}: no {method} rows")))
        };
        let seeds = by_method.values().map(Vec::len).max().unwrap_or(0);
        let mut t = TargetSummary {
            source: *source,
            target: *target,
            shift_distance: source.shift_distance(target),
            seeds,
            bn: m(Method::Bn)?,
            onda25: m(Method::Onda25)?,
            onda50: m(Method::Onda50)?,
            onda90: m(Method::Onda90)?,
            dial: m(Method::Dial)?,
            gap_closure: None,
        };
        if t.gap() >= gap_threshold && t.gap() > 0.0 {
            t.gap_closure = Some(t.gain() / t.gap());
        }
        targets.push(t);
    }

    let mut by_shift: BTreeMap<u8, Vec<&TargetSummary>> = BTreeMap::new();
    let mut by_source: BTreeMap<Condition, Vec<&TargetSummary>> = BTreeMap::new();
    for t in &targets {
        by_shift.entry(t.shift_distance).or_default().push(t);
        by_source.entry(t.source).or_default().push(t);
    }
    let avg = |ts: &[&TargetSummary], f: fn(&TargetSummary) -> f64| {
        mean(&ts.iter().map(|t| f(t)).collect::<Vec<_>>())
    };
    let shifts = by_shift
        .iter()
        .map(|(&d, ts)| ShiftSummary {
            shift_distance: d,
            targets: ts.len(),
            bn: avg(ts, |t| t.bn),
            onda90: avg(ts, |t| t.onda90),
            dial: avg(ts, |t| t.dial),
            gain: avg(ts, TargetSummary::gain),
        })
        .collect();
    let sources = by_source
        .iter()
        .map(|(&s, ts)| SourceSummary {
            source: s,
            onda25: avg(ts, |t| t.onda25),
            onda50: avg(ts, |t| t.onda50),
            onda90: avg(ts, |t| t.onda90),
        })
        .collect();
    let ratios: Vec<f64> = targets.iter().filter_map(|t| t.gap_closure).collect();
    Ok(Summary {
        gap_threshold,
        mean_gap_closure: (!ratios.is_empty()).then(|| mean(&ratios)),
        targets,
        shifts,
        sources,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl Summary {
    pub fn shift(&self, distance: u8) -> Option<&ShiftSummary> {
        self.shifts.iter().find(|s| s.shift_distance == distance)
    }

    /// Per-target table; empty ratio cells mark gaps below the threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,shift_distance,seeds,BN,ONDA-25,ONDA-50,ONDA-90,DIAL,gain,gap,gap_closure\n");
        for t in &self.targets {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                t.source,
                t.target,
                t.shift_distance,
                t.seeds,
                t.bn,
                t.onda25,
                t.onda50,
                t.onda90,
                t.dial,
                t.gain(),
                t.gap(),
                t.gap_closure
                    .map_or_else(String::new, |r| format!("{r:.6}")),
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Per-target mean accuracy");
        let _ = writeln!(
            out,
            "{:<26} {:<26} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "source", "target", "shift", "BN", "ONDA-25", "ONDA-50", "ONDA-90", "DIAL", "closure"
        );
        for t in &self.targets {
            let _ = writeln!(
                out,
                "{:<26} {:<26} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7}",
                t.source.to_string(),
                t.target.to_string(),
                t.shift_distance,
                t.bn,
                t.onda25,
                t.onda50,
                t.onda90,
                t.dial,
                opt(t.gap_closure)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Mean by shift distance");
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "shift", "targets", "BN", "ONDA-90", "DIAL", "gain"
        );
        for s in &self.shifts {
            let _ = writeln!(
                out,
                "{:>5} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>+7.4}",
                s.shift_distance, s.targets, s.bn, s.onda90, s.dial, s.gain
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Progression by source");
        let _ = writeln!(
            out,
            "{:<26} {:>7} {:>7} {:>7}",
            "source", "ONDA-25", "ONDA-50", "ONDA-90"
        );
        for s in &self.sources {
            let _ = writeln!(
                out,
                "{:<26} {:>7.4} {:>7.4} {:>7.4}",
                s.source.to_string(),
                s.onda25,
                s.onda50,
                s.onda90
            );
        }
        let _ = writeln!(out);
        let rated = self
            .targets
            .iter()
            .filter(|t| t.gap_closure.is_some())
            .count();
        let _ = writeln!(
            out,
            "Gap closure (DIAL - BN >= {:.2}): {} of {} targets, mean ratio {}",
            self.gap_threshold,
            rated,
            self.targets.len(),
            opt(self.mean_gap_closure)
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(bn: f64, onda: f64, dial: f64) -> Vec<ResultRow> {
        let source: Condition = "artificial-kinect-white".parse().unwrap();
        let mut out = vec![];
        for target in ["cloudy-kinect-white", "cloudy-webcam-brown"] {
            let target: Condition = target.parse().unwrap();
            for seed in 1..=2 {
                for (method, acc) in [
                    (Method::Bn, bn),
                    (Method::Onda25, onda),
                    (Method::Onda50, onda),
                    (Method::Onda90, onda),
                    (Method::Dial, dial),
                ] {
                    out.push(ResultRow {
                        source,
                        target,
                        shift_distance: source.shift_distance(&target),
                        method,
                        seed,
                        accuracy: acc,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn onda_equal_to_dial_closes_the_gap() {
        let s = summarize(&rows(0.5, 0.9, 0.9), 0.05).unwrap();
        assert_eq!(s.mean_gap_closure, Some(1.0));
        assert!(s.targets.iter().all(|t| t.gap_closure == Some(1.0)));
    }

    #[test]
    fn onda_equal_to_bn_closes_nothing() {
        let s = summarize(&rows(0.5, 0.5, 0.9), 0.05).unwrap();
        assert_eq!(s.mean_gap_closure, Some(0.0));
    }

    #[test]
    fn small_gaps_are_listed_without_ratio() {
        let s = summarize(&rows(0.9, 0.92, 0.93), 0.05).unwrap();
        assert_eq!(s.targets.len(), 2);
        assert!(s.targets.iter().all(|t| t.gap_closure.is_none()));
        assert_eq!(s.mean_gap_closure, None);
        assert!(s.to_text().contains("      -"));
    }

    #[test]
    fn shift_grouping() {
        let s = summarize(&rows(0.5, 0.7, 0.9), 0.05).unwrap();
        let d: Vec<u8> = s.shifts.iter().map(|x| x.shift_distance).collect();
        assert_eq!(d, vec![1, 3]);
        assert!((s.shift(1).unwrap().gain - 0.2).abs() < 1e-12);
        assert_eq!(s.targets[0].seeds, 2);
    }

    #[test]
    fn empty_and_incomplete_input() {
        assert!(matches!(summarize(&[], 0.05), Err(Error::Empty(_))));
        let mut r = rows(0.5, 0.7, 0.9);
        r.retain(|x| x.method != Method::Dial);
        assert!(summarize(&r, 0.05).is_err());
    }
}

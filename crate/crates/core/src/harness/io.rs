//! On-disk formats. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ablation::{AblationResult, SweepCurve};
use super::study::ResultRow;
use crate::data::Dataset;
use crate::domains::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(path, &results_to_csv(rows)?)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: ResultRow = rec?;
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}

/// File stem shared by a domain's CSV and manifest.
pub fn dataset_paths(dir: &Path, manifest: &DatasetManifest) -> (PathBuf, PathBuf) {
    let stem = manifest.domain.to_string();
    (
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}.manifest.json")),
    )
}

/// One row per sample: label, category, then the features with 17 significant digits.
pub fn dataset_to_csv(dataset: &Dataset, categories: &[usize]) -> Result<Vec<u8>> {
    let d = dataset.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string(), "category".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let label = dataset.labels[i];
        let category = *categories.get(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: categories.len(),
        })?;
        let mut rec = vec![label.to_string(), category.to_string()];
        rec.extend(dataset.features.row(i).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn save_dataset(dir: &Path, manifest: &DatasetManifest, dataset: &Dataset) -> Result<()> {
    let (csv_path, manifest_path) = dataset_paths(dir, manifest);
    write_atomic(&csv_path, &dataset_to_csv(dataset, &manifest.categories)?)?;
    write_json(&manifest_path, manifest)
}

/// Loads a dataset and checks it against its manifest.
pub fn load_dataset(csv_path: &Path, manifest_path: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Parse(format!(
                "dataset row with {} fields",
                rec.len()
            )));
        }
        let d = rec.len() - 2;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Parse("ragged dataset rows".into()));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
        };
        let label = parse_usize(&rec[0])?;
        let category = parse_usize(&rec[1])?;
        if manifest.categories.get(label) != Some(&category) {
            return Err(Error::Parse(format!(
                "label {label} has category {category}, manifest disagrees"
            )));
        }
        labels.push(label);
        for s in rec.iter().skip(2) {
            data.push(
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))?,
            );
        }
    }
    let dim = dim.ok_or(Error::Empty("dataset file"))?;
    if labels.len() != manifest.num_classes * manifest.samples_per_class {
        return Err(Error::Parse(format!(
            "{} rows, manifest expects {}",
            labels.len(),
            manifest.num_classes * manifest.samples_per_class
        )));
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    let dataset = Dataset::new(features, labels)?;
    dataset.check_labels(manifest.num_classes)?;
    Ok((manifest, dataset))
}

pub fn trajectory_file_name(result: &AblationResult, curve: &SweepCurve) -> String {
    format!("trajectory_{}_{}.csv", result.param, curve.value)
}

pub fn trajectory_to_csv(curve: &SweepCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["update_index", "mean_accuracy", "std_accuracy"])?;
    for (k, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
        w.write_record(&[(k + 1).to_string(), m.to_string(), s.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes one trajectory file per swept value plus `ablation_<param>.json`.
pub fn write_ablation(dir: &Path, result: &AblationResult) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for curve in &result.curves {
        let path = dir.join(trajectory_file_name(result, curve));
        write_atomic(&path, &trajectory_to_csv(curve)?)?;
        written.push(path);
    }
    let path = dir.join(format!("ablation_{}.json", result.param));
    write_json(&path, result)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn extreme_floats_survive_the_dataset_format() {
        let vals = [
            0.1,
            -1.0 / 3.0,
            f64::MIN_POSITIVE,
            1e300,
            -0.0,
            5e-324,
            std::f64::consts::PI,
        ];
        for v in vals {
            let s = format!("{v:.16e}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}

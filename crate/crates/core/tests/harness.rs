use std::fs;

use onda::domains::Condition;
use onda::harness::{
    io, run_ablation, run_shift_study, summarize, AblationRequest, ExperimentConfig, Method,
    SweepParam,
};
use onda::network::OptConfig;

fn cond(s: &str) -> Condition {
    s.parse().unwrap()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        sources: vec![cond("artificial-kinect-white")],
        targets: Some(vec![
            cond("cloudy-kinect-white"),
            cond("cloudy-webcam-brown"),
        ]),
        seeds: vec![1, 2],
        opt: OptConfig {
            epochs: 6,
            lr_drop_epoch: 5,
            ..OptConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn study_rows_and_provenance() {
    let cfg = small_config();
    let out = run_shift_study(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2 * 2 * 5);
    assert_eq!(out.provenance.len(), 4);
    assert!(out.provenance.iter().all(|p| p.consistent()));
    for seed in [1, 2] {
        let hashes: Vec<&String> = out
            .provenance
            .iter()
            .filter(|p| p.seed == seed)
            .map(|p| &p.source_hash)
            .collect();
        assert!(
            hashes.windows(2).all(|w| w[0] == w[1]),
            "one source model per seed"
        );
    }
    for r in &out.rows {
        r.validate().unwrap();
        assert_eq!(r.shift_distance, r.source.shift_distance(&r.target));
    }
    let methods: Vec<Method> = out.rows[..5].iter().map(|r| r.method).collect();
    assert_eq!(methods, Method::ALL.to_vec());
}

#[test]
fn zero_alpha_onda_rows_equal_bn_rows() {
    let mut cfg = small_config();
    cfg.adaptation.alpha = 0.0;
    let out = run_shift_study(&cfg).unwrap();
    for cell in out.rows.chunks(5) {
        let bn = cell[0].accuracy;
        assert_eq!(cell[0].method, Method::Bn);
        for r in &cell[1..4] {
            assert_eq!(
                r.accuracy.to_bits(),
                bn.to_bits(),
                "{} {}",
                r.target,
                r.method
            );
        }
    }
}

#[test]
fn study_is_deterministic_across_thread_counts() {
    let cfg = small_config();
    let a = io::results_to_csv(&run_shift_study(&cfg).unwrap().rows).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = io::results_to_csv(&pool.install(|| run_shift_study(&cfg)).unwrap().rows).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_regenerates_byte_identically_from_csv() {
    let cfg = small_config();
    let rows = run_shift_study(&cfg).unwrap().rows;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    io::write_results(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("source,target,shift_distance,method,seed,accuracy\n"));

    let back = io::read_results(&path).unwrap();
    assert_eq!(back, rows);
    let a = summarize(&rows, cfg.gap_threshold).unwrap();
    let b = summarize(&back, cfg.gap_threshold).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn malformed_results_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let header = "source,target,shift_distance,method,seed,accuracy\n";
    fs::write(
        &path,
        format!("{header}artificial-kinect-white,cloudy-kinect-white,1,ONDA-75,1,0.5\n"),
    )
    .unwrap();
    assert!(io::read_results(&path).is_err());
    fs::write(
        &path,
        format!("{header}artificial-kinect-white,cloudy-kinect-white,1,BN,1,1.5\n"),
    )
    .unwrap();
    assert!(io::read_results(&path).is_err());
    fs::write(
        &path,
        format!("{header}artificial-kinect-white,cloudy-kinect-white,2,BN,1,0.5\n"),
    )
    .unwrap();
    assert!(io::read_results(&path).is_err());
}

#[test]
fn dataset_round_trip_is_lossless() {
    let cfg = ExperimentConfig::default();
    let protos = cfg.generator.prototypes().unwrap();
    let c = cond("directed-webcam-brown");
    let data = cfg.generator.dataset(&protos, c).unwrap();
    let manifest = cfg.generator.manifest(&protos, c);
    let dir = tempfile::tempdir().unwrap();
    io::save_dataset(dir.path(), &manifest, &data).unwrap();
    let (csv_path, manifest_path) = io::dataset_paths(dir.path(), &manifest);
    let (m2, d2) = io::load_dataset(&csv_path, &manifest_path).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(d2.labels, data.labels);
    let bits = |d: &onda::data::Dataset| {
        d.features
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&d2), bits(&data));
    assert_eq!(m2.categories, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);

    // A manifest that disagrees with the file is an error.
    let mut wrong = manifest.clone();
    wrong.samples_per_class += 1;
    io::write_json(&manifest_path, &wrong).unwrap();
    assert!(io::load_dataset(&csv_path, &manifest_path).is_err());
}

#[test]
fn params_json_round_trip_is_bit_exact() {
    let cfg = small_config();
    let protos = cfg.generator.prototypes().unwrap();
    let params = onda::harness::train_source(&cfg, &protos, cfg.sources[0], 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    io::write_json(&path, &params).unwrap();
    let back: onda::network::Params = io::read_json(&path).unwrap();
    assert_eq!(back, params);
    assert_eq!(back.hash(), params.hash());
}

#[test]
fn ablation_trajectory_lengths() {
    let mut cfg = small_config();
    cfg.ablation.samples_per_class = 10;
    cfg.ablation.nt_values = vec![2, 7, 30];
    cfg.ablation.final_window = 2;
    let r = run_ablation(&cfg, AblationRequest::sweep(SweepParam::Nt, &cfg)).unwrap();
    assert_eq!(r.stream_len, 90);
    for c in &r.curves {
        assert_eq!(c.mean.len(), 90 / c.n_t);
        assert_eq!(c.per_seed.len(), 2);
        assert!(c.per_seed.iter().all(|t| t.len() == 90 / c.n_t));
    }
    let dir = tempfile::tempdir().unwrap();
    let files = io::write_ablation(dir.path(), &r).unwrap();
    assert_eq!(files.len(), 4);
    let csv = fs::read_to_string(dir.path().join("trajectory_nt_7.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "update_index,mean_accuracy,std_accuracy");
    assert_eq!(lines.len(), 1 + 12);
    assert!(lines[1].starts_with("1,"));
}

//! Synthetic multi-domain benchmark.
//!
//! Nine object classes in three categories are observed under a grid of
//! acquisition conditions: three illuminations, two cameras and two
//! backgrounds (twelve domains). Each sample is a class-conditional Gaussian
//! feature vector passed through the condition's transform:
//!
//! ```text
//! x ← gain ⊙ (contrast · x + brightness) + camera noise
//! x[clutter] ← background mean + background noise + camera noise
//! ```
//!
//! All magnitudes live in [`GeneratorConfig`], not in code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::hex;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Artificial,
    Cloudy,
    Directed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    Kinect,
    Webcam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    White,
    Brown,
}

impl Illumination {
    pub const ALL: [Illumination; 3] = [
        Illumination::Artificial,
        Illumination::Cloudy,
        Illumination::Directed,
    ];

    fn name(self) -> &'static str {
        match self {
            Illumination::Artificial => "artificial",
            Illumination::Cloudy => "cloudy",
            Illumination::Directed => "directed",
        }
    }
}

impl Camera {
    pub const ALL: [Camera; 2] = [Camera::Kinect, Camera::Webcam];

    fn name(self) -> &'static str {
        match self {
            Camera::Kinect => "kinect",
            Camera::Webcam => "webcam",
        }
    }
}

impl Background {
    pub const ALL: [Background; 2] = [Background::White, Background::Brown];

    fn name(self) -> &'static str {
        match self {
            Background::White => "white",
            Background::Brown => "brown",
        }
    }
}

/// The acquisition condition identifying a domain, written `illumination-camera-background`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Condition {
    pub illumination: Illumination,
    pub camera: Camera,
    pub background: Background,
}

impl Condition {
    pub const fn new(illumination: Illumination, camera: Camera, background: Background) -> Self {
        Self {
            illumination,
            camera,
            background,
        }
    }

    /// All twelve conditions, illumination-major.
    pub fn all() -> Vec<Condition> {
        let mut out = Vec::with_capacity(12);
        for i in Illumination::ALL {
            for c in Camera::ALL {
                for b in Background::ALL {
                    out.push(Condition::new(i, c, b));
                }
            }
        }
        out
    }

    /// Number of differing condition axes.
    pub fn shift_distance(&self, other: &Condition) -> u8 {
        u8::from(self.illumination != other.illumination)
            + u8::from(self.camera != other.camera)
            + u8::from(self.background != other.background)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            self.illumination.name(),
            self.camera.name(),
            self.background.name()
        )
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let bad = || {
            Error::Parse(format!(
                "unknown domain id {s:?} (expected e.g. artificial-kinect-white)"
            ))
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let illumination = Illumination::ALL
            .into_iter()
            .find(|v| v.name() == parts[0])
            .ok_or_else(bad)?;
        let camera = Camera::ALL
            .into_iter()
            .find(|v| v.name() == parts[1])
            .ok_or_else(bad)?;
        let background = Background::ALL
            .into_iter()
            .find(|v| v.name() == parts[2])
            .ok_or_else(bad)?;
        Ok(Condition::new(illumination, camera, background))
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Numeric transform of one acquisition condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub condition: Condition,
    pub brightness: Vec<f64>,
    pub contrast: f64,
    pub gain: Vec<f64>,
    pub noise_std: f64,
    /// Half-open range of dimensions overwritten by the background.
    pub clutter_start: usize,
    pub clutter_end: usize,
    pub background_mean: Vec<f64>,
    pub background_std: f64,
}

impl DomainSpec {
    /// The transform that leaves class samples untouched.
    pub fn identity(condition: Condition, dim: usize) -> Self {
        Self {
            condition,
            brightness: vec![0.0; dim],
            contrast: 1.0,
            gain: vec![1.0; dim],
            noise_std: 0.0,
            clutter_start: dim,
            clutter_end: dim,
            background_mean: vec![],
            background_std: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.brightness.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(Error::Config(format!("domain {}: {m}", self.condition)));
        if self.gain.len() != d {
            return bad(format!(
                "gain has {} entries, expected {d}",
                self.gain.len()
            ));
        }
        if self.gain.iter().any(|&g| !(g > 0.0)) {
            return bad("gain entries must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !(self.background_std >= 0.0) {
            return bad("noise standard deviations must be nonnegative".into());
        }
        if self.clutter_start > self.clutter_end || self.clutter_end > d {
            return bad(format!(
                "clutter range {}..{} outside 0..{d}",
                self.clutter_start, self.clutter_end
            ));
        }
        if self.background_mean.len() != self.clutter_end - self.clutter_start {
            return bad("background mean must cover the clutter range".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("spec serializes"),
        ))
    }
}

pub fn shift_distance(a: &DomainSpec, b: &DomainSpec) -> u8 {
    a.condition.shift_distance(&b.condition)
}

/// Per-level parameters of one illumination setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationLevel {
    pub brightness: Vec<f64>,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraLevel {
    pub gain: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundLevel {
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrototypeConfig {
    pub num_classes: usize,
    pub num_categories: usize,
    pub dim: usize,
    /// Class means are zero outside the first `informative_dims` dimensions.
    pub informative_dims: usize,
    pub within_class_std: f64,
    pub anchor_scale: f64,
    pub class_scale: f64,
    /// Minimum pairwise distance of class means, in units of the within-class std.
    pub min_separation: f64,
    pub max_attempts: usize,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            num_classes: 9,
            num_categories: 3,
            dim: 16,
            informative_dims: 12,
            within_class_std: 1.0,
            anchor_scale: 1.5,
            class_scale: 1.5,
            min_separation: 3.0,
            max_attempts: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub prototypes: PrototypeConfig,
    pub samples_per_class: usize,
    /// Seed of the class prototypes and of every domain's samples.
    pub data_seed: u64,
    pub clutter_dims: usize,
    pub artificial: IlluminationLevel,
    pub cloudy: IlluminationLevel,
    pub directed: IlluminationLevel,
    pub kinect: CameraLevel,
    pub webcam: CameraLevel,
    pub white: BackgroundLevel,
    pub brown: BackgroundLevel,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let d = 16;
        let informative = 12;
        let pad = |v: Vec<f64>| {
            let mut v = v;
            v.resize(d, 0.0);
            v
        };
        // Directed light brightens one side of the feature space and darkens the other.
        let directed: Vec<f64> = (0..informative)
            .map(|i| if i < informative / 2 { 1.7 } else { -0.85 })
            .collect();
        // The webcam over-amplifies even dimensions and attenuates odd ones.
        let webcam: Vec<f64> = (0..d)
            .map(|i| if i % 2 == 0 { 1.45 } else { 0.67 })
            .collect();
        Self {
            prototypes: PrototypeConfig::default(),
            samples_per_class: 40,
            data_seed: 2018,
            clutter_dims: 4,
            artificial: IlluminationLevel {
                brightness: vec![0.0; d],
                contrast: 1.0,
            },
            cloudy: IlluminationLevel {
                brightness: pad(vec![-1.1; informative]),
                contrast: 0.65,
            },
            directed: IlluminationLevel {
                brightness: pad(directed),
                contrast: 1.3,
            },
            kinect: CameraLevel {
                gain: vec![1.0; d],
                noise_std: 0.2,
            },
            webcam: CameraLevel {
                gain: webcam,
                noise_std: 0.4,
            },
            white: BackgroundLevel {
                mean: vec![2.6; 4],
                std: 0.5,
            },
            brown: BackgroundLevel {
                mean: vec![-2.0; 4],
                std: 0.8,
            },
        }
    }
}

impl GeneratorConfig {
    pub fn dim(&self) -> usize {
        self.prototypes.dim
    }

    pub fn spec(&self, condition: Condition) -> DomainSpec {
        let ill = match condition.illumination {
            Illumination::Artificial => &self.artificial,
            Illumination::Cloudy => &self.cloudy,
            Illumination::Directed => &self.directed,
        };
        let cam = match condition.camera {
            Camera::Kinect => &self.kinect,
            Camera::Webcam => &self.webcam,
        };
        let bg = match condition.background {
            Background::White => &self.white,
            Background::Brown => &self.brown,
        };
        let d = self.dim();
        DomainSpec {
            condition,
            brightness: ill.brightness.clone(),
            contrast: ill.contrast,
            gain: cam.gain.clone(),
            noise_std: cam.noise_std,
            clutter_start: d.saturating_sub(self.clutter_dims),
            clutter_end: d,
            background_mean: bg.mean.clone(),
            background_std: bg.std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prototypes.validate()?;
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if self.clutter_dims > self.dim() {
            return Err(Error::Config(
                "clutter block larger than the feature dimension".into(),
            ));
        }
        for spec in domain_grid_with(self) {
            if spec.dim() != self.dim() {
                return Err(Error::Config(format!(
                    "domain {}: brightness has wrong length",
                    spec.condition
                )));
            }
            spec.validate()?;
        }
        Ok(())
    }

    /// The class prototypes shared by every domain.
    pub fn prototypes(&self) -> Result<Prototypes> {
        make_prototypes(
            &mut RngStream::for_key(self.data_seed, "prototypes"),
            &self.prototypes,
        )
    }

    /// The benchmark dataset of one domain; a pure function of `(data_seed, condition)`.
    pub fn dataset(&self, prototypes: &Prototypes, condition: Condition) -> Result<Dataset> {
        let mut rng = RngStream::for_key(self.data_seed, &format!("domain/{condition}"));
        sample_domain(
            &mut rng,
            prototypes,
            &self.spec(condition),
            self.samples_per_class,
        )
    }

    /// An independent draw from the same domain, for held-out evaluation.
    pub fn held_out(&self, prototypes: &Prototypes, condition: Condition) -> Result<Dataset> {
        let mut rng = RngStream::for_key(self.data_seed, &format!("held-out/{condition}"));
        sample_domain(
            &mut rng,
            prototypes,
            &self.spec(condition),
            self.samples_per_class,
        )
    }

    pub fn manifest(&self, prototypes: &Prototypes, condition: Condition) -> DatasetManifest {
        DatasetManifest {
            domain: condition,
            spec_hash: self.spec(condition).hash(),
            num_classes: prototypes.num_classes(),
            num_categories: self.prototypes.num_categories,
            categories: prototypes.categories.clone(),
            samples_per_class: self.samples_per_class,
            seed: self.data_seed,
        }
    }
}

/// The twelve domains of the default generator.
pub fn domain_grid() -> Vec<DomainSpec> {
    domain_grid_with(&GeneratorConfig::default())
}

pub fn domain_grid_with(cfg: &GeneratorConfig) -> Vec<DomainSpec> {
    Condition::all().into_iter().map(|c| cfg.spec(c)).collect()
}

impl PrototypeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        if self.dim < 4 {
            return Err(Error::Config("feature dimension must be at least 4".into()));
        }
        if self.informative_dims == 0 || self.informative_dims > self.dim {
            return Err(Error::Config("informative_dims must lie in 1..=dim".into()));
        }
        if self.num_categories == 0 || self.num_categories > self.num_classes {
            return Err(Error::Config(
                "category count must lie in 1..=num_classes".into(),
            ));
        }
        if !(self.within_class_std > 0.0)
            || !(self.anchor_scale >= 0.0)
            || !(self.class_scale >= 0.0)
        {
            return Err(Error::Config(
                "prototype scales must be nonnegative, within-class std positive".into(),
            ));
        }
        Ok(())
    }
}

/// Class-conditional Gaussians: `N(means[c], within_std² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub means: Vec<Vec<f64>>,
    pub within_std: Vec<f64>,
    /// Category of every class.
    pub categories: Vec<usize>,
}

impl Prototypes {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Smallest pairwise distance between class means.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.means.len() {
            for j in i + 1..self.means.len() {
                best = best.min(euclidean(&self.means[i], &self.means[j]));
            }
        }
        best
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Class `c` belongs to category `c · K / C`, giving contiguous equal-size groups.
pub fn category_of(class: usize, num_classes: usize, num_categories: usize) -> usize {
    class * num_categories / num_classes
}

/// Draws class means clustered around one anchor per category, rejecting draws
/// whose closest pair is nearer than `min_separation` within-class stds.
pub fn make_prototypes(rng: &mut RngStream, cfg: &PrototypeConfig) -> Result<Prototypes> {
    cfg.validate()?;
    let (c, d, k) = (cfg.num_classes, cfg.dim, cfg.num_categories);
    let categories: Vec<usize> = (0..c).map(|i| category_of(i, c, k)).collect();
    let threshold = cfg.min_separation * cfg.within_class_std;
    if cfg.anchor_scale == 0.0 && cfg.class_scale == 0.0 && threshold > 0.0 {
        return Err(Error::Degenerate("all class means would coincide".into()));
    }
    for _ in 0..cfg.max_attempts {
        let anchors: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..cfg.informative_dims)
                    .map(|_| cfg.anchor_scale * rng.gaussian())
                    .collect()
            })
            .collect();
        let means: Vec<Vec<f64>> = categories
            .iter()
            .map(|&cat| {
                let mut m: Vec<f64> = anchors[cat]
                    .iter()
                    .map(|a| a + cfg.class_scale * rng.gaussian())
                    .collect();
                m.resize(d, 0.0);
                m
            })
            .collect();
        let protos = Prototypes {
            means,
            within_std: vec![cfg.within_class_std; c],
            categories: categories.clone(),
        };
        if protos.min_pairwise_distance() >= threshold {
            return Ok(protos);
        }
    }
    Err(Error::Degenerate(format!(
        "no prototype draw reached separation {threshold} in {} attempts",
        cfg.max_attempts
    )))
}

/// `n_per_class` samples of every class, class-major, transformed by `domain`.
pub fn sample_domain(
    rng: &mut RngStream,
    prototypes: &Prototypes,
    domain: &DomainSpec,
    n_per_class: usize,
) -> Result<Dataset> {
    domain.validate()?;
    let d = prototypes.dim();
    if domain.dim() != d {
        return Err(Error::dim("sample_domain", d, domain.dim()));
    }
    let n = prototypes.num_classes() * n_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in prototypes.means.iter().enumerate() {
        let std = prototypes.within_std[class];
        for _ in 0..n_per_class {
            let mut x: Vec<f64> = mean.iter().map(|m| m + std * rng.gaussian()).collect();
            for ((v, g), b) in x.iter_mut().zip(&domain.gain).zip(&domain.brightness) {
                *v = g * (domain.contrast * *v + b);
                if domain.noise_std > 0.0 {
                    *v += domain.noise_std * rng.gaussian();
                }
            }
            for (j, m) in (domain.clutter_start..domain.clutter_end).zip(&domain.background_mean) {
                x[j] = m + domain.background_std * rng.gaussian();
                if domain.noise_std > 0.0 {
                    x[j] += domain.noise_std * rng.gaussian();
                }
            }
            data.extend(x);
            labels.push(class);
        }
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels)
}

/// Metadata persisted next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain: Condition,
    pub spec_hash: String,
    pub num_classes: usize,
    pub num_categories: usize,
    pub categories: Vec<usize>,
    pub samples_per_class: usize,
    pub seed: u64,
}

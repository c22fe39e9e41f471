//! Synthetic dataset generator.
//!
//! Each landmark class is a mixture of a few well-separated modes (the
//! stand-in for typical shooting angles), non-landmark samples come from a
//! broad background distribution, and an optional fraction of each class is
//! planted far away from all of its modes and flagged as outliers in the
//! ground truth. Everything is a pure function of the spec: the generator
//! runs on a ChaCha12 stream seeded from `spec.seed`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Embedding, LabeledSample, LandmarkMetadata};
use crate::error::{Error, Result};
use crate::kv::KvReader;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: u32,
    /// Inclusive range of modes per class.
    pub modes_per_class: (u32, u32),
    /// Inclusive range of samples per class.
    pub samples_per_class: (u32, u32),
    pub non_landmark_count: u32,
    pub d_in: usize,
    /// Radius at which mode centers are planted.
    pub mode_spread: f64,
    /// Gaussian noise sigma around each mode center.
    pub within_mode_noise: f64,
    /// Fraction of each class planted far from all its modes.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 50,
            modes_per_class: (2, 3),
            samples_per_class: (80, 120),
            non_landmark_count: 2000,
            d_in: 64,
            mode_spread: 10.0,
            within_mode_noise: 0.5,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 1
            || self.modes_per_class.0 < 1
            || self.samples_per_class.0 < 1
            || self.non_landmark_count < 1
            || self.d_in < 1
        {
            return Err(Error::Validation("synthetic spec counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Validation(format!(
                "outlier_fraction {} not in [0, 1)",
                self.outlier_fraction
            )));
        }
        if self.mode_spread <= 0.0 || self.within_mode_noise < 0.0 {
            return Err(Error::Validation("mode_spread must be > 0, noise >= 0".into()));
        }
        Ok(())
    }

    /// Parses the key=value spec format.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut r = KvReader::from_text(text)?;
        let mut spec = Self::default();
        if let Some(v) = r.parse_field("n_classes")? {
            spec.n_classes = v;
        }
        if let Some(v) = r.parse_range("modes_per_class")? {
            spec.modes_per_class = v;
        }
        if let Some(v) = r.parse_range("samples_per_class")? {
            spec.samples_per_class = v;
        }
        if let Some(v) = r.parse_field("non_landmark_count")? {
            spec.non_landmark_count = v;
        }
        if let Some(v) = r.parse_field("d_in")? {
            spec.d_in = v;
        }
        if let Some(v) = r.parse_field("mode_spread")? {
            spec.mode_spread = v;
        }
        if let Some(v) = r.parse_field("within_mode_noise")? {
            spec.within_mode_noise = v;
        }
        if let Some(v) = r.parse_field("outlier_fraction")? {
            spec.outlier_fraction = v;
        }
        if let Some(v) = r.parse_field("seed")? {
            spec.seed = v;
        }
        r.finish()?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Where a generated sample came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleOrigin {
    /// Regular sample of `class` drawn around mode `mode` (0-based).
    Mode { class: u32, mode: usize },
    /// Planted outlier of `class`.
    Outlier { class: u32 },
    /// Non-landmark background sample.
    Background,
}

impl SampleOrigin {
    pub fn is_outlier(&self) -> bool {
        matches!(self, SampleOrigin::Outlier { .. })
    }
}

/// Generator ground truth, parallel to `dataset.samples`.
#[derive(Clone, Debug)]
pub struct SynthGroundTruth {
    pub origins: Vec<SampleOrigin>,
    /// Mode centers per class, indexed by `class - 1`.
    pub class_modes: Vec<Vec<Embedding>>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub metadata: Vec<LandmarkMetadata>,
    pub truth: SynthGroundTruth,
}

fn unit_vector(rng: &mut ChaCha12Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector with non-positive dot product against all earlier modes, so
/// a class's shooting angles land in opposing half-spaces.
fn spread_direction(rng: &mut ChaCha12Rng, d: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    for _ in 0..1000 {
        let cand = unit_vector(rng, d);
        if existing
            .iter()
            .all(|m| m.iter().zip(&cand).map(|(a, b)| a * b).sum::<f64>() <= 0.0)
        {
            return cand;
        }
    }
    unit_vector(rng, d)
}

fn to_embedding(v: &[f64]) -> Embedding {
    Embedding::new(v.iter().map(|x| *x as f32).collect()).expect("finite generated vector")
}

fn range_sample(rng: &mut ChaCha12Rng, (lo, hi): (u32, u32)) -> u32 {
    rng.random_range(lo..=hi)
}

/// Generates a dataset, its metadata and the ground truth. Deterministic per
/// spec: two calls with equal specs produce identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let d = spec.d_in;
    let n = spec.n_classes;

    // Cities first: landmarks inherit city coordinates and curriculum region.
    let n_cities = (n as usize).div_ceil(5).max(4.min(n as usize));
    let cities: Vec<(String, String, f64, f64, u8)> = (0..n_cities)
        .map(|i| {
            let lat = rng.random_range(-60.0..60.0);
            let lon = rng.random_range(-170.0..170.0);
            (
                format!("City-{}", i + 1),
                format!("Country-{}", i / 3 + 1),
                lat,
                lon,
                (i % 4) as u8 + 1,
            )
        })
        .collect();

    let mut samples = Vec::new();
    let mut origins = Vec::new();
    let mut class_modes = Vec::with_capacity(n as usize);
    let mut metadata = Vec::with_capacity(n as usize);

    for class in 1..=n {
        let (city_name, country, city_lat, city_lon, region) =
            cities[(class as usize - 1) % n_cities].clone();
        let lat = (city_lat + rng.random_range(-0.004..0.004)).clamp(-90.0, 90.0);
        let lon = (city_lon + rng.random_range(-0.004..0.004)).clamp(-180.0, 180.0);
        metadata.push(LandmarkMetadata {
            landmark_id: class,
            name: format!("Landmark-{class}"),
            city: city_name,
            country,
            latitude: lat,
            longitude: lon,
            region_part: region,
        });

        let n_modes = range_sample(&mut rng, spec.modes_per_class) as usize;
        let mut modes: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
        for _ in 0..n_modes {
            let dir = spread_direction(&mut rng, d, &modes);
            modes.push(dir.iter().map(|x| x * spec.mode_spread).collect());
        }
        class_modes.push(modes.iter().map(|m| to_embedding(m)).collect::<Vec<_>>());

        let n_samples = range_sample(&mut rng, spec.samples_per_class) as usize;
        let n_outliers = (spec.outlier_fraction * n_samples as f64).floor() as usize;
        for i in 0..n_samples {
            let (center, origin): (Vec<f64>, SampleOrigin) = if i < n_samples - n_outliers {
                let mode = rng.random_range(0..n_modes);
                (modes[mode].clone(), SampleOrigin::Mode { class, mode })
            } else {
                let dir = unit_vector(&mut rng, d);
                let far: Vec<f64> = dir.iter().map(|x| x * 2.5 * spec.mode_spread).collect();
                (far, SampleOrigin::Outlier { class })
            };
            let values: Vec<f64> = center
                .iter()
                .map(|c| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    c + spec.within_mode_noise * noise
                })
                .collect();
            samples.push(LabeledSample { features: to_embedding(&values), label: class });
            origins.push(origin);
        }
    }

    // Broad background: sigma chosen so background norms are comparable to
    // landmark norms without clustering around any mode.
    let bg_sigma = spec.mode_spread / (d as f64).sqrt();
    for _ in 0..spec.non_landmark_count {
        let values: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                bg_sigma * z
            })
            .collect();
        samples.push(LabeledSample { features: to_embedding(&values), label: n + 1 });
        origins.push(SampleOrigin::Background);
    }

    let dataset = Dataset::new(samples, n, d)?;
    Ok(SyntheticData { dataset, metadata, truth: SynthGroundTruth { origins, class_modes } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            n_classes: 5,
            samples_per_class: (10, 15),
            non_landmark_count: 10,
            d_in: 8,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.dataset.samples, b.dataset.samples);
        assert_eq!(a.metadata, b.metadata);
        assert_eq!(a.truth.origins, b.truth.origins);
    }

    #[test]
    fn zero_outlier_fraction_flags_nothing() {
        let spec = SyntheticSpec {
            n_classes: 4,
            samples_per_class: (10, 10),
            non_landmark_count: 5,
            d_in: 6,
            outlier_fraction: 0.0,
            seed: 3,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        assert!(data.truth.origins.iter().all(|o| !o.is_outlier()));
    }

    #[test]
    fn outlier_fraction_plants_flagged_outliers() {
        let spec = SyntheticSpec {
            n_classes: 3,
            samples_per_class: (20, 20),
            non_landmark_count: 5,
            d_in: 6,
            outlier_fraction: 0.25,
            seed: 3,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let outliers = data.truth.origins.iter().filter(|o| o.is_outlier()).count();
        assert_eq!(outliers, 3 * 5);
    }

    #[test]
    fn mode_counts_respect_range() {
        let spec = SyntheticSpec {
            n_classes: 50,
            modes_per_class: (2, 3),
            samples_per_class: (10, 12),
            non_landmark_count: 5,
            d_in: 16,
            seed: 11,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.truth.class_modes.len(), 50);
        for modes in &data.truth.class_modes {
            assert!(modes.len() == 2 || modes.len() == 3);
        }
        // All four curriculum regions are populated.
        let mut regions: Vec<u8> = data.metadata.iter().map(|m| m.region_part).collect();
        regions.sort_unstable();
        regions.dedup();
        assert_eq!(regions, vec![1, 2, 3, 4]);
    }

    #[test]
    fn kv_parsing_roundtrip() {
        let text = "n_classes=10\nmodes_per_class=2,4\nsamples_per_class=30,40\n\
                    non_landmark_count=100\nd_in=32\nmode_spread=5.0\n\
                    within_mode_noise=0.25\noutlier_fraction=0.1\nseed=99\n";
        let spec = SyntheticSpec::from_kv_text(text).unwrap();
        assert_eq!(spec.n_classes, 10);
        assert_eq!(spec.modes_per_class, (2, 4));
        assert_eq!(spec.seed, 99);
        assert!(SyntheticSpec::from_kv_text("bogus_key=1").is_err());
    }
}

//! Core value types shared by every stage of the pipeline, plus file codecs,
//! the synthetic dataset generator and curriculum partitioning.

pub(crate) mod codec;
mod partition;
mod synth;

pub use codec::{
    read_embedding_file, read_metadata_file, write_embedding_file, write_metadata_file,
};
pub use partition::{partition_by_region, CurriculumParts};
pub use synth::{generate_synthetic, SampleOrigin, SynthGroundTruth, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};

/// A d-dimensional real vector. Used both for raw input features and for the
/// network's output embeddings; file payloads are 32-bit floats, so this is
/// the storage precision of the whole system.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("embedding must have dimension >= 1".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite embedding value {bad}")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Dot product with f64 accumulation.
    pub fn dot(&self, other: &Embedding) -> f64 {
        dot_f32(&self.values, &other.values)
    }

    /// Euclidean distance with f64 accumulation.
    pub fn distance(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// One training or query record: a feature vector plus its class label.
/// Labels are 1-based; label `n_classes + 1` is the non-landmark class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub features: Embedding,
    pub label: u32,
}

/// Label of the catch-all non-landmark class for a given landmark count.
pub const fn non_landmark_label(n_classes: u32) -> u32 {
    n_classes + 1
}

/// A labeled collection of samples over `n_classes` landmark classes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub n_classes: u32,
    pub d_in: usize,
}

impl Dataset {
    /// Builds a dataset and checks the label/dimension invariants: every
    /// label lies in `[1, n_classes + 1]`, every landmark class has at least
    /// one sample, and all feature vectors share dimension `d_in`.
    pub fn new(samples: Vec<LabeledSample>, n_classes: u32, d_in: usize) -> Result<Self> {
        if n_classes < 1 {
            return Err(Error::Validation("dataset needs n_classes >= 1".into()));
        }
        let mut seen = vec![false; n_classes as usize];
        for s in &samples {
            if s.features.dim() != d_in {
                return Err(Error::Shape(format!(
                    "sample has dimension {}, dataset expects {d_in}",
                    s.features.dim()
                )));
            }
            if s.label < 1 || s.label > non_landmark_label(n_classes) {
                return Err(Error::Validation(format!(
                    "label {} out of range [1, {}]",
                    s.label,
                    non_landmark_label(n_classes)
                )));
            }
            if s.label <= n_classes {
                seen[(s.label - 1) as usize] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|v| !v) {
            return Err(Error::Validation(format!(
                "landmark class {} has no samples",
                missing + 1
            )));
        }
        Ok(Self { samples, n_classes, d_in })
    }

    pub fn non_landmark_label(&self) -> u32 {
        non_landmark_label(self.n_classes)
    }

    pub fn is_landmark(&self, label: u32) -> bool {
        label <= self.n_classes
    }

    pub fn landmark_sample_count(&self) -> usize {
        self.samples.iter().filter(|s| self.is_landmark(s.label)).count()
    }
}

/// Per-landmark metadata used for geographic scoping, city consistency and
/// curriculum partitioning.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkMetadata {
    pub landmark_id: u32,
    pub name: String,
    pub city: String,
    pub country: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Curriculum part in `[1, 4]`.
    pub region_part: u8,
}

impl LandmarkMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.landmark_id < 1 {
            return Err(Error::Metadata("landmark_id must be >= 1".into()));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Metadata(format!(
                "latitude out of range: {} (landmark {})",
                self.latitude, self.landmark_id
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Metadata(format!(
                "longitude out of range: {} (landmark {})",
                self.longitude, self.landmark_id
            )));
        }
        if !(1..=4).contains(&self.region_part) {
            return Err(Error::Metadata(format!(
                "region_part out of range: {} (landmark {})",
                self.region_part, self.landmark_id
            )));
        }
        Ok(())
    }
}

/// Metadata records indexed by landmark id.
#[derive(Clone, Debug, Default)]
pub struct MetadataTable {
    records: Vec<LandmarkMetadata>,
    by_id: std::collections::HashMap<u32, usize>,
}

impl MetadataTable {
    pub fn new(records: Vec<LandmarkMetadata>) -> Result<Self> {
        let mut by_id = std::collections::HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            rec.validate()?;
            if by_id.insert(rec.landmark_id, i).is_some() {
                return Err(Error::Metadata(format!(
                    "duplicate landmark_id {}",
                    rec.landmark_id
                )));
            }
        }
        Ok(Self { records, by_id })
    }

    pub fn get(&self, landmark_id: u32) -> Option<&LandmarkMetadata> {
        self.by_id.get(&landmark_id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[LandmarkMetadata] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn embedding_rejects_empty_and_non_finite() {
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![1.0, f32::NAN]).is_err());
        assert!(Embedding::new(vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn dataset_checks_labels_and_coverage() {
        let s = |label| LabeledSample { features: emb(&[0.0, 1.0]), label };
        assert!(Dataset::new(vec![s(1), s(2), s(3)], 2, 2).is_ok());
        // label 4 > n+1
        assert!(Dataset::new(vec![s(1), s(2), s(4)], 2, 2).is_err());
        // class 2 missing
        assert!(Dataset::new(vec![s(1), s(3)], 2, 2).is_err());
        // wrong dimension
        let bad = LabeledSample { features: emb(&[0.0]), label: 1 };
        assert!(Dataset::new(vec![bad], 1, 2).is_err());
    }

    #[test]
    fn metadata_table_rejects_duplicates_and_bad_coords() {
        let rec = |id, lat| LandmarkMetadata {
            landmark_id: id,
            name: "x".into(),
            city: "c".into(),
            country: "k".into(),
            latitude: lat,
            longitude: 0.0,
            region_part: 1,
        };
        assert!(MetadataTable::new(vec![rec(1, 0.0), rec(2, 10.0)]).is_ok());
        let err = MetadataTable::new(vec![rec(7, 0.0), rec(7, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("duplicate landmark_id"));
        let err = MetadataTable::new(vec![rec(1, 91.0)]).unwrap_err();
        assert!(err.to_string().contains("latitude out of range"));
    }
}

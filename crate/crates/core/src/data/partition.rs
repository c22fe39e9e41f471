//! Splits a dataset into the four curriculum parts by geographic region.

use crate::data::{Dataset, LabeledSample, MetadataTable};
use crate::error::{Error, Result};

/// The four region parts plus the shared non-landmark pool. Non-landmark
/// samples carry no region and join every stage's sampling pool.
#[derive(Clone, Debug)]
pub struct CurriculumParts {
    /// Landmark samples per part, index 0 = part 1.
    pub parts: [Vec<LabeledSample>; 4],
    /// Landmark class ids per part, ascending.
    pub class_ids: [Vec<u32>; 4],
    pub non_landmark: Vec<LabeledSample>,
    pub d_in: usize,
}

impl CurriculumParts {
    /// Classes taking part in stages `1..=stage`, ordered by (part, id).
    /// This is the label order used by the stage classifier.
    pub fn cumulative_class_ids(&self, stage: usize) -> Vec<u32> {
        let mut ids = Vec::new();
        for part in &self.class_ids[..stage.min(4)] {
            ids.extend_from_slice(part);
        }
        ids
    }
}

/// Routes every landmark sample to the part named by its class metadata.
/// Errors when a landmark class in the dataset has no metadata record.
pub fn partition_by_region(dataset: &Dataset, metadata: &MetadataTable) -> Result<CurriculumParts> {
    let mut parts: [Vec<LabeledSample>; 4] = Default::default();
    let mut class_ids: [Vec<u32>; 4] = Default::default();
    let mut non_landmark = Vec::new();

    for class in 1..=dataset.n_classes {
        let rec = metadata.get(class).ok_or_else(|| {
            Error::Validation(format!("landmark class {class} has no metadata record"))
        })?;
        class_ids[(rec.region_part - 1) as usize].push(class);
    }

    for sample in &dataset.samples {
        if dataset.is_landmark(sample.label) {
            let part = metadata
                .get(sample.label)
                .expect("checked above")
                .region_part;
            parts[(part - 1) as usize].push(sample.clone());
        } else {
            non_landmark.push(sample.clone());
        }
    }

    Ok(CurriculumParts { parts, class_ids, non_landmark, d_in: dataset.d_in })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Embedding, LandmarkMetadata};

    fn sample(label: u32, v: f32) -> LabeledSample {
        LabeledSample { features: Embedding::new(vec![v, v]).unwrap(), label }
    }

    fn meta(id: u32, part: u8) -> LandmarkMetadata {
        LandmarkMetadata {
            landmark_id: id,
            name: format!("L{id}"),
            city: "c".into(),
            country: "k".into(),
            latitude: 0.0,
            longitude: 0.0,
            region_part: part,
        }
    }

    #[test]
    fn all_in_part_one_leaves_rest_empty() {
        let ds = Dataset::new(vec![sample(1, 0.0), sample(2, 1.0), sample(3, 2.0)], 2, 2).unwrap();
        let table = MetadataTable::new(vec![meta(1, 1), meta(2, 1)]).unwrap();
        let parts = partition_by_region(&ds, &table).unwrap();
        assert_eq!(parts.parts[0].len(), 2);
        assert!(parts.parts[1..].iter().all(|p| p.is_empty()));
        assert_eq!(parts.non_landmark.len(), 1);
    }

    #[test]
    fn samples_follow_their_class_region() {
        let ds = Dataset::new(vec![sample(1, 0.0), sample(2, 1.0), sample(2, 2.0)], 2, 2).unwrap();
        let table = MetadataTable::new(vec![meta(1, 1), meta(2, 3)]).unwrap();
        let parts = partition_by_region(&ds, &table).unwrap();
        assert_eq!(parts.parts[2].len(), 2);
        assert!(parts.parts[2].iter().all(|s| s.label == 2));
        assert_eq!(parts.cumulative_class_ids(3), vec![1, 2]);
    }

    #[test]
    fn missing_metadata_is_an_error() {
        let ds = Dataset::new(vec![sample(1, 0.0), sample(2, 1.0)], 2, 2).unwrap();
        let table = MetadataTable::new(vec![meta(1, 1)]).unwrap();
        assert!(partition_by_region(&ds, &table).is_err());
    }

    #[test]
    fn partition_sizes_sum_to_landmark_count() {
        // 50 classes spread over 4 parts.
        let spec = crate::data::SyntheticSpec {
            n_classes: 50,
            samples_per_class: (5, 9),
            non_landmark_count: 20,
            d_in: 4,
            seed: 5,
            ..Default::default()
        };
        let data = crate::data::generate_synthetic(&spec).unwrap();
        let table = MetadataTable::new(data.metadata.clone()).unwrap();
        let parts = partition_by_region(&data.dataset, &table).unwrap();
        let total: usize = parts.parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, data.dataset.landmark_sample_count());
        assert_eq!(parts.non_landmark.len(), 20);
    }
}

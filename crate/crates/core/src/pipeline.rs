//! End-to-end inference and database cleaning.
//!
//! Inference: scope the centroid index (geographically when the query has a
//! location), gate on the non-landmark threshold eta, collapse centroids to
//! landmarks, then filter candidates by reference verification and city
//! consistency. Cleaning: reject a class member when its dot product with
//! the class's references centroid falls below gamma.

use std::collections::BTreeMap;

use crate::data::{dot_f32, Embedding, LabeledSample, MetadataTable};
use crate::error::{Error, Result};
use crate::index::CentroidIndex;
use crate::kv::KvReader;

/// When the reference-verification step runs. The default follows the
/// system's flow: verification is the no-geo path; geo-scoped queries skip
/// it because the box filter already constrains candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReferenceCheck {
    #[default]
    NoGeoOnly,
    Always,
    Off,
}

impl std::str::FromStr for ReferenceCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_geo_only" => Ok(ReferenceCheck::NoGeoOnly),
            "always" => Ok(ReferenceCheck::Always),
            "off" => Ok(ReferenceCheck::Off),
            other => Err(Error::Config(format!("unknown reference_check `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    /// Non-landmark similarity threshold for unscoped queries.
    pub eta_full: f64,
    /// Reduced threshold used under geo scoping; must not exceed eta_full.
    pub eta_geo: f64,
    /// Reference-verification threshold.
    pub omega: f64,
    /// Maximum landmarks returned per query.
    pub k: usize,
    /// Geo box edge in meters.
    pub geo_box_edge: f64,
    pub reference_check: ReferenceCheck,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            eta_full: 0.0,
            eta_geo: 0.0,
            omega: 0.0,
            k: 1,
            geo_box_edge: 1000.0,
            reference_check: ReferenceCheck::NoGeoOnly,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if !self.eta_full.is_finite() && self.eta_full != f64::NEG_INFINITY {
            return Err(Error::Validation("eta_full must be finite or -inf".into()));
        }
        if self.eta_geo > self.eta_full {
            return Err(Error::Validation(format!(
                "eta_geo {} must not exceed eta_full {}",
                self.eta_geo, self.eta_full
            )));
        }
        if !self.omega.is_finite() {
            return Err(Error::Validation("omega must be finite".into()));
        }
        if self.geo_box_edge <= 0.0 {
            return Err(Error::Validation("geo_box_edge must be > 0".into()));
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut r = KvReader::from_text(text)?;
        let mut cfg = Self::default();
        if let Some(v) = r.parse_field("eta")? {
            cfg.eta_full = v;
            cfg.eta_geo = v;
        }
        if let Some(v) = r.parse_field("eta_geo")? {
            cfg.eta_geo = v;
        }
        if let Some(v) = r.parse_field("omega")? {
            cfg.omega = v;
        }
        if let Some(v) = r.parse_field("k")? {
            cfg.k = v;
        }
        if let Some(v) = r.parse_field("geo_box_edge")? {
            cfg.geo_box_edge = v;
        }
        if let Some(v) = r.take("reference_check") {
            cfg.reference_check = v.parse()?;
        }
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-landmark reference embeddings (the 3-5 manually verified images).
#[derive(Clone, Debug, Default)]
pub struct ReferenceSet {
    map: BTreeMap<u32, Vec<Embedding>>,
}

impl ReferenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, landmark_id: u32, references: Vec<Embedding>) -> Result<()> {
        if references.is_empty() {
            return Err(Error::Validation(format!(
                "landmark {landmark_id} needs at least one reference"
            )));
        }
        self.map.insert(landmark_id, references);
        Ok(())
    }

    /// Builds from labeled samples (embedding file with landmark_id labels).
    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let mut map: BTreeMap<u32, Vec<Embedding>> = BTreeMap::new();
        for s in samples {
            map.entry(s.label).or_default().push(s.features.clone());
        }
        if map.is_empty() {
            return Err(Error::Validation("reference set is empty".into()));
        }
        Ok(Self { map })
    }

    pub fn get(&self, landmark_id: u32) -> Option<&[Embedding]> {
        self.map.get(&landmark_id).map(|v| v.as_slice())
    }

    pub fn landmarks(&self) -> impl Iterator<Item = u32> + '_ {
        self.map.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Arithmetic mean of the reference embeddings.
pub fn references_centroid(references: &[Embedding]) -> Result<Embedding> {
    let first = references
        .first()
        .ok_or_else(|| Error::Validation("cannot average an empty reference set".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for r in references {
        if r.dim() != dim {
            return Err(Error::Shape("reference dimensions differ".into()));
        }
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += f64::from(*v);
        }
    }
    let inv = 1.0 / references.len() as f64;
    Embedding::new(acc.iter().map(|a| (a * inv) as f32).collect())
}

/// True iff the mean dot product between the query and the references is
/// strictly greater than omega.
pub fn verify_references(references: &[Embedding], query: &Embedding, omega: f64) -> Result<bool> {
    if references.is_empty() {
        return Err(Error::Validation("cannot verify against an empty reference set".into()));
    }
    let mean = references.iter().map(|r| query.dot(r)).sum::<f64>() / references.len() as f64;
    Ok(mean > omega)
}

/// One recognized landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkHit {
    pub landmark_id: u32,
    pub name: String,
    pub city: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecognitionResult {
    NonLandmark,
    /// At most k hits, all in one city, similarities >= the gate threshold,
    /// descending.
    Landmarks(Vec<LandmarkHit>),
}

impl RecognitionResult {
    pub fn hits(&self) -> &[LandmarkHit] {
        match self {
            RecognitionResult::NonLandmark => &[],
            RecognitionResult::Landmarks(hits) => hits,
        }
    }

    pub fn top1(&self) -> Option<&LandmarkHit> {
        self.hits().first()
    }

    pub fn is_non_landmark(&self) -> bool {
        matches!(self, RecognitionResult::NonLandmark)
    }
}

/// Recognizes landmarks in one query embedding.
pub fn infer(
    query: &Embedding,
    geo: Option<(f64, f64)>,
    index: &CentroidIndex,
    references: &ReferenceSet,
    metadata: &MetadataTable,
    config: &InferenceConfig,
) -> Result<RecognitionResult> {
    config.validate()?;
    let (scope, eta) = match geo {
        Some((lat, lon)) => {
            let scope = index.geo_scope(metadata, lat, lon, config.geo_box_edge)?;
            if scope.is_empty() {
                return Ok(RecognitionResult::NonLandmark);
            }
            (Some(scope), config.eta_geo)
        }
        None => (None, config.eta_full),
    };

    let ranked = index.best_per_landmark(query, scope.as_deref())?;
    match ranked.first() {
        None => return Ok(RecognitionResult::NonLandmark),
        Some((_, best)) if *best < eta => return Ok(RecognitionResult::NonLandmark),
        Some(_) => {}
    }
    let candidates: Vec<(u32, f64)> = ranked
        .into_iter()
        .filter(|(_, sim)| *sim >= eta)
        .take(config.k)
        .collect();

    let top_meta = metadata.get(candidates[0].0).ok_or_else(|| {
        Error::Validation(format!("metadata missing for landmark {}", candidates[0].0))
    })?;
    let city = top_meta.city.clone();

    let check_refs = match config.reference_check {
        ReferenceCheck::Always => true,
        ReferenceCheck::NoGeoOnly => geo.is_none(),
        ReferenceCheck::Off => false,
    };

    let mut hits = Vec::new();
    for (landmark_id, similarity) in candidates {
        if check_refs {
            match references.get(landmark_id) {
                Some(refs) => {
                    if !verify_references(refs, query, config.omega)? {
                        continue;
                    }
                }
                None => {
                    log::warn!(
                        "landmark {landmark_id} has no references; treating verification as failed"
                    );
                    continue;
                }
            }
        }
        let meta = metadata.get(landmark_id).ok_or_else(|| {
            Error::Validation(format!("metadata missing for landmark {landmark_id}"))
        })?;
        if meta.city != city {
            continue;
        }
        hits.push(LandmarkHit {
            landmark_id,
            name: meta.name.clone(),
            city: city.clone(),
            similarity,
        });
    }
    if hits.is_empty() {
        return Ok(RecognitionResult::NonLandmark);
    }
    Ok(RecognitionResult::Landmarks(hits))
}

/// Batch inference; order of results matches the queries. With the
/// `parallel` feature queries fan out over rayon.
pub fn infer_batch(
    queries: &[(Embedding, Option<(f64, f64)>)],
    index: &CentroidIndex,
    references: &ReferenceSet,
    metadata: &MetadataTable,
    config: &InferenceConfig,
) -> Result<Vec<RecognitionResult>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        queries
            .par_iter()
            .map(|(q, geo)| infer(q, *geo, index, references, metadata, config))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        infer_batch_seq(queries, index, references, metadata, config)
    }
}

/// Sequential batch inference, kept callable for the bench comparison.
pub fn infer_batch_seq(
    queries: &[(Embedding, Option<(f64, f64)>)],
    index: &CentroidIndex,
    references: &ReferenceSet,
    metadata: &MetadataTable,
    config: &InferenceConfig,
) -> Result<Vec<RecognitionResult>> {
    queries
        .iter()
        .map(|(q, geo)| infer(q, *geo, index, references, metadata, config))
        .collect()
}

/// Formats one query's result as output lines:
/// `query_id<TAB>NONLANDMARK` or one `query_id<TAB>landmark_id<TAB>name<TAB>
/// city<TAB>similarity` line per hit.
pub fn format_result_lines(query_id: &str, result: &RecognitionResult) -> String {
    match result {
        RecognitionResult::NonLandmark => format!("{query_id}\tNONLANDMARK\n"),
        RecognitionResult::Landmarks(hits) => hits
            .iter()
            .map(|h| {
                format!(
                    "{query_id}\t{}\t{}\t{}\t{:.6}\n",
                    h.landmark_id, h.name, h.city, h.similarity
                )
            })
            .collect(),
    }
}

/// Accept/Reject verdict for one database element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleaningConfig {
    /// Rejection threshold gamma.
    pub gamma: f64,
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::Validation("gamma must be finite".into()));
        }
        Ok(())
    }
}

/// Database cleaning for one class: an element is rejected iff its dot
/// product with the references centroid is strictly below gamma.
/// Order-preserving.
pub fn clean_dataset(
    embeddings: &[Embedding],
    references: &[Embedding],
    gamma: f64,
) -> Result<Vec<Verdict>> {
    CleaningConfig { gamma }.validate()?;
    let centroid = references_centroid(references)?;
    Ok(embeddings
        .iter()
        .map(|e| {
            if dot_f32(centroid.values(), e.values()) < gamma {
                Verdict::Reject
            } else {
                Verdict::Accept
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Centroid, CentroidSet};
    use crate::data::LandmarkMetadata;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn meta(id: u32, city: &str) -> LandmarkMetadata {
        LandmarkMetadata {
            landmark_id: id,
            name: format!("L{id}"),
            city: city.into(),
            country: "k".into(),
            latitude: 10.0 + id as f64 * 0.001,
            longitude: 20.0,
            region_part: 1,
        }
    }

    fn index_of(vectors: &[(u32, &[f32])]) -> CentroidIndex {
        let mut entries: Vec<(u32, Vec<Centroid>)> = Vec::new();
        for (id, v) in vectors {
            let c = Centroid { vector: emb(v), cluster_size: 1 };
            match entries.iter_mut().find(|(eid, _)| eid == id) {
                Some((_, list)) => list.push(c),
                None => entries.push((*id, vec![c])),
            }
        }
        entries.sort_by_key(|(id, _)| *id);
        CentroidIndex::build_exact(&CentroidSet { entries }).unwrap()
    }

    #[test]
    fn references_centroid_examples() {
        let one = vec![emb(&[3.0, -1.0])];
        assert_eq!(references_centroid(&one).unwrap(), one[0]);
        let two = vec![emb(&[2.0, 0.0]), emb(&[0.0, 2.0])];
        assert_eq!(references_centroid(&two).unwrap(), emb(&[1.0, 1.0]));
        assert!(references_centroid(&[]).is_err());
    }

    #[test]
    fn mean_shift_recovers_offset() {
        let base = [emb(&[1.0, 2.0]), emb(&[3.0, -4.0]), emb(&[0.5, 0.5])];
        let shifted: Vec<Embedding> = base
            .iter()
            .map(|e| emb(&[e.values()[0] + 10.0, e.values()[1] + 10.0]))
            .collect();
        let c0 = references_centroid(&base).unwrap();
        let c1 = references_centroid(&shifted).unwrap();
        for (a, b) in c0.values().iter().zip(c1.values()) {
            assert!((b - a - 10.0).abs() < 1e-5);
        }
    }

    #[test]
    fn verification_is_strict() {
        // Mean similarity exactly omega fails; just above passes.
        let refs = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let q = emb(&[1.0, 1.0]); // dots 1 and 1, mean 1
        assert!(!verify_references(&refs, &q, 1.0).unwrap());
        assert!(verify_references(&refs, &q, 0.999).unwrap());
        // Query equal to every reference with squared norm above omega.
        let refs = vec![emb(&[2.0, 1.0]); 3];
        let q = emb(&[2.0, 1.0]);
        assert!(verify_references(&refs, &q, 4.9).unwrap());
        // Hand-computed mean 0.42 vs omega 0.4.
        let refs = vec![emb(&[0.3, 0.0]), emb(&[0.45, 0.0]), emb(&[0.51, 0.0])];
        let q = emb(&[1.0, 0.0]);
        assert!(verify_references(&refs, &q, 0.4).unwrap());
    }

    #[test]
    fn below_eta_is_non_landmark() {
        let index = index_of(&[(1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let table = MetadataTable::new(vec![meta(1, "a"), meta(2, "a")]).unwrap();
        let cfg = InferenceConfig { eta_full: 10.0, eta_geo: 10.0, ..Default::default() };
        let r = infer(&emb(&[1.0, 0.0]), None, &index, &ReferenceSet::new(), &table, &cfg).unwrap();
        assert!(r.is_non_landmark());
    }

    #[test]
    fn different_city_candidates_are_filtered() {
        let index = index_of(&[(1, &[1.0, 0.0]), (2, &[0.9, 0.1])]);
        let table = MetadataTable::new(vec![meta(1, "dresden"), meta(2, "rouen")]).unwrap();
        let cfg = InferenceConfig {
            eta_full: 0.1,
            eta_geo: 0.1,
            k: 2,
            reference_check: ReferenceCheck::Off,
            ..Default::default()
        };
        let r = infer(&emb(&[1.0, 0.0]), None, &index, &ReferenceSet::new(), &table, &cfg).unwrap();
        let hits = r.hits();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].landmark_id, 1);
        assert_eq!(hits[0].city, "dresden");
    }

    #[test]
    fn missing_references_fail_verification() {
        let index = index_of(&[(1, &[1.0, 0.0]), (2, &[0.9, 0.1])]);
        let table = MetadataTable::new(vec![meta(1, "a"), meta(2, "a")]).unwrap();
        let mut refs = ReferenceSet::new();
        refs.insert(2, vec![emb(&[0.9, 0.1])]).unwrap();
        let cfg = InferenceConfig {
            eta_full: 0.1,
            eta_geo: 0.1,
            k: 2,
            omega: 0.5,
            reference_check: ReferenceCheck::NoGeoOnly,
            ..Default::default()
        };
        // Landmark 1 wins on similarity but has no references: dropped.
        let r = infer(&emb(&[1.0, 0.0]), None, &index, &refs, &table, &cfg).unwrap();
        let hits = r.hits();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].landmark_id, 2);
        // With geo information the reference step is skipped.
        let r = infer(&emb(&[1.0, 0.0]), Some((10.001, 20.0)), &index, &refs, &table, &cfg).unwrap();
        assert_eq!(r.hits()[0].landmark_id, 1);
    }

    #[test]
    fn centroid_dedup_keeps_best_similarity() {
        let index = index_of(&[(1, &[1.0, 0.0]), (1, &[0.5, 0.0]), (2, &[0.8, 0.0])]);
        let table = MetadataTable::new(vec![meta(1, "a"), meta(2, "a")]).unwrap();
        let cfg = InferenceConfig {
            eta_full: 0.1,
            eta_geo: 0.1,
            k: 2,
            reference_check: ReferenceCheck::Off,
            ..Default::default()
        };
        let r = infer(&emb(&[1.0, 0.0]), None, &index, &ReferenceSet::new(), &table, &cfg).unwrap();
        let hits = r.hits();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].landmark_id, 1);
        assert_eq!(hits[0].similarity, 1.0);
        assert_eq!(hits[1].landmark_id, 2);
    }

    #[test]
    fn cleaning_thresholds_are_strict() {
        // Similarity exactly gamma is accepted (only strictly-below rejects).
        let refs = vec![emb(&[1.0, 0.0])];
        let embeddings = vec![emb(&[1.0, 0.0]), emb(&[0.5, 0.0]), emb(&[0.4999, 0.0])];
        let verdicts = clean_dataset(&embeddings, &refs, 0.5).unwrap();
        assert_eq!(verdicts, vec![Verdict::Accept, Verdict::Accept, Verdict::Reject]);
        // Embedding equal to the references centroid with norm^2 >= gamma.
        let refs = vec![emb(&[2.0, 0.0]), emb(&[0.0, 2.0])];
        let centroid = references_centroid(&refs).unwrap();
        let verdicts = clean_dataset(&[centroid.clone()], &refs, centroid.dot(&centroid)).unwrap();
        assert_eq!(verdicts, vec![Verdict::Accept]);
    }

    #[test]
    fn output_line_format() {
        assert_eq!(
            format_result_lines("q3", &RecognitionResult::NonLandmark),
            "q3\tNONLANDMARK\n"
        );
        let r = RecognitionResult::Landmarks(vec![LandmarkHit {
            landmark_id: 5,
            name: "Zwinger".into(),
            city: "Dresden".into(),
            similarity: 12.25,
        }]);
        assert_eq!(format_result_lines("q4", &r), "q4\t5\tZwinger\tDresden\t12.250000\n");
    }
}

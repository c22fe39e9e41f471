//! Evaluation: sensitivity/specificity over recognition results, retrieval
//! metrics (mAP, mP@k) with junk handling, and non-landmark threshold
//! calibration.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pipeline::RecognitionResult;

/// Ground truth for one query: the set of acceptable landmarks (empty for a
/// landmark-free query) and an optional reporting category.
#[derive(Clone, Debug, Default)]
pub struct QueryTruth {
    pub acceptable: Vec<u32>,
    pub category: Option<String>,
}

impl QueryTruth {
    pub fn landmark(acceptable: Vec<u32>) -> Self {
        Self { acceptable, category: None }
    }

    pub fn clean() -> Self {
        Self { acceptable: Vec::new(), category: None }
    }

    pub fn is_clean(&self) -> bool {
        self.acceptable.is_empty()
    }
}

/// Raw confusion counts. A landmark-bearing query counts as correct when
/// the top-1 answer is among its acceptable landmarks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    /// Landmark query, top-1 in the acceptable set.
    pub correct_landmark: usize,
    /// Landmark query, top-1 is some other landmark.
    pub wrong_landmark: usize,
    /// Landmark query answered Non-landmark.
    pub missed_landmark: usize,
    /// Clean query answered Non-landmark.
    pub true_clean: usize,
    /// Clean query answered with some landmark.
    pub false_landmark: usize,
}

impl Confusion {
    pub fn landmark_queries(&self) -> usize {
        self.correct_landmark + self.wrong_landmark + self.missed_landmark
    }

    pub fn clean_queries(&self) -> usize {
        self.true_clean + self.false_landmark
    }
}

#[derive(Clone, Debug, Default)]
pub struct CategoryStats {
    pub landmark_total: usize,
    pub landmark_correct: usize,
    pub clean_total: usize,
    pub clean_correct: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: Confusion,
    pub per_category: BTreeMap<String, CategoryStats>,
}

impl EvalReport {
    /// One metric per line, `name=value`.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sensitivity={}\n", self.sensitivity));
        out.push_str(&format!("specificity={}\n", self.specificity));
        out.push_str(&format!("correct_landmark={}\n", self.confusion.correct_landmark));
        out.push_str(&format!("wrong_landmark={}\n", self.confusion.wrong_landmark));
        out.push_str(&format!("missed_landmark={}\n", self.confusion.missed_landmark));
        out.push_str(&format!("true_clean={}\n", self.confusion.true_clean));
        out.push_str(&format!("false_landmark={}\n", self.confusion.false_landmark));
        for (cat, stats) in &self.per_category {
            if stats.landmark_total > 0 {
                out.push_str(&format!(
                    "category.{cat}.sensitivity={}\n",
                    stats.landmark_correct as f64 / stats.landmark_total as f64
                ));
            }
            if stats.clean_total > 0 {
                out.push_str(&format!(
                    "category.{cat}.specificity={}\n",
                    stats.clean_correct as f64 / stats.clean_total as f64
                ));
            }
        }
        out
    }

    /// Tab-separated one-line summary.
    pub fn summary_tsv(&self) -> String {
        format!(
            "sensitivity\t{:.4}\tspecificity\t{:.4}\tlandmark_queries\t{}\tclean_queries\t{}",
            self.sensitivity,
            self.specificity,
            self.confusion.landmark_queries(),
            self.confusion.clean_queries()
        )
    }
}

/// Computes sensitivity (top-1 accuracy on landmark-bearing queries) and
/// specificity (Non-landmark rate on landmark-free queries). Vacuous
/// denominators yield 1.0.
pub fn sensitivity_specificity(
    results: &[RecognitionResult],
    truths: &[QueryTruth],
) -> Result<EvalReport> {
    if results.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} results but {} ground-truth records (query without ground truth)",
            results.len(),
            truths.len()
        )));
    }
    let mut confusion = Confusion::default();
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for (result, truth) in results.iter().zip(truths) {
        let cat = truth
            .category
            .as_ref()
            .map(|c| per_category.entry(c.clone()).or_default());
        if truth.is_clean() {
            let ok = result.is_non_landmark();
            if ok {
                confusion.true_clean += 1;
            } else {
                confusion.false_landmark += 1;
            }
            if let Some(stats) = cat {
                stats.clean_total += 1;
                stats.clean_correct += ok as usize;
            }
        } else {
            let ok = match result.top1() {
                Some(hit) => truth.acceptable.contains(&hit.landmark_id),
                None => false,
            };
            match (ok, result.is_non_landmark()) {
                (true, _) => confusion.correct_landmark += 1,
                (false, true) => confusion.missed_landmark += 1,
                (false, false) => confusion.wrong_landmark += 1,
            }
            if let Some(stats) = cat {
                stats.landmark_total += 1;
                stats.landmark_correct += ok as usize;
            }
        }
    }
    let sensitivity = if confusion.landmark_queries() == 0 {
        1.0
    } else {
        confusion.correct_landmark as f64 / confusion.landmark_queries() as f64
    };
    let specificity = if confusion.clean_queries() == 0 {
        1.0
    } else {
        confusion.true_clean as f64 / confusion.clean_queries() as f64
    };
    Ok(EvalReport { sensitivity, specificity, confusion, per_category })
}

/// Relevance judgement of one retrieved item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relevance {
    Relevant,
    /// Removed before scoring; does not influence the result.
    Junk,
    Irrelevant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub mean_average_precision: f64,
    pub mean_precision_at_k: f64,
    pub per_query_ap: Vec<f64>,
}

/// mAP and mP@k over ranked lists with per-item relevance labels. Junk
/// entries are removed first; average precision evaluates precision at each
/// relevant hit, normalized by the number of relevant items in the filtered
/// list; P@k is taken over the effective (post-junk) top-k.
pub fn retrieval_metrics(lists: &[Vec<Relevance>], k: usize) -> Result<RetrievalReport> {
    if k < 1 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    if lists.is_empty() {
        return Err(Error::Validation("no ranked lists to score".into()));
    }
    let mut aps = Vec::with_capacity(lists.len());
    let mut p_at_k = Vec::with_capacity(lists.len());
    for list in lists {
        let filtered: Vec<bool> = list
            .iter()
            .filter(|r| !matches!(r, Relevance::Junk))
            .map(|r| matches!(r, Relevance::Relevant))
            .collect();
        let total_relevant = filtered.iter().filter(|r| **r).count();
        let ap = if total_relevant == 0 {
            0.0
        } else {
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (i, rel) in filtered.iter().enumerate() {
                if *rel {
                    hits += 1;
                    sum += hits as f64 / (i + 1) as f64;
                }
            }
            sum / total_relevant as f64
        };
        aps.push(ap);
        let window = k.min(filtered.len());
        let p = if window == 0 {
            0.0
        } else {
            filtered[..window].iter().filter(|r| **r).count() as f64 / window as f64
        };
        p_at_k.push(p);
    }
    Ok(RetrievalReport {
        mean_average_precision: aps.iter().sum::<f64>() / aps.len() as f64,
        mean_precision_at_k: p_at_k.iter().sum::<f64>() / p_at_k.len() as f64,
        per_query_ap: aps,
    })
}

/// Smallest threshold achieving the target specificity on ungated
/// validation results: `sims` holds the maximum similarity per landmark-free
/// validation query. Target 0 yields negative infinity (everything passes).
pub fn calibrate_threshold(clean_query_max_sims: &[f64], target_specificity: f64) -> Result<f64> {
    if target_specificity > 1.0 {
        return Err(Error::Validation(format!(
            "target specificity {target_specificity} unreachable; maximum achievable is 1",
        )));
    }
    if target_specificity <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if clean_query_max_sims.is_empty() {
        return Err(Error::Validation(
            "calibration needs at least one landmark-free validation query".into(),
        ));
    }
    let mut sorted = clean_query_max_sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Need at least ceil(target * n) clean queries strictly below eta.
    let needed = (target_specificity * n as f64).ceil() as usize;
    let needed = needed.max(1).min(n);
    let boundary = sorted[needed - 1];
    Ok(boundary.next_up())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::LandmarkHit;

    fn hit(id: u32) -> RecognitionResult {
        RecognitionResult::Landmarks(vec![LandmarkHit {
            landmark_id: id,
            name: format!("L{id}"),
            city: "c".into(),
            similarity: 1.0,
        }])
    }

    #[test]
    fn all_correct_is_perfect() {
        let results = vec![hit(1), RecognitionResult::NonLandmark];
        let truths = vec![QueryTruth::landmark(vec![1]), QueryTruth::clean()];
        let rep = sensitivity_specificity(&results, &truths).unwrap();
        assert_eq!(rep.sensitivity, 1.0);
        assert_eq!(rep.specificity, 1.0);
    }

    #[test]
    fn fractions_match_hand_counts() {
        // 4 of 5 landmark queries correct, 99 of 100 clean queries clean.
        let mut results = Vec::new();
        let mut truths = Vec::new();
        for i in 0..5u32 {
            results.push(hit(if i < 4 { i + 1 } else { 99 }));
            truths.push(QueryTruth::landmark(vec![i + 1]));
        }
        for i in 0..100u32 {
            results.push(if i < 99 { RecognitionResult::NonLandmark } else { hit(1) });
            truths.push(QueryTruth::clean());
        }
        let rep = sensitivity_specificity(&results, &truths).unwrap();
        assert!((rep.sensitivity - 0.8).abs() < 1e-12);
        assert!((rep.specificity - 0.99).abs() < 1e-12);
        assert_eq!(rep.confusion.wrong_landmark, 1);
        assert_eq!(rep.confusion.false_landmark, 1);
    }

    #[test]
    fn any_acceptable_landmark_counts() {
        // Query with two acceptable landmarks; top-1 hits the second.
        let results = vec![hit(7)];
        let truths = vec![QueryTruth::landmark(vec![3, 7])];
        let rep = sensitivity_specificity(&results, &truths).unwrap();
        assert_eq!(rep.sensitivity, 1.0);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let results = vec![hit(1)];
        assert!(sensitivity_specificity(&results, &[]).is_err());
    }

    #[test]
    fn ap_hand_examples() {
        use Relevance::*;
        // [rel, irrel, rel]: AP = (1/1 + 2/3)/2 = 5/6, P@3 = 2/3.
        let rep = retrieval_metrics(&[vec![Relevant, Irrelevant, Relevant]], 3).unwrap();
        assert!((rep.mean_average_precision - 5.0 / 6.0).abs() < 1e-12);
        assert!((rep.mean_precision_at_k - 2.0 / 3.0).abs() < 1e-12);
        // Middle item junk: effective list [rel, rel], AP = 1.
        let rep = retrieval_metrics(&[vec![Relevant, Junk, Relevant]], 3).unwrap();
        assert_eq!(rep.mean_average_precision, 1.0);
        assert_eq!(rep.mean_precision_at_k, 1.0);
        // All relevant.
        let rep = retrieval_metrics(&[vec![Relevant, Relevant]], 2).unwrap();
        assert_eq!(rep.mean_average_precision, 1.0);
        assert_eq!(rep.mean_precision_at_k, 1.0);
        assert!(retrieval_metrics(&[vec![Relevant]], 0).is_err());
    }

    #[test]
    fn calibration_order_statistics() {
        // {10, 20, 30}, target 2/3: eta just above 20.
        let eta = calibrate_threshold(&[10.0, 20.0, 30.0], 2.0 / 3.0).unwrap();
        assert!(eta > 20.0 && eta < 20.0 + 1e-10);
        // Specificity at that eta is exactly 2/3.
        let spec = [10.0, 20.0, 30.0].iter().filter(|s| **s < eta).count() as f64 / 3.0;
        assert!((spec - 2.0 / 3.0).abs() < 1e-12);
        // Target 0: everything passes.
        assert_eq!(calibrate_threshold(&[1.0, 2.0], 0.0).unwrap(), f64::NEG_INFINITY);
        // Target 1 with ties at the max: just above the max.
        let eta = calibrate_threshold(&[5.0, 9.0, 9.0], 1.0).unwrap();
        assert!(eta > 9.0 && eta < 9.0 + 1e-10);
        assert!(calibrate_threshold(&[1.0], 1.5).is_err());
        assert!(calibrate_threshold(&[], 0.5).is_err());
    }
}

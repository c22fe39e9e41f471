//! Epoch batch sampling with a fixed non-landmark proportion.
//!
//! An epoch visits every landmark sample once and adds
//! `round(proportion * landmark_count)` non-landmark samples, drawn without
//! replacement when the pool is large enough (with replacement otherwise).
//! The combined pool is shuffled and chunked into batches; a trailing
//! single-sample batch is dropped because train-mode batch statistics need
//! at least two samples.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Sample indices (into the caller's sample slice) for one epoch, chunked
/// into batches. Deterministic given the rng state.
pub fn sample_epoch_batches(
    landmark: &[usize],
    non_landmark: &[usize],
    batch_size: usize,
    proportion: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Validation("batch_size must be >= 2".into()));
    }
    if landmark.is_empty() {
        return Err(Error::Validation("sampling pool has no landmark samples".into()));
    }
    if proportion < 0.0 {
        return Err(Error::Validation("non_landmark_proportion must be >= 0".into()));
    }
    let want = (proportion * landmark.len() as f64).round() as usize;
    if want > 0 && non_landmark.is_empty() {
        return Err(Error::Validation(
            "sampling pool has no non-landmark samples but proportion > 0".into(),
        ));
    }

    let mut epoch: Vec<usize> = landmark.to_vec();
    if want > 0 {
        if want <= non_landmark.len() {
            for i in sample_indices(rng, non_landmark.len(), want) {
                epoch.push(non_landmark[i]);
            }
        } else {
            for _ in 0..want {
                epoch.push(non_landmark[rng.random_range(0..non_landmark.len())]);
            }
        }
    }
    epoch.shuffle(rng);

    let mut batches: Vec<Vec<usize>> = epoch.chunks(batch_size).map(|c| c.to_vec()).collect();
    if let Some(last) = batches.last() {
        if last.len() < 2 {
            batches.pop();
        }
    }
    Ok(batches)
}

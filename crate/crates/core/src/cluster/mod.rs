//! Hierarchical agglomerative clustering of per-class embeddings and
//! centroid computation.
//!
//! `agglomerate` merges the closest pair of clusters under the configured
//! linkage until the minimum linkage distance exceeds the threshold. Ties
//! are broken by the lexicographically smallest `(min id, max id)` pair so
//! the result is deterministic. Cluster ids follow the usual dendrogram
//! convention: points are clusters `0..n`, the k-th merge creates id `n+k`.

pub(crate) mod codec;

pub use codec::{read_centroid_file, write_centroid_file};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::str::FromStr;

use crate::data::Embedding;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Config(format!("unknown linkage `{other}`"))),
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClusteringConfig {
    pub linkage: Linkage,
    /// Euclidean distance threshold; merging stops once the closest pair is
    /// farther apart than this.
    pub distance_threshold: f64,
    /// A cluster is valid when it holds strictly more elements than this.
    pub min_cluster_size: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { linkage: Linkage::Complete, distance_threshold: 10.0, min_cluster_size: 50 }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) {
            return Err(Error::Validation(format!(
                "distance_threshold must be > 0, got {}",
                self.distance_threshold
            )));
        }
        if self.min_cluster_size < 1 {
            return Err(Error::Validation("min_cluster_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut r = crate::kv::KvReader::from_text(text)?;
        let mut cfg = Self::default();
        if let Some(v) = r.take("linkage") {
            cfg.linkage = v.parse()?;
        }
        if let Some(v) = r.parse_field("distance_threshold")? {
            cfg.distance_threshold = v;
        }
        if let Some(v) = r.parse_field("min_cluster_size")? {
            cfg.min_cluster_size = v;
        }
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One dendrogram step: clusters `a` and `b` merged at linkage distance
/// `height` into a fresh cluster id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Result of `agglomerate`: the flat partition plus the merge history.
#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub n_points: usize,
    /// Canonical cluster index per point. Clusters are numbered by the
    /// smallest point index they contain, ascending.
    pub labels: Vec<usize>,
    /// Members per canonical cluster, each ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Merge history; the k-th entry creates dendrogram id `n_points + k`.
    pub merges: Vec<Merge>,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }
}

/// Full symmetric Euclidean distance matrix, computed once and mirrored.
pub fn pairwise_distances(points: &[Embedding]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points[i].distance(&points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    dist
}

/// Heap entry ordered ascending by (distance, min id, max id).
#[derive(PartialEq)]
struct PairEntry {
    dist: f64,
    a: usize,
    b: usize,
}

impl Eq for PairEntry {}

impl Ord for PairEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for ascending pops.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for PairEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Agglomerative clustering over a precomputed distance matrix.
///
/// Lazy-deletion heap over active cluster pairs with Lance-Williams
/// distance updates: O(n^2 log n) time, O(n^2) space.
pub fn agglomerate_from_distances(
    dist: &[Vec<f64>],
    n: usize,
    config: &ClusteringConfig,
) -> Result<ClusterAssignment> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Validation("agglomerate needs at least one point".into()));
    }
    let max_ids = 2 * n - 1;
    let mut active = vec![false; max_ids];
    let mut size = vec![0usize; max_ids];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); max_ids];
    // Current inter-cluster distances, indexed by (id, id).
    let mut cur = vec![vec![f64::NAN; max_ids]; max_ids];

    let mut heap = BinaryHeap::new();
    for i in 0..n {
        active[i] = true;
        size[i] = 1;
        members[i] = vec![i];
    }
    for i in 0..n {
        for j in (i + 1)..n {
            cur[i][j] = dist[i][j];
            cur[j][i] = dist[i][j];
            heap.push(PairEntry { dist: dist[i][j], a: i, b: j });
        }
    }

    let mut merges = Vec::new();
    let mut next_id = n;
    let mut last_height = f64::NEG_INFINITY;

    while let Some(entry) = heap.pop() {
        let (a, b) = (entry.a, entry.b);
        if !active[a] || !active[b] || entry.dist != cur[a][b] {
            continue; // stale
        }
        if entry.dist > config.distance_threshold {
            break;
        }
        // All three linkages are monotone, so heights never decrease.
        debug_assert!(entry.dist >= last_height);
        last_height = entry.dist;

        let id = next_id;
        next_id += 1;
        active[a] = false;
        active[b] = false;
        active[id] = true;
        size[id] = size[a] + size[b];
        let mut merged = std::mem::take(&mut members[a]);
        merged.append(&mut members[b]);
        merged.sort_unstable();
        members[id] = merged;
        merges.push(Merge { a, b, height: entry.dist });

        for c in 0..id {
            if !active[c] {
                continue;
            }
            let da = cur[a][c];
            let db = cur[b][c];
            let d = match config.linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => {
                    (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64
                }
            };
            cur[c][id] = d;
            cur[id][c] = d;
            heap.push(PairEntry { dist: d, a: c.min(id), b: c.max(id) });
        }
    }

    // Canonicalize: clusters ordered by smallest member.
    let mut final_clusters: Vec<Vec<usize>> = (0..max_ids)
        .filter(|&id| active[id])
        .map(|id| std::mem::take(&mut members[id]))
        .collect();
    final_clusters.sort_by_key(|c| c[0]);
    let mut labels = vec![0usize; n];
    for (idx, cluster) in final_clusters.iter().enumerate() {
        for &p in cluster {
            labels[p] = idx;
        }
    }
    Ok(ClusterAssignment { n_points: n, labels, clusters: final_clusters, merges })
}

/// Clusters raw points: distance matrix + `agglomerate_from_distances`.
pub fn agglomerate(points: &[Embedding], config: &ClusteringConfig) -> Result<ClusterAssignment> {
    let dist = pairwise_distances(points);
    agglomerate_from_distances(&dist, points.len(), config)
}

/// Picks the clusters used for centroid computation: all clusters with
/// strictly more than `min_cluster_size` members, or, when none qualifies,
/// exactly the single largest cluster (ties broken by lowest cluster id).
pub fn select_valid_clusters(assignment: &ClusterAssignment, min_cluster_size: usize) -> Vec<usize> {
    let valid: Vec<usize> = assignment
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() > min_cluster_size)
        .map(|(i, _)| i)
        .collect();
    if !valid.is_empty() {
        return valid;
    }
    let largest = assignment
        .clusters
        .iter()
        .enumerate()
        .max_by(|(ia, ca), (ib, cb)| ca.len().cmp(&cb.len()).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("assignment has at least one cluster");
    vec![largest]
}

/// A centroid and the size of the cluster it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    pub vector: Embedding,
    pub cluster_size: u32,
}

/// Arithmetic mean of each selected cluster, f64 accumulation.
pub fn compute_class_centroids(
    clusters: &[Vec<usize>],
    embeddings: &[Embedding],
) -> Result<Vec<Centroid>> {
    let mut out = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        if cluster.is_empty() {
            return Err(Error::Validation("cannot compute centroid of empty cluster".into()));
        }
        let dim = embeddings[cluster[0]].dim();
        let mut acc = vec![0.0f64; dim];
        for &i in cluster {
            for (a, v) in acc.iter_mut().zip(embeddings[i].values()) {
                *a += f64::from(*v);
            }
        }
        let inv = 1.0 / cluster.len() as f64;
        let mean: Vec<f32> = acc.iter().map(|a| (a * inv) as f32).collect();
        out.push(Centroid { vector: Embedding::new(mean)?, cluster_size: cluster.len() as u32 });
    }
    Ok(out)
}

/// Per-landmark centroids, ordered by landmark id.
#[derive(Clone, Debug, Default)]
pub struct CentroidSet {
    pub entries: Vec<(u32, Vec<Centroid>)>,
}

impl CentroidSet {
    pub fn total_centroids(&self) -> usize {
        self.entries.iter().map(|(_, c)| c.len()).sum()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries
            .first()
            .and_then(|(_, c)| c.first())
            .map(|c| c.vector.dim())
    }

    /// Fraction of landmarks carrying more than one centroid.
    pub fn multi_centroid_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let multi = self.entries.iter().filter(|(_, c)| c.len() > 1).count();
        multi as f64 / self.entries.len() as f64
    }
}

fn build_one_class(
    landmark_id: u32,
    embeddings: &[Embedding],
    config: &ClusteringConfig,
) -> Result<(u32, Vec<Centroid>)> {
    if embeddings.is_empty() {
        return Err(Error::Validation(format!(
            "landmark class {landmark_id} has no embeddings to cluster"
        )));
    }
    let assignment = agglomerate(embeddings, config)?;
    let selected = select_valid_clusters(&assignment, config.min_cluster_size);
    let clusters: Vec<Vec<usize>> =
        selected.iter().map(|&i| assignment.clusters[i].clone()).collect();
    let centroids = compute_class_centroids(&clusters, embeddings)?;
    Ok((landmark_id, centroids))
}

/// Clusters every class and computes its centroids. Class jobs are
/// independent; with the `parallel` feature they fan out over rayon.
pub fn build_centroid_set(
    class_embeddings: &[(u32, Vec<Embedding>)],
    config: &ClusteringConfig,
) -> Result<CentroidSet> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    let entries: Result<Vec<_>> = {
        use rayon::prelude::*;
        class_embeddings
            .par_iter()
            .map(|(id, embs)| build_one_class(*id, embs, config))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let entries: Result<Vec<_>> = class_embeddings
        .iter()
        .map(|(id, embs)| build_one_class(*id, embs, config))
        .collect();
    let mut entries = entries?;
    entries.sort_by_key(|(id, _)| *id);
    Ok(CentroidSet { entries })
}

/// Sequential variant of `build_centroid_set`, kept callable so the bench
/// suite can compare both paths.
pub fn build_centroid_set_seq(
    class_embeddings: &[(u32, Vec<Embedding>)],
    config: &ClusteringConfig,
) -> Result<CentroidSet> {
    config.validate()?;
    let mut entries = class_embeddings
        .iter()
        .map(|(id, embs)| build_one_class(*id, embs, config))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by_key(|(id, _)| *id);
    Ok(CentroidSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(values: &[f32]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn points_1d(xs: &[f32]) -> Vec<Embedding> {
        xs.iter().map(|&x| emb(&[x])).collect()
    }

    #[test]
    fn pairwise_345_triangle() {
        let pts = vec![emb(&[0.0, 0.0]), emb(&[3.0, 4.0])];
        let d = pairwise_distances(&pts);
        assert_eq!(d[0][1], 5.0);
        assert_eq!(d[1][0], 5.0);
        assert_eq!(d[0][0], 0.0);
    }

    #[test]
    fn single_point_is_a_zero_matrix_and_one_cluster() {
        let pts = points_1d(&[2.0]);
        let d = pairwise_distances(&pts);
        assert_eq!(d, vec![vec![0.0]]);
        let a = agglomerate(&pts, &ClusteringConfig::default()).unwrap();
        assert_eq!(a.clusters, vec![vec![0]]);
        assert!(a.merges.is_empty());
    }

    #[test]
    fn hand_agglomeration_complete_linkage() {
        // {0, 1, 5}: d(0,1)=1 merges; complete d({0,1},{5}) = 5 > 2 stops.
        let pts = points_1d(&[0.0, 1.0, 5.0]);
        let cfg = ClusteringConfig {
            linkage: Linkage::Complete,
            distance_threshold: 2.0,
            min_cluster_size: 1,
        };
        let a = agglomerate(&pts, &cfg).unwrap();
        assert_eq!(a.clusters, vec![vec![0, 1], vec![2]]);
        assert_eq!(a.merges.len(), 1);
        assert_eq!(a.merges[0].height, 1.0);
    }

    #[test]
    fn threshold_below_min_distance_keeps_singletons() {
        let pts = points_1d(&[0.0, 1.0, 5.0]);
        let cfg = ClusteringConfig {
            linkage: Linkage::Single,
            distance_threshold: 0.5,
            min_cluster_size: 1,
        };
        let a = agglomerate(&pts, &cfg).unwrap();
        assert_eq!(a.clusters.len(), 3);
        assert!(a.merges.is_empty());
    }

    #[test]
    fn select_valid_prefers_large_clusters() {
        // Sizes {60, 55, 10} with min 50: first two qualify.
        let mut clusters = Vec::new();
        let mut next = 0usize;
        for size in [60usize, 55, 10] {
            clusters.push((next..next + size).collect::<Vec<_>>());
            next += size;
        }
        let labels = {
            let mut l = vec![0; next];
            for (i, c) in clusters.iter().enumerate() {
                for &p in c {
                    l[p] = i;
                }
            }
            l
        };
        let a = ClusterAssignment { n_points: next, labels, clusters, merges: vec![] };
        assert_eq!(select_valid_clusters(&a, 50), vec![0, 1]);
    }

    #[test]
    fn select_falls_back_to_largest_with_tie_on_lowest_id() {
        let mk = |sizes: &[usize]| {
            let mut clusters = Vec::new();
            let mut next = 0usize;
            for &size in sizes {
                clusters.push((next..next + size).collect::<Vec<_>>());
                next += size;
            }
            let mut labels = vec![0; next];
            for (i, c) in clusters.iter().enumerate() {
                for &p in c {
                    labels[p] = i;
                }
            }
            ClusterAssignment { n_points: next, labels, clusters, merges: vec![] }
        };
        assert_eq!(select_valid_clusters(&mk(&[9, 8]), 50), vec![0]);
        assert_eq!(select_valid_clusters(&mk(&[5, 5]), 50), vec![0]);
        assert_eq!(select_valid_clusters(&mk(&[5, 7]), 50), vec![1]);
    }

    #[test]
    fn centroid_is_arithmetic_mean() {
        let embs = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let cents = compute_class_centroids(&[vec![0, 1]], &embs).unwrap();
        assert_eq!(cents[0].vector.values(), &[0.5, 0.5]);
        assert_eq!(cents[0].cluster_size, 2);
        // Singleton cluster is the point itself.
        let cents = compute_class_centroids(&[vec![1]], &embs).unwrap();
        assert_eq!(cents[0].vector, embs[1]);
    }

    #[test]
    fn small_class_always_yields_one_centroid() {
        // 20 points can never beat min_cluster_size 50.
        let pts: Vec<Embedding> = (0..20).map(|i| emb(&[i as f32 * 10.0, 0.0])).collect();
        let set = build_centroid_set(
            &[(1, pts)],
            &ClusteringConfig {
                linkage: Linkage::Complete,
                distance_threshold: 5.0,
                min_cluster_size: 50,
            },
        )
        .unwrap();
        assert_eq!(set.entries[0].1.len(), 1);
    }

    #[test]
    fn two_far_modes_give_two_centroids() {
        // 60 points around 0 and 60 around 100, threshold between the
        // within-mode diameter and the cross-mode distance.
        let mut pts = Vec::new();
        for i in 0..60 {
            pts.push(emb(&[(i % 7) as f32 * 0.1]));
        }
        for i in 0..60 {
            pts.push(emb(&[100.0 + (i % 7) as f32 * 0.1]));
        }
        let set = build_centroid_set(
            &[(3, pts)],
            &ClusteringConfig {
                linkage: Linkage::Complete,
                distance_threshold: 10.0,
                min_cluster_size: 50,
            },
        )
        .unwrap();
        let centroids = &set.entries[0].1;
        assert_eq!(centroids.len(), 2);
        assert!(centroids[0].vector.values()[0] < 1.0);
        assert!(centroids[1].vector.values()[0] > 99.0);
        assert!((set.multi_centroid_fraction() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_heights_monotone_all_linkages() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            for _ in 0..30 {
                let pts: Vec<Embedding> = (0..12)
                    .map(|_| emb(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                    .collect();
                let cfg = ClusteringConfig {
                    linkage,
                    distance_threshold: f64::INFINITY,
                    min_cluster_size: 1,
                };
                let a = agglomerate(&pts, &cfg).unwrap();
                assert_eq!(a.merges.len(), 11);
                for w in a.merges.windows(2) {
                    assert!(w[0].height <= w[1].height);
                }
            }
        }
    }
}

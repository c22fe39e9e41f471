//! Exact and approximate top-k dot-product search over centroids, plus
//! geographic scoping.
//!
//! The approximate structure is an inverted-cell index: centroids are
//! partitioned into cells by a small k-means refinement, and a query scans
//! only the `n_probe` cells whose centers score highest by dot product.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::cluster::CentroidSet;
use crate::data::codec::ByteReader;
use crate::data::{dot_f32, Embedding, MetadataTable};
use crate::error::{Error, Result};

/// Meters per degree of latitude (spherical earth, radius 6371 km).
/// Longitude degrees shrink by cos(latitude).
pub const METERS_PER_DEGREE: f64 = std::f64::consts::PI * 6_371_000.0 / 180.0;

const CELL_MAGIC: &[u8; 4] = b"CELL";
const KMEANS_ITERATIONS: usize = 10;

/// One search result, ordered by descending similarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchHit {
    pub similarity: f64,
    pub landmark_id: u32,
    /// Index of the centroid inside the index.
    pub centroid: usize,
}

#[derive(Clone, Debug)]
struct CellTable {
    n_probe: usize,
    /// n_cells * dim cell centers.
    centers: Vec<f32>,
    /// Cell id per centroid.
    assignments: Vec<u32>,
    /// Centroid indices per cell.
    members: Vec<Vec<u32>>,
}

/// Flat, read-only centroid index. Safe to share across threads once built.
#[derive(Clone, Debug)]
pub struct CentroidIndex {
    dim: usize,
    /// len * dim vector payload.
    vectors: Vec<f32>,
    landmark_ids: Vec<u32>,
    /// Position of each centroid within its landmark's centroid list.
    local_ids: Vec<u32>,
    cluster_sizes: Vec<u32>,
    cells: Option<CellTable>,
}

impl CentroidIndex {
    /// Brute-force-scannable flat index over a centroid set.
    pub fn build_exact(set: &CentroidSet) -> Result<Self> {
        let dim = set
            .dim()
            .ok_or_else(|| Error::Validation("cannot index an empty centroid set".into()))?;
        let mut vectors = Vec::with_capacity(set.total_centroids() * dim);
        let mut landmark_ids = Vec::new();
        let mut local_ids = Vec::new();
        let mut cluster_sizes = Vec::new();
        for (landmark_id, centroids) in &set.entries {
            for (j, c) in centroids.iter().enumerate() {
                if c.vector.dim() != dim {
                    return Err(Error::Shape(format!(
                        "centroid of landmark {landmark_id} has dim {}, index has dim {dim}",
                        c.vector.dim()
                    )));
                }
                vectors.extend_from_slice(c.vector.values());
                landmark_ids.push(*landmark_id);
                local_ids.push(j as u32);
                cluster_sizes.push(c.cluster_size);
            }
        }
        Ok(Self { dim, vectors, landmark_ids, local_ids, cluster_sizes, cells: None })
    }

    /// Builds the inverted-cell structure on top of the exact layout.
    /// Cell centers come from a fixed 10-iteration k-means refinement seeded
    /// by `seed`; queries probe the `n_probe` best cells.
    pub fn build_cells(set: &CentroidSet, n_cells: usize, n_probe: usize, seed: u64) -> Result<Self> {
        let mut index = Self::build_exact(set)?;
        let n = index.len();
        if n_cells < 1 || n_cells > n {
            return Err(Error::Validation(format!(
                "n_cells {n_cells} must be in [1, {n}]"
            )));
        }
        if n_probe < 1 || n_probe > n_cells {
            return Err(Error::Validation(format!(
                "n_probe {n_probe} must be in [1, {n_cells}]"
            )));
        }
        let dim = index.dim;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut centers: Vec<f64> = Vec::with_capacity(n_cells * dim);
        for i in sample_indices(&mut rng, n, n_cells) {
            centers.extend(index.vector(i).iter().map(|v| f64::from(*v)));
        }

        let mut assignments = vec![0u32; n];
        for _ in 0..KMEANS_ITERATIONS {
            for i in 0..n {
                assignments[i] = nearest_center(&centers, dim, index.vector(i)) as u32;
            }
            let mut sums = vec![0.0f64; n_cells * dim];
            let mut counts = vec![0usize; n_cells];
            for i in 0..n {
                let c = assignments[i] as usize;
                counts[c] += 1;
                for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(index.vector(i)) {
                    *s += f64::from(*v);
                }
            }
            for c in 0..n_cells {
                if counts[c] == 0 {
                    continue; // keep the previous center for empty cells
                }
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = s * inv;
                }
            }
        }
        for i in 0..n {
            assignments[i] = nearest_center(&centers, dim, index.vector(i)) as u32;
        }

        let mut members = vec![Vec::new(); n_cells];
        for (i, &c) in assignments.iter().enumerate() {
            members[c as usize].push(i as u32);
        }
        index.cells = Some(CellTable {
            n_probe,
            centers: centers.iter().map(|v| *v as f32).collect(),
            assignments,
            members,
        });
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.landmark_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmark_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn landmark_id(&self, centroid: usize) -> u32 {
        self.landmark_ids[centroid]
    }

    pub fn local_id(&self, centroid: usize) -> u32 {
        self.local_ids[centroid]
    }

    pub fn is_cell_index(&self) -> bool {
        self.cells.is_some()
    }

    fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn similarity(&self, query: &Embedding, centroid: usize) -> f64 {
        dot_f32(query.values(), self.vector(centroid))
    }

    fn check_query(&self, query: &Embedding) -> Result<()> {
        if query.dim() != self.dim {
            return Err(Error::Shape(format!(
                "query dim {} does not match index dim {}",
                query.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Calls `visit(centroid, similarity)` for every candidate the index
    /// would scan for this query: all centroids for the exact index, the
    /// probed cells' members for the cell index. `scope`, when present, must
    /// be an ascending list of centroid indices; out-of-scope candidates are
    /// skipped.
    fn scan<F: FnMut(usize, f64)>(&self, query: &Embedding, scope: Option<&[usize]>, mut visit: F) {
        let q = query.values();
        let in_scope = |i: usize| match scope {
            None => true,
            Some(s) => s.binary_search(&i).is_ok(),
        };
        match &self.cells {
            None => match scope {
                // Scoped exact search scans the scope only.
                Some(s) => {
                    for &i in s {
                        visit(i, dot_f32(q, self.vector(i)));
                    }
                }
                None => {
                    for i in 0..self.len() {
                        visit(i, dot_f32(q, self.vector(i)));
                    }
                }
            },
            Some(cells) => {
                for cell in self.probe_order(q, cells) {
                    for &i in &cells.members[cell] {
                        let i = i as usize;
                        if in_scope(i) {
                            visit(i, dot_f32(q, self.vector(i)));
                        }
                    }
                }
            }
        }
    }

    /// Cells ranked by descending dot product with the query, truncated to
    /// `n_probe`.
    fn probe_order(&self, q: &[f32], cells: &CellTable) -> Vec<usize> {
        let n_cells = cells.members.len();
        let mut scored: Vec<(f64, usize)> = (0..n_cells)
            .map(|c| (dot_f32(q, &cells.centers[c * self.dim..(c + 1) * self.dim]), c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(cells.n_probe);
        scored.into_iter().map(|(_, c)| c).collect()
    }

    /// Number of candidates this index scans for a query (exact bookkeeping
    /// for the benchmark; independent of the query vector for the exact
    /// index).
    pub fn candidates_scanned(&self, query: &Embedding, scope: Option<&[usize]>) -> Result<usize> {
        self.check_query(query)?;
        let mut count = 0usize;
        self.scan(query, scope, |_, _| count += 1);
        Ok(count)
    }

    /// Top-k centroids by dot-product similarity, descending; ties broken by
    /// lower landmark id, then lower centroid index.
    pub fn search_topk(
        &self,
        query: &Embedding,
        k: usize,
        scope: Option<&[usize]>,
    ) -> Result<Vec<SearchHit>> {
        self.check_query(query)?;
        if k < 1 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if let Some(s) = scope {
            if s.is_empty() {
                return Err(Error::Validation("empty search scope".into()));
            }
        }
        let mut hits: Vec<SearchHit> = Vec::new();
        self.scan(query, scope, |i, sim| {
            hits.push(SearchHit { similarity: sim, landmark_id: self.landmark_ids[i], centroid: i });
        });
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.landmark_id.cmp(&b.landmark_id))
                .then(a.centroid.cmp(&b.centroid))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Best similarity per landmark over the scanned candidates, descending
    /// with the same tie rule as `search_topk`. This is the landmark-level
    /// view used by inference, where multiple centroids of one landmark
    /// collapse to their best similarity.
    pub fn best_per_landmark(
        &self,
        query: &Embedding,
        scope: Option<&[usize]>,
    ) -> Result<Vec<(u32, f64)>> {
        self.check_query(query)?;
        let mut best: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
        self.scan(query, scope, |i, sim| {
            let entry = best.entry(self.landmark_ids[i]).or_insert(f64::NEG_INFINITY);
            if sim > *entry {
                *entry = sim;
            }
        });
        let mut out: Vec<(u32, f64)> = best.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Ascending centroid indices whose landmark lies inside an axis-aligned
    /// square box of `edge_meters` centered at the query location, using the
    /// equirectangular approximation. An empty result is valid and means
    /// nothing is in range.
    pub fn geo_scope(
        &self,
        metadata: &MetadataTable,
        query_lat: f64,
        query_lon: f64,
        edge_meters: f64,
    ) -> Result<Vec<usize>> {
        if !(-90.0..=90.0).contains(&query_lat) || !(-180.0..=180.0).contains(&query_lon) {
            return Err(Error::Validation(format!(
                "query location ({query_lat}, {query_lon}) out of range"
            )));
        }
        if edge_meters <= 0.0 {
            return Err(Error::Validation("geo box edge must be > 0".into()));
        }
        let half = edge_meters / 2.0;
        let lon_scale = METERS_PER_DEGREE * query_lat.to_radians().cos();
        let mut scope = Vec::new();
        for (i, lm) in self.landmark_ids.iter().enumerate() {
            let rec = metadata.get(*lm).ok_or_else(|| {
                Error::Validation(format!("metadata missing for indexed landmark {lm}"))
            })?;
            let dlat_m = (rec.latitude - query_lat) * METERS_PER_DEGREE;
            let mut dlon = rec.longitude - query_lon;
            if dlon > 180.0 {
                dlon -= 360.0;
            } else if dlon < -180.0 {
                dlon += 360.0;
            }
            let dlon_m = dlon * lon_scale;
            if dlat_m.abs() <= half && dlon_m.abs() <= half {
                scope.push(i);
            }
        }
        Ok(scope)
    }

    /// Persists the index: centroid-file payload plus an optional cell-table
    /// section (`CELL`, u32 n_cells, u32 n_probe, centers, assignments).
    pub fn save(&self, path: &Path) -> Result<()> {
        let set = self.to_centroid_set();
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        crate::cluster::codec::write_centroid_payload(&mut w, &set, self.dim)?;
        if let Some(cells) = &self.cells {
            w.write_all(CELL_MAGIC)?;
            w.write_all(&(cells.members.len() as u32).to_le_bytes())?;
            w.write_all(&(cells.n_probe as u32).to_le_bytes())?;
            for v in &cells.centers {
                w.write_all(&v.to_le_bytes())?;
            }
            for a in &cells.assignments {
                w.write_all(&a.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = ByteReader::new(&bytes);
        let set = crate::cluster::codec::read_centroid_payload(&mut r)?;
        let mut index = Self::build_exact(&set)?;
        if r.remaining() == 0 {
            return Ok(index);
        }
        r.expect_magic(CELL_MAGIC)?;
        let n_cells = r.u32("n_cells")? as usize;
        let n_probe = r.u32("n_probe")? as usize;
        let centers = r.f32_vec(n_cells * index.dim, "cell centers")?;
        let mut assignments = Vec::with_capacity(index.len());
        let mut members = vec![Vec::new(); n_cells];
        for i in 0..index.len() {
            let c = r.u32("cell assignment")?;
            if c as usize >= n_cells {
                return Err(Error::Codec(format!("cell assignment {c} out of range")));
            }
            assignments.push(c);
            members[c as usize].push(i as u32);
        }
        if r.remaining() != 0 {
            return Err(Error::Codec(format!("trailing bytes after cell table: {}", r.remaining())));
        }
        index.cells = Some(CellTable { n_probe, centers, assignments, members });
        Ok(index)
    }

    fn to_centroid_set(&self) -> CentroidSet {
        let mut entries: Vec<(u32, Vec<crate::cluster::Centroid>)> = Vec::new();
        for i in 0..self.len() {
            let centroid = crate::cluster::Centroid {
                vector: Embedding::new(self.vector(i).to_vec()).expect("index vectors are finite"),
                cluster_size: self.cluster_sizes[i],
            };
            match entries.last_mut() {
                Some((id, list)) if *id == self.landmark_ids[i] => list.push(centroid),
                _ => entries.push((self.landmark_ids[i], vec![centroid])),
            }
        }
        CentroidSet { entries }
    }
}

fn nearest_center(centers: &[f64], dim: usize, v: &[f32]) -> usize {
    let n_cells = centers.len() / dim;
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for c in 0..n_cells {
        let mut d = 0.0;
        for (x, y) in centers[c * dim..(c + 1) * dim].iter().zip(v) {
            let diff = x - f64::from(*y);
            d += diff * diff;
        }
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

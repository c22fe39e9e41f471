//! Centroid file codec.
//!
//! Layout, integers little-endian: magic `LMCT`, u32 dim, u64 count, then
//! per centroid: u32 landmark_id, u32 cluster_size, dim f32 values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cluster::{Centroid, CentroidSet};
use crate::data::codec::ByteReader;
use crate::data::Embedding;
use crate::error::{Error, Result};

pub(crate) const CENTROID_MAGIC: &[u8; 4] = b"LMCT";

pub fn write_centroid_file(path: &Path, set: &CentroidSet) -> Result<()> {
    let dim = set
        .dim()
        .ok_or_else(|| Error::Validation("cannot write empty centroid set".into()))?;
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_centroid_payload(&mut w, set, dim)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_centroid_payload<W: Write>(
    w: &mut W,
    set: &CentroidSet,
    dim: usize,
) -> Result<()> {
    w.write_all(CENTROID_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(set.total_centroids() as u64).to_le_bytes())?;
    for (landmark_id, centroids) in &set.entries {
        for c in centroids {
            if c.vector.dim() != dim {
                return Err(Error::Shape(format!(
                    "centroid of landmark {landmark_id} has dim {}, file has dim {dim}",
                    c.vector.dim()
                )));
            }
            w.write_all(&landmark_id.to_le_bytes())?;
            w.write_all(&c.cluster_size.to_le_bytes())?;
            for v in c.vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_centroid_file(path: &Path) -> Result<CentroidSet> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let set = read_centroid_payload(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Codec(format!(
            "trailing bytes after centroid records: {}",
            r.remaining()
        )));
    }
    Ok(set)
}

pub(crate) fn read_centroid_payload(r: &mut ByteReader<'_>) -> Result<CentroidSet> {
    r.expect_magic(CENTROID_MAGIC)?;
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Codec("centroid dim must be >= 1".into()));
    }
    let count = r.u64("count")? as usize;
    let mut entries: Vec<(u32, Vec<Centroid>)> = Vec::new();
    for _ in 0..count {
        let landmark_id = r.u32("landmark_id")?;
        let cluster_size = r.u32("cluster_size")?;
        let values = r.f32_vec(dim, "centroid values")?;
        let centroid = Centroid { vector: Embedding::new(values)?, cluster_size };
        match entries.last_mut() {
            Some((id, list)) if *id == landmark_id => list.push(centroid),
            _ => entries.push((landmark_id, vec![centroid])),
        }
    }
    entries.sort_by_key(|(id, _)| *id);
    Ok(CentroidSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.lmct");
        let set = CentroidSet {
            entries: vec![
                (
                    1,
                    vec![
                        Centroid {
                            vector: Embedding::new(vec![1.0, 2.0]).unwrap(),
                            cluster_size: 60,
                        },
                        Centroid {
                            vector: Embedding::new(vec![-3.0, 4.5]).unwrap(),
                            cluster_size: 55,
                        },
                    ],
                ),
                (
                    7,
                    vec![Centroid {
                        vector: Embedding::new(vec![0.25, -0.5]).unwrap(),
                        cluster_size: 9,
                    }],
                ),
            ],
        };
        write_centroid_file(&path, &set).unwrap();
        let back = read_centroid_file(&path).unwrap();
        assert_eq!(back.entries, set.entries);
    }
}

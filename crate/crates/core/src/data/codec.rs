//! File codecs for embeddings (binary) and landmark metadata (TSV).
//!
//! Embedding file layout, all integers little-endian:
//! magic `LMEB`, u32 version = 1, u32 dim, u64 count,
//! count*dim f32 values, then count u32 labels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{Embedding, LabeledSample, LandmarkMetadata};
use crate::error::{Error, Result};

pub(crate) const EMBEDDING_MAGIC: &[u8; 4] = b"LMEB";
const EMBEDDING_VERSION: u32 = 1;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Codec(format!("truncated payload: {what}")));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(4 * n, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::Codec(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }
}

/// Writes samples in the embedding file format. `dim` is taken explicitly so
/// that an empty dataset still produces a valid header.
pub fn write_embedding_file(path: &Path, dim: usize, samples: &[LabeledSample]) -> Result<()> {
    if dim == 0 {
        return Err(Error::Validation("embedding file dim must be >= 1".into()));
    }
    for s in samples {
        if s.features.dim() != dim {
            return Err(Error::Shape(format!(
                "sample dimension {} does not match file dim {dim}",
                s.features.dim()
            )));
        }
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        for v in s.features.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for s in samples {
        w.write_all(&s.label.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding file back into `(dim, samples)`.
pub fn read_embedding_file(path: &Path) -> Result<(usize, Vec<LabeledSample>)> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(EMBEDDING_MAGIC)?;
    let version = r.u32("version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Codec(format!("unsupported version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Codec("dim must be >= 1".into()));
    }
    let count = r.u64("count")? as usize;
    let expected = 4 * count * dim + 4 * count;
    if r.remaining() != expected {
        return Err(Error::Codec(format!(
            "dim/count mismatch: header promises {expected} payload bytes, file has {}",
            r.remaining()
        )));
    }
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        let values = r.f32_vec(dim, "embedding values")?;
        vectors.push(Embedding::new(values)?);
    }
    let mut samples = Vec::with_capacity(count);
    for features in vectors {
        let label = r.u32("label")?;
        samples.push(LabeledSample { features, label });
    }
    Ok((dim, samples))
}

/// Writes metadata as UTF-8, LF line endings, 7 tab-separated columns:
/// id, name, city, country, lat, lon, region_part.
pub fn write_metadata_file(path: &Path, records: &[LandmarkMetadata]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        rec.validate()?;
        for text in [&rec.name, &rec.city, &rec.country] {
            if text.contains('\t') || text.contains('\n') {
                return Err(Error::Metadata(format!(
                    "field `{text}` contains a tab or newline (landmark {})",
                    rec.landmark_id
                )));
            }
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            rec.landmark_id,
            rec.name,
            rec.city,
            rec.country,
            rec.latitude,
            rec.longitude,
            rec.region_part
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a metadata file, preserving record order. Coordinates are
/// range-checked and duplicate ids rejected.
pub fn read_metadata_file(path: &Path) -> Result<Vec<LandmarkMetadata>> {
    let text = fs::read_to_string(path)?;
    parse_metadata(&text)
}

pub(crate) fn parse_metadata(text: &str) -> Result<Vec<LandmarkMetadata>> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::Metadata(format!(
                "line {}: expected 7 tab-separated columns, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let landmark_id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::Metadata(format!("line {}: bad landmark_id `{}`", lineno + 1, fields[0])))?;
        let latitude: f64 = fields[4]
            .parse()
            .map_err(|_| Error::Metadata(format!("line {}: bad latitude `{}`", lineno + 1, fields[4])))?;
        let longitude: f64 = fields[5]
            .parse()
            .map_err(|_| Error::Metadata(format!("line {}: bad longitude `{}`", lineno + 1, fields[5])))?;
        let region_part: u8 = fields[6].parse().map_err(|_| {
            Error::Metadata(format!("line {}: non-integer region_part `{}`", lineno + 1, fields[6]))
        })?;
        let rec = LandmarkMetadata {
            landmark_id,
            name: fields[1].to_string(),
            city: fields[2].to_string(),
            country: fields[3].to_string(),
            latitude,
            longitude,
            region_part,
        };
        rec.validate()?;
        if !seen.insert(landmark_id) {
            return Err(Error::Metadata(format!("duplicate landmark_id {landmark_id}")));
        }
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(values: &[f32], label: u32) -> LabeledSample {
        LabeledSample { features: Embedding::new(values.to_vec()).unwrap(), label }
    }

    #[test]
    fn roundtrip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.lmeb");
        let samples = vec![
            sample(&[1.0, -2.5, 0.25, 3.5], 1),
            sample(&[0.0, 1e-8, -1e8, 42.0], 2),
            sample(&[7.0, 8.0, 9.0, 10.0], 3),
        ];
        write_embedding_file(&path, 4, &samples).unwrap();
        let (dim, back) = read_embedding_file(&path).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(back, samples);
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.lmeb");
        write_embedding_file(&path, 8, &[]).unwrap();
        let (dim, back) = read_embedding_file(&path).unwrap();
        assert_eq!(dim, 8);
        assert!(back.is_empty());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lmeb");
        let samples = vec![sample(&[1.0, 2.0], 1), sample(&[3.0, 4.0], 2)];
        write_embedding_file(&path, 2, &samples).unwrap();
        // Claim count=2 but keep payload for one sample only.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(4 + 4 + 4 + 8 + 2 * 4 + 4);
        std::fs::write(&path, bytes).unwrap();
        let err = read_embedding_file(&path).unwrap_err();
        assert!(err.to_string().contains("mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lmeb");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = read_embedding_file(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn metadata_line_parses() {
        let recs = parse_metadata("1\tZwinger\tDresden\tGermany\t51.053\t13.732\t1\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].region_part, 1);
        assert_eq!(recs[0].city, "Dresden");
        assert!((recs[0].latitude - 51.053).abs() < 1e-12);
    }

    #[test]
    fn metadata_errors() {
        let err = parse_metadata("1\ta\tb\tc\t91.0\t0\t1\n").unwrap_err();
        assert!(err.to_string().contains("latitude out of range"));
        let err = parse_metadata("7\ta\tb\tc\t0\t0\t1\n7\td\te\tf\t0\t0\t2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate landmark_id"));
        let err = parse_metadata("1\ta\tb\tc\t0\t0\tfirst\n").unwrap_err();
        assert!(err.to_string().contains("non-integer region_part"));
    }
}

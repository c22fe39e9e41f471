//! Minimal dense row-major matrix used by the trainer. Training math runs
//! in f64; the f32 `Embedding` type is converted at the module boundary.

use crate::data::Embedding;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_embeddings(embs: &[&Embedding]) -> Self {
        let cols = embs.first().map_or(0, |e| e.dim());
        let mut data = Vec::with_capacity(embs.len() * cols);
        for e in embs {
            data.extend(e.values().iter().map(|v| f64::from(*v)));
        }
        Self { rows: embs.len(), cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_embedding(&self, r: usize) -> Embedding {
        Embedding::new(self.row(r).iter().map(|v| *v as f32).collect())
            .expect("finite network output")
    }
}

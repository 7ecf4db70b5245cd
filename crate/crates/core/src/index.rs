//! The live index: document vectors `V`, representative queries `Z`, the
//! cached diagonal scores `d_j = z_j·v_j` and the docid table.
//!
//! Row storage is split into fixed-size shared chunks so that cloning an
//! [`IndexState`] costs O(chunks) and an append after a clone copies at most
//! one chunk. This is what lets a writer publish a new state while readers
//! keep using the previous one.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;

const CHUNK_BYTES: usize = 256 * 1024;

/// Dense row-major `f32` matrix used at API and file boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row vectors. An empty list yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        // chunks_exact panics on 0, and a 0-column matrix still has rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A finite vector in encoder space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Document identity: the external id and its row in `V`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
pub struct DocId {
    pub id: Arc<str>,
    pub row: usize,
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Element-wise mean of a document's query embeddings.
pub fn representative_query<E: AsRef<[f32]>>(queries: &[E]) -> Result<Embedding> {
    let first = queries.first().ok_or(Error::Empty("query embeddings"))?;
    let dim = first.as_ref().len();
    let mut sum = vec![0f64; dim];
    for q in queries {
        let q = q.as_ref();
        if q.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: q.len(),
            });
        }
        linalg::axpy_mixed(1.0, q, &mut sum);
    }
    let k = queries.len() as f64;
    Embedding::new(sum.iter().map(|s| (s / k) as f32).collect())
}

/// Append-only row storage in shared, fixed-size chunks.
#[derive(Clone)]
pub struct RowStore {
    width: usize,
    len: usize,
    rows_per_chunk: usize,
    chunks: Vec<Arc<Vec<f32>>>,
}

impl RowStore {
    pub fn new(width: usize) -> Self {
        let rows_per_chunk = (CHUNK_BYTES / (4 * width.max(1))).max(1);
        Self {
            width,
            len: 0,
            rows_per_chunk,
            chunks: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.width, "row width");
        if self.len % self.rows_per_chunk == 0 {
            self.chunks
                .push(Arc::new(Vec::with_capacity(self.rows_per_chunk * self.width)));
        }
        let last = self.chunks.last_mut().expect("chunk allocated above");
        // Copies the tail chunk only when a published clone still shares it.
        Arc::make_mut(last).extend_from_slice(row);
        self.len += 1;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        assert!(i < self.len, "row {i} out of bounds ({})", self.len);
        let chunk = &self.chunks[i / self.rows_per_chunk];
        let off = (i % self.rows_per_chunk) * self.width;
        &chunk[off..off + self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.len).map(move |i| self.row(i))
    }

    /// Contiguous runs of rows, in row order. Scans use this to stay inside
    /// each chunk's memory.
    pub fn chunks(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.chunks.iter().map(|c| c.as_slice())
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len * self.width);
        for c in &self.chunks {
            data.extend_from_slice(c);
        }
        Matrix {
            rows: self.len,
            cols: self.width,
            data,
        }
    }

    /// Scores every row against `query`.
    pub fn scores(&self, query: &[f32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        self.for_each_row(|_, row| out.push(linalg::dot(row, query)));
        out
    }

    pub(crate) fn for_each_row(&self, mut f: impl FnMut(usize, &[f32])) {
        if self.width == 0 {
            (0..self.len).for_each(|j| f(j, &[]));
            return;
        }
        let mut j = 0;
        for chunk in &self.chunks {
            for row in chunk.chunks_exact(self.width) {
                f(j, row);
                j += 1;
            }
        }
    }
}

impl fmt::Debug for RowStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RowStore")
            .field("width", &self.width)
            .field("len", &self.len)
            .finish()
    }
}

/// The index: `V`, `Z`, cached `d` and the id table.
#[derive(Clone, Debug)]
pub struct IndexState {
    dim: usize,
    n0: usize,
    vectors: RowStore,
    queries: RowStore,
    diag: RowStore,
    ids: imbl::Vector<Arc<str>>,
    rows_by_id: imbl::HashMap<Arc<str>, usize>,
}

impl IndexState {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            n0: 0,
            vectors: RowStore::new(dim),
            queries: RowStore::new(dim),
            diag: RowStore::new(1),
            ids: imbl::Vector::new(),
            rows_by_id: imbl::HashMap::new(),
        }
    }

    /// Builds the initial index; every row counts as an original document.
    pub fn new<S: AsRef<str>>(vectors: &Matrix, queries: &Matrix, doc_ids: &[S]) -> Result<Self> {
        if vectors.rows() != queries.rows() || vectors.cols() != queries.cols() {
            return Err(Error::ShapeMismatch(format!(
                "V is {}x{} but Z is {}x{}",
                vectors.rows(),
                vectors.cols(),
                queries.rows(),
                queries.cols()
            )));
        }
        if doc_ids.len() != vectors.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} doc ids for {} rows",
                doc_ids.len(),
                vectors.rows()
            )));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("document vectors"));
        }
        if !queries.is_finite() {
            return Err(Error::NonFinite("representative queries"));
        }
        let mut state = Self::empty(vectors.cols());
        for (j, id) in doc_ids.iter().enumerate() {
            state.push_row(id.as_ref(), vectors.row(j), queries.row(j), None)?;
        }
        state.n0 = state.len();
        Ok(state)
    }

    /// Reassembles a state from persisted parts, keeping `d` as stored.
    pub fn from_parts<S: AsRef<str>>(
        vectors: &Matrix,
        queries: &Matrix,
        diag: &[f32],
        doc_ids: &[S],
        n0: usize,
    ) -> Result<Self> {
        if vectors.rows() != queries.rows()
            || vectors.cols() != queries.cols()
            || diag.len() != vectors.rows()
            || doc_ids.len() != vectors.rows()
        {
            return Err(Error::ShapeMismatch(format!(
                "V {}x{}, Z {}x{}, d {}, ids {}",
                vectors.rows(),
                vectors.cols(),
                queries.rows(),
                queries.cols(),
                diag.len(),
                doc_ids.len()
            )));
        }
        if n0 > vectors.rows() {
            return Err(Error::ShapeMismatch(format!(
                "n0={n0} exceeds {} rows",
                vectors.rows()
            )));
        }
        if !vectors.is_finite() || !queries.is_finite() || diag.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("index parts"));
        }
        let mut state = Self::empty(vectors.cols());
        for (j, id) in doc_ids.iter().enumerate() {
            state.push_row(id.as_ref(), vectors.row(j), queries.row(j), Some(diag[j]))?;
        }
        state.n0 = n0;
        Ok(state)
    }

    /// Appends `[V; v]`, `[Z; q̄]` and `d ← [d; q̄·v]`. Earlier rows are not
    /// touched.
    pub fn append_document(&mut self, doc_id: &str, v: &[f32], q_bar: &[f32]) -> Result<DocId> {
        for x in [v, q_bar] {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.len(),
                });
            }
        }
        if v.iter().chain(q_bar).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("appended document"));
        }
        self.push_row(doc_id, v, q_bar, None)
    }

    fn push_row(&mut self, doc_id: &str, v: &[f32], z: &[f32], diag: Option<f32>) -> Result<DocId> {
        if self.rows_by_id.contains_key(doc_id) {
            return Err(Error::DuplicateId(doc_id.to_owned()));
        }
        let row = self.len();
        let id: Arc<str> = Arc::from(doc_id);
        let d = diag.unwrap_or_else(|| linalg::dot(z, v) as f32);
        self.vectors.push(v);
        self.queries.push(z);
        self.diag.push(&[d]);
        self.ids.push_back(id.clone());
        self.rows_by_id.insert(id.clone(), row);
        Ok(DocId { id, row })
    }

    /// Recomputes `z_j·v_j` for every row, independent of the cache.
    pub fn recompute_diag(&self) -> Vec<f32> {
        (0..self.len())
            .map(|j| linalg::dot(self.queries.row(j), self.vectors.row(j)) as f32)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of documents present at construction ("original" documents).
    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn vectors(&self) -> &RowStore {
        &self.vectors
    }

    pub fn queries(&self) -> &RowStore {
        &self.queries
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        self.vectors.row(row)
    }

    pub fn query(&self, row: usize) -> &[f32] {
        self.queries.row(row)
    }

    pub fn diag(&self, row: usize) -> f32 {
        self.diag.row(row)[0]
    }

    pub fn diag_values(&self) -> Vec<f32> {
        self.diag.iter().map(|r| r[0]).collect()
    }

    pub(crate) fn diag_store(&self) -> &RowStore {
        &self.diag
    }

    pub fn doc_id(&self, row: usize) -> DocId {
        DocId {
            id: self.ids[row].clone(),
            row,
        }
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows_by_id.get(id).copied()
    }

    pub fn lookup(&self, id: &str) -> Result<DocId> {
        self.row_of(id)
            .map(|row| self.doc_id(row))
            .ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.ids.iter().map(|s| &**s)
    }

    pub fn is_original(&self, row: usize) -> bool {
        row < self.n0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn new_index_caches_diagonal() {
        let s = IndexState::new(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0]]), &["a"]).unwrap();
        assert_eq!(s.diag_values(), vec![1.0]);
        assert_eq!(s.n0(), 1);

        let s = IndexState::new(
            &m(&[&[1.0, 2.0], &[3.0, 4.0]]),
            &m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &["a", "b"],
        )
        .unwrap();
        assert_eq!(s.diag_values(), vec![1.0, 4.0]);
    }

    #[test]
    fn new_index_rejects_bad_input() {
        let v = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            IndexState::new(&v, &v, &["a", "a"]),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
        assert!(matches!(
            IndexState::new(&v, &m(&[&[1.0, 0.0]]), &["a", "b"]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            IndexState::new(&v, &v, &["a"]),
            Err(Error::ShapeMismatch(_))
        ));
        let bad = m(&[&[f32::NAN, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            IndexState::new(&bad, &v, &["a", "b"]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn representative_query_means() {
        let q = representative_query(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(q.as_slice(), &[2.0, 2.0]);
        let q = representative_query(&[vec![5.0, 5.0]]).unwrap();
        assert_eq!(q.as_slice(), &[5.0, 5.0]);
        let q = representative_query(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn representative_query_errors() {
        let none: [Vec<f32>; 0] = [];
        assert!(matches!(representative_query(&none), Err(Error::Empty(_))));
        assert!(matches!(
            representative_query(&[vec![1.0, 0.0], vec![1.0]]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn append_extends_diag() {
        let mut s = IndexState::new(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0]]), &["a"]).unwrap();
        let id = s.append_document("b", &[0.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(id.row, 1);
        assert_eq!(s.diag_values(), vec![1.0, 2.0]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.n0(), 1);
        assert!(matches!(
            s.append_document("a", &[0.0, 2.0], &[0.0, 1.0]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            s.append_document("c", &[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn recompute_diag_cases() {
        assert!(IndexState::empty(4).recompute_diag().is_empty());
        let s = IndexState::new(
            &m(&[&[1.0, 2.0], &[3.0, 4.0]]),
            &m(&[&[0.5, 0.25], &[0.0, 1.0]]),
            &["a", "b"],
        )
        .unwrap();
        assert_eq!(s.recompute_diag(), s.diag_values());
    }

    #[test]
    fn clone_shares_rows_until_append() {
        let mut a = IndexState::empty(3);
        for i in 0..10 {
            a.append_document(&format!("d{i}"), &[i as f32, 1.0, 0.0], &[1.0, 0.0, 0.0])
                .unwrap();
        }
        let b = a.clone();
        a.append_document("x", &[9.0, 9.0, 9.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(a.len(), 11);
        for j in 0..10 {
            assert_eq!(a.vector(j), b.vector(j));
        }
        assert_eq!(b.row_of("x"), None);
        assert_eq!(a.row_of("x"), Some(10));
    }

    #[test]
    fn row_store_spans_chunks() {
        let width = 70_000;
        let mut store = RowStore::new(width);
        assert_eq!(store.rows_per_chunk, 1);
        for i in 0..3 {
            store.push(&vec![i as f32; width]);
        }
        assert_eq!(store.chunks().count(), 3);
        assert_eq!(store.row(2)[5], 2.0);
        let mut seen = Vec::new();
        store.for_each_row(|j, r| seen.push((j, r[0])));
        assert_eq!(seen, vec![(0, 0.0), (1, 1.0), (2, 2.0)]);
    }
}

//! On-disk formats. All integers are little-endian.
//!
//! Embedding file:
//!
//! ```text
//! "IDSI" | version: u32 = 1 | m: u64 | h: u32 | m·h f32, row-major
//! ```
//!
//! Query manifest: one tab-separated line per query embedding,
//! `row_index  doc_id  natural|generated  train|val|test`.
//!
//! Snapshot:
//!
//! ```text
//! "IDSS" | version: u32 = 1 | n0: u64
//! lambda1, lambda2, gamma1, gamma2: f64 | loss variant: u8 (0 squared hinge, 1 hinge)
//! then four sections, each `length: u64 | bytes`:
//!   V (embedding file), Z (embedding file), d (embedding file, m×1),
//!   doc ids (each followed by '\n')
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::index::{IndexState, Matrix};
use crate::objective::{Hyperparams, LossVariant};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"IDSI";
pub const SNAPSHOT_MAGIC: [u8; 4] = *b"IDSS";
pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 20;

/// Canonical bytes of an embedding file.
pub fn encode_matrix(matrix: &Matrix) -> Result<Vec<u8>> {
    if !matrix.is_finite() {
        return Err(Error::NonFinite("embedding matrix"));
    }
    let h = u32::try_from(matrix.cols())
        .map_err(|_| Error::InvalidArgument(format!("dimension {} too large", matrix.cols())))?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for x in matrix.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Parses an embedding file image; `path` is only used in errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < EMBEDDING_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != EMBEDDING_MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(Error::corrupt(
            path,
            format!("{} bytes is shorter than the header", bytes.len()),
        ));
    }
    if bytes[..4] != EMBEDDING_MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let expected = (m as u128) * (h as u128) * 4 + EMBEDDING_HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::corrupt(
            path,
            format!(
                "header says {m}x{h} ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f32> = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        let (row, col) = if h == 0 { (0, 0) } else { (i / h as usize, i % h as usize) };
        return Err(Error::corrupt(
            path,
            format!("non-finite value at row {row}, column {col}"),
        ));
    }
    Matrix::new(m as usize, h as usize, data)
}

fn bad_magic(bytes: &[u8], path: &Path) -> Error {
    Error::BadMagic {
        path: path.into(),
        found: bytes[..4].try_into().unwrap(),
    }
}

pub fn write_embedding_matrix(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_matrix(matrix)?)
}

pub fn read_embedding_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    decode_matrix(&fs::read(path)?, path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryKind {
    Natural,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

macro_rules! token_enum {
    ($ty:ident { $($variant:ident => $token:literal),+ }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $token),+
                }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($token => Ok($ty::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($ty).to_lowercase())),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

token_enum!(QueryKind { Natural => "natural", Generated => "generated" });
token_enum!(Split { Train => "train", Val => "val", Test => "test" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub row_index: usize,
    pub doc_id: String,
    pub kind: QueryKind,
    pub split: Split,
}

/// Parses a manifest whose companion embedding file has `rows` rows.
pub fn parse_query_manifest(text: &str, rows: usize, path: &Path) -> Result<Vec<QueryRecord>> {
    let err = |line: usize, reason: String| Error::Manifest {
        path: path.into(),
        line,
        reason,
    };
    let mut seen = std::collections::HashMap::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(
                line_no,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let row_index: usize = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("invalid row index {:?}", fields[0])))?;
        if row_index >= rows {
            return Err(err(
                line_no,
                format!("row index {row_index} out of range for {rows} embeddings"),
            ));
        }
        if let Some(first) = seen.insert(row_index, line_no) {
            return Err(err(
                line_no,
                format!("duplicate row index {row_index} (first used on line {first})"),
            ));
        }
        let doc_id = fields[1];
        if doc_id.is_empty() {
            return Err(err(line_no, "empty doc id".into()));
        }
        let kind = fields[2].parse().map_err(|e| err(line_no, e))?;
        let split = fields[3].parse().map_err(|e| err(line_no, e))?;
        records.push(QueryRecord {
            row_index,
            doc_id: doc_id.to_owned(),
            kind,
            split,
        });
    }
    Ok(records)
}

pub fn read_query_manifest(path: impl AsRef<Path>, rows: usize) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_query_manifest(&text, rows, path)
}

pub fn format_query_manifest(records: &[QueryRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        check_id(&r.doc_id)?;
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.row_index, r.doc_id, r.kind, r.split));
    }
    Ok(out)
}

pub fn write_query_manifest(records: &[QueryRecord], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_query_manifest(records)?.as_bytes())
}

/// Ids end up in newline- and tab-delimited files.
fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\n', '\r', '\t']) {
        return Err(Error::InvalidArgument(format!(
            "doc id {id:?} must be non-empty and free of tabs and line breaks"
        )));
    }
    Ok(())
}

pub fn encode_snapshot(state: &IndexState, hp: &Hyperparams) -> Result<Vec<u8>> {
    hp.validate()?;
    let mut ids = String::new();
    for id in state.doc_ids() {
        check_id(id)?;
        ids.push_str(id);
        ids.push('\n');
    }
    let diag = Matrix::new(state.len(), 1, state.diag_values())?;
    let sections = [
        encode_matrix(&state.vectors().to_matrix())?,
        encode_matrix(&state.queries().to_matrix())?,
        encode_matrix(&diag)?,
        ids.into_bytes(),
    ];

    let mut out = Vec::new();
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.n0() as u64).to_le_bytes());
    for x in [hp.lambda1, hp.lambda2, hp.gamma1, hp.gamma2] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.push(match hp.loss_variant {
        LossVariant::SquaredHinge => 0,
        LossVariant::Hinge => 1,
    });
    for s in &sections {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        out.extend_from_slice(s);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(
                self.path,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn section(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = self.u64(what)?;
        let len = usize::try_from(len)
            .map_err(|_| Error::corrupt(self.path, format!("{what} length {len} too large")))?;
        self.take(len, what)
    }
}

pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<(IndexState, Hyperparams)> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n0 = r.u64("n0")?;
    let lambda1 = r.f64("lambda1")?;
    let lambda2 = r.f64("lambda2")?;
    let gamma1 = r.f64("gamma1")?;
    let gamma2 = r.f64("gamma2")?;
    let loss_variant = match r.take(1, "loss variant")?[0] {
        0 => LossVariant::SquaredHinge,
        1 => LossVariant::Hinge,
        other => return Err(Error::corrupt(path, format!("unknown loss variant tag {other}"))),
    };
    let hp = Hyperparams {
        lambda1,
        lambda2,
        gamma1,
        gamma2,
        loss_variant,
    };
    hp.validate()
        .map_err(|e| Error::corrupt(path, format!("stored hyperparameters: {e}")))?;

    let nested = |what: &str, e: Error| match e {
        Error::Corrupt { reason, .. } => Error::corrupt(path, format!("{what}: {reason}")),
        Error::BadMagic { found, .. } => {
            Error::corrupt(path, format!("{what}: bad magic {found:?}"))
        }
        other => other,
    };
    let vectors = decode_matrix(r.section("V")?, path).map_err(|e| nested("V", e))?;
    let queries = decode_matrix(r.section("Z")?, path).map_err(|e| nested("Z", e))?;
    let diag = decode_matrix(r.section("d")?, path).map_err(|e| nested("d", e))?;
    let id_bytes = r.section("doc ids")?;
    if r.pos != bytes.len() {
        return Err(Error::corrupt(
            path,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    if diag.cols() != 1 && diag.rows() > 0 {
        return Err(Error::corrupt(path, "d must have one column"));
    }
    let ids_text = std::str::from_utf8(id_bytes)
        .map_err(|_| Error::corrupt(path, "doc ids are not UTF-8"))?;
    if !ids_text.is_empty() && !ids_text.ends_with('\n') {
        return Err(Error::corrupt(path, "doc id table is truncated"));
    }
    let ids: Vec<&str> = ids_text.lines().collect();
    let mut unique = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !unique.insert(**id)) {
        return Err(Error::corrupt(path, format!("duplicate doc id {dup:?}")));
    }
    let n0 = usize::try_from(n0).map_err(|_| Error::corrupt(path, "n0 too large"))?;
    let state = IndexState::from_parts(&vectors, &queries, diag.as_slice(), &ids, n0)
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok((state, hp))
}

pub fn save_snapshot(state: &IndexState, hp: &Hyperparams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_snapshot(state, hp)?)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<(IndexState, Hyperparams)> {
    let path = path.as_ref();
    decode_snapshot(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn embedding_bytes_by_hand() {
        let m = Matrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        let mut expected = b"IDSI".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0]);
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0xc0]);
        assert_eq!(bytes, expected);
        assert_eq!(decode_matrix(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn embedding_errors() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_matrix(&m).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_matrix(&bad, p()), Err(Error::BadMagic { .. })));

        assert!(matches!(
            decode_matrix(&bytes[..bytes.len() - 1], p()),
            Err(Error::Corrupt { .. })
        ));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_matrix(&v2, p()),
            Err(Error::VersionMismatch { found: 2, .. })
        ));

        let mut nan = bytes.clone();
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_matrix(&nan, p()), Err(Error::Corrupt { .. })));

        let inf = Matrix::new(1, 1, vec![f32::INFINITY]);
        assert!(inf.is_err() || encode_matrix(&inf.unwrap()).is_err());
    }

    #[test]
    fn manifest_cases() {
        assert!(parse_query_manifest("", 3, p()).unwrap().is_empty());
        let one = parse_query_manifest("2\tdoc-7\tgenerated\tval\n", 3, p()).unwrap();
        assert_eq!(
            one,
            vec![QueryRecord {
                row_index: 2,
                doc_id: "doc-7".into(),
                kind: QueryKind::Generated,
                split: Split::Val,
            }]
        );
        let dup = parse_query_manifest("0\ta\tnatural\ttrain\n0\tb\tnatural\ttest\n", 3, p());
        match dup {
            Err(Error::Manifest { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        for bad in [
            "5\ta\tnatural\ttrain",
            "x\ta\tnatural\ttrain",
            "0\ta\tnatural",
            "0\ta\tspoken\ttrain",
            "0\ta\tnatural\tdev",
            "0\t\tnatural\ttrain",
        ] {
            assert!(
                matches!(parse_query_manifest(bad, 3, p()), Err(Error::Manifest { line: 1, .. })),
                "{bad}"
            );
        }
        let text = format_query_manifest(&one).unwrap();
        assert_eq!(parse_query_manifest(&text, 3, p()).unwrap(), one);
    }

    fn small_state() -> IndexState {
        let v = Matrix::from_rows(&[[0.5f32, -1.25], [3.0, 0.125]]).unwrap();
        let z = Matrix::from_rows(&[[1.0f32, 0.1], [0.3, 0.7]]).unwrap();
        let mut s = IndexState::new(&v, &z, &["a", "b"]).unwrap();
        s.append_document("c", &[0.1, 0.2], &[0.3, 0.4]).unwrap();
        s
    }

    #[test]
    fn snapshot_round_trip() {
        let s = small_state();
        let hp = Hyperparams {
            loss_variant: LossVariant::Hinge,
            ..Default::default()
        };
        let bytes = encode_snapshot(&s, &hp).unwrap();
        let (back, hp_back) = decode_snapshot(&bytes, p()).unwrap();
        assert_eq!(hp_back, hp);
        assert_eq!(back.n0(), 2);
        assert_eq!(back.vectors().to_matrix(), s.vectors().to_matrix());
        assert_eq!(back.queries().to_matrix(), s.queries().to_matrix());
        assert_eq!(back.diag_values(), s.diag_values());
        assert!(back.doc_ids().eq(s.doc_ids()));
        assert_eq!(encode_snapshot(&back, &hp_back).unwrap(), bytes);

        let empty = IndexState::empty(4);
        let (e, _) = decode_snapshot(&encode_snapshot(&empty, &hp).unwrap(), p()).unwrap();
        assert_eq!((e.len(), e.dim()), (0, 4));
    }

    #[test]
    fn snapshot_corruption() {
        let bytes = encode_snapshot(&small_state(), &Hyperparams::default()).unwrap();
        for cut in [3, 10, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_snapshot(&bytes[..cut], p()), Err(Error::Corrupt { .. } | Error::BadMagic { .. })),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_snapshot(&extra, p()), Err(Error::Corrupt { .. })));

        let mut v9 = bytes.clone();
        v9[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            decode_snapshot(&v9, p()),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        assert!(matches!(
            encode_snapshot(&IndexState::new(
                &Matrix::from_rows(&[[1.0f32]]).unwrap(),
                &Matrix::from_rows(&[[1.0f32]]).unwrap(),
                &["bad\nid"]
            )
            .unwrap(), &Hyperparams::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}

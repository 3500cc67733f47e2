//! File formats.
//!
//! * Metadata: JSON lines, one [`ClipMeta`] object per line.
//! * Embeddings: `"MIRK"`, then version, rows and cols as little-endian
//!   `u32`, then `rows × cols` little-endian `f32` values, row-major.
//! * Score and correlation matrices: CSV with a header row of column ids and
//!   a leading id column. Leading `#` lines carry the producing configuration.
//! * Projection heads: two embedding blocks back to back (video, then text).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, Matrix};
use crate::sampling::ClipMeta;
use crate::trainer::{ProjectionHead, TrainConfig, TrainingCurve};

pub const MAGIC: &[u8; 4] = b"MIRK";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- metadata

const META_KEYS: [&str; 9] = [
    "clip_id",
    "video_id",
    "t_start",
    "t_end",
    "nouns",
    "verbs",
    "verb_class",
    "noun_class",
    "text",
];

fn bad_type(path: &Path, line: usize, key: &str, detail: impl Into<String>) -> Error {
    Error::BadType {
        path: path.to_path_buf(),
        line,
        key: key.to_string(),
        detail: detail.into(),
    }
}

fn parse_meta_line(obj: &Map<String, Value>, path: &Path, line: usize) -> Result<ClipMeta> {
    for key in META_KEYS {
        if !obj.contains_key(key) {
            return Err(Error::MissingKey {
                path: path.to_path_buf(),
                line,
                key,
            });
        }
    }
    let string = |key: &str| -> Result<String> {
        obj[key]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| bad_type(path, line, key, "expected a string"))
    };
    let number = |key: &str| -> Result<f64> {
        obj[key]
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad_type(path, line, key, "expected a finite number"))
    };
    let class = |key: &str| -> Result<u32> {
        obj[key]
            .as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| bad_type(path, line, key, "expected a non-negative integer"))
    };
    let tags = |key: &str| -> Result<_> {
        let arr = obj[key]
            .as_array()
            .ok_or_else(|| bad_type(path, line, key, "expected an array of integers"))?;
        arr.iter()
            .map(|v| {
                v.as_i64()
                    .ok_or_else(|| bad_type(path, line, key, "expected an array of integers"))
            })
            .collect()
    };
    let meta = ClipMeta {
        clip_id: string("clip_id")?,
        video_id: string("video_id")?,
        t_start: number("t_start")?,
        t_end: number("t_end")?,
        nouns: tags("nouns")?,
        verbs: tags("verbs")?,
        verb_class: class("verb_class")?,
        noun_class: class("noun_class")?,
        text: string("text")?,
    };
    if meta.t_start >= meta.t_end {
        return Err(Error::BadSpan {
            path: path.to_path_buf(),
            line,
        });
    }
    Ok(meta)
}

/// Parses JSON-lines metadata. `path` is only used in error messages; line
/// numbers start at 1. Blank lines are skipped.
pub fn parse_metadata_str(text: &str, path: &Path) -> Result<Vec<ClipMeta>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: "expected a JSON object".into(),
        })?;
        out.push(parse_meta_line(obj, path, line)?);
    }
    Ok(out)
}

pub fn parse_metadata(path: impl AsRef<Path>) -> Result<Vec<ClipMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata_str(&text, path)
}

pub fn metadata_to_string(metas: &[ClipMeta]) -> String {
    let mut s = String::new();
    for m in metas {
        s.push_str(&serde_json::to_string(m).expect("metadata serializes"));
        s.push('\n');
    }
    s
}

pub fn write_metadata(metas: &[ClipMeta], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), metadata_to_string(metas).as_bytes())
}

// -------------------------------------------------------------- embeddings

/// Serializes to the binary embedding format; values are rounded to `f32`.
pub fn encode_matrix(matrix: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| Error::ShapeMismatch("too many rows for the file format".into()))?;
    let cols = u32::try_from(matrix.cols())
        .map_err(|_| Error::ShapeMismatch("too many columns for the file format".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &x in matrix.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes one block from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(Matrix, usize)> {
    let truncated = |expected: usize| Error::TruncatedFile {
        path: path.to_path_buf(),
        expected: expected as u64,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(truncated(HEADER_LEN));
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.to_path_buf(),
            version,
        });
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let len = HEADER_LEN + 4 * rows * cols;
    if bytes.len() < len {
        return Err(truncated(len));
    }
    let data = bytes[HEADER_LEN..len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((Matrix::new(rows, cols, data)?, len))
}

fn decode_exact(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let (m, used) = decode_matrix(bytes, path)?;
    if used != bytes.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: format!("{} trailing bytes after matrix", bytes.len() - used),
        });
    }
    Ok(m)
}

/// Reads any matrix (e.g. raw features) from the binary format.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    decode_exact(&read_file(path)?, path)
}

/// Reads a matrix whose rows must be unit norm.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_unit_rows(read_matrix(path)?)
}

pub fn write_matrix(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_matrix(matrix)?)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(matrix, path)
}

pub fn write_head(head: &ProjectionHead, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = encode_matrix(&head.weight_video)?;
    bytes.extend(encode_matrix(&head.weight_text)?);
    write_file(path.as_ref(), &bytes)
}

pub fn read_head(path: impl AsRef<Path>) -> Result<ProjectionHead> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (weight_video, used) = decode_matrix(&bytes, path)?;
    let weight_text = decode_exact(&bytes[used..], path)?;
    Ok(ProjectionHead {
        weight_video,
        weight_text,
    })
}

// --------------------------------------------------------------------- CSV

/// A matrix with row and column ids, as stored in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    /// Leading `#` lines, without the marker.
    pub comments: Vec<String>,
    /// Header cell above the id column.
    pub corner: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub matrix: Matrix,
}

impl LabeledMatrix {
    /// Labels a matrix with `{row_prefix}{i}` / `{col_prefix}{j}` ids.
    pub fn indexed(matrix: Matrix, row_prefix: &str, col_prefix: &str) -> Self {
        Self {
            comments: Vec::new(),
            corner: "id".into(),
            row_ids: (0..matrix.rows())
                .map(|i| format!("{row_prefix}{i}"))
                .collect(),
            col_ids: (0..matrix.cols())
                .map(|j| format!("{col_prefix}{j}"))
                .collect(),
            matrix,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push('#');
            out.push_str(c);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header =
            std::iter::once(self.corner.as_str()).chain(self.col_ids.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for (i, id) in self.row_ids.iter().enumerate() {
            let cells =
                std::iter::once(id.clone()).chain(self.matrix.row(i).iter().map(|x| x.to_string()));
            w.write_record(cells).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut comments = Vec::new();
        let mut rest = text;
        while let Some(stripped) = rest.strip_prefix('#') {
            let (line, tail) = stripped.split_once('\n').unwrap_or((stripped, ""));
            comments.push(line.to_string());
            rest = tail;
        }
        let offset = comments.len();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(rest.as_bytes());
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| parse_err(offset + 1, "missing header row".into()))?
            .map_err(|e| parse_err(offset + 1, e.to_string()))?;
        let mut fields = header.iter();
        let corner = fields.next().unwrap_or_default().to_string();
        let col_ids: Vec<String> = fields.map(str::to_owned).collect();
        let mut row_ids = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in records.enumerate() {
            let line = offset + i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            if rec.len() != col_ids.len() + 1 {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", col_ids.len() + 1, rec.len()),
                ));
            }
            row_ids.push(rec[0].to_string());
            for cell in rec.iter().skip(1) {
                let x: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("`{cell}` is not a number")))?;
                data.push(x);
            }
        }
        let matrix = Matrix::new(row_ids.len(), col_ids.len(), data)?;
        Ok(Self {
            comments,
            corner,
            row_ids,
            col_ids,
            matrix,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_csv_string().as_bytes())
    }
}

// ------------------------------------------------------------------- curve

pub fn curve_to_csv(curve: &TrainingCurve, config: &TrainConfig) -> String {
    let mut out = String::new();
    out.push_str("# optimizer: plain gradient descent (no momentum, no adaptive moments)\n");
    out.push_str(&format!(
        "# config: {}\n",
        serde_json::to_string(&config.resolved()).expect("config serializes")
    ));
    out.push_str("epoch,loss,map_avg,ndcg_avg\n");
    for r in &curve.records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.loss, r.map_avg, r.ndcg_avg
        ));
    }
    out
}

pub fn write_curve(
    curve: &TrainingCurve,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(curve_to_csv(curve, config).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Path label used for in-memory parsing.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}

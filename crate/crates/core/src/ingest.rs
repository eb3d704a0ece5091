//! Reading and writing label masks and cohort metadata.
//!
//! Masks are 8-bit single-channel rasters whose pixel value is the class
//! code, stored either as grayscale PNG (no palette, no alpha) or as binary
//! PGM (`P5`, maxval 255). Metadata is a UTF-8 CSV with header
//! `id,sex,race[,split]`, using the codes `M`/`F`, `WC`/`BAA` and
//! `train`/`val`/`test`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    is_valid_id, validate_mask, CohortRecord, GroupKey, GroupingAttribute, LabelMask, ModelError,
    Race, Sex, Split,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: unsupported mask format: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    InvalidMask {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("metadata is missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("metadata row {row}: bad value {value:?} in column {column:?}")]
    BadEnumValue {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("metadata row {row}: invalid id {id:?} (expected [A-Za-z0-9_-]+)")]
    BadId { row: usize, id: String },
    #[error("duplicate id {0:?} in metadata")]
    DuplicateId(String),
    #[error("missing {which} mask for id {id:?} in {dir}")]
    MissingMask {
        id: String,
        which: MaskRole,
        dir: PathBuf,
    },
    #[error("id {id:?}: ground truth is {gt:?} but prediction is {pred:?} (width, height)")]
    DimensionMismatch {
        id: String,
        gt: (usize, usize),
        pred: (usize, usize),
    },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn unsupported(path: &Path, reason: impl Into<String>) -> Self {
        IngestError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    GroundTruth,
    Prediction,
}

impl fmt::Display for MaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskRole::GroundTruth => "ground-truth",
            MaskRole::Prediction => "prediction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFormat {
    #[default]
    Png,
    Pgm,
}

impl MaskFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MaskFormat::Png => "png",
            MaskFormat::Pgm => "pgm",
        }
    }
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Reads a mask file. The format is detected from the file's leading bytes.
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_mask(&bytes, path)
}

fn decode_mask(bytes: &[u8], path: &Path) -> Result<LabelMask, IngestError> {
    let (width, height, data) = if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes, path)?
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes, path)?
    } else {
        return Err(IngestError::unsupported(path, "neither PNG nor binary PGM (P5)"));
    };
    validate_mask(width, height, data).map_err(|source| IngestError::InvalidMask {
        path: path.to_path_buf(),
        source,
    })
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>), IngestError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IngestError::unsupported(path, e.to_string()))?;
    {
        let info = reader.info();
        if info.color_type != png::ColorType::Grayscale {
            return Err(IngestError::unsupported(
                path,
                format!("expected 1-channel grayscale, found {:?}", info.color_type),
            ));
        }
        if info.bit_depth != png::BitDepth::Eight {
            return Err(IngestError::unsupported(
                path,
                format!("expected 8-bit samples, found {:?}", info.bit_depth),
            ));
        }
        if info.trns.is_some() {
            return Err(IngestError::unsupported(path, "transparency chunk present"));
        }
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IngestError::unsupported(path, "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| IngestError::unsupported(path, e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Ok((frame.width as usize, frame.height as usize, buf))
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>), IngestError> {
    // Header: magic, width, height, maxval, separated by whitespace or
    // comments, then exactly one whitespace byte before the raster.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::unsupported(path, "malformed PGM header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(IngestError::unsupported(path, "malformed PGM header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(IngestError::unsupported(
            path,
            format!("PGM maxval must be 255, found {maxval}"),
        ));
    }
    let expected = width.saturating_mul(height);
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(IngestError::unsupported(path, "truncated PGM raster"));
    }
    Ok((width, height, raster[..expected].to_vec()))
}

/// Encodes a mask as an 8-bit grayscale PNG.
pub fn encode_png(mask: &LabelMask) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, mask.width() as u32, mask.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .expect("writing to a Vec cannot fail");
        writer
            .write_image_data(mask.data())
            .expect("buffer length matches the header");
    }
    out
}

/// Encodes a mask as a binary PGM (`P5`, maxval 255).
pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    out
}

pub fn write_mask(
    path: impl AsRef<Path>,
    mask: &LabelMask,
    format: MaskFormat,
) -> Result<(), IngestError> {
    let path = path.as_ref();
    let bytes = match format {
        MaskFormat::Png => encode_png(mask),
        MaskFormat::Pgm => encode_pgm(mask),
    };
    fs::write(path, bytes).map_err(|e| IngestError::io(path, e))
}

/// Records in file row order with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    pub records: Vec<CohortRecord>,
    pub source_path: PathBuf,
}

impl CohortTable {
    pub fn new(records: Vec<CohortRecord>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(IngestError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            source_path: PathBuf::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record counts per observed level of `attribute`, in canonical order.
    pub fn group_counts(&self, attribute: GroupingAttribute) -> Vec<(GroupKey, usize)> {
        let mut counts = vec![0usize; attribute.levels().len()];
        for r in &self.records {
            counts[r.level_index(attribute)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .map(|(i, n)| {
                let key = GroupKey::new(attribute, attribute.levels()[i]).expect("canonical level");
                (key, n)
            })
            .collect()
    }

    pub fn has_splits(&self) -> bool {
        self.records.iter().any(|r| r.split.is_some())
    }

    pub fn in_split(&self, split: Split) -> Vec<CohortRecord> {
        self.records
            .iter()
            .filter(|r| r.split == Some(split))
            .cloned()
            .collect()
    }
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<CohortTable, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut table = parse_metadata(&bytes).map_err(|e| match e {
        IngestError::Csv { source, .. } => IngestError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    table.source_path = path.to_path_buf();
    Ok(table)
}

/// Parses metadata CSV text. Data rows are numbered from 1 in errors.
pub fn parse_metadata(bytes: &[u8]) -> Result<CohortTable, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: PathBuf::new(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &'static str| headers.iter().position(|h| h == name);
    let id_col = column("id").ok_or(IngestError::MissingColumn("id"))?;
    let sex_col = column("sex").ok_or(IngestError::MissingColumn("sex"))?;
    let race_col = column("race").ok_or(IngestError::MissingColumn("race"))?;
    let split_col = column("split");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_err)?;
        let field = |col: usize| row.get(col).unwrap_or("");
        let id = field(id_col);
        if !is_valid_id(id) {
            return Err(IngestError::BadId {
                row: row_no,
                id: id.to_string(),
            });
        }
        let bad = |column: &'static str, value: &str| IngestError::BadEnumValue {
            row: row_no,
            column,
            value: value.to_string(),
        };
        let sex = Sex::from_code(field(sex_col)).ok_or_else(|| bad("sex", field(sex_col)))?;
        let race = Race::from_code(field(race_col)).ok_or_else(|| bad("race", field(race_col)))?;
        let split = match split_col.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Split>().map_err(|_| bad("split", s))?),
        };
        records.push(CohortRecord {
            id: id.to_string(),
            sex,
            race,
            split,
        });
    }
    CohortTable::new(records)
}

/// Writes metadata CSV with LF line endings. The `split` column is emitted
/// only when at least one record carries a split.
pub fn write_metadata(path: impl AsRef<Path>, table: &CohortTable) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let with_split = table.has_splits();
    let mut text = String::from(if with_split { "id,sex,race,split\n" } else { "id,sex,race\n" });
    for r in &table.records {
        text.push_str(&r.id);
        text.push(',');
        text.push_str(r.sex.code());
        text.push(',');
        text.push_str(r.race.code());
        if with_split {
            text.push(',');
            text.push_str(r.split.map(Split::as_str).unwrap_or(""));
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| IngestError::io(path, e))
}

/// Ground truth and prediction for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub id: String,
    pub gt: LabelMask,
    pub pred: LabelMask,
}

/// Looks up `<dir>/<id>.png`, falling back to `<dir>/<id>.pgm`.
pub fn find_mask(dir: &Path, id: &str) -> Option<PathBuf> {
    [MaskFormat::Png, MaskFormat::Pgm]
        .into_iter()
        .map(|f| dir.join(format!("{id}.{}", f.extension())))
        .find(|p| p.is_file())
}

/// Loads the gt/pred mask pair of every record. Any missing file or size
/// disagreement fails the whole call; the reported error is the first one in
/// table order.
pub fn resolve_pairs(
    table: &CohortTable,
    gt_dir: impl AsRef<Path>,
    pred_dir: impl AsRef<Path>,
) -> Result<Vec<MaskPair>, IngestError> {
    let gt_dir = gt_dir.as_ref();
    let pred_dir = pred_dir.as_ref();
    let results: Vec<Result<MaskPair, IngestError>> = table
        .records
        .par_iter()
        .map(|r| load_pair(&r.id, gt_dir, pred_dir))
        .collect();
    results.into_iter().collect()
}

fn load_pair(id: &str, gt_dir: &Path, pred_dir: &Path) -> Result<MaskPair, IngestError> {
    let locate = |dir: &Path, which| {
        find_mask(dir, id).ok_or_else(|| IngestError::MissingMask {
            id: id.to_string(),
            which,
            dir: dir.to_path_buf(),
        })
    };
    let gt_path = locate(gt_dir, MaskRole::GroundTruth)?;
    let pred_path = locate(pred_dir, MaskRole::Prediction)?;
    let gt = load_mask(gt_path)?;
    let pred = load_mask(pred_path)?;
    if !gt.same_dims(&pred) {
        return Err(IngestError::DimensionMismatch {
            id: id.to_string(),
            gt: gt.dims(),
            pred: pred.dims(),
        });
    }
    Ok(MaskPair {
        id: id.to_string(),
        gt,
        pred,
    })
}

//! Subjective score tables: `content,distortion,mos` CSV files.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosRow {
    pub content: String,
    pub distortion: String,
    pub mos: f64,
}

/// Rows keyed uniquely by (content, distortion).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MosTable {
    rows: Vec<MosRow>,
}

impl MosTable {
    pub fn rows(&self) -> &[MosRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, content: &str, distortion: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.content == content && r.distortion == distortion)
            .map(|r| r.mos)
    }
}

pub fn load_mos_csv(path: impl AsRef<Path>) -> Result<MosTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mos_csv(file)
}

/// Row numbers in errors are file line numbers; the header is line 1.
pub fn read_mos_csv<R: Read>(reader: R) -> Result<MosTable> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let (ci, di, mi) = (column("content")?, column("distortion")?, column("mos")?);

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in csv.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::Parse {
                line: row,
                message: "missing field".into(),
            })
        };
        let content = field(ci)?.to_string();
        let distortion = field(di)?.to_string();
        let raw = field(mi)?;
        let mos = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: row,
                message: format!("mos value '{raw}' is not a finite number"),
            })?;
        if !seen.insert((content.clone(), distortion.clone())) {
            return Err(Error::DuplicateKey {
                content,
                distortion,
                row,
            });
        }
        rows.push(MosRow {
            content,
            distortion,
            mos,
        });
    }
    Ok(MosTable { rows })
}

//! The shared CSV row format written by the predictor, the simulator and the
//! benchmark harness, and read back by `report`, `compare` and `calibrate`.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact header line of every CSV file produced by this crate.
pub const HEADER: &str = "source,structure,N,C,P,k,mix_contains,mix_insert,mix_remove,key_range,prefill,alpha,W,Ri,M,duration_s,throughput_ops_s,seed,host_tag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Mcs,
    Treiber,
    Skiplist,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Mcs => "mcs",
            Structure::Treiber => "treiber",
            Structure::Skiplist => "skiplist",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mcs" => Ok(Structure::Mcs),
            "treiber" => Ok(Structure::Treiber),
            "skiplist" => Ok(Structure::Skiplist),
            other => Err(format!(
                "unknown structure '{other}' (expected mcs, treiber or skiplist)"
            )),
        }
    }
}

/// Where a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Bench,
    Sim,
    Predict,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Bench => "bench",
            Source::Sim => "sim",
            Source::Predict => "predict",
        })
    }
}

/// One CSV row. Fields that do not apply to a row are `None` and serialize
/// as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub source: Source,
    pub structure: Structure,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "C")]
    pub c: Option<u64>,
    #[serde(rename = "P")]
    pub p: Option<u64>,
    pub k: Option<u32>,
    pub mix_contains: Option<u32>,
    pub mix_insert: Option<u32>,
    pub mix_remove: Option<u32>,
    pub key_range: Option<u64>,
    pub prefill: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(rename = "W")]
    pub w: Option<u64>,
    #[serde(rename = "Ri")]
    pub r_i: Option<u64>,
    #[serde(rename = "M")]
    pub m: Option<u64>,
    pub duration_s: Option<f64>,
    pub throughput_ops_s: f64,
    pub seed: Option<u64>,
    pub host_tag: Option<String>,
}

impl Record {
    /// A row with only the mandatory columns filled in.
    pub fn new(source: Source, structure: Structure, n: u32, throughput_ops_s: f64) -> Self {
        Record {
            source,
            structure,
            n,
            c: None,
            p: None,
            k: None,
            mix_contains: None,
            mix_insert: None,
            mix_remove: None,
            key_range: None,
            prefill: None,
            alpha: None,
            w: None,
            r_i: None,
            m: None,
            duration_s: None,
            throughput_ops_s,
            seed: None,
            host_tag: None,
        }
    }
}

/// Serializes `records` to `out`, optionally preceded by the header line.
pub fn write_records<W: Write>(out: W, records: &[Record], with_header: bool) -> csv::Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    if with_header {
        writer.write_record(HEADER.split(','))?;
    }
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Appends `records` to the CSV file at `path`.
///
/// A missing or empty file gets the header first. An existing file must
/// already start with exactly [`HEADER`]; rows are then appended without
/// repeating it.
pub fn write_csv(records: &[Record], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let needs_header = match File::open(path) {
        Ok(file) => {
            let mut first = String::new();
            BufReader::new(file).read_line(&mut first).map_err(io_err)?;
            let first = first.trim_end_matches(['\r', '\n']);
            if first.is_empty() {
                true
            } else if first == HEADER {
                false
            } else {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    detail: format!("existing header '{first}' differs from '{HEADER}'"),
                });
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => true,
        Err(e) => return Err(io_err(e)),
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    write_records(file, records, needs_header).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses records from a reader whose first line must be [`HEADER`].
pub fn read_records<R: io::Read>(input: R, origin: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers().map_err(|source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    })?;
    let joined = headers.iter().collect::<Vec<_>>().join(",");
    if joined != HEADER {
        return Err(Error::Schema {
            path: origin.to_path_buf(),
            detail: format!("bad header '{joined}', expected '{HEADER}'"),
        });
    }
    reader
        .deserialize()
        .collect::<csv::Result<Vec<Record>>>()
        .map_err(|source| Error::Csv {
            path: origin.to_path_buf(),
            source,
        })
}

/// Reads every record of a CSV file in the shared schema.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(BufReader::new(file), path)
}

//! Line-delimited JSON dataset files.
//!
//! Line 1 is `{"format": "landgen-dataset", "version": 1, "count": K}`; each
//! following line is one sample record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetSample, FunctionalZoneGrid, GreenLevel, LandUseConfiguration};
use crate::context::ContextGraph;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "landgen-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    features: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: u64,
    n: usize,
    m: usize,
    z: usize,
    level: usize,
    config: Vec<Vec<Vec<u64>>>,
    zones: Vec<Vec<usize>>,
    context: ContextRecord,
}

fn to_record(s: &DatasetSample) -> Result<SampleRecord> {
    let cfg = &s.configuration;
    let mut config = Vec::with_capacity(cfg.n());
    for r in 0..cfg.n() {
        let mut row = Vec::with_capacity(cfg.n());
        for c in 0..cfg.n() {
            let cell = cfg
                .cell(r, c)
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v >= 0.0 {
                        Ok(v as u64)
                    } else {
                        Err(Error::param(format!("sample {} holds non-integer count {v}", s.sample_id)))
                    }
                })
                .collect::<Result<Vec<u64>>>()?;
            row.push(cell);
        }
        config.push(row);
    }
    Ok(SampleRecord {
        id: s.sample_id,
        n: cfg.n(),
        m: cfg.m(),
        z: s.zones.z_count(),
        level: s.green_level.index(),
        config,
        zones: s.zones.to_nested(),
        context: ContextRecord {
            features: s.context.to_nested(),
        },
    })
}

fn from_record(rec: SampleRecord) -> Result<DatasetSample> {
    let SampleRecord { id, n, m, z, level, config, zones, context } = rec;
    if config.len() != n || config.iter().any(|row| row.len() != n || row.iter().any(|cell| cell.len() != m)) {
        return Err(Error::param(format!("config is not {n}x{n}x{m}")));
    }
    let flat: Vec<f64> = config.into_iter().flatten().flatten().map(|v| v as f64).collect();
    let configuration = LandUseConfiguration::from_flat(n, m, flat)?;
    if zones.len() != n || zones.iter().any(|row| row.len() != n) {
        return Err(Error::param(format!("zones is not {n}x{n}")));
    }
    let zones = FunctionalZoneGrid::new(n, z, zones.into_iter().flatten().collect())?;
    let width = context.features.first().map_or(0, Vec::len);
    if context.features.iter().any(|r| r.len() != width) {
        return Err(Error::param("context feature rows have unequal widths"));
    }
    let rows = context.features.len();
    let features = Array2::from_shape_vec((rows, width), context.features.into_iter().flatten().collect())
        .map_err(|e| Error::param(e.to_string()))?;
    let context = ContextGraph::from_features(features)?.with_poi_categories(m)?;
    DatasetSample::new(id, configuration, zones, context, GreenLevel::new(level)?)
}

pub fn write_dataset<W: Write>(samples: &[DatasetSample], mut out: W) -> Result<()> {
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        count: samples.len(),
    };
    let io_err = |e| Error::io("<dataset writer>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io_err)?;
    for s in samples {
        serde_json::to_writer(&mut out, &to_record(s)?)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Parses a dataset; errors carry the 0-based record index (the header is record 0,
/// sample `i` is record `i + 1`, matching the line number minus one).
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<DatasetSample>> {
    let mut lines = BufReader::new(input).lines();
    let parse_err = |record: usize, message: String| Error::Parse { record, message };
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file, missing header".into()))?
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(0, format!("header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(parse_err(0, format!("unknown format '{}'", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            what: "dataset",
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let mut samples = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let record = i + 1;
        let line = line.map_err(|e| parse_err(record, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if samples.len() == header.count {
            return Err(parse_err(record, format!("more records than the declared count {}", header.count)));
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(record, e.to_string()))?;
        samples.push(from_record(rec).map_err(|e| parse_err(record, e.to_string()))?);
    }
    if samples.len() != header.count {
        return Err(parse_err(
            samples.len() + 1,
            format!("record missing: header declares {} samples, found {}", header.count, samples.len()),
        ));
    }
    Ok(samples)
}

pub fn save_dataset(samples: &[DatasetSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(samples, BufWriter::new(file))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}

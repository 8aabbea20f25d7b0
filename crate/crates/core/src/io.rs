//! On-disk formats for datasets and oracle sidecars.
//!
//! A dataset is a CSV file with header `f0,...,f{d-1},t,y,r,c` plus a JSON
//! sidecar next to it (`data.csv` -> `data.meta.json`) holding the feature
//! dimension, the treatment propensity and the generating seed. Floats are
//! written in plain decimal notation with the shortest representation that
//! reads back to the same value.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::OracleRecord;
use crate::types::{Dataset, VisitRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub feature_dim: usize,
    pub propensity: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

fn bool_field(v: &str, name: &str, row: usize) -> Result<bool> {
    match v.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Schema(format!("row {row}: column {name} must be 0 or 1, got {other:?}"))),
    }
}

fn float_field(v: &str, name: &str, row: usize) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("row {row}: column {name} is not a number: {v:?}")))
}

pub fn write_dataset_csv<W: Write>(out: W, ds: &Dataset) -> Result<()> {
    let d = crate::types::RecordSource::feature_dim(ds);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.extend(["t", "y", "r", "c"].map(String::from));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(d + 4);
    for r in ds.records() {
        row.clear();
        row.extend(r.features.iter().map(|v| format!("{v}")));
        row.push(if r.treated { "1" } else { "0" }.into());
        row.push(if r.purchased { "1" } else { "0" }.into());
        row.push(format!("{}", r.revenue));
        row.push(format!("{}", r.cost));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R, meta: &DatasetMeta) -> Result<Dataset> {
    let d = meta.feature_dim;
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let expected: Vec<String> = (0..d).map(|j| format!("f{j}")).chain(["t", "y", "r", "c"].map(String::from)).collect();
    if header.len() != expected.len() {
        return Err(Error::Shape { expected: d, got: header.len().saturating_sub(4) });
    }
    if header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::Schema(format!("dataset header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), expected)));
    }
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let features = (0..d).map(|j| float_field(&rec[j], &expected[j], i)).collect::<Result<Vec<_>>>()?;
        records.push(VisitRecord {
            features,
            treated: bool_field(&rec[d], "t", i)?,
            purchased: bool_field(&rec[d + 1], "y", i)?,
            revenue: float_field(&rec[d + 2], "r", i)?,
            cost: float_field(&rec[d + 3], "c", i)?,
        });
    }
    let ds = Dataset::new(records, d, meta.propensity)?;
    Ok(match meta.seed {
        Some(s) => ds.with_seed(s),
        None => ds,
    })
}

pub fn write_dataset(csv_path: &Path, ds: &Dataset) -> Result<()> {
    let f = BufWriter::new(File::create(csv_path)?);
    write_dataset_csv(f, ds)?;
    let meta = DatasetMeta {
        feature_dim: crate::types::RecordSource::feature_dim(ds),
        propensity: crate::types::RecordSource::propensity(ds),
        seed: ds.seed(),
    };
    write_json(&meta_path(csv_path), &meta)
}

pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&meta_path(csv_path))?;
    read_dataset_csv(File::open(csv_path)?, &meta)
}

pub fn write_oracle_csv<W: Write>(out: W, oracle: &[OracleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p0", "p1", "r0", "r1", "c"])?;
    for o in oracle {
        w.write_record([o.p0, o.p1, o.r0, o.r1, o.c].map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an oracle sidecar, attaching features from the row-aligned dataset.
pub fn read_oracle_csv<R: Read>(input: R, ds: &Dataset) -> Result<Vec<OracleRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["p0", "p1", "r0", "r1", "c"] {
        return Err(Error::Schema(format!("oracle header {header:?} does not match p0,p1,r0,r1,c")));
    }
    let mut out = Vec::with_capacity(ds.records().len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| float_field(&rec[k], &header[k], i);
        let features = ds
            .records()
            .get(i)
            .ok_or_else(|| Error::Schema(format!("oracle has more rows than the dataset ({})", ds.records().len())))?
            .features
            .clone();
        out.push(OracleRecord { features, p0: f(0)?, p1: f(1)?, r0: f(2)?, r1: f(3)?, c: f(4)? });
    }
    if out.len() != ds.records().len() {
        return Err(Error::Schema(format!("oracle has {} rows, dataset has {}", out.len(), ds.records().len())));
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| {
        if e.is_io() {
            Error::Json(e)
        } else {
            Error::Schema(format!("{}: {e}", path.display()))
        }
    })
}

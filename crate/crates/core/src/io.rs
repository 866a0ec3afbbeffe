//! JSON-lines dataset files.
//!
//! Line 1 holds a metadata object:
//!
//! ```text
//! {"name":"mpi","n":5000,"d":1,"num_classes":2,"seed":1,"params":{...}}
//! ```
//!
//! and every following line one instance:
//!
//! ```text
//! {"id":"mpi-0","label":0,"origin_t0":12.5,"vars":[[[t,v],[t,v],...], ...]}
//! ```
//!
//! Floats are written in shortest round-trip decimal form and parsed with
//! correct rounding, so `read(write(d)) == d` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Channel, DatasetMeta, Instance, IrregularSeries, LabeledDataset};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    name: String,
    n: usize,
    d: usize,
    num_classes: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    id: String,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin_t0: Option<f64>,
    vars: Vec<Vec<(f64, f64)>>,
}

pub fn write_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    write_dataset_to(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(dataset: &LabeledDataset, out: &mut W) -> Result<()> {
    let header = HeaderLine {
        name: dataset.meta.name.clone(),
        n: dataset.len(),
        d: dataset.num_channels(),
        num_classes: dataset.num_classes,
        seed: dataset.meta.seed,
        params: dataset.meta.params.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for inst in &dataset.instances {
        let line = InstanceLine {
            id: inst.series.id.clone(),
            label: inst.label,
            origin_t0: inst.series.origin_t0,
            vars: inst
                .series
                .channels
                .iter()
                .map(|c| c.pairs().collect())
                .collect(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    read_dataset_from(BufReader::new(file))
}

pub fn read_dataset_from<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut lines = reader.lines().enumerate();
    let header: HeaderLine = match lines.next() {
        Some((_, line)) => parse_line(&line?, 1)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing metadata line".into(),
            })
        }
    };

    let mut instances = Vec::with_capacity(header.n);
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceLine = parse_line(&line, lineno)?;
        if rec.vars.len() != header.d {
            return Err(Error::Schema(format!(
                "line {lineno}: {} channels, header says {}",
                rec.vars.len(),
                header.d
            )));
        }
        if rec.label >= header.num_classes {
            return Err(Error::Schema(format!(
                "line {lineno}: label {} >= num_classes {}",
                rec.label, header.num_classes
            )));
        }
        let channels = rec
            .vars
            .iter()
            .map(|pairs| Channel::from_pairs(pairs))
            .collect();
        let mut series = IrregularSeries::new(rec.id, channels).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        series.origin_t0 = rec.origin_t0;
        instances.push(Instance {
            series,
            label: rec.label,
        });
    }
    if instances.len() != header.n {
        return Err(Error::Schema(format!(
            "header declares {} instances, file has {}",
            header.n,
            instances.len()
        )));
    }
    let meta = DatasetMeta {
        name: header.name,
        seed: header.seed,
        params: header.params,
    };
    LabeledDataset::new(meta, header.num_classes, instances)
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })
}

//! Columnar text snapshots of datasets and partitions.
//!
//! One sample per line: `label,f1,f2,...,fD`. Lines starting with `#` are
//! headers. A dataset file starts with `# dataset classes=C dim=D`; a
//! partition file contains one `# device <id>` header before each shard.
//! Floats are written in shortest round-trip form.

use std::fmt::Write as _;

use super::data::{ClientDataset, Dataset, Partition, Sample};
use super::FedError;
use crate::domain::DeviceId;

fn write_sample(out: &mut String, s: &Sample) {
    write!(out, "{}", s.label).expect("write to string");
    for f in &s.features {
        write!(out, ",{f}").expect("write to string");
    }
    out.push('\n');
}

fn parse_sample(line: &str, lineno: usize, dim: usize) -> Result<Sample, FedError> {
    let err = |msg: String| FedError::Parse { line: lineno, msg };
    let mut fields = line.split(',');
    let label = fields
        .next()
        .ok_or_else(|| err("missing label".into()))?
        .trim()
        .parse::<usize>()
        .map_err(|e| err(format!("bad label: {e}")))?;
    let features = fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| err(format!("bad feature `{f}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if features.len() != dim {
        return Err(err(format!(
            "expected {dim} features, found {}",
            features.len()
        )));
    }
    Ok(Sample { features, label })
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

pub fn dataset_to_text(ds: &Dataset) -> String {
    let mut out = format!(
        "# dataset classes={} dim={}\n",
        ds.n_classes, ds.feature_dim
    );
    for s in &ds.samples {
        write_sample(&mut out, s);
    }
    out
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize), FedError> {
    let get = |key: &str| {
        header_value(line, key)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| FedError::Parse {
                line: lineno,
                msg: format!("header lacks `{key}=`"),
            })
    };
    Ok((get("classes")?, get("dim")?))
}

pub fn dataset_from_text(text: &str) -> Result<Dataset, FedError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(FedError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let (n_classes, feature_dim) = parse_header(first, 1)?;
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let s = parse_sample(line, i + 1, feature_dim)?;
        if s.label >= n_classes {
            return Err(FedError::Parse {
                line: i + 1,
                msg: format!("label {} out of range", s.label),
            });
        }
        samples.push(s);
    }
    Ok(Dataset {
        n_classes,
        feature_dim,
        samples,
    })
}

pub fn partition_to_text(partition: &Partition, n_classes: usize, feature_dim: usize) -> String {
    let mut out = format!("# partition classes={n_classes} dim={feature_dim}\n");
    for (id, shard) in partition {
        writeln!(out, "# device {}", id.0).expect("write to string");
        for s in shard.samples() {
            write_sample(&mut out, s);
        }
    }
    out
}

pub fn partition_from_text(text: &str) -> Result<Partition, FedError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(FedError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let (_, dim) = parse_header(first, 1)?;
    let mut partition = Partition::new();
    let mut current: Option<(DeviceId, Vec<Sample>)> = None;
    for (i, line) in lines {
        if let Some(rest) = line.strip_prefix("# device ") {
            if let Some((id, samples)) = current.take() {
                partition.insert(id, ClientDataset::new(id, samples));
            }
            let id = rest.trim().parse::<u32>().map_err(|e| FedError::Parse {
                line: i + 1,
                msg: format!("bad device id: {e}"),
            })?;
            current = Some((DeviceId(id), Vec::new()));
        } else if line.trim().is_empty() || line.starts_with('#') {
            continue;
        } else {
            let (_, samples) = current.as_mut().ok_or(FedError::Parse {
                line: i + 1,
                msg: "sample before any `# device` header".into(),
            })?;
            samples.push(parse_sample(line, i + 1, dim)?);
        }
    }
    if let Some((id, samples)) = current {
        partition.insert(id, ClientDataset::new(id, samples));
    }
    Ok(partition)
}

//! CSV input and output with header `cluster_id,mechanism,treated,outcome`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use twostage_core::{ArmPolicy, ExperimentData, Observation};

use crate::error::{CliError, Result};

pub const HEADER: [&str; 4] = ["cluster_id", "mechanism", "treated", "outcome"];

/// Parsed experiment together with the bookkeeping needed to report on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: ExperimentData,
    /// `mechanism_labels[a]` is the label in the file for internal mechanism `a`.
    pub mechanism_labels: Vec<u64>,
    /// Clusters removed because one arm was empty.
    pub dropped: Vec<String>,
}

pub fn read_csv(path: &Path, allow_drop: bool) -> Result<LoadedData> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_from(file, allow_drop)
}

fn parse_error(row: u64, column: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        row,
        column: HEADER[column].to_string(),
        message: message.into(),
    }
}

/// Reads observations; mechanism labels are relabeled densely in ascending order.
pub fn read_csv_from<R: Read>(reader: R, allow_drop: bool) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Parse {
        row: 1,
        column: "header".into(),
        message: e.to_string(),
    })?;
    if headers.iter().ne(HEADER) {
        return Err(CliError::Parse {
            row: 1,
            column: "header".into(),
            message: format!("expected `{}`", HEADER.join(",")),
        });
    }

    let mut raw: Vec<(String, u64, bool, f64)> = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            CliError::Parse {
                row,
                column: "record".into(),
                message: e.to_string(),
            }
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let cluster = record[0].to_string();
        if cluster.is_empty() {
            return Err(parse_error(row, 0, "empty cluster id"));
        }
        let mechanism: u64 = record[1]
            .parse()
            .ok()
            .filter(|&m| m >= 1)
            .ok_or_else(|| parse_error(row, 1, format!("`{}` is not an integer >= 1", &record[1])))?;
        let treated = match &record[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_error(row, 2, format!("`{other}` is not 0 or 1"))),
        };
        let outcome: f64 = record[3]
            .parse()
            .ok()
            .filter(|y: &f64| y.is_finite())
            .ok_or_else(|| parse_error(row, 3, format!("`{}` is not a finite number", &record[3])))?;
        match seen.get(&cluster) {
            Some(&first) if first != mechanism => {
                return Err(CliError::MixedMechanism {
                    cluster,
                    first,
                    second: mechanism,
                })
            }
            Some(_) => {}
            None => {
                seen.insert(cluster.clone(), mechanism);
            }
        }
        raw.push((cluster, mechanism, treated, outcome));
    }
    if raw.is_empty() {
        return Err(CliError::Config("the data file has no observations".into()));
    }

    let labels: Vec<u64> = raw.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let dense: HashMap<u64, usize> = labels.iter().enumerate().map(|(a, &l)| (l, a)).collect();
    let observations = raw.into_iter().map(|(cluster, mechanism, treated, outcome)| Observation {
        cluster,
        mechanism: dense[&mechanism],
        treated,
        outcome,
    });
    let policy = if allow_drop { ArmPolicy::Drop } else { ArmPolicy::Reject };
    let (data, dropped) = ExperimentData::from_observations(labels.len(), observations, policy)?;
    Ok(LoadedData {
        data,
        mechanism_labels: labels,
        dropped,
    })
}

pub fn write_csv(path: &Path, data: &ExperimentData, labels: &[u64]) -> Result<()> {
    let file = File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(file, data, labels)
}

/// Writes one row per unit; `labels` maps internal mechanisms back to file labels.
pub fn write_csv_to<W: Write>(writer: W, data: &ExperimentData, labels: &[u64]) -> Result<()> {
    if labels.len() != data.num_mechanisms() {
        return Err(CliError::Config(format!(
            "{} labels for {} mechanisms",
            labels.len(),
            data.num_mechanisms()
        )));
    }
    let out_err = |e: csv::Error| CliError::Output(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER).map_err(out_err)?;
    for obs in data.observations() {
        w.write_record([
            obs.cluster,
            labels[obs.mechanism].to_string(),
            u8::from(obs.treated).to_string(),
            obs.outcome.to_string(),
        ])
        .map_err(out_err)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

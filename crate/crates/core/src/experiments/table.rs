use std::path::Path;

use crate::error::{Error, Result};
use crate::quantization::ExcessRisk;

/// One row of the raw trial table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// `None` when the trial failed.
    pub excess: Option<ExcessRisk>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub(super) fn ok(n: usize, trial: usize, seed: u64, excess: ExcessRisk) -> Self {
        Self {
            n,
            trial,
            seed,
            excess: Some(excess),
            error: None,
        }
    }

    pub(super) fn failed(n: usize, trial: usize, seed: u64, error: String) -> Self {
        Self {
            n,
            trial,
            seed,
            excess: None,
            error: Some(error),
        }
    }
}

const HEADER: [&str; 8] = ["n", "trial", "seed", "excess", "excess_raw", "excess_se", "clipped", "error"];

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_raw_table(path: &Path, table: &[TrialRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HEADER).map_err(csv_err)?;
    for r in table {
        let (excess, raw, se, clipped) = match &r.excess {
            Some(e) => (float(e.value), float(e.raw), float(e.se), e.clipped.to_string()),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.n.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            excess,
            raw,
            se,
            clipped,
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw_table(path: &Path) -> Result<Vec<TrialRecord>> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rd = csv::Reader::from_path(path).map_err(|e| format(e.to_string()))?;
    let header = rd.headers().map_err(|e| format(e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| format(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |what: &str| format(format!("row {}: bad {what}", line + 1));
        let n = field(0).parse().map_err(|_| bad("n"))?;
        let trial = field(1).parse().map_err(|_| bad("trial"))?;
        let seed = field(2).parse().map_err(|_| bad("seed"))?;
        let error = Some(field(7).to_owned()).filter(|s| !s.is_empty());
        let excess = if field(3).is_empty() {
            None
        } else {
            let f = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(what));
            Some(ExcessRisk {
                value: f(3, "excess")?,
                raw: f(4, "excess_raw")?,
                se: f(5, "excess_se")?,
                clipped: field(6).parse().map_err(|_| bad("clipped"))?,
            })
        };
        if excess.is_none() && error.is_none() {
            return Err(bad("row: neither excess nor error"));
        }
        out.push(TrialRecord {
            n,
            trial,
            seed,
            excess,
            error,
        });
    }
    Ok(out)
}

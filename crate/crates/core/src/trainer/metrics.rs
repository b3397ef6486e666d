use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub seq_seen: u64,
    pub total_loss: f64,
    /// Mean loss of each `y` prediction, one entry per pair.
    pub shots: Vec<f64>,
    pub wall_ms: u64,
}

/// Training-batch rows and rows measured on the fixed held-out batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub train: Vec<MetricsRow>,
    pub heldout: Vec<MetricsRow>,
}

pub fn csv_header(pairs: usize) -> String {
    let mut h = String::from("step,seq_seen,total_loss");
    for k in 0..pairs {
        h.push_str(&format!(",shot_{k:02}"));
    }
    h.push_str(",wall_ms");
    h
}

pub fn csv_line(row: &MetricsRow) -> String {
    let mut s = format!("{},{},{}", row.step, row.seq_seen, row.total_loss);
    for v in &row.shots {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s.push_str(&format!(",{}", row.wall_ms));
    s
}

pub fn parse_csv_line(line: &str, pairs: usize) -> Result<MetricsRow> {
    let bad = || Error::config("metrics", format!("malformed row `{line}`"));
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != pairs + 4 {
        return Err(bad());
    }
    let float = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let int = |s: &str| s.parse::<u64>().map_err(|_| bad());
    Ok(MetricsRow {
        step: int(f[0])?,
        seq_seen: int(f[1])?,
        total_loss: float(f[2])?,
        shots: f[3..3 + pairs].iter().map(|s| float(s)).collect::<Result<_>>()?,
        wall_ms: int(f[pairs + 3])?,
    })
}

/// Reads a metrics CSV written by [`MetricsWriter`].
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::config("metrics", format!("{} is empty", path.display())))?;
    let pairs = header.split(',').count().checked_sub(4).ok_or_else(|| Error::config("metrics", "bad header"))?;
    if header != csv_header(pairs) {
        return Err(Error::config("metrics", format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.is_empty() {
            rows.push(parse_csv_line(&line, pairs)?);
        }
    }
    Ok(rows)
}

/// Append-only metrics CSV.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Starts a fresh file, or when `resume_step` is set keeps only the rows
    /// up to that step and appends after them.
    pub fn open(path: &Path, pairs: usize, resume_step: Option<u64>) -> Result<Self> {
        let kept = match resume_step {
            Some(step) if path.exists() => read_csv(path)?.into_iter().filter(|r| r.step <= step).collect(),
            _ => Vec::new(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", csv_header(pairs))?;
        for r in &kept {
            writeln!(out, "{}", csv_line(r))?;
        }
        out.flush()?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsWriter { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", csv_line(row))?;
        self.out.flush()?;
        Ok(())
    }
}

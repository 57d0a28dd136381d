//! Episode replay log: one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub step: u32,
    pub action: Action,
    pub reward: f64,
    pub row: usize,
    pub col: usize,
}

pub fn write_replay<W: Write>(mut out: W, records: &[ReplayRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_replay<R: BufRead>(input: R) -> std::io::Result<Vec<ReplayRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

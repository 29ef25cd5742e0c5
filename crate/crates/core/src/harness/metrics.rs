//! Per-round metrics, persisted as JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Floats uploaded by the clients that completed the round.
    pub upload_floats: u64,
    /// Floats downloaded by the cohort.
    pub download_floats: u64,
    /// Best meta-loss of each client's fitted payload, in cohort order.
    pub distill_losses: Vec<f64>,
    /// Clients dropped or server fits that failed this round.
    pub failures: usize,
    /// Transmitted payloads whose server decode differed from the client's.
    pub decode_mismatches: usize,
    /// Decoder invocations spent fitting this round's payloads.
    pub decoder_calls: u64,
    /// Accuracy of the model clients reconstructed from the download, when
    /// downloads are synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored_accuracy: Option<f64>,
    /// Wall-clock time; written to a separate timing file so metrics files
    /// stay reproducible.
    #[serde(skip)]
    pub wall_ms: u64,
}

pub fn write_jsonl(path: &Path, rows: &[RoundMetrics]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RoundMetrics>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(rows)
}

pub fn write_timings(path: &Path, rows: &[RoundMetrics]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in rows {
        writeln!(out, "{{\"round\":{},\"wall_ms\":{}}}", r.round, r.wall_ms)?;
    }
    out.flush()?;
    Ok(())
}

/// One row of a difference series `b − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub round: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub accuracy_diff: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub loss_diff: f64,
}

/// Pairs rounds present in both series.
pub fn difference(a: &[RoundMetrics], b: &[RoundMetrics]) -> Vec<DiffRow> {
    a.iter()
        .filter_map(|ra| {
            let rb = b.iter().find(|rb| rb.round == ra.round)?;
            Some(DiffRow {
                round: ra.round,
                accuracy_a: ra.test_accuracy,
                accuracy_b: rb.test_accuracy,
                accuracy_diff: rb.test_accuracy - ra.test_accuracy,
                loss_a: ra.test_loss,
                loss_b: rb.test_loss,
                loss_diff: rb.test_loss - ra.test_loss,
            })
        })
        .collect()
}

pub fn write_diff_csv<W: Write>(mut out: W, rows: &[DiffRow]) -> Result<()> {
    writeln!(out, "round,accuracy_a,accuracy_b,accuracy_diff,loss_a,loss_b,loss_diff")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, r.accuracy_a, r.accuracy_b, r.accuracy_diff, r.loss_a, r.loss_b, r.loss_diff
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, acc: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            test_accuracy: acc,
            test_loss: 1.0 - acc,
            upload_floats: 10,
            download_floats: 20,
            distill_losses: vec![0.5, 0.25],
            failures: 0,
            decode_mismatches: 0,
            decoder_calls: 3,
            restored_accuracy: None,
            wall_ms: 123,
        }
    }

    #[test]
    fn jsonl_round_trip_drops_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let rows = vec![row(0, 0.5), row(1, 0.75)];
        write_jsonl(&p, &rows).unwrap();
        let back = read_jsonl(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].test_accuracy, 0.75);
        assert_eq!(back[0].wall_ms, 0);
        assert!(!std::fs::read_to_string(&p).unwrap().contains("wall_ms"));
    }

    #[test]
    fn difference_of_identical_series_is_zero() {
        let rows = vec![row(0, 0.5), row(1, 0.75)];
        let d = difference(&rows, &rows);
        assert!(d.iter().all(|r| r.accuracy_diff == 0.0 && r.loss_diff == 0.0));
        let shifted = vec![row(1, 0.5)];
        let d = difference(&rows, &shifted);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].accuracy_diff, -0.25);
    }
}

//! Synthetic batches, payloads and the payload file format.
//!
//! # File format
//!
//! One line of UTF-8 JSON terminated by `\n`:
//!
//! ```text
//! {"format":"fedsynth-payload","version":1,"arch":{..},"B":5,"M":25,
//!  "batch_size":10,"schedule":[0,1,2,3,4,0,..],"H":1.25}
//! ```
//!
//! followed by `B` blocks of little-endian IEEE-754 doubles, one per batch in
//! order. Each block is the batch's `X` (`batch_size x input_dim`, row-major),
//! then its `Y` (`batch_size x num_classes`, row-major), then its `η`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{expect_eof, read_f64s, read_header_line, write_f64s};
use crate::nn::{ArchDescriptor, Matrix};

pub const PAYLOAD_FORMAT: &str = "fedsynth-payload";
pub const PAYLOAD_VERSION: u32 = 1;

/// One trainable synthetic batch `(X, Y, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub x: Matrix,
    pub y: Matrix,
    pub eta: f64,
}

/// What a client uploads: unique batches, the order they are replayed in, and
/// the norm of the true update.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPayload {
    arch: ArchDescriptor,
    batches: Vec<SyntheticBatch>,
    schedule: Vec<usize>,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchDescriptor,
    #[serde(rename = "B")]
    num_batches: usize,
    #[serde(rename = "M")]
    num_steps: usize,
    batch_size: usize,
    schedule: Vec<usize>,
    #[serde(rename = "H")]
    h: f64,
}

/// `[0, 1, .., B-1]` repeated `epochs` times.
pub fn epoch_schedule(num_batches: usize, epochs: usize) -> Vec<usize> {
    (0..epochs).flat_map(|_| 0..num_batches).collect()
}

impl SyntheticPayload {
    pub fn new(
        arch: ArchDescriptor,
        batches: Vec<SyntheticBatch>,
        schedule: Vec<usize>,
        h: f64,
    ) -> Result<Self> {
        let p = Self {
            arch,
            batches,
            schedule,
            h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batches.is_empty() {
            return Err(Error::Shape("payload has no batches".into()));
        }
        let rows = self.batches[0].x.rows();
        for (k, b) in self.batches.iter().enumerate() {
            if b.x.rows() != rows || b.y.rows() != rows || rows == 0 {
                return Err(Error::Shape(format!("batch {k} has inconsistent row count")));
            }
            if b.x.cols() != self.arch.input_dim || b.y.cols() != self.arch.num_classes {
                return Err(Error::Shape(format!(
                    "batch {k} is {}+{} wide, architecture needs {}+{}",
                    b.x.cols(),
                    b.y.cols(),
                    self.arch.input_dim,
                    self.arch.num_classes
                )));
            }
            if !b.x.is_finite() || !b.y.is_finite() || !b.eta.is_finite() {
                return Err(Error::NonFinite("synthetic batch"));
            }
        }
        if self.schedule.is_empty() {
            return Err(Error::Shape("empty schedule".into()));
        }
        let mut used = vec![false; self.batches.len()];
        for &k in &self.schedule {
            *used.get_mut(k).ok_or_else(|| {
                Error::Shape(format!("schedule references missing batch {k}"))
            })? = true;
        }
        if let Some(k) = used.iter().position(|u| !u) {
            return Err(Error::Shape(format!("batch {k} is never scheduled")));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::Shape(format!("update norm H = {} must be finite and >= 0", self.h)));
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn batches(&self) -> &[SyntheticBatch] {
        &self.batches
    }

    pub(crate) fn batches_mut(&mut self) -> &mut [SyntheticBatch] {
        &mut self.batches
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// `‖θ‖` of the update this payload was fitted to.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn batch_size(&self) -> usize {
        self.batches[0].x.rows()
    }

    /// Number of synthetic points on the wire.
    pub fn num_points(&self) -> usize {
        self.batches.len() * self.batch_size()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            format: PAYLOAD_FORMAT.into(),
            version: PAYLOAD_VERSION,
            arch: self.arch.clone(),
            num_batches: self.batches.len(),
            num_steps: self.schedule.len(),
            batch_size: self.batch_size(),
            schedule: self.schedule.clone(),
            h: self.h,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for b in &self.batches {
            write_f64s(&mut out, b.x.as_slice())?;
            write_f64s(&mut out, b.y.as_slice())?;
            write_f64s(&mut out, &[b.eta])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let line = read_header_line(&mut input)?;
        let header: Header = serde_json::from_slice(&line)?;
        if header.format != PAYLOAD_FORMAT || header.version != PAYLOAD_VERSION {
            return Err(Error::Format(format!(
                "unsupported payload file {} v{}",
                header.format, header.version
            )));
        }
        if header.schedule.len() != header.num_steps {
            return Err(Error::Format("schedule length differs from M".into()));
        }
        header.arch.validate()?;
        let (b, d, c) = (
            header.batch_size,
            header.arch.input_dim,
            header.arch.num_classes,
        );
        let mut batches = Vec::with_capacity(header.num_batches.min(1 << 16));
        for _ in 0..header.num_batches {
            let x = Matrix::from_vec(b, d, read_f64s(&mut input, b * d)?)?;
            let y = Matrix::from_vec(b, c, read_f64s(&mut input, b * c)?)?;
            let eta = read_f64s(&mut input, 1)?[0];
            batches.push(SyntheticBatch { x, y, eta });
        }
        expect_eof(&mut input)?;
        Self::new(header.arch, batches, header.schedule, header.h)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SyntheticPayload {
        let arch = ArchDescriptor::mlp(&[2, 4, 3]).unwrap();
        let batch = |s: f64| SyntheticBatch {
            x: Matrix::from_rows(&[vec![s, -0.1], vec![0.3, s / 3.0]]).unwrap(),
            y: Matrix::from_rows(&[vec![0.2, 0.3, 0.5], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap(),
            eta: 0.1 * s,
        };
        SyntheticPayload::new(arch, vec![batch(1.0), batch(0.7)], epoch_schedule(2, 3), 1.0 / 7.0)
            .unwrap()
    }

    #[test]
    fn schedule_repeats_batches() {
        assert_eq!(epoch_schedule(2, 3), vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let p = sample();
        let bytes = p.to_bytes();
        let back = SyntheticPayload::from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.h().to_bits(), p.h().to_bits());
        assert_eq!(back.to_bytes(), bytes);
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        // 2 batches x (2x2 + 2x3 + 1) doubles
        assert_eq!(bytes.len() - header_end - 1, 2 * 11 * 8);
    }

    #[test]
    fn rejects_truncation_and_bad_schedule() {
        let bytes = sample().to_bytes();
        assert!(SyntheticPayload::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let p = sample();
        assert!(SyntheticPayload::new(p.arch.clone(), p.batches.clone(), vec![0, 0], 1.0).is_err());
        assert!(SyntheticPayload::new(p.arch.clone(), p.batches.clone(), vec![0, 2, 1], 1.0).is_err());
        assert!(SyntheticPayload::new(p.arch.clone(), p.batches.clone(), vec![0, 1], -1.0).is_err());
    }
}

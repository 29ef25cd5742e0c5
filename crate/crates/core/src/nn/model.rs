//! Architecture descriptors and flat parameter vectors.
//!
//! # Parameter layout
//!
//! Parameters live in one flat `f64` vector, layer-major. For each dense layer
//! mapping `fan_in -> fan_out` the weight block comes first, stored row-major
//! by input unit (weight `(i, o)` sits at offset `i * fan_out + o` within the
//! block), followed by the `fan_out` biases. Layers appear in input-to-output
//! order.
//!
//! # Serialized form
//!
//! A single line of UTF-8 JSON `{"format":"fedsynth-params","version":1,"arch":{..}}`
//! terminated by `\n`, then `param_count` little-endian IEEE-754 doubles.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "fedsynth-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Shape of a dense softmax classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// One dense layer's placement inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the weight block.
    pub offset: usize,
}

impl LayerSpan {
    pub fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.fan_out
    }
}

impl ArchDescriptor {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Shorthand for tests and fixtures: `mlp(&[2, 16, 3])` is 2 inputs, one
    /// hidden layer of 16, three classes, relu.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        Self::new(
            widths[0],
            widths[1..widths.len() - 1].to_vec(),
            widths[widths.len() - 1],
            Activation::Relu,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpan> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset = span.end();
                span
            })
            .collect()
    }

    /// Σ over layers of `(fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// A flat parameter vector tied to its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchDescriptor,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    format: String,
    version: u32,
    arch: ArchDescriptor,
}

impl ModelParams {
    pub fn new(arch: ArchDescriptor, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: ArchDescriptor) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            values: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    ///
    /// Draws one `f64` per weight from `rng` in layout order, so the result is a
    /// pure function of the RNG state.
    pub fn init<R: Rng + ?Sized>(arch: ArchDescriptor, rng: &mut R) -> Self {
        let mut values = vec![0.0; arch.param_count()];
        for layer in arch.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut values[layer.offset..layer.bias_offset()] {
                let u: f64 = rng.gen();
                *v = (2.0 * u - 1.0) * limit;
            }
        }
        Self { arch, values }
    }

    /// [`ModelParams::init`] driven by `ChaCha8Rng::seed_from_u64(seed)`.
    pub fn from_seed(arch: ArchDescriptor, seed: u64) -> Self {
        use rand::SeedableRng;
        Self::init(arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self - update`, rejecting non-finite results.
    pub fn step(&self, update: &[f64]) -> Result<ModelParams> {
        if update.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "update has {} entries, model has {}",
                update.len(),
                self.values.len()
            )));
        }
        let values: Vec<f64> = self.values.iter().zip(update).map(|(w, g)| w - g).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("updated model parameters"));
        }
        Ok(Self {
            arch: self.arch.clone(),
            values,
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = ParamsHeader {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            arch: self.arch.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        write_f64s(&mut out, &self.values)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let line = read_header_line(&mut input)?;
        let header: ParamsHeader = serde_json::from_slice(&line)?;
        if header.format != PARAMS_FORMAT || header.version != PARAMS_VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter file {} v{}",
                header.format, header.version
            )));
        }
        let values = read_f64s(&mut input, header.arch.param_count())?;
        expect_eof(&mut input)?;
        Self::new(header.arch, values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("expected {count} little-endian f64 values")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Reads bytes up to and excluding the first `\n`.
pub(crate) fn read_header_line<R: Read>(input: &mut R) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(Error::Format("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            return Ok(line);
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(Error::Format("header line too long".into()));
        }
    }
}

pub(crate) fn expect_eof<R: Read>(input: &mut R) -> Result<()> {
    let mut byte = [0u8; 1];
    if input.read(&mut byte)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layers() {
        let arch = ArchDescriptor::mlp(&[2, 16, 3]).unwrap();
        assert_eq!(arch.param_count(), 3 * 16 + 17 * 3);
        let layers = arch.layers();
        assert_eq!(layers.last().unwrap().end(), arch.param_count());
        assert_eq!(layers[1].offset, 48);

        let mnist = ArchDescriptor::mlp(&[784, 64, 10]).unwrap();
        assert_eq!(mnist.param_count(), 785 * 64 + 65 * 10);
    }

    #[test]
    fn rejects_bad_arch() {
        assert!(ArchDescriptor::mlp(&[2, 1]).is_err());
        assert!(ArchDescriptor::mlp(&[0, 3]).is_err());
        assert!(ArchDescriptor::mlp(&[2, 0, 3]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = ArchDescriptor::mlp(&[4, 8, 3]).unwrap();
        let a = ModelParams::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(5));
        let b = ModelParams::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        for layer in arch.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let w = &a.values()[layer.offset..layer.bias_offset()];
            assert!(w.iter().all(|v| v.abs() <= limit));
            assert!(a.values()[layer.bias_offset()..layer.end()].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let arch = ArchDescriptor::mlp(&[3, 5, 2]).unwrap();
        let p = ModelParams::init(arch, &mut ChaCha8Rng::seed_from_u64(9));
        let bytes = p.to_bytes();
        let back = ModelParams::from_bytes(&bytes).unwrap();
        assert_eq!(p, back);
        assert_eq!(bytes, back.to_bytes());

        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        let arch = ArchDescriptor::mlp(&[2, 2]).unwrap();
        assert!(ModelParams::new(arch.clone(), vec![0.0; 5]).is_err());
        let mut v = vec![0.0; 6];
        v[2] = f64::NAN;
        assert!(matches!(ModelParams::new(arch, v), Err(Error::NonFinite(_))));
    }
}

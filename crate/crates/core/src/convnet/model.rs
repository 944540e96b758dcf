//! Trained network plus the normalization it was trained under, with a
//! versioned binary container.
//!
//! Layout (little endian): magic `INSDCNN\0`, `u32` version, spec (name,
//! window, channels, output dim, layers as `u8` tag + two `u64`), the four
//! normalization vectors, then every parameter tensor as rank, extents and
//! raw `f64` bits.

use super::network::{LayerSpec, Network, NetworkSpec, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"INSDCNN\0";
pub const FORMAT_VERSION: u32 = 1;

const CONSTANT_CHANNEL: f64 = 1e-9;

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation of interleaved rows of
    /// `channels` values. A channel whose deviation is at most
    /// `1e-9 * max(1, |mean|)` is constant up to rounding and gets a
    /// deviation of 1.
    pub fn fit(values: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || values.is_empty() || !values.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "cannot fit {channels}-channel statistics to {} values",
                values.len()
            )));
        }
        let rows = (values.len() / channels) as f64;
        let mut mean = vec![0.0; channels];
        for row in values.chunks_exact(channels) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; channels];
        for row in values.chunks_exact(channels) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / rows).sqrt();
                if sd > CONSTANT_CHANNEL * m.abs().max(1.0) && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, values: &mut [f64]) {
        let c = self.mean.len();
        for row in values.chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize(&self, values: &mut [f64]) {
        let c = self.mean.len();
        for row in values.chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub input: ChannelStats,
    pub target: ChannelStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub normalization: Normalization,
}

impl Model {
    /// Correction in physical units for one raw `[window, channels]` input.
    pub fn predict(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut x = window.clone();
        self.normalization.input.normalize(x.data_mut());
        let mut y = self.network.forward(&x)?.into_data();
        self.normalization.target.denormalize(&mut y);
        Ok(y)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        let spec = self.network.spec();
        w.u32(spec.name.len() as u32);
        w.0.extend_from_slice(spec.name.as_bytes());
        w.u64(spec.input_window as u64);
        w.u64(spec.input_channels as u64);
        w.u64(spec.output_dim as u64);
        w.u32(spec.layers.len() as u32);
        for layer in &spec.layers {
            let (tag, a, b) = match *layer {
                LayerSpec::Conv { filters, kernel } => (0u8, filters, kernel),
                LayerSpec::MaxPool { pool } => (1, pool, 0),
                LayerSpec::Fc { units } => (2, units, 0),
                LayerSpec::Relu => (3, 0, 0),
                LayerSpec::LinearOutput { units } => (4, units, 0),
            };
            w.0.push(tag);
            w.u64(a as u64);
            w.u64(b as u64);
        }
        let n = &self.normalization;
        for v in [&n.input.mean, &n.input.std, &n.target.mean, &n.target.std] {
            w.f64s(v);
        }
        w.u32(self.network.params().len() as u32);
        for p in self.network.params() {
            w.tensor(&p.weights);
            w.tensor(&p.bias);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::ModelFormat("name is not UTF-8".into()))?;
        let input_window = r.usize()?;
        let input_channels = r.usize()?;
        let output_dim = r.usize()?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let tag = r.take(1)?[0];
            let (a, b) = (r.usize()?, r.usize()?);
            layers.push(match tag {
                0 => LayerSpec::Conv { filters: a, kernel: b },
                1 => LayerSpec::MaxPool { pool: a },
                2 => LayerSpec::Fc { units: a },
                3 => LayerSpec::Relu,
                4 => LayerSpec::LinearOutput { units: a },
                t => return Err(Error::ModelFormat(format!("unknown layer tag {t}"))),
            });
        }
        let spec = NetworkSpec {
            name,
            layers,
            input_window,
            input_channels,
            output_dim,
        };
        let (im, is, tm, ts) = (r.f64s()?, r.f64s()?, r.f64s()?, r.f64s()?);
        if im.len() != input_channels || is.len() != input_channels || tm.len() != output_dim || ts.len() != output_dim {
            return Err(Error::ModelFormat("normalization length mismatch".into()));
        }
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params.min(1024));
        for _ in 0..n_params {
            params.push(Param {
                weights: r.tensor()?,
                bias: r.tensor()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let network = Network::from_params(spec, params)?;
        Ok(Self {
            network,
            normalization: Normalization {
                input: ChannelStats { mean: im, std: is },
                target: ChannelStats { mean: tm, std: ts },
            },
        })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for x in t.data() {
            self.0.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::ModelFormat("extent overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > self.buf.len() / 8 {
            return Err(Error::ModelFormat("vector longer than file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::ModelFormat(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= self.buf.len() / 8)
            .ok_or_else(|| Error::ModelFormat(format!("tensor shape {shape:?} exceeds file")))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::network::{build_variant, Variant};

    fn model() -> Model {
        Model {
            network: Network::init(build_variant(Variant::Medium, 16).unwrap(), 8).unwrap(),
            normalization: Normalization {
                input: ChannelStats { mean: vec![1.0, -2.5, 3e-9], std: vec![0.1, 7.0, 1.0] },
                target: ChannelStats { mean: vec![f64::MIN_POSITIVE, 0.0, -0.0], std: vec![1.0, 2.0, 3.0] },
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.network, m.network);
        assert_eq!(back.normalization.target.mean[2].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = model().to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Model::from_bytes(&bad), Err(Error::ModelFormat(m)) if m.contains("version")));
        let mut long = bytes;
        long.push(0);
        assert!(Model::from_bytes(&long).is_err());
    }

    #[test]
    fn stats_fit_and_invert() {
        let vals = [1.0, 10.0, 5.0, 3.0, 10.0, 5.0];
        let s = ChannelStats::fit(&vals, 3).unwrap();
        assert_eq!(s.mean, vec![2.0, 10.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0, 1.0]);
        let mut v = vals.to_vec();
        s.normalize(&mut v);
        assert_eq!(v, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        s.denormalize(&mut v);
        assert_eq!(v, vals.to_vec());
    }

    #[test]
    fn rounding_level_spread_counts_as_constant() {
        let vals = [50.0, 1e-3, 1e-14, 50.0 + 1e-12, 3e-3, -1e-14];
        let s = ChannelStats::fit(&vals, 3).unwrap();
        assert_eq!(s.std[0], 1.0);
        assert!((s.std[1] - 1e-3).abs() < 1e-15);
        assert_eq!(s.std[2], 1.0);
    }
}

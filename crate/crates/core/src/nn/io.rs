//! Binary model file.
//!
//! Layout, all integers little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | `WCNN` |
//! | version | u32 |
//! | input_length, kernel_size, padding_per_side, pool_size, n_classes | u64 each |
//! | conv_channels | u64 count, then u64 per entry |
//! | dense_widths | u64 count, then u64 per entry |
//! | conv_dropout, dense_dropout, weight_decay | f64 each |
//! | parameter count | u64 |
//! | parameters | f64 each, in canonical tensor order |
//!
//! Canonical tensor order: for each conv layer its kernel, bias, gamma,
//! beta, running mean and running variance; then for each dense layer
//! (output layer last) its weight matrix and bias.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"WCNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(params: &ModelParams, config: &ModelConfig) -> Result<Vec<u8>, NnError> {
    config.validate()?;
    let expected = config.parameter_count()?;
    if params.count() != expected {
        return Err(NnError::SizeMismatch(format!(
            "parameters hold {} values but the configuration needs {expected}",
            params.count()
        )));
    }
    let mut out = Vec::with_capacity(64 + 8 * expected);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let u = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
    u(&mut out, config.input_length);
    u(&mut out, config.kernel_size);
    u(&mut out, config.padding_per_side);
    u(&mut out, config.pool_size);
    u(&mut out, config.n_classes);
    u(&mut out, config.conv_channels.len());
    for &c in &config.conv_channels {
        u(&mut out, c);
    }
    u(&mut out, config.dense_widths.len());
    for &w in &config.dense_widths {
        u(&mut out, w);
    }
    for f in [config.conv_dropout, config.dense_dropout, config.weight_decay] {
        out.extend_from_slice(&f.to_le_bytes());
    }
    u(&mut out, expected);
    params.for_each_tensor(|_, t| {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NnError::SizeMismatch(format!("file truncated at byte {}", self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize, NnError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| NnError::SizeMismatch(format!("value {v} too large")))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>, NnError> {
        let n = self.u64()?;
        if n > 1 << 16 {
            return Err(NnError::SizeMismatch(format!("implausible list length {n}")));
        }
        (0..n).map(|_| self.u64()).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelParams, ModelConfig), NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| NnError::BadMagic)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input_length = r.u64()?;
    let kernel_size = r.u64()?;
    let padding_per_side = r.u64()?;
    let pool_size = r.u64()?;
    let n_classes = r.u64()?;
    let conv_channels = r.list()?;
    let dense_widths = r.list()?;
    let conv_dropout = r.f64()?;
    let dense_dropout = r.f64()?;
    let weight_decay = r.f64()?;
    let config = ModelConfig {
        input_length,
        conv_channels,
        kernel_size,
        padding_per_side,
        pool_size,
        conv_dropout,
        dense_widths,
        dense_dropout,
        n_classes,
        weight_decay,
    };
    config.validate()?;
    let declared = r.u64()?;
    let expected = config.parameter_count()?;
    if declared != expected {
        return Err(NnError::SizeMismatch(format!(
            "file declares {declared} parameters but the configuration needs {expected}"
        )));
    }
    let mut params = ModelParams::zeros(&config)?;
    let data = r.take(8 * expected)?;
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    params.for_each_tensor_mut(|_, t| {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    });
    if r.pos != bytes.len() {
        return Err(NnError::SizeMismatch(format!(
            "{} trailing bytes after the parameters",
            bytes.len() - r.pos
        )));
    }
    Ok((params, config))
}

pub fn save_model(params: &ModelParams, config: &ModelConfig, path: impl AsRef<Path>) -> Result<(), NnError> {
    let bytes = encode_model(params, config)?;
    fs::write(path.as_ref(), bytes).map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelParams, ModelConfig), NnError> {
    let bytes =
        fs::read(path.as_ref()).map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ModelParams, ModelConfig) {
        let cfg = ModelConfig {
            input_length: 64,
            conv_channels: vec![3, 2],
            dense_widths: vec![8, 4],
            ..ModelConfig::default()
        };
        (ModelParams::init(&cfg, 21).unwrap(), cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, cfg) = sample();
        let bytes = encode_model(&p, &cfg).unwrap();
        let (q, cfg2) = decode_model(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        let (a, b) = (p.to_flat(), q.to_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(encode_model(&q, &cfg2).unwrap(), bytes);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let (p, cfg) = sample();
        let bytes = encode_model(&p, &cfg).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 3]),
            Err(NnError::SizeMismatch(_))
        ));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_model(&bad), Err(NnError::BadMagic)));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode_model(&ver), Err(NnError::VersionMismatch { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_model(&extra), Err(NnError::SizeMismatch(_))));
    }
}

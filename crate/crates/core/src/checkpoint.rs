//! Binary checkpoint codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SBNETCK\0"
//! version    u32      = 1
//! config     input channels/height/width (u32 ×3), class_count u32,
//!            input normalization mean f64 and std f64, seed u64,
//!            arch tag u8 (0 = micro_res_net, 1 = mlp), entry count u32, then
//!            (channels u32, blocks u32) per stage or width u32 per hidden layer
//! metadata   epochs u32, clean accuracy f64 (NaN when unknown),
//!            per-image standardization flag u8
//! params     count u32, then per record:
//!            name length u32, UTF-8 name, rank u32, dims u32 × rank,
//!            value count u64, values f64 × count
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Architecture, InputNormalization, InputSize, Network, NetworkConfig, Parameter};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"SBNETCK\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingMetadata {
    pub epochs: u32,
    pub clean_accuracy: f64,
    pub input_standardized: bool,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        Self { epochs: 0, clean_accuracy: f64::NAN, input_standardized: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: TrainingMetadata,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(net: &Network, meta: &TrainingMetadata) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::with_capacity(64 + net.parameter_count() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.input.channels);
    put_u32(&mut out, cfg.input.height);
    put_u32(&mut out, cfg.input.width);
    put_u32(&mut out, cfg.class_count);
    out.extend_from_slice(&cfg.input_normalization.mean.to_le_bytes());
    out.extend_from_slice(&cfg.input_normalization.std.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    match &cfg.architecture {
        Architecture::MicroResNet { stages } => {
            out.push(0);
            put_u32(&mut out, stages.len());
            for &(c, b) in stages {
                put_u32(&mut out, c);
                put_u32(&mut out, b);
            }
        }
        Architecture::Mlp { hidden } => {
            out.push(1);
            put_u32(&mut out, hidden.len());
            for &h in hidden {
                put_u32(&mut out, h);
            }
        }
    }
    out.extend_from_slice(&meta.epochs.to_le_bytes());
    out.extend_from_slice(&meta.clean_accuracy.to_le_bytes());
    out.push(u8::from(meta.input_standardized));
    put_u32(&mut out, net.params().len());
    for p in net.params() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rank());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        out.extend_from_slice(&(p.value.len() as u64).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated while reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("not a checkpoint: bad magic bytes {magic:02x?}")));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let input = InputSize { channels: r.u32("input channels")?, height: r.u32("input height")?, width: r.u32("input width")? };
    let class_count = r.u32("class count")?;
    let input_normalization = InputNormalization { mean: r.f64("normalization mean")?, std: r.f64("normalization std")? };
    let seed = r.u64("seed")?;
    let tag = r.u8("architecture tag")?;
    let entries = r.u32("architecture entry count")?;
    let architecture = match tag {
        0 => {
            let mut stages = Vec::with_capacity(entries.min(64));
            for _ in 0..entries {
                stages.push((r.u32("stage channels")?, r.u32("stage blocks")?));
            }
            Architecture::MicroResNet { stages }
        }
        1 => {
            let mut hidden = Vec::with_capacity(entries.min(64));
            for _ in 0..entries {
                hidden.push(r.u32("hidden width")?);
            }
            Architecture::Mlp { hidden }
        }
        other => return Err(Error::Format(format!("unknown architecture tag {other}"))),
    };
    let config = NetworkConfig { input, architecture, class_count, input_normalization, seed };
    config.validate().map_err(|e| Error::Format(format!("invalid network config in checkpoint: {e}")))?;
    let metadata = TrainingMetadata {
        epochs: r.u32("epochs")? as u32,
        clean_accuracy: r.f64("clean accuracy")?,
        input_standardized: r.u8("standardization flag")? != 0,
    };

    let specs = config.param_specs();
    let count = r.u32("parameter count")?;
    if count != specs.len() {
        return Err(Error::Format(format!("checkpoint holds {count} parameters, config expects {}", specs.len())));
    }
    let mut params = Vec::with_capacity(count);
    for spec in &specs {
        let name_len = r.u32("parameter name length")?;
        let name = String::from_utf8(r.take(name_len, "parameter name")?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(Error::Format(format!("unknown parameter {name} (expected {})", spec.name)));
        }
        let rank = r.u32("parameter rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("parameter dims")?);
        }
        if shape != spec.shape {
            return Err(Error::Format(format!(
                "parameter {name} has shape {shape:?} in checkpoint, expected {:?}",
                spec.shape
            )));
        }
        let n = r.u64("value count")? as usize;
        if n != shape.iter().product::<usize>() {
            return Err(Error::Format(format!("parameter {name} declares {n} values for shape {shape:?}")));
        }
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("value count overflow".into()))?, "parameter values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.push(Parameter { name, value: Tensor::new(shape, data)? });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { network: Network::from_parameters(config, params)?, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small() -> Network {
        Network::build(NetworkConfig {
            architecture: Architecture::MicroResNet { stages: vec![(4, 1), (8, 0)] },
            seed: 5,
            ..NetworkConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_bits() {
        let net = small();
        let meta = TrainingMetadata { epochs: 3, clean_accuracy: 0.5, input_standardized: false };
        let ck = decode(&encode(&net, &meta)).unwrap();
        assert_eq!(ck.network, net);
        assert_eq!(ck.metadata, meta);
        let x = Tensor::filled(&[1, 3, 32, 32], 0.25);
        assert_eq!(ck.network.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&small(), &TrainingMetadata::default());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(m)) if m.contains("magic")));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&small(), &TrainingMetadata::default());
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn truncated() {
        let bytes = encode(&small(), &TrainingMetadata::default());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let net = small();
        let mut bytes = encode(&net, &TrainingMetadata::default());
        // First record: "stage0.entry.weight" with dims [4,3,3,3]; bump the
        // leading dim.
        let name = b"stage0.entry.weight";
        let at = bytes.windows(name.len()).position(|w| w == name).unwrap() + name.len() + 4;
        bytes[at] = 5;
        match decode(&bytes) {
            Err(Error::Format(m)) => assert!(m.contains("stage0.entry.weight"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_parameter_name() {
        let mut bytes = encode(&small(), &TrainingMetadata::default());
        let name = b"stage0.entry.weight";
        let at = bytes.windows(name.len()).position(|w| w == name).unwrap();
        bytes[at] = b'x';
        assert!(matches!(decode(&bytes), Err(Error::Format(m)) if m.contains("unknown parameter")));
    }
}

//! Binary checkpoints: the magic `DVS2S1`, a little-endian `u64` header
//! length, a UTF-8 header, then every tensor as little-endian row-major `f64`
//! in header order.
//!
//! Header lines are `key=value` settings (training configuration prefixed
//! with `config.`, the vocabulary digest, trainer scalars) followed by one
//! `tensor <name> <d0>x<d1>... f64` line per tensor.

use std::fs;
use std::path::Path;

use ndarray::IxDyn;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::numeric::{ParamSet, Tensor};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 6] = b"DVS2S1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab_digest: String,
    pub params: ModelParams,
    pub baseline: f64,
    pub lr_scale: f64,
    pub epoch: usize,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn new(config: TrainConfig, vocab: &Vocabulary, params: ModelParams) -> Self {
        let lr_scale = config.lr;
        Self {
            config,
            vocab_digest: vocab.digest(),
            params,
            baseline: 0.0,
            lr_scale,
            epoch: 0,
        }
    }

    /// Errors unless `vocab` is the vocabulary the checkpoint was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let digest = vocab.digest();
        if digest != self.vocab_digest {
            return Err(bad(format!(
                "vocabulary digest {digest} does not match checkpoint digest {}",
                self.vocab_digest
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.params.dims;
        let mut header = String::from("format=1\n");
        for (k, v) in self.config.to_pairs() {
            header.push_str(&format!("config.{k}={v}\n"));
        }
        header.push_str(&format!("vocab_digest={}\n", self.vocab_digest));
        header.push_str(&format!("baseline={:?}\n", self.baseline));
        header.push_str(&format!("lr_scale={:?}\n", self.lr_scale));
        header.push_str(&format!("epoch={}\n", self.epoch));
        header.push_str(&format!(
            "dims={} {} {} {} {}\n",
            d.vocab, d.content, d.embed, d.hidden, d.attention
        ));
        let tensors = self.params.tensors();
        for (name, t) in &tensors {
            let shape: Vec<String> = t.shape().iter().map(|s| s.to_string()).collect();
            header.push_str(&format!("tensor {name} {} f64\n", shape.join("x")));
        }
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &tensors {
            for &v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| bad("missing DVS2S1 magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| bad("header length overflow"))?;
        let rest = &rest[8..];
        if rest.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header = std::str::from_utf8(&rest[..header_len]).map_err(|_| bad("header is not UTF-8"))?;
        let mut payload = &rest[header_len..];

        let mut config = TrainConfig::default();
        let (mut digest, mut baseline, mut lr_scale, mut epoch, mut dims) = (None, None, None, None, None);
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        for line in header.lines() {
            if let Some(spec) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = spec.split(' ').collect();
                if parts.len() != 3 || parts[2] != "f64" {
                    return Err(bad(format!("bad tensor line {line:?}")));
                }
                let shape = parts[1]
                    .split('x')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape in {line:?}")))?;
                shapes.push((parts[0].to_string(), shape));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number in {line:?}")));
            match key {
                "format" if value == "1" => {}
                "format" => return Err(bad(format!("unsupported format {value}"))),
                "vocab_digest" => digest = Some(value.to_string()),
                "baseline" => baseline = Some(num(value)?),
                "lr_scale" => lr_scale = Some(num(value)?),
                "epoch" => epoch = Some(value.parse().map_err(|_| bad("bad epoch"))?),
                "dims" => {
                    let v = value
                        .split(' ')
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad dims"))?;
                    if v.len() != 5 {
                        return Err(bad("dims needs five values"));
                    }
                    dims = Some(ModelDims {
                        vocab: v[0],
                        content: v[1],
                        embed: v[2],
                        hidden: v[3],
                        attention: v[4],
                    });
                }
                k => match k.strip_prefix("config.") {
                    Some(field) => config.set(field, value).map_err(|e| bad(e.to_string()))?,
                    None => return Err(bad(format!("unknown header key {k:?}"))),
                },
            }
        }
        let missing = |what: &str| bad(format!("header lacks {what}"));
        let dims = dims.ok_or_else(|| missing("dims"))?;
        dims.validate()?;
        let specs = dims.param_specs();
        if specs.len() != shapes.len() {
            return Err(bad(format!("expected {} tensors, header lists {}", specs.len(), shapes.len())));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, shape)) in specs.iter().zip(&shapes) {
            if spec.name != name || &spec.shape != shape {
                return Err(bad(format!(
                    "tensor {name} {shape:?} where {} {:?} was expected",
                    spec.name, spec.shape
                )));
            }
            let n: usize = shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(format!("payload truncated in tensor {name}")));
            }
            let data: Vec<f64> = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
            }
            payload = &payload[8 * n..];
            tensors.push(Tensor::from_shape_vec(IxDyn(shape), data).expect("sized above"));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes", payload.len())));
        }
        Ok(Self {
            config,
            vocab_digest: digest.ok_or_else(|| missing("vocab_digest"))?,
            params: ModelParams::from_tensors(dims, tensors)?,
            baseline: baseline.ok_or_else(|| missing("baseline"))?,
            lr_scale: lr_scale.ok_or_else(|| missing("lr_scale"))?,
            epoch: epoch.ok_or_else(|| missing("epoch"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{dims, random_params, vocab};

    fn sample() -> (Vocabulary, Checkpoint) {
        let v = vocab(2, 3);
        let p = random_params(dims(&v, 3, 4), 3, 0.7);
        let config = TrainConfig {
            embed: 3,
            hidden: 4,
            lr: 0.25,
            ..TrainConfig::default()
        };
        let mut c = Checkpoint::new(config, &v, p);
        c.baseline = -1.0 / 3.0;
        c.epoch = 4;
        (v, c)
    }

    #[test]
    fn bytes_round_trip() {
        let (v, c) = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..6], b"DVS2S1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        back.check_vocab(&v).unwrap();
        assert!(back.check_vocab(&vocab(2, 4)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let (_, c) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (_, c) = sample();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(b"NOTIT1").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&nan), Err(Error::NonFinite(_))));
    }
}

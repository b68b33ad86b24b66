//! Binary checkpoints: `BPC1`, a u64 LE header length, a JSON header, then
//! little-endian f64 arrays in the order the header lists them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWConfig, AdamWState, BaselineKind, TrainConfig};
use crate::network::{Network, NetworkSpec};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"BPC1";
pub const VERSION: u32 = 1;

/// A network plus everything needed to resume training it.
#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub net: Network<S>,
    pub optimizer: Option<AdamW<S>>,
    pub baseline: Option<BaselineKind>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    seed: u64,
    epoch: usize,
    step: u64,
    spec: NetworkSpec,
    baseline: Option<BaselineKind>,
    adamw: Option<AdamWConfig>,
    train: Option<TrainConfig>,
    arrays: Vec<ArrayEntry>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(net: Network<S>, seed: u64) -> Self {
        Self {
            net,
            optimizer: None,
            baseline: None,
            train: None,
            seed,
            epoch: 0,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.net.params.arrays();
        let mut arrays: Vec<ArrayEntry> = params
            .iter()
            .map(|(name, shape, _)| ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect();
        let mut data: Vec<&[S]> = params.iter().map(|(_, _, v)| v.as_slice()).collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("m", &opt.state.m), ("v", &opt.state.v)] {
                for ((name, shape, _), values) in params.iter().zip(moments) {
                    arrays.push(ArrayEntry {
                        name: format!("{prefix}.{name}"),
                        shape: shape.clone(),
                    });
                    data.push(values);
                }
            }
        }
        let header = Header {
            version: VERSION,
            seed: self.seed,
            epoch: self.epoch,
            step: self.optimizer.as_ref().map_or(0, |o| o.state.step),
            spec: self.net.spec().clone(),
            baseline: self.baseline,
            adamw: self.optimizer.as_ref().map(|o| o.cfg),
            train: self.train.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let n_values: usize = data.iter().map(|d| d.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for d in data {
            for v in d {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::CheckpointMagic);
        }
        let len_bytes: [u8; 8] = bytes
            .get(4..12)
            .ok_or_else(|| Error::CheckpointTruncated("header length".into()))?
            .try_into()
            .expect("eight bytes");
        let header_len = u64::from_le_bytes(len_bytes);
        let body = &bytes[12..];
        if header_len > body.len() as u64 {
            return Err(Error::CheckpointTruncated(format!(
                "header declares {header_len} bytes, {} remain",
                body.len()
            )));
        }
        let (json, mut payload) = body.split_at(header_len as usize);
        let value: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CheckpointHeader("missing version".into()))?;
        if found != VERSION as u64 {
            return Err(Error::CheckpointVersion {
                found: found.min(u32::MAX as u64) as u32,
                supported: VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let declared = header
            .arrays
            .iter()
            .try_fold(0usize, |acc, a| {
                a.shape
                    .iter()
                    .try_fold(1usize, |n, &d| n.checked_mul(d))
                    .and_then(|n| acc.checked_add(n))
            })
            .and_then(|n| n.checked_mul(8));
        match declared {
            Some(n) if n == payload.len() => {}
            Some(n) if n > payload.len() => {
                return Err(Error::CheckpointTruncated(format!(
                    "arrays need {n} bytes, {} remain",
                    payload.len()
                )))
            }
            _ => {
                return Err(Error::CheckpointHeader(
                    "declared array sizes do not match the payload".into(),
                ))
            }
        }
        let mut net = Network::<S>::build(header.spec, 0)
            .map_err(|e| Error::CheckpointHeader(format!("invalid network spec: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> = net
            .params
            .arrays()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let n_params = expected.len();
        let with_moments = match header.arrays.len() {
            n if n == n_params => false,
            n if n == 3 * n_params => true,
            n => {
                return Err(Error::CheckpointHeader(format!(
                    "{n} arrays listed, network has {n_params}"
                )))
            }
        };
        if with_moments != header.adamw.is_some() {
            return Err(Error::CheckpointHeader("optimizer settings and moments disagree".into()));
        }
        for (i, entry) in header.arrays.iter().enumerate() {
            let (name, shape) = &expected[i % n_params];
            let want = match i / n_params {
                0 => name.clone(),
                1 => format!("m.{name}"),
                _ => format!("v.{name}"),
            };
            if entry.name != want || &entry.shape != shape {
                return Err(Error::CheckpointHeader(format!(
                    "array {i} is `{}` {:?}, expected `{want}` {shape:?}",
                    entry.name, entry.shape
                )));
            }
        }
        let mut read = |n: usize| -> Result<Vec<S>> {
            if payload.len() < 8 * n {
                return Err(Error::CheckpointTruncated(format!(
                    "need {} payload bytes, {} remain",
                    8 * n,
                    payload.len()
                )));
            }
            let (head, rest) = payload.split_at(8 * n);
            payload = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("eight bytes"))))
                .collect())
        };
        let sizes: Vec<usize> = expected.iter().map(|(_, s)| s.iter().product()).collect();
        for (dst, &n) in net.params.arrays_mut().into_iter().zip(&sizes) {
            dst.copy_from_slice(&read(n)?);
        }
        let optimizer = match header.adamw {
            Some(cfg) => {
                let mut state = AdamWState::for_params(&net.params);
                for m in state.m.iter_mut() {
                    *m = read(m.len())?;
                }
                for v in state.v.iter_mut() {
                    *v = read(v.len())?;
                }
                state.step = header.step;
                Some(AdamW { cfg, state })
            }
            None => None,
        };
        Ok(Self {
            net,
            optimizer,
            baseline: header.baseline,
            train: header.train,
            seed: header.seed,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ParamGrads;
    use crate::ModelFamily;

    fn sample() -> Checkpoint<f64> {
        let spec = NetworkSpec::chain(ModelFamily::Bpc, &[3, 4, 2], Some(&|_| crate::ActivationKind::Tanh), Some(&|_| crate::ActivationKind::Identity));
        let net = Network::<f64>::build(spec, 9).unwrap();
        let mut opt = AdamW::new(AdamWConfig::new(1e-3), &net.params).unwrap();
        let mut params = net.params.clone();
        let mut grads: ParamGrads<f64> = params.zero_grads();
        for g in grads.weights.iter_mut().flatten() {
            g.fill(0.1);
        }
        opt.step(&mut params, &grads).unwrap();
        let net = Network::from_parts(net.spec().clone(), params).unwrap();
        Checkpoint {
            optimizer: Some(opt),
            epoch: 3,
            ..Checkpoint::new(net, 42)
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.optimizer.as_ref().unwrap().state, ck.optimizer.unwrap().state);
        assert_eq!(back.net.params.arrays(), ck.net.params.arrays());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f64>::from_bytes(b"XXXX"), Err(Error::CheckpointMagic)));
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CheckpointTruncated(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
        let mut bumped = bytes.clone();
        let at = bytes.windows(11).position(|w| w == b"\"version\":1").unwrap();
        bumped[at + 10] = b'7';
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bumped),
            Err(Error::CheckpointVersion { found: 7, supported: 1 })
        ));
    }

    #[test]
    fn mutated_headers_never_panic() {
        let bytes = sample().to_bytes().unwrap();
        let header_end = 12 + u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        for i in 0..header_end {
            for b in [b'0', b'{', b'"', 0xff] {
                let mut m = bytes.clone();
                m[i] = b;
                let _ = Checkpoint::<f64>::from_bytes(&m);
            }
        }
    }
}

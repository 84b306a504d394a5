//! Checkpoint container.
//!
//! ```text
//! magic  "MCCK"
//! u32    format version (1)
//! u32    metadata length, then that many bytes of JSON (architecture,
//!        k, thresholds, training configurations)
//! u32    bias length, f64 each
//! u32    tensor count; per tensor: u16 + utf-8 name, u32 rank,
//!        u32 per dim, f64 data
//! ```
//!
//! All integers and floats are little-endian; scalars are stored at full
//! 64-bit precision so a round trip is bit-exact.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Estimator, MoEModel, SingleExpert, Thresholds};
use crate::channel::ConfigTuple;
use crate::error::{Error, Result};
use crate::models::{BackboneConfig, ModelParams};
use crate::numerics::{Tensor, MAX_RANK};
use crate::wire::{Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    kind: String,
    backbone: BackboneConfig,
    n_experts: usize,
    k: usize,
    thresholds: Option<Thresholds>,
    bias_at_eval: bool,
    precision: String,
    trained_on: BTreeSet<ConfigTuple>,
}

/// A model plus the channel configurations it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Estimator,
    pub trained_on: BTreeSet<ConfigTuple>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let (meta, bias) = match &ck.model {
        Estimator::Single(m) => (
            Meta {
                kind: "single".into(),
                backbone: m.backbone_config.clone(),
                n_experts: 1,
                k: 1,
                thresholds: None,
                bias_at_eval: false,
                precision: "f64".into(),
                trained_on: ck.trained_on.clone(),
            },
            Vec::new(),
        ),
        Estimator::Moe(m) => (
            Meta {
                kind: "moe".into(),
                backbone: m.backbone_config.clone(),
                n_experts: m.n_experts(),
                k: m.k,
                thresholds: Some(m.thresholds),
                bias_at_eval: m.bias_at_eval,
                precision: "f64".into(),
                trained_on: ck.trained_on.clone(),
            },
            m.bias.clone(),
        ),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::parse(format!("checkpoint metadata: {e}")))?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(json.len() as u32);
    w.bytes(&json);
    w.u32(bias.len() as u32);
    for b in bias {
        w.f64(b);
    }
    let params = ck.model.params();
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.str(name)?;
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(buf, "checkpoint");
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::parse("checkpoint: bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(format!(
            "checkpoint: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let meta: Meta =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::parse(format!("checkpoint metadata: {e}")))?;
    if meta.precision != "f64" {
        return Err(Error::parse(format!(
            "checkpoint: unsupported precision `{}`",
            meta.precision
        )));
    }
    let nb = r.u32()? as usize;
    let bias = (0..nb).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::parse(format!("checkpoint: `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params
            .insert(name, Tensor::new(&shape, data)?)
            .map_err(|e| Error::parse(format!("checkpoint: {e}")))?;
    }
    r.finish()?;
    let model = match meta.kind.as_str() {
        "single" => Estimator::Single(SingleExpert::from_parts(meta.backbone, params)?),
        "moe" => {
            let thresholds = meta
                .thresholds
                .ok_or_else(|| Error::parse("checkpoint: MoE without thresholds"))?;
            Estimator::Moe(MoEModel::from_parts(
                meta.backbone,
                meta.n_experts,
                meta.k,
                bias,
                thresholds,
                meta.bias_at_eval,
                params,
            )?)
        }
        other => return Err(Error::parse(format!("checkpoint: unknown model kind `{other}`"))),
    };
    Ok(Checkpoint {
        model,
        trained_on: meta.trained_on,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn moe() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MoEModel::new(BackboneConfig::resnet(1, 3, 2), 3, 2, Thresholds::defaults(3), &mut rng).unwrap();
        m.bias = vec![0.001, -0.002, 0.0];
        Checkpoint {
            model: Estimator::Moe(m),
            trained_on: BTreeSet::new(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = moe();
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.model.as_moe().unwrap().bias, ck.model.as_moe().unwrap().bias);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&moe()).unwrap();
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode_checkpoint(&moe()).unwrap();
        bytes[4] = 9;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = moe();
        let p = ck.model.params_mut();
        *p.get_mut("router.conv.0.bias").unwrap() = Tensor::zeros(&[7]);
        let bytes = encode_checkpoint(&ck).unwrap();
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Shape(_))));
    }
}

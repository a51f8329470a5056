//! `ACCGAN01` checkpoints: magic, u32 LE header length, JSON header, then every tensor
//! as contiguous little-endian `f32`.

use std::io::{Read, Write};

use accguard_core::dataset::NormStats;
use accguard_core::{Error, Result};
use accguard_nn::{Layer, LayerSpec, Sequential};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GanConfig;
use crate::model::{EpochStats, GanModel};

pub const MAGIC: &[u8; 8] = b"ACCGAN01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    network: String,
    layer: usize,
    name: String,
    /// Offset in `f32` elements from the start of the blob.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: GanConfig,
    generator: Vec<LayerSpec>,
    disc_features: Vec<LayerSpec>,
    disc_head: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    norm: NormStats,
    history: Vec<EpochStats>,
}

fn networks(model: &GanModel) -> [(&'static str, &Sequential); 3] {
    [
        ("generator", &model.generator),
        ("disc_features", &model.disc_features),
        ("disc_head", &model.disc_head),
    ]
}

pub fn to_bytes(model: &GanModel) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, net) in networks(model) {
        for (li, layer) in net.layers.iter().enumerate() {
            for (tname, t) in layer.tensors() {
                tensors.push(TensorEntry {
                    network: name.into(),
                    layer: li,
                    name: tname.into(),
                    offset,
                    len: t.len(),
                });
                offset += t.len();
                for v in t {
                    blob.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
    }
    let header = Header {
        version: VERSION,
        config: model.config.clone(),
        generator: model.generator.specs(),
        disc_features: model.disc_features.specs(),
        disc_head: model.disc_head.specs(),
        tensors,
        norm: model.norm.clone(),
        history: model.history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn write<W: Write>(model: &GanModel, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(model)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<GanModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<GanModel> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not an ACCGAN01 checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Format("checkpoint header is truncated".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    header.config.validate()?;
    let blob = &bytes[12 + hlen..];
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if blob.len() != 4 * total {
        return Err(Error::Format(format!(
            "checkpoint blob holds {} bytes, header describes {}",
            blob.len(),
            4 * total
        )));
    }
    let mut nets = [
        ("generator", build(&header.generator)?),
        ("disc_features", build(&header.disc_features)?),
        ("disc_head", build(&header.disc_head)?),
    ];
    let mut filled = 0;
    for entry in &header.tensors {
        let net = &mut nets
            .iter_mut()
            .find(|(n, _)| *n == entry.network)
            .ok_or_else(|| Error::Format(format!("unknown network '{}'", entry.network)))?
            .1;
        let layer = net
            .layers
            .get_mut(entry.layer)
            .ok_or_else(|| Error::Format(format!("{} has no layer {}", entry.network, entry.layer)))?;
        let (_, target) = layer
            .tensors_mut()
            .into_iter()
            .find(|(n, _)| *n == entry.name)
            .ok_or_else(|| Error::Format(format!("layer {} has no tensor '{}'", entry.layer, entry.name)))?;
        if target.len() != entry.len || entry.offset + entry.len > total {
            return Err(Error::Format(format!(
                "tensor {}/{}/{} has {} values, layer expects {}",
                entry.network,
                entry.layer,
                entry.name,
                entry.len,
                target.len()
            )));
        }
        for (i, v) in target.iter_mut().enumerate() {
            let at = 4 * (entry.offset + i);
            *v = f32::from_le_bytes(blob[at..at + 4].try_into().expect("4 bytes")) as f64;
        }
        filled += entry.len;
    }
    let [(_, generator), (_, disc_features), (_, disc_head)] = nets;
    let expected: usize = [&generator, &disc_features, &disc_head]
        .iter()
        .flat_map(|n| n.layers.iter())
        .map(|l| l.tensors().iter().map(|(_, t)| t.len()).sum::<usize>())
        .sum();
    if filled != expected {
        return Err(Error::Format(format!(
            "checkpoint fills {filled} of {expected} model values"
        )));
    }
    Ok(GanModel {
        config: header.config,
        generator,
        disc_features,
        disc_head,
        norm: header.norm,
        history: header.history,
    })
}

fn build(specs: &[LayerSpec]) -> Result<Sequential> {
    specs
        .iter()
        .map(|&s| {
            s.validate()?;
            Ok(Layer::zeroed(s))
        })
        .collect::<Result<Vec<_>>>()
        .map(Sequential::new)
}

/// Lower-case hex SHA-256 of a checkpoint's bytes.
pub fn checksum(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

//! Network checkpoints: a JSON manifest beside a little-endian `f64` blob.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Layer, MlpSpec, Network};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub spec: MlpSpec,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Length in bytes.
    pub length: u64,
    /// Hex SHA-256 of the entry's bytes.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub created_by: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub entries: Vec<CheckpointEntry>,
}

/// Every stored tensor of a layer, running statistics included.
fn layer_tensors(layer: &Layer) -> Vec<&Tensor> {
    let mut out = vec![&layer.weight, &layer.bias];
    if let Some(bn) = &layer.bn {
        out.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
    }
    out
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (the manifest) and a companion `.bin` blob.
pub fn save_checkpoint(nets: &BTreeMap<String, Network>, path: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, net) in nets {
        let start = blob.len();
        for layer in net.layers() {
            for t in layer_tensors(layer) {
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        entries.push(CheckpointEntry {
            name: name.clone(),
            spec: net.spec().clone(),
            offset: start as u64,
            length: (blob.len() - start) as u64,
            sha256: hex::encode(Sha256::digest(&blob[start..])),
        });
    }
    let blob_file = blob_path(path);
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        created_by: format!("mind2mind {}", env!("CARGO_PKG_VERSION")),
        blob: blob_file.file_name().and_then(|s| s.to_str()).unwrap_or("weights.bin").to_string(),
        entries,
    };
    std::fs::write(&blob_file, &blob)?;
    std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn take(values: &mut std::slice::Iter<'_, f64>, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = values.by_ref().take(n).copied().collect();
    if data.len() != n {
        return Err(Error::Format("blob entry shorter than its spec".into()));
    }
    Tensor::new(shape.to_vec(), data)
}

fn decode(spec: &MlpSpec, bytes: &[u8]) -> Result<Network> {
    spec.validate()?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut it = values.iter();
    let mut layers = Vec::new();
    for (i, w) in spec.layer_widths.windows(2).enumerate() {
        let weight = take(&mut it, &[w[0], w[1]])?;
        let bias = take(&mut it, &[w[1]])?;
        let bn = if spec.batch_norm[i] {
            Some(BatchNorm {
                gamma: take(&mut it, &[w[1]])?,
                beta: take(&mut it, &[w[1]])?,
                running_mean: take(&mut it, &[w[1]])?,
                running_var: take(&mut it, &[w[1]])?,
            })
        } else {
            None
        };
        layers.push(Layer { weight, bias, bn });
    }
    if it.next().is_some() {
        return Err(Error::Format("blob entry longer than its spec".into()));
    }
    Network::from_layers(spec.clone(), layers)
}

/// Reads a checkpoint written by [`save_checkpoint`], verifying checksums.
pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Network>> {
    let manifest: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    let blob_file = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = std::fs::read(blob_file)?;
    let mut spans: Vec<(u64, u64)> = manifest.entries.iter().map(|e| (e.offset, e.offset + e.length)).collect();
    spans.sort();
    if spans.windows(2).any(|w| w[0].1 > w[1].0) {
        return Err(Error::Format("overlapping checkpoint entries".into()));
    }
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        let (start, end) = (e.offset as usize, (e.offset + e.length) as usize);
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Format(format!("entry `{}` lies outside the blob", e.name)))?;
        if hex::encode(Sha256::digest(bytes)) != e.sha256 {
            return Err(Error::Checksum(e.name.clone()));
        }
        if bytes.len() % 8 != 0 {
            return Err(Error::Format(format!("entry `{}` is not a whole number of f64 values", e.name)));
        }
        out.insert(e.name.clone(), decode(&e.spec, bytes)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mode};

    fn nets() -> BTreeMap<String, Network> {
        let spec = MlpSpec::new(vec![3, 5, 2], vec![Activation::Relu, Activation::Tanh], vec![true, false]).unwrap();
        let mut gen = Network::init(&spec, 4).unwrap();
        // give the batch norm non-trivial running statistics
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0], vec![0.3, 0.3, 0.9]]).unwrap();
        let mut g = crate::autodiff::ExprGraph::new();
        let xn = g.constant(x);
        let fwd = gen.build(&mut g, xn, Mode::Train, "g").unwrap();
        let (layer, m, v) = fwd.bn_stats[0];
        let vals = g.eval(&Default::default(), &[m, v]).unwrap();
        gen.update_running_stats(&[(layer, vals[0].clone(), vals[1].clone())]);
        let critic = Network::init(&MlpSpec::dense(&[2, 4, 1], Activation::Relu, Activation::None).unwrap(), 1).unwrap();
        [("gen".to_string(), gen), ("critic".to_string(), critic)].into_iter().collect()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let n = nets();
        save_checkpoint(&n, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), n);
        let manifest: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(manifest.format_version, 1);
        assert_eq!(manifest.blob, "model.bin");
    }

    #[test]
    fn corruption_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&nets(), &path).unwrap();
        let blob = dir.path().join("model.bin");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[17] ^= 0x40;
        std::fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checksum(_))));

        save_checkpoint(&nets(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::UnsupportedVersion(7))));
    }
}

//! Checkpoint files: a metadata JSON document next to a flat blob of
//! little-endian `f64` parameters (`<base>.json`, `<base>.params`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CabiError, Result};
use crate::nn::{Activation, DenseNet, Layer};

/// Architecture of one network, enough to rebuild it from a flat blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NetSpec {
    pub fn of(net: &DenseNet) -> Self {
        Self {
            widths: net.widths(),
            activations: net.layers().iter().map(|l| l.activation).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn build(&self, params: &[f64]) -> Result<DenseNet> {
        if self.widths.len() != self.activations.len() + 1 || self.activations.is_empty() {
            return Err(CabiError::InvalidArgument("inconsistent network spec".into()));
        }
        if params.len() != self.num_params() {
            return Err(CabiError::Dimension {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let layers = self
            .widths
            .windows(2)
            .zip(&self.activations)
            .map(|(w, &act)| Layer {
                weight: ndarray::Array2::zeros((w[0], w[1])),
                bias: ndarray::Array1::zeros(w[1]),
                activation: act,
            })
            .collect();
        let mut net = DenseNet::from_layers(layers)?;
        net.set_params_flat(params)?;
        Ok(net)
    }
}

/// Concatenates parameters of several networks.
pub fn pack(nets: &[&DenseNet]) -> Vec<f64> {
    nets.iter().flat_map(|n| n.params_flat()).collect()
}

/// Rebuilds networks from their specs and a packed blob.
pub fn unpack(specs: &[NetSpec], blob: &[f64]) -> Result<Vec<DenseNet>> {
    let total: usize = specs.iter().map(NetSpec::num_params).sum();
    if total != blob.len() {
        return Err(CabiError::Dimension {
            expected: total,
            actual: blob.len(),
        });
    }
    let mut offset = 0;
    specs
        .iter()
        .map(|s| {
            let n = s.num_params();
            let net = s.build(&blob[offset..offset + n]);
            offset += n;
            net
        })
        .collect()
}

pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = base.as_os_str().to_owned();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("params"))
}

pub fn save<M: Serialize>(base: &Path, meta: &M, params: &[f64]) -> Result<()> {
    let (meta_path, blob_path) = checkpoint_paths(base);
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&blob_path, bytes)?;
    fs::write(&meta_path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(base: &Path) -> Result<(M, Vec<f64>)> {
    let (meta_path, blob_path) = checkpoint_paths(base);
    let text = fs::read_to_string(&meta_path).map_err(|e| CabiError::load(&meta_path, e.to_string()))?;
    let meta = serde_json::from_str(&text).map_err(|e| CabiError::load(&meta_path, e.to_string()))?;
    let bytes = fs::read(&blob_path).map_err(|e| CabiError::load(&blob_path, e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(CabiError::load(&blob_path, "parameter blob is not a whole number of f64"));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn nets_survive_a_round_trip() {
        let mut rng = SeededRng::new(0);
        let a = DenseNet::new(3, &[4, 4], 2, Activation::Swish, &mut rng);
        let b = DenseNet::new(2, &[5], 1, Activation::Relu, &mut rng);
        let specs = vec![NetSpec::of(&a), NetSpec::of(&b)];
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ck");
        save(&base, &specs, &pack(&[&a, &b])).unwrap();
        let (specs2, blob): (Vec<NetSpec>, Vec<f64>) = load(&base).unwrap();
        let nets = unpack(&specs2, &blob).unwrap();
        assert_eq!(nets, vec![a, b]);
        assert!(unpack(&specs2, &blob[1..]).is_err());
    }
}

//! Checkpoint files plus a JSON sidecar carrying the configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_psfcn, NetConfig, Network};
use crate::checkpoint::{self, NamedTensor};
use crate::error::{Error, Result};

/// Contents of the `<checkpoint>.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format_version: u32,
    pub config: NetConfig,
    pub seed: u64,
    pub parameter_count: usize,
    /// Free-form description of the training run, e.g. "S+8".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

pub fn manifest_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    save_weights_labeled(net, path, None)
}

/// [`save_weights`] with a training label recorded in the sidecar.
pub fn save_weights_labeled(net: &Network, path: &Path, label: Option<&str>) -> Result<()> {
    let bytes = checkpoint::encode(net.params());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let manifest = WeightsManifest {
        format_version: checkpoint::FORMAT_VERSION,
        config: net.config().clone(),
        seed: net.seed(),
        parameter_count: net.parameter_count(),
        label: label.map(str::to_string),
    };
    let side = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_weights_manifest(path: &Path) -> Result<WeightsManifest> {
    let side = manifest_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))
}

pub fn load_weights(path: &Path) -> Result<Network> {
    let manifest = read_weights_manifest(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = checkpoint::decode(&bytes)?;
    let mut net = build_psfcn(&manifest.config, manifest.seed)?;
    assign(&mut net, tensors).map_err(|reason| Error::format(path, reason))?;
    Ok(net)
}

fn assign(net: &mut Network, tensors: Vec<NamedTensor>) -> std::result::Result<(), String> {
    if tensors.len() != net.params().len() {
        return Err(format!(
            "checkpoint holds {} tensors, configuration expects {}",
            tensors.len(),
            net.params().len()
        ));
    }
    let mut values = Vec::with_capacity(tensors.len());
    for (expected, got) in net.params().iter().zip(tensors) {
        if expected.name != got.name || expected.tensor.shape() != got.tensor.shape() {
            return Err(format!(
                "expected {} {}, found {} {}",
                expected.name,
                expected.tensor.shape(),
                got.name,
                got.tensor.shape()
            ));
        }
        values.push(got.tensor);
    }
    net.set_param_tensors(values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Image;
    use crate::net::Observations;

    #[test]
    fn save_load_round_trip_gives_identical_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psfw");
        let cfg = NetConfig {
            width_scale: 0.125,
            ..NetConfig::default()
        };
        let net = build_psfcn(&cfg, 9).unwrap();
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.config(), net.config());
        let imgs = vec![Image {
            height: 8,
            width: 8,
            data: (0..192).map(|i| (i % 17) as f32 / 17.0).collect(),
        }];
        let lights = [[0.0, 0.0, 1.0]];
        let obs = Observations {
            images: &imgs,
            lights: Some(&lights),
        };
        assert!(net.forward(&obs).unwrap().bit_eq(&back.forward(&obs).unwrap()));
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psfw");
        let net = build_psfcn(&NetConfig { width_scale: 0.125, ..NetConfig::default() }, 1).unwrap();
        save_weights(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn config_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psfw");
        let net = build_psfcn(&NetConfig { width_scale: 0.125, ..NetConfig::default() }, 1).unwrap();
        save_weights(&net, &path).unwrap();
        let side = manifest_path(&path);
        let text = std::fs::read_to_string(&side).unwrap().replace("0.125", "0.25");
        std::fs::write(&side, text).unwrap();
        assert!(load_weights(&path).is_err());
    }
}

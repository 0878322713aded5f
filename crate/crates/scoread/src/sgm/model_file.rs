//! Model serialization.
//!
//! Layout: magic `"SCAD"`, a little-endian `u32` format version, a
//! little-endian `u64` descriptor length, the JSON descriptor (noise
//! schedule, architecture, frozen Fourier frequencies, and the tensor table
//! with names and shapes), then every parameter tensor as little-endian
//! `f32` in the declared order.
//!
//! Loading re-derives the tensor table from the architecture and demands an
//! exact match, so a file whose descriptor disagrees with its own
//! architecture is rejected rather than silently misread.

use std::fs;
use std::path::Path;

use super::network::{ArchConfig, ScoreNetwork};
use super::schedule::SigmaSchedule;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCAD";
const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelDescriptor {
    schedule: SigmaSchedule,
    arch: ArchConfig,
    fourier_frequencies: Vec<f64>,
    tensors: Vec<TensorInfo>,
}

/// Writes the model file described in the module docs.
pub fn save_model(net: &ScoreNetwork, path: &Path) -> Result<()> {
    let descriptor = ModelDescriptor {
        schedule: *net.schedule(),
        arch: net.arch().clone(),
        fourier_frequencies: net.frequencies().to_vec(),
        tensors: net
            .arch()
            .tensor_table()
            .into_iter()
            .map(|(name, shape)| TensorInfo { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&descriptor).expect("descriptor serialization is infallible");
    let mut bytes = Vec::with_capacity(16 + json.len() + net.param_count() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for &p in net.params() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a model file back into a [`ScoreNetwork`].
pub fn load_model(path: &Path) -> Result<ScoreNetwork> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "file too short for header".to_string()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic (expected \"SCAD\")".to_string()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {version} (expected {VERSION})"),
        ));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("sized slice")) as usize;
    if bytes.len() < 16 + json_len {
        return Err(Error::format(path, "truncated descriptor".to_string()));
    }
    let descriptor: ModelDescriptor = serde_json::from_slice(&bytes[16..16 + json_len])
        .map_err(|e| Error::format(path, format!("bad descriptor JSON: {e}")))?;
    descriptor.arch.validate().map_err(|e| Error::format(path, format!("bad architecture: {e}")))?;
    descriptor.schedule.validate().map_err(|e| Error::format(path, format!("bad schedule: {e}")))?;

    let expected_table = descriptor.arch.tensor_table();
    if descriptor.tensors.len() != expected_table.len()
        || descriptor
            .tensors
            .iter()
            .zip(&expected_table)
            .any(|(got, (name, shape))| got.name != *name || got.shape != *shape)
    {
        return Err(Error::format(
            path,
            "tensor table does not match the declared architecture".to_string(),
        ));
    }

    let payload = &bytes[16 + json_len..];
    let expected_params = descriptor.arch.param_count();
    if payload.len() != expected_params * 4 {
        return Err(Error::format(
            path,
            format!(
                "parameter payload has {} bytes, expected {}",
                payload.len(),
                expected_params * 4
            ),
        ));
    }
    let mut params = Vec::with_capacity(expected_params);
    for chunk in payload.chunks_exact(4) {
        params.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    ScoreNetwork::from_parts(
        descriptor.arch,
        descriptor.schedule,
        descriptor.fourier_frequencies,
        params,
    )
    .map_err(|e| Error::format(path, format!("inconsistent model: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::sgm::network::ContextArch;

    fn sample_net(context: bool) -> ScoreNetwork {
        let arch = ArchConfig {
            bands: 6,
            width: 4,
            blocks: 2,
            kernel: 3,
            fourier_dim: 4,
            film_hidden: 6,
            context: context.then_some(ContextArch { count: 3, hidden: 4, encoded: 2 }),
        };
        let mut rng = SeededRng::new(77, 0);
        let mut net = ScoreNetwork::init(arch, SigmaSchedule::default(), &mut rng).unwrap();
        let n = net.param_count();
        // f32-representable values so the roundtrip is bit-exact.
        let noise = rng.normal_vec(n);
        for (p, z) in net.params_mut().iter_mut().zip(noise) {
            *p = (0.25 * z) as f32 as f64;
        }
        net
    }

    #[test]
    fn roundtrip_preserves_outputs_bit_exactly() {
        for context in [false, true] {
            let net = sample_net(context);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.scad");
            save_model(&net, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(net.params(), loaded.params());
            assert_eq!(net.frequencies(), loaded.frequencies());
            assert_eq!(net.arch(), loaded.arch());
            let x = vec![0.3, -0.2, 0.8, 0.1, 0.0, 0.5];
            let ctx = context.then(|| {
                crate::data_io::ContextSet::new(3, 6, vec![0.2; 18]).unwrap()
            });
            let before = net.score(&x, 0.4, ctx.as_ref()).unwrap();
            let after = loaded.score(&x, 0.4, ctx.as_ref()).unwrap();
            assert_eq!(before, after, "scores must be bit-identical after reload");
        }
    }

    #[test]
    fn saving_twice_yields_identical_bytes() {
        let net = sample_net(false);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.scad");
        let b = dir.path().join("b.scad");
        save_model(&net, &a).unwrap();
        save_model(&net, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.scad");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(load_model(&path).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let net = sample_net(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.scad");
        save_model(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, bytes).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = sample_net(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.scad");
        save_model(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }
}

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::DenoiserConfig;
use super::train::ToyModel;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor_io::{read_tensor, write_tensor, TensorFile};

const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "toynet-params-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    denoiser: DenoiserConfig,
    aggregator_dim: usize,
    aggregator_hidden: usize,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

fn entries(model: &ToyModel<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    let mut layers = model.denoiser.layers();
    layers.extend(model.aggregator.layers());
    for (name, l) in layers {
        out.push((format!("{name}.weight"), vec![l.out_dim, l.in_dim], l.weight.clone()));
        if !l.bias.is_empty() {
            out.push((format!("{name}.bias"), vec![l.out_dim], l.bias.clone()));
        }
    }
    out
}

/// Write one CGF1 tensor per weight and bias plus a JSON manifest naming them.
pub fn save_model(dir: &Path, model: &ToyModel<f32>, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut tensors = Vec::new();
    for (name, dims, data) in entries(model) {
        let file = format!("{name}.cgf");
        write_tensor(dir.join(&file), &TensorFile::new(dims.clone(), data)?)?;
        tensors.push(TensorEntry { name, file, dims });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        denoiser: model.denoiser.config,
        aggregator_dim: model.aggregator.dim,
        aggregator_hidden: model.aggregator.hidden,
        seed,
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

/// Load parameters written by [`save_model`]; returns the model and its training seed.
pub fn load_model(dir: &Path) -> Result<(ToyModel<f32>, u64)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unknown parameter format `{}`", m.format)));
    }
    if m.aggregator_dim != m.denoiser.cond_channels {
        return Err(Error::Shape(format!(
            "aggregator width {} does not match denoiser condition channels {}",
            m.aggregator_dim, m.denoiser.cond_channels
        )));
    }
    // every parameter is overwritten below
    let mut model = ToyModel::init(m.denoiser, m.aggregator_hidden, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected = entries(&model);
    if expected.len() != m.tensors.len() {
        return Err(Error::Format(format!("manifest lists {} tensors, expected {}", m.tensors.len(), expected.len())));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((name, dims, _), entry) in expected.iter().zip(&m.tensors) {
        if *name != entry.name {
            return Err(Error::Format(format!("expected tensor `{name}`, manifest has `{}`", entry.name)));
        }
        if Path::new(&entry.file).components().count() != 1 {
            return Err(Error::Format(format!("tensor file `{}` must sit in the parameter directory", entry.file)));
        }
        let t = read_tensor(dir.join(&entry.file))?;
        if t.dims() != dims.as_slice() {
            return Err(Error::Shape(format!("tensor `{name}` has dims {:?}, expected {dims:?}", t.dims())));
        }
        loaded.push(t.into_parts().1);
    }
    let mut it = loaded.into_iter();
    let mut layers = model.denoiser.layers_mut();
    layers.extend(model.aggregator.layers_mut());
    for (_, l) in layers {
        l.weight = it.next().expect("counted above");
        if !l.bias.is_empty() {
            l.bias = it.next().expect("counted above");
        }
    }
    Ok((model, m.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyModel<f32> {
        let cfg = DenoiserConfig { hidden: 8, blocks: 2, ..Default::default() };
        let m = super::super::train::random_point(cfg, 6, 3).unwrap();
        m.cast()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_model(dir.path(), &m, 42).unwrap();
        let (back, seed) = load_model(dir.path()).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(back, m);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model(), 0).unwrap();
        write_tensor(dir.path().join("output.weight.cgf"), &TensorFile::zeros(vec![2, 2]).unwrap()).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Io { .. })));
    }
}

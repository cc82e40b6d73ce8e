//! Model files: an archive (see [`crate::container`]) whose JSON header
//! carries the architecture spec and seed of each stored network, followed
//! by one tensor per parameter named `<model>/<index>`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::network::Network;
use super::zoo::{build_classifier, build_decoder, ClassifierSpec, DecoderSpec};
use crate::container::{load_archive, save_archive, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_KIND: &str = "vcbench-models";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture description stored next to a network's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum ModelSpec {
    Classifier { spec: ClassifierSpec, seed: u64 },
    Decoder { spec: DecoderSpec, seed: u64 },
}

impl ModelSpec {
    pub fn build<T: Real>(&self) -> Result<Network<T>> {
        match self {
            ModelSpec::Classifier { spec, seed } => build_classifier(spec, *seed),
            ModelSpec::Decoder { spec, seed } => build_decoder(spec, *seed),
        }
    }
}

fn to_tensor<T: Real>(a: &Array2<T>) -> Tensor {
    let shape = a.shape().to_vec();
    let vals = a.iter().map(|v| v.as_f64());
    match T::DTYPE {
        crate::container::DType::F64 => Tensor::f64(shape, vals.collect()),
        _ => Tensor::f32(shape, vals.map(|v| v as f32).collect()),
    }
}

fn from_tensor<T: Real>(t: &Tensor) -> Result<Array2<T>> {
    if t.shape.len() != 2 {
        return Err(Error::Format(format!("parameter tensor of rank {}", t.shape.len())));
    }
    let vals: Vec<T> = match &t.data {
        TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
        TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        TensorData::U8(_) => return Err(Error::Format("u8 parameter tensor".into())),
    };
    Array2::from_shape_vec((t.shape[0], t.shape[1]), vals).map_err(|e| Error::Format(e.to_string()))
}

/// Writes named networks with their specs. `extra` is merged into the
/// header (epoch, metrics and the like).
pub fn save_models<T: Real>(
    path: &Path,
    models: &[(&str, &ModelSpec, &Network<T>)],
    extra: Value,
) -> Result<()> {
    let mut specs = serde_json::Map::new();
    let mut tensors = Vec::new();
    for (name, spec, net) in models {
        specs.insert(name.to_string(), serde_json::to_value(spec)?);
        for (i, p) in net.params().iter().enumerate() {
            tensors.push((format!("{name}/{i}"), to_tensor(&p.value)));
        }
    }
    let header = json!({
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "models": specs,
        "extra": extra,
    });
    save_archive(path, header, &tensors)
}

/// A network restored from a model file.
pub struct LoadedModel<T> {
    pub name: String,
    pub spec: ModelSpec,
    pub network: Network<T>,
}

/// Reads every network in a model file, rebuilding each from its spec and
/// then overwriting the parameters. Returns the models and the `extra`
/// header value.
pub fn load_models<T: Real>(path: &Path) -> Result<(Vec<LoadedModel<T>>, Value)> {
    let (header, tensors) = load_archive(path)?;
    if header.get("kind").and_then(Value::as_str) != Some(CHECKPOINT_KIND) {
        return Err(Error::Format(format!("{} is not a model file", path.display())));
    }
    if header.get("version").and_then(Value::as_u64) != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Format(format!("unsupported model file version in {}", path.display())));
    }
    let specs = header
        .get("models")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Format("model file lacks `models`".into()))?;
    let mut out = Vec::new();
    for (name, spec) in specs {
        let spec: ModelSpec = serde_json::from_value(spec.clone())?;
        let mut network = spec.build::<T>()?;
        let prefix = format!("{name}/");
        let values = tensors
            .iter()
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(_, t)| from_tensor::<T>(t))
            .collect::<Result<Vec<_>>>()?;
        network
            .load_flat_params(&values)
            .map_err(|e| Error::Format(format!("model `{name}`: {e}")))?;
        out.push(LoadedModel { name: name.clone(), spec, network });
    }
    let extra = header.get("extra").cloned().unwrap_or(Value::Null);
    Ok((out, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::ImageShape;
    use crate::nets::zoo::Family;

    #[test]
    fn round_trip_preserves_outputs() {
        let shape = ImageShape { height: 8, width: 8, channels: 1 };
        let cspec = ClassifierSpec::new(Family::Smallcnn, 1, 3, shape);
        let f = build_classifier::<f32>(&cspec, 4).unwrap();
        let g = build_decoder::<f32>(&cspec.mirror(), 5).unwrap();
        let fs = ModelSpec::Classifier { spec: cspec.clone(), seed: 4 };
        let gs = ModelSpec::Decoder { spec: cspec.mirror(), seed: 5 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vckp");
        save_models(&path, &[("f", &fs, &f), ("g", &gs, &g)], json!({"epoch": 3})).unwrap();
        let (models, extra) = load_models::<f32>(&path).unwrap();
        assert_eq!(extra["epoch"], 3);
        assert_eq!(models.len(), 2);
        let back = models.iter().find(|m| m.name == "f").unwrap();
        assert_eq!(back.spec, fs);
        assert_eq!(back.network.fingerprint(), f.fingerprint());
    }
}

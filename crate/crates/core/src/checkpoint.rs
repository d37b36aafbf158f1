//! Self-describing JSON checkpoint: dims, scaler, and every layer as a named flat array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluvae::{CluvaeDims, CluvaeModel, Variant};
use crate::error::{Error, Result};
use crate::neural::{Activation, DenseLayer};
use crate::pipeline::{TrainedModel, TrainingMeta};
use crate::vgae::{FeatureScaler, VgaeModel};

pub const CHECKPOINT_FORMAT: &str = "landgen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDims {
    pub n: usize,
    pub m: usize,
    pub z: usize,
    /// Per-node context embedding width.
    pub d: usize,
    pub latent: usize,
    pub hidden: usize,
    /// Months of price history.
    pub t: usize,
    pub vgae_hidden: usize,
    pub feature_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub dims: CheckpointDims,
    pub lambda: f64,
    pub scaler: FeatureScaler,
    pub vgae: Vec<WeightArray>,
    pub cvae: Vec<WeightArray>,
    pub training: TrainingMeta,
}

fn export<'a>(layers: impl IntoIterator<Item = (&'static str, &'a DenseLayer)>) -> Vec<WeightArray> {
    let mut out = Vec::new();
    for (name, layer) in layers {
        out.push(WeightArray {
            name: format!("{name}.weight"),
            shape: vec![layer.inputs(), layer.outputs()],
            values: layer.weight.iter().copied().collect(),
        });
        out.push(WeightArray {
            name: format!("{name}.bias"),
            shape: vec![layer.outputs()],
            values: layer.bias.to_vec(),
        });
    }
    out
}

/// Fills `layers` (already wired with the expected shapes) from `arrays`, in order.
fn import<'a>(
    what: &str,
    layers: impl IntoIterator<Item = (&'static str, &'a mut DenseLayer)>,
    arrays: &[WeightArray],
) -> Result<()> {
    let mut it = arrays.iter();
    let mut next = |name: String, shape: Vec<usize>| -> Result<&WeightArray> {
        let arr = it
            .next()
            .ok_or_else(|| Error::param(format!("{what} checkpoint is missing '{name}'")))?;
        if arr.name != name {
            return Err(Error::param(format!("{what} checkpoint has '{}' where '{name}' belongs", arr.name)));
        }
        if arr.shape != shape {
            return Err(Error::param(format!("'{name}' has shape {:?}, expected {:?}", arr.shape, shape)));
        }
        let len: usize = shape.iter().product();
        if arr.values.len() != len {
            return Err(Error::shape(format!("values of '{name}'"), len, arr.values.len()));
        }
        if arr.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(format!("'{name}' contains non-finite values")));
        }
        Ok(arr)
    };
    let mut count = 0;
    for (name, layer) in layers {
        let w = next(format!("{name}.weight"), vec![layer.inputs(), layer.outputs()])?;
        layer.weight.iter_mut().zip(&w.values).for_each(|(d, s)| *d = *s);
        let b = next(format!("{name}.bias"), vec![layer.outputs()])?;
        layer.bias.iter_mut().zip(&b.values).for_each(|(d, s)| *d = *s);
        count += 2;
    }
    if arrays.len() != count {
        return Err(Error::param(format!("{what} checkpoint has {} arrays, expected {count}", arrays.len())));
    }
    Ok(())
}

impl ModelCheckpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        let dims = model.dims();
        let feature_width = model.context_width();
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            variant: model.variant(),
            dims: CheckpointDims {
                n: dims.n,
                m: dims.m,
                z: dims.z,
                d: model.vgae.latent(),
                latent: dims.latent,
                hidden: dims.hidden,
                t: feature_width.saturating_sub(dims.m + 9),
                vgae_hidden: model.vgae.gcn.outputs(),
                feature_width,
            },
            lambda: model.cvae.lambda,
            scaler: model.scaler.clone(),
            vgae: export(model.vgae.layers()),
            cvae: export(model.cvae.layers()),
            training: model.meta.clone(),
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::param(format!("not a checkpoint (format '{}')", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                found: self.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let d = &self.dims;
        if self.scaler.mean.len() != d.feature_width || self.scaler.std.len() != d.feature_width {
            return Err(Error::shape("scaler width", d.feature_width, self.scaler.mean.len()));
        }
        let mut vgae = VgaeModel::from_layers(
            DenseLayer::zeros(d.feature_width, d.vgae_hidden, Activation::Relu),
            DenseLayer::zeros(d.vgae_hidden, d.d, Activation::Identity),
            DenseLayer::zeros(d.vgae_hidden, d.d, Activation::Identity),
        )?;
        import("vgae", vgae.layers_mut(), &self.vgae)?;

        let dims = CluvaeDims {
            n: d.n,
            m: d.m,
            z: d.z,
            condition: crate::context::CONTEXT_COUNT * d.d + crate::grid::LEVEL_COUNT,
            latent: d.latent,
            hidden: d.hidden,
        };
        let mut cvae = CluvaeModel::new(self.variant, dims, self.lambda, &mut crate::neural::Rng::new(0))?.zeroed();
        import("cvae", cvae.layers_mut(), &self.cvae)?;
        Ok(TrainedModel {
            scaler: self.scaler,
            vgae,
            cvae,
            meta: self.training,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if let Some(found) = version.filter(|&v| v != CHECKPOINT_VERSION as u64) {
            return Err(Error::Version {
                what: "checkpoint",
                found: found as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = ModelCheckpoint::from_model(model).to_json()?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_json(&text)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{synthesize_city, SynthesisParams};
    use crate::pipeline::{train_pipeline, PipelineConfig};

    fn trained(variant: Variant) -> TrainedModel {
        let data = synthesize_city(&SynthesisParams::new(3, 4, 2, 20, 4, 1)).unwrap();
        let mut config = PipelineConfig::new(variant, 5);
        config.latent = 3;
        config.hidden = 8;
        config.train.epochs = 2;
        config.vgae.epochs = 2;
        train_pipeline(&data, &config).unwrap().model
    }

    #[test]
    fn round_trip_is_byte_identical_for_every_variant() {
        for variant in Variant::ALL {
            let model = trained(variant);
            let json = ModelCheckpoint::from_model(&model).to_json().unwrap();
            let back = ModelCheckpoint::from_json(&json).unwrap().into_model().unwrap();
            assert_eq!(back, model);
            assert_eq!(ModelCheckpoint::from_model(&back).to_json().unwrap(), json);
        }
    }

    #[test]
    fn file_round_trip_and_dims() {
        let model = trained(Variant::Full);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
        let ck = ModelCheckpoint::from_model(&model);
        assert_eq!((ck.dims.t, ck.dims.d, ck.dims.feature_width), (4, 8, 17));
        for arr in ck.vgae.iter().chain(&ck.cvae) {
            assert_eq!(arr.values.len(), arr.shape.iter().product::<usize>());
        }
    }

    #[test]
    fn rejects_version_and_corruption() {
        let model = trained(Variant::Full);
        let mut ck = ModelCheckpoint::from_model(&model);
        ck.version = 9;
        let err = ModelCheckpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert_eq!(err.kind(), "version");

        let mut ck = ModelCheckpoint::from_model(&model);
        ck.cvae[2].values.pop();
        assert!(ck.into_model().is_err());
        let mut ck = ModelCheckpoint::from_model(&model);
        ck.cvae.swap(0, 2);
        assert!(ck.into_model().is_err());
        assert!(load_checkpoint("/nonexistent/ck.json").is_err());
    }
}

//! End-to-end training: split, feature scaling, context embedding, CVAE.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluvae::{
    make_condition, train_cluvae, Batch, CluvaeDims, CluvaeModel, ConditionEmbedding, LossBreakdown, TrainConfig,
    TrainOutcome, Variant,
};
use crate::context::{ContextGraph, CONTEXT_COUNT};
use crate::error::{Error, Result};
use crate::grid::{DatasetSample, GreenLevel, LandUseConfiguration};
use crate::neural::Rng;
use crate::vgae::{train_vgae, ContextEmbedding, FeatureScaler, VgaeConfig, VgaeModel};

pub const MIN_DATASET: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub latent: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub vgae: VgaeConfig,
    /// Drives initialisation, minibatch order and reparameterisation noise.
    pub seed: u64,
    /// Drives the one shuffle behind the train/test split.
    pub split_seed: u64,
}

impl PipelineConfig {
    pub fn new(variant: Variant, seed: u64) -> Self {
        PipelineConfig {
            variant,
            lambda: 0.55,
            latent: 32,
            hidden: 256,
            train: TrainConfig::default(),
            vgae: VgaeConfig::default(),
            seed,
            split_seed: seed,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::new(Variant::Full, 42)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles indices once, then takes the first 90% for training.
pub fn split_dataset(len: usize, seed: u64) -> Result<DataSplit> {
    if len < MIN_DATASET {
        return Err(Error::param(format!("dataset has {len} samples, need at least {MIN_DATASET}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = len * 9 / 10;
    Ok(DataSplit {
        train: order[..cut].to_vec(),
        test: order[cut..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub split_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    /// Held-out sample ids in split order.
    pub test_ids: Vec<u64>,
}

/// Everything needed to turn a context graph and a green level into configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub scaler: FeatureScaler,
    pub vgae: VgaeModel,
    pub cvae: CluvaeModel,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn variant(&self) -> Variant {
        self.cvae.variant
    }

    pub fn dims(&self) -> CluvaeDims {
        self.cvae.dims
    }

    pub fn context_width(&self) -> usize {
        self.vgae.feature_width()
    }

    pub fn embed(&self, context: &ContextGraph) -> Result<ContextEmbedding> {
        let scaled = self.scaler.transform(context)?;
        self.vgae.embed_context(scaled.view())
    }

    pub fn condition(&self, context: &ContextGraph, level: GreenLevel) -> Result<ConditionEmbedding> {
        Ok(make_condition(&self.embed(context)?, level, self.variant()))
    }

    pub fn generate(
        &self,
        context: &ContextGraph,
        level: GreenLevel,
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<LandUseConfiguration>> {
        let c = self.condition(context, level)?;
        self.cvae.generate(&c, count, rng)
    }

    /// The held-out samples of `samples`, in split order.
    pub fn test_samples<'a>(&self, samples: &'a [DatasetSample]) -> Result<Vec<&'a DatasetSample>> {
        self.meta
            .test_ids
            .iter()
            .map(|id| {
                samples
                    .iter()
                    .find(|s| s.sample_id == *id)
                    .ok_or_else(|| Error::NotFound(format!("test sample {id} is missing from the dataset")))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: TrainedModel,
    pub outcome: TrainOutcome,
    pub vgae_loss: Vec<f64>,
    pub split: DataSplit,
}

fn check_uniform(samples: &[DatasetSample]) -> Result<(usize, usize, usize, usize)> {
    let first = &samples[0];
    let key = |s: &DatasetSample| {
        (
            s.configuration.n(),
            s.configuration.m(),
            s.zones.z_count(),
            s.context.feature_width(),
        )
    };
    let expected = key(first);
    if let Some(bad) = samples.iter().find(|s| key(s) != expected) {
        return Err(Error::param(format!(
            "sample {} has shape {:?}, expected {:?} (n, m, z, feature width)",
            bad.sample_id,
            key(bad),
            expected
        )));
    }
    Ok(expected)
}

/// Stacks configurations, conditions and zone labels of `samples` into one batch.
pub fn build_batch(samples: &[&DatasetSample], conditions: &[ConditionEmbedding]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::param("no samples to batch"))?;
    let x_width = first.configuration.as_flat().len();
    let c_width = conditions[0].0.len();
    let mut x = Array2::zeros((samples.len(), x_width));
    let mut c = Array2::zeros((samples.len(), c_width));
    let mut zones = Vec::with_capacity(samples.len() * first.zones.labels().len());
    for (row, (s, cond)) in samples.iter().zip(conditions).enumerate() {
        x.row_mut(row).assign(&ndarray::ArrayView1::from(s.configuration.as_flat()));
        c.row_mut(row).assign(&ndarray::ArrayView1::from(&cond.0[..]));
        zones.extend_from_slice(s.zones.labels());
    }
    Ok(Batch { x, c, zones })
}

/// Splits, fits the scaler and VGAE on the training part, then trains the CVAE.
pub fn train_pipeline(samples: &[DatasetSample], config: &PipelineConfig) -> Result<PipelineRun> {
    let split = split_dataset(samples.len(), config.split_seed)?;
    let (n, m, z, _) = check_uniform(samples)?;
    let train: Vec<&DatasetSample> = split.train.iter().map(|&i| &samples[i]).collect();

    let mut master = Rng::new(config.seed);
    let scaler = FeatureScaler::fit(train.iter().map(|s| &s.context))?;
    let graphs = train
        .iter()
        .map(|s| scaler.transform(&s.context))
        .collect::<Result<Vec<_>>>()?;
    let vgae_run = train_vgae(&graphs, &config.vgae, &mut master.fork(1))?;
    let vgae = vgae_run.model;

    let conditions = train
        .iter()
        .zip(&graphs)
        .map(|(s, g)| Ok(make_condition(&vgae.embed_context(g.view())?, s.green_level, config.variant)))
        .collect::<Result<Vec<_>>>()?;
    let dims = CluvaeDims {
        n,
        m,
        z,
        condition: CONTEXT_COUNT * vgae.latent() + crate::grid::LEVEL_COUNT,
        latent: config.latent,
        hidden: config.hidden,
    };
    let mut cvae = CluvaeModel::new(config.variant, dims, config.lambda, &mut master.fork(2))?;
    let batch = build_batch(&train, &conditions)?;
    let outcome = train_cluvae(&mut cvae, &batch, &config.train, &mut master.fork(3))?;

    let meta = TrainingMeta {
        seed: config.seed,
        split_seed: config.split_seed,
        epochs: config.train.epochs,
        learning_rate: config.train.learning_rate,
        batch_size: config.train.batch_size,
        initial_loss: outcome.initial,
        final_loss: outcome.final_loss,
        test_ids: split.test.iter().map(|&i| samples[i].sample_id).collect(),
    };
    Ok(PipelineRun {
        model: TrainedModel {
            scaler,
            vgae,
            cvae,
            meta,
        },
        outcome,
        vgae_loss: vgae_run.loss_curve,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{synthesize_city, SynthesisParams};

    pub(crate) fn tiny_config(variant: Variant, seed: u64) -> PipelineConfig {
        let mut config = PipelineConfig::new(variant, seed);
        config.latent = 4;
        config.hidden = 16;
        config.train.epochs = 3;
        config.vgae.epochs = 3;
        config
    }

    #[test]
    fn split_is_ninety_ten_and_disjoint() {
        let split = split_dataset(25, 3).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (22, 3));
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        assert_eq!(split, split_dataset(25, 3).unwrap());
        assert_ne!(split, split_dataset(25, 4).unwrap());
        assert!(split_dataset(9, 0).is_err());
    }

    #[test]
    fn pipeline_is_deterministic_and_records_test_ids() {
        let data = synthesize_city(&SynthesisParams::new(3, 4, 2, 20, 4, 1)).unwrap();
        let a = train_pipeline(&data, &tiny_config(Variant::Full, 7)).unwrap();
        let b = train_pipeline(&data, &tiny_config(Variant::Full, 7)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.meta.test_ids.len(), 2);
        assert_eq!(a.model.dims().condition, 8 * 8 + 5);
        let test = a.model.test_samples(&data).unwrap();
        assert_eq!(test[0].sample_id, a.model.meta.test_ids[0]);
        let gens = a.model.generate(&test[0].context, test[0].green_level, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(gens.len(), 3);
        assert_eq!((gens[0].n(), gens[0].m()), (3, 4));
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let mut data = synthesize_city(&SynthesisParams::new(3, 4, 2, 12, 4, 1)).unwrap();
        data.extend(synthesize_city(&SynthesisParams::new(4, 4, 2, 1, 4, 1)).unwrap());
        assert!(train_pipeline(&data, &tiny_config(Variant::Full, 1)).is_err());
    }
}

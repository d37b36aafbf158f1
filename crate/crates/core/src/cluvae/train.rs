use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Batch, CluvaeModel, LossBreakdown};
use crate::error::{Error, Result};
use crate::neural::{layer_blocks, AdamConfig, AdamState, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: 32,
        }
    }
}

/// Mean minibatch loss over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Loss on the whole training set before the first update.
    pub initial: LossBreakdown,
    /// Same evaluation, same noise, after the last update.
    pub final_loss: LossBreakdown,
    pub history: Vec<EpochLoss>,
}

pub(crate) fn select_rows(data: &Batch, rows: &[usize]) -> Batch {
    let cells = data.zones.len() / data.len().max(1);
    Batch {
        x: data.x.select(Axis(0), rows),
        c: data.c.select(Axis(0), rows),
        zones: rows
            .iter()
            .flat_map(|&r| data.zones[r * cells..(r + 1) * cells].iter().copied())
            .collect(),
    }
}

fn evaluate(model: &CluvaeModel, data: &Batch, eps: &Array2<f64>) -> Result<LossBreakdown> {
    Ok(model.loss_and_grads(data, eps, false)?.0)
}

/// Minibatch Adam on `data`, reshuffled every epoch. Stops with
/// `TrainingAbort` as soon as a loss or gradient stops being finite.
pub fn train_cluvae(model: &mut CluvaeModel, data: &Batch, config: &TrainConfig, rng: &mut Rng) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::param(format!("learning rate {} must be positive", config.learning_rate)));
    }
    let eval_eps = model.sample_noise(data.len(), &mut rng.fork(0xe7a1));
    let initial = evaluate(model, data, &eval_eps)?;
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut sum = [0.0; 4];
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = select_rows(data, chunk);
            let eps = model.sample_noise(chunk.len(), rng);
            let (loss, grads) = model.loss_and_grads(&batch, &eps, true)?;
            if !loss.is_finite() {
                return Err(Error::TrainingAbort(format!("non-finite loss at epoch {epoch}")));
            }
            let grads = grads.expect("requested gradients");
            adam.step(layer_blocks(model.layers_mut(), &grads.layers))?;
            for (acc, v) in sum.iter_mut().zip([loss.l_x, loss.l_p, loss.l_f, loss.total]) {
                *acc += v;
            }
            batches += 1;
        }
        let k = batches as f64;
        history.push(EpochLoss {
            epoch,
            loss: LossBreakdown {
                l_x: sum[0] / k,
                l_p: sum[1] / k,
                l_f: sum[2] / k,
                total: sum[3] / k,
            },
        });
    }

    let final_loss = evaluate(model, data, &eval_eps)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingAbort("non-finite loss after training".into()));
    }
    Ok(TrainOutcome {
        initial,
        final_loss,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluvae::{CluvaeDims, Variant};

    fn data(rng: &mut Rng, dims: CluvaeDims, b: usize) -> Batch {
        // Two conditions, each tied to its own configuration pattern.
        let mut x = Array2::zeros((b, dims.x_width()));
        let mut c = Array2::zeros((b, dims.condition));
        let mut zones = Vec::new();
        for r in 0..b {
            let k = r % 2;
            c[[r, k]] = 1.0;
            for i in 0..dims.x_width() {
                x[[r, i]] = if i % 2 == k { 3.0 } else { 0.0 } + rng.poisson(0.3) as f64;
            }
            zones.extend(std::iter::repeat_n(k, dims.cells()));
        }
        Batch { x, c, zones }
    }

    fn setup(seed: u64) -> (CluvaeModel, Batch) {
        let mut rng = Rng::new(seed);
        let dims = CluvaeDims { n: 3, m: 2, z: 2, condition: 3, latent: 2, hidden: 16 };
        let model = CluvaeModel::new(Variant::Full, dims, 0.55, &mut rng).unwrap();
        (model, data(&mut rng, dims, 40))
    }

    #[test]
    fn training_reduces_loss() {
        let (mut model, data) = setup(1);
        let config = TrainConfig { epochs: 150, learning_rate: 1e-2, batch_size: 8 };
        let out = train_cluvae(&mut model, &data, &config, &mut Rng::new(2)).unwrap();
        assert_eq!(out.history.len(), 150);
        assert!(out.final_loss.total < 0.5 * out.initial.total, "{:?}", out);
    }

    #[test]
    fn training_is_deterministic() {
        let config = TrainConfig { epochs: 3, learning_rate: 1e-3, batch_size: 7 };
        let run = || {
            let (mut model, data) = setup(3);
            let out = train_cluvae(&mut model, &data, &config, &mut Rng::new(4)).unwrap();
            (model, out)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        let (mut model, data) = setup(5);
        let before = model.clone();
        let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train_cluvae(&mut model, &data, &config, &mut Rng::new(6)).unwrap();
        assert_eq!(model, before);
        assert_eq!(out.initial, out.final_loss);
    }

    #[test]
    fn divergence_aborts() {
        let (mut model, mut data) = setup(7);
        data.x[[0, 0]] = f64::INFINITY;
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let err = train_cluvae(&mut model, &data, &config, &mut Rng::new(8));
        assert!(matches!(err, Err(Error::TrainingAbort(_))), "{err:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let (mut model, data) = setup(9);
        let config = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train_cluvae(&mut model, &data, &config, &mut Rng::new(1)).is_err());
        let empty = select_rows(&data, &[]);
        assert!(train_cluvae(&mut model, &empty, &TrainConfig::default(), &mut Rng::new(1)).is_err());
    }
}

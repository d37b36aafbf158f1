//! Variational graph autoencoder over the 8-vertex context ring.
//!
//! Encoder: `H1 = relu(Â X W1 + b1)`, `μ = Â H1 Wμ + bμ`, `logσ² = Â H1 Wσ + bσ`
//! with `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`. Decoder: `sigmoid(z_i · z_j)` against
//! `A + I`. The graph embedding is the node means concatenated in compass order.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::context::{ContextGraph, CONTEXT_COUNT};
use crate::error::{Error, Result};
use crate::neural::{
    layer_blocks, log_sigmoid, sigmoid, Activation, AdamConfig, AdamState, DenseGrads, DenseLayer, Rng,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        VgaeConfig {
            hidden: 32,
            latent: 8,
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 32,
        }
    }
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` for the ring; every vertex has degree 3 with its self loop.
pub fn normalized_adjacency() -> Array2<f64> {
    let mut a = ContextGraph::adjacency();
    for i in 0..CONTEXT_COUNT {
        a[[i, i]] += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] * inv_sqrt_deg[i] * inv_sqrt_deg[j])
}

/// Applies `Â` to each consecutive block of 8 rows (one block per graph).
fn aggregate(adj: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for (mut dst, src) in out
        .axis_chunks_iter_mut(Axis(0), CONTEXT_COUNT)
        .zip(x.axis_chunks_iter(Axis(0), CONTEXT_COUNT))
    {
        dst.assign(&adj.dot(&src));
    }
    out
}

/// Per-feature standardisation fitted over every vertex of the training graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a ContextGraph>) -> Result<Self> {
        let mut rows = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for g in graphs {
            let f = g.features();
            if sum.is_empty() {
                sum = vec![0.0; f.ncols()];
                sum_sq = vec![0.0; f.ncols()];
            } else if f.ncols() != sum.len() {
                return Err(Error::shape("context feature width", sum.len(), f.ncols()));
            }
            for row in f.rows() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
            }
            rows += f.nrows();
        }
        if rows == 0 {
            return Err(Error::param("cannot fit a scaler on zero graphs"));
        }
        let n = rows as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn transform(&self, graph: &ContextGraph) -> Result<Array2<f64>> {
        let f = graph.features();
        if f.ncols() != self.mean.len() {
            return Err(Error::shape("context feature width", self.mean.len(), f.ncols()));
        }
        let mut out = f.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgaeModel {
    pub gcn: DenseLayer,
    pub mu_layer: DenseLayer,
    pub logvar_layer: DenseLayer,
    adjacency: Array2<f64>,
}

/// Graph embedding: node latent means concatenated in compass order (width 8·d).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding(pub Vec<f64>);

struct VgaeForward {
    cache_gcn: crate::neural::DenseCache,
    cache_mu: crate::neural::DenseCache,
    cache_logvar: crate::neural::DenseCache,
    mu: Array2<f64>,
    logvar: Array2<f64>,
}

pub struct VgaeGrads {
    pub layers: Vec<DenseGrads>,
}

impl VgaeModel {
    pub fn new(features: usize, hidden: usize, latent: usize, rng: &mut Rng) -> Self {
        VgaeModel {
            gcn: DenseLayer::new(features, hidden, Activation::Relu, rng),
            mu_layer: DenseLayer::new(hidden, latent, Activation::Identity, rng),
            logvar_layer: DenseLayer::new(hidden, latent, Activation::Identity, rng),
            adjacency: normalized_adjacency(),
        }
    }

    pub fn from_layers(gcn: DenseLayer, mu_layer: DenseLayer, logvar_layer: DenseLayer) -> Result<Self> {
        if gcn.outputs() != mu_layer.inputs() || mu_layer.weight.dim() != logvar_layer.weight.dim() {
            return Err(Error::param("inconsistent VGAE layer shapes"));
        }
        Ok(VgaeModel {
            gcn,
            mu_layer,
            logvar_layer,
            adjacency: normalized_adjacency(),
        })
    }

    pub fn feature_width(&self) -> usize {
        self.gcn.inputs()
    }

    pub fn latent(&self) -> usize {
        self.mu_layer.outputs()
    }

    pub fn layers(&self) -> [(&'static str, &DenseLayer); 3] {
        [("vgae.gcn", &self.gcn), ("vgae.mu", &self.mu_layer), ("vgae.logvar", &self.logvar_layer)]
    }

    pub fn layers_mut(&mut self) -> Vec<(&'static str, &mut DenseLayer)> {
        vec![
            ("vgae.gcn", &mut self.gcn),
            ("vgae.mu", &mut self.mu_layer),
            ("vgae.logvar", &mut self.logvar_layer),
        ]
    }

    fn forward(&self, stacked: &Array2<f64>) -> Result<VgaeForward> {
        if stacked.ncols() != self.feature_width() {
            return Err(Error::shape("VGAE input features", self.feature_width(), stacked.ncols()));
        }
        let ax = aggregate(&self.adjacency, stacked);
        let (h1, cache_gcn) = self.gcn.forward(ax.view())?;
        let ah = aggregate(&self.adjacency, &h1);
        let (mu, cache_mu) = self.mu_layer.forward(ah.view())?;
        let (logvar, cache_logvar) = self.logvar_layer.forward(ah.view())?;
        Ok(VgaeForward { cache_gcn, cache_mu, cache_logvar, mu, logvar })
    }

    /// Node means and log-variances (8×d each) for one standardised feature matrix.
    pub fn gcn_forward(&self, features: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if features.nrows() != CONTEXT_COUNT {
            return Err(Error::shape("VGAE graph rows", CONTEXT_COUNT, features.nrows()));
        }
        let f = self.forward(&features.to_owned())?;
        Ok((f.mu, f.logvar))
    }

    pub fn embed_context(&self, features: ArrayView2<f64>) -> Result<ContextEmbedding> {
        let (mu, _) = self.gcn_forward(features)?;
        Ok(ContextEmbedding(mu.iter().copied().collect()))
    }

    /// Mean loss over a batch of graphs stacked 8 rows at a time, with fixed
    /// noise `eps` (same shape as the node latents), plus its gradients.
    pub fn loss_and_grads(&self, stacked: &Array2<f64>, eps: &Array2<f64>) -> Result<(f64, VgaeGrads)> {
        let graphs = stacked.nrows() / CONTEXT_COUNT;
        if graphs == 0 || !stacked.nrows().is_multiple_of(CONTEXT_COUNT) {
            return Err(Error::param("stacked features must hold a positive multiple of 8 rows"));
        }
        let fwd = self.forward(stacked)?;
        if eps.dim() != fwd.mu.dim() {
            return Err(Error::shape("VGAE noise rows", fwd.mu.nrows(), eps.nrows()));
        }
        let d = self.latent();
        let std = fwd.logvar.mapv(|v| (0.5 * v).exp());
        let z = &fwd.mu + &(&std * eps);
        let target = target_adjacency();
        let scale = 1.0 / graphs as f64;

        let mut loss = 0.0;
        let mut dz = Array2::zeros(z.dim());
        for g in 0..graphs {
            let rows = s![g * CONTEXT_COUNT..(g + 1) * CONTEXT_COUNT, ..];
            let zg = z.slice(rows);
            let logits = zg.dot(&zg.t());
            loss += scale * reconstruction_bce_from_logits(&logits, &target);
            let pairs = (CONTEXT_COUNT * CONTEXT_COUNT) as f64;
            let dlogits = Array2::from_shape_fn(logits.dim(), |(i, j)| {
                scale * (sigmoid(logits[[i, j]]) - target[[i, j]]) / pairs
            });
            let sym = &dlogits + &dlogits.t();
            dz.slice_mut(rows).assign(&sym.dot(&zg));
        }
        let node_scale = scale / CONTEXT_COUNT as f64;
        loss += scale * gaussian_kl_sum(&fwd.mu, &fwd.logvar) / CONTEXT_COUNT as f64;

        let dmu = &dz + &(&fwd.mu * node_scale);
        let mut dlogvar = &dz * eps * &std * 0.5;
        dlogvar.zip_mut_with(&fwd.logvar, |g, &lv| *g += node_scale * 0.5 * (lv.exp() - 1.0));
        debug_assert_eq!(dmu.ncols(), d);

        let g_mu = self.mu_layer.backward(&fwd.cache_mu, dmu.view())?;
        let g_lv = self.logvar_layer.backward(&fwd.cache_logvar, dlogvar.view())?;
        let d_ah = &g_mu.input + &g_lv.input;
        let d_h1 = aggregate(&self.adjacency, &d_ah);
        let g_gcn = self.gcn.backward_params(&fwd.cache_gcn, d_h1.view())?;
        Ok((loss, VgaeGrads { layers: vec![g_gcn, g_mu, g_lv] }))
    }

    /// One-graph loss with freshly drawn reparameterisation noise.
    pub fn vgae_loss(&self, features: ArrayView2<f64>, rng: &mut Rng) -> Result<f64> {
        let mut eps = Array2::zeros((CONTEXT_COUNT, self.latent()));
        rng.fill_normal(eps.as_slice_mut().expect("standard layout"));
        Ok(self.loss_and_grads(&features.to_owned(), &eps)?.0)
    }
}

/// Ring adjacency with self loops, the reconstruction target.
pub fn target_adjacency() -> Array2<f64> {
    ContextGraph::adjacency() + Array2::<f64>::eye(CONTEXT_COUNT)
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `target` over all entries.
pub fn reconstruction_bce_from_logits(logits: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(target.iter())
        .map(|(&s, &t)| -(t * log_sigmoid(s) + (1.0 - t) * log_sigmoid(-s)))
        .sum();
    total / logits.len() as f64
}

/// Σ over rows and dims of `½(μ² + e^{logσ²} − logσ² − 1)`.
pub fn gaussian_kl_sum(mu: &Array2<f64>, logvar: &Array2<f64>) -> f64 {
    mu.iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

#[derive(Debug, Clone)]
pub struct VgaeTraining {
    pub model: VgaeModel,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains one shared VGAE over all (already standardised) training graphs.
pub fn train_vgae(graphs: &[Array2<f64>], config: &VgaeConfig, rng: &mut Rng) -> Result<VgaeTraining> {
    let first = graphs.first().ok_or_else(|| Error::param("VGAE training set is empty"))?;
    let width = first.ncols();
    if graphs.iter().any(|g| g.dim() != (CONTEXT_COUNT, width)) {
        return Err(Error::param("all training graphs must be 8 x feature-width"));
    }
    if config.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let mut init_rng = rng.fork(1);
    let mut model = VgaeModel::new(width, config.hidden, config.latent, &mut init_rng);
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut stacked = Array2::zeros((batch.len() * CONTEXT_COUNT, width));
            for (b, &gi) in batch.iter().enumerate() {
                stacked
                    .slice_mut(s![b * CONTEXT_COUNT..(b + 1) * CONTEXT_COUNT, ..])
                    .assign(&graphs[gi]);
            }
            let mut eps = Array2::zeros((stacked.nrows(), config.latent));
            rng.fill_normal(eps.as_slice_mut().expect("standard layout"));
            let (loss, grads) = model.loss_and_grads(&stacked, &eps)?;
            if !loss.is_finite() {
                return Err(Error::TrainingAbort(format!("VGAE loss became non-finite in epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(layer_blocks(model.layers_mut(), &grads.layers))?;
        }
        loss_curve.push(epoch_loss / graphs.len() as f64);
    }
    Ok(VgaeTraining { model, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{finite_difference_check, flatten_grads, flatten_layers, unflatten_layers};

    fn random_graph(rng: &mut Rng, width: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((CONTEXT_COUNT, width), || rng.normal())
    }

    fn random_model(rng: &mut Rng, width: usize) -> VgaeModel {
        let mut m = VgaeModel::new(width, 6, 3, rng);
        for (_, layer) in m.layers_mut() {
            layer.bias.mapv_inplace(|_| 0.2 * rng.normal());
        }
        m
    }

    #[test]
    fn normalized_adjacency_entries_are_one_third() {
        let a = normalized_adjacency();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(a[[i, j]], a[[j, i]]);
                if a[[i, j]] != 0.0 {
                    assert!((a[[i, j]] - 1.0 / 3.0).abs() < 1e-15);
                }
            }
            assert_eq!(a.row(i).iter().filter(|&&v| v != 0.0).count(), 3);
        }
    }

    #[test]
    fn zero_features_give_identical_rows() {
        let mut rng = Rng::new(3);
        let model = random_model(&mut rng, 5);
        let (mu, logvar) = model.gcn_forward(Array2::zeros((8, 5)).view()).unwrap();
        for i in 1..8 {
            assert_eq!(mu.row(i), mu.row(0));
            assert_eq!(logvar.row(i), logvar.row(0));
        }
    }

    #[test]
    fn forward_matches_naive_neighbourhood_sums() {
        let mut rng = Rng::new(4);
        let model = random_model(&mut rng, 5);
        let x = random_graph(&mut rng, 5);
        let (mu, logvar) = model.gcn_forward(x.view()).unwrap();
        let neigh = |i: usize| [(i + 7) % 8, i, (i + 1) % 8];
        let dense = |layer: &DenseLayer, v: &[f64], relu: bool| -> Vec<f64> {
            (0..layer.outputs())
                .map(|o| {
                    let acc = layer.bias[o] + (0..layer.inputs()).map(|k| v[k] * layer.weight[[k, o]]).sum::<f64>();
                    if relu { acc.max(0.0) } else { acc }
                })
                .collect()
        };
        let h1: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let agg: Vec<f64> = (0..5).map(|k| neigh(i).iter().map(|&j| x[[j, k]]).sum::<f64>() / 3.0).collect();
                dense(&model.gcn, &agg, true)
            })
            .collect();
        for i in 0..8 {
            let agg: Vec<f64> = (0..6).map(|k| neigh(i).iter().map(|&j| h1[j][k]).sum::<f64>() / 3.0).collect();
            let m = dense(&model.mu_layer, &agg, false);
            let l = dense(&model.logvar_layer, &agg, false);
            for k in 0..3 {
                assert!((mu[[i, k]] - m[k]).abs() < 1e-12);
                assert!((logvar[[i, k]] - l[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_zero_at_standard_normal() {
        assert_eq!(gaussian_kl_sum(&Array2::zeros((8, 4)), &Array2::zeros((8, 4))), 0.0);
        assert!(gaussian_kl_sum(&Array2::from_elem((1, 1), 0.1), &Array2::zeros((1, 1))) > 0.0);
    }

    #[test]
    fn zero_latents_give_ln2_per_pair() {
        let bce = reconstruction_bce_from_logits(&Array2::zeros((8, 8)), &target_adjacency());
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_pairwise_recomputation() {
        let mut rng = Rng::new(6);
        let model = random_model(&mut rng, 4);
        let x = random_graph(&mut rng, 4);
        let eps = Array2::from_shape_simple_fn((8, 3), || rng.normal());
        let (loss, _) = model.loss_and_grads(&x, &eps).unwrap();
        let (mu, logvar) = model.gcn_forward(x.view()).unwrap();
        let z = Array2::from_shape_fn((8, 3), |(i, k)| mu[[i, k]] + (0.5 * logvar[[i, k]]).exp() * eps[[i, k]]);
        let mut bce = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..3).map(|k| z[[i, k]] * z[[j, k]]).sum();
                let p = 1.0 / (1.0 + (-dot).exp());
                let d = (i as i64 - j as i64).rem_euclid(8);
                let t = if d <= 1 || d == 7 { 1.0 } else { 0.0 };
                bce -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
        }
        let mut kl = 0.0;
        for i in 0..8 {
            for k in 0..3 {
                let (m, lv) = (mu[[i, k]], logvar[[i, k]]);
                kl += 0.5 * (m * m + lv.exp() - lv - 1.0);
            }
        }
        let expected = bce / 64.0 + kl / 8.0;
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        let model = random_model(&mut rng, 4);
        let graphs = Array2::from_shape_simple_fn((16, 4), || rng.normal());
        let eps = Array2::from_shape_simple_fn((16, 3), || rng.normal());
        let params = flatten_layers(model.layers().iter().map(|(_, l)| *l));
        let report = finite_difference_check(
            |p| {
                let mut m = model.clone();
                unflatten_layers(m.layers_mut().into_iter().map(|(_, l)| l), p);
                let (loss, g) = m.loss_and_grads(&graphs, &eps).unwrap();
                (loss, flatten_grads(&g.layers))
            },
            &params,
            1e-5,
            1e-6,
        );
        assert!(report.passed, "max rel err {}", report.max_relative_error);
    }

    #[test]
    fn embedding_width_and_determinism() {
        let mut rng = Rng::new(1);
        let model = VgaeModel::new(42, 32, 8, &mut rng);
        let x = random_graph(&mut rng, 42);
        let a = model.embed_context(x.view()).unwrap();
        assert_eq!(a.0.len(), 64);
        assert_eq!(a, model.embed_context(x.view()).unwrap());
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = Rng::new(12);
        let model = random_model(&mut rng, 5);
        let x = random_graph(&mut rng, 5);
        let mut rotated = x.clone();
        for i in 0..8 {
            rotated.row_mut((i + 1) % 8).assign(&x.row(i));
        }
        let a = model.embed_context(x.view()).unwrap().0;
        let b = model.embed_context(rotated.view()).unwrap().0;
        let d = 3;
        for i in 0..8 {
            for k in 0..d {
                assert!((b[((i + 1) % 8) * d + k] - a[i * d + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_weights_and_training_is_deterministic() {
        let mut rng = Rng::new(2);
        let graphs: Vec<Array2<f64>> = (0..3).map(|_| random_graph(&mut rng, 6)).collect();
        let cfg = VgaeConfig { epochs: 0, hidden: 4, latent: 2, ..Default::default() };
        let trained = train_vgae(&graphs[..1], &cfg, &mut Rng::new(5)).unwrap();
        let fresh = VgaeModel::new(6, 4, 2, &mut Rng::new(5).fork(1));
        assert_eq!(trained.model, fresh);

        let cfg = VgaeConfig { epochs: 5, hidden: 4, latent: 2, ..Default::default() };
        let a = train_vgae(&graphs, &cfg, &mut Rng::new(5)).unwrap();
        let b = train_vgae(&graphs, &cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn scaler_standardises_columns() {
        let mut rng = Rng::new(7);
        let graphs: Vec<ContextGraph> = (0..10)
            .map(|_| {
                let mut f = random_graph(&mut rng, 3);
                f.column_mut(0).mapv_inplace(|v| 1000.0 + 50.0 * v);
                f.column_mut(2).fill(4.0);
                ContextGraph::from_features(f).unwrap()
            })
            .collect();
        let scaler = FeatureScaler::fit(&graphs).unwrap();
        let all: Vec<Array2<f64>> = graphs.iter().map(|g| scaler.transform(g).unwrap()).collect();
        let col0: Vec<f64> = all.iter().flat_map(|a| a.column(0).to_vec()).collect();
        let mean = col0.iter().sum::<f64>() / col0.len() as f64;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col0.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        assert!(all.iter().all(|a| a.column(2).iter().all(|&v| v == 0.0)));
    }
}

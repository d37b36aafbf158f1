use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ConditionEmbedding, Variant};
use crate::error::{Error, Result};
use crate::grid::LandUseConfiguration;
use crate::neural::{log_sigmoid, sigmoid, Activation, DenseGrads, DenseLayer, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CluvaeDims {
    pub n: usize,
    pub m: usize,
    pub z: usize,
    /// Width of the condition vector (`8·d + 5`).
    pub condition: usize,
    pub latent: usize,
    pub hidden: usize,
}

impl CluvaeDims {
    pub fn x_width(&self) -> usize {
        self.n * self.n * self.m
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn zone_width(&self) -> usize {
        self.cells() * self.z
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_x: f64,
    pub l_p: f64,
    pub l_f: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_x: f64, l_p: f64, l_f: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_x,
            l_p,
            l_f,
            total: l_x + l_p + lambda * l_f,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_x.is_finite() && self.l_p.is_finite() && self.l_f.is_finite() && self.total.is_finite()
    }
}

/// A minibatch: flattened configurations, conditions, and per-cell zone labels
/// (`zones[b * cells + cell]`).
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub c: Array2<f64>,
    pub zones: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub x_recon: Array2<f64>,
    /// Per-cell, per-zone sigmoid outputs; `None` for the no-zone-head variant.
    pub zone_probs: Option<Array2<f64>>,
}

/// Gradients for every layer, in [`CluvaeModel::layers`] order.
pub struct CluvaeGrads {
    pub layers: Vec<DenseGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CluvaeModel {
    pub variant: Variant,
    pub dims: CluvaeDims,
    pub lambda: f64,
    pub encoder_hidden: DenseLayer,
    /// Emits `[μ | log σ²]`.
    pub encoder_head: DenseLayer,
    pub decoder_hidden: DenseLayer,
    pub decoder_output: DenseLayer,
    /// Zone branch. The output layer emits logits; the sigmoid is applied by `decode`.
    pub zone_head: Option<(DenseLayer, DenseLayer)>,
}

fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a, b]).expect("equal row counts")
}

impl CluvaeModel {
    pub fn new(variant: Variant, dims: CluvaeDims, lambda: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param(format!("lambda {lambda} outside [0, 1]")));
        }
        if [dims.n, dims.m, dims.z, dims.condition, dims.latent, dims.hidden].contains(&0) {
            return Err(Error::param("all model dimensions must be positive"));
        }
        let (l, c, h) = (dims.latent, dims.condition, dims.hidden);
        let encoder_hidden = DenseLayer::new(dims.x_width() + c, h, Activation::Relu, rng);
        let encoder_head = DenseLayer::new(h, 2 * l, Activation::Identity, rng);
        let decoder_hidden = DenseLayer::new(l + c, h, Activation::Relu, rng);
        let decoder_output = DenseLayer::new(h, dims.x_width(), Activation::Relu, rng);
        let zone_head = variant.has_zone_head().then(|| {
            (
                DenseLayer::new(l + c, h, Activation::Relu, rng),
                DenseLayer::new(h, dims.zone_width(), Activation::Identity, rng),
            )
        });
        Ok(CluvaeModel {
            variant,
            dims,
            lambda,
            encoder_hidden,
            encoder_head,
            decoder_hidden,
            decoder_output,
            zone_head,
        })
    }

    /// Same wiring with every weight and bias set to zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        for (_, layer) in m.layers_mut() {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        m
    }

    pub fn layers(&self) -> Vec<(&'static str, &DenseLayer)> {
        let mut out = vec![
            ("encoder.hidden", &self.encoder_hidden),
            ("encoder.head", &self.encoder_head),
            ("decoder.hidden", &self.decoder_hidden),
            ("decoder.output", &self.decoder_output),
        ];
        if let Some((hidden, output)) = &self.zone_head {
            out.push(("zone.hidden", hidden));
            out.push(("zone.output", output));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(&'static str, &mut DenseLayer)> {
        let mut out = vec![
            ("encoder.hidden", &mut self.encoder_hidden),
            ("encoder.head", &mut self.encoder_head),
            ("decoder.hidden", &mut self.decoder_hidden),
            ("decoder.output", &mut self.decoder_output),
        ];
        if let Some((hidden, output)) = &mut self.zone_head {
            out.push(("zone.hidden", hidden));
            out.push(("zone.output", output));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.parameter_count()).sum()
    }

    fn check_width(&self, what: &str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::shape(what.to_string(), expected, actual));
        }
        Ok(())
    }

    /// Posterior parameters `(μ, δ)` with `δ = exp(½ log σ²)`, one row per input.
    pub fn encode(&self, x: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_width("encoder configuration input", self.dims.x_width(), x.ncols())?;
        self.check_width("encoder condition input", self.dims.condition, c.ncols())?;
        let h = self.encoder_hidden.infer(hstack(x, c).view())?;
        let head = self.encoder_head.infer(h.view())?;
        let l = self.dims.latent;
        let mu = head.slice(s![.., ..l]).to_owned();
        let delta = head.slice(s![.., l..]).mapv(|lv| (0.5 * lv).exp());
        Ok((mu, delta))
    }

    /// `z = μ + δ ⊙ ε`, ε drawn from `rng`.
    pub fn reparameterize(mu: &Array2<f64>, delta: &Array2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let mut eps = Array2::zeros(mu.dim());
        rng.fill_normal(eps.as_slice_mut().expect("standard layout"));
        Self::reparameterize_with(mu, delta, &eps)
    }

    pub fn reparameterize_with(mu: &Array2<f64>, delta: &Array2<f64>, eps: &Array2<f64>) -> Result<Array2<f64>> {
        if mu.dim() != delta.dim() || mu.dim() != eps.dim() {
            return Err(Error::shape("reparameterization widths", mu.ncols(), delta.ncols().min(eps.ncols())));
        }
        Ok(mu + &(delta * eps))
    }

    pub fn decode(&self, z: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<DecodeOutput> {
        self.check_width("decoder latent input", self.dims.latent, z.ncols())?;
        self.check_width("decoder condition input", self.dims.condition, c.ncols())?;
        let input = hstack(z, c);
        let h = self.decoder_hidden.infer(input.view())?;
        let x_recon = self.decoder_output.infer(h.view())?;
        let zone_probs = match &self.zone_head {
            Some((hidden, output)) => {
                let hz = hidden.infer(input.view())?;
                Some(output.infer(hz.view())?.mapv(sigmoid))
            }
            None => None,
        };
        Ok(DecodeOutput { x_recon, zone_probs })
    }

    /// Decodes a prior sample `z ~ N(0, I)` for each of `count` copies of `c`.
    pub fn generate(&self, c: &ConditionEmbedding, count: usize, rng: &mut Rng) -> Result<Vec<LandUseConfiguration>> {
        let mut z = Array2::zeros((count, self.dims.latent));
        rng.fill_normal(z.as_slice_mut().expect("standard layout"));
        self.generate_from_latent(z.view(), c)
    }

    pub fn generate_from_latent(&self, z: ArrayView2<f64>, c: &ConditionEmbedding) -> Result<Vec<LandUseConfiguration>> {
        let cond = Array1::from(c.0.clone()).insert_axis(Axis(0));
        let cond = cond.broadcast((z.nrows(), c.0.len())).expect("row broadcast").to_owned();
        let out = self.decode(z, cond.view())?;
        out.x_recon
            .rows()
            .into_iter()
            .map(|row| LandUseConfiguration::from_flat(self.dims.n, self.dims.m, row.to_vec()))
            .collect()
    }

    /// Loss with noise drawn from `rng`.
    pub fn loss(&self, batch: &Batch, rng: &mut Rng) -> Result<LossBreakdown> {
        let eps = self.sample_noise(batch.len(), rng);
        Ok(self.loss_and_grads(batch, &eps, false)?.0)
    }

    pub fn sample_noise(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        let mut eps = Array2::zeros((rows, self.dims.latent));
        rng.fill_normal(eps.as_slice_mut().expect("standard layout"));
        eps
    }

    /// Loss for fixed reparameterisation noise and, when `want_grads`, the
    /// exact gradient of `total` with respect to every layer.
    ///
    /// `l_x = (1/B) Σ‖x − ẍ‖²`, `l_p = (1/B) Σ ½ Σ(μ² + δ² − log δ² − 1)`,
    /// `l_f = (1/(B·N²)) Σ_cells −log f̈[true zone]`.
    pub fn loss_and_grads(&self, batch: &Batch, eps: &Array2<f64>, want_grads: bool) -> Result<(LossBreakdown, Option<CluvaeGrads>)> {
        let bsz = batch.len();
        if bsz == 0 {
            return Err(Error::param("empty batch"));
        }
        let dims = self.dims;
        let l = dims.latent;
        self.check_width("batch configuration", dims.x_width(), batch.x.ncols())?;
        self.check_width("batch condition", dims.condition, batch.c.ncols())?;
        self.check_width("noise width", l, eps.ncols())?;
        self.check_width("noise rows", bsz, eps.nrows())?;
        if batch.zones.len() != bsz * dims.cells() {
            return Err(Error::shape("zone targets", bsz * dims.cells(), batch.zones.len()));
        }
        let inv_b = 1.0 / bsz as f64;

        let enc_in = hstack(batch.x.view(), batch.c.view());
        let (h_enc, cache_eh) = self.encoder_hidden.forward(enc_in.view())?;
        let (head, cache_head) = self.encoder_head.forward(h_enc.view())?;
        let mu = head.slice(s![.., ..l]).to_owned();
        let logvar = head.slice(s![.., l..]).to_owned();
        let (z, std) = if self.variant.is_variational() {
            let std = logvar.mapv(|v| (0.5 * v).exp());
            (&mu + &(&std * eps), Some(std))
        } else {
            (mu.clone(), None)
        };

        let dec_in = hstack(z.view(), batch.c.view());
        let (h_dec, cache_dh) = self.decoder_hidden.forward(dec_in.view())?;
        let (x_recon, cache_do) = self.decoder_output.forward(h_dec.view())?;
        let diff = &x_recon - &batch.x;
        let l_x = inv_b * diff.iter().map(|d| d * d).sum::<f64>();

        let l_p = if self.variant.is_variational() {
            inv_b
                * mu.iter()
                    .zip(logvar.iter())
                    .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
                    .sum::<f64>()
        } else {
            0.0
        };

        let zone_forward = match &self.zone_head {
            Some((hidden, output)) => {
                let (hz, cache_zh) = hidden.forward(dec_in.view())?;
                let (logits, cache_zo) = output.forward(hz.view())?;
                Some((logits, cache_zh, cache_zo))
            }
            None => None,
        };
        let cell_scale = inv_b / dims.cells() as f64;
        let l_f = match &zone_forward {
            Some((logits, _, _)) => {
                let mut acc = 0.0;
                for (idx, &zone) in batch.zones.iter().enumerate() {
                    let (b, cell) = (idx / dims.cells(), idx % dims.cells());
                    acc -= log_sigmoid(logits[[b, cell * dims.z + zone]]);
                }
                cell_scale * acc
            }
            None => 0.0,
        };
        let breakdown = LossBreakdown::new(l_x, l_p, l_f, self.lambda);
        if !want_grads {
            return Ok((breakdown, None));
        }

        let d_recon = diff * (2.0 * inv_b);
        let g_do = self.decoder_output.backward(&cache_do, d_recon.view())?;
        let g_dh = self.decoder_hidden.backward(&cache_dh, g_do.input.view())?;
        let mut d_dec_in = g_dh.input.clone();

        let mut zone_grads = None;
        if let (Some((logits, cache_zh, cache_zo)), Some((hidden, output))) = (&zone_forward, &self.zone_head) {
            let mut d_logits = Array2::zeros(logits.dim());
            for (idx, &zone) in batch.zones.iter().enumerate() {
                let (b, cell) = (idx / dims.cells(), idx % dims.cells());
                let col = cell * dims.z + zone;
                d_logits[[b, col]] = self.lambda * cell_scale * (sigmoid(logits[[b, col]]) - 1.0);
            }
            let g_zo = output.backward(cache_zo, d_logits.view())?;
            let g_zh = hidden.backward(cache_zh, g_zo.input.view())?;
            d_dec_in += &g_zh.input;
            zone_grads = Some((g_zh, g_zo));
        }

        let dz = d_dec_in.slice(s![.., ..l]).to_owned();
        let mut d_head = Array2::zeros(head.dim());
        match &std {
            Some(std) => {
                let d_mu = &dz + &(&mu * inv_b);
                let mut d_lv = &dz * eps * std * 0.5;
                d_lv.zip_mut_with(&logvar, |g, &lv| *g += inv_b * 0.5 * (lv.exp() - 1.0));
                d_head.slice_mut(s![.., ..l]).assign(&d_mu);
                d_head.slice_mut(s![.., l..]).assign(&d_lv);
            }
            None => d_head.slice_mut(s![.., ..l]).assign(&dz),
        }
        let g_head = self.encoder_head.backward(&cache_head, d_head.view())?;
        let g_eh = self.encoder_hidden.backward_params(&cache_eh, g_head.input.view())?;

        let mut layers = vec![g_eh, g_head, g_dh, g_do];
        if let Some((g_zh, g_zo)) = zone_grads {
            layers.push(g_zh);
            layers.push(g_zo);
        }
        Ok((breakdown, Some(CluvaeGrads { layers })))
    }
}

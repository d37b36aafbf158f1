use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{evaluate, Distances, MetricReport};
use crate::cluvae::{LossBreakdown, Variant};
use crate::error::{Error, Result};
use crate::grid::{synthesize_city, DatasetSample, SynthesisParams};
use crate::pipeline::{train_pipeline, PipelineConfig, TrainedModel};

/// Outcome of one train-then-evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub report: MetricReport,
}

/// Trains and evaluates variants on one dataset with a fixed split, caching
/// each `(variant, seed)` run so studies sharing runs pay for them once.
pub struct ExperimentRunner<'a> {
    samples: &'a [DatasetSample],
    base: PipelineConfig,
    gens_per_sample: usize,
    cache: BTreeMap<(usize, u64), RunRecord>,
    models: BTreeMap<(usize, u64), TrainedModel>,
}

/// Maps `f` over `items` on scoped worker threads; output order matches input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            return done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("study worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

fn variant_key(v: Variant) -> usize {
    Variant::ALL.iter().position(|&x| x == v).expect("listed variant")
}

impl<'a> ExperimentRunner<'a> {
    /// `base.split_seed` fixes the split for every run; `base.variant` and `base.seed` are overridden per run.
    pub fn new(samples: &'a [DatasetSample], base: PipelineConfig, gens_per_sample: usize) -> Self {
        ExperimentRunner {
            samples,
            base,
            gens_per_sample,
            cache: BTreeMap::new(),
            models: BTreeMap::new(),
        }
    }

    pub fn run(&mut self, variant: Variant, seed: u64) -> Result<&RunRecord> {
        self.prefetch(&[(variant, seed)])?;
        Ok(&self.cache[&(variant_key(variant), seed)])
    }

    /// Trains every missing `(variant, seed)` pair, spread over the available cores.
    pub fn prefetch(&mut self, runs: &[(Variant, u64)]) -> Result<()> {
        let mut todo: Vec<(Variant, u64)> = Vec::new();
        for &(variant, seed) in runs {
            if !self.cache.contains_key(&(variant_key(variant), seed)) && !todo.contains(&(variant, seed)) {
                todo.push((variant, seed));
            }
        }
        let (samples, base, gens) = (self.samples, self.base, self.gens_per_sample);
        let results = parallel_map(&todo, |&(variant, seed)| -> Result<(RunRecord, TrainedModel)> {
            let config = PipelineConfig { variant, seed, ..base };
            let run = train_pipeline(samples, &config)?;
            let test = run.model.test_samples(samples)?;
            let report = evaluate(&run.model, &test, gens, seed)?;
            let record = RunRecord {
                variant,
                seed,
                initial_loss: run.outcome.initial,
                final_loss: run.outcome.final_loss,
                report,
            };
            Ok((record, run.model))
        });
        for result in results {
            let (record, model) = result?;
            let key = (variant_key(record.variant), record.seed);
            self.cache.insert(key, record);
            self.models.insert(key, model);
        }
        Ok(())
    }

    /// Trained model of a completed run.
    pub fn model(&self, variant: Variant, seed: u64) -> Option<&TrainedModel> {
        self.models.get(&(variant_key(variant), seed))
    }

    pub fn runs_completed(&self) -> usize {
        self.cache.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean: Distances,
    pub runs: Vec<Distances>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>12} {:>12} {:>12} {:>12}\n", "variant", "AVG_KL", "AVG_JS", "AVG_HD", "AVG_Cos");
        for row in &self.rows {
            let m = row.mean;
            out.push_str(&format!(
                "{:<16} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                row.variant.name(),
                m.kl,
                m.js,
                m.hd,
                m.cos
            ));
        }
        out
    }
}

/// The full model and every ablation, each trained once per seed; means are over seeds.
pub fn ablation_study(runner: &mut ExperimentRunner<'_>, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::param("ablation needs at least one seed"));
    }
    let all: Vec<(Variant, u64)> = Variant::ALL.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    runner.prefetch(&all)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            runs.push(runner.run(variant, seed)?.report.averages());
        }
        rows.push(AblationRow {
            variant,
            mean: Distances::mean(&runs),
            runs,
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub variant: Variant,
    pub mean: Distances,
    /// Population variance over the runs.
    pub variance: Distances,
    pub runs: Vec<Distances>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    pub fn row(&self, variant: Variant) -> Option<&StabilityRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>24} {:>24} {:>24} {:>24}\n", "variant", "AVG_KL", "AVG_JS", "AVG_HD", "AVG_Cos");
        for row in &self.rows {
            out.push_str(&format!("{:<16}", row.variant.name()));
            for (m, v) in row.mean.to_array().iter().zip(row.variance.to_array()) {
                out.push_str(&format!(" {:>24}", format!("{m:.6}±{v:.2e}")));
            }
            out.push('\n');
        }
        out
    }
}

/// Seed of run `r` in a study rooted at `master_seed`.
pub fn derived_seed(master_seed: u64, run: usize) -> u64 {
    master_seed.wrapping_add(run as u64)
}

/// Retrains each variant `runs` times from distinct derived seeds and reports
/// the mean and variance of every averaged metric.
pub fn stability_study(
    runner: &mut ExperimentRunner<'_>,
    runs: usize,
    variants: &[Variant],
    master_seed: u64,
) -> Result<StabilityReport> {
    if runs == 0 {
        return Err(Error::param("stability study needs at least one run"));
    }
    let seeds: Vec<u64> = (0..runs).map(|r| derived_seed(master_seed, r)).collect();
    let all: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    // a failed run is retried below, where its error gains the run index
    runner.prefetch(&all).ok();
    let mut rows = Vec::new();
    for &variant in variants {
        let mut per_run = Vec::with_capacity(runs);
        for (r, &seed) in seeds.iter().enumerate() {
            let record = runner.run(variant, seed).map_err(|e| match e {
                Error::TrainingAbort(msg) => Error::TrainingAbort(format!("{variant} run {r}: {msg}")),
                other => other,
            })?;
            per_run.push(record.report.averages());
        }
        rows.push(StabilityRow {
            variant,
            mean: Distances::mean(&per_run),
            variance: Distances::variance(&per_run),
            runs: per_run,
        });
    }
    Ok(StabilityReport {
        master_seed,
        seeds,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareSizeRow {
    pub n: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareSizeReport {
    pub rows: Vec<SquareSizeRow>,
}

impl SquareSizeReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6} {:>12} {:>12} {:>12} {:>12}\n", "N", "AVG_KL", "AVG_JS", "AVG_HD", "AVG_Cos");
        for row in &self.rows {
            let r = &row.report;
            out.push_str(&format!(
                "{:<6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                row.n, r.avg_kl, r.avg_js, r.avg_hd, r.avg_cos
            ));
        }
        out
    }
}

/// Regenerates the corpus at each grid resolution and retrains. Rates are
/// rescaled by `(base.n / N)²` so the target area keeps the same expected POI count.
pub fn square_size_study(
    base: &SynthesisParams,
    n_values: &[usize],
    config: &PipelineConfig,
    gens_per_sample: usize,
) -> Result<SquareSizeReport> {
    if n_values.is_empty() {
        return Err(Error::param("square-size study needs at least one N"));
    }
    if n_values.contains(&0) {
        return Err(Error::param("N must be positive"));
    }
    let results = parallel_map(n_values, |&n| -> Result<SquareSizeRow> {
        let mut params = base.clone();
        params.n = n;
        params.scale_rates((base.n as f64 / n as f64).powi(2));
        let samples = synthesize_city(&params)?;
        let run = train_pipeline(&samples, config)?;
        let test = run.model.test_samples(&samples)?;
        let report = evaluate(&run.model, &test, gens_per_sample, config.seed)?;
        Ok(SquareSizeRow { n, report })
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SquareSizeReport { rows })
}

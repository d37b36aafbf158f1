//! Level-weighted distribution distances between original and generated configurations.

mod study;

pub use study::{
    ablation_study, derived_seed, square_size_study, stability_study, AblationReport, AblationRow, ExperimentRunner, RunRecord,
    SquareSizeReport, SquareSizeRow, StabilityReport, StabilityRow,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DatasetSample, GreenLevel, LandUseConfiguration, LEVEL_COUNT};
use crate::neural::Rng;
use crate::pipeline::TrainedModel;

/// Added to every category mass before normalising.
pub const SMOOTHING: f64 = 1e-10;
pub const DEFAULT_GENS_PER_SAMPLE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub probs: Vec<f64>,
    /// Number of configurations aggregated.
    pub weight: usize,
}

/// Sums every configuration over samples and cells into per-category mass, smooths, normalises.
pub fn group_distribution<'a>(configs: impl IntoIterator<Item = &'a LandUseConfiguration>) -> Result<LevelDistribution> {
    let mut totals: Option<Vec<f64>> = None;
    let mut weight = 0;
    for config in configs {
        let t = config.category_totals();
        match &mut totals {
            None => totals = Some(t),
            Some(acc) => {
                if acc.len() != t.len() {
                    return Err(Error::shape("category count", acc.len(), t.len()));
                }
                acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
            }
        }
        weight += 1;
    }
    let totals = totals.ok_or_else(|| Error::param("cannot form a distribution from zero configurations"))?;
    Ok(LevelDistribution {
        probs: normalize_smoothed(&totals),
        weight,
    })
}

/// Normalises first so the result does not depend on total mass, then adds
/// `SMOOTHING` per category and renormalises. All-zero mass becomes uniform.
pub fn normalize_smoothed(mass: &[f64]) -> Vec<f64> {
    let total: f64 = mass.iter().sum();
    let smoothed: Vec<f64> = if total > 0.0 {
        mass.iter().map(|v| v / total + SMOOTHING).collect()
    } else {
        vec![SMOOTHING; mass.len()]
    };
    let sum: f64 = smoothed.iter().sum();
    smoothed.iter().map(|v| v / sum).collect()
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::param(format!("distribution lengths differ: {} vs {}", p.len(), q.len())));
    }
    Ok(())
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// `Σ p ln(p/q)` in nats.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(kl_unchecked(p, q))
}

pub fn js(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl_unchecked(p, &mid) + 0.5 * kl_unchecked(q, &mid))
}

/// Hellinger distance `(1/√2)·‖√p − √q‖`.
pub fn hd(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let ss: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok(ss.sqrt() / std::f64::consts::SQRT_2)
}

pub fn cos_dist(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok((1.0 - dot / (norm(p) * norm(q))).max(0.0))
}

pub fn weighted_average(values: &[f64], weights: &[usize]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::param("one weight per value"));
    }
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(Error::param("all weights are zero"));
    }
    let acc: f64 = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0)
        .map(|(v, &w)| v * w as f64)
        .sum();
    Ok(acc / total as f64)
}

/// The four distances, either for one level or averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub kl: f64,
    pub js: f64,
    pub hd: f64,
    pub cos: f64,
}

impl Distances {
    pub fn between(original: &[f64], generated: &[f64]) -> Result<Self> {
        Ok(Distances {
            kl: kl(original, generated)?,
            js: js(original, generated)?,
            hd: hd(original, generated)?,
            cos: cos_dist(original, generated)?,
        })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.kl, self.js, self.hd, self.cos]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Distances {
            kl: a[0],
            js: a[1],
            hd: a[2],
            cos: a[3],
        }
    }

    pub fn mean(items: &[Distances]) -> Distances {
        let k = items.len().max(1) as f64;
        let mut acc = [0.0; 4];
        for d in items {
            acc.iter_mut().zip(d.to_array()).for_each(|(a, v)| *a += v);
        }
        Distances::from_array(acc.map(|a| a / k))
    }

    /// Population variance (divides by the number of items).
    pub fn variance(items: &[Distances]) -> Distances {
        let mean = Distances::mean(items).to_array();
        let k = items.len().max(1) as f64;
        let mut acc = [0.0; 4];
        for d in items {
            for ((a, v), m) in acc.iter_mut().zip(d.to_array()).zip(mean) {
                *a += (v - m) * (v - m);
            }
        }
        Distances::from_array(acc.map(|a| a / k))
    }
}

pub const METRIC_NAMES: [&str; 4] = ["KL", "JS", "HD", "Cos"];

/// `(weight, Some((original, generated)))` for one level; `None` when it has no test samples.
pub type LevelPair = (usize, Option<(Vec<f64>, Vec<f64>)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    /// Number of test samples at this level.
    pub weight: usize,
    /// `None` when the level has no test samples.
    pub metrics: Option<Distances>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub avg_kl: f64,
    pub avg_js: f64,
    pub avg_hd: f64,
    pub avg_cos: f64,
    pub per_level: Vec<LevelMetrics>,
}

impl MetricReport {
    pub fn averages(&self) -> Distances {
        Distances {
            kl: self.avg_kl,
            js: self.avg_js,
            hd: self.avg_hd,
            cos: self.avg_cos,
        }
    }

    /// Builds the report from per-level original and generated distributions; empty levels are skipped.
    pub fn from_levels(levels: &[LevelPair]) -> Result<Self> {
        let mut per_level = Vec::with_capacity(levels.len());
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for (level, (weight, pair)) in levels.iter().enumerate() {
            let metrics = match pair {
                Some((orig, gen)) if *weight > 0 => Some(Distances::between(orig, gen)?),
                _ => None,
            };
            if let Some(m) = metrics {
                values.push(m.to_array());
                weights.push(*weight);
            }
            per_level.push(LevelMetrics {
                level,
                weight: *weight,
                metrics,
            });
        }
        let column = |i: usize| -> Result<f64> {
            let v: Vec<f64> = values.iter().map(|row| row[i]).collect();
            weighted_average(&v, &weights)
        };
        Ok(MetricReport {
            avg_kl: column(0)?,
            avg_js: column(1)?,
            avg_hd: column(2)?,
            avg_cos: column(3)?,
            per_level,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>6} {:>12} {:>12} {:>12} {:>12}", "level", "weight", "KL", "JS", "HD", "Cos");
        for row in &self.per_level {
            match row.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<8} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                        format!("green{}", row.level),
                        row.weight,
                        m.kl,
                        m.js,
                        m.hd,
                        m.cos
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<8} {:>6} {:>12} {:>12} {:>12} {:>12}", format!("green{}", row.level), 0, "-", "-", "-", "-");
                }
            }
        }
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            "AVG",
            self.per_level.iter().map(|r| r.weight).sum::<usize>(),
            self.avg_kl,
            self.avg_js,
            self.avg_hd,
            self.avg_cos
        );
        out
    }
}

/// Produces configurations for the condition of a dataset sample.
pub trait ConfigGenerator {
    fn generate_for(&self, sample: &DatasetSample, count: usize, rng: &mut Rng) -> Result<Vec<LandUseConfiguration>>;
}

impl ConfigGenerator for TrainedModel {
    fn generate_for(&self, sample: &DatasetSample, count: usize, rng: &mut Rng) -> Result<Vec<LandUseConfiguration>> {
        self.generate(&sample.context, sample.green_level, count, rng)
    }
}

/// Returns the sample's own configuration every time.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayGenerator;

impl ConfigGenerator for ReplayGenerator {
    fn generate_for(&self, sample: &DatasetSample, count: usize, _rng: &mut Rng) -> Result<Vec<LandUseConfiguration>> {
        Ok(vec![sample.configuration.clone(); count])
    }
}

/// Raw tensors behind a report, grouped by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDump {
    pub n: usize,
    pub m: usize,
    pub gens_per_sample: usize,
    pub levels: Vec<LevelDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDump {
    pub level: usize,
    pub sample_ids: Vec<u64>,
    /// Flattened `[row][col][category]` tensors.
    pub originals: Vec<Vec<f64>>,
    pub generated: Vec<Vec<f64>>,
}

fn run_evaluation<G: ConfigGenerator + ?Sized>(
    generator: &G,
    test_set: &[&DatasetSample],
    gens_per_sample: usize,
    seed: u64,
    keep: bool,
) -> Result<(MetricReport, Option<EvaluationDump>)> {
    let first = test_set.first().ok_or_else(|| Error::param("test set is empty"))?;
    if gens_per_sample == 0 {
        return Err(Error::param("gens_per_sample must be positive"));
    }
    let mut levels = Vec::with_capacity(LEVEL_COUNT);
    let mut dumps = Vec::new();
    for level in GreenLevel::all() {
        let members: Vec<&DatasetSample> = test_set.iter().copied().filter(|s| s.green_level == level).collect();
        let mut generated = Vec::with_capacity(members.len() * gens_per_sample);
        for s in &members {
            let mut rng = Rng::with_stream(seed, s.sample_id);
            generated.extend(generator.generate_for(s, gens_per_sample, &mut rng)?);
        }
        let pair = if members.is_empty() {
            None
        } else {
            let orig = group_distribution(members.iter().map(|s| &s.configuration))?;
            let gen = group_distribution(&generated)?;
            Some((orig.probs, gen.probs))
        };
        levels.push((members.len(), pair));
        if keep {
            dumps.push(LevelDump {
                level: level.index(),
                sample_ids: members.iter().map(|s| s.sample_id).collect(),
                originals: members.iter().map(|s| s.configuration.as_flat().to_vec()).collect(),
                generated: generated.iter().map(|g| g.as_flat().to_vec()).collect(),
            });
        }
    }
    let report = MetricReport::from_levels(&levels)?;
    let dump = keep.then(|| EvaluationDump {
        n: first.configuration.n(),
        m: first.configuration.m(),
        gens_per_sample,
        levels: dumps,
    });
    Ok((report, dump))
}

/// Compares each level's original test configurations with `gens_per_sample`
/// generations per test condition. Sample `k` draws from stream `k` of `seed`.
pub fn evaluate<G: ConfigGenerator + ?Sized>(
    generator: &G,
    test_set: &[&DatasetSample],
    gens_per_sample: usize,
    seed: u64,
) -> Result<MetricReport> {
    Ok(run_evaluation(generator, test_set, gens_per_sample, seed, false)?.0)
}

pub fn evaluate_with_dump<G: ConfigGenerator + ?Sized>(
    generator: &G,
    test_set: &[&DatasetSample],
    gens_per_sample: usize,
    seed: u64,
) -> Result<(MetricReport, EvaluationDump)> {
    let (report, dump) = run_evaluation(generator, test_set, gens_per_sample, seed, true)?;
    Ok((report, dump.expect("dump requested")))
}

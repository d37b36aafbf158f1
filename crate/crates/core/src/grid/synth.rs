use serde::{Deserialize, Serialize};

use super::{DatasetSample, FunctionalZoneGrid, GreenLevel, LandUseConfiguration, LEVEL_COUNT};
use crate::context::{
    build_context_graph, house_price_change, poi_ratio, private_transport_features, public_transport_features,
    BusEvent, BusLog, ContextFeatureRow, FlowDirection, TaxiLog, TaxiTrip, CONTEXT_COUNT,
};
use crate::error::{Error, Result};
use crate::neural::Rng;

/// Knobs of the synthetic city generator.
///
/// Each sample draws a latent "character" (per-zone logits, spread
/// `character_spread`) shared by the target and its eight contexts. The
/// target's zone mix additionally shifts by `level_zone_shift[z] * (level - 2)`,
/// which the contexts never see, so the green level carries information the
/// context embedding cannot supply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub n: usize,
    pub m: usize,
    pub z_count: usize,
    pub k_samples: usize,
    pub t_months: usize,
    pub seed: u64,
    /// Mean POI count per cell, `[zone][category]`.
    pub zone_rate_table: Vec<Vec<f64>>,
    pub sparsity_by_level: [f64; LEVEL_COUNT],
    pub level_zone_shift: Vec<f64>,
    pub character_spread: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams::new(10, 20, 6, 2000, 13, 42)
    }
}

impl SynthesisParams {
    pub fn new(n: usize, m: usize, z_count: usize, k_samples: usize, t_months: usize, seed: u64) -> Self {
        SynthesisParams {
            n,
            m,
            z_count,
            k_samples,
            t_months,
            seed,
            zone_rate_table: default_rate_table(z_count, m),
            sparsity_by_level: [1.0, 0.8, 0.6, 0.4, 0.2],
            level_zone_shift: default_level_shift(z_count),
            character_spread: 1.0,
        }
    }

    /// Multiplies every zone rate by `factor`.
    pub fn scale_rates(&mut self, factor: f64) {
        for row in &mut self.zone_rate_table {
            for r in row {
                *r *= factor;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.z_count == 0 {
            return Err(Error::param("n, m and z_count must be positive"));
        }
        if self.z_count > self.n * self.n {
            return Err(Error::param(format!("z_count {} exceeds {} grid cells", self.z_count, self.n * self.n)));
        }
        if self.t_months < 2 {
            return Err(Error::param("t_months must be at least 2"));
        }
        if self.zone_rate_table.len() != self.z_count || self.zone_rate_table.iter().any(|r| r.len() != self.m) {
            return Err(Error::param("zone_rate_table must be z_count x m"));
        }
        if self.zone_rate_table.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::param("zone rates must be finite and non-negative"));
        }
        let s = &self.sparsity_by_level;
        if s.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("sparsity_by_level must lie in (0, 1] and strictly decrease"));
        }
        if self.level_zone_shift.len() != self.z_count || self.level_zone_shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("level_zone_shift must have z_count finite entries"));
        }
        if !(self.character_spread.is_finite() && self.character_spread >= 0.0) {
            return Err(Error::param("character_spread must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Zone `z` favours categories `c ≡ z (mod Z)` strongly and `c ≡ z+1` mildly.
fn default_rate_table(z_count: usize, m: usize) -> Vec<Vec<f64>> {
    (0..z_count)
        .map(|z| {
            (0..m)
                .map(|c| {
                    if c % z_count == z {
                        0.6
                    } else if c % z_count == (z + 1) % z_count {
                        0.2
                    } else {
                        0.02
                    }
                })
                .collect()
        })
        .collect()
}

/// Linear ramp from -0.8 (zone 0) to +0.8 (last zone) per level step.
fn default_level_shift(z_count: usize) -> Vec<f64> {
    if z_count == 1 {
        return vec![0.0];
    }
    (0..z_count)
        .map(|z| 0.8 * (2.0 * z as f64 / (z_count - 1) as f64 - 1.0))
        .collect()
}

pub fn synthesize_city(params: &SynthesisParams) -> Result<Vec<DatasetSample>> {
    params.validate()?;
    (0..params.k_samples as u64).map(|id| synthesize_sample(params, id)).collect()
}

/// One sample from its own stream `(seed, sample_id)`.
pub fn synthesize_sample(params: &SynthesisParams, sample_id: u64) -> Result<DatasetSample> {
    let mut rng = Rng::with_stream(params.seed, sample_id);
    let level = GreenLevel::new(rng.below(LEVEL_COUNT))?;
    let character: Vec<f64> = (0..params.z_count).map(|_| params.character_spread * rng.normal()).collect();
    let step = level.index() as f64 - 2.0;
    let target_logits: Vec<f64> = character
        .iter()
        .zip(&params.level_zone_shift)
        .map(|(c, s)| c + s * step)
        .collect();
    let zones = grow_zones(params.n, &softmax(&target_logits), &mut rng)?;

    let sparsity = params.sparsity_by_level[level.index()];
    let mut config = LandUseConfiguration::zeros(params.n, params.m);
    for r in 0..params.n {
        for c in 0..params.n {
            let rates = &params.zone_rate_table[zones.get(r, c)];
            for (cat, rate) in rates.iter().enumerate() {
                config.set(r, c, cat, rng.poisson(rate * sparsity) as f64);
            }
        }
    }

    let rows: Vec<ContextFeatureRow> = (0..CONTEXT_COUNT)
        .map(|d| synthesize_context(params, &character, d, &mut rng))
        .collect::<Result<_>>()?;
    let context = build_context_graph(&rows)?;
    DatasetSample::new(sample_id, config, zones, context, level)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Seed cell of each zone: evenly spaced on a circle of radius `0.35·n` around the centre.
fn zone_anchors(n: usize, z_count: usize) -> Vec<usize> {
    let centre = (n as f64 - 1.0) / 2.0;
    let radius = 0.35 * n as f64;
    let mut taken = vec![false; n * n];
    (0..z_count)
        .map(|z| {
            let angle = std::f64::consts::TAU * z as f64 / z_count as f64;
            let r = (centre - radius * angle.cos()).round().clamp(0.0, n as f64 - 1.0) as usize;
            let c = (centre + radius * angle.sin()).round().clamp(0.0, n as f64 - 1.0) as usize;
            // nearest free cell, so small grids still get distinct seeds
            let idx = (0..n * n)
                .filter(|&i| !taken[i])
                .min_by_key(|&i| {
                    let (ri, ci) = ((i / n) as i64, (i % n) as i64);
                    ((ri - r as i64).pow(2) + (ci - c as i64).pow(2), i)
                })
                .expect("z_count <= n^2");
            taken[idx] = true;
            idx
        })
        .collect()
}

/// Region growing from one anchored seed cell per zone. At each step a zone is
/// picked with probability proportional to its weight (among zones that can
/// still grow) and claims its unclaimed 4-neighbour closest to its seed.
fn grow_zones(n: usize, weights: &[f64], rng: &mut Rng) -> Result<FunctionalZoneGrid> {
    let z_count = weights.len();
    let cells = n * n;
    let anchors = zone_anchors(n, z_count);
    let mut labels = vec![usize::MAX; cells];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new(); z_count];
    let neighbours = |idx: usize| {
        let (r, c) = (idx / n, idx % n);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(idx - n);
        }
        if r + 1 < n {
            out.push(idx + n);
        }
        if c > 0 {
            out.push(idx - 1);
        }
        if c + 1 < n {
            out.push(idx + 1);
        }
        out
    };
    let dist2 = |a: usize, b: usize| {
        let (ra, ca, rb, cb) = ((a / n) as i64, (a % n) as i64, (b / n) as i64, (b % n) as i64);
        (ra - rb).pow(2) + (ca - cb).pow(2)
    };
    for (z, &seed_cell) in anchors.iter().enumerate() {
        labels[seed_cell] = z;
    }
    for (z, &seed_cell) in anchors.iter().enumerate() {
        frontier[z].extend(neighbours(seed_cell).into_iter().filter(|&i| labels[i] == usize::MAX));
    }
    let mut remaining = cells - z_count;
    while remaining > 0 {
        let open: Vec<usize> = (0..z_count).filter(|&z| !frontier[z].is_empty()).collect();
        if open.is_empty() {
            return Err(Error::Contract("region growing stalled with unclaimed cells".into()));
        }
        let total: f64 = open.iter().map(|&z| weights[z]).sum();
        let mut target = rng.uniform() * total;
        let mut zone = open[open.len() - 1];
        for &z in &open {
            if target < weights[z] {
                zone = z;
                break;
            }
            target -= weights[z];
        }
        frontier[zone].retain(|&i| labels[i] == usize::MAX);
        if frontier[zone].is_empty() {
            continue;
        }
        let (slot, _) = frontier[zone]
            .iter()
            .enumerate()
            .min_by_key(|&(_, &i)| (dist2(i, anchors[zone]), i))
            .expect("open zone has a frontier");
        let pick = frontier[zone].swap_remove(slot);
        labels[pick] = zone;
        remaining -= 1;
        frontier[zone].extend(neighbours(pick).into_iter().filter(|&i| labels[i] == usize::MAX));
    }
    FunctionalZoneGrid::new(n, z_count, labels)
}

const CONTEXT_DAYS: f64 = 2.0;
const CONTEXT_AREA_M2: f64 = 1.0e6;
const CONTEXT_CELLS: f64 = 50.0;

fn synthesize_context(params: &SynthesisParams, character: &[f64], direction: usize, rng: &mut Rng) -> Result<ContextFeatureRow> {
    let z = params.z_count;
    let logits: Vec<f64> = character.iter().map(|c| c + 0.5 * rng.normal()).collect();
    let w = softmax(&logits);
    let wz = |i: usize| w[i % z];

    let counts: Vec<f64> = (0..params.m)
        .map(|c| {
            let mean: f64 = (0..z).map(|zi| w[zi] * params.zone_rate_table[zi][c]).sum();
            rng.poisson(CONTEXT_CELLS * 0.6 * mean) as f64
        })
        .collect();

    let base = 40_000.0 * (1.0 + 0.5 * wz(1));
    let trend = 50.0 + 400.0 * wz(0) + 30.0 * rng.normal();
    let prices: Vec<f64> = (0..params.t_months)
        .map(|t| base + trend * t as f64 + 100.0 * rng.normal())
        .collect();

    let mut events = Vec::new();
    let bus_rates = [
        (FlowDirection::Leave, 30.0 + 120.0 * wz(1)),
        (FlowDirection::Arrive, 30.0 + 120.0 * wz(0)),
        (FlowDirection::Transit, 10.0 + 60.0 * wz(2)),
    ];
    for (dir, rate) in bus_rates {
        for _ in 0..rng.poisson(CONTEXT_DAYS * rate) {
            let price = 1.0 + 2.0 * wz(2) + 0.5 * rng.uniform();
            events.push(BusEvent { context_id: direction, direction: dir, price });
        }
    }
    let bus = BusLog {
        context_id: direction,
        days: CONTEXT_DAYS,
        area_m2: CONTEXT_AREA_M2,
        stop_count: rng.poisson(5.0 + 20.0 * wz(0)) as usize,
        events,
    };

    let mut trips = Vec::new();
    let taxi_rates = [
        (FlowDirection::Leave, 20.0 + 80.0 * wz(1)),
        (FlowDirection::Arrive, 20.0 + 80.0 * wz(3)),
        (FlowDirection::Transit, 5.0 + 40.0 * wz(5)),
    ];
    for (dir, rate) in taxi_rates {
        for _ in 0..rng.poisson(CONTEXT_DAYS * rate) {
            let distance_km = 1.0 + (2.0 + 10.0 * wz(4)) * rng.uniform();
            let velocity = (15.0 + 25.0 * wz(4) + 3.0 * rng.normal()).max(3.0);
            trips.push(TaxiTrip { context_id: direction, direction: dir, distance_km, duration_h: distance_km / velocity });
        }
    }
    let taxi = TaxiLog { context_id: direction, days: CONTEXT_DAYS, trips };

    Ok(ContextFeatureRow {
        price_change: house_price_change(&prices)?,
        poi_ratio: poi_ratio(&counts),
        public_transport: public_transport_features(&bus),
        private_transport: private_transport_features(&taxi),
    })
}

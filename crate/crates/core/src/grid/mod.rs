//! Grid tensors, zone grids, green levels, and the synthetic city corpus.

mod cluster;
mod io;
mod synth;

pub use cluster::cluster_zones;
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use synth::{synthesize_city, synthesize_sample, SynthesisParams};

use serde::{Deserialize, Serialize};

use crate::context::ContextGraph;
use crate::error::{Error, Result};

pub const LEVEL_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiPoint {
    pub lat: f64,
    pub lon: f64,
    pub category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        let finite = [min_lat, max_lat, min_lon, max_lon].iter().all(|v| v.is_finite());
        if !finite || max_lat <= min_lat || max_lon <= min_lon {
            return Err(Error::param("bounding box must be finite and non-degenerate"));
        }
        Ok(BoundingBox {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

/// N×N×M grid of non-negative POI intensities, stored row-major as `[row][col][category]`.
///
/// Rows follow latitude upward from the box's southern edge and columns follow
/// longitude eastward.
#[derive(Debug, Clone, PartialEq)]
pub struct LandUseConfiguration {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl LandUseConfiguration {
    pub fn zeros(n: usize, m: usize) -> Self {
        LandUseConfiguration {
            n,
            m,
            data: vec![0.0; n * n * m],
        }
    }

    pub fn from_flat(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * m {
            return Err(Error::shape("configuration tensor", n * n * m, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::RejectedInput(format!("configuration entry {v} is not a finite non-negative count")));
        }
        Ok(LandUseConfiguration { n, m, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn index(&self, row: usize, col: usize, category: usize) -> usize {
        (row * self.n + col) * self.m + category
    }

    pub fn get(&self, row: usize, col: usize, category: usize) -> f64 {
        self.data[self.index(row, col, category)]
    }

    pub fn set(&mut self, row: usize, col: usize, category: usize, value: f64) {
        let idx = self.index(row, col, category);
        self.data[idx] = value;
    }

    /// The flattened vector fed to the encoder.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.m]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn category_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.m];
        for cell in self.data.chunks_exact(self.m) {
            for (t, v) in totals.iter_mut().zip(cell) {
                *t += v;
            }
        }
        totals
    }

    /// Nested `[row][col][category]` arrays.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|r| (0..self.n).map(|c| self.cell(r, c).to_vec()).collect())
            .collect()
    }

    pub fn rounded(&self) -> Self {
        LandUseConfiguration {
            n: self.n,
            m: self.m,
            data: self.data.iter().map(|v| v.round()).collect(),
        }
    }
}

/// Counts points per cell and category over an `n`×`n` subdivision of `bbox`.
pub fn build_configuration(points: &[PoiPoint], bbox: &BoundingBox, n: usize, m: usize) -> Result<LandUseConfiguration> {
    if n == 0 {
        return Err(Error::param("grid resolution n must be positive"));
    }
    if m == 0 {
        return Err(Error::param("category count m must be positive"));
    }
    let mut config = LandUseConfiguration::zeros(n, m);
    let cell_of = |v: f64, lo: f64, hi: f64| (((v - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1);
    for (i, p) in points.iter().enumerate() {
        if !p.lat.is_finite() || !p.lon.is_finite() || !bbox.contains(p.lat, p.lon) {
            return Err(Error::RejectedInput(format!(
                "point {i} at ({}, {}) lies outside the bounding box",
                p.lat, p.lon
            )));
        }
        if p.category >= m {
            return Err(Error::RejectedInput(format!("point {i} has category {} >= {m}", p.category)));
        }
        let row = cell_of(p.lat, bbox.min_lat, bbox.max_lat);
        let col = cell_of(p.lon, bbox.min_lon, bbox.max_lon);
        let idx = config.index(row, col, p.category);
        config.data[idx] += 1.0;
    }
    Ok(config)
}

/// N×N grid of functional-zone labels in `[0, z_count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalZoneGrid {
    n: usize,
    z_count: usize,
    labels: Vec<usize>,
}

impl FunctionalZoneGrid {
    pub fn new(n: usize, z_count: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != n * n {
            return Err(Error::shape("zone grid", n * n, labels.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= z_count) {
            return Err(Error::RejectedInput(format!("zone label {l} >= zone count {z_count}")));
        }
        Ok(FunctionalZoneGrid { n, z_count, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z_count(&self) -> usize {
        self.z_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.n + col]
    }

    pub fn to_nested(&self) -> Vec<Vec<usize>> {
        self.labels.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Greenery class used as the guidance signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct GreenLevel(u8);

impl GreenLevel {
    pub fn new(level: usize) -> Result<Self> {
        if level >= LEVEL_COUNT {
            return Err(Error::param(format!("green level {level} outside 0..{LEVEL_COUNT}")));
        }
        Ok(GreenLevel(level as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = GreenLevel> {
        (0..LEVEL_COUNT as u8).map(GreenLevel)
    }
}

impl TryFrom<usize> for GreenLevel {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        GreenLevel::new(v)
    }
}

impl From<GreenLevel> for usize {
    fn from(l: GreenLevel) -> usize {
        l.index()
    }
}

/// Equal-frequency quintile bin of `green_rates[k_index]` within `green_rates`.
///
/// The bin is `min(4, floor(5 * rank / (K - 1)))` where `rank` counts rates
/// strictly below the target, so ties fall into the lowest bin, the minimum
/// maps to level 0 and the maximum to level 4.
pub fn assign_green_level(green_rates: &[f64], k_index: usize) -> Result<GreenLevel> {
    if green_rates.is_empty() {
        return Err(Error::param("green rate list is empty"));
    }
    if green_rates.iter().any(|r| !r.is_finite()) {
        return Err(Error::param("green rates must be finite"));
    }
    let target = *green_rates
        .get(k_index)
        .ok_or_else(|| Error::param(format!("sample index {k_index} out of range")))?;
    let k = green_rates.len();
    if k == 1 {
        return GreenLevel::new(0);
    }
    let rank = green_rates.iter().filter(|&&r| r < target).count();
    GreenLevel::new(((LEVEL_COUNT * rank) / (k - 1)).min(LEVEL_COUNT - 1))
}

/// One training/evaluation record: configuration, zones, context graph, and guidance level.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub sample_id: u64,
    pub configuration: LandUseConfiguration,
    pub zones: FunctionalZoneGrid,
    pub context: ContextGraph,
    pub green_level: GreenLevel,
}

impl DatasetSample {
    pub fn new(
        sample_id: u64,
        configuration: LandUseConfiguration,
        zones: FunctionalZoneGrid,
        context: ContextGraph,
        green_level: GreenLevel,
    ) -> Result<Self> {
        if configuration.n() != zones.n() {
            return Err(Error::shape("zone grid resolution", configuration.n(), zones.n()));
        }
        if context.poi_categories().is_some_and(|m| m != configuration.m()) {
            return Err(Error::param(format!(
                "context feature width {} does not fit m = {}",
                context.feature_width(),
                configuration.m()
            )));
        }
        Ok(DatasetSample {
            sample_id,
            configuration,
            zones,
            context,
            green_level,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Rng;

    fn unit_box() -> BoundingBox {
        BoundingBox::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn single_point_lands_in_its_cell() {
        let pts = [PoiPoint { lat: 0.1, lon: 0.2, category: 3 }];
        let cfg = build_configuration(&pts, &unit_box(), 2, 4).unwrap();
        assert_eq!(cfg.get(0, 0, 3), 1.0);
        assert_eq!(cfg.total(), 1.0);
    }

    #[test]
    fn empty_points_give_zero_grid() {
        let cfg = build_configuration(&[], &unit_box(), 3, 5).unwrap();
        assert_eq!(cfg.as_flat().len(), 45);
        assert!(cfg.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scattered_points_are_conserved() {
        let mut rng = Rng::new(4);
        let pts: Vec<PoiPoint> = (0..7)
            .map(|_| PoiPoint { lat: rng.uniform(), lon: rng.uniform(), category: rng.below(20) })
            .collect();
        let cfg = build_configuration(&pts, &unit_box(), 10, 20).unwrap();
        let mut recount = 0.0;
        for r in 0..10 {
            for c in 0..10 {
                recount += cfg.cell(r, c).iter().sum::<f64>();
            }
        }
        assert_eq!(recount, 7.0);
    }

    #[test]
    fn edge_points_clamp_to_last_cell() {
        let pts = [PoiPoint { lat: 1.0, lon: 1.0, category: 0 }];
        let cfg = build_configuration(&pts, &unit_box(), 4, 1).unwrap();
        assert_eq!(cfg.get(3, 3, 0), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let outside = [PoiPoint { lat: 1.5, lon: 0.5, category: 0 }];
        assert!(matches!(build_configuration(&outside, &unit_box(), 2, 2), Err(Error::RejectedInput(_))));
        assert!(matches!(build_configuration(&[], &unit_box(), 0, 2), Err(Error::Parameter(_))));
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn equal_rates_all_level_zero() {
        let rates = vec![0.3; 17];
        for k in 0..17 {
            assert_eq!(assign_green_level(&rates, k).unwrap().index(), 0);
        }
    }

    #[test]
    fn evenly_spaced_rates_fill_quintiles() {
        let rates: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let mut shuffled = rates.clone();
        Rng::new(2).shuffle(&mut shuffled);
        let mut counts = [0usize; 5];
        for k in 0..100 {
            let level = assign_green_level(&shuffled, k).unwrap().index();
            // brute force: position in sorted order, five equal chunks
            let pos = rates.iter().position(|&r| r == shuffled[k]).unwrap();
            assert_eq!(level, pos / 20);
            counts[level] += 1;
        }
        assert_eq!(counts, [20; 5]);
        let min_k = shuffled.iter().position(|&r| r == 0.0).unwrap();
        assert_eq!(assign_green_level(&shuffled, min_k).unwrap().index(), 0);
        let max_k = shuffled.iter().position(|&r| r == 1.0).unwrap();
        assert_eq!(assign_green_level(&shuffled, max_k).unwrap().index(), 4);
    }

    #[test]
    fn green_level_bounds() {
        assert!(assign_green_level(&[], 0).is_err());
        assert!(GreenLevel::new(5).is_err());
        assert_eq!(GreenLevel::all().count(), 5);
    }
}

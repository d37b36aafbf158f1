//! Surrounding-context features and the 8-vertex ring graph built from them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTEXT_COUNT: usize = 8;
pub const TRANSPORT_WIDTH: usize = 5;

/// Compass order of the eight contexts; row `i` of every feature matrix is `DIRECTIONS[i]`.
pub const DIRECTIONS: [&str; CONTEXT_COUNT] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

/// Month-over-month differences of a price series.
pub fn house_price_change(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::param(format!("price series needs at least 2 months, got {}", prices.len())));
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(Error::param("price series contains non-finite values"));
    }
    Ok(prices.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Category shares of a context; uniform when the context holds no POIs.
pub fn poi_ratio(category_counts: &[f64]) -> Vec<f64> {
    let total: f64 = category_counts.iter().sum();
    if total > 0.0 {
        category_counts.iter().map(|c| c / total).collect()
    } else {
        let m = category_counts.len().max(1);
        vec![1.0 / m as f64; category_counts.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Leave,
    Arrive,
    Transit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusEvent {
    pub context_id: usize,
    pub direction: FlowDirection,
    pub price: f64,
}

/// Smart-card style bus records observed for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLog {
    pub context_id: usize,
    pub days: f64,
    pub area_m2: f64,
    pub stop_count: usize,
    pub events: Vec<BusEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxiTrip {
    pub context_id: usize,
    pub direction: FlowDirection,
    pub distance_km: f64,
    pub duration_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxiLog {
    pub context_id: usize,
    pub days: f64,
    pub trips: Vec<TaxiTrip>,
}

fn per_day(count: usize, days: f64) -> f64 {
    if days > 0.0 {
        count as f64 / days
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `[leave/day, arrive/day, transit/day, stops per m², mean trip price]`.
///
/// Events tagged with another context id are ignored; a log with no matching
/// events yields all zeros.
pub fn public_transport_features(log: &BusLog) -> [f64; TRANSPORT_WIDTH] {
    let events: Vec<&BusEvent> = log.events.iter().filter(|e| e.context_id == log.context_id).collect();
    if events.is_empty() {
        return [0.0; TRANSPORT_WIDTH];
    }
    let count = |d: FlowDirection| events.iter().filter(|e| e.direction == d).count();
    let stop_density = if log.area_m2 > 0.0 {
        log.stop_count as f64 / log.area_m2
    } else {
        0.0
    };
    [
        per_day(count(FlowDirection::Leave), log.days),
        per_day(count(FlowDirection::Arrive), log.days),
        per_day(count(FlowDirection::Transit), log.days),
        stop_density,
        mean(events.iter().map(|e| e.price)),
    ]
}

/// `[leave/day, arrive/day, transit/day, mean velocity km/h, mean distance km]`.
pub fn private_transport_features(log: &TaxiLog) -> [f64; TRANSPORT_WIDTH] {
    let trips: Vec<&TaxiTrip> = log.trips.iter().filter(|t| t.context_id == log.context_id).collect();
    if trips.is_empty() {
        return [0.0; TRANSPORT_WIDTH];
    }
    let count = |d: FlowDirection| trips.iter().filter(|t| t.direction == d).count();
    [
        per_day(count(FlowDirection::Leave), log.days),
        per_day(count(FlowDirection::Arrive), log.days),
        per_day(count(FlowDirection::Transit), log.days),
        mean(trips.iter().filter(|t| t.duration_h > 0.0).map(|t| t.distance_km / t.duration_h)),
        mean(trips.iter().map(|t| t.distance_km)),
    ]
}

/// Socioeconomic features of one surrounding context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatureRow {
    pub price_change: Vec<f64>,
    pub poi_ratio: Vec<f64>,
    pub public_transport: [f64; TRANSPORT_WIDTH],
    pub private_transport: [f64; TRANSPORT_WIDTH],
}

impl ContextFeatureRow {
    pub fn width(&self) -> usize {
        self.price_change.len() + self.poi_ratio.len() + 2 * TRANSPORT_WIDTH
    }

    fn concat(&self) -> impl Iterator<Item = f64> + '_ {
        self.price_change
            .iter()
            .chain(&self.poi_ratio)
            .chain(&self.public_transport)
            .chain(&self.private_transport)
            .copied()
    }
}

/// Ring graph over the eight contexts with one feature row per vertex.
///
/// The adjacency is implied: vertex `i` links to `(i ± 1) mod 8`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGraph {
    features: Array2<f64>,
    /// Category count `m` when known, so `T` can be recovered from the width.
    poi_categories: Option<usize>,
}

impl ContextGraph {
    pub fn from_features(features: Array2<f64>) -> Result<Self> {
        if features.nrows() != CONTEXT_COUNT {
            return Err(Error::param(format!("context graph needs {CONTEXT_COUNT} rows, got {}", features.nrows())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("context features must be finite"));
        }
        Ok(ContextGraph {
            features,
            poi_categories: None,
        })
    }

    pub fn with_poi_categories(mut self, m: usize) -> Result<Self> {
        if self.feature_width() < m + 2 * TRANSPORT_WIDTH + 1 {
            return Err(Error::param(format!(
                "feature width {} too small for m = {m}",
                self.feature_width()
            )));
        }
        self.poi_categories = Some(m);
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn poi_categories(&self) -> Option<usize> {
        self.poi_categories
    }

    /// Price-history length T, when `m` is known (width = M + T + 9).
    pub fn months(&self) -> Option<usize> {
        self.poi_categories.map(|m| self.feature_width() - m - 9)
    }

    pub fn adjacency() -> Array2<f64> {
        Array2::from_shape_fn((CONTEXT_COUNT, CONTEXT_COUNT), |(i, j)| {
            let d = (i + CONTEXT_COUNT - j) % CONTEXT_COUNT;
            if d == 1 || d == CONTEXT_COUNT - 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.features.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// Stacks eight rows (N, NE, ..., NW) into the graph's feature matrix `[V, R, O, U]`.
pub fn build_context_graph(rows: &[ContextFeatureRow]) -> Result<ContextGraph> {
    if rows.len() != CONTEXT_COUNT {
        return Err(Error::param(format!("expected {CONTEXT_COUNT} context rows, got {}", rows.len())));
    }
    let t1 = rows[0].price_change.len();
    let m = rows[0].poi_ratio.len();
    if t1 == 0 || m == 0 {
        return Err(Error::param("context rows need at least one price delta and one category"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.price_change.len() != t1 || r.poi_ratio.len() != m {
            return Err(Error::param(format!(
                "context row {i} ({}) has widths ({}, {}), expected ({t1}, {m})",
                DIRECTIONS[i],
                r.price_change.len(),
                r.poi_ratio.len()
            )));
        }
    }
    let width = t1 + m + 2 * TRANSPORT_WIDTH;
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.concat()).collect();
    let features = Array2::from_shape_vec((CONTEXT_COUNT, width), flat).expect("row widths checked");
    ContextGraph::from_features(features)?.with_poi_categories(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Rng;

    fn row(t: usize, m: usize, seed: f64) -> ContextFeatureRow {
        ContextFeatureRow {
            price_change: (0..t - 1).map(|i| seed + i as f64).collect(),
            poi_ratio: poi_ratio(&(0..m).map(|c| (c as f64 + seed).abs()).collect::<Vec<_>>()),
            public_transport: [seed; 5],
            private_transport: [-seed; 5],
        }
    }

    #[test]
    fn price_change_examples() {
        assert_eq!(house_price_change(&[100.0, 105.0, 103.0]).unwrap(), vec![5.0, -2.0]);
        assert!(house_price_change(&[7.0; 6]).unwrap().iter().all(|&v| v == 0.0));
        let linear: Vec<f64> = (0..10).map(|i| 3.0 + 2.5 * i as f64).collect();
        assert!(house_price_change(&linear).unwrap().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(house_price_change(&[1.0]).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(poi_ratio(&[2.0, 0.0, 3.0]), vec![0.4, 0.0, 0.6]);
        assert_eq!(poi_ratio(&[0.0; 4]), vec![0.25; 4]);
        assert_eq!(poi_ratio(&[0.0, 9.0, 0.0]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn transport_zero_and_rate_cases() {
        let empty = BusLog { context_id: 0, days: 2.0, area_m2: 1e6, stop_count: 4, events: vec![] };
        assert_eq!(public_transport_features(&empty), [0.0; 5]);
        let leaves = BusLog {
            events: (0..10).map(|_| BusEvent { context_id: 0, direction: FlowDirection::Leave, price: 2.0 }).collect(),
            ..empty.clone()
        };
        let f = public_transport_features(&leaves);
        assert_eq!(f[0], 5.0);
        assert_eq!(f[4], 2.0);

        let taxi = TaxiLog { context_id: 1, days: 2.0, trips: vec![] };
        assert_eq!(private_transport_features(&taxi), [0.0; 5]);
        let taxi = TaxiLog {
            trips: (0..10)
                .map(|_| TaxiTrip { context_id: 1, direction: FlowDirection::Leave, distance_km: 6.0, duration_h: 0.5 })
                .collect(),
            ..taxi
        };
        let f = private_transport_features(&taxi);
        assert_eq!(f, [5.0, 0.0, 0.0, 12.0, 6.0]);
    }

    #[test]
    fn transport_features_match_recount() {
        let mut rng = Rng::new(21);
        let dirs = [FlowDirection::Leave, FlowDirection::Arrive, FlowDirection::Transit];
        let events: Vec<BusEvent> = (0..500)
            .map(|_| BusEvent { context_id: rng.below(3), direction: dirs[rng.below(3)], price: rng.uniform_range(1.0, 4.0) })
            .collect();
        let log = BusLog { context_id: 2, days: 7.0, area_m2: 2.5e5, stop_count: 13, events };
        let got = public_transport_features(&log);
        let (mut l, mut a, mut t, mut price, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for e in &log.events {
            if e.context_id != 2 {
                continue;
            }
            match e.direction {
                FlowDirection::Leave => l += 1.0,
                FlowDirection::Arrive => a += 1.0,
                FlowDirection::Transit => t += 1.0,
            }
            price += e.price;
            n += 1.0;
        }
        let expected = [l / 7.0, a / 7.0, t / 7.0, 13.0 / 2.5e5, price / n];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }

        let trips: Vec<TaxiTrip> = (0..300)
            .map(|_| TaxiTrip {
                context_id: rng.below(2),
                direction: dirs[rng.below(3)],
                distance_km: rng.uniform_range(0.5, 20.0),
                duration_h: rng.uniform_range(0.1, 1.0),
            })
            .collect();
        let log = TaxiLog { context_id: 0, days: 3.0, trips };
        let got = private_transport_features(&log);
        let mine: Vec<&TaxiTrip> = log.trips.iter().filter(|t| t.context_id == 0).collect();
        let n = mine.len() as f64;
        let expected = [
            mine.iter().filter(|t| t.direction == FlowDirection::Leave).count() as f64 / 3.0,
            mine.iter().filter(|t| t.direction == FlowDirection::Arrive).count() as f64 / 3.0,
            mine.iter().filter(|t| t.direction == FlowDirection::Transit).count() as f64 / 3.0,
            mine.iter().map(|t| t.distance_km / t.duration_h).sum::<f64>() / n,
            mine.iter().map(|t| t.distance_km).sum::<f64>() / n,
        ];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn graph_width_is_m_plus_t_plus_9() {
        let rows: Vec<_> = (0..8).map(|i| row(13, 20, i as f64)).collect();
        let g = build_context_graph(&rows).unwrap();
        assert_eq!(g.feature_width(), 42);
        assert_eq!(g.months(), Some(13));
    }

    #[test]
    fn ring_adjacency_is_two_regular() {
        let a = ContextGraph::adjacency();
        for i in 0..8 {
            assert_eq!(a.row(i).sum(), 2.0);
            assert_eq!(a[[i, i]], 0.0);
            for j in 0..8 {
                assert_eq!(a[[i, j]], a[[j, i]]);
            }
        }
        // connected: walking one step at a time reaches every vertex
        let mut seen = [false; 8];
        let mut v = 0;
        for _ in 0..8 {
            seen[v] = true;
            v = (0..8).find(|&j| a[[v, j]] == 1.0 && !seen[j]).unwrap_or(v);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn row_order_is_preserved() {
        let rows: Vec<_> = (0..8).map(|i| row(4, 3, i as f64)).collect();
        let mut permuted = rows.clone();
        permuted.rotate_left(3);
        let a = build_context_graph(&rows).unwrap();
        let b = build_context_graph(&permuted).unwrap();
        for i in 0..8 {
            assert_eq!(b.features().row(i), a.features().row((i + 3) % 8));
        }
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let mut rows: Vec<_> = (0..8).map(|i| row(4, 3, i as f64)).collect();
        assert!(build_context_graph(&rows[..7]).is_err());
        rows[5].poi_ratio.push(0.0);
        assert!(build_context_graph(&rows).is_err());
    }
}

use super::{FunctionalZoneGrid, LandUseConfiguration};
use crate::error::{Error, Result};
use crate::neural::Rng;

const COORD_WEIGHT: f64 = 0.5;
const MAX_ITERATIONS: usize = 100;

/// k-means zone labelling for configurations that come without zones.
///
/// Each cell becomes its category-ratio vector (zeros for an empty cell)
/// followed by its min-max scaled (row, col) position weighted by 0.5.
/// Seeding is k-means++ from `seed`; Lloyd iterations stop when labels settle.
pub fn cluster_zones(config: &LandUseConfiguration, z_count: usize, seed: u64) -> Result<FunctionalZoneGrid> {
    let n = config.n();
    if z_count == 0 {
        return Err(Error::param("zone count must be at least 1"));
    }
    if z_count > n * n {
        return Err(Error::param(format!("zone count {z_count} exceeds the {} grid cells", n * n)));
    }
    if z_count == 1 {
        return FunctionalZoneGrid::new(n, 1, vec![0; n * n]);
    }
    let points = cell_features(config);
    let mut rng = Rng::new(seed);
    let mut centers = plus_plus_init(&points, z_count, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(p, &centers).0;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; z_count];
        let mut counts = vec![0usize; z_count];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for z in 0..z_count {
            if counts[z] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centers[labels[a]]);
                        let db = sq_dist(&points[b], &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty grid");
                centers[z] = points[far].clone();
            } else {
                centers[z] = sums[z].iter().map(|s| s / counts[z] as f64).collect();
            }
        }
    }
    FunctionalZoneGrid::new(n, z_count, labels)
}

fn cell_features(config: &LandUseConfiguration) -> Vec<Vec<f64>> {
    let n = config.n();
    let scale = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let cell = config.cell(r, c);
            let total: f64 = cell.iter().sum();
            let mut f: Vec<f64> = if total > 0.0 {
                cell.iter().map(|v| v / total).collect()
            } else {
                vec![0.0; cell.len()]
            };
            f.push(COORD_WEIGHT * r as f64 / scale);
            f.push(COORD_WEIGHT * c as f64 / scale);
            out.push(f);
        }
    }
    out
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.below(points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.below(points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

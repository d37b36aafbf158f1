//! Builds a land-use configuration from raw POI points, clusters it into
//! functional zones, and bins a set of green ratios into guidance levels.

use landgen::grid::{assign_green_level, build_configuration, cluster_zones, BoundingBox, PoiPoint};
use landgen::neural::Rng;

fn main() -> landgen::Result<()> {
    let bbox = BoundingBox::new(39.90, 39.91, 116.40, 116.41)?;
    let (n, m) = (4, 3);
    let mut rng = Rng::new(5);
    // Category 0 clusters in the north-west, 1 in the south-east, 2 is scattered.
    let mut points = Vec::new();
    for _ in 0..300 {
        let category = rng.below(m);
        let (lat, lon) = match category {
            0 => (rng.uniform_range(39.905, 39.91), rng.uniform_range(116.40, 116.405)),
            1 => (rng.uniform_range(39.90, 39.905), rng.uniform_range(116.405, 116.41)),
            _ => (rng.uniform_range(39.90, 39.91), rng.uniform_range(116.40, 116.41)),
        };
        points.push(PoiPoint { lat, lon, category });
    }
    let config = build_configuration(&points, &bbox, n, m)?;
    println!("{} points over {n}x{n} cells, per category {:?}", config.total(), config.category_totals());

    let zones = cluster_zones(&config, 3, 1)?;
    for row in zones.to_nested() {
        println!("  {row:?}");
    }

    let green: Vec<f64> = (0..10).map(|i| i as f64 / 20.0).collect();
    let levels: Vec<usize> = (0..green.len()).map(|k| assign_green_level(&green, k).map(|l| l.index())).collect::<Result<_, _>>()?;
    println!("green ratios {green:?}\nlevels       {levels:?}");

    let outside = PoiPoint { lat: 40.0, lon: 116.40, category: 0 };
    if let Err(e) = build_configuration(&[outside], &bbox, n, m) {
        println!("rejected: {e}");
    }
    Ok(())
}

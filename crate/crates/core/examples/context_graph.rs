//! Turns raw price, POI and mobility logs into the 8-context ring graph, then
//! trains the graph autoencoder on a synthetic corpus and embeds one graph.

use landgen::context::{
    build_context_graph, house_price_change, poi_ratio, private_transport_features, public_transport_features, BusEvent,
    BusLog, ContextFeatureRow, FlowDirection, TaxiLog, TaxiTrip, DIRECTIONS,
};
use landgen::grid::{synthesize_city, SynthesisParams};
use landgen::neural::Rng;
use landgen::vgae::{train_vgae, FeatureScaler, VgaeConfig};

fn row(id: usize, rng: &mut Rng) -> landgen::Result<ContextFeatureRow> {
    let prices: Vec<f64> = (0..6).map(|t| 50_000.0 + 400.0 * t as f64 * (1.0 + id as f64) + 100.0 * rng.normal()).collect();
    let events = (0..20 + 6 * id)
        .map(|i| BusEvent {
            context_id: id,
            direction: [FlowDirection::Leave, FlowDirection::Arrive, FlowDirection::Transit][i % 3],
            price: 2.0,
        })
        .collect();
    let bus = BusLog { context_id: id, days: 7.0, area_m2: 1.0e6, stop_count: 3 + id, events };
    let trips = (0..20)
        .map(|_| TaxiTrip { context_id: id, direction: FlowDirection::Leave, distance_km: 3.0 + rng.uniform(), duration_h: 0.2 })
        .collect();
    let taxi = TaxiLog { context_id: id, days: 7.0, trips };
    Ok(ContextFeatureRow {
        price_change: house_price_change(&prices)?,
        poi_ratio: poi_ratio(&[10.0 + id as f64, 5.0, 1.0]),
        public_transport: public_transport_features(&bus),
        private_transport: private_transport_features(&taxi),
    })
}

fn main() -> landgen::Result<()> {
    let mut rng = Rng::new(3);
    let rows = (0..8).map(|id| row(id, &mut rng)).collect::<landgen::Result<Vec<_>>>()?;
    let graph = build_context_graph(&rows)?;
    println!("context graph: {} vertices x {} features", graph.features().nrows(), graph.feature_width());
    for (dir, r) in DIRECTIONS.iter().zip(&rows) {
        println!("  {dir:<2} bus {:.3?}", r.public_transport);
    }

    let samples = synthesize_city(&SynthesisParams { k_samples: 300, ..SynthesisParams::default() })?;
    let scaler = FeatureScaler::fit(samples.iter().map(|s| &s.context))?;
    let graphs = samples.iter().map(|s| scaler.transform(&s.context)).collect::<landgen::Result<Vec<_>>>()?;
    let config = VgaeConfig { epochs: 60, ..VgaeConfig::default() };
    let trained = train_vgae(&graphs, &config, &mut Rng::new(1))?;
    let curve = &trained.loss_curve;
    println!("VGAE loss {:.4} -> {:.4} over {} epochs", curve[0], curve[curve.len() - 1], curve.len());
    let embedding = trained.model.embed_context(graphs[0].view())?;
    println!("embedding of sample 0: {} values, first {:?}", embedding.0.len(), &embedding.0[..4]);
    Ok(())
}

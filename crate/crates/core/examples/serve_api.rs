//! Trains a small model, writes it next to its dataset, and serves the HTTP API.
//!
//! cargo run --release --example serve_api -- [port]
//! curl localhost:8080/api/meta
//! curl -X POST localhost:8080/api/generate -H 'content-type: application/json' \
//!      -d '{"green_level": 2, "context": {"sample_id": 0}, "count": 2, "seed": 1}'

use landgen::checkpoint::save_checkpoint;
use landgen::cluvae::Variant;
use landgen::grid::{save_dataset, synthesize_city, SynthesisParams};
use landgen::pipeline::{train_pipeline, PipelineConfig};
use landgen::service::{serve, DEFAULT_PORT};

#[tokio::main]
async fn main() -> landgen::Result<()> {
    let port = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(DEFAULT_PORT);
    let dir = std::env::temp_dir().join("landgen-serve-example");
    std::fs::create_dir_all(&dir).map_err(|e| landgen::Error::io(dir.display().to_string(), e))?;
    let (data_path, model_path) = (dir.join("data.json"), dir.join("model.json"));

    let data = synthesize_city(&SynthesisParams { k_samples: 200, ..SynthesisParams::default() })?;
    let mut config = PipelineConfig::new(Variant::Full, 42);
    config.train.epochs = 5;
    config.vgae.epochs = 20;
    let run = tokio::task::block_in_place(|| train_pipeline(&data, &config))?;
    save_dataset(&data, &data_path)?;
    save_checkpoint(&run.model, &model_path)?;
    println!("test sample ids start with {:?}", &run.model.meta.test_ids[..3]);
    println!("serving on http://localhost:{port}/api/health");
    serve(model_path, data_path, port, None).await
}

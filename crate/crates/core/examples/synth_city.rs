//! Synthesizes a small city corpus, saves it, and summarises it per green level.
//!
//! cargo run --release --example synth_city -- [out.json]

use landgen::grid::{load_dataset, save_dataset, synthesize_city, GreenLevel, SynthesisParams};

fn main() -> landgen::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_city.json".into());
    let params = SynthesisParams { k_samples: 500, ..SynthesisParams::default() };
    let samples = synthesize_city(&params)?;
    save_dataset(&samples, &out)?;
    assert_eq!(load_dataset(&out)?, samples);
    println!("wrote {} samples (N={}, M={}, Z={}) to {out}", samples.len(), params.n, params.m, params.z_count);

    for level in GreenLevel::all() {
        let of_level: Vec<_> = samples.iter().filter(|s| s.green_level == level).collect();
        let mean = of_level.iter().map(|s| s.configuration.total()).sum::<f64>() / of_level.len().max(1) as f64;
        println!("green{}: {:>4} samples, mean POI count {mean:.1}", level.index(), of_level.len());
    }

    let first = &samples[0];
    println!("sample {} zone map:", first.sample_id);
    for row in first.zones.to_nested() {
        println!("  {}", row.iter().map(|z| z.to_string()).collect::<String>());
    }
    Ok(())
}

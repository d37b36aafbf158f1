//! Ablation, stability and square-size studies at a reduced scale.
//!
//! cargo run --release --example studies

use landgen::cluvae::Variant;
use landgen::evaluation::{ablation_study, square_size_study, stability_study, ExperimentRunner};
use landgen::grid::{synthesize_city, SynthesisParams};
use landgen::pipeline::PipelineConfig;

fn small_config() -> PipelineConfig {
    let mut config = PipelineConfig { hidden: 32, ..PipelineConfig::default() };
    config.train.epochs = 30;
    config.vgae.epochs = 40;
    config
}

fn main() -> landgen::Result<()> {
    let params = SynthesisParams { k_samples: 300, ..SynthesisParams::default() };
    let data = synthesize_city(&params)?;
    let mut runner = ExperimentRunner::new(&data, small_config(), 5);

    let ablation = ablation_study(&mut runner, &[1, 2])?;
    println!("ablation over seeds {:?}\n{}", ablation.seeds, ablation.to_table());

    // Seeds 1 and 2 were already trained for the ablation and are reused here.
    let stability = stability_study(&mut runner, 3, &[Variant::Full, Variant::NoVariational], 1)?;
    println!("stability over seeds {:?}\n{}", stability.seeds, stability.to_table());
    println!("{} distinct training runs", runner.runs_completed());

    let square = square_size_study(&params, &[5, 10, 20], &small_config(), 5)?;
    println!("square size\n{}", square.to_table());
    Ok(())
}

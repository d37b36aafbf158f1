//! Trains the full model on the default synthetic corpus, then generates for each green level.
//!
//! cargo run --release --example train_and_generate -- [epochs]

use landgen::cluvae::Variant;
use landgen::evaluation::evaluate;
use landgen::grid::{synthesize_city, GreenLevel, SynthesisParams};
use landgen::neural::Rng;
use landgen::pipeline::{train_pipeline, PipelineConfig};

fn main() -> landgen::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let data = synthesize_city(&SynthesisParams::default())?;
    let mut config = PipelineConfig::new(Variant::Full, 42);
    config.train.epochs = epochs;

    let t0 = std::time::Instant::now();
    let run = train_pipeline(&data, &config)?;
    println!("trained {} parameters in {:.1?}", run.model.cvae.parameter_count(), t0.elapsed());
    println!("initial loss {:?}", run.outcome.initial);
    println!("final loss   {:?}", run.outcome.final_loss);

    let test = run.model.test_samples(&data)?;
    let report = evaluate(&run.model, &test, 5, 42)?;
    print!("{}", report.to_table());

    // Same context set, every guidance level.
    let mut rng = Rng::new(7);
    for level in GreenLevel::all() {
        let mut total = 0.0;
        for s in test.iter().take(40) {
            for g in run.model.generate(&s.context, level, 5, &mut rng)? {
                total += g.total();
            }
        }
        println!("green{} mean generated intensity {:.1}", level.index(), total / 200.0);
    }
    Ok(())
}

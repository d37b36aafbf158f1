//! Evaluates a briefly trained model and the replay oracle, then recomputes one
//! level's JS divergence by hand from the raw dump.

use landgen::cluvae::Variant;
use landgen::evaluation::{evaluate, evaluate_with_dump, group_distribution, js, ReplayGenerator};
use landgen::grid::{synthesize_city, SynthesisParams};
use landgen::pipeline::{train_pipeline, PipelineConfig};

fn main() -> landgen::Result<()> {
    let data = synthesize_city(&SynthesisParams { k_samples: 400, ..SynthesisParams::default() })?;
    let mut config = PipelineConfig::new(Variant::Full, 42);
    config.train.epochs = 10;
    config.vgae.epochs = 50;
    let run = train_pipeline(&data, &config)?;
    let test = run.model.test_samples(&data)?;

    let replay = evaluate(&ReplayGenerator, &test, 5, 42)?;
    println!("replay oracle averages: {:?}", replay.averages());

    let (report, dump) = evaluate_with_dump(&run.model, &test, 5, 42)?;
    print!("{}", report.to_table());

    let level = dump.levels.iter().find(|l| !l.originals.is_empty()).expect("non-empty level");
    let as_configs = |flat: &[Vec<f64>]| {
        flat.iter()
            .map(|v| landgen::grid::LandUseConfiguration::from_flat(dump.n, dump.m, v.clone()))
            .collect::<landgen::Result<Vec<_>>>()
    };
    let p = group_distribution(&as_configs(&level.originals)?)?;
    let q = group_distribution(&as_configs(&level.generated)?)?;
    let by_hand = js(&p.probs, &q.probs)?;
    let reported = report.per_level[level.level].metrics.expect("evaluated level").js;
    println!("green{} JS from dump {by_hand:.6}, reported {reported:.6}", level.level);
    Ok(())
}

//! Compares the hand-derived CLUVAE gradients against central differences for every variant.

use landgen::cluvae::{Batch, CluvaeDims, CluvaeModel, Variant};
use landgen::neural::{finite_difference_check, flatten_grads, flatten_layers, unflatten_layers, Rng};
use ndarray::Array2;

fn main() -> landgen::Result<()> {
    let dims = CluvaeDims { n: 5, m: 4, z: 3, condition: 13, latent: 8, hidden: 16 };
    for variant in Variant::ALL {
        let mut rng = Rng::new(11);
        let model = CluvaeModel::new(variant, dims, 0.55, &mut rng)?;
        let batch = Batch {
            x: Array2::from_shape_simple_fn((4, dims.x_width()), || rng.poisson(1.0) as f64),
            c: Array2::from_shape_simple_fn((4, dims.condition), || rng.normal()),
            zones: (0..4 * dims.cells()).map(|_| rng.below(dims.z)).collect(),
        };
        let eps = model.sample_noise(4, &mut rng);
        let params = flatten_layers(model.layers().into_iter().map(|(_, l)| l));
        let report = finite_difference_check(
            |p| {
                let mut m = model.clone();
                unflatten_layers(m.layers_mut().into_iter().map(|(_, l)| l), p);
                let (loss, grads) = m.loss_and_grads(&batch, &eps, true).expect("shapes match");
                (loss.total, flatten_grads(&grads.expect("requested").layers))
            },
            &params,
            1e-5,
            1e-4,
        );
        println!(
            "{:<15} {:>6} params  max rel err {:.2e}  {}",
            variant.name(),
            report.checked,
            report.max_relative_error,
            if report.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}

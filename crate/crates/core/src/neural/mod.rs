//! Dense numerical engine shared by the graph embedding and the CVAE.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod rng;

pub use adam::{AdamConfig, AdamState, ParamBlock};
pub use dense::{log_sigmoid, sigmoid, Activation, DenseCache, DenseGrads, DenseLayer};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use rng::Rng;

/// Named weight/bias blocks of `layers`, paired with matching gradients, for an optimizer step.
pub fn layer_blocks<'a>(
    layers: Vec<(&'a str, &'a mut DenseLayer)>,
    grads: &'a [DenseGrads],
) -> Vec<ParamBlock<'a>> {
    assert_eq!(layers.len(), grads.len(), "one gradient per layer");
    let mut blocks = Vec::with_capacity(2 * layers.len());
    for ((name, layer), grad) in layers.into_iter().zip(grads) {
        let DenseLayer { weight, bias, .. } = layer;
        blocks.push(ParamBlock {
            name: format!("{name}.weight"),
            values: weight.as_slice_mut().expect("standard layout"),
            grad: grad.weight.as_slice().expect("standard layout"),
        });
        blocks.push(ParamBlock {
            name: format!("{name}.bias"),
            values: bias.as_slice_mut().expect("standard layout"),
            grad: grad.bias.as_slice().expect("standard layout"),
        });
    }
    blocks
}

/// Concatenates weights then bias of each layer, in order.
pub fn flatten_layers<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.weight.iter());
        out.extend(layer.bias.iter());
    }
    out
}

/// Inverse of [`flatten_layers`]; returns the number of values consumed.
pub fn unflatten_layers<'a>(layers: impl IntoIterator<Item = &'a mut DenseLayer>, flat: &[f64]) -> usize {
    let mut pos = 0;
    for layer in layers {
        for w in layer.weight.iter_mut() {
            *w = flat[pos];
            pos += 1;
        }
        for b in layer.bias.iter_mut() {
            *b = flat[pos];
            pos += 1;
        }
    }
    pos
}

pub fn flatten_grads<'a>(grads: impl IntoIterator<Item = &'a DenseGrads>) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend(g.weight.iter());
        out.extend(g.bias.iter());
    }
    out
}

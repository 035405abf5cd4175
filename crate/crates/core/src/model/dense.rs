use std::ops::Range;

use crate::data::LabeledDataset;
use crate::param::ParamVec;

/// A fully-connected layer stored as `outputs x inputs` row-major weights
/// followed by `outputs` biases, starting at `offset` in the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.offset..self.offset + self.outputs * self.inputs
    }

    pub fn bias_range(&self) -> Range<usize> {
        let start = self.offset + self.outputs * self.inputs;
        start..start + self.outputs
    }

    fn apply(&self, x: &[f64], input: &[f64]) -> Vec<f64> {
        let w = &x[self.weight_range()];
        let b = &x[self.bias_range()];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b[o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    }
}

/// Activations of every layer, input first. Hidden layers use tanh; the last
/// entry is the raw logits.
pub(super) fn forward(layers: &[Layer], x: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = layer.apply(x, &acts[l]);
        if l + 1 < layers.len() {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    acts
}

pub(super) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(super) fn loss_and_grad(
    layers: &[Layer],
    x: &ParamVec,
    data: &LabeledDataset,
    rows: &[usize],
    batch: &[usize],
) -> (f64, ParamVec) {
    assert!(!batch.is_empty(), "empty minibatch");
    let mut grad = ParamVec::zeros(x.len());
    let mut loss = 0.0;
    for &pos in batch {
        let row = rows[pos];
        let label = data.label(row);
        let acts = forward(layers, x, data.row(row));
        let logits = acts.last().expect("at least one layer");
        let lse = log_sum_exp(logits);
        loss += lse - logits[label];

        // dL/dz for the output layer is softmax - onehot.
        let mut delta: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
        delta[label] -= 1.0;
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &acts[l];
            let w_start = layer.weight_range().start;
            let b_start = layer.bias_range().start;
            for (o, &d) in delta.iter().enumerate() {
                grad[b_start + o] += d;
                let g_row = &mut grad[w_start + o * layer.inputs..w_start + (o + 1) * layer.inputs];
                for (g, &a) in g_row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let w = &x[layer.weight_range()];
                delta = (0..layer.inputs)
                    .map(|i| {
                        let back: f64 = delta.iter().enumerate().map(|(o, d)| w[o * layer.inputs + i] * d).sum();
                        back * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    (loss * inv, grad)
}

//! Network building blocks on top of the tape: linear layers, MLP chains,
//! and a GRU cell. All entities live in rows; a layer maps n×in to n×out.

use super::tape::{Tape, ValueId};
use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

pub fn linear(tape: &mut Tape, x: ValueId, w: ValueId, b: ValueId) -> ValueId {
    let prod = tape.matmul(x, w);
    tape.add_bias(prod, b)
}

/// Affine chain with `act` between layers; the final layer stays linear.
pub fn mlp_forward(
    tape: &mut Tape,
    x: ValueId,
    layers: &[(ValueId, ValueId)],
    act: Activation,
) -> ValueId {
    assert!(!layers.is_empty(), "mlp needs at least one layer");
    let mut h = x;
    for (k, &(w, b)) in layers.iter().enumerate() {
        h = linear(tape, h, w, b);
        if k + 1 < layers.len() {
            h = match act {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::None => h,
            };
        }
    }
    h
}

/// Gate weights of one GRU cell. Each W maps the concatenation [h, x] of
/// width h_dim + x_dim to h_dim.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub wz: ValueId,
    pub bz: ValueId,
    pub wr: ValueId,
    pub br: ValueId,
    pub wh: ValueId,
    pub bh: ValueId,
}

/// Standard GRU step: z = σ(W_z[h,x]), r = σ(W_r[h,x]),
/// h̃ = tanh(W_h[r⊙h, x]), h' = (1−z)⊙h + z⊙h̃ (computed as h + z⊙(h̃−h)).
pub fn gru_cell(tape: &mut Tape, h: ValueId, x: ValueId, w: &GruWeights) -> ValueId {
    let hx = tape.concat_cols(&[h, x]);
    let z = linear(tape, hx, w.wz, w.bz);
    let z = tape.sigmoid(z);
    let r = linear(tape, hx, w.wr, w.br);
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h);
    let rhx = tape.concat_cols(&[rh, x]);
    let cand = linear(tape, rhx, w.wh, w.bh);
    let cand = tape.tanh(cand);
    let delta = tape.sub(cand, h);
    let gated = tape.mul(z, delta);
    tape.add(h, gated)
}

/// Kaiming-uniform fan-in init for a (rows = fan_in) × cols weight matrix.
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

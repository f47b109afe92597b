use serde::{Deserialize, Serialize};

use crate::neural::DenseNet;

use super::bounds::{propagate_bounds, UnitBounds};
use super::model::{Cmp, MipModel, ObjSense, VarRole};
use super::MipError;

/// Relative padding applied to propagated bounds before they become
/// variable bounds and big-M constants, absorbing floating-point rounding in
/// the interval arithmetic.
const BOUND_PAD: f64 = 1e-9;

fn pad(v: f64) -> f64 {
    BOUND_PAD * (1.0 + v.abs())
}

/// A network compiled into a [`MipModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedNet {
    pub model: MipModel,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
    pub bounds: UnitBounds,
}

/// Counts of the encoding's building blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodingStats {
    pub binaries: usize,
    pub stable_active: usize,
    pub stable_inactive: usize,
}

impl EncodedNet {
    pub fn stats(&self) -> EncodingStats {
        let mut st = EncodingStats::default();
        let hidden = self.bounds.num_layers() - 1;
        for k in 0..hidden {
            for (l, h) in self.bounds.lo[k].iter().zip(&self.bounds.hi[k]) {
                if *h <= 0.0 {
                    st.stable_inactive += 1;
                } else if *l >= 0.0 {
                    st.stable_active += 1;
                } else {
                    st.binaries += 1;
                }
            }
        }
        st
    }
}

/// Encodes a ReLU network over an input box.
///
/// Each hidden unit gets `Σ w·x_prev + b = x − s` with `x, s ≥ 0`. Units
/// whose sign is undetermined get a binary `z` and the rows `x ≤ ub_x·(1 − z)`
/// and `s ≤ ub_s·z`; always-off units have `x` fixed to 0 and always-on units
/// have `s` fixed to 0, without a binary. Each output is a free variable
/// equal to the final affine expression. The objective is left empty.
pub fn encode_network(net: &DenseNet, input_box: &[(f64, f64)]) -> Result<EncodedNet, MipError> {
    let bounds = propagate_bounds(net, input_box)?;
    let mut model = MipModel::new();
    let inputs: Vec<usize> = input_box
        .iter()
        .enumerate()
        .map(|(i, &(l, u))| model.add_var(format!("in_{i}"), l, u, VarRole::Input { index: i }))
        .collect();
    let sizes = net.layer_sizes();
    let layers = net.num_layers();
    let mut prev = inputs.clone();
    for k in 0..layers - 1 {
        let layer = k + 1;
        let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
        let w = net.weight(k);
        let b = net.bias(k);
        let mut cur = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let (lo, hi) = (bounds.lo[k][j], bounds.hi[k][j]);
            let x_hi = if hi <= 0.0 { 0.0 } else { hi + pad(hi) };
            let s_hi = if lo >= 0.0 { 0.0 } else { -lo + pad(lo) };
            let x = model.add_var(format!("x_{layer}_{j}"), 0.0, x_hi, VarRole::X { layer, unit: j });
            let s = model.add_var(format!("s_{layer}_{j}"), 0.0, s_hi, VarRole::S { layer, unit: j });
            let mut terms: Vec<(usize, f64)> = (0..fan_in)
                .filter(|&i| w[j * fan_in + i] != 0.0)
                .map(|i| (prev[i], w[j * fan_in + i]))
                .collect();
            terms.push((x, -1.0));
            terms.push((s, 1.0));
            model.add_constraint(format!("lin_{layer}_{j}"), terms, Cmp::Eq, -b[j]);
            if lo < 0.0 && hi > 0.0 {
                let z = model.add_binary(format!("z_{layer}_{j}"), VarRole::Z { layer, unit: j });
                model.add_constraint(format!("bmx_{layer}_{j}"), vec![(x, 1.0), (z, x_hi)], Cmp::Le, x_hi);
                model.add_constraint(format!("bms_{layer}_{j}"), vec![(s, 1.0), (z, -s_hi)], Cmp::Le, 0.0);
            }
            cur.push(x);
        }
        prev = cur;
    }
    let k = layers - 1;
    let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
    let w = net.weight(k);
    let b = net.bias(k);
    let mut outputs = Vec::with_capacity(fan_out);
    for j in 0..fan_out {
        let (lo, hi) = (bounds.lo[k][j], bounds.hi[k][j]);
        let y = model.add_var(
            format!("out_{j}"),
            lo - pad(lo),
            hi + pad(hi),
            VarRole::Output { index: j },
        );
        let mut terms: Vec<(usize, f64)> = (0..fan_in)
            .filter(|&i| w[j * fan_in + i] != 0.0)
            .map(|i| (prev[i], w[j * fan_in + i]))
            .collect();
        terms.push((y, -1.0));
        model.add_constraint(format!("out_def_{j}"), terms, Cmp::Eq, -b[j]);
        outputs.push(y);
    }
    Ok(EncodedNet {
        model,
        inputs,
        outputs,
        bounds,
    })
}

/// Fixes the given network inputs (by input index) to point values.
pub fn fix_inputs(enc: &mut EncodedNet, indices: &[usize], values: &[f64]) -> Result<(), MipError> {
    if indices.len() != values.len() {
        return Err(MipError::Dimension {
            what: "fixed input values",
            expected: indices.len(),
            got: values.len(),
        });
    }
    for (&i, &v) in indices.iter().zip(values) {
        let var = *enc
            .inputs
            .get(i)
            .ok_or_else(|| MipError::Domain(format!("input index {i} out of range")))?;
        enc.model.fix_var(var, v)?;
    }
    Ok(())
}

/// Sets the objective to maximizing the single output unit.
pub fn set_objective_max_output(enc: &mut EncodedNet) -> Result<(), MipError> {
    if enc.outputs.len() != 1 {
        return Err(MipError::Model(format!(
            "max-output objective needs exactly one output, found {}",
            enc.outputs.len()
        )));
    }
    enc.model.set_objective(ObjSense::Maximize, vec![(enc.outputs[0], 1.0)], 0.0);
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::neural::DenseNet;

use super::MipError;

/// Pre-activation interval of every unit, layer by layer. Entry `k` covers
/// the outputs of affine layer `k` (hidden layer `k + 1`); the final entry is
/// the network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBounds {
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

impl UnitBounds {
    pub fn num_layers(&self) -> usize {
        self.lo.len()
    }

    /// Post-activation interval `[max(0, lo), max(0, hi)]` of a hidden unit.
    pub fn x_bounds(&self, k: usize, j: usize) -> (f64, f64) {
        (self.lo[k][j].max(0.0), self.hi[k][j].max(0.0))
    }

    /// Interval of the slack `s = max(0, −pre)`.
    pub fn s_bounds(&self, k: usize, j: usize) -> (f64, f64) {
        ((-self.hi[k][j]).max(0.0), (-self.lo[k][j]).max(0.0))
    }

    pub fn output(&self) -> (&[f64], &[f64]) {
        (self.lo.last().unwrap(), self.hi.last().unwrap())
    }

    /// Units whose sign is not determined by the box.
    pub fn unstable_units(&self) -> usize {
        let hidden = self.lo.len() - 1;
        (0..hidden)
            .map(|k| {
                self.lo[k]
                    .iter()
                    .zip(&self.hi[k])
                    .filter(|(l, h)| **l < 0.0 && **h > 0.0)
                    .count()
            })
            .sum()
    }
}

/// Interval arithmetic through the network over the input box.
pub fn propagate_bounds(net: &DenseNet, input_box: &[(f64, f64)]) -> Result<UnitBounds, MipError> {
    if input_box.len() != net.input_dim() {
        return Err(MipError::Dimension {
            what: "input box entries",
            expected: net.input_dim(),
            got: input_box.len(),
        });
    }
    for (i, &(l, u)) in input_box.iter().enumerate() {
        if !l.is_finite() || !u.is_finite() || l > u {
            return Err(MipError::Domain(format!("input {i} has invalid box [{l}, {u}]")));
        }
    }
    let sizes = net.layer_sizes();
    let mut prev_lo: Vec<f64> = input_box.iter().map(|b| b.0).collect();
    let mut prev_hi: Vec<f64> = input_box.iter().map(|b| b.1).collect();
    let mut lo_all = Vec::with_capacity(net.num_layers());
    let mut hi_all = Vec::with_capacity(net.num_layers());
    for k in 0..net.num_layers() {
        let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
        let w = net.weight(k);
        let b = net.bias(k);
        let mut lo = vec![0.0; fan_out];
        let mut hi = vec![0.0; fan_out];
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let (mut l, mut h) = (b[j], b[j]);
            for i in 0..fan_in {
                let wi = row[i];
                if wi >= 0.0 {
                    l += wi * prev_lo[i];
                    h += wi * prev_hi[i];
                } else {
                    l += wi * prev_hi[i];
                    h += wi * prev_lo[i];
                }
            }
            lo[j] = l;
            hi[j] = h;
        }
        if k + 1 < net.num_layers() {
            prev_lo = lo.iter().map(|v| v.max(0.0)).collect();
            prev_hi = hi.iter().map(|v| v.max(0.0)).collect();
        }
        lo_all.push(lo);
        hi_all.push(hi);
    }
    Ok(UnitBounds { lo: lo_all, hi: hi_all })
}

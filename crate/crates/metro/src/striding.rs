//! Receptive-field-center planning for strided fully-convolutional stacks.
//!
//! A stack of strided convolutions places its output neurons' receptive
//! fields on a regular grid over the input. With the usual striding logic
//! (top-left element kept per 2x2 block) that grid is biased toward the
//! image origin, and running the same network densely at a smaller test
//! stride shifts the grid. Centered striding reverses the block selection of
//! the last stride-2 layer (bottom-right kept), which distributes the
//! centers symmetrically over the image and makes dense prediction introduce
//! new bins proportionally around each training-time bin.
//!
//! Centers are computed by composing per-layer affine index maps: output
//! index `i` of a layer with stride `s`, kernel `k`, padding `p` and
//! dilation `d` has its central tap at input position `i*s + d*(k-1)/2 - p`
//! (plus one at the reversed layer). Receptive fields are allowed to extend
//! past the image bounds, so edge neurons are not special-cased.

use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};

/// One convolutional layer of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl LayerSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(MetroError::contract("kernel size must be odd"));
        }
        if stride != 1 && stride != 2 {
            return Err(MetroError::contract("stride must be 1 or 2"));
        }
        if dilation == 0 {
            return Err(MetroError::contract("dilation must be at least 1"));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            dilation,
        })
    }

    /// Central-tap offset of output index 0 into this layer's input.
    fn offset(&self) -> i64 {
        (self.dilation * (self.kernel - 1) / 2) as i64 - self.padding as i64
    }
}

/// Block-selection variant at stride-2 layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrideVariant {
    /// Keep the top-left element per 2x2 block (the usual convolution).
    Normal,
    /// Reverse the last stride-2 layer: keep the bottom-right element.
    Centered,
}

/// Layer stack with variant, input size and derived center geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StridePlan {
    pub layers: Vec<LayerSpec>,
    pub variant: StrideVariant,
    pub input_size: usize,
}

/// Train/test center-distribution diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideMismatchReport {
    /// |mean(train centers) - mean(test centers)| in px.
    pub mean_offset_px: f64,
    /// Worst deviation of `c_i + c_(n-1-i)` from `2 * image_center`, px,
    /// over both center sets.
    pub max_asymmetry_px: f64,
    /// Mean/max distance from each train center to its nearest test center.
    pub mean_nearest_px: f64,
    pub max_nearest_px: f64,
}

impl StridePlan {
    pub fn new(layers: Vec<LayerSpec>, variant: StrideVariant, input_size: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(MetroError::contract("layer stack must not be empty"));
        }
        let plan = Self {
            layers,
            variant,
            input_size,
        };
        if input_size % plan.effective_stride() != 0 {
            return Err(MetroError::contract(
                "input size must be divisible by the effective stride",
            ));
        }
        Ok(plan)
    }

    /// A stack of 3x3 stride-2 convolutions with padding 1 (one per factor
    /// of 2 in `effective_stride`).
    pub fn canonical(effective_stride: usize, variant: StrideVariant, input_size: usize) -> Result<Self> {
        if !effective_stride.is_power_of_two() || effective_stride < 2 {
            return Err(MetroError::contract("effective stride must be a power of two >= 2"));
        }
        let n = effective_stride.trailing_zeros() as usize;
        let layers = (0..n)
            .map(|_| LayerSpec::new(3, 2, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, variant, input_size)
    }

    pub fn effective_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Index of the layer whose block selection is reversed, if any.
    pub fn reversed_layer(&self) -> Option<usize> {
        match self.variant {
            StrideVariant::Normal => None,
            StrideVariant::Centered => self.layers.iter().rposition(|l| l.stride == 2),
        }
    }

    /// Per-axis receptive-field center coordinates (px) of the output bins.
    pub fn rf_centers(&self) -> Vec<f64> {
        let reversed = self.reversed_layer();
        // (a, b): affine map from the current deepest output index to input px.
        let mut a: i64 = 1;
        let mut b: i64 = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            let shift = if reversed == Some(li) { 1 } else { 0 };
            b += a * (layer.offset() + shift);
            a *= layer.stride as i64;
        }
        let n = self.input_size / self.effective_stride();
        (0..n as i64).map(|i| (a * i + b) as f64).collect()
    }

    /// Convert to a dense-prediction plan with the given smaller test stride:
    /// trailing stride-2 layers become stride 1, and the dilation and padding
    /// of the layers after each converted one are doubled.
    pub fn to_test_stride(&self, test_stride: usize) -> Result<StridePlan> {
        let train = self.effective_stride();
        if test_stride > train || train % test_stride != 0 {
            return Err(MetroError::contract(
                "test stride must divide the training stride",
            ));
        }
        let mut layers = self.layers.clone();
        let mut removals = train / test_stride;
        while removals > 1 {
            let last = layers
                .iter()
                .rposition(|l| l.stride == 2)
                .ok_or_else(|| MetroError::contract("no stride-2 layer left to remove"))?;
            layers[last].stride = 1;
            for l in layers.iter_mut().skip(last + 1) {
                l.dilation *= 2;
                l.padding *= 2;
            }
            removals /= 2;
        }
        StridePlan::new(layers, self.variant, self.input_size)
    }
}

/// Compare the receptive-field center distributions of two plans over the
/// same layer stack (e.g. training stride vs dense test stride).
pub fn stride_mismatch_report(train: &StridePlan, test: &StridePlan) -> Result<StrideMismatchReport> {
    if train.input_size != test.input_size
        || train.layers.len() != test.layers.len()
        || train
            .layers
            .iter()
            .zip(&test.layers)
            .any(|(a, b)| a.kernel != b.kernel)
    {
        return Err(MetroError::contract("incompatible layer stacks"));
    }
    let ct = train.rf_centers();
    let ce = test.rf_centers();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let target = train.input_size as f64;
    let asym = |v: &[f64]| {
        (0..v.len())
            .map(|i| (v[i] + v[v.len() - 1 - i] - target).abs())
            .fold(0.0f64, f64::max)
    };
    let mut nearest = Vec::with_capacity(ct.len());
    for c in &ct {
        let d = ce
            .iter()
            .map(|e| (c - e).abs())
            .fold(f64::INFINITY, f64::min);
        nearest.push(d);
    }
    Ok(StrideMismatchReport {
        mean_offset_px: (mean(&ct) - mean(&ce)).abs(),
        max_asymmetry_px: asym(&ct).max(asym(&ce)),
        mean_nearest_px: mean(&nearest),
        max_nearest_px: nearest.iter().fold(0.0f64, |m, v| m.max(*v)),
    })
}

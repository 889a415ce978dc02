//! Flat parameter storage with an MLP layout descriptor.
//!
//! Parameters live in one contiguous `Vec<f64>` so the trainer can hand the
//! whole vector to the tape or an optimizer. The layout maps
//! (layer, row, col) to a flat index; per-layer weight rows and biases are
//! contiguous slices.

use crate::autodiff::Mat;
use crate::{Error, Result};

/// One dense layer: `out x input` weight matrix followed by `out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub out: usize,
    pub input: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.out * (self.input + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(layers: Vec<LayerShape>) -> Self {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        ParamLayout { layers, offsets, total }
    }

    /// Layout of a fully connected net visiting the given widths, e.g.
    /// `[4, 2, 2, 2]` for input 4, two hidden layers of 2, output 2.
    pub fn mlp(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| LayerShape { out: w[1], input: w[0] })
            .collect();
        ParamLayout::new(layers)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> LayerShape {
        self.layers[l]
    }

    pub fn flat_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let shape = self.layers[layer];
        debug_assert!(row < shape.out && col < shape.input);
        self.offsets[layer] + row * shape.input + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        let shape = self.layers[layer];
        debug_assert!(row < shape.out);
        self.offsets[layer] + shape.out * shape.input + row
    }

    /// Contiguous weight row `(layer, row, ..)`.
    pub fn weight_row<'a, T>(&self, params: &'a [T], layer: usize, row: usize) -> &'a [T] {
        let shape = self.layers[layer];
        let start = self.offsets[layer] + row * shape.input;
        &params[start..start + shape.input]
    }

    /// Contiguous bias slice of a layer.
    pub fn bias<'a, T>(&self, params: &'a [T], layer: usize) -> &'a [T] {
        let shape = self.layers[layer];
        let start = self.offsets[layer] + shape.out * shape.input;
        &params[start..start + shape.out]
    }
}

/// Flat parameter vector plus the layout interpreting it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.total()];
        ParamVector { values, layout }
    }

    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: layout.total(),
                got: values.len(),
                context: "parameter vector length vs layout",
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Expand into per-layer (weights, biases) pairs.
    pub fn unflatten(&self) -> Vec<(Mat<f64>, Vec<f64>)> {
        (0..self.layout.layer_count())
            .map(|l| {
                let shape = self.layout.layer(l);
                let w = Mat::from_fn(shape.out, shape.input, |i, j| {
                    self.values[self.layout.flat_index(l, i, j)]
                });
                let b = self.layout.bias(&self.values, l).to_vec();
                (w, b)
            })
            .collect()
    }

    /// Rebuild the flat vector from per-layer pairs; inverse of `unflatten`.
    pub fn from_layers(layers: &[(Mat<f64>, Vec<f64>)]) -> Result<Self> {
        let shapes = layers
            .iter()
            .map(|(w, b)| {
                if w.rows() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: w.rows(),
                        got: b.len(),
                        context: "bias length vs weight rows",
                    });
                }
                Ok(LayerShape { out: w.rows(), input: w.cols() })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = ParamLayout::new(shapes);
        let mut values = Vec::with_capacity(layout.total());
        for (w, b) in layers {
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    values.push(w.at(i, j));
                }
            }
            values.extend_from_slice(b);
        }
        Ok(ParamVector { values, layout })
    }
}

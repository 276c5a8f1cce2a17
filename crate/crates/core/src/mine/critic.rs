//! The scalar critic `f(x‖y)` used inside the Donsker–Varadhan bound.
//!
//! A stack of affine layers with leaky-rectifier activations in between. Each
//! layer halves its input width (never dropping below `min_width`); the last
//! layer maps to a single scalar. All parameters live in one flat `Vec<f64>`
//! so the optimizer and finite-difference checks can treat them uniformly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Number of affine layers, including the scalar output layer.
    pub depth: usize,
    /// Lower bound on hidden widths produced by halving.
    pub min_width: usize,
    /// Leaky-rectifier slope for negative inputs.
    pub negative_slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            depth: 10,
            min_width: 8,
            negative_slope: 0.01,
        }
    }
}

impl CriticConfig {
    /// Layer widths `[in, h1, ..., 1]` for an input of `input_width` columns.
    pub fn widths(&self, input_width: usize) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.depth + 1);
        widths.push(input_width);
        let mut w = input_width;
        for _ in 1..self.depth {
            w = (w / 2).max(self.min_width).max(1);
            widths.push(w);
        }
        widths.push(1);
        widths
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    input: usize,
    output: usize,
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticNetwork {
    config: CriticConfig,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Per-layer activations kept from a forward pass for backpropagation.
#[derive(Debug)]
pub struct ForwardCache {
    /// `activations[k]` is the input to layer `k`; `activations[0]` is the batch.
    activations: Vec<Array2<f64>>,
    outputs: Array1<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> ArrayView1<'_, f64> {
        self.outputs.view()
    }
}

impl CriticNetwork {
    fn layout(config: &CriticConfig, input_width: usize) -> Result<(Vec<LayerShape>, usize)> {
        if config.depth == 0 {
            return Err(Error::InvalidArgument("critic depth must be >= 1".into()));
        }
        if input_width == 0 {
            return Err(Error::InvalidArgument("critic input width must be >= 1".into()));
        }
        let widths = config.widths(input_width);
        let mut layers = Vec::with_capacity(config.depth);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (input, output) = (pair[0], pair[1]);
            let weight_offset = offset;
            offset += input * output;
            let bias_offset = offset;
            offset += output;
            layers.push(LayerShape {
                input,
                output,
                weight_offset,
                bias_offset,
            });
        }
        Ok((layers, offset))
    }

    /// Builds a critic with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(config: CriticConfig, input_width: usize, rng: &mut R) -> Result<Self> {
        let (layers, count) = Self::layout(&config, input_width)?;
        let mut params = vec![0.0; count];
        for layer in &layers {
            let limit = (6.0 / (layer.input + layer.output) as f64).sqrt();
            for p in &mut params[layer.weight_offset..layer.bias_offset] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self { config, layers, params })
    }

    /// Builds a critic from explicit parameters (layout as in [`Self::params`]).
    pub fn from_params(config: CriticConfig, input_width: usize, params: Vec<f64>) -> Result<Self> {
        let (layers, count) = Self::layout(&config, input_width)?;
        if params.len() != count {
            return Err(Error::Shape(format!(
                "expected {count} critic parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer widths from input to the scalar output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.input).collect();
        w.push(1);
        w
    }

    /// Flat parameter vector: for each layer, row-major `output × input`
    /// weights followed by `output` biases.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn weight(&self, k: usize) -> ArrayView2<'_, f64> {
        let l = self.layers[k];
        ArrayView2::from_shape((l.output, l.input), &self.params[l.weight_offset..l.bias_offset])
            .expect("layer layout is consistent")
    }

    fn bias(&self, k: usize) -> ArrayView1<'_, f64> {
        let l = self.layers[k];
        ArrayView1::from(&self.params[l.bias_offset..l.bias_offset + l.output])
    }

    fn check_width(&self, rows: &ArrayView2<'_, f64>) -> Result<()> {
        if rows.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "critic expects rows of width {}, got {}",
                self.input_width(),
                rows.ncols()
            )));
        }
        Ok(())
    }

    fn leaky(&self, z: &mut Array2<f64>) {
        let slope = self.config.negative_slope;
        z.mapv_inplace(|v| if v > 0.0 { v } else { v * slope });
    }

    /// Critic outputs, one scalar per row.
    pub fn forward(&self, rows: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_width(&rows)?;
        let last = self.layers.len() - 1;
        let mut act: Array2<f64> = rows.to_owned();
        for k in 0..=last {
            let mut z = act.dot(&self.weight(k).t());
            z += &self.bias(k);
            if k < last {
                self.leaky(&mut z);
            }
            act = z;
        }
        Ok(act.index_axis_move(Axis(1), 0))
    }

    /// Forward pass that retains activations for [`Self::backward`].
    pub fn forward_cached(&self, rows: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_width(&rows)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(rows.to_owned());
        let mut outputs = None;
        for k in 0..=last {
            let mut z = activations[k].dot(&self.weight(k).t());
            z += &self.bias(k);
            if k < last {
                self.leaky(&mut z);
                activations.push(z);
            } else {
                outputs = Some(z.index_axis_move(Axis(1), 0));
            }
        }
        Ok(ForwardCache {
            activations,
            outputs: outputs.expect("at least one layer"),
        })
    }

    /// Accumulates into `grad` the gradient of `Σ_b upstream[b] · f(row_b)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView1<'_, f64>, grad: &mut [f64]) -> Result<()> {
        if upstream.len() != cache.outputs.len() {
            return Err(Error::Shape(format!(
                "upstream has {} entries for {} rows",
                upstream.len(),
                cache.outputs.len()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer has wrong length".into()));
        }
        let slope = self.config.negative_slope;
        let mut delta: Array2<f64> = upstream.to_owned().insert_axis(Axis(1));
        for k in (0..self.layers.len()).rev() {
            let l = self.layers[k];
            let input = &cache.activations[k];
            let d_weight = delta.t().dot(input);
            {
                let mut gw =
                    ndarray::ArrayViewMut2::from_shape((l.output, l.input), &mut grad[l.weight_offset..l.bias_offset])
                        .expect("layer layout is consistent");
                gw += &d_weight;
            }
            let d_bias = delta.sum_axis(Axis(0));
            for (g, d) in grad[l.bias_offset..l.bias_offset + l.output]
                .iter_mut()
                .zip(d_bias.iter())
            {
                *g += d;
            }
            if k > 0 {
                let mut d_input = delta.dot(&self.weight(k));
                // The activation preserves sign, so its derivative is read off the output.
                ndarray::Zip::from(&mut d_input).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d *= slope;
                    }
                });
                delta = d_input;
            }
        }
        Ok(())
    }

    /// Outputs and the gradient of `Σ_b upstream[b] · f(row_b)` with respect to the parameters.
    pub fn forward_backward(
        &self,
        rows: ArrayView2<'_, f64>,
        upstream: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, Vec<f64>)> {
        let cache = self.forward_cached(rows)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&cache, upstream, &mut grad)?;
        Ok((cache.outputs, grad))
    }
}

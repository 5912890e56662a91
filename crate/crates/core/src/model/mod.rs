//! The model graph: layer descriptions over one contiguous weight buffer.

mod builder;
mod flops;
pub(crate) mod io;
mod transform;

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builder::GraphBuilder;
pub use flops::{layer_flops, model_flops, LayerFlops, FlopsReport};
pub use io::{
    decode_weights, encode_weights, load_model, load_model_with, save_model, save_model_with, write_atomic, Manifest,
    ParseMode, Provenance,
};
pub use transform::conv1x1_to_linear;

/// Name used in `inputs` to refer to the graph input tensor.
pub const GRAPH_INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    Linear,
    Relu,
    GlobalAvgPool,
    Add,
    Flatten,
}

impl OpKind {
    pub fn has_weights(self) -> bool {
        matches!(self, OpKind::Conv2d | OpKind::Linear)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Add => "add",
            OpKind::Flatten => "flatten",
        }
    }
}

/// Position of a layer inside an inverted-residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Pointwise expansion.
    Pw,
    /// Pointwise bottleneck (linear projection).
    Pwl,
    /// Squeeze-excitation.
    Se,
    /// Depthwise.
    Dw,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pw => "pw",
            Role::Pwl => "pwl",
            Role::Se => "se",
            Role::Dw => "dw",
            Role::Other => "other",
        }
    }

    pub fn is_pointwise(self) -> bool {
        matches!(self, Role::Pw | Role::Pwl | Role::Se)
    }
}

/// One layer of a [`ModelGraph`].
///
/// Offsets and lengths address the graph's weight buffer in elements, not
/// bytes. `input_h`/`input_w` give the spatial size of the tensor this layer
/// consumes. A linear layer applied to a 4-D activation acts independently at
/// every spatial position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub op_kind: OpKind,
    pub role: Role,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub groups: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
    pub prunable: bool,
    /// Producers of this layer's inputs. Empty means "the previous layer"
    /// (or the graph input for the first layer).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

pub(crate) const LAYER_FIELDS: &[&str] = &[
    "name",
    "op_kind",
    "role",
    "in_channels",
    "out_channels",
    "kernel_h",
    "kernel_w",
    "stride",
    "groups",
    "input_h",
    "input_w",
    "weight_offset",
    "weight_len",
    "bias_offset",
    "bias_len",
    "prunable",
    "inputs",
];

impl LayerSpec {
    pub fn weight_range(&self) -> Range<usize> {
        self.weight_offset..self.weight_offset + self.weight_len
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias_offset..self.bias_offset + self.bias_len
    }

    pub fn is_pointwise_conv(&self) -> bool {
        self.op_kind == OpKind::Conv2d && self.kernel_h == 1 && self.kernel_w == 1 && self.groups == 1
    }

    /// Spatial size of this layer's output.
    pub fn output_hw(&self) -> (usize, usize) {
        match self.op_kind {
            OpKind::Conv2d => (
                self.input_h.div_ceil(self.stride),
                self.input_w.div_ceil(self.stride),
            ),
            OpKind::Linear | OpKind::Relu | OpKind::Add => (self.input_h, self.input_w),
            OpKind::GlobalAvgPool | OpKind::Flatten => (1, 1),
        }
    }

    /// Number of output positions at which every weight is used once.
    pub fn weight_reuse(&self) -> u64 {
        let (h, w) = self.output_hw();
        (h * w) as u64
    }

    /// Columns of the weight viewed as a 2-D `(out_channels, cols)` matrix.
    pub fn weight_cols(&self) -> usize {
        self.weight_len.checked_div(self.out_channels).unwrap_or(0)
    }

    fn expected_weight_len(&self) -> usize {
        match self.op_kind {
            OpKind::Conv2d => {
                self.out_channels * (self.in_channels / self.groups) * self.kernel_h * self.kernel_w
            }
            OpKind::Linear => self.out_channels * self.in_channels,
            _ => 0,
        }
    }

    /// Checks every per-layer invariant that does not depend on the buffer.
    pub fn validate(&self) -> Result<()> {
        let name = self.name.as_str();
        if name.is_empty() {
            return Err(Error::layer("<unnamed>", "name", "must be non-empty"));
        }
        if name == GRAPH_INPUT {
            return Err(Error::layer(name, "name", "is reserved for the graph input"));
        }
        for (field, value) in [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("groups", self.groups),
            ("input_h", self.input_h),
            ("input_w", self.input_w),
        ] {
            if value == 0 {
                return Err(Error::layer(name, field, "must be positive"));
            }
        }
        match self.op_kind {
            OpKind::Conv2d => {
                if !self.in_channels.is_multiple_of(self.groups) {
                    return Err(Error::layer(name, "groups", format!(
                        "in_channels {} not divisible by groups {}",
                        self.in_channels, self.groups
                    )));
                }
                if !self.out_channels.is_multiple_of(self.groups) {
                    return Err(Error::layer(name, "groups", format!(
                        "out_channels {} not divisible by groups {}",
                        self.out_channels, self.groups
                    )));
                }
            }
            OpKind::Linear => {
                if self.kernel_h != 1 || self.kernel_w != 1 || self.groups != 1 || self.stride != 1 {
                    return Err(Error::layer(
                        name,
                        "kernel_h",
                        "linear layers need kernel 1x1, stride 1 and groups 1",
                    ));
                }
            }
            OpKind::Relu | OpKind::Add | OpKind::GlobalAvgPool => {
                if self.in_channels != self.out_channels {
                    return Err(Error::layer(name, "out_channels", "must equal in_channels"));
                }
            }
            OpKind::Flatten => {
                let flat = self.in_channels * self.input_h * self.input_w;
                if self.out_channels != flat {
                    return Err(Error::layer(name, "out_channels", format!(
                        "flatten of {}x{}x{} must have {flat} outputs",
                        self.in_channels, self.input_h, self.input_w
                    )));
                }
            }
        }
        if !self.op_kind.has_weights()
            && (self.kernel_h != 1 || self.kernel_w != 1 || self.stride != 1 || self.groups != 1) {
                return Err(Error::layer(name, "kernel_h", "weightless ops use kernel 1x1, stride 1, groups 1"));
            }
        let expected = self.expected_weight_len();
        if self.weight_len != expected {
            return Err(Error::layer(name, "weight_len", format!(
                "shape implies {expected} weights, manifest says {}",
                self.weight_len
            )));
        }
        let bias_ok = if self.op_kind.has_weights() {
            self.bias_len == 0 || self.bias_len == self.out_channels
        } else {
            self.bias_len == 0
        };
        if !bias_ok {
            return Err(Error::layer(name, "bias_len", format!(
                "{} is neither 0 nor out_channels",
                self.bias_len
            )));
        }
        let prunable_ok = match self.op_kind {
            OpKind::Conv2d => self.prunable == self.is_pointwise_conv(),
            OpKind::Linear => true,
            _ => !self.prunable,
        };
        if !prunable_ok {
            return Err(Error::layer(name, "prunable", format!(
                "{} is inconsistent with op_kind {} kernel {}x{} groups {}",
                self.prunable,
                self.op_kind.as_str(),
                self.kernel_h,
                self.kernel_w,
                self.groups
            )));
        }
        if self.role.is_pointwise() && (self.kernel_h != 1 || self.kernel_w != 1) {
            return Err(Error::layer(name, "role", format!(
                "role {} requires a 1x1 kernel",
                self.role.as_str()
            )));
        }
        match (self.op_kind, self.inputs.len()) {
            (OpKind::Add, 2) => {}
            (OpKind::Add, n) => {
                return Err(Error::layer(name, "inputs", format!("add takes 2 inputs, got {n}")));
            }
            (_, 0 | 1) => {}
            (_, n) => {
                return Err(Error::layer(name, "inputs", format!("expected at most 1 input, got {n}")));
            }
        }
        Ok(())
    }
}

/// An ordered list of layers over one contiguous weight buffer.
///
/// Values are immutable once built: every transformation returns a new graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<f32>,
}

impl ModelGraph {
    /// Validates the graph and wraps it.
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>, weights: Vec<f32>) -> Result<Self> {
        let model = ModelGraph {
            name: name.into(),
            layers,
            weights,
        };
        model.validate()?;
        Ok(model)
    }

    /// Highest `offset + len` over all weight and bias regions.
    pub fn required_buffer_len(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| [l.weight_range().end, l.bias_range().end])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for layer in &self.layers {
            layer.validate()?;
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::DuplicateLayer(layer.name.clone()));
            }
        }
        // Inputs may only refer to earlier layers.
        let mut earlier: HashSet<&str> = HashSet::new();
        for layer in &self.layers {
            for input in &layer.inputs {
                if input != GRAPH_INPUT && !earlier.contains(input.as_str()) {
                    return Err(Error::layer(&layer.name, "inputs", format!(
                        "`{input}` is not an earlier layer"
                    )));
                }
            }
            earlier.insert(&layer.name);
        }

        let mut regions: Vec<(Range<usize>, &str, &'static str)> = Vec::new();
        for layer in &self.layers {
            for (range, field) in [(layer.weight_range(), "weight_offset"), (layer.bias_range(), "bias_offset")] {
                if range.end > self.weights.len() {
                    return Err(Error::layer(&layer.name, field, format!(
                        "region {}..{} exceeds buffer of {}",
                        range.start,
                        range.end,
                        self.weights.len()
                    )));
                }
                if !range.is_empty() {
                    regions.push((range, &layer.name, field));
                }
            }
        }
        regions.sort_by_key(|(r, _, _)| (r.start, r.end));
        for pair in regions.windows(2) {
            let (a, _, _) = &pair[0];
            let (b, name, field) = &pair[1];
            if b.start < a.end {
                return Err(Error::layer(name, field, format!(
                    "region {}..{} overlaps {}..{}",
                    b.start, b.end, a.start, a.end
                )));
            }
        }
        let required = self.required_buffer_len();
        if required != self.weights.len() {
            return Err(Error::WeightsLength {
                expected: required,
                actual: self.weights.len(),
            });
        }
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn prunable_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.prunable)
    }

    pub fn layer_weights(&self, layer: &LayerSpec) -> &[f32] {
        &self.weights[layer.weight_range()]
    }

    pub fn layer_bias(&self, layer: &LayerSpec) -> &[f32] {
        &self.weights[layer.bias_range()]
    }

    /// Total number of weights in prunable layers.
    pub fn prunable_weight_count(&self) -> usize {
        self.prunable_layers().map(|l| l.weight_len).sum()
    }

    /// Resolved producer names of a layer, with the "previous layer" default
    /// made explicit.
    pub fn resolved_inputs(&self, index: usize) -> Vec<String> {
        let layer = &self.layers[index];
        if !layer.inputs.is_empty() {
            return layer.inputs.clone();
        }
        if index == 0 {
            vec![GRAPH_INPUT.to_string()]
        } else {
            vec![self.layers[index - 1].name.clone()]
        }
    }

    /// A copy of this graph with a replacement weight buffer.
    pub fn with_weights(&self, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::WeightsLength {
                expected: self.weights.len(),
                actual: weights.len(),
            });
        }
        Ok(ModelGraph {
            name: self.name.clone(),
            layers: self.layers.clone(),
            weights,
        })
    }
}

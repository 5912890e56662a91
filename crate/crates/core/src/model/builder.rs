use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LayerSpec, ModelGraph, OpKind, Role, GRAPH_INPUT};
use crate::error::{Error, Result};

/// Incrementally assembles a [`ModelGraph`], assigning buffer offsets and
/// propagating tensor shapes.
///
/// Each call appends a layer fed by the current cursor (initially the graph
/// input). [`GraphBuilder::from`] moves the cursor to build branches. The
/// resulting weights are all zero; see [`GraphBuilder::build_random`].
#[derive(Debug)]
pub struct GraphBuilder {
    name: String,
    layers: Vec<LayerSpec>,
    shapes: HashMap<String, (usize, usize, usize)>,
    cursor: String,
    next_offset: usize,
    bias: bool,
    error: Option<Error>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, channels: usize, height: usize, width: usize) -> Self {
        let mut shapes = HashMap::new();
        shapes.insert(GRAPH_INPUT.to_string(), (channels, height, width));
        GraphBuilder {
            name: name.into(),
            layers: Vec::new(),
            shapes,
            cursor: GRAPH_INPUT.to_string(),
            next_offset: 0,
            bias: true,
            error: None,
        }
    }

    /// Whether subsequently added weighted layers carry a bias.
    pub fn with_bias(&mut self, bias: bool) -> &mut Self {
        self.bias = bias;
        self
    }

    /// Feed the next layer from `layer` instead of the most recent one.
    pub fn from(&mut self, layer: &str) -> &mut Self {
        if !self.shapes.contains_key(layer) {
            self.fail(Error::UnknownLayer(layer.to_string()));
        }
        self.cursor = layer.to_string();
        self
    }

    /// Output shape `(channels, h, w)` of the cursor layer.
    pub fn current_shape(&self) -> (usize, usize, usize) {
        self.shapes.get(&self.cursor).copied().unwrap_or((0, 0, 0))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        role: Role,
    ) -> &mut Self {
        let (c, h, w) = self.current_shape();
        let pointwise = kernel == 1 && groups == 1;
        let weight_len = if groups > 0 && c % groups == 0 {
            out_channels * (c / groups) * kernel * kernel
        } else {
            0
        };
        let spec = self.weighted(name, OpKind::Conv2d, role, c, out_channels, kernel, stride, groups, h, w, weight_len, pointwise);
        self.push(spec, (out_channels, h.div_ceil(stride.max(1)), w.div_ceil(stride.max(1))));
        self
    }

    pub fn pointwise(&mut self, name: &str, out_channels: usize, role: Role) -> &mut Self {
        self.conv(name, out_channels, 1, 1, 1, role)
    }

    pub fn depthwise(&mut self, name: &str, kernel: usize, stride: usize) -> &mut Self {
        let (c, _, _) = self.current_shape();
        self.conv(name, c, kernel, stride, c, Role::Dw)
    }

    /// Linear layer. On a 4-D input it is applied at every spatial position.
    pub fn linear(&mut self, name: &str, out_channels: usize, prunable: bool) -> &mut Self {
        let (c, h, w) = self.current_shape();
        let role = if prunable { Role::Pw } else { Role::Other };
        let spec = self.weighted(name, OpKind::Linear, role, c, out_channels, 1, 1, 1, h, w, c * out_channels, prunable);
        self.push(spec, (out_channels, h, w));
        self
    }

    pub fn relu(&mut self, name: &str) -> &mut Self {
        let (c, h, w) = self.current_shape();
        let spec = self.plain(name, OpKind::Relu, c, c, h, w);
        self.push(spec, (c, h, w));
        self
    }

    pub fn global_avg_pool(&mut self, name: &str) -> &mut Self {
        let (c, h, w) = self.current_shape();
        let spec = self.plain(name, OpKind::GlobalAvgPool, c, c, h, w);
        self.push(spec, (c, 1, 1));
        self
    }

    pub fn flatten(&mut self, name: &str) -> &mut Self {
        let (c, h, w) = self.current_shape();
        let spec = self.plain(name, OpKind::Flatten, c, c * h * w, h, w);
        self.push(spec, (c * h * w, 1, 1));
        self
    }

    /// Elementwise sum of two earlier layers' outputs.
    pub fn add(&mut self, name: &str, a: &str, b: &str) -> &mut Self {
        let Some(&(c, h, w)) = self.shapes.get(a) else {
            self.fail(Error::UnknownLayer(a.to_string()));
            return self;
        };
        if self.shapes.get(b) != Some(&(c, h, w)) {
            self.fail(Error::Shape(format!("add `{name}`: `{a}` and `{b}` differ in shape")));
            return self;
        }
        let mut spec = self.plain(name, OpKind::Add, c, c, h, w);
        spec.inputs = vec![a.to_string(), b.to_string()];
        self.push(spec, (c, h, w));
        self
    }

    /// Finishes the graph with an all-zero weight buffer.
    pub fn build(&self) -> Result<ModelGraph> {
        if let Some(err) = &self.error {
            return Err(clone_error(err));
        }
        ModelGraph::new(self.name.clone(), self.layers.clone(), vec![0.0; self.next_offset])
    }

    /// Finishes the graph with He-normal weights and zero biases drawn from
    /// `seed`.
    pub fn build_random(&self, seed: u64) -> Result<ModelGraph> {
        let mut model = self.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &model.layers {
            if layer.weight_len == 0 {
                continue;
            }
            let fan_in = layer.weight_cols().max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut model.weights[layer.weight_range()] {
                *w = normal.sample(&mut rng) as f32;
            }
        }
        Ok(model)
    }

    fn fail(&mut self, err: Error) {
        if self.error.is_none() {
            self.error = Some(err);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn weighted(
        &mut self,
        name: &str,
        op_kind: OpKind,
        role: Role,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        input_h: usize,
        input_w: usize,
        weight_len: usize,
        prunable: bool,
    ) -> LayerSpec {
        let weight_offset = self.next_offset;
        self.next_offset += weight_len;
        let bias_len = if self.bias { out_channels } else { 0 };
        let bias_offset = if bias_len > 0 { self.next_offset } else { 0 };
        self.next_offset += bias_len;
        LayerSpec {
            name: name.to_string(),
            op_kind,
            role,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            groups,
            input_h,
            input_w,
            weight_offset,
            weight_len,
            bias_offset,
            bias_len,
            prunable,
            inputs: vec![],
        }
    }

    fn plain(&self, name: &str, op_kind: OpKind, cin: usize, cout: usize, h: usize, w: usize) -> LayerSpec {
        LayerSpec {
            name: name.to_string(),
            op_kind,
            role: Role::Other,
            in_channels: cin,
            out_channels: cout,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            groups: 1,
            input_h: h,
            input_w: w,
            weight_offset: 0,
            weight_len: 0,
            bias_offset: 0,
            bias_len: 0,
            prunable: false,
            inputs: vec![],
        }
    }

    fn push(&mut self, mut spec: LayerSpec, out_shape: (usize, usize, usize)) {
        let implicit = match self.layers.last() {
            Some(prev) => prev.name == self.cursor,
            None => self.cursor == GRAPH_INPUT,
        };
        if spec.inputs.is_empty() && !implicit {
            spec.inputs = vec![self.cursor.clone()];
        }
        if self.shapes.insert(spec.name.clone(), out_shape).is_some() {
            self.fail(Error::DuplicateLayer(spec.name.clone()));
        }
        self.cursor = spec.name.clone();
        self.layers.push(spec);
    }
}

fn clone_error(err: &Error) -> Error {
    match err {
        Error::UnknownLayer(n) => Error::UnknownLayer(n.clone()),
        Error::DuplicateLayer(n) => Error::DuplicateLayer(n.clone()),
        other => Error::Shape(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_block_builds() {
        let mut b = GraphBuilder::new("irf", 8, 4, 4);
        b.pointwise("stem", 8, Role::Other)
            .pointwise("pw", 16, Role::Pw)
            .relu("pw_relu")
            .depthwise("dw", 3, 1)
            .relu("dw_relu")
            .pointwise("pwl", 8, Role::Pwl)
            .add("res", "stem", "pwl")
            .global_avg_pool("gap")
            .linear("fc", 10, false);
        let m = b.build_random(1).unwrap();
        assert_eq!(m.layers.len(), 9);
        assert_eq!(m.layer("res").unwrap().inputs, vec!["stem", "pwl"]);
        assert!(m.layer("pw").unwrap().prunable);
        assert!(!m.layer("dw").unwrap().prunable);
        assert_eq!(m.layer("dw").unwrap().weight_len, 16 * 9);
        // implicit chaining does not write `inputs`
        assert!(m.layer("gap").unwrap().inputs.is_empty());
    }

    #[test]
    fn unknown_branch_source_fails_at_build() {
        let mut b = GraphBuilder::new("x", 1, 1, 1);
        b.from("nope").relu("r");
        assert!(matches!(b.build(), Err(Error::UnknownLayer(_))));
    }
}

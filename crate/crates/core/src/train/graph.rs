//! Forward and backward execution of a [`ModelGraph`].
//!
//! Every tensor is `(n, c, h, w)`; vectors are `(n, c, 1, 1)`. The engine is
//! generic over the float type so gradients can be checked in `f64` while
//! training runs in `f32`.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelGraph, OpKind, GRAPH_INPUT};

/// Source of a layer input: the graph input or an earlier layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Input,
    Layer(usize),
}

/// Resolved wiring and shapes of a graph.
#[derive(Debug, Clone)]
pub struct Network {
    sources: Vec<Vec<Source>>,
    out_shapes: Vec<(usize, usize, usize)>,
    input_shape: (usize, usize, usize),
}

fn convert<T: Float>(v: usize) -> T {
    T::from(v).expect("usize fits in float")
}

impl Network {
    /// Resolves producers and checks that every layer's declared input
    /// shape matches what its producers emit.
    pub fn new(model: &ModelGraph) -> Result<Self> {
        model.validate()?;
        if model.layers.is_empty() {
            return Err(Error::Shape("cannot execute an empty graph".into()));
        }
        let mut sources = Vec::with_capacity(model.layers.len());
        let mut out_shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(model.layers.len());
        let mut input_shape: Option<(usize, usize, usize)> = None;
        for (i, layer) in model.layers.iter().enumerate() {
            let declared = (layer.in_channels, layer.input_h, layer.input_w);
            let mut srcs = Vec::new();
            for name in model.resolved_inputs(i) {
                let (src, shape) = if name == GRAPH_INPUT {
                    let shape = *input_shape.get_or_insert(declared);
                    (Source::Input, shape)
                } else {
                    let j = model.layer_index(&name).expect("validated");
                    (Source::Layer(j), out_shapes[j])
                };
                if shape != declared {
                    return Err(Error::Shape(format!(
                        "layer `{}` expects input {:?} but `{name}` produces {:?}",
                        layer.name, declared, shape
                    )));
                }
                srcs.push(src);
            }
            let (oh, ow) = layer.output_hw();
            out_shapes.push((layer.out_channels, oh, ow));
            sources.push(srcs);
        }
        Ok(Network {
            sources,
            out_shapes,
            input_shape: input_shape.ok_or_else(|| Error::Shape("no layer reads the graph input".into()))?,
        })
    }

    /// `(channels, h, w)` of one input sample.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn sample_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    /// Width of the final layer's output, which must be a vector.
    pub fn classes(&self) -> Result<usize> {
        let &(c, h, w) = self.out_shapes.last().expect("non-empty");
        if h * w != 1 {
            return Err(Error::Shape(format!("final layer output is {c}x{h}x{w}, not a vector")));
        }
        Ok(c)
    }
}

/// Layer outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    input: Vec<T>,
    outputs: Vec<Vec<T>>,
}

impl<T: Float> ForwardCache<T> {
    /// Output of the last layer, `batch` rows of `classes` values.
    pub fn logits(&self) -> &[T] {
        self.outputs.last().expect("non-empty graph")
    }

    pub fn output(&self, layer: usize) -> &[T] {
        &self.outputs[layer]
    }
}

/// Runs the graph on `batch` samples stored contiguously in `input`.
pub fn forward<T: Float>(net: &Network, model: &ModelGraph, weights: &[T], input: &[T], batch: usize) -> Result<ForwardCache<T>> {
    if weights.len() != model.weights.len() {
        return Err(Error::WeightsLength {
            expected: model.weights.len(),
            actual: weights.len(),
        });
    }
    if input.len() != batch * net.sample_len() {
        return Err(Error::Shape(format!(
            "input has {} values, expected {batch} samples of {}",
            input.len(),
            net.sample_len()
        )));
    }
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let src = |k: usize| -> &[T] {
            match net.sources[i][k] {
                Source::Input => input,
                Source::Layer(j) => &outputs[j],
            }
        };
        let out = match layer.op_kind {
            OpKind::Conv2d if layer.is_pointwise_conv() && layer.stride == 1 => pointwise_forward(layer, weights, src(0), batch),
            OpKind::Linear => pointwise_forward(layer, weights, src(0), batch),
            OpKind::Conv2d => conv_forward(layer, weights, src(0), batch),
            OpKind::Relu => src(0).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
            OpKind::Add => src(0).iter().zip(src(1)).map(|(&a, &b)| a + b).collect(),
            OpKind::Flatten => src(0).to_vec(),
            OpKind::GlobalAvgPool => {
                let hw = layer.input_h * layer.input_w;
                let denom: T = convert(hw);
                src(0)
                    .chunks_exact(hw)
                    .map(|plane| plane.iter().fold(T::zero(), |s, &x| s + x) / denom)
                    .collect()
            }
        };
        outputs.push(out);
    }
    Ok(ForwardCache {
        batch,
        input: input.to_vec(),
        outputs,
    })
}

/// Pointwise convolution or per-position linear layer:
/// `y[b, o, p] = Σ_i w[o, i] · x[b, i, p] + bias[o]`, summed in ascending `i`.
fn pointwise_forward<T: Float>(layer: &LayerSpec, weights: &[T], x: &[T], batch: usize) -> Vec<T> {
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let hw = layer.input_h * layer.input_w;
    let w = &weights[layer.weight_range()];
    let bias = &weights[layer.bias_range()];
    let mut y = vec![T::zero(); batch * cout * hw];
    if hw == 1 {
        // Plain matrix-vector products; same ascending-`i` order as below.
        for b in 0..batch {
            let xb = &x[b * cin..(b + 1) * cin];
            for o in 0..cout {
                let wr = &w[o * cin..(o + 1) * cin];
                let acc = wr.iter().zip(xb).fold(T::zero(), |acc, (&wv, &xv)| acc + wv * xv);
                y[b * cout + o] = match bias.get(o) {
                    Some(&bv) => acc + bv,
                    None => acc,
                };
            }
        }
        return y;
    }
    for b in 0..batch {
        for o in 0..cout {
            let out = &mut y[(b * cout + o) * hw..(b * cout + o + 1) * hw];
            for i in 0..cin {
                let wv = w[o * cin + i];
                let xr = &x[(b * cin + i) * hw..(b * cin + i + 1) * hw];
                for (acc, &xv) in out.iter_mut().zip(xr) {
                    *acc = *acc + wv * xv;
                }
            }
            if let Some(&bv) = bias.get(o) {
                for acc in out.iter_mut() {
                    *acc = *acc + bv;
                }
            }
        }
    }
    y
}

/// Top/left padding for same-padding with `out = ceil(in / stride)`.
fn same_pad(input: usize, out: usize, kernel: usize, stride: usize) -> usize {
    ((out - 1) * stride + kernel).saturating_sub(input) / 2
}

struct ConvGeom {
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
}

fn conv_geom(layer: &LayerSpec) -> ConvGeom {
    let (oh, ow) = layer.output_hw();
    ConvGeom {
        cin_g: layer.in_channels / layer.groups,
        cout_g: layer.out_channels / layer.groups,
        h: layer.input_h,
        w: layer.input_w,
        oh,
        ow,
        pad_t: same_pad(layer.input_h, oh, layer.kernel_h, layer.stride),
        pad_l: same_pad(layer.input_w, ow, layer.kernel_w, layer.stride),
    }
}

/// Visits every (output, weight, input) index triple of a grouped,
/// strided, same-padded convolution that touches a real input element.
fn conv_for_each(layer: &LayerSpec, batch: usize, mut f: impl FnMut(usize, usize, usize)) {
    let g = conv_geom(layer);
    let (kh, kw, s) = (layer.kernel_h, layer.kernel_w, layer.stride);
    for b in 0..batch {
        for oc in 0..layer.out_channels {
            let grp = oc / g.cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let yi = ((b * layer.out_channels + oc) * g.oh + oy) * g.ow + ox;
                    for icl in 0..g.cin_g {
                        let ic = grp * g.cin_g + icl;
                        for ky in 0..kh {
                            let Some(iy) = (oy * s + ky).checked_sub(g.pad_t).filter(|&v| v < g.h) else {
                                continue;
                            };
                            for kx in 0..kw {
                                let Some(ix) = (ox * s + kx).checked_sub(g.pad_l).filter(|&v| v < g.w) else {
                                    continue;
                                };
                                let wi = ((oc * g.cin_g + icl) * kh + ky) * kw + kx;
                                let xi = ((b * layer.in_channels + ic) * g.h + iy) * g.w + ix;
                                f(yi, wi, xi);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Float>(layer: &LayerSpec, weights: &[T], x: &[T], batch: usize) -> Vec<T> {
    let (oh, ow) = layer.output_hw();
    let w = &weights[layer.weight_range()];
    let bias = &weights[layer.bias_range()];
    let plane = oh * ow;
    let mut y = vec![T::zero(); batch * layer.out_channels * plane];
    conv_for_each(layer, batch, |yi, wi, xi| y[yi] = y[yi] + w[wi] * x[xi]);
    if !bias.is_empty() {
        for (i, v) in y.iter_mut().enumerate() {
            *v = *v + bias[(i / plane) % layer.out_channels];
        }
    }
    y
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Float>(logits: &[T], labels: &[u32], classes: usize) -> Result<(T, Vec<T>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(Error::Shape(format!(
            "{} logits for {batch} labels of {classes} classes",
            logits.len()
        )));
    }
    if batch == 0 {
        return Ok((T::zero(), vec![]));
    }
    let n: T = convert(batch);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::Dataset(format!("label {label} outside {classes} classes")));
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let log_sum = sum.ln() + max;
        loss = loss + (log_sum - row[label]);
        for (c, g) in grad[b * classes..(b + 1) * classes].iter_mut().enumerate() {
            let p = (row[c] - log_sum).exp();
            *g = (p - if c == label { T::one() } else { T::zero() }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Gradients of the mean cross-entropy with respect to every weight and
/// bias, laid out like the model's weight buffer.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: T,
    pub flat: Vec<T>,
}

impl<T: Float> Gradients<T> {
    pub fn layer(&self, layer: &LayerSpec) -> &[T] {
        &self.flat[layer.weight_range()]
    }

    pub fn layer_bias(&self, layer: &LayerSpec) -> &[T] {
        &self.flat[layer.bias_range()]
    }
}

/// Back-propagates the loss of a cached forward pass.
pub fn backward<T: Float>(
    net: &Network,
    model: &ModelGraph,
    weights: &[T],
    cache: &ForwardCache<T>,
    labels: &[u32],
) -> Result<Gradients<T>> {
    let classes = net.classes()?;
    if labels.len() != cache.batch {
        return Err(Error::Shape(format!("{} labels for batch {}", labels.len(), cache.batch)));
    }
    let (loss, dlogits) = softmax_cross_entropy(cache.logits(), labels, classes)?;
    let batch = cache.batch;
    let mut flat = vec![T::zero(); weights.len()];
    let mut douts: Vec<Vec<T>> = cache.outputs.iter().map(|o| vec![T::zero(); o.len()]).collect();
    let mut dinput = vec![T::zero(); cache.input.len()];
    *douts.last_mut().expect("non-empty") = dlogits;

    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        let dy = std::mem::take(&mut douts[i]);
        let read = |k: usize| -> &[T] {
            match net.sources[i][k] {
                Source::Input => &cache.input,
                Source::Layer(j) => &cache.outputs[j],
            }
        };
        // Gradient w.r.t. each input slot, accumulated into producers below.
        let mut dxs: Vec<Vec<T>> = Vec::with_capacity(2);
        match layer.op_kind {
            OpKind::Conv2d if layer.is_pointwise_conv() && layer.stride == 1 => {
                dxs.push(pointwise_backward(layer, weights, read(0), &dy, batch, &mut flat));
            }
            OpKind::Linear => dxs.push(pointwise_backward(layer, weights, read(0), &dy, batch, &mut flat)),
            OpKind::Conv2d => dxs.push(conv_backward(layer, weights, read(0), &dy, batch, &mut flat)),
            OpKind::Relu => dxs.push(
                read(0)
                    .iter()
                    .zip(&dy)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
            ),
            OpKind::Add => {
                dxs.push(dy.clone());
                dxs.push(dy);
            }
            OpKind::Flatten => dxs.push(dy),
            OpKind::GlobalAvgPool => {
                let hw = layer.input_h * layer.input_w;
                let denom: T = convert(hw);
                let mut dx = vec![T::zero(); dy.len() * hw];
                for (plane, &g) in dx.chunks_exact_mut(hw).zip(&dy) {
                    plane.fill(g / denom);
                }
                dxs.push(dx);
            }
        }
        for (k, dx) in dxs.into_iter().enumerate() {
            let target = match net.sources[i][k] {
                Source::Input => &mut dinput,
                Source::Layer(j) => &mut douts[j],
            };
            for (t, d) in target.iter_mut().zip(dx) {
                *t = *t + d;
            }
        }
    }
    Ok(Gradients { loss, flat })
}

fn pointwise_backward<T: Float>(layer: &LayerSpec, weights: &[T], x: &[T], dy: &[T], batch: usize, flat: &mut [T]) -> Vec<T> {
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let hw = layer.input_h * layer.input_w;
    let w = &weights[layer.weight_range()];
    let mut dx = vec![T::zero(); x.len()];
    let (wr, br) = (layer.weight_range(), layer.bias_range());
    if hw == 1 {
        let dw = &mut flat[wr.clone()];
        for b in 0..batch {
            let xb = &x[b * cin..(b + 1) * cin];
            let dxb = &mut dx[b * cin..(b + 1) * cin];
            for o in 0..cout {
                let g = dy[b * cout + o];
                for ((d, &xv), (dxv, &wv)) in dw[o * cin..(o + 1) * cin]
                    .iter_mut()
                    .zip(xb)
                    .zip(dxb.iter_mut().zip(&w[o * cin..(o + 1) * cin]))
                {
                    *d = *d + g * xv;
                    *dxv = *dxv + wv * g;
                }
            }
        }
        if !br.is_empty() {
            for b in 0..batch {
                for o in 0..cout {
                    flat[br.start + o] = flat[br.start + o] + dy[b * cout + o];
                }
            }
        }
        return dx;
    }
    for b in 0..batch {
        for o in 0..cout {
            let g = &dy[(b * cout + o) * hw..(b * cout + o + 1) * hw];
            if !br.is_empty() {
                flat[br.start + o] = g.iter().fold(flat[br.start + o], |s, &v| s + v);
            }
            for i in 0..cin {
                let xr = &x[(b * cin + i) * hw..(b * cin + i + 1) * hw];
                let dw = g.iter().zip(xr).fold(T::zero(), |s, (&gv, &xv)| s + gv * xv);
                flat[wr.start + o * cin + i] = flat[wr.start + o * cin + i] + dw;
                let wv = w[o * cin + i];
                let dxr = &mut dx[(b * cin + i) * hw..(b * cin + i + 1) * hw];
                for (d, &gv) in dxr.iter_mut().zip(g) {
                    *d = *d + wv * gv;
                }
            }
        }
    }
    dx
}

fn conv_backward<T: Float>(layer: &LayerSpec, weights: &[T], x: &[T], dy: &[T], batch: usize, flat: &mut [T]) -> Vec<T> {
    let w = &weights[layer.weight_range()];
    let (wr, br) = (layer.weight_range(), layer.bias_range());
    let mut dx = vec![T::zero(); x.len()];
    {
        let dw = &mut flat[wr.clone()];
        conv_for_each(layer, batch, |yi, wi, xi| {
            dw[wi] = dw[wi] + dy[yi] * x[xi];
            dx[xi] = dx[xi] + dy[yi] * w[wi];
        });
    }
    if !br.is_empty() {
        let (oh, ow) = layer.output_hw();
        let plane = oh * ow;
        for (i, &g) in dy.iter().enumerate() {
            let o = (i / plane) % layer.out_channels;
            flat[br.start + o] = flat[br.start + o] + g;
        }
    }
    dx
}

/// Forward plus backward in one call.
pub fn loss_and_gradients<T: Float>(
    net: &Network,
    model: &ModelGraph,
    weights: &[T],
    input: &[T],
    labels: &[u32],
) -> Result<Gradients<T>> {
    let cache = forward(net, model, weights, input, labels.len())?;
    backward(net, model, weights, &cache, labels)
}

/// Mean cross-entropy only.
pub fn loss<T: Float>(net: &Network, model: &ModelGraph, weights: &[T], input: &[T], labels: &[u32]) -> Result<T> {
    let cache = forward(net, model, weights, input, labels.len())?;
    Ok(softmax_cross_entropy(cache.logits(), labels, net.classes()?)?.0)
}

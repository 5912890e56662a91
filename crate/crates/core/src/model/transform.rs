use super::{ModelGraph, OpKind};
use crate::error::{Error, Result};

/// Replaces a pointwise convolution by a linear layer applied at every
/// spatial position.
///
/// The `(out, in, 1, 1)` weight layout is already the `(out, in)` matrix the
/// linear layer expects, so the buffer is reused unchanged. Strided 1x1
/// convolutions subsample their input and have no per-position linear form;
/// they are rejected.
pub fn conv1x1_to_linear(model: &ModelGraph, layer_name: &str) -> Result<ModelGraph> {
    let index = model
        .layer_index(layer_name)
        .ok_or_else(|| Error::UnknownLayer(layer_name.to_string()))?;
    let layer = &model.layers[index];
    if !layer.is_pointwise_conv() || layer.stride != 1 {
        return Err(Error::NotPointwise(layer_name.to_string()));
    }
    let mut out = model.clone();
    let target = &mut out.layers[index];
    target.op_kind = OpKind::Linear;
    target.prunable = true;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{layer_flops, GraphBuilder, Role};

    #[test]
    fn rejects_non_pointwise() {
        let mut b = GraphBuilder::new("t", 4, 4, 4);
        b.conv("c3", 4, 3, 1, 1, Role::Other);
        let m = b.build().unwrap();
        assert!(matches!(conv1x1_to_linear(&m, "c3"), Err(Error::NotPointwise(_))));
        assert!(matches!(conv1x1_to_linear(&m, "zz"), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn flops_and_weights_unchanged() {
        let mut b = GraphBuilder::new("t", 4, 2, 2);
        b.pointwise("p", 6, Role::Pw);
        let m = b.build_random(3).unwrap();
        let t = conv1x1_to_linear(&m, "p").unwrap();
        assert_eq!(t.layers[0].op_kind, OpKind::Linear);
        assert_eq!(t.weights, m.weights);
        assert_eq!(layer_flops(&t.layers[0]), layer_flops(&m.layers[0]));
    }
}

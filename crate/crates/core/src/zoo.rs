//! Small reference architectures used by the CLI, tests and benches.

use crate::error::Result;
use crate::model::{GraphBuilder, ModelGraph, Role};

/// Stack of pointwise convolutions with ReLUs, flattened into a linear
/// classifier. Every hidden layer is prunable; the classifier is not.
pub fn pointwise_classifier(
    name: &str,
    (c, h, w): (usize, usize, usize),
    hidden: &[usize],
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(name, c, h, w);
    for (i, &width) in hidden.iter().enumerate() {
        let role = if i + 1 == hidden.len() && hidden.len() > 1 { Role::Pwl } else { Role::Pw };
        b.pointwise(&format!("pw{i}"), width, role).relu(&format!("relu{i}"));
    }
    b.flatten("flatten").linear("classifier", classes, false);
    b.build_random(seed)
}

/// A miniature inverted-residual network: a 3x3 stem, `blocks` IRF blocks
/// (pointwise expansion, depthwise 3x3, pointwise bottleneck, residual add),
/// a squeeze-excitation-style pointwise head on pooled features and a
/// linear classifier.
pub fn tiny_irf_net(
    (c, h, w): (usize, usize, usize),
    width: usize,
    expansion: usize,
    blocks: usize,
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new("tiny_irf", c, h, w);
    b.conv("stem", width, 3, 1, 1, Role::Other).relu("stem_relu");
    let mut prev = "stem_relu".to_string();
    for i in 0..blocks {
        b.from(&prev)
            .pointwise(&format!("b{i}_pw"), width * expansion, Role::Pw)
            .relu(&format!("b{i}_pw_relu"))
            .depthwise(&format!("b{i}_dw"), 3, 1)
            .relu(&format!("b{i}_dw_relu"))
            .pointwise(&format!("b{i}_pwl"), width, Role::Pwl)
            .add(&format!("b{i}_add"), &prev, &format!("b{i}_pwl"));
        prev = format!("b{i}_add");
    }
    b.from(&prev)
        .global_avg_pool("gap")
        .pointwise("head_se", width * 2, Role::Se)
        .relu("head_relu")
        .flatten("flatten")
        .linear("classifier", classes, false);
    b.build_random(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Network;

    #[test]
    fn zoo_models_execute() {
        let m = pointwise_classifier("pc", (3, 8, 8), &[32, 16], 10, 1).unwrap();
        assert_eq!(Network::new(&m).unwrap().classes().unwrap(), 10);
        assert_eq!(m.prunable_layers().count(), 2);
        let m = tiny_irf_net((3, 6, 6), 4, 2, 2, 5, 1).unwrap();
        assert_eq!(Network::new(&m).unwrap().classes().unwrap(), 5);
        assert_eq!(m.prunable_layers().count(), 5);
    }
}

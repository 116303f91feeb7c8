use ndarray::Array2;

use super::Graph;

/// The graph's attributes with S overwritten to all-zeros and all-ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualViews {
    pub view0: Array2<f64>,
    pub view1: Array2<f64>,
}

pub fn counterfactual_views(g: &Graph) -> CounterfactualViews {
    let with = |value: f64| {
        let mut x = g.features.clone();
        x.column_mut(g.sensitive_index).fill(value);
        x
    };
    CounterfactualViews { view0: with(0.0), view1: with(1.0) }
}

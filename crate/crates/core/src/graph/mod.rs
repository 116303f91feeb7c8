//! Attributed graph with a binary sensitive column, labels and splits.

mod io;
mod split;
mod synthetic;
mod views;

pub use io::{load_dataset, save_dataset, DatasetConfig};
pub use split::{make_splits, SplitFractions};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use views::{counterfactual_views, CounterfactualViews};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adjacency: Csr,
    /// Node attributes, one row per node. Column `sensitive_index` holds S.
    pub features: Array2<f64>,
    pub sensitive_index: usize,
    pub feature_names: Vec<String>,
    /// `None` marks an unlabeled node.
    pub labels: Vec<Option<u8>>,
    /// `None` for unlabeled nodes and before splits are assigned.
    pub split: Vec<Option<Split>>,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn sensitive_column(&self) -> ArrayView1<'_, f64> {
        self.features.column(self.sensitive_index)
    }

    pub fn sensitive(&self) -> Vec<u8> {
        self.sensitive_column().iter().map(|&v| v as u8).collect()
    }

    /// X with the sensitive column zeroed, the input the estimator sees.
    pub fn masked_features(&self) -> Array2<f64> {
        let mut x = self.features.clone();
        x.column_mut(self.sensitive_index).fill(0.0);
        x
    }

    /// Labeled nodes in the given split, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split.iter().enumerate().filter_map(|(i, s)| (*s == Some(split)).then_some(i)).collect()
    }

    /// Labels as 0/1 floats; unlabeled nodes read as 0 and must be masked out.
    pub fn label_vector(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.map_or(0.0, f64::from)).collect()
    }

    pub fn has_splits(&self) -> bool {
        self.split.iter().any(Option::is_some)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.adjacency.n() != n {
            return Err(Error::Validation(format!("adjacency has {} nodes, features have {n}", self.adjacency.n())));
        }
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::Validation("label/split length mismatch".into()));
        }
        if self.sensitive_index >= self.n_features() {
            return Err(Error::Validation(format!(
                "sensitive index {} outside {} features",
                self.sensitive_index,
                self.n_features()
            )));
        }
        if self.feature_names.len() != self.n_features() {
            return Err(Error::Validation("feature name count mismatch".into()));
        }
        if let Some(bad) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value {bad}")));
        }
        if let Some((i, v)) = self.sensitive_column().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("sensitive value {v} at node {i} is not binary")));
        }
        for i in 0..n {
            if self.adjacency.get(i, i) != 0.0 {
                return Err(Error::Validation(format!("self loop at node {i}")));
            }
            for (j, v) in self.adjacency.row(i) {
                if v != 1.0 || self.adjacency.get(j, i) != v {
                    return Err(Error::Validation(format!("asymmetric or weighted edge ({i},{j})")));
                }
            }
        }
        if let Some(l) = self.labels.iter().flatten().find(|&&l| l > 1) {
            return Err(Error::Validation(format!("label {l} is not binary")));
        }
        for (i, (l, s)) in self.labels.iter().zip(&self.split).enumerate() {
            if l.is_none() && s.is_some() {
                return Err(Error::Validation(format!("unlabeled node {i} carries a split tag")));
            }
        }
        if self.has_splits() {
            for s in Split::ALL {
                if self.indices(s).is_empty() {
                    return Err(Error::Validation(format!("{} split is empty", s.name())));
                }
            }
            if self.labels.iter().zip(&self.split).any(|(l, s)| l.is_some() && s.is_none()) {
                return Err(Error::Validation("labeled node without split tag".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Small labeled graph with every (S, Y) cell populated.
    pub fn toy_graph(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let features = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => (i % 2) as f64,
            1 => (i as f64 * 0.37).sin(),
            _ => (i as f64 * 0.11).cos(),
        });
        Graph {
            adjacency: Csr::from_undirected_edges(n, &edges),
            features,
            sensitive_index: 0,
            feature_names: vec!["s".into(), "a".into(), "b".into()],
            labels: (0..n).map(|i| Some(((i / 2) % 2) as u8)).collect(),
            split: vec![None; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_graph_is_valid_and_masking_hides_s() {
        let g = fixtures::toy_graph(8);
        g.validate().unwrap();
        let m = g.masked_features();
        assert!(m.column(0).iter().all(|&v| v == 0.0));
        assert_eq!(m.column(1), g.features.column(1));
    }

    #[test]
    fn non_binary_sensitive_fails_validation() {
        let mut g = fixtures::toy_graph(4);
        g.features[[2, 0]] = 0.5;
        assert!(matches!(g.validate(), Err(Error::Validation(_))));
    }
}

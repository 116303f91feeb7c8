use rand::seq::SliceRandom;

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.5, val: 0.25, test: 0.25 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config(format!("split fractions must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

/// Per-stratum (train, val, test) counts for a cell with `m` members.
fn stratum_counts(m: usize, f: &SplitFractions) -> [usize; 3] {
    let mut train = ((f.train * m as f64).round() as usize).min(m);
    let mut val = ((f.val * m as f64).round() as usize).min(m - train);
    let mut test = m - train - val;
    let steal = |target: &mut usize, a: &mut usize, b: &mut usize| {
        if *target == 0 {
            let donor = if *a >= *b { a } else { b };
            if *donor > 1 {
                *donor -= 1;
                *target += 1;
            }
        }
    };
    if m >= 1 && train == 0 {
        if val > 0 {
            val -= 1;
        } else {
            test -= 1;
        }
        train = 1;
    }
    if m >= 3 {
        steal(&mut val, &mut train, &mut test);
        steal(&mut test, &mut train, &mut val);
    }
    [train, val, test]
}

/// Assigns train/val/test tags to labeled nodes, stratified by (S, Y).
pub fn make_splits(g: &Graph, fractions: SplitFractions, seed: u64) -> Result<Graph> {
    fractions.validate()?;
    let s = g.sensitive();
    let mut cells: [Vec<usize>; 4] = Default::default();
    for (i, l) in g.labels.iter().enumerate() {
        if let Some(y) = l {
            cells[usize::from(s[i]) * 2 + usize::from(*y)].push(i);
        }
    }
    let mut rng = rng::stream(seed, "split");
    let mut split = vec![None; g.n_nodes()];
    for cell in &mut cells {
        cell.shuffle(&mut rng);
        let [train, val, _] = stratum_counts(cell.len(), &fractions);
        for (k, &i) in cell.iter().enumerate() {
            split[i] = Some(if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    let out = Graph { split, ..g.clone() };
    if Split::ALL.iter().any(|&sp| out.indices(sp).is_empty()) {
        return Err(Error::Validation("too few labeled nodes to populate every split".into()));
    }
    Ok(out)
}

//! Extremely randomized trees for regression.
//!
//! Each tree is grown on the full training set. At every node up to
//! `k_splits` non-constant features are drawn at random, each with a cut-point
//! drawn uniformly between the node's minimum and maximum of that feature; the
//! candidate with the largest variance reduction is kept. Nodes with fewer than
//! `n_min` samples, constant targets or constant inputs become leaves holding
//! the mean target.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("training set is empty")]
    Empty,
    #[error("expected input dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{inputs} input rows but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite value in sample {row}")]
    NonFinite { row: usize },
    #[error("invalid extra-trees parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    /// Random candidate splits per node; `None` uses the input dimension.
    pub k_splits: Option<usize>,
    /// Minimum node size that may still be split.
    pub n_min: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ExtraTreesParams {
    fn default() -> Self {
        ExtraTreesParams {
            n_trees: 50,
            k_splits: None,
            n_min: 2,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl ExtraTreesParams {
    pub fn validate(&self) -> Result<(), RegressError> {
        if self.n_trees == 0 {
            return Err(RegressError::InvalidParams("n_trees must be >= 1".into()));
        }
        if self.k_splits == Some(0) {
            return Err(RegressError::InvalidParams("k_splits must be >= 1".into()));
        }
        if self.n_min < 2 {
            return Err(RegressError::InvalidParams("n_min must be >= 2".into()));
        }
        Ok(())
    }
}

/// Column-major copy of a validated training input matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    n: usize,
    columns: Vec<f64>,
}

impl Dataset {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, RegressError> {
        let first = rows.first().ok_or(RegressError::Empty)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(RegressError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let n = rows.len();
        let mut columns = vec![0.0; dim * n];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(RegressError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            for (f, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(RegressError::NonFinite { row: i });
                }
                columns[f * n + i] = v;
            }
        }
        Ok(Dataset { dim, n, columns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

}

const LEAF: u32 = u32::MAX;

/// Flat tree node: a leaf when `feature == LEAF` (then `value` is the leaf
/// mean), otherwise `x[feature] < value` descends to `left`, else `left + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    value: f64,
    left: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self.nodes[0];
        while node.feature != LEAF {
            let next = if x[node.feature as usize] < node.value {
                node.left
            } else {
                node.left + 1
            };
            node = self.nodes[next as usize];
        }
        node.value
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraTreesModel {
    input_dim: usize,
    trees: Vec<Tree>,
}

impl ExtraTreesModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Ensemble mean of the individual tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64, RegressError> {
        if x.len() != self.input_dim {
            return Err(RegressError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    /// Per-tree outputs at `x`.
    pub fn tree_outputs(&self, x: &[f64]) -> Result<Vec<f64>, RegressError> {
        self.predict(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Fits an ensemble on row-major `inputs`.
pub fn fit<R: AsRef<[f64]>>(
    inputs: &[R],
    targets: &[f64],
    params: &ExtraTreesParams,
) -> Result<ExtraTreesModel, RegressError> {
    let data = Dataset::from_rows(inputs)?;
    fit_dataset(&data, targets, params)
}

/// Fits an ensemble on a prepared [`Dataset`]; trees are grown independently
/// from per-tree seeds, so sequential and parallel execution agree exactly.
pub fn fit_dataset(
    data: &Dataset,
    targets: &[f64],
    params: &ExtraTreesParams,
) -> Result<ExtraTreesModel, RegressError> {
    params.validate()?;
    if data.n == 0 {
        return Err(RegressError::Empty);
    }
    if targets.len() != data.n {
        return Err(RegressError::LengthMismatch {
            inputs: data.n,
            targets: targets.len(),
        });
    }
    if let Some(row) = targets.iter().position(|t| !t.is_finite()) {
        return Err(RegressError::NonFinite { row });
    }
    let k = params.k_splits.unwrap_or(data.dim);
    let trees = par::map_range(params.n_trees, params.execution, |t| {
        let mut rng = seeds::rng(params.seed, "extra-trees", t as u64);
        TreeBuilder::new(data, targets, k, params.n_min).build(&mut rng)
    });
    Ok(ExtraTreesModel {
        input_dim: data.dim,
        trees,
    })
}

/// Grows one tree. Every column and the targets are kept in node order: the
/// samples of a node occupy one contiguous range in all of them, so scans
/// are sequential and each split stably partitions the range.
struct TreeBuilder {
    dim: usize,
    n: usize,
    k: usize,
    n_min: usize,
    columns: Vec<f64>,
    targets: Vec<f64>,
    nodes: Vec<Node>,
    features: Vec<usize>,
    ranges: Vec<(f64, f64)>,
    goes_left: Vec<bool>,
    scratch: Vec<f64>,
}

struct Candidate {
    feature: usize,
    cut: f64,
    score: f64,
}

impl TreeBuilder {
    fn new(data: &Dataset, targets: &[f64], k: usize, n_min: usize) -> Self {
        TreeBuilder {
            dim: data.dim,
            n: data.n,
            k,
            n_min,
            columns: data.columns.clone(),
            targets: targets.to_vec(),
            nodes: Vec::new(),
            features: (0..data.dim).collect(),
            ranges: vec![(0.0, 0.0); data.dim],
            goes_left: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn segment(&self, f: usize, start: usize, end: usize) -> &[f64] {
        &self.columns[f * self.n + start..f * self.n + end]
    }

    fn build(mut self, rng: &mut ChaCha8Rng) -> Tree {
        self.nodes.push(Node {
            feature: LEAF,
            value: 0.0,
            left: 0,
        });
        // (node slot, start, end); depth-first, left child first.
        let mut stack = vec![(0usize, 0usize, self.n)];
        while let Some((slot, start, end)) = stack.pop() {
            match self.split_node(start, end, rng) {
                Ok((feature, cut, mid)) => {
                    let left = self.nodes.len();
                    let placeholder = Node {
                        feature: LEAF,
                        value: 0.0,
                        left: 0,
                    };
                    self.nodes.push(placeholder);
                    self.nodes.push(placeholder);
                    self.nodes[slot] = Node {
                        feature: feature as u32,
                        value: cut,
                        left: left as u32,
                    };
                    stack.push((left + 1, mid, end));
                    stack.push((left, start, mid));
                }
                Err(value) => self.nodes[slot].value = value,
            }
        }
        Tree { nodes: self.nodes }
    }

    /// Chooses and applies a split; returns the feature, cut and the partition
    /// point, or the leaf value when the node cannot be split.
    fn split_node(&mut self, start: usize, end: usize, rng: &mut ChaCha8Rng) -> Result<(usize, f64, usize), f64> {
        let n = end - start;
        let ys = &self.targets[start..end];
        let total = sum(ys);
        let mean = total / n as f64;
        if n < self.n_min {
            return Err(mean);
        }
        let (lo, hi) = min_max(ys);
        if lo == hi {
            // Exact, unlike a re-summed mean of identical values.
            return Err(lo);
        }

        let dim = self.dim;
        let mut best: Option<Candidate> = None;
        let mut consider = |c: Option<Candidate>| {
            if let Some(c) = c {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        };
        if self.k <= dim {
            // Lazily shuffled feature order: draw without replacement,
            // skipping features that are constant in this node.
            let mut drawn = 0;
            for j in 0..dim {
                if drawn == self.k {
                    break;
                }
                let pick = rng.random_range(j..dim);
                self.features.swap(j, pick);
                let f = self.features[j];
                let (fmin, fmax) = min_max(self.segment(f, start, end));
                if fmin >= fmax {
                    continue;
                }
                drawn += 1;
                consider(self.candidate(f, fmin, fmax, start, end, total, rng));
            }
        } else {
            let mut usable = Vec::with_capacity(dim);
            for f in 0..dim {
                let (fmin, fmax) = min_max(self.segment(f, start, end));
                if fmin < fmax {
                    self.ranges[f] = (fmin, fmax);
                    usable.push(f);
                }
            }
            if usable.is_empty() {
                return Err(mean);
            }
            for _ in 0..self.k {
                let f = usable[rng.random_range(0..usable.len())];
                let (fmin, fmax) = self.ranges[f];
                consider(self.candidate(f, fmin, fmax, start, end, total, rng));
            }
        }

        let Some(best) = best else {
            return Err(mean);
        };
        let mut mask = std::mem::take(&mut self.goes_left);
        mask.clear();
        mask.extend(self.segment(best.feature, start, end).iter().map(|&v| v < best.cut));
        let mid = mask.iter().filter(|&&l| l).count();
        debug_assert!(mid > 0 && mid < n);
        for f in 0..dim {
            let range = f * self.n + start..f * self.n + end;
            stable_partition(&mut self.columns[range], &mask, &mut self.scratch);
        }
        stable_partition(&mut self.targets[start..end], &mask, &mut self.scratch);
        self.goes_left = mask;
        Ok((best.feature, best.cut, start + mid))
    }

    #[allow(clippy::too_many_arguments)]
    fn candidate(
        &self,
        f: usize,
        fmin: f64,
        fmax: f64,
        start: usize,
        end: usize,
        total: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        let mut cut = fmin + rng.random::<f64>() * (fmax - fmin);
        if !(cut > fmin && cut < fmax) {
            cut = fmin + 0.5 * (fmax - fmin);
            if !(cut > fmin && cut < fmax) {
                return None;
            }
        }
        let (left_sum, left_n) = left_sum_count(self.segment(f, start, end), &self.targets[start..end], cut);
        let left_n = left_n as f64;
        let n = (end - start) as f64;
        let right_n = n - left_n;
        let right_sum = total - left_sum;
        // n * (parent variance - weighted child variances)
        let score = left_sum * left_sum / left_n + right_sum * right_sum / right_n - total * total / n;
        Some(Candidate {
            feature: f,
            cut,
            score,
        })
    }
}

// The scans below keep LANES independent accumulators so consecutive
// elements do not wait on each other's floating-point adds.
const LANES: usize = 4;

fn sum(values: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = values.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..LANES {
            acc[k] += c[k];
        }
    }
    for (k, &v) in rest.iter().enumerate() {
        acc[k] += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = [f64::INFINITY; LANES];
    let mut hi = [f64::NEG_INFINITY; LANES];
    let chunks = values.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..LANES {
            lo[k] = if c[k] < lo[k] { c[k] } else { lo[k] };
            hi[k] = if c[k] > hi[k] { c[k] } else { hi[k] };
        }
    }
    for (k, &v) in rest.iter().enumerate() {
        lo[k] = lo[k].min(v);
        hi[k] = hi[k].max(v);
    }
    (
        lo.into_iter().fold(f64::INFINITY, f64::min),
        hi.into_iter().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Sum of `ys` and count over the entries whose `xs` lies below `cut`.
fn left_sum_count(xs: &[f64], ys: &[f64], cut: f64) -> (f64, usize) {
    let mut acc = [0.0; LANES];
    let mut cnt = [0usize; LANES];
    let xc = xs.chunks_exact(LANES);
    let yc = ys.chunks_exact(LANES);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (x, y) in xc.zip(yc) {
        for k in 0..LANES {
            let m = x[k] < cut;
            acc[k] += if m { y[k] } else { 0.0 };
            cnt[k] += usize::from(m);
        }
    }
    for k in 0..xr.len() {
        let m = xr[k] < cut;
        acc[k] += if m { yr[k] } else { 0.0 };
        cnt[k] += usize::from(m);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3]), cnt.iter().sum())
}

/// Moves the entries flagged in `left` to the front, keeping relative order
/// on both sides.
fn stable_partition(values: &mut [f64], left: &[bool], scratch: &mut Vec<f64>) {
    // Branch-free: every value is written to both sides and only the side
    // it belongs to advances.
    scratch.resize(values.len() + 1, 0.0);
    let (mut l, mut r) = (0, 0);
    for j in 0..values.len() {
        let v = values[j];
        let m = usize::from(left[j]);
        values[l] = v;
        scratch[r] = v;
        l += m;
        r += 1 - m;
    }
    values[l..].copy_from_slice(&scratch[..r]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n_trees: usize, seed: u64) -> ExtraTreesParams {
        ExtraTreesParams {
            n_trees,
            seed,
            ..ExtraTreesParams::default()
        }
    }

    #[test]
    fn constant_targets_give_constant_model() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let m = fit(&x, &[5.0, 5.0, 5.0], &params(10, 1)).unwrap();
        for probe in [[0.0, 0.0], [100.0, -100.0], [3.0, 2.0]] {
            assert_eq!(m.predict(&probe).unwrap(), 5.0);
        }
        assert!(m.trees().iter().all(|t| t.n_nodes() == 1));
    }

    #[test]
    fn single_sample_predicts_its_target() {
        let m = fit(&[vec![1.0, 2.0, 3.0]], &[-7.5], &params(5, 2)).unwrap();
        assert_eq!(m.predict(&[9.0, 9.0, 9.0]).unwrap(), -7.5);
    }

    #[test]
    fn fully_grown_trees_interpolate() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 * 0.37]).collect();
        let y: Vec<f64> = (0..100).map(|i| ((i * 31 % 17) as f64).sin() * 10.0).collect();
        let m = fit(&x, &y, &params(20, 3)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict(xi).unwrap() - yi).abs() <= 1e-9);
        }
    }

    #[test]
    fn ensemble_is_mean_of_trees() {
        let a = Tree {
            nodes: vec![Node {
                feature: LEAF,
                value: 4.0,
                left: 0,
            }],
        };
        let b = Tree {
            nodes: vec![Node {
                feature: LEAF,
                value: 6.0,
                left: 0,
            }],
        };
        let m = ExtraTreesModel {
            input_dim: 1,
            trees: vec![a, b],
        };
        assert_eq!(m.tree_outputs(&[0.0]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(m.predict(&[0.0]).unwrap(), 5.0);
    }

    #[test]
    fn input_errors() {
        let p = params(3, 0);
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(fit(&empty, &[], &p), Err(RegressError::Empty));
        assert!(matches!(
            fit(&[vec![1.0], vec![1.0, 2.0]], &[0.0, 1.0], &p),
            Err(RegressError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit(&[vec![f64::NAN]], &[0.0], &p),
            Err(RegressError::NonFinite { row: 0 })
        ));
        assert!(matches!(
            fit(&[vec![1.0]], &[f64::INFINITY], &p),
            Err(RegressError::NonFinite { row: 0 })
        ));
        assert!(matches!(
            fit(&[vec![1.0]], &[0.0, 1.0], &p),
            Err(RegressError::LengthMismatch { .. })
        ));
        let m = fit(&[vec![1.0]], &[0.0], &p).unwrap();
        assert!(m.predict(&[1.0, 2.0]).is_err());
        let bad = ExtraTreesParams { n_min: 1, ..p };
        assert!(fit(&[vec![1.0]], &[0.0], &bad).is_err());
    }

    #[test]
    fn more_candidates_than_features() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<f64> = (0..50).map(|i| (i * i) as f64).collect();
        let p = ExtraTreesParams {
            k_splits: Some(5),
            ..params(5, 4)
        };
        let m = fit(&x, &y, &p).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict(xi).unwrap() - yi).abs() <= 1e-9);
        }
    }

    #[test]
    fn thresholds_lie_strictly_inside_node_range() {
        // Walk each tree with the training set and check every split.
        let x: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i % 13) as f64, (i as f64 * 0.7).cos(), (i / 20) as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + r[2]).collect();
        let m = fit(&x, &y, &params(5, 9)).unwrap();
        for tree in m.trees() {
            let mut stack = vec![(0usize, (0..x.len()).collect::<Vec<_>>())];
            while let Some((node, rows)) = stack.pop() {
                let nd = tree.nodes[node];
                if nd.feature == LEAF {
                    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
                    assert!((nd.value - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
                    continue;
                }
                let f = nd.feature as usize;
                let lo = rows.iter().map(|&r| x[r][f]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|&r| x[r][f]).fold(f64::NEG_INFINITY, f64::max);
                assert!(lo < nd.value && nd.value < hi);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| x[r][f] < nd.value);
                stack.push((nd.left as usize, l));
                stack.push((nd.left as usize + 1, r));
            }
        }
    }

    #[test]
    fn parallel_and_sequential_fits_agree() {
        let x: Vec<Vec<f64>> = (0..300)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.1).cos(), i as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] + 2.0 * r[1]).collect();
        let seq = ExtraTreesParams {
            execution: Execution::Sequential,
            n_min: 5,
            ..params(8, 11)
        };
        let par = ExtraTreesParams {
            execution: Execution::Parallel,
            ..seq.clone()
        };
        assert_eq!(fit(&x, &y, &seq).unwrap(), fit(&x, &y, &par).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 3.0, 1.0 / (1.0 + i as f64)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].exp() * r[1]).collect();
        let m = fit(&x, &y, &params(4, 5)).unwrap();
        let back = ExtraTreesModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn predictions_bounded_by_targets(
            rows in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -50.0f64..50.0), 1..60),
            probe in (-20.0f64..20.0, -20.0f64..20.0),
            seed in any::<u64>(),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let p = ExtraTreesParams { n_min: 3, ..params(7, seed) };
            let m = fit(&x, &y, &p).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = m.predict(&[probe.0, probe.1]).unwrap();
            prop_assert!(v >= lo - 1e-12 * lo.abs().max(1.0) && v <= hi + 1e-12 * hi.abs().max(1.0));
            // Determinism under the same seed.
            prop_assert_eq!(fit(&x, &y, &p).unwrap(), m);
        }
    }
}

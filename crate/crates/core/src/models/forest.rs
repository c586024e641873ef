use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, Scalar, TrainingSet};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub rng_seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 2,
            rng_seed: 42,
        }
    }
}

/// A regression tree stored as parallel arrays. Node 0 is the root; a node
/// with `feature == u32::MAX` is a leaf and carries its mean in `value`.
/// Internal nodes send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tree<T: Scalar> {
    pub feature: Vec<u32>,
    pub threshold: Vec<T>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<T>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(value: T) -> Self {
        let mut t = Self::with_capacity(1);
        t.push_leaf(value);
        t
    }

    fn with_capacity(n: usize) -> Self {
        Self {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
        }
    }

    fn push_leaf(&mut self, value: T) -> u32 {
        self.feature.push(LEAF);
        self.threshold.push(T::zero());
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.value.push(value);
        (self.value.len() - 1) as u32
    }

    pub fn node_count(&self) -> usize {
        self.value.len()
    }

    pub fn depth(&self) -> usize {
        fn walk<T: Scalar>(t: &Tree<T>, i: usize) -> usize {
            if t.feature[i] == LEAF {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        if self.value.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    pub fn predict(&self, x: &[T]) -> T {
        let mut i = 0usize;
        loop {
            let f = self.feature[i];
            if f == LEAF {
                return self.value[i];
            }
            i = if x[f as usize] <= self.threshold[i] {
                self.left[i]
            } else {
                self.right[i]
            } as usize;
        }
    }

    fn well_formed(&self, feature_dim: usize) -> bool {
        let n = self.value.len();
        n > 0
            && [self.threshold.len(), self.left.len(), self.right.len(), self.feature.len()]
                .iter()
                .all(|&l| l == n)
            && (0..n).all(|i| {
                self.feature[i] == LEAF
                    || ((self.feature[i] as usize) < feature_dim
                        && (self.left[i] as usize) < n
                        && (self.right[i] as usize) < n
                        && self.left[i] as usize > i
                        && self.right[i] as usize > i)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForestModel<T: Scalar> {
    pub trees: Vec<Tree<T>>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub rng_seed: u64,
    pub label_min: T,
    pub label_max: T,
    pub feature_dim: usize,
}

impl<T: Scalar> ForestModel<T> {
    pub fn from_trees(trees: Vec<Tree<T>>, hyper: &ForestHyper, label_min: T, label_max: T, feature_dim: usize) -> Result<Self, ModelError> {
        if trees.is_empty() {
            return Err(ModelError::InvalidData("a forest needs at least one tree".into()));
        }
        if trees.iter().any(|t| !t.well_formed(feature_dim)) {
            return Err(ModelError::InvalidData("malformed tree".into()));
        }
        Ok(Self {
            n_trees: trees.len(),
            trees,
            max_depth: hyper.max_depth,
            min_leaf: hyper.min_leaf,
            rng_seed: hyper.rng_seed,
            label_min,
            label_max,
            feature_dim,
        })
    }

    pub fn fit(data: &TrainingSet<T>, hyper: &ForestHyper) -> Result<Self, ModelError> {
        data.validate()?;
        let needed = 2 * hyper.min_leaf.max(1);
        if data.len() < needed {
            return Err(ModelError::InsufficientData {
                needed,
                have: data.len(),
            });
        }
        if hyper.n_trees == 0 {
            return Err(ModelError::InvalidData("n_trees must be ≥ 1".into()));
        }
        let d = data.feature_dim();
        let n = data.len();
        // Column-major copy so split search walks contiguous memory.
        let columns: Vec<Vec<T>> = (0..d).map(|f| data.features.iter().map(|r| r[f]).collect()).collect();
        let ctx = Ctx {
            columns: &columns,
            labels: &data.labels,
            max_depth: hyper.max_depth,
            min_leaf: hyper.min_leaf.max(1),
            subset: d.div_ceil(3).max(1).min(d.max(1)),
        };
        let trees: Vec<Tree<T>> = (0..hyper.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(hyper.rng_seed);
                rng.set_stream(t as u64);
                let bootstrap: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
                ctx.grow(bootstrap, &mut rng)
            })
            .collect();
        let (label_min, label_max) = data
            .labels
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), y| (lo.min(*y), hi.max(*y)));
        Ok(Self {
            n_trees: trees.len(),
            trees,
            max_depth: hyper.max_depth,
            min_leaf: hyper.min_leaf,
            rng_seed: hyper.rng_seed,
            label_min,
            label_max,
            feature_dim: d,
        })
    }

    pub fn tree_predictions(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_dim(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn predict(&self, x: &[T]) -> Result<T, ModelError> {
        self.check_dim(x)?;
        let sum = self.trees.iter().fold(T::zero(), |acc, t| acc + t.predict(x));
        let mean = sum / T::from_usize(self.trees.len()).unwrap();
        // Leaf means already lie within the label range; the clamp only
        // absorbs rounding in the average.
        Ok(mean.max(self.label_min).min(self.label_max))
    }

    fn check_dim(&self, x: &[T]) -> Result<(), ModelError> {
        if x.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

struct Ctx<'a, T: Scalar> {
    columns: &'a [Vec<T>],
    labels: &'a [T],
    max_depth: usize,
    min_leaf: usize,
    subset: usize,
}

struct Split<T> {
    feature: usize,
    threshold: T,
    score: T,
}

impl<T: Scalar> Ctx<'_, T> {
    fn grow(&self, rows: Vec<u32>, rng: &mut ChaCha8Rng) -> Tree<T> {
        let mut tree = Tree::with_capacity(64);
        self.node(&mut tree, rows, 0, rng);
        tree
    }

    fn node(&self, tree: &mut Tree<T>, rows: Vec<u32>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let (sum, _) = self.sums(&rows);
        let count = T::from_usize(rows.len()).unwrap();
        let mean = sum / count;
        let first = self.labels[rows[0] as usize];
        let pure = rows.iter().all(|&r| self.labels[r as usize] == first);
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf || pure || self.columns.is_empty() {
            return tree.push_leaf(if pure { first } else { mean });
        }
        let Some(split) = self.best_split(&rows, sum, rng) else {
            return tree.push_leaf(mean);
        };
        let col = &self.columns[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| col[r as usize] <= split.threshold);
        drop(rows);
        let id = tree.push_leaf(mean);
        let l = self.node(tree, left_rows, depth + 1, rng);
        let r = self.node(tree, right_rows, depth + 1, rng);
        let i = id as usize;
        tree.feature[i] = split.feature as u32;
        tree.threshold[i] = split.threshold;
        tree.left[i] = l;
        tree.right[i] = r;
        id
    }

    fn sums(&self, rows: &[u32]) -> (T, T) {
        rows.iter().fold((T::zero(), T::zero()), |(s, q), &r| {
            let y = self.labels[r as usize];
            (s + y, q + y * y)
        })
    }

    /// Maximizes `S_l²/n_l + S_r²/n_r`, which is equivalent to maximizing the
    /// reduction in summed squared error. Features are visited in a random
    /// order; the first `subset` are always evaluated, and further ones only
    /// until some split reduces the error. Among evaluated candidates the
    /// highest score wins, ties going to the lowest feature index and then
    /// the smallest threshold.
    fn best_split(&self, rows: &[u32], total: T, rng: &mut ChaCha8Rng) -> Option<Split<T>> {
        let d = self.columns.len();
        let order_of_features = sample(rng, d, d).into_vec();
        let n = rows.len();
        let n_t = T::from_usize(n).unwrap();
        let parent = total * total / n_t;
        let mut best: Option<Split<T>> = None;
        let mut pairs: Vec<(T, T)> = Vec::with_capacity(n);
        for (visited, &f) in order_of_features.iter().enumerate() {
            if visited >= self.subset && best.is_some() {
                break;
            }
            let col = &self.columns[f];
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (col[r as usize], self.labels[r as usize])));
            pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            let mut left = T::zero();
            for i in 0..n - 1 {
                left = left + pairs[i].1;
                let nl = i + 1;
                if pairs[i].0 == pairs[i + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let nl_t = T::from_usize(nl).unwrap();
                let right = total - left;
                let score = left * left / nl_t + right * right / (n_t - nl_t);
                if score <= parent {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => score > b.score || (score == b.score && f < b.feature),
                };
                if better {
                    let (a, b) = (pairs[i].0, pairs[i + 1].0);
                    let mut threshold = a + (b - a) / T::from_f64_lossy(2.0);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

//! Small random-forest classifier for DCI-style scores.
//!
//! CART trees with Gini impurity, depth cap 8, 20 trees, bootstrap
//! resampling, and sqrt-feature subsampling (scanning further through
//! the shuffled feature order whenever the subsample offers no valid
//! split). Splits must clear a minimum root-weighted impurity decrease,
//! which suppresses bootstrap-noise splits so an identity mapping
//! yields an exactly one-hot importance matrix.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum impurity decrease, weighted by node fraction of the
    /// bootstrap sample, for a split to count.
    pub min_weighted_gain: f64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 8,
            min_weighted_gain: 0.02,
        }
    }
}

enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

pub struct Forest {
    trees: Vec<Vec<Node>>,
    /// Total impurity decrease per feature, normalized to sum to one
    /// (all zeros when no split was ever made).
    pub importances: Vec<f64>,
    n_features: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    spec: ForestSpec,
    n_root: usize,
    max_scan: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl<'a> TreeBuilder<'a> {
    fn majority(&self, idx: &[usize]) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.labels[i]] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    /// Best threshold for one feature at this node, or None when no
    /// split clears the weighted-gain bar.
    fn best_split_on(&self, idx: &[usize], feature: usize, parent_gini: f64) -> Option<(f64, f64)> {
        let n = idx.len();
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            self.features[a][feature]
                .partial_cmp(&self.features[b][feature])
                .unwrap()
        });
        let mut left_counts = vec![0usize; self.n_classes];
        let mut right_counts = vec![0usize; self.n_classes];
        for &i in &order {
            right_counts[self.labels[i]] += 1;
        }
        let mut best: Option<(f64, f64)> = None;
        let node_weight = n as f64 / self.n_root as f64;
        for k in 0..n - 1 {
            let i = order[k];
            left_counts[self.labels[i]] += 1;
            right_counts[self.labels[i]] -= 1;
            let v = self.features[i][feature];
            let v_next = self.features[order[k + 1]][feature];
            if v_next <= v {
                continue;
            }
            let n_l = k + 1;
            let n_r = n - n_l;
            let child = (n_l as f64 * gini(&left_counts, n_l)
                + n_r as f64 * gini(&right_counts, n_r))
                / n as f64;
            let gain = node_weight * (parent_gini - child);
            if gain >= self.spec.min_weighted_gain
                && best.map_or(true, |(g, _)| gain > g)
            {
                best = Some((gain, 0.5 * (v + v_next)));
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in &idx {
            counts[self.labels[i]] += 1;
        }
        let parent_gini = gini(&counts, idx.len());
        let make_leaf = |s: &mut Self, idx: &[usize]| {
            s.nodes.push(Node::Leaf { class: s.majority(idx) });
            s.nodes.len() - 1
        };
        if depth >= self.spec.max_depth || idx.len() < 2 || parent_gini == 0.0 {
            return make_leaf(self, &idx);
        }
        let d = self.features[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (scanned, &feature) in order.iter().enumerate() {
            if let Some((gain, thr)) = self.best_split_on(&idx, feature, parent_gini) {
                if best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, feature, thr));
                }
            }
            // keep scanning past the sqrt subsample only while nothing
            // valid has been found
            if scanned + 1 >= self.max_scan && best.is_some() {
                break;
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return make_leaf(self, &idx);
        };
        self.importance[feature] += gain;
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.features[i][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { class: 0 }); // placeholder
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }
}

impl Forest {
    pub fn train(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        seed: u64,
        spec: ForestSpec,
    ) -> Result<Self> {
        let n = features.len();
        if n == 0 || labels.len() != n {
            return Err(TensorError::Empty { op: "forest_train" });
        }
        let d = features[0].len();
        if d == 0 {
            return Err(TensorError::Empty { op: "forest_train" });
        }
        let max_scan = (d as f64).sqrt().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(spec.n_trees);
        let mut importances = vec![0.0; d];
        for _ in 0..spec.n_trees {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                features,
                labels,
                n_classes,
                spec,
                n_root: idx.len(),
                max_scan,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            builder.build(idx, 0, &mut rng);
            for (acc, v) in importances.iter_mut().zip(&builder.importance) {
                *acc += v;
            }
            trees.push(builder.nodes);
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            for v in &mut importances {
                *v /= total;
            }
        }
        Ok(Self {
            trees,
            importances,
            n_features: d,
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.n_features);
        let mut votes = std::collections::BTreeMap::new();
        for tree in &self.trees {
            let mut at = 0usize;
            loop {
                match &tree[at] {
                    Node::Leaf { class } => {
                        *votes.entry(*class).or_insert(0usize) += 1;
                        break;
                    }
                    Node::Split { feature, threshold, left, right } => {
                        at = if x[*feature] <= *threshold { *left } else { *right };
                    }
                }
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / features.len() as f64
    }
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// DCI-style (disentanglement, completeness, informativeness) from
/// per-source forests on the active continuous latents.
///
/// `features` are rows of active latents; `sources` are label columns.
pub fn dci(
    sources: &[Vec<usize>],
    features: &[Vec<f64>],
    cards: &[usize],
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let n = features.len();
    if n == 0 || sources.is_empty() {
        return Err(TensorError::Empty { op: "dci" });
    }
    let d = features[0].len();
    if d == 0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let n_s = sources.len();
    // shared deterministic split
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * 0.75) as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = idx.split_at(n_train);
    let gather_f = |ids: &[usize]| -> Vec<Vec<f64>> {
        ids.iter().map(|&i| features[i].clone()).collect()
    };
    let train_f = gather_f(train_idx);
    let test_f = gather_f(test_idx);

    // importance matrix R[j][i]: feature j's importance for source i
    let mut r = vec![vec![0.0; n_s]; d];
    let mut inf = 0.0;
    for (i, src) in sources.iter().enumerate() {
        let train_l: Vec<usize> = train_idx.iter().map(|&k| src[k]).collect();
        let test_l: Vec<usize> = test_idx.iter().map(|&k| src[k]).collect();
        let forest = Forest::train(
            &train_f,
            &train_l,
            cards[i],
            seed ^ ((i as u64 + 1) << 16),
            ForestSpec::default(),
        )?;
        for (j, &v) in forest.importances.iter().enumerate() {
            r[j][i] = v;
        }
        let acc = forest.accuracy(&test_f, &test_l);
        let chance = 1.0 / cards[i] as f64;
        inf += ((acc - chance) / (1.0 - chance)).clamp(0.0, 1.0);
    }
    let inf = inf / n_s as f64;

    let total: f64 = r.iter().flatten().sum();
    if total <= 0.0 {
        return Ok((0.0, 0.0, inf));
    }
    // disentanglement: per-feature row entropy over sources
    let mut dis = 0.0;
    for row in &r {
        let rowsum: f64 = row.iter().sum();
        if rowsum <= 0.0 {
            continue;
        }
        let p: Vec<f64> = row.iter().map(|v| v / rowsum).collect();
        let score = if n_s > 1 {
            1.0 - entropy_of(&p) / (n_s as f64).ln()
        } else {
            1.0
        };
        dis += (rowsum / total) * score;
    }
    // completeness: per-source column entropy over features
    let mut com = 0.0;
    for i in 0..n_s {
        let col: Vec<f64> = r.iter().map(|row| row[i]).collect();
        let colsum: f64 = col.iter().sum();
        if colsum <= 0.0 {
            continue;
        }
        let p: Vec<f64> = col.iter().map(|v| v / colsum).collect();
        let score = if d > 1 {
            1.0 - entropy_of(&p) / (d as f64).ln()
        } else {
            1.0
        };
        com += (colsum / total) * score;
    }
    Ok((dis.clamp(0.0, 1.0), com.clamp(0.0, 1.0), inf))
}

/// Importance-matrix-only D/C aggregation, shared with tests that
/// construct matrices directly.
pub fn dc_from_importances(r: &[Vec<f64>]) -> (f64, f64) {
    let d = r.len();
    let n_s = r.first().map_or(0, Vec::len);
    let total: f64 = r.iter().flatten().sum();
    if total <= 0.0 || d == 0 || n_s == 0 {
        return (0.0, 0.0);
    }
    let mut dis = 0.0;
    for row in r {
        let rowsum: f64 = row.iter().sum();
        if rowsum <= 0.0 {
            continue;
        }
        let p: Vec<f64> = row.iter().map(|v| v / rowsum).collect();
        let score = if n_s > 1 { 1.0 - entropy_of(&p) / (n_s as f64).ln() } else { 1.0 };
        dis += (rowsum / total) * score;
    }
    let mut com = 0.0;
    for i in 0..n_s {
        let col: Vec<f64> = r.iter().map(|row| row[i]).collect();
        let colsum: f64 = col.iter().sum();
        if colsum <= 0.0 {
            continue;
        }
        let p: Vec<f64> = col.iter().map(|v| v / colsum).collect();
        let score = if d > 1 { 1.0 - entropy_of(&p) / (d as f64).ln() } else { 1.0 };
        com += (colsum / total) * score;
    }
    (dis, com)
}

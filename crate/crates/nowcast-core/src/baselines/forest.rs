//! Random forest regressor over pixel rows: CART trees on bootstrap
//! resamples with a random feature subset per split, variance-reduction
//! split criterion summed over the output steps.

use rayon::prelude::*;

use super::{predict_per_pixel, PixelDataset};
use crate::error::{Error, Result};
use crate::models::Forecaster;
use crate::nn::{Checkpoint, RngState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        mean: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict_into(&self, row: &[f64], out: &mut [f64]) {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { mean, .. } => {
                    out.copy_from_slice(mean);
                    return;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; ceil(sqrt(9)) = 3 by default.
    pub feature_subset: usize,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 8,
            min_samples_leaf: 5,
            feature_subset: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfModel {
    pub n_in: usize,
    pub n_out: usize,
    pub trees: Vec<Tree>,
    /// Per-output bounds of the training targets; predictions are convex
    /// combinations of leaf means and stay inside them.
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
}

struct TreeBuilder<'a> {
    data: &'a PixelDataset,
    cfg: &'a RfConfig,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, rows: &[u32]) -> usize {
        let n_out = self.data.n_out;
        let mut mean = vec![0.0; n_out];
        for &r in rows {
            let y = &self.data.y[r as usize * n_out..(r as usize + 1) * n_out];
            for (m, v) in mean.iter_mut().zip(y) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows.len() as f64;
        }
        self.nodes.push(TreeNode::Leaf {
            mean,
            count: rows.len(),
        });
        self.nodes.len() - 1
    }

    /// Best threshold on one feature by summed-output variance reduction,
    /// computed with prefix sums over the rows sorted by that feature.
    fn best_split_on(&self, rows: &mut [u32], feature: usize) -> Option<SplitChoice> {
        let n_in = self.data.n_in;
        let n_out = self.data.n_out;
        let min_leaf = self.cfg.min_samples_leaf;
        rows.sort_unstable_by(|&a, &b| {
            self.data.x[a as usize * n_in + feature]
                .total_cmp(&self.data.x[b as usize * n_in + feature])
        });
        let n = rows.len();
        let mut total = vec![0.0; n_out];
        let mut total_sq = 0.0;
        for &r in rows.iter() {
            let y = &self.data.y[r as usize * n_out..(r as usize + 1) * n_out];
            for (t, v) in total.iter_mut().zip(y) {
                *t += v;
                total_sq += v * v;
            }
        }
        let mut left = vec![0.0; n_out];
        let mut best: Option<SplitChoice> = None;
        for i in 0..n - 1 {
            let r = rows[i] as usize;
            let y = &self.data.y[r * n_out..(r + 1) * n_out];
            for (l, v) in left.iter_mut().zip(y) {
                *l += v;
            }
            let xi = self.data.x[r * n_in + feature];
            let xj = self.data.x[rows[i + 1] as usize * n_in + feature];
            if xi == xj {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            if (i + 1) < min_leaf || (n - i - 1) < min_leaf {
                continue;
            }
            // Summed-output SSE_left + SSE_right; lower is better.
            let mut sse = total_sq;
            for t in 0..n_out {
                let lt = left[t];
                let rt = total[t] - lt;
                sse -= lt * lt / nl + rt * rt / nr;
            }
            let threshold = 0.5 * (xi + xj);
            let better = match &best {
                Some(b) => sse < b.score,
                None => true,
            };
            if better {
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    score: sse,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize, rng: &mut RngState) -> usize {
        let n_in = self.data.n_in;
        if depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_samples_leaf {
            return self.leaf(rows);
        }
        // Random feature subset without replacement.
        let mut features: Vec<usize> = (0..n_in).collect();
        rng.shuffle(&mut features);
        features.truncate(self.cfg.feature_subset.min(n_in));
        features.sort_unstable();
        let mut best: Option<SplitChoice> = None;
        for &f in &features {
            if let Some(c) = self.best_split_on(rows, f) {
                let better = match &best {
                    Some(b) => c.score < b.score,
                    None => true,
                };
                if better {
                    best = Some(c);
                }
            }
        }
        let Some(choice) = best else {
            return self.leaf(rows);
        };
        let (mut left_rows, mut right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .copied()
            .partition(|&r| self.data.x[r as usize * n_in + choice.feature] <= choice.threshold);
        let placeholder = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            mean: vec![0.0; self.data.n_out],
            count: 0,
        });
        let left = self.grow(&mut left_rows, depth + 1, rng);
        let right = self.grow(&mut right_rows, depth + 1, rng);
        self.nodes[placeholder] = TreeNode::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right,
        };
        placeholder
    }
}

/// Fits the forest. Trees are independent given their seeds, so they build in
/// parallel and collect in index order; the result is bit-deterministic for
/// any thread count.
pub fn rf_fit(data: &PixelDataset, cfg: &RfConfig) -> Result<RfModel> {
    if cfg.n_trees == 0 || cfg.max_depth == 0 || cfg.feature_subset == 0 {
        return Err(Error::Config("forest sizes must be >= 1".into()));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(Error::Config("min_samples_leaf must be >= 1".into()));
    }
    if data.rows < cfg.min_samples_leaf {
        return Err(Error::Data(format!(
            "need at least {} pixel rows, got {}",
            cfg.min_samples_leaf, data.rows
        )));
    }
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|ti| {
            let mut rng = RngState::new(cfg.seed).split(0xF0 ^ ti as u64);
            // Bootstrap resample with replacement.
            let mut rows: Vec<u32> = (0..data.rows)
                .map(|_| rng.below(data.rows) as u32)
                .collect();
            let mut builder = TreeBuilder {
                data,
                cfg,
                nodes: Vec::new(),
            };
            builder.grow(&mut rows, 0, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();
    let mut target_min = vec![f64::INFINITY; data.n_out];
    let mut target_max = vec![f64::NEG_INFINITY; data.n_out];
    for r in 0..data.rows {
        for t in 0..data.n_out {
            let v = data.y[r * data.n_out + t];
            target_min[t] = target_min[t].min(v);
            target_max[t] = target_max[t].max(v);
        }
    }
    Ok(RfModel {
        n_in: data.n_in,
        n_out: data.n_out,
        trees,
        target_min,
        target_max,
    })
}

impl RfModel {
    pub fn predict_row(&self, row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut leaf = vec![0.0; self.n_out];
        for tree in &self.trees {
            tree.predict_into(row, &mut leaf);
            for (o, v) in out.iter_mut().zip(&leaf) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= self.trees.len() as f64;
        }
    }

    /// Mean squared training residual over the rows (model space).
    pub fn training_mse(&self, data: &PixelDataset) -> f64 {
        let mut pred = vec![0.0; self.n_out];
        let mut total = 0.0;
        for r in 0..data.rows {
            self.predict_row(&data.x[r * data.n_in..(r + 1) * data.n_in], &mut pred);
            for t in 0..self.n_out {
                let d = pred[t] - data.y[r * data.n_out + t];
                total += d * d;
            }
        }
        total / (data.rows * self.n_out) as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            "RF",
            format!("n_in={}\nn_out={}\nn_trees={}\n", self.n_in, self.n_out, self.trees.len()),
        );
        ck.push("target_min", vec![self.n_out], self.target_min.clone());
        ck.push("target_max", vec![self.n_out], self.target_max.clone());
        // Each node becomes a fixed-width record:
        // split: [0, feature, threshold, left, right, 0...]
        // leaf:  [1, count, mean_0.., 0...]
        let width = 5.max(2 + self.n_out);
        for (ti, tree) in self.trees.iter().enumerate() {
            let mut flat = Vec::with_capacity(tree.nodes.len() * width);
            for node in &tree.nodes {
                let mut rec = vec![0.0; width];
                match node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        rec[0] = 0.0;
                        rec[1] = *feature as f64;
                        rec[2] = *threshold;
                        rec[3] = *left as f64;
                        rec[4] = *right as f64;
                    }
                    TreeNode::Leaf { mean, count } => {
                        rec[0] = 1.0;
                        rec[1] = *count as f64;
                        rec[2..2 + self.n_out].copy_from_slice(mean);
                    }
                }
                flat.extend_from_slice(&rec);
            }
            ck.push(format!("tree{}", ti), vec![tree.nodes.len(), width], flat);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |key: &str| -> Result<usize> {
            ck.config_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("RF checkpoint missing {}", key)))
        };
        let (n_in, n_out, n_trees) = (get("n_in")?, get("n_out")?, get("n_trees")?);
        let width = 5.max(2 + n_out);
        let mut trees = Vec::with_capacity(n_trees);
        for ti in 0..n_trees {
            let e = ck.get(&format!("tree{}", ti))?;
            let mut nodes = Vec::with_capacity(e.data.len() / width);
            for rec in e.data.chunks_exact(width) {
                if rec[0] == 0.0 {
                    nodes.push(TreeNode::Split {
                        feature: rec[1] as usize,
                        threshold: rec[2],
                        left: rec[3] as usize,
                        right: rec[4] as usize,
                    });
                } else {
                    nodes.push(TreeNode::Leaf {
                        count: rec[1] as usize,
                        mean: rec[2..2 + n_out].to_vec(),
                    });
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(Self {
            n_in,
            n_out,
            trees,
            target_min: ck.get("target_min")?.data.clone(),
            target_max: ck.get("target_max")?.data.clone(),
        })
    }
}

impl Forecaster for RfModel {
    fn input_len(&self) -> usize {
        self.n_in
    }

    fn output_len(&self) -> usize {
        self.n_out
    }

    fn forecast(&mut self, x: &Tensor) -> Result<Tensor> {
        let model = &*self;
        predict_per_pixel(x, model.n_out, |row, out| model.predict_row(row, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_from_rule(
        rows: usize,
        seed: u64,
        rule: impl Fn(&[f64]) -> [f64; 3],
    ) -> PixelDataset {
        let mut rng = RngState::new(seed);
        let n_in = 9;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..rows {
            let row: Vec<f64> = (0..n_in).map(|_| rng.uniform(0.0, 2.0)).collect();
            let t = rule(&row);
            x.extend_from_slice(&row);
            y.extend_from_slice(&t);
        }
        PixelDataset {
            n_in,
            n_out: 3,
            rows,
            x,
            y,
        }
    }

    #[test]
    fn constant_target_predicts_exactly() {
        let ds = rows_from_rule(100, 1, |_| [3.25; 3]);
        let model = rf_fit(&ds, &RfConfig::default()).unwrap();
        let mut out = [0.0; 3];
        model.predict_row(&[0.5; 9], &mut out);
        assert_eq!(out, [3.25; 3]);
    }

    #[test]
    fn same_seed_same_forest() {
        let ds = rows_from_rule(200, 2, |row| [row[8], row[7], row[0]]);
        let cfg = RfConfig {
            n_trees: 5,
            ..RfConfig::default()
        };
        let a = rf_fit(&ds, &cfg).unwrap();
        let b = rf_fit(&ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fits_piecewise_threshold_rule() {
        // target = 5 if last frame > 1 else 0. With a 3-of-9 feature subset
        // per split, a path only finds the informative feature with
        // probability 1 - (2/3)^depth, so the default depth 8 is needed for
        // the ensemble to pin the rule down.
        let ds = rows_from_rule(10_000, 3, |row| {
            let v = if row[8] > 1.0 { 5.0 } else { 0.0 };
            [v; 3]
        });
        let cfg = RfConfig {
            n_trees: 20,
            ..RfConfig::default()
        };
        let model = rf_fit(&ds, &cfg).unwrap();
        let mse = model.training_mse(&ds);
        assert!(mse < 0.05, "training mse {}", mse);
    }

    #[test]
    fn predictions_stay_within_target_range() {
        let ds = rows_from_rule(500, 4, |row| [row[8] * 1.5, row[7], row[0] * 0.2]);
        let model = rf_fit(&ds, &RfConfig::default()).unwrap();
        let mut rng = RngState::new(9);
        let mut out = [0.0; 3];
        for _ in 0..200 {
            let row: Vec<f64> = (0..9).map(|_| rng.uniform(-5.0, 5.0)).collect();
            model.predict_row(&row, &mut out);
            for t in 0..3 {
                assert!(out[t] >= model.target_min[t] - 1e-12);
                assert!(out[t] <= model.target_max[t] + 1e-12);
            }
        }
    }

    #[test]
    fn forest_mean_is_order_invariant() {
        let ds = rows_from_rule(300, 5, |row| [row[8], row[4], row[0]]);
        let cfg = RfConfig {
            n_trees: 7,
            ..RfConfig::default()
        };
        let model = rf_fit(&ds, &cfg).unwrap();
        let mut shuffled = model.clone();
        shuffled.trees.reverse();
        let row: Vec<f64> = (0..9).map(|i| i as f64 * 0.2).collect();
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        model.predict_row(&row, &mut a);
        shuffled.predict_row(&row, &mut b);
        for t in 0..3 {
            assert!((a[t] - b[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_leaf_forest_predicts_leaf_mean() {
        let tree = Tree {
            nodes: vec![TreeNode::Leaf {
                mean: vec![1.0, 2.0, 3.0],
                count: 10,
            }],
        };
        let model = RfModel {
            n_in: 9,
            n_out: 3,
            trees: vec![tree],
            target_min: vec![0.0; 3],
            target_max: vec![5.0; 3],
        };
        let mut out = [0.0; 3];
        model.predict_row(&[9.0; 9], &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn identical_trees_equal_single_tree() {
        let ds = rows_from_rule(200, 6, |row| [row[8]; 3]);
        let cfg = RfConfig {
            n_trees: 1,
            ..RfConfig::default()
        };
        let one = rf_fit(&ds, &cfg).unwrap();
        let mut many = one.clone();
        many.trees = vec![one.trees[0].clone(); 6];
        let row: Vec<f64> = (0..9).map(|i| 0.1 * i as f64).collect();
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        one.predict_row(&row, &mut a);
        many.predict_row(&row, &mut b);
        for t in 0..3 {
            assert!((a[t] - b[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ds = rows_from_rule(150, 7, |row| [row[8], row[1], row[2] * 0.3]);
        let cfg = RfConfig {
            n_trees: 3,
            max_depth: 4,
            ..RfConfig::default()
        };
        let model = rf_fit(&ds, &cfg).unwrap();
        let back = RfModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back, model);
    }
}

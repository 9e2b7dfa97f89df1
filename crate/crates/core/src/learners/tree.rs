//! Axis-aligned regression trees grown by exhaustive squared-error split
//! search. Shared by the random forest and gradient boosting.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features drawn per node; `None` considers every feature.
    pub max_features: Option<usize>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows a tree on the rows listed in `samples` (repeats allowed).
pub fn grow(x: &Matrix, y: &[f64], samples: &[usize], params: TreeParams, rng: &mut Rng) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    let mut scratch = Vec::with_capacity(samples.len());
    build(x, y, samples.to_vec(), 0, params, rng, &mut tree, &mut scratch);
    tree
}

#[allow(clippy::too_many_arguments)]
fn build(
    x: &Matrix,
    y: &[f64],
    idx: Vec<usize>,
    depth: usize,
    params: TreeParams,
    rng: &mut Rng,
    tree: &mut Tree,
    scratch: &mut Vec<(f64, f64)>,
) -> usize {
    let slot = tree.nodes.len();
    let n = idx.len();
    let sum: f64 = idx.iter().map(|&i| y[i]).sum();
    let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
    let value = if pure { y[idx[0]] } else { sum / n as f64 };
    tree.nodes.push(Node::Leaf { value });

    let depth_ok = params.max_depth.is_none_or(|d| depth < d);
    if !depth_ok || pure || n < 2 * params.min_leaf {
        return slot;
    }

    let p = x.cols();
    let features: Vec<usize> = match params.max_features {
        Some(m) if m < p => {
            let mut f = sample(rng, p, m).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..p).collect(),
    };

    let parent = sum * sum / n as f64;
    let mut best: Option<Best> = None;
    for &f in &features {
        scratch.clear();
        scratch.extend(idx.iter().map(|&i| (x.get(i, f), y[i])));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += scratch[pos].1;
            let n_left = pos + 1;
            let (lo, hi) = (scratch[pos].0, scratch[pos + 1].0);
            if lo == hi || n_left < params.min_leaf || n - n_left < params.min_leaf {
                continue;
            }
            let right_sum = sum - left_sum;
            let gain = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / (n - n_left) as f64
                - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid > lo { mid } else { hi };
                best = Some(Best {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }

    let Some(best) = best.filter(|b| b.gain > 0.0) else {
        return slot;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| x.get(i, best.feature) < best.threshold);
    let left = build(x, y, left_idx, depth + 1, params, rng, tree, scratch);
    let right = build(x, y, right_idx, depth + 1, params, rng, tree, scratch);
    tree.nodes[slot] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
    };
    slot
}

//! Leaf-wise regression tree learner on binned features.

use super::binning::BinnedMatrix;
use super::split::{best_split_binned, SplitCandidate, SplitParams};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// A split accepted during growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedSplit {
    pub feature: usize,
    pub gain: f64,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        assert!(!nodes.is_empty(), "a tree has at least one node");
        Self { nodes }
    }

    /// Single-leaf tree.
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = AcceptedSplit> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some(AcceptedSplit {
                feature: *feature,
                gain: *gain,
            }),
            Node::Leaf { .. } => None,
        })
    }
}

struct OpenLeaf {
    node: usize,
    rows: Vec<usize>,
    candidate: Option<SplitCandidate>,
}

fn leaf_value(rows: &[usize], grad: &[f64], hess: &[f64], lambda: f64) -> f64 {
    let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    if h + lambda <= 0.0 {
        0.0
    } else {
        -g / (h + lambda)
    }
}

/// Grow one tree leaf-wise: repeatedly split the open leaf with the largest
/// gain (ties to the lowest node id) until `max_leaves` is reached or no leaf
/// has an admissible split. Leaf values are `−G/(H+λ)`.
pub fn grow_tree(
    binned: &BinnedMatrix,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    params: &SplitParams,
    max_leaves: usize,
) -> Tree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let root_candidate = best_split_binned(binned, &rows, grad, hess, params);
    let mut open = vec![OpenLeaf {
        node: 0,
        rows,
        candidate: root_candidate,
    }];
    let mut n_leaves = 1;

    while n_leaves < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            let Some(c) = leaf.candidate else { continue };
            let better = match pick {
                None => true,
                Some(j) => {
                    let best = open[j].candidate.unwrap();
                    c.gain > best.gain || (c.gain == best.gain && leaf.node < open[j].node)
                }
            };
            if better {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        let leaf = open.swap_remove(i);
        let c = leaf.candidate.unwrap();
        let column = binned.column(c.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            leaf.rows.iter().partition(|&&r| (column[r] as usize) <= c.bin);

        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            gain: c.gain,
            left,
            right,
        };
        n_leaves += 1;

        for (node, rows) in [(left, left_rows), (right, right_rows)] {
            let candidate = if n_leaves < max_leaves {
                best_split_binned(binned, &rows, grad, hess, params)
            } else {
                None
            };
            open.push(OpenLeaf { node, rows, candidate });
        }
    }

    for leaf in &open {
        nodes[leaf.node] = Node::Leaf {
            value: leaf_value(&leaf.rows, grad, hess, params.lambda),
        };
    }
    Tree { nodes }
}

//! Per-point tensor contractions against precomputed 1D basis tables.
//!
//! Evaluating `sum_k C[k] prod_i phi_i^{(j_i)}(x_i)` is done one axis at a time,
//! starting with the last (contiguous) axis. Multi-indices that share trailing
//! derivative orders share the partial contractions, so a jet with several
//! entries costs little more than one evaluation. The reverse pass scatters
//! cotangents back to coefficient space and is used both for loss gradients
//! and for building Jacobian rows.

use super::MultiIndex;
use crate::basis::{eval_basis_1d_orders, BasisError, TensorBasisSpec};

/// Basis values of every dimension of one tensor basis at a set of points,
/// for derivative orders `0..=max_order[dim]`.
#[derive(Debug, Clone)]
pub struct BasisTables {
    n_points: usize,
    shape: Vec<usize>,
    max_order: Vec<usize>,
    data: Vec<Vec<f64>>,
}

impl BasisTables {
    /// `coords(p)` returns the field coordinates of point `p`.
    pub fn build<F>(
        spec: &TensorBasisSpec,
        n_points: usize,
        max_order: &[usize],
        mut coords: F,
    ) -> Result<Self, BasisError>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let d = spec.ndim();
        let shape = spec.shape();
        let mut data: Vec<Vec<f64>> = (0..d)
            .map(|i| Vec::with_capacity(n_points * (max_order[i] + 1) * shape[i]))
            .collect();
        let mut x = vec![0.0; d];
        for p in 0..n_points {
            coords(p, &mut x);
            for i in 0..d {
                let orders = eval_basis_1d_orders(&spec.dims[i], x[i], max_order[i])?;
                for row in orders {
                    data[i].extend_from_slice(&row);
                }
            }
        }
        Ok(BasisTables { n_points, shape, max_order: max_order.to_vec(), data })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn max_order(&self) -> &[usize] {
        &self.max_order
    }

    #[inline]
    pub fn get(&self, dim: usize, point: usize, order: usize) -> &[f64] {
        let n = self.shape[dim];
        let stride = (self.max_order[dim] + 1) * n;
        let start = point * stride + order * n;
        &self.data[dim][start..start + n]
    }
}

#[derive(Debug, Clone)]
struct Node {
    parent: usize,
    axis: usize,
    order: usize,
    len: usize,
}

/// Shared contraction tree for a fixed list of multi-indices.
#[derive(Debug, Clone)]
pub struct ContractionPlan {
    shape: Vec<usize>,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
}

/// Scratch buffers reused across points.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    bufs: Vec<Vec<f64>>,
    cots: Vec<Vec<f64>>,
}

impl ContractionPlan {
    pub fn new(shape: &[usize], indices: &[MultiIndex]) -> Self {
        let d = shape.len();
        let total: usize = shape.iter().product();
        let mut nodes = vec![Node { parent: usize::MAX, axis: d, order: 0, len: total }];
        let mut leaves = Vec::with_capacity(indices.len());
        for idx in indices {
            assert_eq!(idx.len(), d, "multi-index dimension mismatch");
            let mut cur = 0;
            for axis in (0..d).rev() {
                let order = idx.as_slice()[axis];
                let found = nodes
                    .iter()
                    .position(|n| n.parent == cur && n.axis == axis && n.order == order);
                cur = match found {
                    Some(i) => i,
                    None => {
                        let len = nodes[cur].len / shape[axis];
                        nodes.push(Node { parent: cur, axis, order, len });
                        nodes.len() - 1
                    }
                };
            }
            leaves.push(cur);
        }
        ContractionPlan { shape: shape.to_vec(), nodes, leaves }
    }

    pub fn n_outputs(&self) -> usize {
        self.leaves.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            bufs: self.nodes.iter().map(|n| vec![0.0; n.len]).collect(),
            cots: self.nodes.iter().map(|n| vec![0.0; n.len]).collect(),
        }
    }

    /// Contracts `coeffs` at `point`; writes one value per multi-index to `out`.
    pub fn forward(
        &self,
        coeffs: &[f64],
        tables: &BasisTables,
        point: usize,
        ws: &mut Workspace,
        out: &mut [f64],
    ) {
        for (ni, node) in self.nodes.iter().enumerate().skip(1) {
            let n = self.shape[node.axis];
            let t = tables.get(node.axis, point, node.order);
            let (head, tail) = ws.bufs.split_at_mut(ni);
            let parent: &[f64] = if node.parent == 0 { coeffs } else { &head[node.parent] };
            let dst = &mut tail[0];
            for (q, v) in dst.iter_mut().enumerate() {
                let chunk = &parent[q * n..(q + 1) * n];
                *v = dot(chunk, t);
            }
        }
        for (o, &leaf) in out.iter_mut().zip(&self.leaves) {
            *o = ws.bufs[leaf][0];
        }
    }

    /// Adds `scale * sum_j cot[j] * prod_i phi_i^{(j_i)}` to `grad`.
    pub fn backward(
        &self,
        cot: &[f64],
        tables: &BasisTables,
        point: usize,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) {
        for c in ws.cots.iter_mut() {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        for (&leaf, &g) in self.leaves.iter().zip(cot) {
            ws.cots[leaf][0] += g;
        }
        for ni in (1..self.nodes.len()).rev() {
            let node = &self.nodes[ni];
            let n = self.shape[node.axis];
            let t = tables.get(node.axis, point, node.order);
            let (head, tail) = ws.cots.split_at_mut(ni);
            let src = &tail[0];
            if src.iter().all(|v| *v == 0.0) {
                continue;
            }
            let dst: &mut [f64] = if node.parent == 0 { grad } else { &mut head[node.parent] };
            for (q, &c) in src.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let chunk = &mut dst[q * n..(q + 1) * n];
                for (d, &tk) in chunk.iter_mut().zip(t) {
                    *d += c * tk;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

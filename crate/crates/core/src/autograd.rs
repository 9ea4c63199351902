//! Reverse-mode differentiation over the graph recorded by [`Tensor`] ops.
//!
//! [`backward`] walks the graph once in reverse topological order. Gradients
//! of intermediate nodes live only for the duration of the walk; gradients of
//! trainable leaves are returned in a [`Gradients`] map keyed by tensor id.
//! A node consumed by several downstream ops receives the sum of their
//! contributions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Op, Tensor};

/// Gradients of a scalar with respect to trainable leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds every gradient of `other` into `self`.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.map {
            add_into(&mut self.map, id, g);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

fn add_into(map: &mut BTreeMap<u64, Vec<f64>>, id: u64, g: Vec<f64>) {
    match map.get_mut(&id) {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => {
            map.insert(id, g);
        }
    }
}

/// Post-order of the nodes that require gradients, iteratively.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        for p in t.0.op.parents() {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Computes `∂loss/∂leaf` for every trainable leaf reachable from `loss`.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.len() != 1 {
        return Err(Error::NotScalar(loss.shape().to_vec()));
    }
    if !loss.has_graph() {
        if loss.requires_grad() {
            // d loss / d loss for a trainable scalar leaf.
            let mut map = BTreeMap::new();
            map.insert(loss.id(), vec![1.0]);
            return Ok(Gradients { map });
        }
        return Err(Error::NoGraph);
    }
    let order = topo_order(loss);
    let mut pending: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    pending.insert(loss.id(), vec![1.0]);
    let mut leaves = BTreeMap::new();
    for node in order.iter().rev() {
        let Some(g) = pending.remove(&node.id()) else { continue };
        if let Op::Leaf = node.0.op {
            add_into(&mut leaves, node.id(), g);
            continue;
        }
        for (parent, pg) in local_grads(node, &g) {
            if parent.requires_grad() {
                add_into(&mut pending, parent.id(), pg);
            }
        }
    }
    Ok(Gradients { map: leaves })
}

fn wants(t: &Tensor) -> bool {
    t.requires_grad()
}

/// Vector-Jacobian products of one node with respect to its parents.
fn local_grads<'a>(node: &'a Tensor, g: &[f64]) -> Vec<(&'a Tensor, Vec<f64>)> {
    let y = node.data();
    match &node.0.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
        Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
        Op::Mul(a, b) => {
            let mut out = Vec::new();
            if wants(a) {
                out.push((a, g.iter().zip(b.data()).map(|(g, b)| g * b).collect()));
            }
            if wants(b) {
                out.push((b, g.iter().zip(a.data()).map(|(g, a)| g * a).collect()));
            }
            out
        }
        Op::Scale(a, c) => vec![(a, g.iter().map(|v| v * c).collect())],
        Op::AddScalar(a) => vec![(a, g.to_vec())],
        Op::ScaleBy(x, s) => {
            let c = s.item();
            let mut out = Vec::new();
            if wants(x) {
                out.push((x, g.iter().map(|v| v * c).collect()));
            }
            if wants(s) {
                out.push((s, vec![kernels::dot(g, x.data())]));
            }
            out
        }
        Op::AddScaled { base, delta, gamma } => {
            let c = gamma.item();
            let mut out = vec![(base, g.to_vec())];
            if wants(delta) {
                out.push((delta, g.iter().map(|v| v * c).collect()));
            }
            if wants(gamma) {
                out.push((gamma, vec![kernels::dot(g, delta.data())]));
            }
            out
        }
        Op::Recip(a) => vec![(a, g.iter().zip(y).map(|(g, y)| -g * y * y).collect())],
        Op::Matmul { a, b, ta, tb } => matmul_grads(a, b, *ta, *tb, g),
        Op::Transpose(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = g[j * r + i];
                }
            }
            vec![(a, out)]
        }
        Op::Reshape(a) => vec![(a, g.to_vec())],
        Op::Concat(parts) => {
            let mut offset = 0;
            let mut out = Vec::new();
            for p in parts {
                let n = p.len();
                if wants(p) {
                    out.push((p, g[offset..offset + n].to_vec()));
                }
                offset += n;
            }
            out
        }
        Op::Conv2d { input, kernel, stride, pad } => conv_grads(input, kernel, *stride, *pad, g),
        Op::AddBias(x, b) => {
            let plane = x.shape()[1] * x.shape()[2];
            let mut out = vec![(x, g.to_vec())];
            if wants(b) {
                out.push((b, g.chunks(plane).map(|c| c.iter().sum()).collect()));
            }
            out
        }
        Op::Upsample(x, f) => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            // Summing each f×f block is f² times the average pool.
            let pooled = kernels::avg_pool(g, c, h * f, w * f, *f);
            let ff = (f * f) as f64;
            vec![(x, pooled.into_iter().map(|v| v * ff).collect())]
        }
        Op::AvgPool(x, f) => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (ho, wo) = (h / f, w / f);
            let norm = 1.0 / (f * f) as f64;
            let mut out = vec![0.0; c * h * w];
            for ch in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        out[(ch * h + yy) * w + xx] = g[(ch * ho + yy / f) * wo + xx / f] * norm;
                    }
                }
            }
            vec![(x, out)]
        }
        Op::LeakyRelu(x, slope) => {
            vec![(x, g.iter().zip(x.data()).map(|(g, &v)| if v > 0.0 { *g } else { g * slope }).collect())]
        }
        Op::Relu(x) => vec![(x, g.iter().zip(x.data()).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())],
        Op::Sigmoid(x) => vec![(x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())],
        Op::Tanh(x) => vec![(x, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())],
        Op::Abs(x) => vec![(
            x,
            g.iter()
                .zip(x.data())
                .map(|(g, &v)| if v > 0.0 { *g } else if v < 0.0 { -g } else { 0.0 })
                .collect(),
        )],
        Op::Log { input, floor } => vec![(
            input,
            g.iter().zip(input.data()).map(|(g, &v)| if v > *floor { g / v } else { 0.0 }).collect(),
        )],
        Op::Sum(x) => vec![(x, vec![g[0]; x.len()])],
        Op::Mean(x) => vec![(x, vec![g[0] / x.len() as f64; x.len()])],
        Op::SoftmaxRows(x) => {
            let c = x.shape()[1];
            let mut out = vec![0.0; y.len()];
            for ((orow, yrow), grow) in out.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                let s = kernels::dot(yrow, grow);
                for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                    *o = yv * (gv - s);
                }
            }
            vec![(x, out)]
        }
    }
}

fn matmul_grads<'a>(a: &'a Tensor, b: &'a Tensor, ta: bool, tb: bool, g: &[f64]) -> Vec<(&'a Tensor, Vec<f64>)> {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let m = if ta { ac } else { ar };
    let k = if ta { ar } else { ac };
    let n = if tb { br } else { bc };
    let mut out = Vec::new();
    if wants(a) {
        let mut ga = vec![0.0; a.len()];
        match (ta, tb) {
            // C = A·B: dA = dC·Bᵀ
            (false, false) => kernels::gemm_nt(m, n, k, g, b.data(), &mut ga),
            // C = A·Bᵀ: dA = dC·B
            (false, true) => kernels::gemm_nn(m, n, k, g, b.data(), &mut ga),
            // C = Aᵀ·B: dA = B·dCᵀ  (A is k×m)
            (true, false) => kernels::gemm_nt(k, n, m, b.data(), g, &mut ga),
            (true, true) => unreachable!(),
        }
        out.push((a, ga));
    }
    if wants(b) {
        let mut gb = vec![0.0; b.len()];
        match (ta, tb) {
            // dB = Aᵀ·dC
            (false, false) => kernels::gemm_tn(k, m, n, a.data(), g, &mut gb),
            // B is n×k: dB = dCᵀ·A
            (false, true) => kernels::gemm_tn(n, m, k, g, a.data(), &mut gb),
            // dB = A·dC
            (true, false) => kernels::gemm_nn(k, m, n, a.data(), g, &mut gb),
            (true, true) => unreachable!(),
        }
        out.push((b, gb));
    }
    out
}

fn conv_grads<'a>(
    input: &'a Tensor,
    kernel: &'a Tensor,
    stride: usize,
    pad: usize,
    g: &[f64],
) -> Vec<(&'a Tensor, Vec<f64>)> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (kernel.shape()[0], kernel.shape()[2]);
    let geom = ConvGeom { c, h, w, k, stride, pad };
    let (ho, wo) = geom.out_hw();
    let (rows, npos) = (c * k * k, ho * wo);
    let mut out = Vec::new();
    if wants(kernel) {
        let cols = kernels::im2col(&geom, input.data());
        let mut gk = vec![0.0; co * rows];
        kernels::gemm_nt(co, npos, rows, g, &cols, &mut gk);
        out.push((kernel, gk));
    }
    if wants(input) {
        let mut gcols = vec![0.0; rows * npos];
        kernels::gemm_tn(rows, co, npos, kernel.data(), g, &mut gcols);
        out.push((input, kernels::col2im(&geom, &gcols)));
    }
    out
}

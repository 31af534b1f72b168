//! Reverse-mode differentiation over a Wengert list of matrix operations.
//!
//! Each forward operation appends a node holding its value; [`Tape::backward`]
//! walks the list once in reverse and accumulates adjoints. Parameters enter
//! through [`Tape::param`] and their gradients come back keyed by `K`.

use std::collections::BTreeMap;

use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<K> {
    Input,
    Param(K),
    MatMul(Var, Var),
    Add(Var, Var),
    Relu(Var),
    /// `x * map` with a constant map.
    Fixed(Var, Matrix),
    AddBias(Var, Var),
    /// `gamma * (x - mean) * inv_std + beta`; `batch` tells whether the
    /// statistics came from the batch itself and thus depend on `x`.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch: bool,
    },
    SoftmaxXent {
        logits: Var,
        probs: Matrix,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<K> {
    value: Matrix,
    op: Op<K>,
}

#[derive(Debug)]
pub struct Tape<K> {
    nodes: Vec<Node<K>>,
}

impl<K: Ord + Clone> Default for Tape<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Ord + Clone> Tape<K> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op<K>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, key: K, value: Matrix) -> Var {
        self.push(value, Op::Param(key))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let v = self.value(x).matmul(self.value(w));
        self.push(v, Op::MatMul(x, w))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for e in &mut v.data {
            if *e < 0.0 {
                *e = 0.0;
            }
        }
        self.push(v, Op::Relu(x))
    }

    pub fn fixed(&mut self, x: Var, map: Matrix) -> Var {
        let v = self.value(x).matmul(&map);
        self.push(v, Op::Fixed(x, map))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows, 1);
        let mut v = self.value(x).clone();
        let cols = v.cols;
        for row in v.data.chunks_mut(cols) {
            for (e, bb) in row.iter_mut().zip(&b.data) {
                *e += bb;
            }
        }
        self.push(v, Op::AddBias(x, bias))
    }

    /// Feature-wise normalization with the given per-column statistics.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch: bool,
    ) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                xhat.data[r * cols + c] = (xv.data[r * cols + c] - mean[c]) * inv_std[c];
            }
        }
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut out = xhat.clone();
        for row in out.data.chunks_mut(cols) {
            for c in 0..cols {
                row[c] = g[c] * row[c] + b[c];
            }
        }
        self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
        )
    }

    /// Mean softmax cross-entropy over the batch, as a 1x1 value.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Var {
        let z = self.value(logits);
        let (rows, cols) = z.shape();
        assert_eq!(rows, labels.len());
        let mut probs = Matrix::zeros(rows, cols);
        let mut loss = 0.0;
        for r in 0..rows {
            let row = z.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for c in 0..cols {
                probs.data[r * cols + c] = (row[c] - m).exp() / s;
            }
            loss += -(row[labels[r]] - m - s.ln());
        }
        loss /= rows as f64;
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter on the tape.
    pub fn backward(&self, loss: Var) -> BTreeMap<K, Matrix> {
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads: BTreeMap<K, Matrix> = BTreeMap::new();

        fn acc(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(k) => match grads.get_mut(k) {
                    Some(a) => a.add_assign(&g),
                    None => {
                        grads.insert(k.clone(), g);
                    }
                },
                Op::MatMul(x, w) => {
                    let gx = g.matmul_t(self.value(*w));
                    let gw = self.value(*x).t_matmul(&g);
                    acc(&mut adj, *x, gx);
                    acc(&mut adj, *w, gw);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (e, &xv) in gx.data.iter_mut().zip(&self.value(*x).data) {
                        if xv <= 0.0 {
                            *e = 0.0;
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Fixed(x, map) => {
                    acc(&mut adj, *x, g.matmul_t(map));
                }
                Op::AddBias(x, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols) {
                        for (a, v) in gb.data.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc(&mut adj, *x, g);
                    acc(&mut adj, *b, gb);
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch,
                } => {
                    let (rows, cols) = g.shape();
                    let gam = &self.value(*gamma).data;
                    let mut ggamma = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let dy = g.data[r * cols + c];
                            ggamma.data[c] += dy * xhat.data[r * cols + c];
                            gbeta.data[c] += dy;
                        }
                    }
                    let mut gx = Matrix::zeros(rows, cols);
                    if *batch {
                        let n = rows as f64;
                        for c in 0..cols {
                            // sum(dxhat) and sum(dxhat * xhat) in terms of gbeta, ggamma
                            let s1 = gam[c] * gbeta.data[c];
                            let s2 = gam[c] * ggamma.data[c];
                            for r in 0..rows {
                                let dxhat = g.data[r * cols + c] * gam[c];
                                gx.data[r * cols + c] = inv_std[c] / n
                                    * (n * dxhat - s1 - xhat.data[r * cols + c] * s2);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                gx.data[r * cols + c] = g.data[r * cols + c] * gam[c] * inv_std[c];
                            }
                        }
                    }
                    acc(&mut adj, *x, gx);
                    acc(&mut adj, *gamma, ggamma);
                    acc(&mut adj, *beta, gbeta);
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    labels,
                } => {
                    let scale = g.data[0] / labels.len() as f64;
                    let mut gz = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        gz.data[r * gz.cols + y] -= 1.0;
                    }
                    gz.scale(scale);
                    acc(&mut adj, *logits, gz);
                }
            }
        }
        grads
    }
}

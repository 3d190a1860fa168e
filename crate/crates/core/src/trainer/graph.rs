//! Training objectives expressed on the tape.
//!
//! `J_k` is built for the whole batch at once as a stacked matrix with
//! `B * d_L` rows (row `b * d_L + a` holds `d h_L[a] / d h_k` for example
//! `b`), so the regulariser is an ordinary differentiable function of the
//! weights.

use crate::autodiff::{Grads, Tape, Var};
use crate::linalg::Matrix;
use crate::network::{Activation, Gradient, Network};
use crate::noise::{NoiseMode, NoiseSpec, Perturbation};
use crate::objective::{LossKind, RegVariant};

pub(crate) struct NetGraph {
    pub tape: Tape,
    weights: Vec<Var>,
    biases: Vec<Var>,
    activations: Vec<Activation>,
    /// `z_{i+1}` for layer `i`.
    pre: Vec<Var>,
    /// `h_0 ..= h_L`, clean unless perturbations were supplied.
    post: Vec<Var>,
    batch: usize,
}

impl NetGraph {
    /// Records a forward pass. `noise[k]`, when present, perturbs `h_k`
    /// before it feeds layer `k`.
    pub fn forward(net: &Network, inputs: &Matrix, noise: &[Option<Perturbation>]) -> Self {
        let mut tape = Tape::new();
        let mut weights = Vec::with_capacity(net.depth());
        let mut biases = Vec::with_capacity(net.depth());
        let mut activations = Vec::with_capacity(net.depth());
        for layer in net.layers() {
            weights.push(tape.param(layer.weights.clone()));
            biases.push(tape.param(Matrix::row_vector(&layer.bias)));
            activations.push(layer.activation);
        }
        let mut h = tape.constant(inputs.clone());
        let mut post = vec![h];
        let mut pre = Vec::with_capacity(net.depth());
        for i in 0..net.depth() {
            let fed = match noise.get(i).and_then(Option::as_ref) {
                Some(Perturbation::Add(e)) => {
                    let c = tape.constant(e.clone());
                    tape.add(h, c)
                }
                Some(Perturbation::Scale(s)) => {
                    let c = tape.constant(s.clone());
                    tape.mul(h, c)
                }
                None => h,
            };
            let lin = tape.matmul_nt(fed, weights[i]);
            let z = tape.add_row(lin, biases[i]);
            h = match activations[i] {
                Activation::Identity => z,
                act => tape.activation(z, act),
            };
            pre.push(z);
            post.push(h);
        }
        NetGraph {
            tape,
            weights,
            biases,
            activations,
            pre,
            post,
            batch: inputs.rows(),
        }
    }

    pub fn output(&self) -> Var {
        *self.post.last().expect("nonempty")
    }

    /// Mean loss over the batch.
    pub fn loss(&mut self, targets: &Matrix, loss: LossKind) -> Var {
        let out = self.output();
        let t = self.tape.constant(targets.clone());
        let n = self.batch as f64;
        match loss {
            LossKind::Mse => {
                let d = self.tape.sub(out, t);
                let sq = self.tape.square(d);
                let s = self.tape.sum(sq);
                self.tape.scale(s, 0.5 / n)
            }
            LossKind::CrossEntropy => {
                let ls = self.tape.log_softmax_rows(out);
                let m = self.tape.mul(ls, t);
                let s = self.tape.sum(m);
                self.tape.scale(s, -1.0 / n)
            }
        }
    }

    /// Per-activation regulariser terms `r_k` on the recorded (clean)
    /// activations; `None` for silent layers.
    pub fn regulariser(&mut self, spec: &NoiseSpec, variant: RegVariant) -> Vec<Option<Var>> {
        let depth = self.weights.len();
        let mut out = vec![None; depth];
        let Some(lowest) = spec.layers.iter().position(|l| l.is_active()) else {
            return out;
        };
        let output = self.output();
        let t = &mut self.tape;
        let d_l = t.value(output).cols();
        let b = self.batch;
        let mut eye = Matrix::zeros(b * d_l, d_l);
        for e in 0..b {
            for a in 0..d_l {
                eye[(e * d_l + a, a)] = 1.0;
            }
        }
        let mut j = t.constant(eye);
        let probs = match variant {
            RegVariant::Mse => None,
            RegVariant::CeDiag | RegVariant::CeFull => {
                let p = t.softmax_rows(self.post[depth]);
                Some(t.reshape(p, b * d_l, 1))
            }
        };
        for i in (lowest..depth).rev() {
            let mut g = j;
            if self.activations[i] != Activation::Identity {
                let s = t.slope(self.pre[i], self.activations[i]);
                let rep = t.repeat_rows(s, d_l);
                g = t.mul(g, rep);
            }
            j = t.matmul(g, self.weights[i]);
            let noise = spec.layers[i];
            if !noise.is_active() {
                continue;
            }
            let sq = t.square(j);
            let per_unit = match (variant, probs) {
                (RegVariant::Mse, _) | (_, None) => t.group_sum_rows(sq, d_l),
                (RegVariant::CeDiag, Some(p)) => {
                    let p2 = t.square(p);
                    let w = t.sub(p, p2);
                    let wsq = t.mul_col(sq, w);
                    t.group_sum_rows(wsq, d_l)
                }
                (RegVariant::CeFull, Some(p)) => {
                    let psq = t.mul_col(sq, p);
                    let first = t.group_sum_rows(psq, d_l);
                    let pj = t.mul_col(j, p);
                    let mean = t.group_sum_rows(pj, d_l);
                    let second = t.square(mean);
                    t.sub(first, second)
                }
            };
            let weighted = match noise.mode {
                NoiseMode::Multiplicative => {
                    let h2 = t.square(self.post[i]);
                    t.mul(per_unit, h2)
                }
                _ => per_unit,
            };
            let s = t.sum(weighted);
            out[i] = Some(t.scale(s, 0.5 * noise.variance / b as f64));
        }
        out
    }

    /// Sum of the present terms, or `None` if all are absent.
    pub fn total(&mut self, terms: &[Option<Var>]) -> Option<Var> {
        terms
            .iter()
            .flatten()
            .copied()
            .reduce(|a, b| self.tape.add(a, b))
    }

    pub fn gradient(&self, root: Var) -> Gradient {
        let mut grads: Grads = self.tape.backward(root);
        let weights = self
            .weights
            .iter()
            .map(|&w| {
                grads.take(w).unwrap_or_else(|| {
                    let (r, c) = self.tape.value(w).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        let biases = self
            .biases
            .iter()
            .map(|&b| match grads.take(b) {
                Some(g) => g.into_data(),
                None => vec![0.0; self.tape.value(b).cols()],
            })
            .collect();
        Gradient { weights, biases }
    }
}

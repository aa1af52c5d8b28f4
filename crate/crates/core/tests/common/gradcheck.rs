//! Central finite-difference oracle for autodiff gradients.

use stylepad::numerics::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, GroupNorm, LayerNorm, Linear, Mode};
use stylepad::numerics::{embedding, Graph, ParameterSet, RngStream, Tensor, Var};
use stylepad::Result;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor so entries with (near-)zero true gradient are judged
/// on absolute error instead of exploding relative error.
pub const FLOOR: f64 = 1e-4;

pub type LossFn = Box<dyn Fn(&mut Graph<f64>, &ParameterSet<f64>) -> Result<Var>>;

pub struct Case {
    pub name: String,
    pub ps: ParameterSet<f64>,
    pub loss: LossFn,
}

#[derive(Debug)]
pub struct Report {
    pub max_rel: f64,
    pub checked: usize,
    pub worst: String,
}

fn eval(case: &Case, ps: &ParameterSet<f64>) -> f64 {
    let mut g = Graph::inference();
    let l = (case.loss)(&mut g, ps).expect("forward");
    g.value(l).item()
}

/// Compares autodiff against central differences on up to `per_param`
/// randomly chosen entries of every trainable tensor.
pub fn check(case: &mut Case, per_param: usize, rng: &mut RngStream) -> Report {
    case.ps.zero_grads();
    let mut g = Graph::new();
    let l = (case.loss)(&mut g, &case.ps).expect("forward");
    g.backward(l, &mut case.ps).expect("backward");
    let mut work = case.ps.clone();
    let mut report = Report {
        max_rel: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for id in case.ps.trainable_ids() {
        let n = case.ps.value(id).numel();
        let mut idx: Vec<usize> = (0..n).collect();
        if n > per_param {
            rng.shuffle(&mut idx);
            idx.truncate(per_param);
        }
        for i in idx {
            let orig = case.ps.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + H;
            let up = eval(case, &work);
            work.value_mut(id).data_mut()[i] = orig - H;
            let down = eval(case, &work);
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = case.ps.grad(id).unwrap().data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!(
                    "{}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}",
                    case.ps.get(id).name
                );
            }
        }
    }
    report
}

fn randn(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn dim(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// `sum(out ⊙ r)` for a fixed random `r`, so that shift- or
/// scale-invariant layers still receive informative gradients.
fn weighted_sum(g: &mut Graph<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(out, rv)?;
    Ok(g.sum(p))
}

struct Builder {
    name: String,
    ps: ParameterSet<f64>,
}

impl Builder {
    fn new(name: String) -> Self {
        Self {
            name,
            ps: ParameterSet::new(),
        }
    }

    fn input(&mut self, name: &str, shape: &[usize], rng: &mut RngStream) -> stylepad::numerics::ParamId {
        self.ps.add(name, randn(shape, rng)).unwrap()
    }

    fn finish(self, loss: LossFn) -> Case {
        Case {
            name: self.name,
            ps: self.ps,
            loss,
        }
    }
}

/// One case per (operation, random shape). Covers every differentiable
/// layer and loss used by the models.
pub fn cases(seed: u64, per_op: usize) -> Vec<Case> {
    let mut rng = RngStream::new("gradcheck-shapes", seed);
    let mut out = Vec::new();
    for rep in 0..per_op {
        // linear
        {
            let (n, di, dout) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 6), dim(&mut rng, 1, 5));
            let mut b = Builder::new(format!("linear/{rep} n={n} in={di} out={dout}"));
            let x = b.input("x", &[n, di], &mut rng);
            let lin = Linear::new(&mut b.ps, "lin", di, dout, &mut rng).unwrap();
            randomize_bias(&mut b.ps, &mut rng);
            let r = randn(&[n, dout], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = lin.forward(g, ps, xv)?;
                weighted_sum(g, y, &r)
            })));
        }
        // conv1d with varying stride / padding
        {
            let (bt, ci, co) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 4));
            let k = dim(&mut rng, 1, 5);
            let stride = dim(&mut rng, 1, 3);
            let pad = rng.below(k);
            let len = k + dim(&mut rng, 0, 6);
            let mut b = Builder::new(format!(
                "conv1d/{rep} B={bt} Cin={ci} Cout={co} L={len} k={k} s={stride} p={pad}"
            ));
            let x = b.input("x", &[bt, ci, len], &mut rng);
            let conv = Conv1d::new(&mut b.ps, "conv", ci, co, k, stride, pad, &mut rng).unwrap();
            randomize_bias(&mut b.ps, &mut rng);
            let lo = (len + 2 * pad - k) / stride + 1;
            let r = randn(&[bt, co, lo], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = conv.forward(g, ps, xv)?;
                weighted_sum(g, y, &r)
            })));
        }
        // transposed conv
        {
            let (bt, ci, co) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
            let k = dim(&mut rng, 1, 4);
            let stride = dim(&mut rng, 1, 3);
            let pad = rng.below(k);
            let op = rng.below(stride);
            let len = dim(&mut rng, 2, 6);
            let lo = (len - 1) * stride + k + op;
            if lo <= 2 * pad {
                continue;
            }
            let lo = lo - 2 * pad;
            let mut b = Builder::new(format!(
                "conv_transpose1d/{rep} B={bt} Cin={ci} Cout={co} L={len} k={k} s={stride} p={pad} op={op}"
            ));
            let x = b.input("x", &[bt, ci, len], &mut rng);
            let conv =
                ConvTranspose1d::new(&mut b.ps, "convt", ci, co, k, stride, pad, op, &mut rng).unwrap();
            randomize_bias(&mut b.ps, &mut rng);
            let r = randn(&[bt, co, lo], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = conv.forward(g, ps, xv)?;
                weighted_sum(g, y, &r)
            })));
        }
        // max pooling
        {
            let (bt, c) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
            let k = dim(&mut rng, 1, 3);
            let stride = dim(&mut rng, 1, 3);
            let len = k + dim(&mut rng, 0, 6);
            let mut b = Builder::new(format!("max_pool1d/{rep} B={bt} C={c} L={len} k={k} s={stride}"));
            let x = b.input("x", &[bt, c, len], &mut rng);
            let lo = (len - k) / stride + 1;
            let r = randn(&[bt, c, lo], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = g.max_pool1d(xv, k, stride)?;
                weighted_sum(g, y, &r)
            })));
        }
        // group norm
        {
            let groups = dim(&mut rng, 1, 3);
            let c = groups * dim(&mut rng, 1, 2);
            let (bt, len) = (dim(&mut rng, 1, 3), dim(&mut rng, 2, 6));
            let mut b = Builder::new(format!("group_norm/{rep} B={bt} C={c} L={len} G={groups}"));
            let x = b.input("x", &[bt, c, len], &mut rng);
            let mut gn = GroupNorm::new(&mut b.ps, "gn", c).unwrap();
            gn.groups = groups;
            randomize_affine(&mut b.ps, &mut rng);
            let r = randn(&[bt, c, len], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = gn.forward(g, ps, xv)?;
                weighted_sum(g, y, &r)
            })));
        }
        // batch norm (training statistics), rank 2 and 3
        {
            let (bt, c) = (dim(&mut rng, 2, 4), dim(&mut rng, 1, 3));
            let len = dim(&mut rng, 0, 4);
            let shape: Vec<usize> = if len == 0 { vec![bt, c] } else { vec![bt, c, len] };
            let mut b = Builder::new(format!("batch_norm/{rep} shape={shape:?}"));
            let x = b.input("x", &shape, &mut rng);
            let bn = BatchNorm1d::new(&mut b.ps, "bn", c).unwrap();
            randomize_affine(&mut b.ps, &mut rng);
            let r = randn(&shape, &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = bn.forward(g, ps, xv, Mode::Train)?;
                weighted_sum(g, y, &r)
            })));
        }
        // layer norm over the last axis
        {
            let (n, d) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 6));
            let mut b = Builder::new(format!("layer_norm/{rep} N={n} D={d}"));
            let x = b.input("x", &[n, 2, d], &mut rng);
            let ln = LayerNorm::new(&mut b.ps, "ln", d).unwrap();
            randomize_affine(&mut b.ps, &mut rng);
            let r = randn(&[n, 2, d], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let y = ln.forward(g, ps, xv)?;
                weighted_sum(g, y, &r)
            })));
        }
        // elementwise activations, softmax, row normalization
        {
            let (n, d) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 6));
            let mut b = Builder::new(format!("activations/{rep} N={n} D={d}"));
            let x = b.input("x", &[n, d], &mut rng);
            let r = randn(&[n, d], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let a = g.relu(xv);
                let s = g.silu(xv);
                let sm = g.softmax_last(xv)?;
                let nr = g.normalize_rows(xv)?;
                let t = g.add(a, s)?;
                let t = g.sub(t, sm)?;
                let t = g.add(t, nr)?;
                let t = g.affine(t, 0.7, -0.2);
                weighted_sum(g, t, &r)
            })));
        }
        // batched matmul, matmul, permute, concat, slice, broadcasts, means
        {
            let (bt, m, k, n) = (
                dim(&mut rng, 1, 3),
                dim(&mut rng, 1, 4),
                dim(&mut rng, 1, 4),
                dim(&mut rng, 1, 4),
            );
            let mut b = Builder::new(format!("tensor_ops/{rep} B={bt} M={m} K={k} N={n}"));
            let a = b.input("a", &[bt, m, k], &mut rng);
            let bb = b.input("b", &[bt, k, n], &mut rng);
            let bt_ = b.input("bt", &[bt, n, k], &mut rng);
            let w = b.input("w", &[n, k], &mut rng);
            let r = randn(&[bt, 2 * m + 1, n + 1], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let av = g.param(ps, a);
                let bv = g.param(ps, bb);
                let btv = g.param(ps, bt_);
                let wv = g.param(ps, w);
                let p1 = g.bmm(av, bv, false)?;
                let p2 = g.bmm(av, btv, true)?;
                let p2 = g.permute(p2, &[0, 2, 1])?;
                let p2 = g.permute(p2, &[0, 2, 1])?;
                let flat = g.reshape(av, &[bt * m, k])?;
                let p3 = g.matmul(flat, wv, true)?;
                let p3 = g.reshape(p3, &[bt, m, n])?;
                let half = g.slice(p3, 1, 0, 1)?;
                let cat = g.concat(&[p1, p2, half], 1)?;
                let mean = g.mean_last(cat)?;
                let col = g.broadcast_last(mean, 1);
                let full = g.concat(&[cat, col], 2)?;
                let sq = g.mul(full, full)?;
                let s = weighted_sum(g, sq, &r)?;
                let m_all = g.mean(p1);
                let t = g.add(s, m_all)?;
                Ok(t)
            })));
        }
        // losses
        {
            let (n, m) = (dim(&mut rng, 1, 5), dim(&mut rng, 2, 6));
            let labels: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
            let target = randn(&[n, m], &mut rng);
            let mut b = Builder::new(format!("losses/{rep} N={n} M={m}"));
            let x = b.input("logits", &[n, m], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let ce = g.softmax_cross_entropy(xv, &labels)?;
                let mse = g.mse(xv, &target)?;
                g.add(ce, mse)
            })));
        }
        // timestep embedding MLP (sinusoid -> linear -> SiLU -> linear)
        {
            let dimn = 2 * dim(&mut rng, 1, 4);
            let hidden = dim(&mut rng, 2, 6);
            let ts: Vec<usize> = (0..dim(&mut rng, 1, 3)).map(|_| rng.below(101)).collect();
            let mut b = Builder::new(format!("embedding_mlp/{rep} dim={dimn} hidden={hidden} t={ts:?}"));
            let l1 = Linear::new(&mut b.ps, "l1", dimn, hidden, &mut rng).unwrap();
            let l2 = Linear::new(&mut b.ps, "l2", hidden, hidden, &mut rng).unwrap();
            randomize_bias(&mut b.ps, &mut rng);
            let emb: Tensor<f64> = embedding::timestep_embedding_batch(&ts, dimn).unwrap();
            let r = randn(&[ts.len(), hidden], &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let e = g.constant(emb.clone());
                let h = l1.forward(g, ps, e)?;
                let h = g.silu(h);
                let y = l2.forward(g, ps, h)?;
                weighted_sum(g, y, &r)
            })));
        }
        // two-layer network with cross-entropy
        {
            let (n, di, hdim, c) = (
                dim(&mut rng, 2, 5),
                dim(&mut rng, 2, 6),
                dim(&mut rng, 2, 8),
                dim(&mut rng, 2, 4),
            );
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let mut b = Builder::new(format!("two_layer/{rep} N={n} in={di} hidden={hdim} C={c}"));
            let x = b.input("x", &[n, di], &mut rng);
            let l1 = Linear::new(&mut b.ps, "l1", di, hdim, &mut rng).unwrap();
            let l2 = Linear::new(&mut b.ps, "l2", hdim, c, &mut rng).unwrap();
            randomize_bias(&mut b.ps, &mut rng);
            out.push(b.finish(Box::new(move |g, ps| {
                let xv = g.param(ps, x);
                let h = l1.forward(g, ps, xv)?;
                let h = g.relu(h);
                let y = l2.forward(g, ps, h)?;
                g.softmax_cross_entropy(y, &labels)
            })));
        }
    }
    out
}

fn randomize_bias(ps: &mut ParameterSet<f64>, rng: &mut RngStream) {
    let ids: Vec<_> = ps.ids().filter(|&id| ps.get(id).name.ends_with(".bias")).collect();
    for id in ids {
        ps.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.5 * rng.normal::<f64>());
    }
}

fn randomize_affine(ps: &mut ParameterSet<f64>, rng: &mut RngStream) {
    let ids: Vec<_> = ps
        .ids()
        .filter(|&id| {
            let n = &ps.get(id).name;
            n.ends_with(".gamma") || n.ends_with(".beta")
        })
        .collect();
    for id in ids {
        ps.value_mut(id).data_mut().iter_mut().for_each(|v| *v += 0.3 * rng.normal::<f64>());
    }
}

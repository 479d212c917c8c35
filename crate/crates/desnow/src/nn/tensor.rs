//! Reverse-mode autodiff over dense f64 tensors.
//!
//! Ops build a DAG of reference-counted nodes; `Tensor::backward` walks the
//! graph in reverse topological order and accumulates gradients into every
//! node that requires them. Backward closures capture their parent handles,
//! never their own node, so graphs drop cleanly. Every op checks its output
//! for non-finite values: NaN propagation is treated as a bug, not data.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Called with the node's values and accumulated gradient once all
/// consumers have contributed.
type BackwardFn = Box<dyn Fn(&[f64], &[f64])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

fn assert_finite(op: &str, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        assert!(v.is_finite(), "{op} produced non-finite value at index {i}: {v}");
    }
}

impl Tensor {
    fn construct(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(values.len(), n, "shape {shape:?} does not match {} values", values.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                grad: vec![0.0; values.len()],
                shape,
                values,
                requires_grad,
                parents,
                backward: backward.filter(|_| requires_grad),
            })),
        }
    }

    /// Data tensor; gradients do not flow into it.
    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_finite("from_values", &values);
        Self::construct(shape.to_vec(), values, false, Vec::new(), None)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_finite("param", &values);
        Self::construct(shape.to_vec(), values, true, Vec::new(), None)
    }

    /// Leaf that receives gradients without being a parameter (used by
    /// verification code probing intermediate quantities).
    pub fn leaf_with_grad(shape: &[usize], values: Vec<f64>) -> Tensor {
        Self::param(shape, values)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::from_values(shape, vec![0.0; shape.iter().product()])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        op: &str,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        assert_finite(op, &values);
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Self::construct(shape, values, requires_grad, parents, Some(backward))
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn grad(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    /// Scalar convenience accessor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.values.len(), 1, "item() on non-scalar tensor");
        inner.values[0]
    }

    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    pub(crate) fn with_grad_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.borrow_mut().grad)
    }

    /// Overwrite values in place (optimizer updates, test probes). Does not
    /// touch the graph.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.values.len(), values.len());
        inner.values.copy_from_slice(values);
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.fill(0.0);
    }

    /// Reverse-mode sweep from a scalar output. Accumulates into `grad` of
    /// every reachable node with `requires_grad`.
    pub fn backward(&self) {
        {
            let mut inner = self.inner.borrow_mut();
            assert_eq!(inner.values.len(), 1, "backward() needs a scalar output");
            inner.grad[0] = 1.0;
        }
        let order = self.topo_order();
        for t in order.iter().rev() {
            let inner = t.inner.borrow();
            if let Some(bw) = &inner.backward {
                bw(&inner.values, &inner.grad);
            }
        }
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // iterative DFS; second visit emits the node after its parents
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            let id = t.id();
            if !visited.insert(id) {
                continue;
            }
            let parents = t.inner.borrow().parents.clone();
            stack.push((t, true));
            for p in parents {
                if p.requires_grad() {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Vec<usize> {
    let sa = a.shape();
    let sb = b.shape();
    assert_eq!(sa, sb, "shape mismatch: {sa:?} vs {sb:?}");
    sa
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let shape = same_shape(a, b);
    let out = a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x + y).collect()));
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(shape, out, "add", vec![a.clone(), b.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i]; });
        }
        if pb.requires_grad() {
            pb.with_grad_mut(|gb| for i in 0..g.len() { gb[i] += g[i]; });
        }
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    let shape = same_shape(a, b);
    let out = a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x - y).collect()));
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(shape, out, "sub", vec![a.clone(), b.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i]; });
        }
        if pb.requires_grad() {
            pb.with_grad_mut(|gb| for i in 0..g.len() { gb[i] -= g[i]; });
        }
    }))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    let shape = same_shape(a, b);
    let out = a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x * y).collect()));
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(shape, out, "mul", vec![a.clone(), b.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            let bv = pb.values();
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i] * bv[i]; });
        }
        if pb.requires_grad() {
            let av = pa.values();
            pb.with_grad_mut(|gb| for i in 0..g.len() { gb[i] += g[i] * av[i]; });
        }
    }))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x * c).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "scale", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i] * c; });
        }
    }))
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x + c).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "add_scalar", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i]; });
        }
    }))
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn exp(a: &Tensor) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x.exp()).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "exp", vec![a.clone()], Box::new(move |vals, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| for i in 0..g.len() { ga[i] += g[i] * vals[i]; });
        }
    }))
}

/// Absolute value with subgradient 0 at the origin.
pub fn abs(a: &Tensor) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x.abs()).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "abs", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            let av = pa.values();
            pa.with_grad_mut(|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * sign0(av[i]);
                }
            });
        }
    }))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp to `[lo, hi]`; gradient passes where the input is inside the
/// closed interval and is cut outside it.
pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x.clamp(lo, hi)).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "clamp", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            let av = pa.values();
            pa.with_grad_mut(|ga| {
                for i in 0..g.len() {
                    if av[i] >= lo && av[i] <= hi {
                        ga[i] += g[i];
                    }
                }
            });
        }
    }))
}

pub fn leaky_relu(a: &Tensor, slope: f64) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect());
    let pa = a.clone();
    Tensor::from_op(a.shape(), out, "leaky_relu", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            let av = pa.values();
            pa.with_grad_mut(|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * if av[i] >= 0.0 { 1.0 } else { slope };
                }
            });
        }
    }))
}

/// `|pred - target|` with the single-channel target broadcast across the
/// prediction's channel axis. Shapes `(B, K, H, W)` and `(B, 1, H, W)`.
pub fn abs_err(pred: &Tensor, target: &Tensor) -> Tensor {
    let ps = pred.shape();
    let ts = target.shape();
    assert_eq!(ps.len(), 4, "abs_err expects rank-4 prediction");
    assert_eq!(ts, vec![ps[0], 1, ps[2], ps[3]], "target must be (B,1,H,W)");
    let (b, k, h, w) = (ps[0], ps[1], ps[2], ps[3]);
    let plane = h * w;
    let out = pred.with_values(|pv| {
        target.with_values(|tv| {
            let mut out = vec![0.0; pv.len()];
            for bi in 0..b {
                for ki in 0..k {
                    let po = (bi * k + ki) * plane;
                    let to = bi * plane;
                    for i in 0..plane {
                        out[po + i] = (pv[po + i] - tv[to + i]).abs();
                    }
                }
            }
            out
        })
    });
    let (pp, pt) = (pred.clone(), target.clone());
    Tensor::from_op(ps.clone(), out, "abs_err", vec![pred.clone(), target.clone()], Box::new(move |_, g| {
        let pv = pp.values();
        let tv = pt.values();
        if pp.requires_grad() {
            pp.with_grad_mut(|gp| {
                for bi in 0..b {
                    for ki in 0..k {
                        let po = (bi * k + ki) * plane;
                        let to = bi * plane;
                        for i in 0..plane {
                            gp[po + i] += g[po + i] * sign0(pv[po + i] - tv[to + i]);
                        }
                    }
                }
            });
        }
        if pt.requires_grad() {
            pt.with_grad_mut(|gt| {
                for bi in 0..b {
                    for ki in 0..k {
                        let po = (bi * k + ki) * plane;
                        let to = bi * plane;
                        for i in 0..plane {
                            gt[to + i] -= g[po + i] * sign0(pv[po + i] - tv[to + i]);
                        }
                    }
                }
            });
        }
    }))
}

/// Per-pixel minimum across channels of a `(B, K, H, W)` tensor, with the
/// gradient routed only to each pixel's argmin channel (ties to the lowest
/// index). Returns the `(B, 1, H, W)` minimum and the argmin plane.
pub fn channel_min(a: &Tensor) -> (Tensor, Vec<usize>) {
    let s = a.shape();
    assert_eq!(s.len(), 4, "channel_min expects rank 4");
    let (b, k, h, w) = (s[0], s[1], s[2], s[3]);
    assert!(k >= 1);
    let plane = h * w;
    let mut argmin = vec![0usize; b * plane];
    let out = a.with_values(|av| {
        let mut out = vec![0.0; b * plane];
        for bi in 0..b {
            for i in 0..plane {
                let mut best = av[(bi * k) * plane + i];
                let mut best_k = 0usize;
                for ki in 1..k {
                    let v = av[(bi * k + ki) * plane + i];
                    if v < best {
                        best = v;
                        best_k = ki;
                    }
                }
                out[bi * plane + i] = best;
                argmin[bi * plane + i] = best_k;
            }
        }
        out
    });
    let routing = argmin.clone();
    let pa = a.clone();
    let t = Tensor::from_op(
        vec![b, 1, h, w],
        out,
        "channel_min",
        vec![a.clone()],
        Box::new(move |_, g| {
            if pa.requires_grad() {
                pa.with_grad_mut(|ga| {
                    for bi in 0..b {
                        for i in 0..plane {
                            let ki = routing[bi * plane + i];
                            ga[(bi * k + ki) * plane + i] += g[bi * plane + i];
                        }
                    }
                });
            }
        }),
    );
    (t, argmin)
}

/// Sum of the entries selected by `mask`; an all-false mask yields 0 with
/// zero gradients everywhere.
pub fn masked_sum(a: &Tensor, mask: &[bool]) -> Tensor {
    assert_eq!(a.len(), mask.len(), "mask length must match tensor length");
    let total = a.with_values(|av| {
        av.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>()
    });
    let mask: Vec<bool> = mask.to_vec();
    let pa = a.clone();
    Tensor::from_op(vec![1], vec![total], "masked_sum", vec![a.clone()], Box::new(move |_, g| {
        if pa.requires_grad() {
            pa.with_grad_mut(|ga| {
                for i in 0..ga.len() {
                    if mask[i] {
                        ga[i] += g[0];
                    }
                }
            });
        }
    }))
}

pub fn sum(a: &Tensor) -> Tensor {
    let mask = vec![true; a.len()];
    masked_sum(a, &mask)
}

/// Mean over the entries selected by `mask`; 0 when the mask is empty.
pub fn masked_mean(a: &Tensor, mask: &[bool]) -> Tensor {
    let n = mask.iter().filter(|&&m| m).count();
    let s = masked_sum(a, mask);
    if n == 0 {
        s
    } else {
        scale(&s, 1.0 / n as f64)
    }
}

/// Two-class cross-entropy over logits `(B, 2, H, W)` against a per-pixel
/// class plane, summed over `mask`. Numerically stable log-softmax fused
/// with its analytic backward.
pub fn masked_cross_entropy(logits: &Tensor, classes: &[u8], mask: &[bool]) -> Tensor {
    let s = logits.shape();
    assert_eq!(s.len(), 4);
    assert_eq!(s[1], 2, "expected 2 logit channels");
    let (b, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    assert_eq!(classes.len(), b * plane);
    assert_eq!(mask.len(), b * plane);

    let total = logits.with_values(|lv| {
        let mut total = 0.0;
        for bi in 0..b {
            for i in 0..plane {
                if !mask[bi * plane + i] {
                    continue;
                }
                let l0 = lv[(bi * 2) * plane + i];
                let l1 = lv[(bi * 2 + 1) * plane + i];
                let m = l0.max(l1);
                let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
                let lt = if classes[bi * plane + i] == 0 { l0 } else { l1 };
                total += lse - lt;
            }
        }
        total
    });

    let classes: Vec<u8> = classes.to_vec();
    let mask: Vec<bool> = mask.to_vec();
    let pl = logits.clone();
    Tensor::from_op(vec![1], vec![total], "masked_cross_entropy", vec![logits.clone()], Box::new(move |_, g| {
        if !pl.requires_grad() {
            return;
        }
        let lv = pl.values();
        pl.with_grad_mut(|gl| {
            for bi in 0..b {
                for i in 0..plane {
                    if !mask[bi * plane + i] {
                        continue;
                    }
                    let i0 = (bi * 2) * plane + i;
                    let i1 = (bi * 2 + 1) * plane + i;
                    let m = lv[i0].max(lv[i1]);
                    let e0 = (lv[i0] - m).exp();
                    let e1 = (lv[i1] - m).exp();
                    let z = e0 + e1;
                    let (p0, p1) = (e0 / z, e1 / z);
                    let target = classes[bi * plane + i];
                    gl[i0] += g[0] * (p0 - if target == 0 { 1.0 } else { 0.0 });
                    gl[i1] += g[0] * (p1 - if target == 1 { 1.0 } else { 0.0 });
                }
            }
        });
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn add_mul_backward() {
        let a = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let b = Tensor::param(&[3], vec![4.0, 5.0, 6.0]);
        let loss = sum(&mul(&add(&a, &b), &b));
        // d/da (a+b)*b = b ; d/db = a + 2b
        loss.backward();
        assert_eq!(a.grad(), vec![4.0, 5.0, 6.0]);
        assert_eq!(b.grad(), vec![9.0, 12.0, 15.0]);
    }

    #[test]
    fn exp_backward() {
        let a = Tensor::param(&[1], vec![0.0]);
        let y = exp(&a);
        assert_eq!(y.item(), 1.0);
        sum(&y).backward();
        assert_eq!(a.grad(), vec![1.0]);
    }

    #[test]
    fn abs_subgradient_zero_at_origin() {
        let a = Tensor::param(&[3], vec![-2.0, 0.0, 3.0]);
        sum(&abs(&a)).backward();
        assert_eq!(a.grad(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn channel_min_routes_to_argmin() {
        let a = Tensor::param(&[1, 3, 1, 1], vec![0.3, 0.1, 0.7]);
        let (m, argmin) = channel_min(&a);
        assert_eq!(m.values(), vec![0.1]);
        assert_eq!(argmin, vec![1]);
        sum(&m).backward();
        assert_eq!(a.grad(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn channel_min_ties_take_lowest_index() {
        let a = Tensor::param(&[1, 3, 1, 1], vec![0.5, 0.5, 0.5]);
        let (m, argmin) = channel_min(&a);
        assert_eq!(m.values(), vec![0.5]);
        assert_eq!(argmin, vec![0]);
        sum(&m).backward();
        assert_eq!(a.grad(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_sum_empty_mask() {
        let a = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        let s = masked_sum(&a, &[false; 4]);
        assert_eq!(s.item(), 0.0);
        s.backward();
        assert_eq!(a.grad(), vec![0.0; 4]);
    }

    #[test]
    fn clamp_cuts_gradient_outside() {
        let a = Tensor::param(&[3], vec![-11.0, 0.5, 12.0]);
        sum(&clamp(&a, -10.0, 10.0)).backward();
        assert_eq!(a.grad(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_node_accumulates_from_both_consumers() {
        let a = Tensor::param(&[2], vec![1.0, 2.0]);
        let shared = scale(&a, 3.0);
        let y1 = sum(&shared);
        let y2 = sum(&mul(&shared, &shared));
        let loss = add(&y1, &y2);
        loss.backward();
        // d/da [3a + 9a^2] = 3 + 18a
        assert_eq!(a.grad(), vec![21.0, 39.0]);
    }

    #[test]
    fn abs_err_broadcasts_target() {
        let pred = Tensor::param(&[1, 2, 1, 2], vec![1.0, 4.0, 2.0, 0.0]);
        let target = Tensor::from_values(&[1, 1, 1, 2], vec![2.0, 1.0]);
        let e = abs_err(&pred, &target);
        assert_eq!(e.values(), vec![1.0, 3.0, 0.0, 1.0]);
        sum(&e).backward();
        assert_eq!(pred.grad(), vec![-1.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        // single pixel, logits (0, ln 3): p1 = 3/4; target class 1
        let logits = Tensor::param(&[1, 2, 1, 1], vec![0.0, 3.0_f64.ln()]);
        let ce = masked_cross_entropy(&logits, &[1], &[true]);
        assert_relative_eq!(ce.item(), -(0.75_f64.ln()), max_relative = 1e-12);
        ce.backward();
        let g = logits.grad();
        assert_relative_eq!(g[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(g[1], -0.25, max_relative = 1e-12);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_is_rejected() {
        let a = Tensor::param(&[1], vec![1e308]);
        let b = Tensor::param(&[1], vec![1e308]);
        let _ = add(&a, &b);
    }
}

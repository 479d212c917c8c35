//! Central finite-difference verification of analytic gradients. Lives in
//! the library so integration suites can drive it against full composites.

use super::tensor::Tensor;

/// `|a - b|` over the larger magnitude, floored to dodge 0/0.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error between an analytic gradient and central finite
/// differences over the selected coordinates of `param`.
///
/// `eval` must recompute the scalar loss from the parameter's current
/// values. Coordinates where both sides are below `1e-10` are treated as
/// agreeing zeros and skipped.
pub fn max_rel_error_fd(
    mut eval: impl FnMut() -> f64,
    param: &Tensor,
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> f64 {
    let base = param.values();
    assert_eq!(base.len(), analytic.len());
    let mut worst = 0.0_f64;
    for &i in coords {
        let mut p = base.clone();
        p[i] += eps;
        param.set_values(&p);
        let fp = eval();
        p[i] = base[i] - eps;
        param.set_values(&p);
        let fm = eval();
        p[i] = base[i];
        param.set_values(&p);
        let fd = (fp - fm) / (2.0 * eps);
        if analytic[i].abs() < 1e-10 && fd.abs() < 1e-10 {
            continue;
        }
        worst = worst.max(rel_err(analytic[i], fd));
    }
    param.set_values(&base);
    worst
}

/// Evenly spaced coordinate sample covering index 0 and the tail.
pub fn sample_coords(len: usize, max_count: usize) -> Vec<usize> {
    if len <= max_count {
        return (0..len).collect();
    }
    let step = len as f64 / max_count as f64;
    (0..max_count).map(|i| ((i as f64 * step) as usize).min(len - 1)).collect()
}

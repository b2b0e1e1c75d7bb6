//! Brute-force reference implementations used by the `metro` test suite.
//!
//! Everything in here is deliberately slow and simple: exhaustive grids,
//! central differences, index-set propagation and multi-start local search.
//! None of it shares code with the library operations it cross-checks.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Summary of an oracle-vs-implementation comparison.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub argmax_index: usize,
    pub comparisons: usize,
}

impl OracleReport {
    pub fn record(&mut self, reference: f64, actual: f64) {
        let abs = (reference - actual).abs();
        let rel = abs / reference.abs().max(1e-12);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.argmax_index = self.comparisons;
        }
        self.max_abs_err = self.max_abs_err.max(abs);
        self.comparisons += 1;
    }
}

/// Central-difference gradient of `f` at `point`.
///
/// Panics if `f` evaluates to a non-finite value near `point`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let fp = f(&x);
        x[i] = point[i] - step;
        let fm = f(&x);
        x[i] = point[i];
        assert!(
            fp.is_finite() && fm.is_finite(),
            "non-finite evaluation in finite_diff at coordinate {i}"
        );
        grad.push((fp - fm) / (2.0 * step));
    }
    grad
}

/// Exhaustive 1-D grid minimization on `[lo, hi]` with the given step.
///
/// Ties break toward the first (lowest) grid point. Returns `(argmin, min)`.
pub fn grid_argmin_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    assert!(lo < hi && step > 0.0);
    let n = ((hi - lo) / step).floor() as usize;
    let mut best_x = lo;
    let mut best_f = f(lo);
    for i in 1..=n {
        let x = lo + i as f64 * step;
        if x > hi + 1e-12 {
            break;
        }
        let fx = f(x);
        if fx < best_f {
            best_f = fx;
            best_x = x;
        }
    }
    (best_x, best_f)
}

/// One convolutional layer as plain data: (kernel, stride, padding, dilation).
pub type ConvLayer = (usize, usize, usize, usize);

/// Per-output-neuron input support of a conv stack, by index-set propagation.
///
/// Output index `i` of a layer with stride `s`, kernel `k`, padding `p` and
/// dilation `d` taps input positions `i*s + m*d - p (+1 if reversed)` for
/// `m in 0..k`. Supports are propagated over the padded coordinate plane, so
/// positions may be negative or beyond the input size; the receptive field of
/// an edge neuron conceptually extends past the image. `reversed_layer`
/// selects the bottom-right element per 2x2 block at that layer instead of
/// the top-left.
///
/// Returns, per output neuron, its support (sorted input positions) and its
/// center (mean of the support positions).
pub fn rf_support_enum(
    layers: &[ConvLayer],
    reversed_layer: Option<usize>,
    input_size: usize,
) -> Vec<(Vec<i64>, f64)> {
    assert!(input_size <= 64, "rf_support_enum cost guard: input_size <= 64");

    // supports[pos] = input-pixel support of the neuron at `pos` in the
    // current level. Level 0 is the input itself.
    let mut supports: HashMap<i64, Vec<i64>> = HashMap::new();
    let mut size = input_size as i64;
    let margin = 512; // generous padded-plane margin
    for pos in -margin..size + margin {
        supports.insert(pos, vec![pos]);
    }

    for (li, &(k, s, p, d)) in layers.iter().enumerate() {
        let shift = if reversed_layer == Some(li) { 1i64 } else { 0 };
        let out_size = size / s as i64;
        let mut next: HashMap<i64, Vec<i64>> = HashMap::new();
        let out_margin = margin / s as i64;
        for i in -out_margin..out_size + out_margin {
            let mut acc: Vec<i64> = Vec::new();
            for m in 0..k {
                let tap = i * s as i64 + shift + (m * d) as i64 - p as i64;
                if let Some(sup) = supports.get(&tap) {
                    acc.extend_from_slice(sup);
                }
            }
            acc.sort_unstable();
            acc.dedup();
            next.insert(i, acc);
        }
        supports = next;
        size = out_size;
    }

    (0..size)
        .map(|i| {
            let sup = supports.remove(&i).unwrap_or_default();
            let center = sup.iter().sum::<i64>() as f64 / sup.len().max(1) as f64;
            (sup, center)
        })
        .collect()
}

/// Derivative-free compass/pattern search for smooth local minimization.
pub fn pattern_search_min(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    init_step: f64,
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut step = init_step;
    let mut iters = 0;
    while step > tol && iters < max_iters {
        let mut improved = false;
        for i in 0..x.len() {
            for sgn in [1.0, -1.0] {
                let old = x[i];
                x[i] = old + sgn * step;
                let fnew = f(&x);
                if fnew < fx {
                    fx = fnew;
                    improved = true;
                } else {
                    x[i] = old;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
        iters += 1;
    }
    (x, fx)
}

/// Cyclic line minimization via 3-point parabola fits. Exact along each
/// line for quadratic objectives; iterated over axis and diagonal
/// directions it converges to the minimizer of a positive-definite
/// quadratic.
pub fn parabola_descent(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], h: f64, sweeps: usize) -> Vec<f64> {
    let n = x0.len();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        dirs.push(d);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d[j] = 1.0;
            dirs.push(d);
        }
    }
    let mut x = x0.to_vec();
    for _ in 0..sweeps {
        for d in &dirs {
            let eval = |t: f64| {
                let y: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
                f(&y)
            };
            let (f0, fp, fm) = (eval(0.0), eval(h), eval(-h));
            let denom = fp - 2.0 * f0 + fm;
            if denom.abs() < 1e-300 {
                continue;
            }
            let t_star = 0.5 * h * (fm - fp) / denom;
            if t_star.is_finite() && eval(t_star) < f0 {
                for (xi, di) in x.iter_mut().zip(d) {
                    *xi += t_star * di;
                }
            }
        }
    }
    x
}

/// Newton refinement from finite-difference derivatives. For a quadratic
/// objective a single step lands on the minimizer up to rounding; repeated
/// steps refine smooth non-quadratic objectives near a minimum. Steps that
/// do not decrease the objective are rejected.
pub fn newton_refine(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], h: f64, iters: usize) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    for _ in 0..iters {
        let fx = f(&x);
        let grad = finite_diff(|v| f(v), &x, h);
        let mut hess = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut y = x.clone();
                let eval = |y: &mut Vec<f64>, si: f64, sj: f64| {
                    y[i] += si * h;
                    y[j] += sj * h;
                    let v = f(y);
                    y[i] -= si * h;
                    y[j] -= sj * h;
                    v
                };
                let d2 = if i == j {
                    let fp = eval(&mut y, 1.0, 0.0);
                    let fm = eval(&mut y, -1.0, 0.0);
                    (fp - 2.0 * fx + fm) / (h * h)
                } else {
                    let fpp = eval(&mut y, 1.0, 1.0);
                    let fpm = eval(&mut y, 1.0, -1.0);
                    let fmp = eval(&mut y, -1.0, 1.0);
                    let fmm = eval(&mut y, -1.0, -1.0);
                    (fpp - fpm - fmp + fmm) / (4.0 * h * h)
                };
                hess[(i, j)] = d2;
                hess[(j, i)] = d2;
            }
        }
        let g = nalgebra::DVector::from_vec(grad);
        let Some(step) = hess.lu().solve(&g) else { break };
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, s)| xi - s).collect();
        if f(&cand) <= fx {
            x = cand;
        } else {
            break;
        }
    }
    x
}

/// Least-squares scale/translation fit by multi-start pattern search over
/// `(alpha, tx, ty)` with Newton refinement. Minimizes the summed squared
/// residual of `alpha * p_i + t - g_i` over masked points.
pub fn fit_scale_translation_search(
    pred: &[[f64; 2]],
    gt: &[[f64; 2]],
    mask: &[bool],
) -> (f64, [f64; 2], f64) {
    let obj = |params: &[f64]| -> f64 {
        let (a, tx, ty) = (params[0], params[1], params[2]);
        let mut sum = 0.0;
        for i in 0..pred.len() {
            if mask[i] {
                let rx = a * pred[i][0] + tx - gt[i][0];
                let ry = a * pred[i][1] + ty - gt[i][1];
                sum += rx * rx + ry * ry;
            }
        }
        sum
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for a0 in [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0] {
        let (x, _) = pattern_search_min(&obj, &[a0, 0.0, 0.0], 64.0, 1e-6, 100_000);
        let x = newton_refine(&obj, &x, 1e-3, 4);
        let fx = obj(&x);
        if best.as_ref().map_or(true, |(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let (x, fx) = best.unwrap();
    (x[0], [x[1], x[2]], fx)
}

/// Mean joint distance after a numerically optimized similarity alignment.
///
/// Minimizes the summed squared distance over rotation (axis-angle), uniform
/// positive scale (log-parametrized) and translation, seeded from several
/// rotations to avoid local minima, then reports the mean Euclidean distance
/// at the optimum.
pub fn procrustes_mpjpe_search(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    let obj = |params: &[f64]| -> f64 {
        let axis = Vector3::new(params[0], params[1], params[2]);
        let rot = Rotation3::new(axis);
        let s = params[3].exp();
        let t = Vector3::new(params[4], params[5], params[6]);
        let mut sum = 0.0;
        for (p, g) in pred.iter().zip(gt) {
            let q = rot * Vector3::new(p[0], p[1], p[2]) * s + t;
            let d = q - Vector3::new(g[0], g[1], g[2]);
            sum += d.norm_squared();
        }
        sum
    };
    let seeds: Vec<Vector3<f64>> = vec![
        Vector3::zeros(),
        Vector3::new(std::f64::consts::PI, 0.0, 0.0),
        Vector3::new(0.0, std::f64::consts::PI, 0.0),
        Vector3::new(0.0, 0.0, std::f64::consts::PI),
        Vector3::new(1.2, 1.2, 0.0),
        Vector3::new(-1.2, 0.0, 1.2),
        Vector3::new(0.7, -0.7, 0.7),
        Vector3::new(2.2, 0.4, -1.1),
    ];
    let mut best_params: Option<Vec<f64>> = None;
    let mut best_obj = f64::INFINITY;
    for seed in seeds {
        let x0 = [seed.x, seed.y, seed.z, 0.0, 0.0, 0.0, 0.0];
        let (x, _) = pattern_search_min(&obj, &x0, 1.0, 1e-7, 200_000);
        let x = newton_refine(&obj, &x, 1e-5, 12);
        let fx = obj(&x);
        if fx < best_obj {
            best_obj = fx;
            best_params = Some(x);
        }
    }
    let params = best_params.unwrap();
    let rot = Rotation3::new(Vector3::new(params[0], params[1], params[2]));
    let s = params[3].exp();
    let t = Vector3::new(params[4], params[5], params[6]);
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let q = rot * Vector3::new(p[0], p[1], p[2]) * s + t;
        sum += (q - Vector3::new(g[0], g[1], g[2])).norm();
    }
    sum / pred.len() as f64
}

/// Reference rotation product for verifying pose rotation against a matrix.
pub fn apply_matrix(m: &Matrix3<f64>, p: [f64; 3]) -> [f64; 3] {
    let v = m * Vector3::new(p[0], p[1], p[2]);
    [v.x, v.y, v.z]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_quadratic() {
        let x = [1.5, -2.0, 0.25];
        let g = finite_diff(|v| 0.5 * v.iter().map(|a| a * a).sum::<f64>(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - xi).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_diff_constant() {
        let g = finite_diff(|_| 42.0, &[1.0, 2.0], 1e-5);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grid_argmin_parabola_on_grid() {
        let (x, _) = grid_argmin_1d(|x| (x - 3.0) * (x - 3.0), 0.0, 10.0, 0.5);
        assert_eq!(x, 3.0);
    }

    #[test]
    fn grid_argmin_flat_ties_to_lo() {
        let (x, _) = grid_argmin_1d(|_| 7.0, 2.0, 5.0, 0.25);
        assert_eq!(x, 2.0);
    }

    #[test]
    fn support_single_stride1_layer() {
        let out = rf_support_enum(&[(3, 1, 1, 1)], None, 8);
        assert_eq!(out.len(), 8);
        for (i, (sup, center)) in out.iter().enumerate() {
            let i = i as i64;
            assert_eq!(sup, &vec![i - 1, i, i + 1]);
            assert_eq!(*center, i as f64);
        }
    }

    #[test]
    fn reversed_block_selection_offsets_by_one() {
        let normal = rf_support_enum(&[(3, 2, 1, 1)], None, 8);
        let reversed = rf_support_enum(&[(3, 2, 1, 1)], Some(0), 8);
        for (n, r) in normal.iter().zip(&reversed) {
            assert!((r.1 - n.1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_search_quadratic() {
        let (x, _) = pattern_search_min(
            &|v: &[f64]| (v[0] - 2.0).powi(2) + (v[1] + 1.0).powi(2),
            &[0.0, 0.0],
            1.0,
            1e-12,
            100_000,
        );
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((x[1] + 1.0).abs() < 1e-9);
    }
}

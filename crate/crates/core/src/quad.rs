//! One-dimensional quadrature.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on a fixed partition: integrates each panel separately,
/// which keeps narrow features from being skipped by the initial samples.
pub fn panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n_panels: usize, tol: f64) -> f64 {
    let h = (b - a) / n_panels as f64;
    let panel_tol = tol / n_panels as f64;
    (0..n_panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == n_panels { b } else { lo + h };
            adaptive_simpson(&f, lo, hi, panel_tol)
        })
        .sum()
}

/// Trapezoid weights for the (ascending) nodes `xs`.
pub fn trapezoid_weights(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = 0.5 * (xs[i] - xs[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomial_and_gaussian() {
        assert_relative_eq!(adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12), 4.0, epsilon = 1e-12);
        let g = panels(|x| (-0.5 * x * x).exp(), -10.0, 10.0, 20, 1e-12);
        assert_relative_eq!(g, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let xs = [0.0, 0.5, 0.7, 2.0];
        let w = trapezoid_weights(&xs);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-15);
        let lin: f64 = xs.iter().zip(&w).map(|(x, w)| x * w).sum();
        assert_relative_eq!(lin, 2.0, epsilon = 1e-14);
    }
}

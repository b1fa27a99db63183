//! Shared quadrature building blocks.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let order = NonZeroUsize::new(order.max(1)).expect("order >= 1");
    let mut pairs = GaussLegendre::new(order).as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Composite Gauss–Legendre nodes over `breaks`, mapped to physical coordinates.
pub fn composite_nodes(breaks: &[f64], rule: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(breaks.len().saturating_sub(1) * rule.len());
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        out.extend(rule.iter().map(|&(x, w)| (mid + half * x, half * w)));
    }
    out
}

/// Evenly spaced `n + 1` breakpoints with exact endpoints.
pub fn uniform_breaks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let mut v: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * (i as f64 / n as f64))
        .collect();
    v[n] = hi;
    v
}

const GK15_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const GK15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss 7-point weights for nodes GK15_NODES[1], [3], [5], [7].
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK15_WEIGHTS[7];
    let mut gauss = fc * G7_WEIGHTS[3];
    for j in 0..7 {
        let x = h * GK15_NODES[j];
        let s = f(c - x) + f(c + x);
        kronrod += GK15_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G7_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) by recursive bisection.
///
/// Returns `(value, estimated absolute error)`. Subdivision stops at depth 50.
pub fn adaptive_gk<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> (f64, f64) {
    let (whole, err) = gk15(&mut f, a, b);
    let mut stack = vec![(a, b, whole, err, 0u32)];
    let mut total = 0.0;
    let mut total_err = 0.0;
    // a coarse global scale keeps the per-interval budget meaningful
    let scale = whole.abs();
    while let Some((lo, hi, val, err, depth)) = stack.pop() {
        let budget = (rel_tol * scale).max(abs_tol) * (hi - lo) / (b - a);
        if err <= budget || depth >= 50 {
            total += val;
            total_err += err;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        stack.push((lo, mid, v1, e1, depth + 1));
        stack.push((mid, hi, v2, e2, depth + 1));
    }
    (total, total_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let rule = gauss_legendre(12);
        assert_eq!(rule.len(), 12);
        assert!(rule.windows(2).all(|w| w[0].0 < w[1].0));
        let s: f64 = rule.iter().map(|&(x, w)| w * x.powi(22)).sum();
        assert!((s - 2.0 / 23.0).abs() < 1e-14);
    }

    #[test]
    fn composite_covers_interval() {
        let nodes = composite_nodes(&uniform_breaks(-1.0, 3.0, 7), &gauss_legendre(5));
        let s: f64 = nodes.iter().map(|&(x, w)| w * x.exp()).sum();
        assert!((s - (3f64.exp() - (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let (v, e) = adaptive_gk(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 0.0);
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        assert!(e < 1e-8 * exact);
    }
}

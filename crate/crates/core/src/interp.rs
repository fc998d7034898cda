//! Four-point Lagrange interpolation of sampled time series.
//!
//! Series hold samples at `t_j = -T + (j + 1) dt`; the value at `-T` and
//! every earlier time is zero. Interpolation never reads samples above a
//! caller-supplied index, so shifted evaluations stay causal.

use num_complex::Complex64;

/// Lagrange basis values at `x` for the four nodes.
pub fn lagrange4(nodes: [f64; 4], x: f64) -> [f64; 4] {
    let mut out = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                out[a] *= (x - nodes[b]) / (nodes[a] - nodes[b]);
            }
        }
    }
    out
}

/// Stencil (first sample index, weights) for position `p` measured in
/// steps (sample `j` sits at `p = j`, `-T` at `p = -1`), reading no sample
/// above `limit`.
pub fn stencil(p: f64, limit: isize) -> (isize, [f64; 4]) {
    let mut m0 = p.floor() as isize;
    if m0 >= limit {
        m0 = limit - 1;
    }
    let start = if m0 + 2 <= limit { m0 - 1 } else { m0 - 2 };
    let s = start as f64;
    (start, lagrange4([s, s + 1.0, s + 2.0, s + 3.0], p))
}

/// Sample `j` of a series, zero for `j < 0`.
#[inline]
pub fn sample(series: &[Complex64], j: isize) -> Complex64 {
    if j < 0 {
        Complex64::new(0.0, 0.0)
    } else {
        series[j as usize]
    }
}

/// Value at position `p` (in steps) without using samples above `limit`.
pub fn eval(series: &[Complex64], p: f64, limit: usize) -> Complex64 {
    if p <= -1.0 {
        return Complex64::new(0.0, 0.0);
    }
    let (start, w) = stencil(p, limit as isize);
    (0..4).map(|q| sample(series, start + q as isize) * w[q]).sum()
}

/// Value at position `p` treating the samples as a function on `(-T, end]`:
/// zero at or before `-T`, otherwise a four-point stencil kept inside the
/// stored samples (extrapolating on the first step).
pub fn eval_window(series: &[Complex64], p: f64) -> Complex64 {
    if p <= -1.0 {
        return Complex64::new(0.0, 0.0);
    }
    let (start, w) = window_stencil(p, series.len());
    (0..4).map(|q| series[start + q] * w[q]).sum()
}

/// Stencil used by [`eval_window`]; needs at least four samples.
pub fn window_stencil(p: f64, len: usize) -> (usize, [f64; 4]) {
    let m0 = p.floor() as isize - 1;
    let start = m0.clamp(0, len as isize - 4) as usize;
    let s = start as f64;
    (start, lagrange4([s, s + 1.0, s + 2.0, s + 3.0], p))
}

/// Finite-difference weights for the first derivative at `x0` from the
/// given nodes (Fornberg's recursion).
pub fn fd_weights(x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Time derivative of a windowed series (`-T` sample is zero) with a
/// seven-point stencil, centred where possible.
pub fn window_derivative(series: &[Complex64], dt: f64) -> Vec<Complex64> {
    let n = series.len() as isize;
    let value = |j: isize| if j < 0 { Complex64::new(0.0, 0.0) } else { series[j as usize] };
    let width = 7.min(n + 1);
    (0..n)
        .map(|i| {
            let start = (i - width / 2).clamp(-1, n - width);
            let nodes: Vec<f64> = (start..start + width).map(|j| j as f64).collect();
            let w = fd_weights(i as f64, &nodes);
            let d: Complex64 = (start..start + width).zip(&w).map(|(j, &c)| value(j) * c).sum();
            d / dt
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let series: Vec<Complex64> = (0..20)
            .map(|j| {
                let x = j as f64 + 1.0;
                Complex64::new(x * x * x - 2.0 * x, 0.5 * x * x)
            })
            .collect();
        for &(p, limit) in &[(3.3, 19usize), (18.7, 19), (10.2, 11), (10.99, 11)] {
            let x = p + 1.0;
            let v = eval(&series, p, limit);
            assert!((v.re - (x * x * x - 2.0 * x)).abs() < 1e-9);
            assert!((v.im - 0.5 * x * x).abs() < 1e-10);
        }
    }

    #[test]
    fn vanishes_before_origin() {
        let series = vec![Complex64::new(1.0, 0.0); 8];
        assert_eq!(eval(&series, -1.0, 7), Complex64::new(0.0, 0.0));
        assert_eq!(eval(&series, -3.5, 7), Complex64::new(0.0, 0.0));
    }
}

/// Lagrange basis values and first two derivatives at `x`.
pub fn lagrange4_derivs(nodes: [f64; 4], x: f64) -> [[f64; 3]; 4] {
    let mut out = [[0.0; 3]; 4];
    for a in 0..4 {
        let others: Vec<usize> = (0..4).filter(|&b| b != a).collect();
        let denom: f64 = others.iter().map(|&b| nodes[a] - nodes[b]).product();
        let f: Vec<f64> = others.iter().map(|&b| x - nodes[b]).collect();
        out[a][0] = f[0] * f[1] * f[2] / denom;
        out[a][1] = (f[1] * f[2] + f[0] * f[2] + f[0] * f[1]) / denom;
        out[a][2] = 2.0 * (f[0] + f[1] + f[2]) / denom;
    }
    out
}

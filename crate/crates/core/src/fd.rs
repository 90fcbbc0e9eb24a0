//! Central finite differences with one level of Richardson extrapolation.
//!
//! Mixed partials are tensor products of one-dimensional central stencils,
//! one per distinct variable, so every stencil is symmetric about the point.

use nalgebra::DMatrix;

use crate::error::Result;

/// `base · max(1, |x|)`.
pub fn scaled_step(base: f64, x: f64) -> f64 {
    base * x.abs().max(1.0)
}

/// Offsets (in units of h) and weights (times h^-order) for the central
/// stencil of the given derivative order.
fn stencil(order: usize) -> &'static [(f64, f64)] {
    match order {
        0 => &[(0.0, 1.0)],
        1 => &[(-1.0, -0.5), (1.0, 0.5)],
        2 => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
        3 => &[(-2.0, -0.5), (-1.0, 1.0), (1.0, -1.0), (2.0, 0.5)],
        _ => panic!("stencils are provided up to third order"),
    }
}

/// Plain central-difference estimate of `∂^{idx} f(x)` with per-variable
/// steps `h`.
fn central<F>(f: &F, x: &[f64], idx: &[usize], h: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for &i in idx {
        match vars.iter_mut().find(|(v, _)| *v == i) {
            Some((_, m)) => *m += 1,
            None => vars.push((i, 1)),
        }
    }
    let stencils: Vec<&[(f64, f64)]> = vars.iter().map(|&(_, m)| stencil(m)).collect();
    let mut scale = 1.0;
    for &(v, m) in &vars {
        scale *= h[v].powi(m as i32);
    }
    let mut counter = vec![0usize; vars.len()];
    let mut total = 0.0;
    let mut point = x.to_vec();
    loop {
        let mut weight = 1.0;
        point.copy_from_slice(x);
        for (k, &(v, _)) in vars.iter().enumerate() {
            let (offset, w) = stencils[k][counter[k]];
            point[v] += offset * h[v];
            weight *= w;
        }
        if weight != 0.0 {
            total += weight * f(&point)?;
        }
        let mut k = 0;
        loop {
            if k == vars.len() {
                return Ok(total / scale);
            }
            counter[k] += 1;
            if counter[k] < stencils[k].len() {
                break;
            }
            counter[k] = 0;
            k += 1;
        }
    }
}

/// `∂^{idx} f(x)` (up to three indices, repeats allowed) with steps `h`,
/// Richardson-extrapolated from `h` and `h/2`.
pub fn partial<F>(f: &F, x: &[f64], idx: &[usize], h: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let coarse = central(f, x, idx, h)?;
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let fine = central(f, x, idx, &half)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Gradient with steps `base · max(1, |x_i|)`.
pub fn gradient<F>(f: &F, x: &[f64], base: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let h: Vec<f64> = x.iter().map(|&v| scaled_step(base, v)).collect();
    (0..x.len()).map(|i| partial(f, x, &[i], &h)).collect()
}

/// Hessian with steps `base · max(1, |x_i|)`.
pub fn hessian<F>(f: &F, x: &[f64], base: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| scaled_step(base, v)).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = partial(f, x, &[i, j], &h)?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Derivatives `∂_j F_k(x)` of a vector-valued function, returned as
/// `out[j][k]`. Each shifted evaluation is shared by all components.
pub fn jacobian_rows<F>(f: &F, x: &[f64], base: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for j in 0..x.len() {
        let h = scaled_step(base, x[j]);
        let mut diff = |h: f64| -> Result<Vec<f64>> {
            point[j] = x[j] + h;
            let plus = f(&point)?;
            point[j] = x[j] - h;
            let minus = f(&point)?;
            point[j] = x[j];
            Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
        };
        let coarse = diff(h)?;
        let fine = diff(0.5 * h)?;
        out.push(coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn third_mixed_partial_of_polynomial() {
        // f = x² y + x y z², ∂x∂x∂y = 2, ∂x∂z∂z = 2y, ∂y∂y∂y = 0
        let f = |v: &[f64]| Ok(v[0] * v[0] * v[1] + v[0] * v[1] * v[2] * v[2]);
        let x = [0.3, -1.2, 0.7];
        let h = [5e-3; 3];
        assert!((partial(&f, &x, &[0, 0, 1], &h).unwrap() - 2.0).abs() < 1e-8);
        assert!((partial(&f, &x, &[0, 2, 2], &h).unwrap() - 2.0 * -1.2).abs() < 1e-8);
        assert!(partial(&f, &x, &[1, 1, 1], &h).unwrap().abs() < 1e-8);
    }

    #[test]
    fn third_derivative_of_exponential() {
        let f = |v: &[f64]| Ok(v[0].exp());
        let d3 = partial(&f, &[0.4], &[0, 0, 0], &[5e-3]).unwrap();
        assert!((d3 - 0.4f64.exp()).abs() < 1e-7, "{d3}");
    }

    #[test]
    fn gradient_and_hessian_of_log() {
        let f = |v: &[f64]| Ok(v[0].ln() + v[0] * v[1]);
        let g = gradient(&f, &[0.5, 2.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-9 && (g[1] - 0.5).abs() < 1e-9);
        let h = hessian(&f, &[0.5, 2.0], 1e-4).unwrap();
        assert!((h[(0, 0)] + 4.0).abs() < 1e-6 && (h[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn jacobian_rows_of_linear_map() {
        let f = |v: &[f64]| Ok(vec![2.0 * v[0] + v[1], -v[1]]);
        let j = jacobian_rows(&f, &[1.0, 3.0], 1e-5).unwrap();
        assert!((j[0][0] - 2.0).abs() < 1e-8 && (j[1][0] - 1.0).abs() < 1e-8);
        assert!((j[1][1] + 1.0).abs() < 1e-8);
    }
}

//! Bessel functions needed by the disk exit-time law and the wedge series.

use std::f64::consts::PI;

fn series_j(order: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = h.powi(order as i32) / (1..=order).map(f64::from).product::<f64>();
    let mut sum = term;
    let q = -h * h;
    for m in 1..200 {
        term *= q / (m as f64 * (m + order) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Hankel asymptotic expansion of `J_n(x)` for large `x`.
fn asymptotic_j(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let (mut p, mut q) = (1.0, 0.0);
    let mut term = 1.0;
    let eight_x = 8.0 * x;
    for k in 1..24 {
        let kf = k as f64;
        term *= (mu - (2.0 * kf - 1.0).powi(2)) / (kf * eight_x);
        if term.abs() < 1e-17 {
            break;
        }
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
    }
    let chi = x - (0.5 * order as f64 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < 12.0 {
        series_j(0, x)
    } else {
        asymptotic_j(0, x)
    }
}

pub fn bessel_j1(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    s * if x < 12.0 { series_j(1, x) } else { asymptotic_j(1, x) }
}

/// The `k`-th positive zero of `J0`, `k >= 1`.
pub fn bessel_j0_zero(k: usize) -> f64 {
    let b = (k as f64 - 0.25) * PI;
    let e = 1.0 / (8.0 * b);
    let mut x = b + e - 124.0 / 3.0 * e.powi(3) + 120_928.0 / 15.0 * e.powi(5);
    for _ in 0..30 {
        let dx = bessel_j0(x) / bessel_j1(x);
        x += dx;
        if dx.abs() < 1e-15 * x {
            break;
        }
    }
    x
}

/// Modified Bessel function `I_ν(z)` of real order `ν >= -1` by its power
/// series; intended for moderate `z`.
pub fn bessel_i(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    let h = 0.5 * z;
    let ln_first = nu * h.ln() - statrs::function::gamma::ln_gamma(nu + 1.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    let q = h * h;
    for m in 1..500 {
        let mf = m as f64;
        term *= q / (mf * (mf + nu));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    ln_first.exp() * sum
}

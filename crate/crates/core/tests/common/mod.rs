//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use qht_gof::estimator::EstimatorConfig;
use qht_gof::simulator::QhtDataset;

/// Dawson's integral `D(x) = e^{-x^2} int_0^x e^{t^2} dt` by composite Simpson.
pub fn dawson(x: f64) -> f64 {
    let m = 4000;
    let h = x / m as f64;
    let g = |t: f64| (t * t - x * x).exp();
    let mut s = g(0.0) + g(x);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(i as f64 * h);
    }
    s * h / 3.0
}

// e^{-x^2} sqrt(pi) Erfi(x) = 2 D(x)
pub fn closed_form(j: usize, k: usize, x: f64) -> f64 {
    let e = 2.0 * dawson(x);
    let x2 = x * x;
    match (j, k) {
        (0, 0) => 2.0 - 2.0 * x * e,
        (2, 1) => -2.0 * x * (-3.0 + 2.0 * x2) + (1.0 - 8.0 * x2 + 4.0 * x2 * x2) * e,
        (4, 2) => {
            let poly = -4.0 + 27.0 * x2 - 24.0 * x2.powi(2) + 4.0 * x2.powi(3);
            let erfi_poly = 21.0 - 74.0 * x2 + 52.0 * x2.powi(2) - 8.0 * x2.powi(3);
            (2.0 * poly + x * erfi_poly * e) / (2.0 * 3f64.sqrt())
        }
        (5, 5) => {
            let poly = -30.0 + 435.0 * x2 - 865.0 * x2.powi(2) + 526.0 * x2.powi(3) - 116.0 * x2.powi(4)
                + 8.0 * x2.powi(5);
            let erfi_poly = 225.0 - 1425.0 * x2 + 2160.0 * x2.powi(2) - 1160.0 * x2.powi(3) + 240.0 * x2.powi(4)
                - 16.0 * x2.powi(5);
            (2.0 * poly + x * erfi_poly * e) / 30.0
        }
        _ => unreachable!(),
    }
}

/// The defining double sum over ordered pairs `l != m`, all `(j, k)`.
pub fn naive_mn(ds: &QhtDataset, cfg: &EstimatorConfig) -> Complex64 {
    let n = ds.len();
    let recs = ds.records();
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..cfg.bandwidth() {
        for k in 0..cfg.bandwidth() {
            let tau = cfg.tau().get(j, k);
            let a: Vec<Complex64> = recs.iter().map(|r| cfg.kernel_value(j, k, r.y, r.phi) - tau).collect();
            for l in 0..n {
                for m in 0..n {
                    if l != m {
                        total += a[l] * a[m].conj();
                    }
                }
            }
        }
    }
    total / (n as f64 * (n as f64 - 1.0))
}

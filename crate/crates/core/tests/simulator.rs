use std::f64::consts::PI;

use proptest::prelude::*;
use qht_gof::simulator::{
    density_eval, generate, load_dataset, read_dataset, record_rng, sample_quadrature, save_dataset, write_dataset,
    QhtDataset, QhtRecord, SimError,
};
use qht_gof::{Efficiency, StateKind};

const PHASES: [f64; 5] = [0.0, PI / 6.0, PI / 4.0, PI / 2.0, 2.0 * PI / 3.0];

fn states() -> Vec<StateKind> {
    vec![
        StateKind::Vacuum,
        StateKind::SinglePhoton,
        StateKind::Coherent { q0: 3.0 },
        StateKind::Thermal { beta: 0.7 },
        StateKind::Cat { q0: 3.0 },
        StateKind::Cat { q0: 1.0 },
    ]
}

fn simpson(lo: f64, hi: f64, m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / m as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Kolmogorov distance between a sample and a CDF.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// 1% critical value of the one-sample KS statistic
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[test]
fn densities_integrate_to_one() {
    for state in states() {
        for phi in PHASES {
            let mass = simpson(-14.0, 14.0, 20_000, |x| density_eval(&state, x, phi).unwrap());
            assert!((mass - 1.0).abs() < 1e-6, "{state} at {phi}: {mass}");
        }
    }
}

#[test]
fn densities_are_nonnegative() {
    for state in states() {
        for phi in PHASES {
            for i in 0..2001 {
                let x = -10.0 + 0.01 * i as f64;
                assert!(density_eval(&state, x, phi).unwrap() >= 0.0);
            }
        }
    }
}

#[test]
fn density_examples() {
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    assert!((density_eval(&StateKind::Vacuum, 0.0, 1.1).unwrap() - inv_sqrt_pi).abs() < 1e-15);
    assert_eq!(density_eval(&StateKind::SinglePhoton, 0.0, 0.3).unwrap(), 0.0);
    assert!((density_eval(&StateKind::Coherent { q0: 3.0 }, 3.0, 0.0).unwrap() - inv_sqrt_pi).abs() < 1e-15);
}

#[test]
fn sample_moments() {
    let draws = |state: StateKind, phi: f64| -> Vec<f64> {
        (0..100_000u64)
            .map(|i| sample_quadrature(&state, phi, &mut record_rng(11, i)).unwrap())
            .collect()
    };
    let (_, var) = mean_var(&draws(StateKind::Vacuum, 0.4));
    assert!((var - 0.5).abs() < 0.01, "vacuum variance {var}");
    let (mean, _) = mean_var(&draws(StateKind::Coherent { q0: 3.0 }, 0.0));
    assert!((mean - 3.0).abs() < 0.01, "coherent mean {mean}");
    let photon = draws(StateKind::SinglePhoton, 1.0);
    let second = photon.iter().map(|x| x * x).sum::<f64>() / photon.len() as f64;
    assert!((second - 1.5).abs() < 0.02, "photon second moment {second}");
}

#[test]
fn rejection_samplers_fit_their_densities() {
    for state in [StateKind::SinglePhoton, StateKind::Cat { q0: 3.0 }, StateKind::Cat { q0: 0.8 }] {
        for phi in [0.0, PI / 3.0, PI / 2.0] {
            let n = 20_000;
            let xs: Vec<f64> = (0..n as u64)
                .map(|i| sample_quadrature(&state, phi, &mut record_rng(3, i)).unwrap())
                .collect();
            // tabulated CDF by cumulative Simpson on a fine grid
            let (lo, h) = (-9.0, 0.001);
            let mut cdf = vec![0.0];
            for i in 0..18_000 {
                let a = lo + i as f64 * h;
                let seg = simpson(a, a + h, 2, |x| density_eval(&state, x, phi).unwrap());
                cdf.push(cdf[i] + seg);
            }
            let lookup = |x: f64| {
                let pos = ((x - lo) / h).clamp(0.0, 17_999.0);
                let i = pos.floor() as usize;
                cdf[i] + (pos - i as f64) * (cdf[i + 1] - cdf[i])
            };
            let d = ks_statistic(xs, lookup);
            assert!(d < ks_critical(n), "{state} at {phi}: KS {d}");
        }
    }
}

#[test]
fn generated_variance_matches_noise_model() {
    for eta in [1.0, 0.9] {
        let ds = generate(StateKind::Vacuum, 100_000, eta, 21).unwrap();
        let ys: Vec<f64> = ds.records().iter().map(|r| r.y).collect();
        let (_, var) = mean_var(&ys);
        assert!((var - 0.5).abs() < 0.01, "eta {eta}: {var}");
    }
}

#[test]
fn phases_are_uniform() {
    let n = 100_000;
    let ds = generate(StateKind::Coherent { q0: 1.0 }, n, 0.8, 5).unwrap();
    let phis: Vec<f64> = ds.records().iter().map(|r| r.phi).collect();
    assert!(phis.iter().all(|p| (0.0..=PI).contains(p)));
    let d = ks_statistic(phis, |p| p / PI);
    assert!(d < ks_critical(n), "KS {d}");
}

#[test]
fn characteristic_function_factorizes() {
    // vacuum: F[p(., phi)](t) = e^{-t^2/4}; the noise factor is e^{-(1-eta) t^2/4}
    let eta: f64 = 0.8;
    let ds = generate(StateKind::Vacuum, 200_000, eta, 8).unwrap();
    let in_bin: Vec<f64> = ds.records().iter().filter(|r| r.phi < PI / 4.0).map(|r| r.y).collect();
    for t in [0.5, 1.0, 2.0] {
        let want = (-(t * eta.sqrt()).powi(2) / 4.0).exp() * (-(1.0 - eta) * t * t / 4.0).exp();
        let cos: Vec<f64> = in_bin.iter().map(|y| (t * y).cos()).collect();
        let sin: Vec<f64> = in_bin.iter().map(|y| (t * y).sin()).collect();
        let (re, var_re) = mean_var(&cos);
        let (im, var_im) = mean_var(&sin);
        let n = in_bin.len() as f64;
        assert!((re - want).abs() < 3.0 * (var_re / n).sqrt(), "t = {t}: {re} vs {want}");
        assert!(im.abs() < 3.0 * (var_im / n).sqrt(), "t = {t}: imaginary {im}");
    }
}

#[test]
fn generation_is_deterministic_across_thread_counts() {
    let state = StateKind::Cat { q0: 3.0 };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| generate(state, 5_000, 0.9, 99).unwrap());
    let b = four.install(|| generate(state, 5_000, 0.9, 99).unwrap());
    assert_eq!(a, b);
    let c = generate(state, 5_000, 0.9, 100).unwrap();
    assert_ne!(a.records(), c.records());
    // a prefix of a longer dataset is the shorter dataset
    let long = generate(state, 6_000, 0.9, 99).unwrap();
    assert_eq!(&long.records()[..5_000], a.records());
}

#[test]
fn generation_rejects_invalid_requests() {
    assert!(matches!(generate(StateKind::Vacuum, 10, 0.5, 0), Err(SimError::Efficiency(_))));
    assert!(matches!(generate(StateKind::Vacuum, 10, 1.01, 0), Err(SimError::Efficiency(_))));
    assert!(matches!(generate(StateKind::Vacuum, 0, 1.0, 0), Err(SimError::Empty)));
    assert!(matches!(
        generate(StateKind::Squeezed { m: 1.0, xi: 0.5 }, 10, 1.0, 0),
        Err(SimError::Unsupported(_))
    ));
}

#[test]
fn dataset_file_round_trip() {
    let ds = generate(StateKind::Cat { q0: 3.0 }, 500, 0.9, 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dataset(&ds, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "# qht-dataset v1, state=cat:3, eta=0.9, n=500, seed=77");
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn out_of_range_phase_is_rejected_on_load() {
    let text = "# qht-dataset v1, state=vacuum, eta=1, n=2, seed=0\n0.1,0.5\n0.2,3.5\n";
    assert!(read_dataset(text.as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_records_round_trip(
        rows in prop::collection::vec((-1e6f64..1e6, 0.0f64..=PI), 1..40),
        eta in 0.51f64..=1.0,
        seed in any::<u64>(),
    ) {
        let records = rows.into_iter().map(|(y, phi)| QhtRecord { y, phi }).collect();
        let ds = QhtDataset::from_records(records, Efficiency::new(eta).unwrap(), StateKind::Coherent { q0: 0.25 }, seed).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }
}

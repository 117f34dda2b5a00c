use num_complex::Complex64 as C64;
use qlbm_core::circuit::{Ancilla, RegisterLayout};
use qlbm_core::lattice::FieldState;
use qlbm_core::qlbm::{encode_fields, EncodingMap};
use qlbm_core::readout::*;
use qlbm_core::simulator::{init_amplitudes, ShotCounts};
use qlbm_core::QlbmError;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn map(nx_bits: usize, ny_bits: usize, two: bool) -> EncodingMap {
    let layout = RegisterLayout::new(
        nx_bits,
        ny_bits,
        4,
        two,
        &[Ancilla::Collision, Ancilla::Integration],
    )
    .unwrap();
    EncodingMap::new(layout, 1 << nx_bits, 1 << ny_bits, 3).unwrap()
}

fn random_fields(nx: usize, ny: usize, levels: usize, seed: u64) -> FieldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FieldState::zeros(nx, ny, 3, levels).unwrap();
    for level in f.levels.iter_mut() {
        for grid in level.iter_mut() {
            grid.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
    }
    f
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[test]
fn acoustic_energy_basics() {
    let z = FieldState::zeros(4, 4, 3, 1).unwrap();
    assert_eq!(acoustic_energy(&z, 1.0, None), 0.0);

    let mut one = FieldState::zeros(2, 2, 3, 1).unwrap();
    one.levels[0][0][1] = 1.0;
    assert_eq!(acoustic_energy(&one, 1.0, Some(&[1])), 0.5);

    let f = random_fields(8, 4, 1, 3);
    let c = 0.7;
    let want = 0.5 * (c * c * norm_sq(f.var(0)) + norm_sq(f.var(1)) + norm_sq(f.var(2)));
    assert!((acoustic_energy(&f, c, None) - want).abs() < 1e-12);
}

#[test]
fn expectation_matches_encoded_energy() {
    for (two, seed) in [(false, 1u64), (true, 2), (false, 3)] {
        let m = map(3, 2, two);
        let f = random_fields(8, 4, if two { 2 } else { 1 }, seed);
        let (psi, ledger) = encode_fields(&f, &m).unwrap();
        let c = 0.6;
        let obs = EnergyObservable::new(&m, c, None);
        let (e, var) = energy_expectation(&psi, &obs);
        let scale = ledger.product().powi(2);
        assert!((e - acoustic_energy(&f.current(), c, None) * scale).abs() < 1e-12);

        // Two-term form: (c⁴/4)·P_ρ + (1/4)·P_u − E².
        let lv = &f.levels[0];
        let p_rho = norm_sq(&lv[0]) * scale;
        let p_u = (norm_sq(&lv[1]) + norm_sq(&lv[2])) * scale;
        let want = c.powi(4) / 4.0 * p_rho + p_u / 4.0 - e * e;
        assert!((var - want).abs() < 1e-12);

        let cells = [0usize, 5, 9];
        let sub = EnergyObservable::new(&m, c, Some(&cells));
        let (es, _) = energy_expectation(&psi, &sub);
        assert!((es - acoustic_energy(&f.current(), c, Some(&cells)) * scale).abs() < 1e-12);
    }
}

#[test]
fn ancilla_weight_has_zero_energy() {
    let m = map(2, 2, false);
    let n = m.layout.n;
    let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
    let anc = m.layout.ancillas[0].1;
    amps[(1 << anc) | m.index(3, 0, 0)] = C64::new(1.0, 0.0);
    let (psi, _) = init_amplitudes(amps).unwrap();
    let (e, v) = energy_expectation(&psi, &EnergyObservable::new(&m, 1.0, None));
    assert_eq!((e, v), (0.0, 0.0));
}

#[test]
fn shot_counts_for_accuracy() {
    assert_eq!(shots_for_accuracy(0.1, None, 1.0).unwrap(), 100);
    assert_eq!(shots_for_accuracy(0.01, None, 2.0).unwrap(), 10000);
    assert_eq!(shots_for_accuracy(0.5, Some(9.0), 3.0).unwrap(), 4);
    assert!(matches!(
        shots_for_accuracy(0.1, None, 0.0),
        Err(QlbmError::InvalidParameter { .. })
    ));
    assert!(shots_for_accuracy(0.0, None, 1.0).is_err());
}

#[test]
fn single_outcome_estimate() {
    let m = map(2, 2, false);
    let c = 0.8;
    let obs = EnergyObservable::new(&m, c, None);
    let mut counts = BTreeMap::new();
    counts.insert(m.index(2, 0, 0), 500u64);
    let sc = ShotCounts {
        n_qubits: m.layout.n,
        counts,
        total: 500,
        seed: 0,
    };
    let est = estimate_energy(&sc, &obs).unwrap();
    assert!((est.mean - c * c / 2.0 * est.kept_ratio).abs() < 1e-15);
    assert_eq!(est.kept_ratio, 1.0);
    assert_eq!(est.stderr, (est.variance / 500.0).sqrt());

    let anc = m.layout.ancillas[1].1;
    let mut counts = BTreeMap::new();
    counts.insert(1 << anc, 10u64);
    let sc = ShotCounts {
        n_qubits: m.layout.n,
        counts,
        total: 10,
        seed: 0,
    };
    assert!(matches!(estimate_energy(&sc, &obs), Err(QlbmError::NoKeptShots)));
}

#[test]
fn sampled_estimate_within_four_stderr() {
    let m = map(2, 2, false);
    let f = random_fields(4, 4, 1, 11);
    let (psi, _) = encode_fields(&f, &m).unwrap();
    let obs = EnergyObservable::new(&m, 0.9, None);
    let p_keep = 0.4;
    let (exact, _) = energy_expectation(&psi, &obs);
    let discard = 1 << m.layout.ancillas[0].1;
    let sampler = postselected_sampler(&psi, p_keep, discard);
    let mut outside = Vec::new();
    let mut z2 = 0.0;
    for seed in 0..1000 {
        let est = estimate_energy(&sampler.sample(2000, seed), &obs).unwrap();
        let z = (est.mean - p_keep * exact) / est.stderr;
        z2 += z * z;
        if z.abs() > 4.0 {
            outside.push(seed);
        }
    }
    // P(|z| > 4) ≈ 6.3e-5, so P(≥ 2 of 1000) ≈ 2e-3.
    assert!(outside.len() <= 1, "seeds beyond 4σ: {outside:?}");
    let sd = (z2 / 1000.0).sqrt();
    assert!((sd - 1.0).abs() < 0.1, "z spread {sd}");
}

#[test]
fn chebyshev_gram() {
    let b0 = chebyshev_basis(4, 4, (0, 0), None);
    assert_eq!(b0.len(), 1);
    assert_eq!(b0.gram[(0, 0)], 16.0);

    let t = rect_grid_transform(1.0, 1.0).unwrap().centered_at(3.5, 3.5);
    for tr in [None, Some(&t)] {
        let b = chebyshev_basis(8, 8, (2, 2), tr);
        assert_eq!(b.len(), 9);
        for j in 0..9 {
            for k in 0..9 {
                let mut s = 0.0;
                for i in 0..64 {
                    s += b.values[j][i] * b.values[k][i];
                }
                assert!((b.gram[(j, k)] - s).abs() < 1e-12);
                assert_eq!(b.gram[(j, k)], b.gram[(k, j)]);
            }
        }
        assert!(b.gram.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-9));
    }
}

fn basis22() -> TomographyBasis {
    chebyshev_basis(8, 8, (2, 2), None)
}

fn random_problem(rng: &mut ChaCha8Rng, with_x: bool) -> TomographyProblem {
    let z: Vec<u64> = (0..64).map(|_| rng.random_range(0..20)).collect();
    let x: Vec<Vec<u64>> = if with_x {
        (0..6).map(|_| (0..64).map(|_| rng.random_range(0..20)).collect()).collect()
    } else {
        Vec::new()
    };
    TomographyProblem::from_counts(&z, &x).unwrap()
}

#[test]
fn exact_distribution_has_zero_loss() {
    let b = basis22();
    let mut a = vec![0.3, 0.1, -0.05, 0.02, 0.04, 0.0, 0.01, -0.02, 0.03];
    let w = b.weight(&a);
    a.iter_mut().for_each(|x| *x /= w.sqrt());
    let p = TomographyProblem::exact(&b.eval(&a), true).unwrap();
    assert!(kl_loss(&a, &p, &b).unwrap().abs() < 1e-12);
    assert!(total_loss(&a, &p, &b).unwrap().abs() < 1e-12);
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    assert!((total_loss(&neg, &p, &b).unwrap() - total_loss(&a, &p, &b).unwrap()).abs() < 1e-14);
}

#[test]
fn gradient_matches_finite_differences() {
    let b = basis22();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let p = random_problem(&mut rng, inst % 2 == 0);
        // Bias the constant term so f stays away from zero.
        let mut a: Vec<f64> = (0..9).map(|_| rng.random_range(-0.2..0.2)).collect();
        a[0] = 1.0;
        let g = total_gradient(&a, &p, &b).unwrap();
        for j in 0..9 {
            // Five-point central stencil: near-cancelling X-basis pairs make
            // the O(h²) error of the two-point rule exceed the tolerance.
            let at = |d: f64| {
                let mut v = a.clone();
                v[j] += d;
                total_loss(&v, &p, &b).unwrap()
            };
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            worst = worst.max((fd - g[j]).abs());
        }
        let gz = kl_gradient(&a, &p, &b).unwrap();
        let l0 = kl_loss(&a, &p, &b).unwrap();
        let step: Vec<f64> = a.iter().zip(&gz).map(|(x, d)| x - 1e-6 * d).collect();
        assert!(kl_loss(&step, &p, &b).unwrap() <= l0);
    }
    assert!(worst <= 1e-5, "worst {worst}");
}

#[test]
fn singular_point_is_reported() {
    let b = chebyshev_basis(2, 2, (1, 0), None);
    // f = T_1(x): values −1, 1, −1, 1 → never zero; use a = (1, 1): 0 at x = −1.
    let p = TomographyProblem::from_counts(&[1, 1, 1, 1], &[]).unwrap();
    assert_eq!(kl_loss(&[1.0, 1.0], &p, &b).unwrap(), f64::INFINITY);
    assert!(matches!(
        kl_gradient(&[1.0, 1.0], &p, &b),
        Err(QlbmError::SingularPoint(0))
    ));
}

#[test]
fn constant_basis_recovers_flat_function() {
    let b = chebyshev_basis(4, 4, (0, 0), None);
    let p = TomographyProblem::from_counts(&[7; 16], &[]).unwrap();
    let fit = fit(&p, &b, &FitOptions::default()).unwrap();
    assert!((fit.coefficients[0].abs() - 0.25).abs() < 1e-12);
    assert!(fit.loss.abs() < 1e-12);
}

#[test]
fn equal_amplitudes_have_no_minus_outcomes() {
    let p = TomographyProblem::exact(&[0.5; 16], true).unwrap();
    for k in 0..4 {
        for i in 0..16 {
            if (i >> k) & 1 == 1 {
                assert_eq!(p.x[k][i], 0.0);
            }
        }
    }
    let b = chebyshev_basis(4, 4, (0, 0), None);
    assert!(xbasis_loss(&[0.25], &p, &b, 2).unwrap().abs() < 1e-12);
}

#[test]
fn fit_recovers_first_basis_function() {
    let b = basis22();
    let p = TomographyProblem::exact(&b.values[0], false).unwrap();
    let fit = fit(&p, &b, &FitOptions::default()).unwrap();
    let want = 1.0 / b.gram[(0, 0)].sqrt();
    assert!((fit.coefficients[0].abs() - want).abs() < 1e-6);
    assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-6));
    assert!(fit.constraint_residual < 1e-8);
}

fn truth(b: &TomographyBasis) -> Vec<f64> {
    let mut a = vec![1.0, 0.3, -0.2, 0.25, 0.1, 0.05, -0.15, 0.05, 0.1];
    let w = b.weight(&a);
    a.iter_mut().for_each(|x| *x /= w.sqrt());
    a
}

fn sign_aligned_error(fit: &[f64], want: &[f64]) -> f64 {
    let e = |s: f64| {
        fit.iter()
            .zip(want)
            .map(|(x, y)| (s * x - y).abs())
            .fold(0.0, f64::max)
    };
    e(1.0).min(e(-1.0))
}

#[test]
fn degree_two_recovery_from_samples() {
    let b = basis22();
    let a = truth(&b);
    for with_x in [false, true] {
        let p = TomographyProblem::sampled(&b.eval(&a), 100_000, with_x, 42).unwrap();
        let fit = fit(&p, &b, &FitOptions::default()).unwrap();
        let err = sign_aligned_error(&fit.coefficients, &a);
        assert!(err <= 0.02, "with_x={with_x}: error {err}");
        assert!(fit.constraint_residual < 1e-8);
    }
}

#[test]
fn fit_is_deterministic() {
    let b = basis22();
    let p = TomographyProblem::sampled(&b.eval(&truth(&b)), 5000, true, 9).unwrap();
    let o = FitOptions {
        seed: 17,
        ..FitOptions::default()
    };
    assert_eq!(fit(&p, &b, &o).unwrap(), fit(&p, &b, &o).unwrap());
}

#[test]
fn rect_transform_examples() {
    let t = rect_grid_transform(2.0, 1.0).unwrap();
    assert_eq!(t.apply(2.0, 0.5), (0.0, 0.0));
    assert_eq!(t.apply(-1.0, 1.0), (0.0, 0.0));
    assert_eq!(t.apply(4.0, 0.0), (2.0, 0.0));
    assert_eq!(t.apply(0.0, 0.0), (0.0, 0.0));
    let (x, _) = t.apply(2e6, 0.0);
    assert!((x / 2e6 - 1.0).abs() < 1e-5);
    let c = t.centered_at(3.5, 3.5);
    assert_eq!(c.apply(5.5, 3.5), (0.0, 0.0));
    assert!(rect_grid_transform(0.0, 1.0).is_err());
}

#[test]
fn sign_restoration() {
    let mut f = FieldState::zeros(4, 4, 3, 1).unwrap();
    for i in 0..16 {
        f.levels[0][0][i] = 1.0 + i as f64;
        let y = (i / 4) as f64;
        f.levels[0][2][i] = y - 1.5;
    }
    let mut abs = f.clone();
    abs.levels[0][2].iter_mut().for_each(|x| *x = x.abs());
    let axis = SymmetryAxis {
        y_axis: 1.5,
        antisymmetric: vec![false, false, true],
    };
    let r = sign_restore_symmetric(&abs, &axis);
    assert_eq!(r.levels[0][0], f.levels[0][0]);
    assert_eq!(r.levels[0][2], f.levels[0][2]);
}

use nalgebra::DMatrix;
use nvsim_core::qcore::{embed, ComplexOperator, DensityMatrix, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_state(seed: &[f64], dim: usize) -> DensityMatrix {
    // G·G† / tr, G filled from the seed values
    let g = DMatrix::from_fn(dim, dim, |i, j| {
        let k = 2 * (i * dim + j);
        C64::new(seed[k % seed.len()] - 0.5, seed[(k + 1) % seed.len()] - 0.5)
    });
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(vec![dim], m / C64::new(tr, 0.0)).unwrap()
}

fn random_unitary(angles: &[f64]) -> ComplexOperator {
    let mut u = ComplexOperator::identity(2);
    for w in angles.chunks(3) {
        let r = ComplexOperator::rotation([w[0], w[1], 1.0 - w[0]], 6.0 * w[2]);
        u = &r * &u;
    }
    u
}

/// Reduced state by explicit summation over the traced indices of a
/// three-qubit state.
fn brute_reduce(rho: &DensityMatrix, keep: usize) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(2, 2);
    let idx = |bits: [usize; 3]| bits[0] * 4 + bits[1] * 2 + bits[2];
    for a in 0..2 {
        for b in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    let mut r = [p, q, 0];
                    let mut c = [p, q, 0];
                    // place the kept index at `keep`, the two traced ones elsewhere
                    let others: Vec<usize> = (0..3).filter(|&i| i != keep).collect();
                    r[others[0]] = p;
                    r[others[1]] = q;
                    c[others[0]] = p;
                    c[others[1]] = q;
                    r[keep] = a;
                    c[keep] = b;
                    out[(a, b)] += rho.get(idx(r), idx(c));
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn partial_trace_of_random_product(vals in prop::collection::vec(0.0..1.0f64, 24)) {
        let f: Vec<DensityMatrix> = (0..3).map(|k| random_state(&vals[8 * k..8 * k + 8], 2)).collect();
        let rho = DensityMatrix::product(&f);
        for keep in 0..3 {
            let r = rho.partial_trace(&[keep]).unwrap();
            prop_assert!(r.max_abs_diff(&f[keep]) < 1e-10);
            let brute = brute_reduce(&rho, keep);
            let d = r.matrix().iter().zip(brute.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(d < 1e-12);
        }
    }

    #[test]
    fn local_unitary_keeps_remote_marginal(vals in prop::collection::vec(0.0..1.0f64, 32), angles in prop::collection::vec(0.0..1.0f64, 9)) {
        let rho = random_state(&vals, 4);
        let rho = DensityMatrix::new(vec![2, 2], rho.matrix().clone()).unwrap();
        let u = random_unitary(&angles).tensor(&ComplexOperator::identity(2));
        let after = rho.evolve(&u).unwrap();
        let before_b = rho.partial_trace(&[1]).unwrap();
        let after_b = after.partial_trace(&[1]).unwrap();
        prop_assert!(before_b.max_abs_diff(&after_b) < 1e-10);
    }

    #[test]
    fn measurement_average_is_dephased_state(vals in prop::collection::vec(0.0..1.0f64, 32), seed in any::<u64>()) {
        let rho = DensityMatrix::new(vec![2, 2], random_state(&vals, 4).matrix().clone()).unwrap();
        let projectors: Vec<ComplexOperator> = (0..2)
            .map(|k| embed(&ComplexOperator::basis_projector(2, k), 0, &[2, 2]).unwrap())
            .collect();
        let probs = rho.outcome_probabilities(&projectors).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome = rho.measure_projective(&projectors, &mut rng).unwrap();
        prop_assert!((outcome.post_state.trace() - 1.0).abs() < 1e-10);
        let mut avg = DMatrix::<C64>::zeros(4, 4);
        for (k, p) in projectors.iter().enumerate() {
            if probs[k] > 1e-14 {
                let post = rho.project(p, probs[k], k).unwrap();
                avg += post.matrix() * C64::new(probs[k], 0.0);
            }
        }
        // dephased in the electron basis: cross blocks vanish
        for i in 0..4 {
            for j in 0..4 {
                let want = if (i < 2) == (j < 2) { rho.get(i, j) } else { C64::new(0.0, 0.0) };
                prop_assert!((avg[(i, j)] - want).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn ten_thousand_evolutions_stay_physical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    let seed: Vec<f64> = (0..32).map(|_| rng.random()).collect();
    let mut rho = DensityMatrix::new(vec![2, 2], random_state(&seed, 4).matrix().clone()).unwrap();
    let angles: Vec<f64> = (0..9).map(|_| rng.random()).collect();
    let u = random_unitary(&angles).tensor(&random_unitary(&angles[3..]));
    let cz = ComplexOperator::from_real(4, &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., -1.]).unwrap();
    let step = &cz * &u;
    for _ in 0..10_000 {
        rho = rho.evolve(&step).unwrap();
    }
    assert!((rho.trace() - 1.0).abs() < 1e-9);
    assert!(rho.min_eigenvalue() > -1e-9);
    assert!(rho.hermiticity_error() < 1e-10);
    rho.validate().unwrap();
}

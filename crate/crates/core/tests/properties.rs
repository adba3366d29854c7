#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use floerlab::action_gradient::LoopModel;
use floerlab::chain_algebra::{GF2Matrix, GradedComplex, homology_ranks, verify_complex};
use floerlab::conley_zehnder::{constant_generator_path, cz_index};
use floerlab::floer_solver::{CylinderGrid, energy, trace_ratio};
use floerlab::hamiltonian::{SymplecticPath, TrigHamiltonian, TrigTerm, j0};
use floerlab::loopspace::{inner_half_vec, inner_hs};
use floerlab::orbits::action_of;
use floerlab::{FourierLoop, GalerkinSpace};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn loop_strategy(n: usize, big_n: usize) -> impl Strategy<Value = FourierLoop> {
    let space = GalerkinSpace::new(n, big_n);
    prop::collection::vec(-1.0..1.0f64, space.dim_total()).prop_map(move |v| FourierLoop::from_vec(space, &v))
}

fn term_strategy(n: usize) -> impl Strategy<Value = TrigTerm> {
    (0.02..0.1f64, prop::collection::vec(-1i64..=1, 2 * n), 0.0..1.0f64, 0i64..=1, 0.0..1.0f64)
        .prop_map(|(a, m, phi, l, psi)| TrigTerm { a, m, phi, l, psi })
}

fn hamiltonian_strategy(n: usize) -> impl Strategy<Value = TrigHamiltonian> {
    prop::collection::vec(term_strategy(n), 1..4).prop_map(move |terms| TrigHamiltonian { n, terms })
}

fn symmetric_strategy(d: usize, r: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-r..r, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        (&a + a.transpose()) * 0.5
    })
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    // (q1, p1) + (q2, p2) -> (q1, q2, p1, p2)
    let mut out = DMatrix::zeros(4, 4);
    let idx_a = [0, 2];
    let idx_b = [1, 3];
    for i in 0..2 {
        for j in 0..2 {
            out[(idx_a[i], idx_a[j])] = a[(i, j)];
            out[(idx_b[i], idx_b[j])] = b[(i, j)];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval(x in (1usize..=2, 2usize..=5).prop_flat_map(|(n, nn)| loop_strategy(n, nn))) {
        let m = 8 * x.space().big_n + 3;
        let integral: f64 = (0..m)
            .map(|j| x.eval_lifted(j as f64 / m as f64).iter().map(|c| c * c).sum::<f64>())
            .sum::<f64>() / m as f64;
        let l2 = inner_hs(&x, &x, 0.0).unwrap();
        prop_assert!((integral - l2).abs() <= 1e-10 * l2.max(1e-300), "{integral} vs {l2}");
    }

    #[test]
    fn jstar_is_adjoint((x, y) in (1usize..=2, 2usize..=5).prop_flat_map(|(n, nn)| (loop_strategy(n, nn), loop_strategy(n, nn)))) {
        let lhs = inner_hs(&y.jstar(), &x, 0.5).unwrap();
        let rhs = inner_hs(&y, &x, 0.0).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + rhs.abs()));
    }

    #[test]
    fn hamiltonian_derivatives_are_second_order(
        h in (1usize..=2).prop_flat_map(hamiltonian_strategy),
        t in 0.0..1.0f64,
        seed in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        let d = 2 * h.n;
        let x: Vec<f64> = seed[..d].to_vec();
        let e: Vec<f64> = seed[4..4 + d].to_vec();
        let at = |s: f64| -> Vec<f64> { x.iter().zip(&e).map(|(a, b)| a + s * b).collect() };
        let g = h.grad_h(t, &x);
        let hs = h.hess_h(t, &x);
        let dir = nalgebra::DVector::from_column_slice(&e);
        let hess_e = &hs * &dir;
        let err = |s: f64| -> (f64, f64) {
            let fd = (h.eval_h(t, &at(s)) - h.eval_h(t, &at(-s))) / (2.0 * s);
            let an: f64 = g.iter().zip(&e).map(|(a, b)| a * b).sum();
            let gp = h.grad_h(t, &at(s));
            let gm = h.grad_h(t, &at(-s));
            let herr = (0..d).map(|i| ((gp[i] - gm[i]) / (2.0 * s) - hess_e[i]).powi(2)).sum::<f64>().sqrt();
            ((fd - an).abs(), herr)
        };
        let (g1, h1) = err(1e-3);
        let (g2, h2) = err(5e-4);
        for (a, b) in [(g1, g2), (h1, h2)] {
            if a > 1e-10 {
                prop_assert!((a / b).log2() >= 1.9, "order {}", (a / b).log2());
            }
        }
    }

    #[test]
    fn flow_defects_are_fourth_order(
        h in (1usize..=2).prop_flat_map(hamiltonian_strategy),
        p in prop::collection::vec(0.0..1.0f64, 4),
    ) {
        let h = h.time_average();
        let d = 2 * h.n;
        let p = &p[..d];
        let jm = j0(h.n);
        let defects = |steps: usize| {
            let (q, psi) = h.flow_map(p, steps);
            ((psi.transpose() * &jm * &psi - &jm).amax(), (h.eval_h(0.0, &q) - h.eval_h(0.0, p)).abs())
        };
        let (s1, e1) = defects(256);
        let (s2, e2) = defects(512);
        for (a, b) in [(s1, s2), (e1, e2)] {
            if b > 1e-10 {
                prop_assert!((a / b).log2() >= 3.5, "order {} ({a:e} -> {b:e})", (a / b).log2());
            }
        }
    }

    #[test]
    fn action_ignores_lift(
        h in hamiltonian_strategy(1),
        x in loop_strategy(1, 4),
        shift in prop::collection::vec(-3i64..=3, 2),
    ) {
        let m = 64;
        let samples: Vec<Vec<f64>> = (0..m).map(|j| x.eval_lifted(j as f64 / m as f64)).collect();
        let moved: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| s.iter().zip(&shift).map(|(a, b)| a + *b as f64).collect())
            .collect();
        let a = action_of(&h, &samples);
        let b = action_of(&h, &moved);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn cz_diagonal_family(lambda in -6.0 * PI..6.0 * PI, n in 1usize..=2) {
        let k = (lambda / (2.0 * PI)).round();
        prop_assume!((lambda - 2.0 * PI * k).abs() > 0.1);
        let s = DMatrix::<f64>::identity(2 * n, 2 * n) * lambda;
        let got = cz_index(&constant_generator_path(&s, 256), 1e-6).unwrap();
        let want = -2 * n as i64 * (lambda / (2.0 * PI)).floor() as i64 - n as i64;
        prop_assert_eq!(got, want);
    }

    #[test]
    fn cz_direct_sum(a in symmetric_strategy(2, 12.0), b in symmetric_strategy(2, 12.0)) {
        let pa = constant_generator_path(&a, 256);
        let pb = constant_generator_path(&b, 256);
        prop_assume!(pa.nondeg_margin() > 1e-2 && pb.nondeg_margin() > 1e-2);
        let sum = constant_generator_path(&block_diag(&a, &b), 256);
        prop_assert_eq!(cz_index(&sum, 1e-6).unwrap(), cz_index(&pa, 1e-6).unwrap() + cz_index(&pb, 1e-6).unwrap());
    }

    #[test]
    fn cz_homotopy_invariance(s in symmetric_strategy(2, 12.0), noise in symmetric_strategy(2, 1e-3), w in 1.0..5.0f64) {
        let base = constant_generator_path(&s, 256);
        prop_assume!(base.nondeg_margin() > 1e-2);
        let wiggled = SymplecticPath::from_generator(1, |t| &s + &noise * (2.0 * PI * w * t).sin(), 256);
        prop_assume!(wiggled.nondeg_margin() > 1e-2);
        prop_assert_eq!(cz_index(&wiggled, 1e-6).unwrap(), cz_index(&base, 1e-6).unwrap());
    }

    #[test]
    fn cz_conjugation_invariance(s in symmetric_strategy(2, 12.0), b in symmetric_strategy(2, 1.0)) {
        let path = constant_generator_path(&s, 256);
        prop_assume!(path.nondeg_margin() > 1e-2);
        let p = constant_generator_path(&b, 64).end().clone();
        let pinv = p.clone().try_inverse().unwrap();
        let conj = SymplecticPath { n: 1, samples: path.samples.iter().map(|(t, m)| (*t, &p * m * &pinv)).collect() };
        prop_assert_eq!(cz_index(&conj, 1e-6).unwrap(), cz_index(&path, 1e-6).unwrap());
    }

    #[test]
    fn action_gradient_hessian_fd(
        h in hamiltonian_strategy(1),
        nn in prop::sample::select(vec![4usize, 8]),
        seed in any::<u64>(),
    ) {
        use rand::{RngExt, SeedableRng};
        let model = LoopModel::new(&h, GalerkinSpace::new(1, nn));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = model.dim();
        let v: Vec<f64> = (0..dim).map(|i| {
            let k = model.space.mode_of(i).abs() as f64;
            rng.random_range(-1.0..1.0) / (1.0 + k * k)
        }).collect();
        let e: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let step = 1e-5;
        let at = |s: f64| -> Vec<f64> { v.iter().zip(&e).map(|(a, b)| a + s * b).collect() };
        let fd = (model.action_vec(&at(step)) - model.action_vec(&at(-step))) / (2.0 * step);
        let an = -inner_half_vec(model.space, &model.neg_gradient(&v), &e);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        let fp = model.field_f(&at(step));
        let fm = model.field_f(&at(-step));
        let je = model.jac_f(&v) * nalgebra::DVector::from_column_slice(&e);
        let err = (0..dim).map(|i| ((fp[i] - fm[i]) / (2.0 * step) - je[i]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-6 * je.norm().max(1e-3), "{err} vs {}", je.norm());
    }

    #[test]
    fn cylinder_energy_is_nonnegative(
        h in hamiltonian_strategy(1),
        coef in prop::collection::vec(-1.0..1.0f64, 18 * 2),
    ) {
        let space = GalerkinSpace::new(1, 4);
        let model = LoopModel::new(&h, space);
        let grid = CylinderGrid::from_fn(space, -3.0, 3.0, 32, |s| {
            (0..space.dim_total()).map(|i| coef[i] * (s + coef[18 + i]).tanh()).collect()
        });
        prop_assert!(energy(&model, &grid) >= 0.0);
    }

    #[test]
    fn trace_inequality(coef in prop::collection::vec(-1.0..1.0f64, 18), rate in 0.1..4.0f64, freq in 0.0..3.0f64) {
        let space = GalerkinSpace::new(1, 4);
        let l = 40.0 / rate;
        let grid = CylinderGrid::from_fn(space, 0.0, l, 1024, |s| {
            coef.iter().map(|c| c * (-rate * s).exp() * (freq * s).cos()).collect()
        });
        prop_assert!(trace_ratio(space, &grid.values, grid.h()) <= 2f64.sqrt());
    }
}

/// Direct sum of elementary complexes `x -> y` and isolated generators,
/// with known homology, scrambled by basis changes.
#[derive(Debug, Clone)]
struct RandomComplex {
    complex: GradedComplex,
    ranks: BTreeMap<i64, usize>,
}

fn random_complex() -> impl Strategy<Value = RandomComplex> {
    (prop::collection::vec((-1i64..=2, any::<bool>()), 1..8), prop::collection::vec((0usize..64, 0usize..64, -1i64..=2), 0..30))
        .prop_map(|(pieces, ops)| {
            let mut gens: Vec<(usize, i64)> = Vec::new();
            let mut pairs = Vec::new();
            let mut ranks: BTreeMap<i64, usize> = BTreeMap::new();
            for (k, paired) in pieces {
                let x = gens.len();
                gens.push((x, k));
                if paired {
                    gens.push((x + 1, k - 1));
                    pairs.push((x, x + 1));
                } else {
                    *ranks.entry(k).or_default() += 1;
                }
            }
            let mut c = GradedComplex::from_generators(gens.iter().map(|&(id, k)| (id, k, id as f64)));
            for (x, y) in pairs {
                c.set_entry(x, y, true).unwrap();
            }
            // adding generator i to generator j in degree k: column j += column i of d_k,
            // row i += row j of d_{k+1}
            for (i, j, k) in ops {
                let count = c.count(k);
                if count < 2 {
                    continue;
                }
                let (i, j) = (i % count, j % count);
                if i == j {
                    continue;
                }
                let mut dk = c.d(k);
                for r in 0..dk.rows() {
                    let v = dk.get(r, j) ^ dk.get(r, i);
                    dk.set(r, j, v);
                }
                c.boundary.insert(k, dk);
                let mut up = c.d(k + 1);
                for col in 0..up.cols() {
                    let v = up.get(i, col) ^ up.get(j, col);
                    up.set(i, col, v);
                }
                c.boundary.insert(k + 1, up);
            }
            let degrees: Vec<i64> = c.degrees();
            c.boundary.retain(|k, _| degrees.contains(k));
            RandomComplex { complex: c, ranks }
        })
}

/// Kernel dimension by enumerating all vectors.
fn kernel_dim_brute(m: &GF2Matrix) -> usize {
    let cols = m.cols();
    let zeros = (0u32..1 << cols)
        .filter(|bits| (0..m.rows()).all(|r| (0..cols).filter(|&c| bits >> c & 1 == 1 && m.get(r, c)).count() % 2 == 0))
        .count();
    zeros.trailing_zeros() as usize
}

fn permuted(c: &GradedComplex, seed: u64) -> GradedComplex {
    use rand::SeedableRng;
    use rand::seq::SliceRandom;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let perms: BTreeMap<i64, Vec<usize>> = c
        .generators
        .iter()
        .map(|(&k, g)| {
            let mut p: Vec<usize> = (0..g.len()).collect();
            p.shuffle(&mut rng);
            (k, p)
        })
        .collect();
    let mut out = c.clone();
    for (k, p) in &perms {
        out.generators.insert(*k, p.iter().map(|&i| c.generators[k][i].clone()).collect());
    }
    for k in c.degrees() {
        let d = c.d(k);
        let pc = &perms[&k];
        let pr = perms.get(&(k - 1));
        let mut nd = GF2Matrix::zeros(d.rows(), d.cols());
        for r in 0..d.rows() {
            for col in 0..d.cols() {
                let rr = pr.map_or(r, |p| p[r]);
                nd.set(r, col, d.get(rr, pc[col]));
            }
        }
        out.boundary.insert(k, nd);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homology_of_scrambled_complexes(rc in random_complex(), seed in any::<u64>()) {
        let c = &rc.complex;
        prop_assert!(verify_complex(c).unwrap().pass);
        let ranks = homology_ranks(c).unwrap();
        for k in c.degrees() {
            prop_assert_eq!(ranks.get(&k).copied().unwrap_or(0), rc.ranks.get(&k).copied().unwrap_or(0), "degree {}", k);
            let d = c.d(k);
            prop_assert_eq!(d.rank() + kernel_dim_brute(&d), c.count(k));
        }
        let euler: i64 = ranks.iter().map(|(&k, &r)| if k % 2 == 0 { r as i64 } else { -(r as i64) }).sum();
        prop_assert_eq!(euler, c.euler_characteristic());
        prop_assert_eq!(homology_ranks(&permuted(c, seed)).unwrap(), ranks);
    }
}

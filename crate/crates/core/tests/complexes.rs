use floerlab::action_gradient::{CriticalLoop, LoopModel, commutator_tail, critical_loops};
use floerlab::chain_algebra::{homology_ranks, verify_complex};
use floerlab::hamiltonian::TrigHamiltonian;
use floerlab::morse_complex::{CompactPerturbation, ConnectionCount, MorseOptions, morse_boundary};
use floerlab::orbits::{OrbitOptions, find_orbits};
use floerlab::GalerkinSpace;

fn setup(h: &TrigHamiltonian, big_n: usize) -> (LoopModel, Vec<CriticalLoop>) {
    let orbits = find_orbits(h, &OrbitOptions::default()).unwrap();
    let model = LoopModel::new(h, GalerkinSpace::new(h.n, big_n));
    let crits = critical_loops(&model, &orbits, 1e-8).unwrap();
    (model, crits)
}

fn parities(counts: &[ConnectionCount]) -> Vec<(usize, usize, usize)> {
    let mut v: Vec<_> = counts.iter().map(|c| (c.from, c.to, c.count % 2)).collect();
    v.sort();
    v
}

#[test]
fn morse_counts_are_stable() {
    let h = TrigHamiltonian::cos_cos(0.01);
    let (model, crits) = setup(&h, 4);
    let k = CompactPerturbation::zero(model.space);
    let base = MorseOptions::default();
    let (cx, counts) = morse_boundary(&model, &k, &crits, &base).unwrap();
    let reference = parities(&counts);
    assert_eq!(reference.len(), 4);
    assert!(reference.iter().all(|&(_, _, p)| p == 0), "{reference:?}");
    assert!(verify_complex(&cx).unwrap().pass);

    let finer_mesh = MorseOptions { mesh: 2 * base.mesh, ..base.clone() };
    assert_eq!(parities(&morse_boundary(&model, &k, &crits, &finer_mesh).unwrap().1), reference);
    let closer = MorseOptions { r_launch: 0.5 * base.r_launch, ..base.clone() };
    assert_eq!(parities(&morse_boundary(&model, &k, &crits, &closer).unwrap().1), reference);
    let (model8, crits8) = setup(&h, 8);
    let k8 = CompactPerturbation::zero(model8.space);
    assert_eq!(parities(&morse_boundary(&model8, &k8, &crits8, &base).unwrap().1), reference);
}

#[test]
fn forced_census_and_morse_complex() {
    let h = TrigHamiltonian::cos_cos_forced(0.01, 0.001);
    let orbits = find_orbits(&h, &OrbitOptions::default()).unwrap();
    let mut actions: Vec<(f64, i64)> = orbits.iter().map(|o| (o.action, o.cz)).collect();
    actions.sort_by(|a, b| b.0.total_cmp(&a.0));
    let want = [(0.02, 1), (0.0, 0), (0.0, 0), (-0.02, -1)];
    assert_eq!(actions.len(), 4);
    for ((a, mu), (wa, wmu)) in actions.iter().zip(want) {
        assert!((a - wa).abs() < 1e-8, "{a} vs {wa}");
        assert_eq!(*mu, wmu);
    }
    let (model, crits) = setup(&h, 4);
    assert!(crits.iter().all(|c| c.m == c.mu));
    let k = CompactPerturbation::zero(model.space);
    let (cx, _) = morse_boundary(&model, &k, &crits, &MorseOptions::default()).unwrap();
    assert!(verify_complex(&cx).unwrap().pass);
    let ranks = homology_ranks(&cx).unwrap();
    assert_eq!((ranks[&1], ranks[&0], ranks[&-1]), (1, 2, 1));
}

#[test]
fn commutator_tail_decays() {
    let h = TrigHamiltonian::cos_cos(0.01);
    let (model, crits) = setup(&h, 16);
    // at the extrema Hess H is a multiple of the identity and the tail vanishes
    let mut points: Vec<Vec<f64>> = crits.iter().filter(|c| c.mu == 0).map(|c| c.vec.clone()).collect();
    let mut smooth = crits[0].vec.clone();
    for k in [-1i64, 1] {
        let o = model.space.offset(k);
        smooth[o] += 0.05;
        smooth[o + 1] -= 0.03 * k as f64;
    }
    points.push(smooth);
    assert_eq!(points.len(), 3);
    for v in &points {
        let tails: Vec<f64> = [2usize, 4, 8, 12].iter().map(|&k| commutator_tail(&model, v, k)).collect();
        assert!(tails[0] > 1e-6, "{tails:?}");
        for w in tails.windows(2) {
            assert!(w[1] <= 0.8 * w[0], "{tails:?}");
        }
        // off-diagonal blocks scale like 1/|k|
        let scaled: Vec<f64> = [2usize, 4, 8, 12].iter().zip(&tails).map(|(&k, t)| t * (k + 1) as f64).collect();
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi <= 2.0 * lo, "{scaled:?}");
    }
}

//! Shared fixtures for the benchmarks.

use floerlab::action_gradient::{CriticalLoop, LoopModel, critical_loops};
use floerlab::floer_solver::CylinderGrid;
use floerlab::hamiltonian::TrigHamiltonian;
use floerlab::orbits::{OrbitOptions, find_orbits};
use floerlab::GalerkinSpace;

/// Truncated model and critical loops of `0.01 (cos 2 pi q + cos 2 pi p)`.
pub fn cos_cos(big_n: usize) -> (LoopModel, Vec<CriticalLoop>) {
    let h = TrigHamiltonian::cos_cos(0.01);
    let orbits = find_orbits(&h, &OrbitOptions::default()).expect("orbits");
    let model = LoopModel::new(&h, GalerkinSpace::new(1, big_n));
    let crits = critical_loops(&model, &orbits, 1e-8).expect("indices");
    (model, crits)
}

/// `y` with its base moved to the lattice translate nearest to `x`.
pub fn nearest_translate(space: GalerkinSpace, x: &[f64], y: &[f64]) -> Vec<f64> {
    let o = space.offset(0);
    let mut out = y.to_vec();
    for i in o..o + 2 * space.n {
        out[i] -= (y[i] - x[i]).round();
    }
    out
}

/// `tanh` blend between two loops on `[-l, l]`.
pub fn blend(space: GalerkinSpace, x: &[f64], y: &[f64], l: f64, m_s: usize) -> CylinderGrid {
    CylinderGrid::from_fn(space, -l, l, m_s, |s| {
        let w = 0.5 * (1.0 + (0.2 * s).tanh());
        x.iter().zip(y).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    })
}

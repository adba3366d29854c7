//! The action functional on the truncated loop space, its `H^{1/2}` gradient
//! and Hessian, and the relative Morse index.
//!
//! In flat L2 coordinates `v` (see [`crate::loopspace`]) write
//! `G(v)` for the modes of `t -> grad H(t, x(t))` and
//! `F(v) = 2 pi K v - G(v)` with `K = diag(k)`. Then the L2 gradient of the
//! action is `-F`, the `H^{1/2}` gradient is `-D^{-1} F` with
//! `D = diag(1, 2 pi |k|)`, and the Floer equation reads `u' = F(u)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hamiltonian::TrigHamiltonian;
use crate::loopspace::{FourierLoop, GalerkinSpace, Sampler, half_weights};

/// A Hamiltonian together with a truncation and a quadrature grid.
#[derive(Clone, Debug)]
pub struct LoopModel {
    pub h: TrigHamiltonian,
    pub space: GalerkinSpace,
    pub sampler: Sampler,
    /// `2 pi k` per flat coordinate.
    pub twopik: Vec<f64>,
    /// `diag(D)`.
    pub weights: Vec<f64>,
}

impl LoopModel {
    pub fn new(h: &TrigHamiltonian, space: GalerkinSpace) -> Self {
        assert_eq!(h.n, space.n, "Hamiltonian and loop space disagree on n");
        let twopik = (0..space.dim_total()).map(|i| 2.0 * PI * space.mode_of(i) as f64).collect();
        Self {
            h: h.clone(),
            space,
            sampler: Sampler::default_for(space),
            twopik,
            weights: half_weights(space),
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim_total()
    }

    fn samples(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.sampler.m * self.space.block()];
        self.sampler.sample(v, &mut s);
        s
    }

    /// Action `-1/2 (|P+x|^2 - |P-x|^2)_{1/2} + int H`.
    pub fn action_vec(&self, v: &[f64]) -> f64 {
        let quad: f64 = (0..self.dim()).map(|i| -0.5 * self.twopik[i] * v[i] * v[i]).sum();
        let d = self.space.block();
        let s = self.samples(v);
        let m = self.sampler.m;
        let int_h: f64 = (0..m).map(|j| self.h.eval_h(self.sampler.t(j), &s[j * d..(j + 1) * d])).sum::<f64>()
            / m as f64;
        quad + int_h
    }

    /// `G(v)`, the truncated modes of `grad H` along the loop.
    pub fn grad_modes(&self, v: &[f64]) -> Vec<f64> {
        let d = self.space.block();
        let m = self.sampler.m;
        let s = self.samples(v);
        let mut g = vec![0.0; m * d];
        for j in 0..m {
            self.h.grad_into(self.sampler.t(j), &s[j * d..(j + 1) * d], &mut g[j * d..(j + 1) * d]);
        }
        let mut out = vec![0.0; self.dim()];
        self.sampler.project(&g, &mut out);
        out
    }

    /// `F(v) = 2 pi K v - G(v)`.
    pub fn field_f(&self, v: &[f64]) -> Vec<f64> {
        let mut g = self.grad_modes(v);
        for i in 0..g.len() {
            g[i] = self.twopik[i] * v[i] - g[i];
        }
        g
    }

    /// Negative gradient `X(v) = -grad A = D^{-1} F(v)`.
    pub fn neg_gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut f = self.field_f(v);
        for i in 0..f.len() {
            f[i] /= self.weights[i];
        }
        f
    }

    /// Multiplication operator by `Hess H(t, x(t))` in L2 coordinates.
    pub fn mult_matrix(&self, v: &[f64]) -> DMatrix<f64> {
        let d = self.space.block();
        let m = self.sampler.m;
        let dim = self.dim();
        let s = self.samples(v);
        let mut c = DMatrix::<f64>::zeros(dim, dim);
        let mut hs = vec![0.0; d * d];
        let mut sb = vec![0.0; dim * d];
        let w = 1.0 / m as f64;
        for j in 0..m {
            self.h.hess_into(self.sampler.t(j), &s[j * d..(j + 1) * d], &mut hs);
            if hs.iter().all(|x| *x == 0.0) {
                continue;
            }
            // S_j phi_b for every basis vector b
            for b in 0..dim {
                let row = &mut sb[b * d..(b + 1) * d];
                row.iter_mut().for_each(|x| *x = 0.0);
                for (comp, val) in self.sampler.basis_at(j, b) {
                    for r in 0..d {
                        row[r] += hs[r * d + comp] * val;
                    }
                }
            }
            for a in 0..dim {
                let pa = self.sampler.basis_at(j, a);
                for b in a..dim {
                    let sbv = &sb[b * d..(b + 1) * d];
                    let val = pa[0].1 * sbv[pa[0].0] + pa[1].1 * sbv[pa[1].0];
                    c[(a, b)] += w * val;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                c[(a, b)] = c[(b, a)];
            }
        }
        c
    }

    /// `DF(v) = 2 pi K - C(v)`, symmetric.
    pub fn jac_f(&self, v: &[f64]) -> DMatrix<f64> {
        let mut a = -self.mult_matrix(v);
        for i in 0..self.dim() {
            a[(i, i)] += self.twopik[i];
        }
        a
    }

    /// Linearization of `X = D^{-1} F` in flat coordinates (not symmetric).
    pub fn jac_neg_gradient(&self, v: &[f64]) -> DMatrix<f64> {
        let mut a = self.jac_f(v);
        for i in 0..self.dim() {
            let w = self.weights[i];
            a.row_mut(i).iter_mut().for_each(|x| *x /= w);
        }
        a
    }

    /// Hessian of the action in the `H^{1/2}`-orthonormal basis:
    /// `-D^{-1/2} DF D^{-1/2}`.
    pub fn hessian_sym(&self, v: &[f64]) -> DMatrix<f64> {
        let a = self.jac_f(v);
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |i, j| -a[(i, j)] / (self.weights[i] * self.weights[j]).sqrt())
    }

    /// Newton solve of `F(v) = 0` from `v0`; the base stays lifted.
    pub fn refine_critical(&self, v0: &[f64], tol: f64) -> Result<Vec<f64>> {
        let mut v = v0.to_vec();
        for _ in 0..30 {
            let f = self.field_f(&v);
            let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nf < tol {
                return Ok(v);
            }
            let a = self.jac_f(&v);
            let step = a
                .lu()
                .solve(&DVector::from_vec(f))
                .ok_or(Error::SpectralGap(0.0))?;
            for i in 0..v.len() {
                v[i] -= step[i];
            }
        }
        let nf = self.field_f(&v).iter().map(|x| x * x).sum::<f64>().sqrt();
        if nf < 1e3 * tol {
            Ok(v)
        } else {
            Err(Error::Resolution(format!("truncated critical point not found (|F| = {nf:e})")))
        }
    }
}

/// Symmetric Hessian in the mode basis.
#[derive(Clone, Debug)]
pub struct HessianMatrix {
    pub space: GalerkinSpace,
    /// Expressed in the `H^{1/2}`-orthonormal mode basis, blocks `k = -N..N`.
    pub matrix: DMatrix<f64>,
}

impl HessianMatrix {
    pub fn symmetry_defect(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

pub fn action(h: &TrigHamiltonian, x: &FourierLoop) -> f64 {
    LoopModel::new(h, x.space()).action_vec(&x.to_vec())
}

/// Tangent vector `-P+x + P-x + j*(grad H(x))`. The base slot carries the
/// constant component of the tangent vector and is not reduced.
pub fn gradient(h: &TrigHamiltonian, x: &FourierLoop) -> FourierLoop {
    let model = LoopModel::new(h, x.space());
    let g: Vec<f64> = model.neg_gradient(&x.to_vec()).into_iter().map(|c| -c).collect();
    tangent_from_vec(x.space(), &g)
}

/// Tangent vector from flat coordinates, base not reduced.
pub fn tangent_from_vec(space: GalerkinSpace, v: &[f64]) -> FourierLoop {
    let mut t = FourierLoop::zero(space);
    for k in space.modes() {
        let o = space.offset(k);
        t.coeff_mut(k).copy_from_slice(&v[o..o + space.block()]);
    }
    t
}

pub fn hessian(h: &TrigHamiltonian, x: &FourierLoop) -> HessianMatrix {
    let model = LoopModel::new(h, x.space());
    HessianMatrix { space: x.space(), matrix: model.hessian_sym(&x.to_vec()) }
}

/// `#{positive eigenvalues of -Hess} - dim_V`, with the spectral gap check.
pub fn relative_index_at(model: &LoopModel, v: &[f64], tol_spec: f64) -> Result<i64> {
    let hm = model.hessian_sym(v);
    let eig = SymmetricEigen::new(hm).eigenvalues;
    let mut pos = 0i64;
    for &e in eig.iter() {
        if e.abs() <= tol_spec {
            return Err(Error::SpectralGap(e));
        }
        if e < 0.0 {
            pos += 1;
        }
    }
    Ok(pos - model.space.dim_v() as i64)
}

/// Truncated critical point near an orbit's loop, base lifted near the loop base.
pub fn critical_vec(model: &LoopModel, x: &FourierLoop) -> Result<Vec<f64>> {
    model.refine_critical(&x.with_cutoff(model.space.big_n).to_vec(), 1e-12)
}

/// Relative index of an orbit, checked for stability between `N` and `N+2`.
pub fn relative_index(
    h: &TrigHamiltonian,
    samples: &[Vec<f64>],
    space: GalerkinSpace,
    tol_spec: f64,
) -> Result<i64> {
    let at = |nn: usize| -> Result<i64> {
        let sp = GalerkinSpace::new(space.n, nn);
        let model = LoopModel::new(h, sp);
        let x = loop_from_samples(samples, sp);
        let v = critical_vec(&model, &x)?;
        relative_index_at(&model, &v, tol_spec)
    };
    let m0 = at(space.big_n)?;
    let m2 = at(space.big_n + 2)?;
    if m0 != m2 {
        return Err(Error::Truncation(format!(
            "relative index {m0} at N = {} but {m2} at N = {}; raise N",
            space.big_n,
            space.big_n + 2
        )));
    }
    Ok(m0)
}

/// An orbit seen as a critical point of the truncated action.
#[derive(Clone, Debug)]
pub struct CriticalLoop {
    pub id: usize,
    /// Flat coordinates, base in `[0,1)^{2n}` up to the refinement step.
    pub vec: Vec<f64>,
    pub action: f64,
    /// Relative Morse index.
    pub m: i64,
    /// Conley-Zehnder index.
    pub mu: i64,
}

/// Truncated critical points and relative indices for a list of orbits.
pub fn critical_loops(
    model: &LoopModel,
    orbits: &[crate::orbits::PeriodicOrbit],
    tol_spec: f64,
) -> Result<Vec<CriticalLoop>> {
    orbits
        .iter()
        .map(|o| {
            let vec = critical_vec(model, &o.as_loop)?;
            let m = relative_index(&model.h, &o.samples, model.space, tol_spec)?;
            Ok(CriticalLoop { id: o.id, action: model.action_vec(&vec), vec, m, mu: o.cz })
        })
        .collect()
}

/// Fourier loop of uniformly sampled lifted points.
pub fn loop_from_samples(samples: &[Vec<f64>], space: GalerkinSpace) -> FourierLoop {
    let m = samples.len();
    let d = space.block();
    assert!(m > 2 * space.big_n, "too few samples for cutoff N = {}", space.big_n);
    let sampler = Sampler::new(space, m);
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    assert_eq!(flat.len(), m * d);
    let mut v = vec![0.0; space.dim_total()];
    sampler.project(&flat, &mut v);
    FourierLoop::from_vec(space, &v)
}

/// Relative dimension of the unstable space of `-Hess` with respect to
/// `R^n x H^+`, through projection ranks. Test-only cross-check.
pub fn relative_dimension_by_projections(model: &LoopModel, v: &[f64]) -> i64 {
    let hm = model.hessian_sym(v);
    let dim = model.dim();
    let sp = model.space;
    let eig = SymmetricEigen::new(hm);
    let unstable: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] < 0.0).collect();
    let eu = DMatrix::from_fn(dim, unstable.len(), |r, c| eig.eigenvectors[(r, unstable[c])]);
    let in_v = |i: usize| {
        let k = sp.mode_of(i);
        k > 0 || (k == 0 && i % sp.block() < sp.n)
    };
    let vcols: Vec<usize> = (0..dim).filter(|&i| in_v(i)).collect();
    let vb = DMatrix::from_fn(dim, vcols.len(), |r, c| if r == vcols[c] { 1.0 } else { 0.0 });
    let rank = |m: DMatrix<f64>| m.svd(false, false).singular_values.iter().filter(|s| **s > 1e-9).count() as i64;
    let cross = vb.transpose() * &eu;
    let r = rank(cross);
    // dim(E^u cap V^perp) - dim(E^u^perp cap V)
    (eu.ncols() as i64 - r) - (vb.ncols() as i64 - r)
}

/// `H^{1/2}` product of flat tangent vectors.
pub fn inner_half(model: &LoopModel, a: &[f64], b: &[f64]) -> f64 {
    (0..a.len()).map(|i| model.weights[i] * a[i] * b[i]).sum()
}

/// Norm of the off-diagonal part of the linearized vector field between
/// `H^+` and the rest, restricted to modes `|k| > kmin`.
pub fn commutator_tail(model: &LoopModel, v: &[f64], kmin: usize) -> f64 {
    let hm = model.hessian_sym(v);
    let sp = model.space;
    let dim = model.dim();
    let mut acc: f64 = 0.0;
    for i in 0..dim {
        let ki = sp.mode_of(i);
        for j in 0..dim {
            let kj = sp.mode_of(j);
            if (ki > 0) != (kj > 0) && (ki.unsigned_abs() as usize > kmin || kj.unsigned_abs() as usize > kmin) {
                acc = acc.max(hm[(i, j)].abs());
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopspace::inner_hs;

    #[test]
    fn action_examples() {
        let sp = GalerkinSpace::new(1, 3);
        let h0 = TrigHamiltonian::zero(1);
        let x = FourierLoop::single_mode(sp, 1, &[1.0, 0.0]);
        assert!((action(&h0, &x) + PI).abs() < 1e-14);
        let y = FourierLoop::single_mode(sp, -1, &[1.0, 0.0]);
        assert!((action(&h0, &y) - PI).abs() < 1e-14);
        let h = TrigHamiltonian::cos_cos(0.01);
        let c = FourierLoop::constant(sp, &[0.0, 0.0]);
        assert!((action(&h, &c) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let sp = GalerkinSpace::new(1, 3);
        let h0 = TrigHamiltonian::zero(1);
        let x = FourierLoop::single_mode(sp, 1, &[0.3, -0.2]);
        let g = gradient(&h0, &x);
        assert_eq!(g.coeff(1), &[-0.3, 0.2]);
        let h = TrigHamiltonian::cos_cos(0.01);
        let c = FourierLoop::constant(sp, &[0.5, 0.0]);
        assert!(gradient(&h, &c).to_vec().iter().all(|z| z.abs() < 1e-15));
    }

    #[test]
    fn hessian_examples() {
        let sp = GalerkinSpace::new(1, 3);
        let h0 = TrigHamiltonian::zero(1);
        let hm = hessian(&h0, &FourierLoop::single_mode(sp, 2, &[0.1, 0.4]));
        for i in 0..sp.dim_total() {
            let k = sp.mode_of(i);
            assert_eq!(hm.matrix[(i, i)], -(k.signum() as f64));
        }
        let eps = 0.01;
        let lam = 4.0 * PI * PI * eps;
        let h = TrigHamiltonian::cos_cos(eps);
        let hm = hessian(&h, &FourierLoop::constant(sp, &[0.5, 0.5]));
        assert!(hm.symmetry_defect() < 1e-12);
        let mut want: Vec<f64> = sp
            .modes()
            .flat_map(|k| {
                let e = if k == 0 { lam } else { -(k.signum() as f64) + lam / (2.0 * PI * k.abs() as f64) };
                [e, e]
            })
            .collect();
        want.sort_by(f64::total_cmp);
        let got = hm.eigenvalues();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_indices_of_cos_cos() {
        let eps = 0.01;
        let h = TrigHamiltonian::cos_cos(eps);
        for (p, want) in [([0.0, 0.0], 1), ([0.5, 0.0], 0), ([0.0, 0.5], 0), ([0.5, 0.5], -1)] {
            let samples = vec![p.to_vec(); 64];
            for nn in [2, 4, 8] {
                let sp = GalerkinSpace::new(1, nn);
                assert_eq!(relative_index(&h, &samples, sp, 1e-8).unwrap(), want);
                let model = LoopModel::new(&h, sp);
                let v = FourierLoop::constant(sp, &p).to_vec();
                assert_eq!(relative_dimension_by_projections(&model, &v), want);
            }
        }
    }

    #[test]
    fn truncation_guard() {
        // lambda = 9 pi: modes k = 1..4 flip, so N = 2 and N = 4 disagree.
        let a = 9.0 / (4.0 * PI);
        let h = TrigHamiltonian::cos_cos(a);
        let samples = vec![vec![0.5, 0.5]; 64];
        let r = relative_index(&h, &samples, GalerkinSpace::new(1, 2), 1e-8);
        assert!(matches!(r, Err(Error::Truncation(_))), "{r:?}");
        assert_eq!(relative_index(&h, &samples, GalerkinSpace::new(1, 6), 1e-8).unwrap(), -9);
    }

    #[test]
    fn adjointness_of_jstar() {
        let sp = GalerkinSpace::new(1, 3);
        let mut x = FourierLoop::single_mode(sp, 2, &[0.3, 0.1]);
        x.coeff_mut(-1).copy_from_slice(&[0.7, -0.2]);
        let mut y = FourierLoop::single_mode(sp, -1, &[0.5, 0.5]);
        y.coeff_mut(2).copy_from_slice(&[-1.0, 0.25]);
        y.base = vec![0.2, 0.4];
        x.base = vec![0.1, 0.9];
        let lhs = inner_hs(&y.jstar(), &x, 0.5).unwrap();
        let rhs = inner_hs(&y, &x, 0.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
    }
}

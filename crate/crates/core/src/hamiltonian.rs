//! Trigonometric Hamiltonians `H(t,x) = sum a cos(2 pi m.x + phi) cos(2 pi l t + psi)`,
//! their exact derivatives, RK4 time-1 maps and monodromy paths.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One term of a trigonometric Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub a: f64,
    pub m: Vec<i64>,
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub l: i64,
    #[serde(default)]
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigHamiltonian {
    pub n: usize,
    pub terms: Vec<TrigTerm>,
}

/// `J0` as a dense matrix.
pub fn j0(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

impl TrigHamiltonian {
    pub fn new(n: usize, terms: Vec<TrigTerm>) -> Result<Self> {
        let h = Self { n, terms };
        h.validate()?;
        Ok(h)
    }

    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    /// `eps (cos 2 pi q + cos 2 pi p)` on `T^2`.
    pub fn cos_cos(eps: f64) -> Self {
        Self {
            n: 1,
            terms: vec![
                TrigTerm { a: eps, m: vec![1, 0], phi: 0.0, l: 0, psi: 0.0 },
                TrigTerm { a: eps, m: vec![0, 1], phi: 0.0, l: 0, psi: 0.0 },
            ],
        }
    }

    /// `cos_cos(eps)` plus `delta cos 2 pi q cos 2 pi t`.
    pub fn cos_cos_forced(eps: f64, delta: f64) -> Self {
        let mut h = Self::cos_cos(eps);
        h.terms.push(TrigTerm { a: delta, m: vec![1, 0], phi: 0.0, l: 1, psi: 0.0 });
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("Hamiltonian needs n >= 1".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.m.len() != 2 * self.n {
                return Err(Error::Config(format!(
                    "term {i}: spatial frequency has length {}, expected {}",
                    t.m.len(),
                    2 * self.n
                )));
            }
            if !(t.a.is_finite() && t.phi.is_finite() && t.psi.is_finite()) {
                return Err(Error::Config(format!("term {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn is_autonomous(&self) -> bool {
        self.terms.iter().all(|t| t.l == 0)
    }

    /// Time average over one period.
    pub fn time_average(&self) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|t| t.l == 0)
                .map(|t| TrigTerm { a: t.a * t.psi.cos(), m: t.m.clone(), phi: t.phi, l: 0, psi: 0.0 })
                .collect(),
        }
    }

    #[inline]
    fn phases(&self, term: &TrigTerm, t: f64, x: &[f64]) -> (f64, f64) {
        let mx: f64 = term.m.iter().zip(x).map(|(&m, &xi)| m as f64 * xi).sum();
        let theta = 2.0 * PI * mx + term.phi;
        let tau = 2.0 * PI * term.l as f64 * t + term.psi;
        (theta, tau)
    }

    pub fn eval_h(&self, t: f64, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let (th, ta) = self.phases(term, t, x);
                term.a * th.cos() * ta.cos()
            })
            .sum()
    }

    pub fn grad_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let (th, ta) = self.phases(term, t, x);
            let c = -term.a * 2.0 * PI * th.sin() * ta.cos();
            for (o, &m) in out.iter_mut().zip(&term.m) {
                *o += c * m as f64;
            }
        }
    }

    pub fn grad_h(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; 2 * self.n];
        self.grad_into(t, x, &mut g);
        g
    }

    /// Hessian, row-major `2n x 2n`.
    pub fn hess_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = 2 * self.n;
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let (th, ta) = self.phases(term, t, x);
            let c = -term.a * 4.0 * PI * PI * th.cos() * ta.cos();
            for i in 0..d {
                if term.m[i] == 0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += c * (term.m[i] * term.m[j]) as f64;
                }
            }
        }
    }

    pub fn hess_h(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let d = 2 * self.n;
        let mut h = vec![0.0; d * d];
        self.hess_into(t, x, &mut h);
        DMatrix::from_row_slice(d, d, &h)
    }

    /// `X_H = J0 grad H`.
    pub fn vector_field_xh(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let g = self.grad_h(t, x);
        let mut out = vec![0.0; g.len()];
        crate::loopspace::apply_j(&g, &mut out);
        out
    }

    /// Joint RK4 integration of the orbit and its linearization over `[0,1]`.
    ///
    /// Returns the point and linearization at every step, `steps + 1` entries.
    pub fn integrate_with_variation(&self, p: &[f64], steps: usize) -> Vec<(Vec<f64>, DMatrix<f64>)> {
        let d = 2 * self.n;
        let h = 1.0 / steps as f64;
        let jm = j0(self.n);
        let rhs = |t: f64, z: &[f64], psi: &DMatrix<f64>| -> (Vec<f64>, DMatrix<f64>) {
            let dz = self.vector_field_xh(t, z);
            let s = self.hess_h(t, z);
            (dz, &jm * s * psi)
        };
        let mut z = p.to_vec();
        let mut psi = DMatrix::<f64>::identity(d, d);
        let mut out = Vec::with_capacity(steps + 1);
        out.push((z.clone(), psi.clone()));
        for i in 0..steps {
            let t = i as f64 * h;
            let (k1, l1) = rhs(t, &z, &psi);
            let z2: Vec<f64> = z.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let (k2, l2) = rhs(t + 0.5 * h, &z2, &(&psi + &l1 * (0.5 * h)));
            let z3: Vec<f64> = z.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let (k3, l3) = rhs(t + 0.5 * h, &z3, &(&psi + &l2 * (0.5 * h)));
            let z4: Vec<f64> = z.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let (k4, l4) = rhs(t + h, &z4, &(&psi + &l3 * h));
            for i in 0..d {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            psi += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
            out.push((z.clone(), psi.clone()));
        }
        out
    }

    /// Time-1 map and its linearization (lifted to `R^{2n}`).
    pub fn flow_map(&self, p: &[f64], steps: usize) -> (Vec<f64>, DMatrix<f64>) {
        assert!(steps >= 16, "flow_map needs at least 16 steps");
        self.integrate_with_variation(p, steps).pop().expect("nonempty")
    }

    /// Monodromy path along the orbit through `x0`, with the orbit samples.
    pub fn monodromy(&self, x0: &[f64], steps: usize, tol_symp: f64) -> Result<(SymplecticPath, Vec<Vec<f64>>)> {
        let traj = self.integrate_with_variation(x0, steps);
        let h = 1.0 / steps as f64;
        let mut samples = Vec::with_capacity(traj.len());
        let mut pts = Vec::with_capacity(traj.len());
        for (i, (z, psi)) in traj.into_iter().enumerate() {
            samples.push((i as f64 * h, psi));
            pts.push(z);
        }
        let path = SymplecticPath { n: self.n, samples };
        let defect = path.symplectic_defect();
        if defect > tol_symp {
            return Err(Error::Integration(format!("symplecticity defect {defect:e} exceeds {tol_symp:e}")));
        }
        Ok((path, pts))
    }
}

/// Samples of a path of symplectic matrices on a uniform grid of `[0,1]`.
#[derive(Clone, Debug)]
pub struct SymplecticPath {
    pub n: usize,
    pub samples: Vec<(f64, DMatrix<f64>)>,
}

impl SymplecticPath {
    /// RK4 solution of `Psi' = J0 S(t) Psi`, `Psi(0) = I`.
    pub fn from_generator<F: Fn(f64) -> DMatrix<f64>>(n: usize, s: F, steps: usize) -> Self {
        let d = 2 * n;
        let jm = j0(n);
        let h = 1.0 / steps as f64;
        let mut psi = DMatrix::<f64>::identity(d, d);
        let mut samples = Vec::with_capacity(steps + 1);
        samples.push((0.0, psi.clone()));
        for i in 0..steps {
            let t = i as f64 * h;
            let a1 = &jm * s(t);
            let am = &jm * s(t + 0.5 * h);
            let a4 = &jm * s(t + h);
            let k1 = &a1 * &psi;
            let k2 = &am * (&psi + &k1 * (0.5 * h));
            let k3 = &am * (&psi + &k2 * (0.5 * h));
            let k4 = &a4 * (&psi + &k3 * h);
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            samples.push(((i + 1) as f64 * h, psi.clone()));
        }
        Self { n, samples }
    }

    pub fn end(&self) -> &DMatrix<f64> {
        &self.samples.last().expect("nonempty path").1
    }

    /// `max_i |Psi_i^T J0 Psi_i - J0|`.
    pub fn symplectic_defect(&self) -> f64 {
        let jm = j0(self.n);
        self.samples
            .iter()
            .map(|(_, p)| (p.transpose() * &jm * p - &jm).amax())
            .fold(0.0, f64::max)
    }

    /// `|det(I - Psi(1))|`.
    pub fn nondeg_margin(&self) -> f64 {
        let d = 2 * self.n;
        (DMatrix::<f64>::identity(d, d) - self.end()).determinant().abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(h: &TrigHamiltonian, t: f64, x: &[f64]) {
        let d = x.len();
        let g = h.grad_h(t, x);
        let hs = h.hess_h(t, x);
        let e = 1e-5;
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += e;
            xm[i] -= e;
            let fd = (h.eval_h(t, &xp) - h.eval_h(t, &xm)) / (2.0 * e);
            assert!((fd - g[i]).abs() < 1e-7, "grad {i}: {fd} vs {}", g[i]);
            let gp = h.grad_h(t, &xp);
            let gm = h.grad_h(t, &xm);
            for j in 0..d {
                let fd = (gp[j] - gm[j]) / (2.0 * e);
                assert!((fd - hs[(j, i)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cos_cos_values() {
        let eps = 0.01;
        let h = TrigHamiltonian::cos_cos(eps);
        assert!((h.eval_h(0.3, &[0.0, 0.0]) - 2.0 * eps).abs() < 1e-16);
        assert!(h.grad_h(0.3, &[0.0, 0.0]).iter().all(|g| g.abs() < 1e-16));
        let hs = h.hess_h(0.0, &[0.0, 0.0]);
        let want = -4.0 * PI * PI * eps;
        assert!((hs[(0, 0)] - want).abs() < 1e-14 && (hs[(1, 1)] - want).abs() < 1e-14);
        assert_eq!(hs[(0, 1)], 0.0);
        let hs = h.hess_h(0.0, &[0.5, 0.0]);
        assert!(h.eval_h(0.0, &[0.5, 0.0]).abs() < 1e-16);
        assert!((hs[(0, 0)] + want).abs() < 1e-14 && (hs[(1, 1)] - want).abs() < 1e-14);
        fd_check(&h, 0.2, &[0.13, 0.71]);
        fd_check(&TrigHamiltonian::cos_cos_forced(0.05, 0.02), 0.37, &[0.4, 0.9]);
    }

    #[test]
    fn vector_field_example() {
        let h = TrigHamiltonian {
            n: 1,
            terms: vec![TrigTerm { a: 0.01, m: vec![1, 0], phi: 0.0, l: 0, psi: 0.0 }],
        };
        let g = h.grad_h(0.0, &[0.25, 0.0]);
        assert!((g[0] + 2.0 * PI * 0.01).abs() < 1e-15 && g[1].abs() < 1e-15);
        let xh = h.vector_field_xh(0.0, &[0.25, 0.0]);
        assert!(xh[0].abs() < 1e-15 && (xh[1] - 2.0 * PI * 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_hamiltonian_flow() {
        let h = TrigHamiltonian::zero(1);
        let (p, psi) = h.flow_map(&[0.3, 0.4], 16);
        assert_eq!(p, vec![0.3, 0.4]);
        assert_eq!(psi, DMatrix::identity(2, 2));
    }

    #[test]
    fn flow_at_critical_point_matches_exponential() {
        let eps = 0.01;
        let h = TrigHamiltonian::cos_cos(eps);
        let (p, psi) = h.flow_map(&[0.5, 0.5], 128);
        assert_eq!(p, vec![0.5, 0.5]);
        let lam = 4.0 * PI * PI * eps;
        // exp(J0 lam) = cos lam I + sin lam J0
        let want = DMatrix::<f64>::identity(2, 2) * lam.cos() + j0(1) * lam.sin();
        assert!((psi - want).amax() < 1e-10);
    }
}

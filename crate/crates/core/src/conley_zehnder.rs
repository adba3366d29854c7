//! Conley–Zehnder index of nondegenerate symplectic paths.
//!
//! The index is the intersection number of the graph of `Psi(t)` with the
//! diagonal in `(R^{4n}, (-w0) + w0)`. Both Lagrangians are pushed to unitary
//! frames; the squared determinant of the graph frame gives a continuous phase
//! whose total winding, corrected by the principal phases of the endpoint
//! Souriau matrix, counts eigenvalue crossings through `1`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hamiltonian::SymplecticPath;

/// Orientation constant fixing the normalization `mu(exp(J0 lambda t)) = -n`
/// for `lambda` in `(0, 2 pi)`.
const ORIENTATION: i64 = -1;

/// Maximum number of grid doublings.
pub const MAX_REFINE: usize = 12;

type C64 = Complex<f64>;

/// Complex image of a frame `Z = [A; B]` (`4n x 2n`) under
/// `(a, b) -> (a_q + i a_p, b_q - i b_p)`.
fn complexify(z: &DMatrix<f64>, n: usize) -> DMatrix<C64> {
    let cols = z.ncols();
    DMatrix::from_fn(2 * n, cols, |r, j| {
        if r < n {
            C64::new(z[(r, j)], z[(n + r, j)])
        } else {
            let rr = r - n;
            C64::new(z[(2 * n + rr, j)], -z[(3 * n + rr, j)])
        }
    })
}

fn graph_frame(psi: &DMatrix<f64>) -> DMatrix<f64> {
    let d = psi.nrows();
    let mut z = DMatrix::zeros(2 * d, d);
    z.view_mut((0, 0), (d, d)).copy_from(&DMatrix::<f64>::identity(d, d));
    z.view_mut((d, 0), (d, d)).copy_from(psi);
    z
}

/// Phase of the squared determinant of the graph frame.
fn frame_phase(psi: &DMatrix<f64>, n: usize) -> f64 {
    let det = complexify(&graph_frame(psi), n).determinant();
    2.0 * det.arg()
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI { r - 2.0 * PI } else { r }
}

/// Total continuous phase change along the samples, or `None` if some
/// increment reaches a quarter turn.
fn winding(samples: &[DMatrix<f64>], n: usize) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut bad = Vec::new();
    let mut prev = frame_phase(&samples[0], n);
    for (i, s) in samples.iter().enumerate().skip(1) {
        let ph = frame_phase(s, n);
        let inc = wrap(ph - prev);
        if inc.abs() >= 0.5 * PI {
            bad.push(i - 1);
        }
        total += inc;
        prev = ph;
    }
    (total, bad)
}

/// Sum of principal arguments of the eigenvalues of `-B`, where `B` is the
/// Souriau matrix of the endpoint graph relative to the diagonal.
fn endpoint_correction(psi: &DMatrix<f64>, n: usize) -> f64 {
    let d = 2 * n;
    let q = graph_frame(psi).qr().q();
    let ul = complexify(&q, n);
    let mut diag = DMatrix::zeros(2 * d, d);
    let s = 1.0 / 2f64.sqrt();
    for i in 0..d {
        diag[(i, i)] = s;
        diag[(d + i, i)] = s;
    }
    let ud = complexify(&diag, n);
    let a = ud.adjoint() * ul;
    let b = &a * a.transpose();
    let x = b.map(|c| c.re);
    let y = b.map(|c| c.im);
    let xs = (&x + x.transpose()) * 0.5;
    let ys = (&y + y.transpose()) * 0.5;
    // X and Y commute; a generic combination diagonalizes both.
    let mix = &xs + &ys * 0.577_215_664_901_532_9;
    let eig = SymmetricEigen::new(mix);
    let mut sum = 0.0;
    for j in 0..d {
        let v = eig.eigenvectors.column(j);
        let re = (v.transpose() * &xs * v)[(0, 0)];
        let im = (v.transpose() * &ys * v)[(0, 0)];
        sum += C64::new(-re, -im).arg();
    }
    sum
}

fn cayley_mid(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let fallback = || (a + b) * 0.5;
    let Some(ainv) = a.clone().try_inverse() else { return fallback() };
    let m = &ainv * b;
    let Some(pinv) = (&m + &id).try_inverse() else { return fallback() };
    let c = (&m - &id) * pinv * 0.5;
    match (&id - &c).try_inverse() {
        Some(inv) => a * inv * (&id + &c),
        None => fallback(),
    }
}

fn index_from_samples(samples: &[DMatrix<f64>], n: usize) -> Result<Option<i64>> {
    let (total, bad) = winding(samples, n);
    if !bad.is_empty() {
        return Ok(None);
    }
    let corr = endpoint_correction(samples.last().expect("nonempty"), n);
    let raw = (total - corr) / (2.0 * PI);
    let r = raw.round();
    if (raw - r).abs() > 0.1 {
        return Err(Error::Resolution(format!("non-integral crossing count {raw}")));
    }
    Ok(Some(ORIENTATION * r as i64))
}

fn check_endpoint(psi: &DMatrix<f64>, tol_deg: f64) -> Result<()> {
    let d = psi.nrows();
    let margin = (DMatrix::<f64>::identity(d, d) - psi).determinant().abs();
    if margin <= tol_deg {
        return Err(Error::DegenerateEndpoint(margin));
    }
    Ok(())
}

/// Index of a sampled path, refining by symplectic midpoint insertion.
pub fn cz_index(path: &SymplecticPath, tol_deg: f64) -> Result<i64> {
    check_endpoint(path.end(), tol_deg)?;
    let mut samples: Vec<DMatrix<f64>> = path.samples.iter().map(|(_, m)| m.clone()).collect();
    for _ in 0..=MAX_REFINE {
        if let Some(mu) = index_from_samples(&samples, path.n)? {
            return Ok(mu);
        }
        let mut finer = Vec::with_capacity(2 * samples.len());
        for w in samples.windows(2) {
            finer.push(w[0].clone());
            finer.push(cayley_mid(&w[0], &w[1]));
        }
        finer.push(samples.last().expect("nonempty").clone());
        samples = finer;
    }
    Err(Error::Resolution(format!("winding unresolved after {MAX_REFINE} doublings")))
}

/// Index of a path given by a generator producing the path at any step count.
pub fn cz_index_generated<G>(generate: G, steps: usize, tol_deg: f64) -> Result<i64>
where
    G: Fn(usize) -> SymplecticPath,
{
    let mut steps = steps.max(16);
    let first = generate(steps);
    check_endpoint(first.end(), tol_deg)?;
    let mut path = first;
    for _ in 0..=MAX_REFINE {
        let samples: Vec<DMatrix<f64>> = path.samples.iter().map(|(_, m)| m.clone()).collect();
        if let Some(mu) = index_from_samples(&samples, path.n)? {
            return Ok(mu);
        }
        steps *= 2;
        path = generate(steps);
    }
    Err(Error::Resolution(format!("winding unresolved after {MAX_REFINE} doublings")))
}

/// Path `exp(J0 S t)` for a constant symmetric generator `S`.
pub fn constant_generator_path(s: &DMatrix<f64>, steps: usize) -> SymplecticPath {
    let n = s.nrows() / 2;
    let sc = s.clone();
    SymplecticPath::from_generator(n, move |_| sc.clone(), steps)
}

/// Closed form of the diagonal family `exp(J0 lambda t)`.
pub fn czdiag(lambda: f64, n: usize) -> i64 {
    -2 * n as i64 * (lambda / (2.0 * PI)).floor() as i64 - n as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::j0;

    fn diag_path(lambda: f64, n: usize, steps: usize) -> SymplecticPath {
        constant_generator_path(&(DMatrix::<f64>::identity(2 * n, 2 * n) * lambda), steps)
    }

    #[test]
    fn diagonal_examples() {
        assert_eq!(cz_index(&diag_path(PI, 1, 64), 1e-6).unwrap(), -1);
        assert_eq!(cz_index(&diag_path(3.0 * PI, 1, 64), 1e-6).unwrap(), -3);
        assert_eq!(cz_index(&diag_path(-PI, 1, 64), 1e-6).unwrap(), 1);
        assert_eq!(cz_index(&diag_path(0.3, 2, 64), 1e-6).unwrap(), -2);
    }

    #[test]
    fn coarse_grid_is_refined() {
        // 16 samples for eleven half-turns needs refinement.
        let p = diag_path(11.0 * PI, 1, 16);
        assert_eq!(cz_index(&p, 1e-6).unwrap(), czdiag(11.0 * PI, 1));
        let generate = |steps| diag_path(11.0 * PI, 1, steps);
        assert_eq!(cz_index_generated(generate, 16, 1e-6).unwrap(), czdiag(11.0 * PI, 1));
    }

    #[test]
    fn degenerate_endpoint() {
        let p = diag_path(2.0 * PI, 1, 256);
        assert!(matches!(cz_index(&p, 1e-6), Err(Error::DegenerateEndpoint(_))));
    }

    #[test]
    fn hyperbolic_is_zero() {
        let s = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, -0.4]);
        assert_eq!(cz_index(&constant_generator_path(&s, 64), 1e-6).unwrap(), 0);
    }

    #[test]
    fn cayley_midpoint_is_symplectic() {
        let j = j0(1);
        let rot = |a: f64| DMatrix::<f64>::identity(2, 2) * a.cos() + &j * a.sin();
        let m = cayley_mid(&rot(0.7), &rot(1.9));
        assert!((m.transpose() * &j * &m - &j).amax() < 1e-12);
    }
}

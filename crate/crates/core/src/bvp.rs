//! Hermite-Simpson collocation on chains of `s`-grids, with a
//! minimum-norm Newton solver built on banded normal equations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Right-hand side `u' = f(u)` with its Jacobian.
pub trait Field: Sync {
    fn eval(&self, u: &[f64]) -> Vec<f64>;
    fn jac(&self, u: &[f64]) -> DMatrix<f64>;
}

/// Constant linear field `u' = A u`.
pub struct LinearField(pub DMatrix<f64>);

impl Field for LinearField {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(u)).as_slice().to_vec()
    }
    fn jac(&self, _u: &[f64]) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// A uniform grid carrying one field.
pub struct Piece<'a> {
    pub field: &'a dyn Field,
    pub s0: f64,
    pub s1: f64,
    pub nodes: usize,
}

impl Piece<'_> {
    pub fn h(&self) -> f64 {
        (self.s1 - self.s0) / (self.nodes - 1) as f64
    }
}

pub type ScalarFn<'a> = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync + 'a>;

pub enum Constraint<'a> {
    /// `P (u_node - target) = 0`.
    Affine { node: usize, p: DMatrix<f64>, target: Vec<f64> },
    /// `u_a - u_b = 0` for adjacent global nodes.
    Match { a: usize, b: usize },
    /// `g(u_node) = 0`, with `g` returning value and gradient.
    Scalar { node: usize, g: ScalarFn<'a> },
}

pub struct Bvp<'a> {
    pub dim: usize,
    pub pieces: Vec<Piece<'a>>,
    pub constraints: Vec<Constraint<'a>>,
}

/// One sparse row: dense values on the contiguous columns `c0..c0+vals.len()`.
#[derive(Clone, Debug)]
pub struct Row {
    pub c0: usize,
    pub vals: Vec<f64>,
}

impl Row {
    fn end(&self) -> usize {
        self.c0 + self.vals.len()
    }
}

impl<'a> Bvp<'a> {
    pub fn nodes(&self) -> usize {
        self.pieces.iter().map(|p| p.nodes).sum()
    }

    pub fn unknowns(&self) -> usize {
        self.nodes() * self.dim
    }

    /// Global index of the first node of each piece.
    pub fn piece_offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.pieces.len());
        let mut acc = 0;
        for p in &self.pieces {
            o.push(acc);
            acc += p.nodes;
        }
        o
    }

    /// Residual and Jacobian rows at `u` (all nodes concatenated).
    pub fn assemble(&self, u: &[f64]) -> (Vec<Row>, Vec<f64>) {
        let d = self.dim;
        let offs = self.piece_offsets();
        let mut keyed: Vec<(usize, usize, Row, f64)> = Vec::new();
        for (pi, piece) in self.pieces.iter().enumerate() {
            let h = piece.h();
            let base = offs[pi];
            let node = |i: usize| &u[(base + i) * d..(base + i + 1) * d];
            let evals: Vec<(Vec<f64>, DMatrix<f64>)> = (0..piece.nodes)
                .into_par_iter()
                .map(|i| (piece.field.eval(node(i)), piece.field.jac(node(i))))
                .collect();
            let intervals: Vec<Vec<(Row, f64)>> = (0..piece.nodes - 1)
                .into_par_iter()
                .map(|i| {
                    let (u0, u1) = (node(i), node(i + 1));
                    let (f0, j0) = &evals[i];
                    let (f1, j1) = &evals[i + 1];
                    let um: Vec<f64> = (0..d).map(|c| 0.5 * (u0[c] + u1[c]) + h / 8.0 * (f0[c] - f1[c])).collect();
                    let fm = piece.field.eval(&um);
                    let jm = piece.field.jac(&um);
                    let id = DMatrix::<f64>::identity(d, d);
                    let a0 = -&id / h - (j0 + &jm * 4.0 * (&id * 0.5 + j0 * (h / 8.0))) / 6.0;
                    let a1 = &id / h - (&jm * 4.0 * (&id * 0.5 - j1 * (h / 8.0)) + j1) / 6.0;
                    (0..d)
                        .map(|r| {
                            let mut vals = Vec::with_capacity(2 * d);
                            vals.extend(a0.row(r).iter());
                            vals.extend(a1.row(r).iter());
                            let res = (u1[r] - u0[r]) / h - (f0[r] + 4.0 * fm[r] + f1[r]) / 6.0;
                            (Row { c0: (base + i) * d, vals }, res)
                        })
                        .collect()
                })
                .collect();
            for (i, rows) in intervals.into_iter().enumerate() {
                for (r, res) in rows {
                    keyed.push((base + i, 1, r, res));
                }
            }
        }
        for c in &self.constraints {
            match c {
                Constraint::Affine { node, p, target } => {
                    let x = &u[node * d..(node + 1) * d];
                    for r in 0..p.nrows() {
                        let res: f64 = (0..d).map(|j| p[(r, j)] * (x[j] - target[j])).sum();
                        keyed.push((*node, 0, Row { c0: node * d, vals: p.row(r).iter().copied().collect() }, res));
                    }
                }
                Constraint::Match { a, b } => {
                    assert_eq!(a.abs_diff(*b), 1, "matched nodes must be adjacent");
                    let lo = (*a).min(*b);
                    for r in 0..d {
                        let mut vals = vec![0.0; 2 * d];
                        let (ia, ib) = if *a < *b { (r, d + r) } else { (d + r, r) };
                        vals[ia] = 1.0;
                        vals[ib] = -1.0;
                        let res = u[a * d + r] - u[b * d + r];
                        keyed.push((lo, 2, Row { c0: lo * d, vals }, res));
                    }
                }
                Constraint::Scalar { node, g } => {
                    let (val, grad) = g(&u[node * d..(node + 1) * d]);
                    keyed.push((*node, 0, Row { c0: node * d, vals: grad }, val));
                }
            }
        }
        keyed.sort_by_key(|a| (a.2.c0, a.1, a.0));
        let mut rows = Vec::with_capacity(keyed.len());
        let mut res = Vec::with_capacity(keyed.len());
        for (_, _, r, v) in keyed {
            rows.push(r);
            res.push(v);
        }
        (rows, res)
    }
}

/// Banded symmetric positive definite matrix `J J^T` and its Cholesky factor.
struct BandedNormal {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + (i - j)]` for `j` in `i - bw..=i`.
    l: Vec<f64>,
}

impl BandedNormal {
    fn factor(rows: &[Row]) -> Result<Self> {
        let n = rows.len();
        let mut bw = 0;
        for i in 0..n {
            let mut j = i + 1;
            while j < n && rows[j].c0 < rows[i].end() {
                j += 1;
            }
            bw = bw.max(j - 1 - i);
        }
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let (ri, rj) = (&rows[i], &rows[j]);
                let lo = ri.c0.max(rj.c0);
                let hi = ri.end().min(rj.end());
                let mut s = 0.0;
                for c in lo..hi {
                    s += ri.vals[c - ri.c0] * rj.vals[c - rj.c0];
                }
                l[i * w + (i - j)] = s;
            }
        }
        let scale = (0..n).map(|i| l[i * w]).fold(0.0, f64::max).max(1e-300);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = l[i * w + (i - j)];
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if s <= 1e-14 * scale {
                        return Err(Error::Resolution(format!(
                            "Jacobian numerically singular at row {i}; a small perturbation of the Hamiltonian may restore transversality"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let w = self.bw + 1;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + 1 + self.bw).min(self.n) {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}

fn jt_times(rows: &[Row], y: &[f64], ncols: usize) -> Vec<f64> {
    let mut out = vec![0.0; ncols];
    for (r, &yi) in rows.iter().zip(y) {
        for (k, v) in r.vals.iter().enumerate() {
            out[r.c0 + k] += v * yi;
        }
    }
    out
}

fn j_times(rows: &[Row], x: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.vals.iter().enumerate().map(|(k, v)| v * x[r.c0 + k]).sum()).collect()
}

/// Minimum-norm solution of `J x = b` (exact when `J` is square and regular).
pub fn min_norm_solve(rows: &[Row], b: &[f64], ncols: usize) -> Result<Vec<f64>> {
    let nf = BandedNormal::factor(rows)?;
    let mut y = nf.solve(b);
    // one step of iterative refinement
    let x = jt_times(rows, &y, ncols);
    let r: Vec<f64> = b.iter().zip(j_times(rows, &x)).map(|(a, c)| a - c).collect();
    let dy = nf.solve(&r);
    for (a, c) in y.iter_mut().zip(dy) {
        *a += c;
    }
    Ok(jt_times(rows, &y, ncols))
}

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Sup norm of the residual after each iteration.
    pub history: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped minimum-norm Newton iteration; converged when the residual sup
/// norm falls below `tol`.
pub fn newton(bvp: &Bvp<'_>, u: &mut Vec<f64>, tol: f64, max_it: usize) -> Result<NewtonReport> {
    let ncols = bvp.unknowns();
    let (mut rows, mut res) = bvp.assemble(u);
    let mut history = vec![sup(&res)];
    for it in 0..max_it {
        if sup(&res) < tol {
            return Ok(NewtonReport { iterations: it, history });
        }
        let step = min_norm_solve(&rows, &res, ncols)?;
        let n0 = l2(&res);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            let (r2, res2) = bvp.assemble(&trial);
            if l2(&res2) < (1.0 - 1e-4 * alpha) * n0 || sup(&res2) < tol {
                *u = trial;
                rows = r2;
                res = res2;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(sup(&res));
        if !accepted {
            return Err(Error::NoSolution(format!("line search failed at residual {:e}", sup(&res))));
        }
    }
    if sup(&res) < tol {
        Ok(NewtonReport { iterations: max_it, history })
    } else {
        Err(Error::NoSolution(format!("Newton stalled at residual {:e}", sup(&res))))
    }
}

/// Smallest singular value of a matrix with full row rank, by inverse
/// iteration on `J J^T`.
pub fn min_singular_value(rows: &[Row]) -> Result<f64> {
    let nf = BandedNormal::factor(rows)?;
    let n = rows.len();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let nx = l2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let y = nf.solve(&x);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let next = 1.0 / rayleigh;
        x = y;
        if (next - lambda).abs() <= 1e-12 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Dense copy of the Jacobian rows.
pub fn dense(rows: &[Row], ncols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        for (k, v) in r.vals.iter().enumerate() {
            m[(i, r.c0 + k)] = *v;
        }
    }
    m
}

/// Singular values of a sparse matrix, computed per connected block of
/// rows and columns. Returns `(rows, cols, singular values)` per block.
pub fn block_singular_values(rows: &[Row], ncols: usize) -> Vec<(usize, usize, Vec<f64>)> {
    let mut parent: Vec<usize> = (0..ncols).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for r in rows {
        let nz: Vec<usize> = r.vals.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| r.c0 + k).collect();
        for w in nz.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..ncols).map(|c| find(&mut parent, c)).collect();
    let mut comps: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for (c, &r) in roots.iter().enumerate() {
        comps.entry(r).or_default().1.push(c);
    }
    for (i, r) in rows.iter().enumerate() {
        let nz = r.vals.iter().position(|v| *v != 0.0);
        // empty rows form their own block
        let key = nz.map_or(usize::MAX - i, |k| roots[r.c0 + k]);
        comps.entry(key).or_default().0.push(i);
    }
    comps
        .into_values()
        .map(|(ri, ci)| {
            let col_pos: std::collections::HashMap<usize, usize> = ci.iter().enumerate().map(|(p, &c)| (c, p)).collect();
            let mut m = DMatrix::zeros(ri.len(), ci.len());
            for (a, &i) in ri.iter().enumerate() {
                let r = &rows[i];
                for (k, v) in r.vals.iter().enumerate() {
                    if let Some(&b) = col_pos.get(&(r.c0 + k)) {
                        m[(a, b)] = *v;
                    }
                }
            }
            let sv = if m.nrows() == 0 || m.ncols() == 0 {
                Vec::new()
            } else {
                m.svd(false, false).singular_values.iter().copied().collect()
            };
            (ri.len(), ci.len(), sv)
        })
        .collect()
}

/// Rows selecting the stable (`stable = true`) or unstable eigen-coordinates of
/// `W^{-1} A_sym W` with `A_sym` symmetric and `W = diag(w)^{-1/2}`, i.e. of
/// the operator `diag(w)^{-1} A` when `A_sym = diag(w)^{-1/2} A diag(w)^{-1/2}`.
pub fn spectral_rows(a_sym: &DMatrix<f64>, weights: &[f64], stable: bool, gap: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a_sym.clone());
    let mut sel = Vec::new();
    for (j, &e) in eig.eigenvalues.iter().enumerate() {
        if e.abs() <= gap {
            return Err(Error::SpectralGap(e));
        }
        if (e < 0.0) == stable {
            sel.push(j);
        }
    }
    let d = a_sym.nrows();
    Ok(DMatrix::from_fn(sel.len(), d, |r, c| eig.eigenvectors[(c, sel[r])] * weights[c].sqrt()))
}

//! Floer cylinders in Fourier modes: residual, collocation solver, energy,
//! connection counts, the Floer complex and the model-operator diagnostics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::action_gradient::{CriticalLoop, LoopModel};
use crate::bvp::{self, Bvp, Constraint, Field, LinearField, NewtonReport, Piece};
use crate::chain_algebra::GradedComplex;
use crate::error::{Error, Result};
use crate::loopspace::{FourierLoop, GalerkinSpace, half_weights};
use crate::morse_complex::{ConnectionCount, MorseTrajectory};
use crate::numfmt::{sig17, sig17_opt};

#[derive(Clone, Debug)]
pub struct FloerOptions {
    /// Half-length `L`; `None` picks `12 / delta` from the end spectra.
    pub half_length: Option<f64>,
    pub m_s: usize,
    pub tol_floer: f64,
    pub tol_asym: f64,
    pub tol_spec: f64,
    pub multistart: usize,
    pub seed: u64,
    pub max_newton: usize,
}

impl Default for FloerOptions {
    fn default() -> Self {
        Self {
            half_length: None,
            m_s: 256,
            tol_floer: 1e-8,
            tol_asym: 1e-6,
            tol_spec: 1e-8,
            multistart: 32,
            seed: 0,
            max_newton: 40,
        }
    }
}

/// Values of a cylinder on a uniform `s`-grid, one flat loop per node.
#[derive(Clone, Debug)]
pub struct CylinderGrid {
    pub space: GalerkinSpace,
    pub s0: f64,
    pub s1: f64,
    /// Flat coordinates per node, base lifted continuously.
    pub values: Vec<Vec<f64>>,
    pub minus: Option<usize>,
    pub plus: Option<usize>,
}

impl CylinderGrid {
    pub fn m_s(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        (self.s1 - self.s0) / (self.m_s() - 1) as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.s0 + i as f64 * self.h()
    }

    /// Constant cylinder at `v` over `[-l, l]`.
    pub fn constant(space: GalerkinSpace, v: &[f64], l: f64, m_s: usize) -> Self {
        Self { space, s0: -l, s1: l, values: vec![v.to_vec(); m_s], minus: None, plus: None }
    }

    /// Cylinder sampled from `f(s)` on `[s0, s1]`.
    pub fn from_fn(space: GalerkinSpace, s0: f64, s1: f64, m_s: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let h = (s1 - s0) / (m_s - 1) as f64;
        Self { space, s0, s1, values: (0..m_s).map(|i| f(s0 + i as f64 * h)).collect(), minus: None, plus: None }
    }

    pub fn loops(&self) -> Vec<FourierLoop> {
        self.values.iter().map(|v| FourierLoop::from_vec(self.space, v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_s() < 16 {
            return Err(Error::Config(format!("cylinder grid needs at least 16 nodes, got {}", self.m_s())));
        }
        if self.values.iter().any(|v| v.len() != self.space.dim_total()) {
            return Err(Error::Dimension("cylinder slice length".into()));
        }
        Ok(())
    }

    fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    fn with_flat(&self, u: &[f64]) -> Self {
        let d = self.space.dim_total();
        Self { values: u.chunks(d).map(|c| c.to_vec()).collect(), ..self.clone() }
    }

    fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

impl Serialize for CylinderGrid {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        #[derive(Serialize)]
        struct Bound(#[serde(serialize_with = "sig17")] f64);
        let mut st = ser.serialize_struct("CylinderGrid", 8)?;
        st.serialize_field("n", &self.space.n)?;
        st.serialize_field("N", &self.space.big_n)?;
        st.serialize_field("s0", &Bound(self.s0))?;
        st.serialize_field("s1", &Bound(self.s1))?;
        st.serialize_field("M_s", &self.m_s())?;
        st.serialize_field("minus", &self.minus)?;
        st.serialize_field("plus", &self.plus)?;
        st.serialize_field("values", &self.loops())?;
        st.end()
    }
}

/// Fourth-order finite-difference `d/ds` (one-sided at the ends).
pub fn ds(values: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let m = values.len();
    assert!(m >= 5, "need at least 5 nodes");
    let d = values[0].len();
    let comb = |c: &[(usize, f64)]| -> Vec<f64> {
        (0..d).map(|j| c.iter().map(|(i, w)| w * values[*i][j]).sum::<f64>() / (12.0 * h)).collect()
    };
    (0..m)
        .map(|i| match i {
            0 => comb(&[(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)]),
            1 => comb(&[(0, -3.0), (1, -10.0), (2, 18.0), (3, -6.0), (4, 1.0)]),
            _ if i == m - 2 => comb(&[(m - 1, 3.0), (m - 2, 10.0), (m - 3, -18.0), (m - 4, 6.0), (m - 5, -1.0)]),
            _ if i == m - 1 => comb(&[(m - 1, 25.0), (m - 2, -48.0), (m - 3, 36.0), (m - 4, -16.0), (m - 5, 3.0)]),
            _ => comb(&[(i - 2, 1.0), (i - 1, -8.0), (i + 1, 8.0), (i + 2, -1.0)]),
        })
        .collect()
}

/// Gregory quadrature weights, exact for cubics.
pub fn gregory_weights(m: usize, h: f64) -> Vec<f64> {
    assert!(m >= 6, "need at least 6 nodes");
    let mut w = vec![h; m];
    for (i, c) in [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0].iter().enumerate() {
        w[i] = c * h;
        w[m - 1 - i] = c * h;
    }
    w
}

/// `d_s u - F(u)` per node: the Floer operator in Fourier modes.
pub fn floer_residual(model: &LoopModel, u: &CylinderGrid) -> Vec<Vec<f64>> {
    let du = ds(&u.values, u.h());
    du.into_par_iter()
        .zip(u.values.par_iter())
        .map(|(d, v)| {
            let f = model.field_f(v);
            d.iter().zip(f).map(|(a, b)| a - b).collect()
        })
        .collect()
}

/// `1/2 int (|d_s u|^2 + |d_t u - X_H(u)|^2) ds`.
pub fn energy(model: &LoopModel, u: &CylinderGrid) -> f64 {
    let du = ds(&u.values, u.h());
    let w = gregory_weights(u.m_s(), u.h());
    let dens: Vec<f64> = u
        .values
        .par_iter()
        .zip(du.par_iter())
        .map(|(v, d)| {
            let f = model.field_f(v);
            0.5 * (d.iter().map(|x| x * x).sum::<f64>() + f.iter().map(|x| x * x).sum::<f64>())
        })
        .collect();
    dens.iter().zip(&w).map(|(a, b)| a * b).sum()
}

/// `int sum_{k != 0} |d_s u_k|^2 ds`.
pub fn t_mode_energy(u: &CylinderGrid) -> f64 {
    let du = ds(&u.values, u.h());
    let w = gregory_weights(u.m_s(), u.h());
    let o = u.space.offset(0);
    let b = u.space.block();
    du.iter()
        .zip(&w)
        .map(|(d, wi)| wi * d.iter().enumerate().filter(|(i, _)| !(o..o + b).contains(i)).map(|(_, x)| x * x).sum::<f64>())
        .sum()
}

/// Decay rate fitted to `log |d_s u(s)|` over the outer parts of both
/// halves; `None` if the derivative is below roundoff there.
pub fn tail_rate(u: &CylinderGrid) -> Option<f64> {
    let du = ds(&u.values, u.h());
    let norms: Vec<f64> = du.iter().map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let l = 0.5 * (u.s1 - u.s0);
    let mid = 0.5 * (u.s1 + u.s0);
    let fit = |right: bool| -> Option<f64> {
        let pts: Vec<(f64, f64)> = (0..u.m_s())
            .filter_map(|i| {
                let r = (u.s(i) - mid) * if right { 1.0 } else { -1.0 };
                (r >= 0.3 * l && r <= 0.8 * l && norms[i] > 1e-11).then(|| (r, norms[i].ln()))
            })
            .collect();
        if pts.len() < 4 {
            return None;
        }
        let np = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(-sxy / sxx)
    };
    match (fit(false), fit(true)) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

struct FloerField<'a>(&'a LoopModel);

impl Field for FloerField<'_> {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        self.0.field_f(u)
    }
    fn jac(&self, u: &[f64]) -> DMatrix<f64> {
        self.0.jac_f(u)
    }
}

/// Rows pinning `u(-L)` to the unstable side of `c_minus` and `u(L)` to the
/// stable side of `c_plus`.
fn end_rows(model: &LoopModel, c: &[f64], stable: bool, gap: f64) -> Result<DMatrix<f64>> {
    bvp::spectral_rows(&model.jac_f(c), &vec![1.0; model.dim()], stable, gap)
}

/// Smallest `|eigenvalue|` of `DF` at `c`.
pub fn spectral_gap(model: &LoopModel, c: &[f64]) -> f64 {
    nalgebra::SymmetricEigen::new(model.jac_f(c)).eigenvalues.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()))
}

/// Default half-length `12 / delta` for a pair of asymptotic loops.
pub fn default_half_length(model: &LoopModel, a: &[f64], b: &[f64]) -> f64 {
    12.0 / spectral_gap(model, a).min(spectral_gap(model, b))
}

/// Newton solve of the Floer equation from `guess` with ends pinned to the
/// lifted critical vectors `c_minus`, `c_plus`; the `s = 0` slice carries
/// the mean of the end actions unless the ends coincide.
pub fn solve_cylinder(
    model: &LoopModel,
    c_minus: &[f64],
    c_plus: &[f64],
    guess: &CylinderGrid,
    opts: &FloerOptions,
) -> Result<(CylinderGrid, NewtonReport)> {
    guess.validate()?;
    let field = FloerField(model);
    let m = guess.m_s();
    let mut constraints = vec![
        Constraint::Affine { node: 0, p: end_rows(model, c_minus, true, opts.tol_spec)?, target: c_minus.to_vec() },
        Constraint::Affine { node: m - 1, p: end_rows(model, c_plus, false, opts.tol_spec)?, target: c_plus.to_vec() },
    ];
    if c_minus != c_plus {
        let level = 0.5 * (model.action_vec(c_minus) + model.action_vec(c_plus));
        let node = (m - 1) / 2;
        constraints.push(Constraint::Scalar {
            node,
            g: Box::new(move |v: &[f64]| (model.action_vec(v) - level, model.field_f(v).iter().map(|x| -x).collect())),
        });
    }
    let problem = Bvp { dim: model.dim(), pieces: vec![Piece { field: &field, s0: guess.s0, s1: guess.s1, nodes: m }], constraints };
    let mut u = guess.flat();
    let report = bvp::newton(&problem, &mut u, opts.tol_floer, opts.max_newton)?;
    Ok((guess.with_flat(&u), report))
}

/// A converged cylinder with its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct FloerSolution {
    pub grid: CylinderGrid,
    #[serde(serialize_with = "sig17")]
    pub energy: f64,
    #[serde(serialize_with = "sig17")]
    pub action_drop: f64,
    #[serde(serialize_with = "sig17")]
    pub t_mode_energy: f64,
    #[serde(serialize_with = "sig17_opt")]
    pub tail_rate: Option<f64>,
    /// `sup_s |u_0(s) - x^-_0|` is within the endpoint box plus one.
    pub constant_part_bounded: bool,
    pub newton_iterations: usize,
    /// Found only by multistart.
    pub multistart_only: bool,
}

fn describe(model: &LoopModel, grid: CylinderGrid, c_minus: &[f64], c_plus: &[f64], report: &NewtonReport) -> FloerSolution {
    let o = model.space.offset(0);
    let b = model.space.block();
    let span = (0..b).map(|i| (c_plus[o + i] - c_minus[o + i]).abs()).fold(0.0, f64::max);
    let excursion = grid
        .values
        .iter()
        .flat_map(|v| (0..b).map(move |i| (v[o + i] - c_minus[o + i]).abs()))
        .fold(0.0, f64::max);
    FloerSolution {
        energy: energy(model, &grid),
        action_drop: model.action_vec(c_minus) - model.action_vec(c_plus),
        t_mode_energy: t_mode_energy(&grid),
        tail_rate: tail_rate(&grid),
        constant_part_bounded: excursion <= span + 1.0,
        newton_iterations: report.iterations,
        multistart_only: false,
        grid,
    }
}

/// Cylinder count between two generators with `mu(x) - mu(y) = 1`.
#[derive(Clone, Debug, Serialize)]
pub struct FloerCount {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub attempts: usize,
    pub converged: usize,
    pub warnings: Vec<String>,
    pub solutions: Vec<FloerSolution>,
}

impl FloerCount {
    pub fn parity(&self) -> bool {
        self.count % 2 == 1
    }
}

fn shift_base(model: &LoopModel, v: &mut [f64], shift: &[f64]) {
    let o = model.space.offset(0);
    for (i, s) in shift.iter().enumerate() {
        v[o + i] += s;
    }
}

fn base_shift(model: &LoopModel, from: &[f64], to: &[f64]) -> Vec<f64> {
    let o = model.space.offset(0);
    (0..model.space.block()).map(|i| (to[o + i] - from[o + i]).round()).collect()
}

/// Guess built from a connecting flow line, with `s = 0` where the action
/// crosses the mean of the end actions. Returns the guess and the lifted
/// target at `+infinity`.
fn guess_from_witness(
    model: &LoopModel,
    w: &MorseTrajectory,
    x: &CriticalLoop,
    y: &CriticalLoop,
    l: f64,
    m_s: usize,
) -> (CylinderGrid, Vec<f64>) {
    let back = base_shift(model, &x.vec, &w.states[0]);
    let neg: Vec<f64> = back.iter().map(|s| -s).collect();
    let level = 0.5 * (x.action + y.action);
    let i = w.actions.iter().position(|&a| a <= level).unwrap_or(w.actions.len() - 1);
    let t0 = w.times[i];
    let mut target = y.vec.clone();
    let last = w.states.last().expect("nonempty");
    let mut last_shifted = last.clone();
    shift_base(model, &mut last_shifted, &neg);
    let sh = base_shift(model, &y.vec, &last_shifted);
    shift_base(model, &mut target, &sh);
    let grid = CylinderGrid::from_fn(model.space, -l, l, m_s, |s| {
        let t = t0 + s;
        if t <= w.times[0] {
            x.vec.clone()
        } else if t >= w.flow_time {
            target.clone()
        } else {
            let mut v = w.at(t);
            shift_base(model, &mut v, &neg);
            v
        }
    });
    (grid, target)
}

/// Straight-line guess towards the translate of `y` given by `shift`.
fn straight_guess(model: &LoopModel, x: &[f64], y: &[f64], shift: &[f64], l: f64, m_s: usize) -> (CylinderGrid, Vec<f64>) {
    let mut target = y.to_vec();
    shift_base(model, &mut target, shift);
    let g = CylinderGrid::from_fn(model.space, -l, l, m_s, |s| {
        let w = 0.5 * (1.0 + (s / 3.0).tanh());
        x.iter().zip(&target).map(|(a, b)| a + w * (b - a)).collect()
    });
    (g, target)
}

fn perturb(model: &LoopModel, g: &CylinderGrid, rng: &mut ChaCha8Rng) -> CylinderGrid {
    let dim = model.dim();
    let amp = 0.05;
    let dir: Vec<f64> = (0..dim).map(|i| amp * rng.random_range(-1.0..1.0) / model.weights[i].sqrt()).collect();
    let shift = rng.random_range(-3.0..3.0);
    let width = rng.random_range(2.0..6.0);
    let mut out = g.clone();
    let h = g.h();
    for i in 1..g.m_s() - 1 {
        let s = g.s(i);
        let j = ((s - shift - g.s0) / h).round().clamp(0.0, (g.m_s() - 1) as f64) as usize;
        let bump = (-(s / width).powi(2)).exp();
        out.values[i] = g.values[j].iter().zip(&dir).map(|(a, d)| a + bump * d).collect();
    }
    out
}

/// Counts cylinders from `x` to `y`: continuation from every flow line in
/// `witnesses`, plus seeded multistart guesses.
pub fn count_floer(
    model: &LoopModel,
    x: &CriticalLoop,
    y: &CriticalLoop,
    witnesses: &[MorseTrajectory],
    opts: &FloerOptions,
) -> Result<FloerCount> {
    if x.mu - y.mu != 1 {
        return Err(Error::Dimension(format!("index difference {} between {} and {}", x.mu - y.mu, x.id, y.id)));
    }
    let mut out = FloerCount { from: x.id, to: y.id, count: 0, attempts: 0, converged: 0, warnings: Vec::new(), solutions: Vec::new() };
    if x.action <= y.action + 1e-12 {
        return Ok(out);
    }
    let l = opts.half_length.unwrap_or_else(|| default_half_length(model, &x.vec, &y.vec));
    let mut base: Vec<(CylinderGrid, Vec<f64>)> =
        witnesses.iter().map(|w| guess_from_witness(model, w, x, y, l, opts.m_s)).collect();
    let n_cont = base.len();
    if base.is_empty() {
        let b = model.space.block();
        for code in 0..3usize.pow(b as u32) {
            let mut c = code;
            let mut shift = base_shift(model, &x.vec, &y.vec);
            for s in shift.iter_mut() {
                *s = -(*s) + (c % 3) as f64 - 1.0;
                c /= 3;
            }
            base.push(straight_guess(model, &x.vec, &y.vec, &shift, l, opts.m_s));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((x.id as u64) << 32) ^ y.id as u64);
    let mut jobs: Vec<(bool, CylinderGrid, Vec<f64>)> =
        base.iter().take(n_cont).map(|(g, t)| (false, g.clone(), t.clone())).collect();
    for i in 0..opts.multistart {
        let (g, t) = &base[i % base.len()];
        jobs.push((true, perturb(model, g, &mut rng), t.clone()));
    }
    out.attempts = jobs.len();
    let results: Vec<(bool, Result<FloerSolution>)> = jobs
        .par_iter()
        .map(|(ms, g, t)| {
            let r = solve_cylinder(model, &x.vec, t, g, opts).map(|(grid, rep)| {
                let mut grid = grid;
                grid.minus = Some(x.id);
                grid.plus = Some(y.id);
                describe(model, grid, &x.vec, t, &rep)
            });
            (*ms, r)
        })
        .collect();
    let thresh = (10.0 * opts.tol_floer).max(1e-6);
    for (ms, r) in results {
        match r {
            Ok(mut sol) => {
                out.converged += 1;
                if out.solutions.iter().any(|s| s.grid.sup_distance(&sol.grid) < thresh) {
                    continue;
                }
                if ms && n_cont > 0 {
                    sol.multistart_only = true;
                    out.warnings.push(format!(
                        "multistart found a cylinder {} -> {} away from every continuation solution",
                        x.id, y.id
                    ));
                }
                if model.h.is_autonomous() && sol.t_mode_energy >= 1e-8 {
                    out.warnings.push(format!(
                        "cylinder {} -> {} has t-mode energy {:e}; the flow-line count may be incomplete",
                        x.id, y.id, sol.t_mode_energy
                    ));
                }
                out.solutions.push(sol);
            }
            Err(e) => log::debug!("cylinder {} -> {}: {e}", x.id, y.id),
        }
    }
    out.count = out.solutions.len();
    Ok(out)
}

/// The Floer complex graded by the Conley-Zehnder index.
pub fn floer_boundary(
    model: &LoopModel,
    crits: &[CriticalLoop],
    morse: &[ConnectionCount],
    opts: &FloerOptions,
) -> Result<(GradedComplex, Vec<FloerCount>)> {
    let mut complex = GradedComplex::from_generators(crits.iter().map(|c| (c.id, c.mu, c.action)));
    let pairs: Vec<(usize, usize)> = (0..crits.len())
        .flat_map(|i| (0..crits.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| crits[i].mu - crits[j].mu == 1)
        .collect();
    let empty: Vec<MorseTrajectory> = Vec::new();
    let counts = pairs
        .iter()
        .map(|&(i, j)| {
            let (x, y) = (&crits[i], &crits[j]);
            let w = morse.iter().find(|c| c.from == x.id && c.to == y.id).map_or(&empty, |c| &c.witnesses);
            count_floer(model, x, y, w, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    for c in &counts {
        complex.set_entry(c.from, c.to, c.parity())?;
    }
    Ok((complex, counts))
}

/// Kernel and cokernel of the coupled model operator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FredholmReport {
    pub dim_ker: usize,
    pub dim_coker: usize,
    pub index: i64,
}

/// Predicted index `-2n floor(a / 2pi) + 2n floor(b / 2pi)`.
pub fn predicted_index(n: usize, a: f64, b: f64) -> i64 {
    2 * n as i64 * ((b / (2.0 * PI)).floor() as i64 - (a / (2.0 * PI)).floor() as i64)
}

/// Linear Morse half-line `(-l, 0]` with slope `a`, coupled at `0` to the
/// half-cylinder `[0, l]` with slope `b`; decay is imposed at both far ends.
pub fn fredholm_diag(a: f64, b: f64, space: GalerkinSpace, l: f64, m_s: usize) -> Result<FredholmReport> {
    fredholm_diag_tol(a, b, space, l, m_s, 1e-6)
}

/// `fredholm_diag` with relative singular value threshold `sigma_rel`.
pub fn fredholm_diag_tol(
    a: f64,
    b: f64,
    space: GalerkinSpace,
    l: f64,
    m_s: usize,
    sigma_rel: f64,
) -> Result<FredholmReport> {
    for c in [a, b] {
        let r = c / (2.0 * PI);
        if (r - r.round()).abs() * 2.0 * PI <= 0.1 {
            return Err(Error::Config(format!("slope {c} is within 0.1 of 2 pi Z")));
        }
    }
    if m_s < 16 {
        return Err(Error::Config("M_s must be at least 16".into()));
    }
    let dim = space.dim_total();
    let w = half_weights(space);
    let twopik: Vec<f64> = (0..dim).map(|i| 2.0 * PI * space.mode_of(i) as f64).collect();
    let morse = DMatrix::from_fn(dim, dim, |i, j| if i == j { (twopik[i] - a) / w[i] } else { 0.0 });
    let floer = DMatrix::from_fn(dim, dim, |i, j| if i == j { twopik[i] - b } else { 0.0 });
    // diagonal, so it equals its symmetrized form
    let left = bvp::spectral_rows(&morse, &w, true, 0.0)?;
    let right = bvp::spectral_rows(&floer, &vec![1.0; dim], false, 0.0)?;
    let fm = LinearField(morse);
    let ff = LinearField(floer);
    let problem = Bvp {
        dim,
        pieces: vec![
            Piece { field: &fm, s0: -l, s1: 0.0, nodes: m_s },
            Piece { field: &ff, s0: 0.0, s1: l, nodes: m_s },
        ],
        constraints: vec![
            Constraint::Affine { node: 0, p: left, target: vec![0.0; dim] },
            Constraint::Match { a: m_s - 1, b: m_s },
            Constraint::Affine { node: 2 * m_s - 1, p: right, target: vec![0.0; dim] },
        ],
    };
    let (rows, _) = problem.assemble(&vec![0.0; problem.unknowns()]);
    let blocks = bvp::block_singular_values(&rows, problem.unknowns());
    rank_report(&blocks, sigma_rel)
}

/// Kernel/cokernel dimensions from per-block singular values with the
/// threshold `sigma_rel * sigma_max` and a gap of at least `1e3` around it.
pub fn rank_report(blocks: &[(usize, usize, Vec<f64>)], sigma_rel: f64) -> Result<FredholmReport> {
    let smax = blocks.iter().flat_map(|b| b.2.iter().copied()).fold(0.0, f64::max);
    let tol = sigma_rel * smax;
    let below = blocks.iter().flat_map(|b| b.2.iter().copied()).filter(|&s| s < tol).fold(0.0, f64::max);
    let above = blocks.iter().flat_map(|b| b.2.iter().copied()).filter(|&s| s >= tol).fold(f64::INFINITY, f64::min);
    if below > 0.0 && above / below < 1e3 {
        return Err(Error::Resolution(format!("singular values {below:e} and {above:e} straddle the rank threshold")));
    }
    let (mut ker, mut coker) = (0, 0);
    for (r, c, sv) in blocks {
        let rank = sv.iter().filter(|&&s| s >= tol).count();
        ker += c - rank;
        coker += r - rank;
    }
    Ok(FredholmReport { dim_ker: ker, dim_coker: coker, index: ker as i64 - coker as i64 })
}

/// `|d-bar u|^2 - |d_s u|^2 - |d_t u|^2` minus the boundary terms, for
/// `sign = 1`; with `sign = -1` the same for `d_s - J d_t`.
pub fn cauchy_riemann_defect(space: GalerkinSpace, values: &[Vec<f64>], h: f64, sign: f64) -> f64 {
    let du = ds(values, h);
    let w = gregory_weights(values.len(), h);
    let dim = space.dim_total();
    let k: Vec<f64> = (0..dim).map(|i| 2.0 * PI * space.mode_of(i) as f64).collect();
    let (mut lhs, mut dss, mut dts) = (0.0, 0.0, 0.0);
    for ((v, d), wi) in values.iter().zip(&du).zip(&w) {
        for i in 0..dim {
            lhs += wi * (d[i] - sign * k[i] * v[i]).powi(2);
            dss += wi * d[i] * d[i];
            dts += wi * (k[i] * v[i]).powi(2);
        }
    }
    // sum_k 2 pi k |u_k|^2 = |P+ u|^2 - |P- u|^2 in H^{1/2}
    let pm = |v: &[f64]| (0..dim).map(|i| k[i] * v[i] * v[i]).sum::<f64>();
    let first = &values[0];
    let last = values.last().expect("nonempty");
    let boundary = -sign * (pm(last) - pm(first));
    lhs - dss - dts - boundary
}

/// `|u(0)|_{H^{1/2}} / |u|_{H^1}` on a half-cylinder starting at the first node.
pub fn trace_ratio(space: GalerkinSpace, values: &[Vec<f64>], h: f64) -> f64 {
    let du = ds(values, h);
    let w = gregory_weights(values.len(), h);
    let dim = space.dim_total();
    let k: Vec<f64> = (0..dim).map(|i| 2.0 * PI * space.mode_of(i) as f64).collect();
    let hw = half_weights(space);
    let mut h1 = 0.0;
    for ((v, d), wi) in values.iter().zip(&du).zip(&w) {
        for i in 0..dim {
            h1 += wi * (v[i] * v[i] * (1.0 + k[i] * k[i]) + d[i] * d[i]);
        }
    }
    let trace: f64 = (0..dim).map(|i| hw[i] * values[0][i] * values[0][i]).sum();
    (trace / h1).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_gradient::critical_loops;
    use crate::hamiltonian::TrigHamiltonian;
    use crate::morse_complex::{CompactPerturbation, MorseOptions, morse_boundary};
    use crate::orbits::{OrbitOptions, find_orbits};

    fn setup(h: &TrigHamiltonian, nn: usize) -> (LoopModel, Vec<CriticalLoop>) {
        let orbits = find_orbits(h, &OrbitOptions::default()).unwrap();
        let model = LoopModel::new(h, GalerkinSpace::new(1, nn));
        let crits = critical_loops(&model, &orbits, 1e-8).unwrap();
        (model, crits)
    }

    #[test]
    fn constant_cylinder() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let c = &crits[0].vec;
        let g = CylinderGrid::constant(model.space, c, 10.0, 64);
        let r = floer_residual(&model, &g);
        assert!(r.iter().flatten().all(|x| x.abs() < 1e-14));
        let (sol, _) = solve_cylinder(&model, c, c, &g, &FloerOptions::default()).unwrap();
        assert!(sol.sup_distance(&g) < 1e-12);
        assert_eq!(energy(&model, &sol), 0.0);
    }

    #[test]
    fn spurious_mode_residual() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let amp = 1e-6;
        let mut v = crits[1].vec.clone();
        let i = model.space.offset(2);
        v[i] += amp;
        let g = CylinderGrid::constant(model.space, &v, 5.0, 32);
        let r = floer_residual(&model, &g);
        let worst_other = r[10].iter().enumerate().filter(|(j, _)| *j != i).fold(0.0f64, |m, (_, x)| m.max(x.abs()));
        assert!((r[10][i].abs() - 4.0 * PI * amp).abs() < 0.5 * amp);
        assert!(worst_other < 0.5 * amp);
    }

    #[test]
    fn planar_gradient_line_residual() {
        // t-independent line of H = eps cos(2 pi q) from q = 0 to q = 1/2,
        // tan(pi q) = exp(4 pi^2 eps s) solves q' = 2 pi eps sin(2 pi q).
        let eps = 0.01;
        let h = TrigHamiltonian::cos_cos(eps);
        let model = LoopModel::new(&h, GalerkinSpace::new(1, 2));
        let o = model.space.offset(0);
        let line = |s: f64| {
            let mut v = vec![0.0; model.dim()];
            v[o] = (4.0 * PI * PI * eps * s).exp().atan() / PI;
            v
        };
        let mut errs = Vec::new();
        for m in [128, 256] {
            let g = CylinderGrid::from_fn(model.space, -20.0, 20.0, m, line);
            let r = floer_residual(&model, &g);
            errs.push(r.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())));
        }
        assert!(errs[1] < 1e-6, "{errs:?}");
        assert!(errs[0] / errs[1] > 12.0, "{errs:?}");
    }

    #[test]
    fn cos_cos_cylinders() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let k = CompactPerturbation::zero(model.space);
        let (_, morse) = morse_boundary(&model, &k, &crits, &MorseOptions::default()).unwrap();
        let opts = FloerOptions { multistart: 8, ..Default::default() };
        let (cx, counts) = floer_boundary(&model, &crits, &morse, &opts).unwrap();
        assert_eq!(counts.len(), 4);
        for c in &counts {
            assert_eq!(c.count, 2, "{} -> {}: {:?}", c.from, c.to, c.warnings);
            assert!(c.warnings.is_empty(), "{:?}", c.warnings);
            for s in &c.solutions {
                assert!((s.energy - 0.02).abs() < 1e-4, "{}", s.energy);
                assert!(s.t_mode_energy < 1e-8);
                assert!(s.tail_rate.unwrap() > 0.0);
                assert!(s.constant_part_bounded);
            }
        }
        assert!(cx.boundary.values().all(|m| m.is_zero()));
    }

    #[test]
    fn max_to_min_energy() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let (x, y) = (&crits[0], &crits[3]);
        let mut target = y.vec.clone();
        let o = model.space.offset(0);
        let l = default_half_length(&model, &x.vec, &y.vec);
        // diagonal guess towards (1/2, 1/2)
        target[o] = 0.5;
        target[o + 1] = 0.5;
        let (g, _) = straight_guess(&model, &x.vec, &y.vec, &[0.0, 0.0], l, 256);
        let (sol, _) = solve_cylinder(&model, &x.vec, &target, &g, &FloerOptions::default()).unwrap();
        let e = energy(&model, &sol);
        assert!((e - 0.04).abs() < 1e-4, "{e}");
    }

    #[test]
    fn equal_action_pair_is_empty() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let mut a = crits[1].clone();
        a.mu = 1;
        let c = count_floer(&model, &a, &crits[2], &[], &FloerOptions::default()).unwrap();
        assert_eq!(c.count, 0);
        assert_eq!(c.attempts, 0);
    }

    #[test]
    fn fredholm_examples() {
        let sp = GalerkinSpace::new(1, 4);
        let r = fredholm_diag(PI, PI, sp, 24.0, 64).unwrap();
        assert_eq!((r.dim_ker, r.dim_coker), (0, 0));
        let r = fredholm_diag(PI, 5.0 * PI, sp, 24.0, 64).unwrap();
        assert_eq!((r.dim_ker, r.dim_coker, r.index), (4, 0, 4));
        let r = fredholm_diag(5.0 * PI, PI, sp, 24.0, 64).unwrap();
        assert_eq!((r.dim_ker, r.dim_coker, r.index), (0, 4, -4));
        assert!(fredholm_diag(2.0 * PI + 0.05, PI, sp, 24.0, 64).is_err());
    }
}

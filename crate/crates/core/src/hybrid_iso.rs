//! Hybrid curves: a negative gradient half-line of the action glued at
//! `s = 0` to a Floer half-cylinder. Their counts give the chain map from
//! the Morse complex to the Floer complex.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::action_gradient::{CriticalLoop, LoopModel};
use crate::bvp::{self, Bvp, Constraint, Field, NewtonReport, Piece};
use crate::chain_algebra::{GF2Matrix, GradedComplex};
use crate::error::{Error, Result};
use crate::floer_solver::{CylinderGrid, default_half_length, energy, floer_residual};
use crate::morse_complex::{CompactPerturbation, MorseTrajectory, distance_half, flow_field};
use crate::numfmt::sig17;

#[derive(Clone, Debug)]
pub struct HybridOptions {
    /// Length of the gradient half-line.
    pub l_m: f64,
    /// Length of the half-cylinder; `None` picks `12 / delta`.
    pub half_length: Option<f64>,
    pub m_m: usize,
    pub m_s: usize,
    pub tol_floer: f64,
    pub tol_match: f64,
    pub tol_spec: f64,
    /// Radius for classifying a Morse part as passing a critical point.
    pub r_conv: f64,
    pub multistart: usize,
    pub seed: u64,
    pub max_newton: usize,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            l_m: 200.0,
            half_length: None,
            m_m: 256,
            m_s: 256,
            tol_floer: 1e-8,
            tol_match: 1e-6,
            tol_spec: 1e-8,
            r_conv: 1e-2,
            multistart: 32,
            seed: 0,
            max_newton: 40,
        }
    }
}

struct MorseField<'a> {
    model: &'a LoopModel,
    k: &'a CompactPerturbation,
}

impl Field for MorseField<'_> {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        flow_field(self.model, self.k, u)
    }
    fn jac(&self, u: &[f64]) -> DMatrix<f64> {
        if self.k.is_zero() {
            return self.model.jac_neg_gradient(u);
        }
        let dim = u.len();
        let mut j = DMatrix::zeros(dim, dim);
        let mut w = u.to_vec();
        for c in 0..dim {
            let eps = 1e-7 * (1.0 + u[c].abs());
            w[c] = u[c] + eps;
            let fp = self.eval(&w);
            w[c] = u[c] - eps;
            let fm = self.eval(&w);
            w[c] = u[c];
            for r in 0..dim {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
        j
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

/// A solved hybrid curve.
#[derive(Clone, Debug, Serialize)]
pub struct HybridSolution {
    /// Gradient half-line on `(-L_m, 0]`; times are shifted to start at 0.
    #[serde(skip)]
    pub morse_part: MorseTrajectory,
    pub floer_part: CylinderGrid,
    #[serde(serialize_with = "sig17")]
    pub matching_defect: f64,
    pub endpoints: (usize, usize),
    #[serde(serialize_with = "sig17")]
    pub energy: f64,
    #[serde(serialize_with = "sig17")]
    pub action_drop: f64,
    /// `A(u(0)) - A(x^-)`, nonpositive up to tolerance.
    #[serde(serialize_with = "sig17")]
    pub lyapunov_excess: f64,
    #[serde(serialize_with = "sig17")]
    pub floer_residual: f64,
    pub newton_iterations: usize,
}

/// Initial data for [`solve_hybrid`]: node values of both parts.
#[derive(Clone, Debug)]
pub struct HybridGuess {
    pub morse: Vec<Vec<f64>>,
    pub floer: CylinderGrid,
}

impl HybridGuess {
    /// Both parts constant at `v`.
    pub fn constant(model: &LoopModel, v: &[f64], opts: &HybridOptions, l: f64) -> Self {
        Self { morse: vec![v.to_vec(); opts.m_m], floer: CylinderGrid::from_fn(model.space, 0.0, l, opts.m_s, |_| v.to_vec()) }
    }
}

fn build_problem<'a>(
    model: &'a LoopModel,
    mf: &'a MorseField<'a>,
    ff: &'a FloerField<'a>,
    c_minus: &[f64],
    c_plus: &[f64],
    l: f64,
    opts: &HybridOptions,
) -> Result<Bvp<'a>> {
    let dim = model.dim();
    let a_sym = -model.hessian_sym(c_minus);
    let left = bvp::spectral_rows(&a_sym, &model.weights, true, opts.tol_spec)?;
    let right = bvp::spectral_rows(&model.jac_f(c_plus), &vec![1.0; dim], false, opts.tol_spec)?;
    let (mm, ms) = (opts.m_m, opts.m_s);
    Ok(Bvp {
        dim,
        pieces: vec![
            Piece { field: mf, s0: -opts.l_m, s1: 0.0, nodes: mm },
            Piece { field: ff, s0: 0.0, s1: l, nodes: ms },
        ],
        constraints: vec![
            Constraint::Affine { node: 0, p: left, target: c_minus.to_vec() },
            Constraint::Match { a: mm - 1, b: mm },
            Constraint::Affine { node: mm + ms - 1, p: right, target: c_plus.to_vec() },
        ],
    })
}

/// Joint Newton solve of the gradient half-line from `x^-` and the
/// half-cylinder to the lifted loop `c_plus`, matched at `s = 0`.
pub fn solve_hybrid(
    model: &LoopModel,
    k: &CompactPerturbation,
    x_minus: &CriticalLoop,
    x_plus: &CriticalLoop,
    c_plus: &[f64],
    guess: &HybridGuess,
    opts: &HybridOptions,
) -> Result<HybridSolution> {
    if x_minus.m < x_plus.mu {
        return Err(Error::Dimension(format!("m(x-) = {} < mu(x+) = {}", x_minus.m, x_plus.mu)));
    }
    if guess.morse.len() != opts.m_m || guess.floer.m_s() != opts.m_s {
        return Err(Error::Dimension("hybrid guess does not match the grid sizes".into()));
    }
    guess.floer.validate()?;
    let l = guess.floer.s1;
    let mf = MorseField { model, k };
    let ff = FloerField(model);
    let problem = build_problem(model, &mf, &ff, &x_minus.vec, c_plus, l, opts)?;
    let mut u: Vec<f64> = guess.morse.iter().chain(&guess.floer.values).flat_map(|v| v.iter().copied()).collect();
    let report = bvp::newton(&problem, &mut u, opts.tol_floer, opts.max_newton)?;
    Ok(describe(model, x_minus, x_plus, c_plus, &u, l, &report, opts))
}

#[allow(clippy::too_many_arguments)]
fn describe(
    model: &LoopModel,
    x_minus: &CriticalLoop,
    x_plus: &CriticalLoop,
    c_plus: &[f64],
    u: &[f64],
    l: f64,
    report: &NewtonReport,
    opts: &HybridOptions,
) -> HybridSolution {
    let dim = model.dim();
    let slices: Vec<Vec<f64>> = u.chunks(dim).map(|c| c.to_vec()).collect();
    let (morse, floer) = slices.split_at(opts.m_m);
    let hm = opts.l_m / (opts.m_m - 1) as f64;
    let times: Vec<f64> = (0..opts.m_m).map(|i| i as f64 * hm).collect();
    let morse_part = MorseTrajectory {
        flow_time: opts.l_m,
        actions: morse.iter().map(|v| model.action_vec(v)).collect(),
        states: morse.to_vec(),
        times,
        start: Some(x_minus.id),
        end: None,
    };
    let floer_part = CylinderGrid { space: model.space, s0: 0.0, s1: l, values: floer.to_vec(), minus: None, plus: Some(x_plus.id) };
    let res = floer_residual(model, &floer_part);
    HybridSolution {
        matching_defect: distance_half(model, &morse[opts.m_m - 1], &floer[0]),
        endpoints: (x_minus.id, x_plus.id),
        energy: energy(model, &floer_part),
        action_drop: model.action_vec(&floer[0]) - model.action_vec(c_plus),
        lyapunov_excess: model.action_vec(&floer[0]) - x_minus.action,
        floer_residual: res.iter().flatten().fold(0.0, |m, x| m.max(x.abs())),
        newton_iterations: report.iterations,
        morse_part,
        floer_part,
    }
}

/// Smallest singular value of the linearized hybrid problem at the guess;
/// zero when the problem is not square.
pub fn min_singular_value(
    model: &LoopModel,
    k: &CompactPerturbation,
    c_minus: &[f64],
    c_plus: &[f64],
    guess: &HybridGuess,
    opts: &HybridOptions,
) -> Result<f64> {
    let mf = MorseField { model, k };
    let ff = FloerField(model);
    let problem = build_problem(model, &mf, &ff, c_minus, c_plus, guess.floer.s1, opts)?;
    let u: Vec<f64> = guess.morse.iter().chain(&guess.floer.values).flat_map(|v| v.iter().copied()).collect();
    let (rows, _) = problem.assemble(&u);
    if rows.len() != problem.unknowns() {
        return Ok(0.0);
    }
    bvp::min_singular_value(&rows)
}

/// Hybrid count between generators of equal index.
#[derive(Clone, Debug, Serialize)]
pub struct HybridCount {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub attempts: usize,
    pub converged: usize,
    /// Solutions whose gradient part passes near another critical point.
    pub near_broken: usize,
    pub warnings: Vec<String>,
    pub solutions: Vec<HybridSolution>,
}

fn straight(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

/// Counts hybrid curves from `x` to `y`. Returns 1 for `x = y` without
/// solving and 0 when `A(y) >= A(x)`.
pub fn count_hybrid(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    x: &CriticalLoop,
    y: &CriticalLoop,
    opts: &HybridOptions,
) -> Result<HybridCount> {
    if x.m != y.mu {
        return Err(Error::Dimension(format!("m({}) = {} but mu({}) = {}", x.id, x.m, y.id, y.mu)));
    }
    let mut out = HybridCount { from: x.id, to: y.id, count: 0, attempts: 0, converged: 0, near_broken: 0, warnings: Vec::new(), solutions: Vec::new() };
    if x.id == y.id {
        out.count = 1;
        return Ok(out);
    }
    if x.action <= y.action + 1e-12 {
        return Ok(out);
    }
    let l = opts.half_length.unwrap_or_else(|| default_half_length(model, &x.vec, &y.vec));
    let o = model.space.offset(0);
    let b = model.space.block();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((x.id as u64) << 32) ^ y.id as u64 ^ 0x6879_6272);
    let mut jobs: Vec<(HybridGuess, Vec<f64>)> = Vec::new();
    for code in 0..3usize.pow(b as u32) {
        let mut target = y.vec.clone();
        let mut c = code;
        for i in 0..b {
            target[o + i] += (x.vec[o + i] - y.vec[o + i]).round() + (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let mid = straight(&x.vec, &target, 0.5);
        let hm = opts.l_m / (opts.m_m - 1) as f64;
        let morse: Vec<Vec<f64>> = (0..opts.m_m)
            .map(|i| {
                let s = -opts.l_m + i as f64 * hm;
                straight(&x.vec, &mid, (-(s / 10.0).powi(2)).exp())
            })
            .collect();
        let floer = CylinderGrid::from_fn(model.space, 0.0, l, opts.m_s, |s| straight(&mid, &target, 1.0 - (-(s / 5.0)).exp()));
        jobs.push((HybridGuess { morse, floer }, target));
    }
    let base = jobs.len();
    for i in 0..opts.multistart {
        let (g, t) = jobs[i % base].clone();
        let dir: Vec<f64> = (0..model.dim()).map(|c| 0.05 * rng.random_range(-1.0..1.0) / model.weights[c].sqrt()).collect();
        let mut g = g;
        let last = g.morse.len() - 1;
        for (j, v) in g.morse.iter_mut().enumerate() {
            let w = (-(((last - j) as f64) / 20.0).powi(2)).exp();
            v.iter_mut().zip(&dir).for_each(|(a, d)| *a += w * d);
        }
        for (j, v) in g.floer.values.iter_mut().enumerate().take(opts.m_s - 1) {
            let w = (-((j as f64) / 20.0).powi(2)).exp();
            v.iter_mut().zip(&dir).for_each(|(a, d)| *a += w * d);
        }
        jobs.push((g, t));
    }
    out.attempts = jobs.len();
    let results: Vec<Result<HybridSolution>> = jobs.par_iter().map(|(g, t)| solve_hybrid(model, k, x, y, t, g, opts)).collect();
    let thresh = (10.0 * opts.tol_floer).max(1e-6);
    let flat = |s: &HybridSolution| -> Vec<f64> {
        s.morse_part.states.iter().chain(&s.floer_part.values).flat_map(|v| v.iter().copied()).collect()
    };
    for r in results {
        let Ok(sol) = r else { continue };
        out.converged += 1;
        let passes = crits.iter().filter(|c| c.id != x.id).any(|c| {
            sol.morse_part.states.iter().any(|v| distance_half(model, v, &c.vec) < opts.r_conv)
        });
        if passes {
            out.near_broken += 1;
            continue;
        }
        let f = flat(&sol);
        let dup = out.solutions.iter().any(|s| {
            flat(s).iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) < thresh
        });
        if !dup {
            out.solutions.push(sol);
        }
    }
    out.count = out.solutions.len();
    Ok(out)
}

/// `Phi_k` per degree: the column of `x` lists the `y` with odd count.
/// Rows and columns follow the generator order of the complexes.
pub fn build_phi(cm: &GradedComplex, cf: &GradedComplex, counts: &[HybridCount]) -> Result<BTreeMap<i64, GF2Matrix>> {
    let mut phi: BTreeMap<i64, GF2Matrix> = BTreeMap::new();
    for k in cm.degrees() {
        phi.insert(k, GF2Matrix::zeros(cf.count(k), cm.count(k)));
    }
    for c in counts {
        let (kx, jx) = cm.position(c.from).ok_or_else(|| Error::Structural(format!("unknown generator {}", c.from)))?;
        let (ky, iy) = cf.position(c.to).ok_or_else(|| Error::Structural(format!("unknown generator {}", c.to)))?;
        if kx != ky {
            return Err(Error::Dimension(format!("hybrid count between degrees {kx} and {ky}")));
        }
        let m = phi.entry(kx).or_insert_with(|| GF2Matrix::zeros(cf.count(kx), cm.count(kx)));
        m.set(iy, jx, c.count % 2 == 1);
    }
    Ok(phi)
}

/// Result of [`check_triangular`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TriangularReport {
    pub degrees: Vec<i64>,
    pub invertible: bool,
}

/// Unit diagonal and no entries below it, with generators in increasing
/// action. `cm` and `cf` must order the same generators identically.
pub fn check_triangular(phi: &BTreeMap<i64, GF2Matrix>, cm: &GradedComplex, cf: &GradedComplex) -> Result<TriangularReport> {
    for (&k, m) in phi {
        let gm = cm.generators.get(&k).map(Vec::as_slice).unwrap_or(&[]);
        let gf = cf.generators.get(&k).map(Vec::as_slice).unwrap_or(&[]);
        if m.rows() != gf.len() || m.cols() != gm.len() || gf.len() != gm.len() {
            return Err(Error::Dimension(format!("Phi in degree {k} is not square")));
        }
        if gm.iter().zip(gf).any(|(a, b)| a.id != b.id) {
            return Err(Error::Structural(format!("generator orders differ in degree {k}")));
        }
        for i in 0..m.rows() {
            if !m.get(i, i) {
                return Err(Error::Structural(format!("Phi_{k}: zero diagonal entry at generator {}", gm[i].id)));
            }
            for j in 0..i {
                if m.get(i, j) {
                    return Err(Error::Structural(format!(
                        "Phi_{k}: entry below the diagonal from {} to {}",
                        gm[j].id, gf[i].id
                    )));
                }
            }
        }
    }
    Ok(TriangularReport { degrees: phi.keys().copied().collect(), invertible: phi.values().all(GF2Matrix::is_invertible) })
}

/// All hybrid counts between generators with `m(x) = mu(y)`.
pub fn hybrid_counts(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    opts: &HybridOptions,
) -> Result<Vec<HybridCount>> {
    let pairs: Vec<(usize, usize)> = (0..crits.len())
        .flat_map(|i| (0..crits.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| crits[i].m == crits[j].mu)
        .collect();
    pairs.iter().map(|&(i, j)| count_hybrid(model, k, crits, &crits[i], &crits[j], opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_gradient::critical_loops;
    use crate::chain_algebra::verify_chain_map;
    use crate::hamiltonian::TrigHamiltonian;
    use crate::loopspace::GalerkinSpace;
    use crate::orbits::{OrbitOptions, find_orbits};

    fn setup(h: &TrigHamiltonian, nn: usize) -> (LoopModel, Vec<CriticalLoop>) {
        let orbits = find_orbits(h, &OrbitOptions::default()).unwrap();
        let model = LoopModel::new(h, GalerkinSpace::new(1, nn));
        let crits = critical_loops(&model, &orbits, 1e-8).unwrap();
        (model, crits)
    }

    fn complexes(crits: &[CriticalLoop]) -> (GradedComplex, GradedComplex) {
        (
            GradedComplex::from_generators(crits.iter().map(|c| (c.id, c.m, c.action))),
            GradedComplex::from_generators(crits.iter().map(|c| (c.id, c.mu, c.action))),
        )
    }

    #[test]
    fn constant_hybrid_is_isolated() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let k = CompactPerturbation::zero(model.space);
        let opts = HybridOptions { m_m: 64, m_s: 64, l_m: 40.0, ..Default::default() };
        for x in &crits {
            let l = default_half_length(&model, &x.vec, &x.vec);
            let g = HybridGuess::constant(&model, &x.vec, &opts, l);
            let sol = solve_hybrid(&model, &k, x, x, &x.vec, &g, &opts).unwrap();
            assert!(sol.energy.abs() < 1e-20 && sol.matching_defect == 0.0);
            let smin = min_singular_value(&model, &k, &x.vec, &x.vec, &g, &opts).unwrap();
            assert!(smin > 1e-3, "{smin}");
        }
    }

    #[test]
    fn constant_basin() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let k = CompactPerturbation::zero(model.space);
        let opts = HybridOptions { m_m: 64, m_s: 64, l_m: 40.0, ..Default::default() };
        let x = &crits[0];
        let l = default_half_length(&model, &x.vec, &x.vec);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..4 {
            let mut g = HybridGuess::constant(&model, &x.vec, &opts, l);
            for v in g.morse.iter_mut().chain(g.floer.values.iter_mut()) {
                v.iter_mut().for_each(|a| *a += 1e-3 * rng.random_range(-1.0..1.0));
            }
            let sol = solve_hybrid(&model, &k, x, x, &x.vec, &g, &opts).unwrap();
            let dev = sol.floer_part.values.iter().chain(&sol.morse_part.states).flatten().zip(x.vec.iter().cycle()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(dev < 1e-8, "{dev}");
        }
    }

    #[test]
    fn descending_hybrid_energy() {
        use crate::morse_complex::{MorseOptions, morse_boundary};
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let k = CompactPerturbation::zero(model.space);
        let (_, morse) = morse_boundary(&model, &k, &crits, &MorseOptions::default()).unwrap();
        let (x, y) = (&crits[0], &crits[1]);
        let w = &morse.iter().find(|c| c.from == x.id && c.to == y.id).unwrap().witnesses[0];
        let level = 0.5 * (x.action + y.action);
        let t0 = w.times[w.actions.iter().position(|&a| a <= level).unwrap()];
        let last = w.states.last().unwrap();
        let o = model.space.offset(0);
        let mut target = y.vec.clone();
        for i in 0..2 {
            target[o + i] += (last[o + i] - y.vec[o + i]).round();
        }
        let opts = HybridOptions { m_m: 128, m_s: 128, l_m: 60.0, ..Default::default() };
        let l = default_half_length(&model, &x.vec, &y.vec);
        let hm = opts.l_m / (opts.m_m - 1) as f64;
        let morse_guess = (0..opts.m_m).map(|i| w.at(t0 - opts.l_m + i as f64 * hm)).collect();
        let floer = CylinderGrid::from_fn(model.space, 0.0, l, opts.m_s, |s| if t0 + s >= w.flow_time { target.clone() } else { w.at(t0 + s) });
        let sol = solve_hybrid(&model, &k, x, y, &target, &HybridGuess { morse: morse_guess, floer }, &opts).unwrap();
        assert!(sol.matching_defect <= opts.tol_match);
        assert!(sol.lyapunov_excess <= 1e-10, "{}", sol.lyapunov_excess);
        assert!(sol.action_drop > 0.0);
        assert!((sol.energy - sol.action_drop).abs() < 1e-4, "{} {}", sol.energy, sol.action_drop);
    }

    #[test]
    fn cos_cos_phi_is_identity() {
        let (model, crits) = setup(&TrigHamiltonian::cos_cos(0.01), 4);
        let k = CompactPerturbation::zero(model.space);
        let counts = hybrid_counts(&model, &k, &crits, &HybridOptions::default()).unwrap();
        // pairs: 4 diagonal, saddle pair both ways
        assert_eq!(counts.len(), 6);
        for c in &counts {
            assert_eq!(c.count, usize::from(c.from == c.to));
            assert_eq!(c.attempts, 0);
        }
        let (cm, cf) = complexes(&crits);
        let phi = build_phi(&cm, &cf, &counts).unwrap();
        for (kd, m) in &phi {
            assert_eq!(*m, GF2Matrix::identity(cm.count(*kd)));
        }
        assert!(check_triangular(&phi, &cm, &cf).unwrap().invertible);
        assert!(verify_chain_map(&phi, &cm, &cf).unwrap().pass);
    }

    #[test]
    fn triangularity_checks() {
        let gens = [(0usize, 0i64, 0.0), (1, 0, 1.0)];
        let cm = GradedComplex::from_generators(gens);
        let cf = cm.clone();
        let mut phi = BTreeMap::new();
        phi.insert(0, GF2Matrix::identity(2));
        assert!(check_triangular(&phi, &cm, &cf).is_ok());
        phi.insert(0, GF2Matrix::from_rows(&[vec![1, 1], vec![0, 1]]));
        assert!(check_triangular(&phi, &cm, &cf).unwrap().invertible);
        phi.insert(0, GF2Matrix::from_rows(&[vec![1, 0], vec![0, 0]]));
        assert!(matches!(check_triangular(&phi, &cm, &cf), Err(Error::Structural(_))));
        phi.insert(0, GF2Matrix::from_rows(&[vec![1, 0], vec![1, 1]]));
        assert!(matches!(check_triangular(&phi, &cm, &cf), Err(Error::Structural(_))));
    }
}

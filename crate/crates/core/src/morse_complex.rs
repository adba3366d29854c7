//! Negative gradient flow of the truncated action, connecting trajectories
//! and the Morse boundary operator.
//!
//! Forward integration of the positive-frequency modes is unstable (they grow
//! like `e^s`), so connection counting uses a dichotomy integrator: the modes
//! that are stable in the direction of integration are integrated as an
//! initial value problem, the others backward from their value at the limit
//! point, and the two sweeps are iterated to a fixed point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::action_gradient::{CriticalLoop, LoopModel};
use crate::chain_algebra::GradedComplex;
use crate::error::{Error, Result};
use crate::loopspace::{FourierLoop, GalerkinSpace, lift_diff};

#[derive(Clone, Debug)]
pub struct MorseOptions {
    pub r_launch: f64,
    pub r_conv: f64,
    pub tol_conv: f64,
    pub horizon: f64,
    /// Fixed step of the dichotomy integrator.
    pub step: f64,
    /// Circle mesh size for two-dimensional launch spheres.
    pub mesh: usize,
    pub max_refine: usize,
    /// Relative and absolute tolerance of the adaptive integrator.
    pub rtol: f64,
}

impl Default for MorseOptions {
    fn default() -> Self {
        Self {
            r_launch: 1e-3,
            r_conv: 1e-2,
            tol_conv: 1e-6,
            horizon: 200.0,
            step: 0.05,
            mesh: 64,
            max_refine: 10,
            rtol: 1e-10,
        }
    }
}

/// Limit point of a trajectory: a critical point and a lattice translate of its base.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Label {
    pub id: usize,
    pub shift: Vec<i64>,
}

/// `H^{1/2}` distance of flat vectors with the base difference lifted to `(-1/2, 1/2]`.
pub fn distance_half(model: &LoopModel, a: &[f64], b: &[f64]) -> f64 {
    let o = model.space.offset(0);
    let d = model.space.block();
    (0..a.len())
        .map(|i| {
            let diff = if (o..o + d).contains(&i) { lift_diff(a[i] - b[i]) } else { a[i] - b[i] };
            model.weights[i] * diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

pub fn norm_half(model: &LoopModel, a: &[f64]) -> f64 {
    (0..a.len()).map(|i| model.weights[i] * a[i] * a[i]).sum::<f64>().sqrt()
}

/// One term `cos(2 pi m.x0 + phi) v` of a perturbation.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbTerm {
    pub m: Vec<i64>,
    pub phi: f64,
    /// Flat tangent vector of unit `H^{1/2}` norm.
    pub v: Vec<f64>,
}

/// Finite-mode perturbation `K` of the negative gradient, vanishing near the
/// critical points and bounded by `magnitude * |grad| / 2`.
#[derive(Clone, Debug, Serialize)]
pub struct CompactPerturbation {
    pub space: GalerkinSpace,
    pub terms: Vec<PerturbTerm>,
    pub magnitude: f64,
    pub r_crit: f64,
    pub centers: Vec<Vec<f64>>,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

impl CompactPerturbation {
    pub fn zero(space: GalerkinSpace) -> Self {
        Self { space, terms: Vec::new(), magnitude: 0.0, r_crit: 0.0, centers: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() || self.magnitude == 0.0
    }

    /// Seeded random perturbation with terms on modes `|k| <= 2`.
    pub fn random(model: &LoopModel, centers: &[Vec<f64>], magnitude: f64, r_crit: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = model.space;
        let d = sp.block();
        let terms = (0..4)
            .map(|_| {
                let m: Vec<i64> = (0..d).map(|_| rng.random_range(-1..=1)).collect();
                let phi = rng.random_range(0.0..2.0 * PI);
                let mut v = vec![0.0; sp.dim_total()];
                for k in sp.modes().filter(|k| k.abs() <= 2) {
                    let o = sp.offset(k);
                    let decay = 1.0 / (1.0 + k.abs() as f64).powi(2);
                    for c in 0..d {
                        v[o + c] = decay * rng.random_range(-1.0..1.0);
                    }
                }
                let nv = norm_half(model, &v);
                v.iter_mut().for_each(|x| *x /= nv);
                PerturbTerm { m, phi, v }
            })
            .collect();
        Self { space: sp, terms, magnitude, r_crit, centers: centers.to_vec() }
    }

    pub fn eval(&self, model: &LoopModel, v: &[f64], grad_norm: f64) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        if self.is_zero() {
            return out;
        }
        let dist = self.centers.iter().map(|c| distance_half(model, v, c)).fold(f64::INFINITY, f64::min);
        let beta = smoothstep((dist - self.r_crit) / self.r_crit);
        if beta == 0.0 {
            return out;
        }
        let o = self.space.offset(0);
        let base = &v[o..o + self.space.block()];
        let scale = self.magnitude * 0.5 * grad_norm * beta / self.terms.len() as f64;
        for t in &self.terms {
            let arg: f64 = t.m.iter().zip(base).map(|(m, x)| *m as f64 * x).sum::<f64>();
            let w = (2.0 * PI * arg + t.phi).cos() * scale;
            for (o, vi) in out.iter_mut().zip(&t.v) {
                *o += w * vi;
            }
        }
        out
    }
}

/// Perturbed negative gradient `X + K`.
pub fn flow_field(model: &LoopModel, k: &CompactPerturbation, v: &[f64]) -> Vec<f64> {
    let mut x = model.neg_gradient(v);
    if !k.is_zero() {
        let gn = norm_half(model, &x);
        for (a, b) in x.iter_mut().zip(k.eval(model, v, gn)) {
            *a += b;
        }
    }
    x
}

#[derive(Clone, Debug)]
pub struct MorseTrajectory {
    pub times: Vec<f64>,
    /// Flat states, base lifted continuously.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub start: Option<usize>,
    pub end: Option<Label>,
    pub flow_time: f64,
}

impl MorseTrajectory {
    pub fn loops(&self, space: GalerkinSpace) -> Vec<FourierLoop> {
        self.states.iter().map(|v| FourierLoop::from_vec(space, v)).collect()
    }

    /// Largest increase of the action between consecutive samples.
    pub fn max_action_increase(&self) -> f64 {
        self.actions.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `|(x_{i+1} - x_i)/ds - X(midpoint)|` in `H^{1/2}`, maximized over samples.
    pub fn midpoint_residual(&self, model: &LoopModel, k: &CompactPerturbation) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.states.len().saturating_sub(1) {
            let ds = self.times[i + 1] - self.times[i];
            if ds == 0.0 {
                continue;
            }
            let mid: Vec<f64> = self.states[i].iter().zip(&self.states[i + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
            let f = flow_field(model, k, &mid);
            let r: Vec<f64> =
                (0..mid.len()).map(|j| (self.states[i + 1][j] - self.states[i][j]) / ds - f[j]).collect();
            worst = worst.max(norm_half(model, &r));
        }
        worst
    }

    /// Sample at flow time `s` by linear interpolation, clamped to the ends.
    pub fn at(&self, s: f64) -> Vec<f64> {
        let t0 = self.times[0];
        let tn = *self.times.last().expect("nonempty");
        if s <= t0 {
            return self.states[0].clone();
        }
        if s >= tn {
            return self.states.last().expect("nonempty").clone();
        }
        let i = self.times.partition_point(|&t| t <= s) - 1;
        let w = (s - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.states[i].iter().zip(&self.states[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }
}

/// When to stop the flow.
#[derive(Clone, Copy, Debug)]
pub enum StopRule<'a> {
    Horizon(f64),
    /// Entry into the `r_conv`-ball of a critical point with small gradient,
    /// or the horizon.
    Converge { crits: &'a [CriticalLoop], r_conv: f64, tol_conv: f64, horizon: f64 },
}

fn shift_to(model: &LoopModel, v: &[f64], c: &[f64]) -> Vec<i64> {
    let o = model.space.offset(0);
    (0..model.space.block()).map(|i| (v[o + i] - c[o + i]).round() as i64).collect()
}

fn classify(model: &LoopModel, crits: &[CriticalLoop], v: &[f64], r_conv: f64) -> Option<Label> {
    crits
        .iter()
        .find(|c| distance_half(model, v, &c.vec) < r_conv)
        .map(|c| Label { id: c.id, shift: shift_to(model, v, &c.vec) })
}

/// Adaptive Dormand-Prince integration of `x' = X(x) + K(x)`.
pub fn integrate_flow(
    model: &LoopModel,
    k: &CompactPerturbation,
    start: &[f64],
    stop: StopRule<'_>,
    opts: &MorseOptions,
) -> Result<MorseTrajectory> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let horizon = match stop {
        StopRule::Horizon(t) => t,
        StopRule::Converge { horizon, .. } => horizon,
    };
    let dim = start.len();
    let mut x = start.to_vec();
    let mut s = 0.0;
    let mut h = 0.01_f64.min(horizon);
    let mut traj = MorseTrajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        actions: vec![model.action_vec(&x)],
        start: None,
        end: None,
        flow_time: 0.0,
    };
    let mut f0 = flow_field(model, k, &x);
    let check = |x: &[f64], f: &[f64]| -> Option<Label> {
        if let StopRule::Converge { crits, r_conv, tol_conv, .. } = stop
            && norm_half(model, f) < tol_conv {
                return classify(model, crits, x, r_conv);
            }
        None
    };
    if let Some(l) = check(&x, &f0) {
        traj.end = Some(l);
        return Ok(traj);
    }
    while s < horizon {
        h = h.min(horizon - s);
        if h < 1e-12 {
            return Err(Error::Stiffness { s, msg: format!("step size underflow at base {:?}", &x[model.space.offset(0)..model.space.offset(0) + model.space.block()]) });
        }
        let mut ks: Vec<Vec<f64>> = vec![f0.clone()];
        for st in 1..7 {
            let y: Vec<f64> =
                (0..dim).map(|i| x[i] + h * (0..st).map(|j| A[st][j] * ks[j][i]).sum::<f64>()).collect();
            ks.push(flow_field(model, k, &y));
        }
        let y5: Vec<f64> = (0..dim).map(|i| x[i] + h * (0..6).map(|j| A[6][j] * ks[j][i]).sum::<f64>()).collect();
        let err = (0..dim)
            .map(|i| {
                let e = h * (0..7).map(|j| E[j] * ks[j][i]).sum::<f64>();
                let sc = opts.rtol * (1.0 + x[i].abs().max(y5[i].abs()));
                (e / sc).abs()
            })
            .fold(0.0, f64::max);
        if err <= 1.0 {
            s += h;
            x = y5;
            f0 = ks.pop().expect("seven stages");
            traj.times.push(s);
            traj.actions.push(model.action_vec(&x));
            traj.states.push(x.clone());
            if let Some(l) = check(&x, &f0) {
                traj.end = Some(l);
                break;
            }
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    traj.flow_time = s;
    Ok(traj)
}

/// Which side of a connection the launch sphere sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    /// Unstable sphere at the upper end, flowing forward.
    Forward,
    /// Stable sphere at the lower end, flowing backward.
    Backward,
}

/// Launch directions: the `d`-dimensional subspace of the unstable (forward)
/// or stable (backward) eigenspace with least overlap with the positive
/// (forward) or negative (backward) frequencies. Columns are flat vectors of
/// unit `H^{1/2}` norm.
pub fn launch_basis(model: &LoopModel, c: &[f64], side: Side, d: usize) -> DMatrix<f64> {
    let sp = model.space;
    let dim = model.dim();
    let eig = SymmetricEigen::new(model.hessian_sym(c));
    let cols: Vec<usize> = (0..dim)
        .filter(|&i| match side {
            Side::Forward => eig.eigenvalues[i] < 0.0,
            Side::Backward => eig.eigenvalues[i] > 0.0,
        })
        .collect();
    let w = DMatrix::from_fn(dim, cols.len(), |r, j| eig.eigenvectors[(r, cols[j])]);
    let keep: Vec<usize> = (0..dim)
        .filter(|&i| match side {
            Side::Forward => sp.mode_of(i) <= 0,
            Side::Backward => sp.mode_of(i) >= 0,
        })
        .collect();
    let wk = DMatrix::from_fn(keep.len(), cols.len(), |r, j| w[(keep[r], j)]);
    let svd = wk.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut e = DMatrix::zeros(dim, d);
    for (j, &o) in order.iter().take(d).enumerate() {
        let coef = vt.row(o).transpose();
        let col = &w * coef;
        e.set_column(j, &col);
    }
    // canonical orientation: a deterministic basis of the same span
    if d > 0 {
        let o = sp.offset(0);
        let block = e.rows(o, sp.block()).into_owned();
        if block.norm() > 1e-8 {
            let q = block.svd(true, true);
            let vt = q.v_t.expect("requested");
            e = &e * vt.transpose();
        }
        for j in 0..d {
            let col = e.column(j);
            let imax = (0..dim).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).expect("nonempty");
            if col[imax] < 0.0 {
                e.column_mut(j).neg_mut();
            }
        }
    }
    for r in 0..dim {
        let s = model.weights[r].sqrt();
        e.row_mut(r).iter_mut().for_each(|x| *x /= s);
    }
    e
}

/// Result of one dichotomy run.
#[derive(Clone, Debug)]
struct LpRun {
    states: Vec<Vec<f64>>,
    end: Option<Label>,
    /// Smallest distance to each critical point after leaving the launch ball.
    closest: Vec<f64>,
}

fn hermite_mid(y0: f64, y1: f64, d0: f64, d1: f64, h: f64) -> f64 {
    0.5 * (y0 + y1) + h / 8.0 * (d0 - d1)
}

/// Dichotomy integration of the flow (or the reversed flow) from `start`.
fn lp_flow(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    origin: usize,
    start: &[f64],
    reversed: bool,
    opts: &MorseOptions,
) -> Result<LpRun> {
    let sp = model.space;
    let dim = model.dim();
    let is_a: Vec<bool> = (0..dim)
        .map(|i| {
            let m = sp.mode_of(i);
            if reversed { m >= 0 } else { m <= 0 }
        })
        .collect();
    let sign = if reversed { -1.0 } else { 1.0 };
    let f = |v: &[f64]| -> Vec<f64> {
        let mut x = flow_field(model, k, v);
        x.iter_mut().for_each(|c| *c *= sign);
        x
    };
    let a_norm = |fv: &[f64]| -> f64 {
        (0..dim).filter(|&i| is_a[i]).map(|i| model.weights[i] * fv[i] * fv[i]).sum::<f64>().sqrt()
    };
    let h = opts.step;
    let imax = (opts.horizon / h).ceil() as usize;
    let origin_vec = &crits.iter().find(|c| c.id == origin).expect("origin among critical points").vec;

    // previous iterate, full states and derivatives
    let mut init = start.to_vec();
    for i in 0..dim {
        if !is_a[i] {
            init[i] = origin_vec[i];
        }
    }
    let mut old_states = vec![init.clone()];
    let mut old_ders = vec![vec![0.0; dim]];
    let mut prev_end: Option<Label> = None;
    let zero = vec![0.0; dim];

    for _it in 0..80 {
        let old_b = |i: usize| -> (&Vec<f64>, &Vec<f64>) {
            if i < old_states.len() {
                (&old_states[i], &old_ders[i])
            } else {
                (old_states.last().expect("nonempty"), &zero)
            }
        };
        // forward sweep over the a-components
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut ders: Vec<Vec<f64>> = Vec::new();
        let mut cur = start.to_vec();
        for i in 0..dim {
            if !is_a[i] {
                cur[i] = old_states[0][i];
            }
        }
        let mut end = None;
        let mut closest = vec![f64::INFINITY; crits.len()];
        let mut left_launch = false;
        for i in 0..=imax {
            let fi = f(&cur);
            states.push(cur.clone());
            ders.push(fi.clone());
            let dists: Vec<f64> = crits.iter().map(|c| distance_half(model, &cur, &c.vec)).collect();
            if !left_launch && dists.iter().zip(crits).all(|(d, c)| c.id != origin || *d > 2.0 * opts.r_launch) {
                left_launch = true;
            }
            if left_launch {
                for (c, d) in closest.iter_mut().zip(&dists) {
                    *c = c.min(*d);
                }
            }
            if i > 0 && a_norm(&fi) < opts.tol_conv
                && let Some(l) = classify(model, crits, &cur, opts.r_conv) {
                    end = Some(l);
                    break;
                }
            if i == imax {
                break;
            }
            let (b0, db0) = old_b(i);
            let (b1, db1) = old_b(i + 1);
            let mut y = cur.clone();
            for j in 0..dim {
                if !is_a[j] {
                    y[j] = hermite_mid(b0[j], b1[j], db0[j], db1[j], h);
                }
            }
            let stage = |y: &mut Vec<f64>, kk: &[f64], c: f64| {
                for j in 0..dim {
                    if is_a[j] {
                        y[j] = cur[j] + c * h * kk[j];
                    }
                }
            };
            stage(&mut y, &fi, 0.5);
            let k2 = f(&y);
            stage(&mut y, &k2, 0.5);
            let k3 = f(&y);
            for j in 0..dim {
                if !is_a[j] {
                    y[j] = b1[j];
                }
            }
            stage(&mut y, &k3, 1.0);
            let k4 = f(&y);
            let mut next = cur.clone();
            for j in 0..dim {
                next[j] = if is_a[j] { cur[j] + h / 6.0 * (fi[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) } else { b1[j] };
            }
            cur = next;
        }
        // backward sweep over the b-components
        let last = states.len() - 1;
        if let Some(l) = &end {
            let c = &crits.iter().find(|c| c.id == l.id).expect("classified").vec;
            for j in 0..dim {
                if !is_a[j] {
                    states[last][j] = c[j];
                }
            }
        }
        ders[last] = f(&states[last]);
        for i in (0..last).rev() {
            let hi = states[i + 1].clone();
            let k1 = ders[i + 1].clone();
            let mut y = hi.clone();
            for j in 0..dim {
                if is_a[j] {
                    y[j] = hermite_mid(states[i][j], hi[j], ders[i][j], k1[j], h);
                }
            }
            let stage = |y: &mut Vec<f64>, kk: &[f64], c: f64| {
                for j in 0..dim {
                    if !is_a[j] {
                        y[j] = hi[j] - c * h * kk[j];
                    }
                }
            };
            stage(&mut y, &k1, 0.5);
            let k2 = f(&y);
            stage(&mut y, &k2, 0.5);
            let k3 = f(&y);
            for j in 0..dim {
                if is_a[j] {
                    y[j] = states[i][j];
                }
            }
            stage(&mut y, &k3, 1.0);
            let k4 = f(&y);
            for j in 0..dim {
                if !is_a[j] {
                    states[i][j] = hi[j] - h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
            ders[i] = f(&states[i]);
        }
        let same_len = states.len() == old_states.len();
        let change = if same_len {
            states
                .iter()
                .zip(&old_states)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let done = same_len && end == prev_end && change < 1e-12;
        prev_end = end.clone();
        old_states = states;
        old_ders = ders;
        if done {
            return Ok(LpRun { states: old_states, end, closest });
        }
    }
    Err(Error::Resolution("dichotomy iteration did not settle".into()))
}

/// Connection count between two critical points of adjacent index.
#[derive(Clone, Debug)]
pub struct ConnectionCount {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub side: Side,
    pub launch_dim: usize,
    /// One trajectory per component, oriented from `from` to `to`.
    pub witnesses: Vec<MorseTrajectory>,
}

impl ConnectionCount {
    pub fn parity(&self) -> bool {
        self.count % 2 == 1
    }
}

fn to_trajectory(model: &LoopModel, run: &LpRun, launch: usize, reversed: bool, h: f64) -> MorseTrajectory {
    let mut states = run.states.clone();
    if reversed {
        states.reverse();
    }
    let times: Vec<f64> = (0..states.len()).map(|i| i as f64 * h).collect();
    let actions = states.iter().map(|v| model.action_vec(v)).collect();
    let (start, end) = if reversed {
        (run.end.as_ref().map(|l| l.id), Some(Label { id: launch, shift: vec![0; model.space.block()] }))
    } else {
        (Some(launch), run.end.clone())
    };
    MorseTrajectory { flow_time: times.last().copied().unwrap_or(0.0), times, states, actions, start, end }
}

/// Counts connecting trajectories from `x` to `y`, `m(x) - m(y) = 1`.
pub fn count_connections(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    x: &CriticalLoop,
    y: &CriticalLoop,
    opts: &MorseOptions,
) -> Result<ConnectionCount> {
    if x.m - y.m != 1 {
        return Err(Error::Dimension(format!("index difference {} between {} and {}", x.m - y.m, x.id, y.id)));
    }
    let n = model.space.n as i64;
    let d_fwd = (x.m + n) as usize;
    let d_bwd = (n - y.m) as usize;
    let side = if d_fwd <= d_bwd { Side::Forward } else { Side::Backward };
    let d = d_fwd.min(d_bwd);
    let mut out = ConnectionCount { from: x.id, to: y.id, count: 0, side, launch_dim: d, witnesses: Vec::new() };
    if x.action <= y.action + 1e-12 {
        return Ok(out);
    }
    let (base, target, reversed) = match side {
        Side::Forward => (x, y, false),
        Side::Backward => (y, x, true),
    };
    let e = launch_basis(model, &base.vec, side, d);
    let launch = |w: &[f64]| -> Result<(LpRun, Vec<f64>)> {
        let dir = &e * nalgebra::DVector::from_column_slice(w);
        let start: Vec<f64> = base.vec.iter().zip(dir.iter()).map(|(c, v)| c + opts.r_launch * v).collect();
        let run = lp_flow(model, k, crits, base.id, &start, reversed, opts)?;
        if run.end.is_none() {
            return Err(Error::UndecidedLaunch(format!("direction {w:?} from orbit {} did not settle", base.id)));
        }
        Ok((run, w.to_vec()))
    };
    match d {
        1 => {
            let runs: Vec<Result<(LpRun, Vec<f64>)>> = [[1.0], [-1.0]].par_iter().map(|w| launch(w)).collect();
            for r in runs {
                let (run, _) = r?;
                if run.end.as_ref().is_some_and(|l| l.id == target.id) {
                    out.count += 1;
                    out.witnesses.push(to_trajectory(model, &run, base.id, reversed, opts.step));
                }
            }
        }
        2 => {
            let (count, wit) = circle_count(model, k, crits, base, target, reversed, &e, opts)?;
            out.count = count;
            out.witnesses = wit;
        }
        _ => {
            return Err(Error::Resolution(format!(
                "launch sphere of dimension {d} between {} and {} is not supported",
                x.id, y.id
            )));
        }
    }
    Ok(out)
}

/// Counts label boundaries on a circle of launch directions that pass
/// through `target`.
#[allow(clippy::too_many_arguments)]
fn circle_count(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    base: &CriticalLoop,
    target: &CriticalLoop,
    reversed: bool,
    e: &DMatrix<f64>,
    opts: &MorseOptions,
) -> Result<(usize, Vec<MorseTrajectory>)> {
    let offset = 0.381_966_011_250_105_1;
    let run_at = |th: f64| -> Result<LpRun> {
        let dir = e.column(0) * th.cos() + e.column(1) * th.sin();
        let start: Vec<f64> = base.vec.iter().zip(dir.iter()).map(|(c, v)| c + opts.r_launch * v).collect();
        lp_flow(model, k, crits, base.id, &start, reversed, opts)
    };
    let boundary_hit = |lo: f64, hi: f64, llo: &Option<Label>, lhi: &Option<Label>| -> Result<Option<LpRun>> {
        let (mut lo, mut hi) = (lo, hi);
        let mut best: Option<LpRun> = None;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let r = run_at(mid)?;
            if let Some(l) = &r.end
                && l.id == target.id {
                    return Ok(Some(r));
                }
            if r.end == *llo {
                lo = mid;
            } else {
                hi = mid;
            }
            best = Some(r);
        }
        let Some(r) = best else { return Ok(None) };
        let skip: Vec<usize> =
            [Some(base.id), llo.as_ref().map(|l| l.id), lhi.as_ref().map(|l| l.id)].into_iter().flatten().collect();
        let nearest = crits
            .iter()
            .enumerate()
            .filter(|(_, c)| !skip.contains(&c.id))
            .min_by(|a, b| r.closest[a.0].total_cmp(&r.closest[b.0]))
            .map(|(_, c)| c.id);
        Ok((nearest == Some(target.id)).then_some(r))
    };
    let mut prev: Option<usize> = None;
    let mut mesh = opts.mesh;
    for _ in 0..=opts.max_refine {
        let thetas: Vec<f64> = (0..mesh).map(|j| 2.0 * PI * (j as f64 + offset) / mesh as f64).collect();
        let runs: Vec<Result<LpRun>> = thetas.par_iter().map(|&t| run_at(t)).collect();
        let runs: Vec<LpRun> = runs.into_iter().collect::<Result<_>>()?;
        let mut count = 0;
        let mut wit = Vec::new();
        for j in 0..mesh {
            let jn = (j + 1) % mesh;
            if runs[j].end.as_ref().is_some_and(|l| l.id == target.id) {
                count += 1;
                wit.push(to_trajectory(model, &runs[j], base.id, reversed, opts.step));
                continue;
            }
            if runs[j].end != runs[jn].end {
                if runs[jn].end.as_ref().is_some_and(|l| l.id == target.id) {
                    continue;
                }
                let hi = if jn == 0 { thetas[0] + 2.0 * PI } else { thetas[jn] };
                if let Some(r) = boundary_hit(thetas[j], hi, &runs[j].end, &runs[jn].end)? {
                    count += 1;
                    wit.push(to_trajectory(model, &r, base.id, reversed, opts.step));
                }
            }
        }
        if prev == Some(count) {
            return Ok((count, wit));
        }
        prev = Some(count);
        mesh *= 2;
    }
    Err(Error::Resolution("circle component count did not stabilize".into()))
}

/// All connection counts and the graded Morse complex.
pub fn morse_boundary(
    model: &LoopModel,
    k: &CompactPerturbation,
    crits: &[CriticalLoop],
    opts: &MorseOptions,
) -> Result<(GradedComplex, Vec<ConnectionCount>)> {
    let mut complex = GradedComplex::from_generators(crits.iter().map(|c| (c.id, c.m, c.action)));
    let pairs: Vec<(usize, usize)> = (0..crits.len())
        .flat_map(|i| (0..crits.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| crits[i].m - crits[j].m == 1)
        .collect();
    let counts: Vec<Result<ConnectionCount>> =
        pairs.par_iter().map(|&(i, j)| count_connections(model, k, crits, &crits[i], &crits[j], opts)).collect();
    let counts: Vec<ConnectionCount> = counts.into_iter().collect::<Result<_>>()?;
    for c in &counts {
        complex.set_entry(c.from, c.to, c.parity())?;
    }
    Ok((complex, counts))
}

//! Contractible 1-periodic orbits: Newton search on the time-1 map,
//! nondegeneracy, actions and Conley-Zehnder indices.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conley_zehnder::cz_index_generated;
use crate::error::{Error, Result};
use crate::hamiltonian::{SymplecticPath, TrigHamiltonian};
use crate::loopspace::{FourierLoop, GalerkinSpace, Sampler, lift_diff, reduce_point};

#[derive(Clone, Debug)]
pub struct OrbitOptions {
    pub seed_grid: usize,
    pub tol_orbit: f64,
    pub tol_deg: f64,
    pub tol_symp: f64,
    /// RK4 steps for the time-1 map.
    pub steps: usize,
    /// Number of stored `t`-samples per orbit.
    pub samples: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self { seed_grid: 8, tol_orbit: 1e-10, tol_deg: 1e-6, tol_symp: 1e-6, steps: 512, samples: 64 }
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    pub id: usize,
    /// Lifted points `x(j/M)`, `j = 0..M`, with `x(0)` in `[0,1)^{2n}`.
    pub samples: Vec<Vec<f64>>,
    pub as_loop: FourierLoop,
    pub action: f64,
    pub monodromy: SymplecticPath,
    pub cz: i64,
    pub nondeg_margin: f64,
    pub rel_index: Option<i64>,
    /// `|phi^1(x(0)) - x(0)|` mod `Z^{2n}`.
    pub residual: f64,
}

impl PeriodicOrbit {
    pub fn point(&self) -> &[f64] {
        &self.samples[0]
    }

    pub fn n(&self) -> usize {
        self.samples[0].len() / 2
    }

    pub fn is_constant(&self, tol: f64) -> bool {
        self.samples
            .iter()
            .all(|s| s.iter().zip(&self.samples[0]).all(|(a, b)| (a - b).abs() <= tol))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Distance mod `Z^{2n}`.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| lift_diff(x - y).powi(2)).sum::<f64>().sqrt()
}

fn fixed_point_residual(h: &TrigHamiltonian, p: &[f64], steps: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (q, dphi) = h.flow_map(p, steps);
    let f: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    (f, dphi)
}

/// Newton on `phi^1(p) - p` from one seed; `None` if it does not converge.
fn newton_seed(h: &TrigHamiltonian, seed: &[f64], opts: &OrbitOptions) -> Option<Vec<f64>> {
    let d = seed.len();
    let mut p = seed.to_vec();
    let (mut f, mut dphi) = fixed_point_residual(h, &p, opts.steps);
    let mut nf = norm(&f);
    let mut polished = false;
    for _ in 0..60 {
        if nf <= opts.tol_orbit {
            if polished || nf == 0.0 {
                return Some(p);
            }
            polished = true;
        }
        let jac = &dphi - DMatrix::<f64>::identity(d, d);
        let step = jac.lu().solve(&DVector::from_column_slice(&f))?;
        let mut scale = 1.0;
        let sn = step.norm();
        if sn > 0.25 {
            scale = 0.25 / sn;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a - scale * s).collect();
            let (ft, dt) = fixed_point_residual(h, &trial, opts.steps);
            let nt = norm(&ft);
            if nt < nf || (polished && nt <= opts.tol_orbit) {
                p = trial;
                f = ft;
                dphi = dt;
                nf = nt;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return if nf <= opts.tol_orbit { Some(p) } else { None };
        }
    }
    (nf <= opts.tol_orbit).then_some(p)
}

fn seeds(n: usize, g: usize) -> Vec<Vec<f64>> {
    let d = 2 * n;
    let total = g.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut s = vec![0.0; d];
            for c in s.iter_mut() {
                *c = (idx % g) as f64 / g as f64;
                idx /= g;
            }
            s
        })
        .collect()
}

/// Spectral action of uniformly sampled lifted loop points.
pub fn action_of(h: &TrigHamiltonian, samples: &[Vec<f64>]) -> f64 {
    let m = samples.len();
    let n = samples[0].len() / 2;
    let space = GalerkinSpace::new(n, (m - 1) / 2);
    let sampler = Sampler::new(space, m);
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    let mut v = vec![0.0; space.dim_total()];
    sampler.project(&flat, &mut v);
    let d = space.block();
    let mut sympl = 0.0;
    for k in space.modes().filter(|&k| k != 0) {
        let o = space.offset(k);
        let sq: f64 = v[o..o + d].iter().map(|x| x * x).sum();
        sympl -= PI * k as f64 * sq;
    }
    let int_h = (0..m).map(|j| h.eval_h(j as f64 / m as f64, &samples[j])).sum::<f64>() / m as f64;
    sympl + int_h
}

/// Conley-Zehnder index of the orbit through `x0`, regenerating the
/// monodromy path on finer grids as needed.
pub fn cz_of(h: &TrigHamiltonian, x0: &[f64], opts: &OrbitOptions) -> Result<i64> {
    let generate = |steps: usize| {
        let traj = h.integrate_with_variation(x0, steps);
        let dt = 1.0 / steps as f64;
        SymplecticPath {
            n: h.n,
            samples: traj.into_iter().enumerate().map(|(i, (_, psi))| (i as f64 * dt, psi)).collect(),
        }
    };
    cz_index_generated(generate, opts.steps, opts.tol_deg)
}

fn build_orbit(h: &TrigHamiltonian, p: &[f64], opts: &OrbitOptions) -> Result<PeriodicOrbit> {
    let base = reduce_point(p);
    let (path, pts) = h.monodromy(&base, opts.steps, opts.tol_symp)?;
    let margin = path.nondeg_margin();
    if margin <= opts.tol_deg {
        return Err(Error::DegenerateOrbit { point: base, margin });
    }
    let stride = opts.steps / opts.samples;
    let samples: Vec<Vec<f64>> = (0..opts.samples).map(|j| pts[j * stride].clone()).collect();
    let end = pts.last().expect("nonempty");
    let residual = torus_distance(end, &base);
    let nn = ((opts.samples - 1) / 2).min(32);
    let as_loop = crate::action_gradient::loop_from_samples(&samples, GalerkinSpace::new(h.n, nn));
    let action = action_of(h, &samples);
    let cz = cz_of(h, &base, opts)?;
    Ok(PeriodicOrbit {
        id: 0,
        samples,
        as_loop,
        action,
        monodromy: path,
        cz,
        nondeg_margin: margin,
        rel_index: None,
        residual,
    })
}

/// All contractible 1-periodic orbits reachable from the seed grid, sorted by
/// action descending; ties ordered by the base point lifted to `(-1/2, 1/2]`.
pub fn find_orbits(h: &TrigHamiltonian, opts: &OrbitOptions) -> Result<Vec<PeriodicOrbit>> {
    h.validate()?;
    if opts.samples < 8 || !opts.steps.is_multiple_of(opts.samples) {
        return Err(Error::Config("orbit steps must be a multiple of the sample count (>= 8)".into()));
    }
    let seeds = seeds(h.n, opts.seed_grid.max(1));
    let found: Vec<Option<Vec<f64>>> = seeds.par_iter().map(|s| newton_seed(h, s, opts)).collect();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (seed, r) in seeds.iter().zip(found) {
        match r {
            Some(p) => {
                let p = reduce_point(&p);
                if !points.iter().any(|q| torus_distance(q, &p) < 10.0 * opts.tol_orbit) {
                    points.push(p);
                }
            }
            None => log::debug!("orbit Newton did not converge from seed {seed:?}"),
        }
    }
    let mut orbits = points
        .par_iter()
        .map(|p| build_orbit(h, p, opts))
        .collect::<Result<Vec<_>>>()?;
    orbits.sort_by(|a, b| {
        let ka = (a.action * 1e9).round() + 0.0;
        let kb = (b.action * 1e9).round() + 0.0;
        kb.total_cmp(&ka).then_with(|| {
            a.point()
                .iter()
                .zip(b.point())
                .map(|(x, y)| lift_diff(*x).total_cmp(&lift_diff(*y)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for (i, o) in orbits.iter_mut().enumerate() {
        o.id = i;
    }
    Ok(orbits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_cos_cos() {
        let h = TrigHamiltonian::cos_cos(0.01);
        let orbits = find_orbits(&h, &OrbitOptions::default()).unwrap();
        assert_eq!(orbits.len(), 4);
        let want = [([0.0, 0.0], 0.02, 1), ([0.0, 0.5], 0.0, 0), ([0.5, 0.0], 0.0, 0), ([0.5, 0.5], -0.02, -1)];
        for (o, (p, a, mu)) in orbits.iter().zip(want) {
            assert!(torus_distance(o.point(), &p) < 1e-9, "{:?}", o.point());
            assert!((o.action - a).abs() < 1e-8);
            assert_eq!(o.cz, mu);
            assert!(o.residual < 1e-10);
        }
        let chi: i64 = orbits.iter().map(|o| if (o.cz + 1) % 2 == 0 { 1 } else { -1 }).sum();
        assert_eq!(chi, 0);
    }

    #[test]
    fn zero_hamiltonian_is_degenerate() {
        let r = find_orbits(&TrigHamiltonian::zero(1), &OrbitOptions::default());
        assert!(matches!(r, Err(Error::DegenerateOrbit { .. })));
    }

    #[test]
    fn single_mode_action() {
        let m = 64;
        let v = [0.3, -0.4];
        let samples: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / m as f64;
                vec![th.cos() * v[0] + th.sin() * v[1], th.cos() * v[1] - th.sin() * v[0]]
            })
            .collect();
        let a = action_of(&TrigHamiltonian::zero(1), &samples);
        assert!((a + PI * 0.25).abs() < 1e-14);
    }
}

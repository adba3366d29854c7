//! Staged execution of a run: orbits, indices, Morse, Floer and hybrid
//! counts, homology, verification checks and JSON artifacts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action_gradient::{CriticalLoop, LoopModel, critical_loops};
use crate::chain_algebra::{GF2Matrix, GradedComplex, homology_ranks, verify_chain_map, verify_complex};
use crate::config::{PerturbationPolicy, RunConfig};
use crate::conley_zehnder::{constant_generator_path, cz_index};
use crate::error::{Error, Result};
use crate::floer_solver::{self, FloerCount, FloerOptions, FredholmReport};
use crate::hybrid_iso::{self, HybridCount, HybridGuess, HybridOptions, TriangularReport};
use crate::loopspace::GalerkinSpace;
use crate::morse_complex::{CompactPerturbation, ConnectionCount, MorseOptions, Side, morse_boundary};
use crate::numfmt::{sig17, sig17_opt, sig17_vec};
use crate::orbits::{OrbitOptions, PeriodicOrbit, find_orbits};

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Orbits,
    Cz,
    Morse,
    Floer,
    Hybrid,
    Homology,
    VerifyAll,
}

/// One line of the summary.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(criterion: u32, name: &str, pass: bool, detail: String) -> Self {
        Self { criterion, name: name.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("[{}] criterion {:>2} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.criterion, self.name, self.detail)
    }
}

#[derive(Serialize)]
struct OrbitRecord {
    id: usize,
    #[serde(serialize_with = "sig17_vec")]
    point: Vec<f64>,
    #[serde(serialize_with = "sig17")]
    action: f64,
    cz: i64,
    #[serde(serialize_with = "sig17")]
    nondeg_margin: f64,
    #[serde(serialize_with = "sig17")]
    residual: f64,
    constant: bool,
}

#[derive(Serialize)]
struct IndexRecord {
    id: usize,
    #[serde(serialize_with = "sig17")]
    action: f64,
    m: i64,
    mu: i64,
}

#[derive(Serialize)]
struct MorseCountRecord {
    from: usize,
    to: usize,
    count: usize,
    side: Side,
    launch_dim: usize,
}

#[derive(Serialize)]
struct SolutionRecord {
    #[serde(serialize_with = "sig17")]
    energy: f64,
    #[serde(serialize_with = "sig17")]
    action_drop: f64,
    #[serde(serialize_with = "sig17")]
    t_mode_energy: f64,
    #[serde(serialize_with = "sig17_opt")]
    tail_rate: Option<f64>,
    multistart_only: bool,
}

#[derive(Serialize)]
struct FloerCountRecord {
    from: usize,
    to: usize,
    count: usize,
    attempts: usize,
    converged: usize,
    warnings: Vec<String>,
    solutions: Vec<SolutionRecord>,
}

#[derive(Serialize)]
struct HybridCountRecord {
    from: usize,
    to: usize,
    count: usize,
    attempts: usize,
    converged: usize,
    near_broken: usize,
    warnings: Vec<String>,
    #[serde(serialize_with = "sig17_vec")]
    energies: Vec<f64>,
    #[serde(serialize_with = "sig17_vec")]
    action_drops: Vec<f64>,
}

#[derive(Serialize)]
struct ConstantHybridRecord {
    id: usize,
    #[serde(serialize_with = "sig17")]
    energy: f64,
    #[serde(serialize_with = "sig17")]
    min_singular_value: f64,
}

#[derive(Serialize)]
struct HomologyRecord {
    degree: i64,
    generators: usize,
    rank_morse: usize,
    rank_floer: usize,
    betti: usize,
}

/// Everything computed by a run, filled stage by stage.
pub struct Run {
    pub config: RunConfig,
    pub model: LoopModel,
    pub orbits: Vec<PeriodicOrbit>,
    pub crits: Vec<CriticalLoop>,
    pub perturbation: Option<CompactPerturbation>,
    pub morse: Option<(GradedComplex, Vec<ConnectionCount>)>,
    pub floer: Option<(GradedComplex, Vec<FloerCount>)>,
    pub hybrid: Option<(BTreeMap<i64, GF2Matrix>, Vec<HybridCount>, TriangularReport)>,
    pub constant_hybrids: Vec<(usize, f64, f64)>,
    pub checks: Vec<Check>,
    artifacts: BTreeMap<String, String>,
}

impl Run {
    pub fn orbit_options(&self) -> OrbitOptions {
        OrbitOptions { tol_orbit: self.config.tol_orbit, tol_deg: self.config.tol_deg, tol_symp: self.config.tol_symp, ..Default::default() }
    }

    pub fn morse_options(&self) -> MorseOptions {
        MorseOptions { r_launch: self.config.r_launch, r_conv: self.config.r_conv, tol_conv: self.config.tol_conv, ..Default::default() }
    }

    pub fn floer_options(&self) -> FloerOptions {
        FloerOptions {
            half_length: self.config.l,
            m_s: self.config.m_s,
            tol_floer: self.config.tol_floer,
            tol_spec: self.config.tol_spec,
            multistart: self.config.multistart,
            seed: self.config.seed,
            ..Default::default()
        }
    }

    pub fn hybrid_options(&self) -> HybridOptions {
        HybridOptions {
            l_m: self.config.l_m,
            half_length: self.config.l,
            m_m: self.config.m_m,
            m_s: self.config.m_s,
            tol_floer: self.config.tol_floer,
            tol_match: self.config.tol_match,
            tol_spec: self.config.tol_spec,
            r_conv: self.config.r_conv,
            multistart: self.config.multistart,
            seed: self.config.seed,
            ..Default::default()
        }
    }

    /// Artifact file names and their JSON text.
    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.artifacts
    }

    fn put<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("serializing {name}: {e}")))?;
        self.artifacts.insert(name.into(), text + "\n");
        Ok(())
    }

    /// Orbit census, Conley-Zehnder and relative indices.
    pub fn start(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hamiltonian();
        let model = LoopModel::new(&h, GalerkinSpace::new(config.n, config.big_n));
        let mut run = Run {
            config: config.clone(),
            model,
            orbits: Vec::new(),
            crits: Vec::new(),
            perturbation: None,
            morse: None,
            floer: None,
            hybrid: None,
            constant_hybrids: Vec::new(),
            checks: Vec::new(),
            artifacts: BTreeMap::new(),
        };
        run.orbits = find_orbits(&h, &run.orbit_options())?;
        let records: Vec<OrbitRecord> = run
            .orbits
            .iter()
            .map(|o| OrbitRecord {
                id: o.id,
                point: o.point().to_vec(),
                action: o.action,
                cz: o.cz,
                nondeg_margin: o.nondeg_margin,
                residual: o.residual,
                constant: o.is_constant(1e-12),
            })
            .collect();
        run.put("orbits.json", &records)?;
        run.crits = critical_loops(&run.model, &run.orbits, config.tol_spec)?;
        for (o, c) in run.orbits.iter_mut().zip(&run.crits) {
            o.rel_index = Some(c.m);
        }
        let idx: Vec<IndexRecord> = run.crits.iter().map(|c| IndexRecord { id: c.id, action: c.action, m: c.m, mu: c.mu }).collect();
        run.put("indices.json", &idx)?;
        let n = config.n as i64;
        let chi: i64 = run.orbits.iter().map(|o| if (o.cz + n) % 2 == 0 { 1 } else { -1 }).sum();
        let all_nondeg = run.orbits.iter().all(|o| o.nondeg_margin > config.tol_deg);
        run.checks.push(Check::new(
            3,
            "orbit census",
            !run.orbits.is_empty() && all_nondeg && chi == 0,
            format!("{} nondegenerate orbits, Euler characteristic {chi}", run.orbits.len()),
        ));
        let agree = run.crits.iter().all(|c| c.m == c.mu);
        run.checks.push(Check::new(
            4,
            "index agreement",
            agree,
            format!("m = mu for {}/{} orbits (N and N+2)", run.crits.iter().filter(|c| c.m == c.mu).count(), run.crits.len()),
        ));
        Ok(run)
    }

    fn perturbation_for(&self, attempt: u64) -> CompactPerturbation {
        let centers: Vec<Vec<f64>> = self.crits.iter().map(|c| c.vec.clone()).collect();
        CompactPerturbation::random(
            &self.model,
            &centers,
            self.config.perturbation_magnitude * (attempt + 1) as f64,
            self.config.r_conv,
            self.config.seed.wrapping_add(attempt),
        )
    }

    pub fn run_morse(&mut self) -> Result<()> {
        let opts = self.morse_options();
        let attempts: Vec<CompactPerturbation> = match self.config.perturbation {
            PerturbationPolicy::Off => vec![CompactPerturbation::zero(self.model.space)],
            PerturbationPolicy::Fixed => vec![self.perturbation_for(0)],
            PerturbationPolicy::Auto => std::iter::once(CompactPerturbation::zero(self.model.space))
                .chain((0..3).map(|i| self.perturbation_for(i)))
                .collect(),
        };
        let mut last = None;
        for k in attempts {
            match morse_boundary(&self.model, &k, &self.crits, &opts) {
                Ok(r) => {
                    self.perturbation = Some(k);
                    self.morse = Some(r);
                    last = None;
                    break;
                }
                Err(e @ Error::UndecidedLaunch(_)) => {
                    log::warn!("Morse counting undecided ({e}); retrying with a perturbation");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last {
            return Err(e);
        }
        let (cx, counts) = self.morse.as_ref().expect("set above");
        #[derive(Serialize)]
        struct MorseArtifact<'a> {
            perturbation: &'a CompactPerturbation,
            counts: Vec<MorseCountRecord>,
            boundary: &'a BTreeMap<i64, GF2Matrix>,
            generators: &'a BTreeMap<i64, Vec<crate::chain_algebra::Generator>>,
        }
        let art = MorseArtifact {
            perturbation: self.perturbation.as_ref().expect("set above"),
            counts: counts
                .iter()
                .map(|c| MorseCountRecord { from: c.from, to: c.to, count: c.count, side: c.side, launch_dim: c.launch_dim })
                .collect(),
            boundary: &cx.boundary,
            generators: &cx.generators,
        };
        let text = serde_json::to_string_pretty(&art).map_err(|e| Error::Config(e.to_string()))?;
        self.artifacts.insert("morse.json".into(), text + "\n");
        Ok(())
    }

    pub fn run_floer(&mut self) -> Result<()> {
        if self.morse.is_none() {
            self.run_morse()?;
        }
        let (_, morse_counts) = self.morse.as_ref().expect("morse ran");
        let r = floer_solver::floer_boundary(&self.model, &self.crits, morse_counts, &self.floer_options())?;
        let records: Vec<FloerCountRecord> = r
            .1
            .iter()
            .map(|c| FloerCountRecord {
                from: c.from,
                to: c.to,
                count: c.count,
                attempts: c.attempts,
                converged: c.converged,
                warnings: c.warnings.clone(),
                solutions: c
                    .solutions
                    .iter()
                    .map(|s| SolutionRecord {
                        energy: s.energy,
                        action_drop: s.action_drop,
                        t_mode_energy: s.t_mode_energy,
                        tail_rate: s.tail_rate,
                        multistart_only: s.multistart_only,
                    })
                    .collect(),
            })
            .collect();
        #[derive(Serialize)]
        struct FloerArtifact<'a> {
            counts: Vec<FloerCountRecord>,
            boundary: &'a BTreeMap<i64, GF2Matrix>,
        }
        let text = serde_json::to_string_pretty(&FloerArtifact { counts: records, boundary: &r.0.boundary })
            .map_err(|e| Error::Config(e.to_string()))?;
        self.artifacts.insert("floer.json".into(), text + "\n");
        self.floer = Some(r);
        Ok(())
    }

    /// Full cylinder dumps, written only on request.
    pub fn cylinder_dump(&self) -> Result<String> {
        let grids: Vec<&floer_solver::FloerSolution> =
            self.floer.iter().flat_map(|(_, c)| c.iter().flat_map(|c| c.solutions.iter())).collect();
        serde_json::to_string(&grids).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_hybrid(&mut self) -> Result<()> {
        if self.floer.is_none() {
            self.run_floer()?;
        }
        let k = self.perturbation.clone().expect("morse ran");
        let opts = self.hybrid_options();
        let counts = hybrid_iso::hybrid_counts(&self.model, &k, &self.crits, &opts)?;
        let cm = &self.morse.as_ref().expect("morse ran").0;
        let cf = &self.floer.as_ref().expect("floer ran").0;
        let phi = hybrid_iso::build_phi(cm, cf, &counts)?;
        let tri = hybrid_iso::check_triangular(&phi, cm, cf)?;
        self.constant_hybrids.clear();
        for x in &self.crits {
            let l = opts.half_length.unwrap_or_else(|| floer_solver::default_half_length(&self.model, &x.vec, &x.vec));
            let g = HybridGuess::constant(&self.model, &x.vec, &opts, l);
            let sol = hybrid_iso::solve_hybrid(&self.model, &k, x, x, &x.vec, &g, &opts)?;
            let smin = hybrid_iso::min_singular_value(&self.model, &k, &x.vec, &x.vec, &g, &opts)?;
            self.constant_hybrids.push((x.id, sol.energy, smin));
        }
        #[derive(Serialize)]
        struct HybridArtifact<'a> {
            generators: &'a BTreeMap<i64, Vec<crate::chain_algebra::Generator>>,
            phi: &'a BTreeMap<i64, GF2Matrix>,
            triangular: &'a TriangularReport,
            counts: Vec<HybridCountRecord>,
            constant_solutions: Vec<ConstantHybridRecord>,
        }
        let art = HybridArtifact {
            generators: &cm.generators,
            phi: &phi,
            triangular: &tri,
            counts: counts
                .iter()
                .map(|c| HybridCountRecord {
                    from: c.from,
                    to: c.to,
                    count: c.count,
                    attempts: c.attempts,
                    converged: c.converged,
                    near_broken: c.near_broken,
                    warnings: c.warnings.clone(),
                    energies: c.solutions.iter().map(|s| s.energy).collect(),
                    action_drops: c.solutions.iter().map(|s| s.action_drop).collect(),
                })
                .collect(),
            constant_solutions: self
                .constant_hybrids
                .iter()
                .map(|&(id, energy, smin)| ConstantHybridRecord { id, energy, min_singular_value: smin })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&art).map_err(|e| Error::Config(e.to_string()))?;
        self.artifacts.insert("hybrid.json".into(), text + "\n");
        self.hybrid = Some((phi, counts, tri));
        Ok(())
    }

    /// Homology ranks and all structural checks on the computed complexes.
    pub fn run_homology(&mut self) -> Result<()> {
        if self.hybrid.is_none() {
            self.run_hybrid()?;
        }
        let cm = self.morse.as_ref().expect("morse ran").0.clone();
        let cf = self.floer.as_ref().expect("floer ran").0.clone();
        let vm = verify_complex(&cm)?;
        let vf = verify_complex(&cf)?;
        self.checks.push(Check::new(
            5,
            "complex identities",
            vm.pass && vf.pass,
            format!("Morse d^2 = 0: {}, Floer d^2 = 0: {}", vm.pass, vf.pass),
        ));
        self.checks.push(self.energy_check());
        let (phi, _, tri) = self.hybrid.as_ref().expect("hybrid ran");
        let chain = verify_chain_map(phi, &cm, &cf)?;
        self.checks.push(Check::new(
            8,
            "chain isomorphism",
            chain.pass && tri.invertible,
            format!("upper triangular with unit diagonal, chain map: {}, invertible: {}", chain.pass, tri.invertible),
        ));
        if !(vm.pass && vf.pass) {
            return Err(Error::Structural("boundary operator does not square to zero".into()));
        }
        let rm = homology_ranks(&cm)?;
        let rf = homology_ranks(&cf)?;
        let n = self.config.n as i64;
        let degrees: Vec<i64> = (-n..=n).collect();
        let records: Vec<HomologyRecord> = degrees
            .iter()
            .map(|&k| HomologyRecord {
                degree: k,
                generators: cm.count(k),
                rank_morse: rm.get(&k).copied().unwrap_or(0),
                rank_floer: rf.get(&k).copied().unwrap_or(0),
                betti: binomial(2 * n, k + n),
            })
            .collect();
        let extra = rm.keys().chain(rf.keys()).any(|k| !degrees.contains(k) && (rm.get(k).copied().unwrap_or(0) > 0 || rf.get(k).copied().unwrap_or(0) > 0));
        let ok = !extra && records.iter().all(|r| r.rank_morse == r.rank_floer && r.rank_floer == r.betti);
        let ranks: Vec<String> = records.iter().rev().map(|r| r.rank_floer.to_string()).collect();
        self.checks.push(Check::new(
            9,
            "homology",
            ok,
            format!("ranks ({}) at mu = {}..{}, Morse = Floer = torus Betti numbers: {ok}", ranks.join(", "), n, -n),
        ));
        self.put("homology.json", &records)?;
        Ok(())
    }

    fn energy_check(&self) -> Check {
        let mut worst: f64 = 0.0;
        let mut min_rate = f64::INFINITY;
        let mut count = 0;
        for c in self.floer.iter().flat_map(|(_, c)| c.iter()) {
            for s in &c.solutions {
                count += 1;
                worst = worst.max((s.energy - s.action_drop).abs());
                min_rate = min_rate.min(s.tail_rate.unwrap_or(f64::NEG_INFINITY));
            }
        }
        for c in self.hybrid.iter().flat_map(|(_, c, _)| c.iter()) {
            for s in &c.solutions {
                count += 1;
                worst = worst.max((s.energy - s.action_drop).abs());
            }
        }
        for &(_, e, _) in &self.constant_hybrids {
            count += 1;
            worst = worst.max(e.abs());
        }
        let rate_ok = min_rate > 0.0;
        Check::new(
            6,
            "energy identity",
            worst < 1e-4 && rate_ok,
            format!(
                "{count} solutions, max |E - dA| = {worst:.3e}, min tail rate {}",
                if min_rate.is_finite() { format!("{min_rate:.4}") } else { "n/a".into() }
            ),
        )
    }

    /// Stand-alone diagnostics: index oracle, derivatives, Fredholm sweep,
    /// integration by parts and the trace inequality.
    pub fn run_diagnostics(&mut self) -> Result<()> {
        let seed = self.config.seed;
        self.checks.push(cz_diagonal_check(seed, 50)?);
        self.checks.push(derivative_check(&self.model.h, seed)?);
        let (check, rows) = fredholm_sweep(self.config.n, self.config.sigma_tol)?;
        self.checks.push(check);
        self.artifacts.insert("fredholm.csv".into(), fredholm_csv(&rows));
        self.checks.push(integration_by_parts_check(seed)?);
        self.checks.push(trace_check(seed)?);
        Ok(())
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes every artifact plus `summary.json` into `dir`.
    pub fn write(&mut self, dir: &Path, full: bool) -> Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct Summary<'a> {
            orbits: usize,
            all_pass: bool,
            checks: &'a [Check],
        }
        let mut checks = self.checks.clone();
        checks.sort_by_key(|c| c.criterion);
        let summary = Summary { orbits: self.orbits.len(), all_pass: self.all_pass(), checks: &checks };
        self.put("summary.json", &summary)?;
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, text) in &self.artifacts {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            written.push(p);
        }
        if full && self.floer.is_some() {
            let p = dir.join("cylinders.json");
            std::fs::write(&p, self.cylinder_dump()?)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Runs all stages up to `stage`.
pub fn run_pipeline(config: &RunConfig, stage: Stage) -> Result<Run> {
    let mut run = Run::start(config)?;
    if stage >= Stage::Morse {
        run.run_morse()?;
    }
    if stage >= Stage::Floer {
        run.run_floer()?;
    }
    if stage >= Stage::Hybrid {
        run.run_hybrid()?;
    }
    if stage >= Stage::Homology {
        run.run_homology()?;
    }
    if stage >= Stage::VerifyAll {
        run.run_diagnostics()?;
    }
    Ok(run)
}

fn binomial(n: i64, k: i64) -> usize {
    if k < 0 || k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) as usize / (i + 1) as usize)
}

/// Diagonal paths `exp(J0 lambda t)` against the floor formula.
pub fn cz_diagonal_check(seed: u64, count: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc2);
    let mut bad = Vec::new();
    for _ in 0..count {
        let n = rng.random_range(1..=2usize);
        let lambda = loop {
            let l: f64 = rng.random_range(-6.0 * PI..6.0 * PI);
            let k = (l / (2.0 * PI)).round();
            if (l - 2.0 * PI * k).abs() > 0.1 {
                break l;
            }
        };
        let s = nalgebra::DMatrix::<f64>::identity(2 * n, 2 * n) * lambda;
        let got = cz_index(&constant_generator_path(&s, 256), 1e-6)?;
        let want = -2 * n as i64 * (lambda / (2.0 * PI)).floor() as i64 - n as i64;
        if got != want {
            bad.push(format!("lambda {lambda}: {got} != {want}"));
        }
    }
    Ok(Check::new(1, "CZ diagonal oracle", bad.is_empty(), if bad.is_empty() { format!("{count} random paths exact") } else { bad.join("; ") }))
}

/// Central differences of the action against the gradient and of the
/// gradient against the Jacobian, at N = 4 and 8.
pub fn derivative_check(h: &crate::hamiltonian::TrigHamiltonian, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    for nn in [4, 8] {
        let model = LoopModel::new(h, GalerkinSpace::new(h.n, nn));
        let dim = model.dim();
        for _ in 0..20 {
            let v: Vec<f64> = (0..dim)
                .map(|i| {
                    let k = model.space.mode_of(i).abs() as f64;
                    if k == 0.0 { rng.random_range(0.0..1.0) } else { rng.random_range(-0.1..0.1) / (1.0 + k * k) }
                })
                .collect();
            let e: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let step = 1e-5;
            let shifted = |t: f64| -> Vec<f64> { v.iter().zip(&e).map(|(a, b)| a + t * b).collect() };
            let fd_a = (model.action_vec(&shifted(step)) - model.action_vec(&shifted(-step))) / (2.0 * step);
            let g = model.field_f(&v);
            let an_a: f64 = -g.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>();
            worst = worst.max((fd_a - an_a).abs() / an_a.abs().max(1e-3));
            let fp = model.field_f(&shifted(step));
            let fm = model.field_f(&shifted(-step));
            let jac = model.jac_f(&v) * nalgebra::DVector::from_column_slice(&e);
            let num: f64 = (0..dim).map(|i| ((fp[i] - fm[i]) / (2.0 * step) - jac[i]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(num / jac.norm().max(1e-3));
        }
    }
    Ok(Check::new(2, "gradient and Hessian", worst < 1e-6, format!("max relative error {worst:.3e} over 40 points")))
}

/// `fredholm_diag` over `(a, b)` in `{pi, 3pi, 5pi}^2` with `n` degrees of freedom.
#[allow(clippy::type_complexity)]
pub fn fredholm_sweep(n: usize, sigma_rel: f64) -> Result<(Check, Vec<(f64, f64, FredholmReport, i64)>)> {
    let space = GalerkinSpace::new(n, 4);
    let vals = [PI, 3.0 * PI, 5.0 * PI];
    let mut rows = Vec::new();
    let mut ok = true;
    for &a in &vals {
        for &b in &vals {
            let delta = model_gap(space, a, b);
            let r = floer_solver::fredholm_diag_tol(a, b, space, 12.0 / delta, 128, sigma_rel)?;
            let p = floer_solver::predicted_index(n, a, b);
            let ka = (a / (2.0 * PI)).floor() as i64;
            let kb = (b / (2.0 * PI)).floor() as i64;
            let want_ker = 2 * n as i64 * (kb - ka).max(0);
            let want_coker = 2 * n as i64 * (ka - kb).max(0);
            ok &= r.index == p && r.dim_ker as i64 == want_ker && r.dim_coker as i64 == want_coker;
            rows.push((a, b, r, p));
        }
    }
    let detail = rows.iter().map(|(a, b, r, _)| format!("({:.0}pi,{:.0}pi)->({},{})", a / PI, b / PI, r.dim_ker, r.dim_coker)).collect::<Vec<_>>().join(" ");
    Ok((Check::new(7, "Fredholm sweep", ok, detail), rows))
}

/// CSV rows `a, b, dim_ker, dim_coker, index, predicted_index`.
pub fn fredholm_csv(rows: &[(f64, f64, FredholmReport, i64)]) -> String {
    let mut csv = String::from("a,b,dim_ker,dim_coker,index,predicted_index\n");
    for (a, b, r, p) in rows {
        csv.push_str(&format!("{a:.16e},{b:.16e},{},{},{},{p}\n", r.dim_ker, r.dim_coker, r.index));
    }
    csv
}

/// Smallest decay rate of the two model operators.
pub fn model_gap(space: GalerkinSpace, a: f64, b: f64) -> f64 {
    space
        .modes()
        .map(|k| {
            let kk = 2.0 * PI * k as f64;
            let ra = if k == 0 { -a } else { (kk - a) / kk.abs() };
            ra.abs().min((kk - b).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_cylinder(rng: &mut ChaCha8Rng, space: GalerkinSpace) -> Vec<[f64; 4]> {
    (0..space.dim_total() * 3)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(0.3..1.5), rng.random_range(0.0..2.0 * PI), 0.0])
        .collect()
}

fn sample_cylinder(space: GalerkinSpace, coef: &[[f64; 4]], s0: f64, s1: f64, m: usize) -> Vec<Vec<f64>> {
    let dim = space.dim_total();
    let h = (s1 - s0) / (m - 1) as f64;
    (0..m)
        .map(|i| {
            let s = s0 + i as f64 * h;
            (0..dim)
                .map(|c| {
                    let damp = 1.0 / (1.0 + space.mode_of(c).abs() as f64);
                    coef[3 * c..3 * c + 3].iter().map(|[amp, om, ph, _]| damp * amp * (om * s + ph).cos()).sum()
                })
                .collect()
        })
        .collect()
}

/// Least-squares slope of `log err` against `log M`, negated.
pub fn convergence_order(ms: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.abs().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

/// Both Cauchy-Riemann energy identities on 20 random cylinders over
/// `[-2, 2]`, fitting the order of the discrete defect under doubling.
pub fn integration_by_parts_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1b);
    let space = GalerkinSpace::new(1, 3);
    let ms = [64, 128, 256, 512];
    let mut min_order = f64::INFINITY;
    for _ in 0..20 {
        let coef = random_cylinder(&mut rng, space);
        for sign in [1.0, -1.0] {
            let errs: Vec<f64> = ms
                .iter()
                .map(|&m| {
                    let v = sample_cylinder(space, &coef, -2.0, 2.0, m);
                    floer_solver::cauchy_riemann_defect(space, &v, 4.0 / (m - 1) as f64, sign)
                })
                .collect();
            min_order = min_order.min(convergence_order(&ms, &errs));
        }
    }
    Ok(Check::new(10, "discrete integration by parts", min_order >= 3.5, format!("minimum fitted order {min_order:.2} over 40 fits")))
}

/// `|u(0)|_{1/2} <= sqrt 2 |u|_{H^1}` on 50 random decaying half-cylinders.
pub fn trace_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7c);
    let space = GalerkinSpace::new(1, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let coef = random_cylinder(&mut rng, space);
        let rate: f64 = rng.random_range(0.2..3.0);
        let l = 40.0 / rate;
        let mut v = sample_cylinder(space, &coef, 0.0, l, 512);
        let h = l / 511.0;
        for (i, slice) in v.iter_mut().enumerate() {
            let d = (-rate * i as f64 * h).exp();
            slice.iter_mut().for_each(|x| *x *= d);
        }
        worst = worst.max(floer_solver::trace_ratio(space, &v, h));
    }
    Ok(Check::new(11, "trace inequality", worst <= 2f64.sqrt(), format!("max ratio {worst:.4} (bound 1.4142)")))
}

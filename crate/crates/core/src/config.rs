//! Run configuration read from TOML.
//!
//! All keys are top level except the `[[term]]` list of Hamiltonian terms.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{TrigHamiltonian, TrigTerm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationPolicy {
    /// No perturbation of the gradient flow.
    Off,
    /// Unperturbed first; seeded perturbations on undecided launches.
    Auto,
    /// Always use a seeded perturbation of the given magnitude.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    #[serde(rename = "N", default = "defaults::big_n")]
    pub big_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "M_s", default = "defaults::m_s")]
    pub m_s: usize,
    /// Floer half-length; absent means `12 / spectral gap`.
    #[serde(rename = "L", default)]
    pub l: Option<f64>,
    #[serde(rename = "L_m", default = "defaults::l_m")]
    pub l_m: f64,
    #[serde(rename = "M_m", default = "defaults::m_s")]
    pub m_m: usize,
    #[serde(default = "defaults::tol_orbit")]
    pub tol_orbit: f64,
    #[serde(default = "defaults::tol_deg")]
    pub tol_deg: f64,
    #[serde(default = "defaults::tol_floer")]
    pub tol_floer: f64,
    #[serde(default = "defaults::tol_match")]
    pub tol_match: f64,
    #[serde(default = "defaults::tol_conv")]
    pub tol_conv: f64,
    #[serde(default = "defaults::tol_spec")]
    pub tol_spec: f64,
    #[serde(default = "defaults::tol_symp")]
    pub tol_symp: f64,
    /// Relative singular value threshold.
    #[serde(default = "defaults::sigma_tol")]
    pub sigma_tol: f64,
    #[serde(default = "defaults::r_launch")]
    pub r_launch: f64,
    #[serde(default = "defaults::r_conv")]
    pub r_conv: f64,
    #[serde(default = "defaults::multistart")]
    pub multistart: usize,
    #[serde(default = "defaults::perturbation")]
    pub perturbation: PerturbationPolicy,
    #[serde(default = "defaults::magnitude")]
    pub perturbation_magnitude: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, rename = "term")]
    pub terms: Vec<TrigTerm>,
}

mod defaults {
    use super::PerturbationPolicy;
    pub fn big_n() -> usize {
        4
    }
    pub fn m_s() -> usize {
        256
    }
    pub fn l_m() -> f64 {
        200.0
    }
    pub fn tol_orbit() -> f64 {
        1e-10
    }
    pub fn tol_deg() -> f64 {
        1e-6
    }
    pub fn tol_floer() -> f64 {
        1e-8
    }
    pub fn tol_match() -> f64 {
        1e-6
    }
    pub fn tol_conv() -> f64 {
        1e-6
    }
    pub fn tol_spec() -> f64 {
        1e-8
    }
    pub fn tol_symp() -> f64 {
        1e-6
    }
    pub fn sigma_tol() -> f64 {
        1e-6
    }
    pub fn r_launch() -> f64 {
        1e-3
    }
    pub fn r_conv() -> f64 {
        1e-2
    }
    pub fn multistart() -> usize {
        32
    }
    pub fn perturbation() -> PerturbationPolicy {
        PerturbationPolicy::Auto
    }
    pub fn magnitude() -> f64 {
        1e-3
    }
}

impl RunConfig {
    /// Defaults around a given Hamiltonian.
    pub fn for_hamiltonian(h: &TrigHamiltonian) -> Self {
        let mut c: RunConfig = toml::from_str(&format!("n = {}", h.n)).expect("defaults parse");
        c.terms = h.terms.clone();
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn hamiltonian(&self) -> TrigHamiltonian {
        TrigHamiltonian { n: self.n, terms: self.terms.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.big_n < 2 {
            return Err(Error::Config(format!("N must be at least 2, got {}", self.big_n)));
        }
        if self.m_s < 16 || self.m_m < 16 {
            return Err(Error::Config("M_s and M_m must be at least 16".into()));
        }
        let positive = [
            ("L_m", self.l_m),
            ("tol_orbit", self.tol_orbit),
            ("tol_deg", self.tol_deg),
            ("tol_floer", self.tol_floer),
            ("tol_match", self.tol_match),
            ("tol_conv", self.tol_conv),
            ("tol_spec", self.tol_spec),
            ("tol_symp", self.tol_symp),
            ("sigma_tol", self.sigma_tol),
            ("r_launch", self.r_launch),
            ("r_conv", self.r_conv),
            ("perturbation_magnitude", self.perturbation_magnitude),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(l) = self.l
            && !(l.is_finite() && l > 0.0)
        {
            return Err(Error::Config(format!("L must be positive, got {l}")));
        }
        self.hamiltonian().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: &str = r#"
n = 1
seed = 3
[[term]]
a = 0.01
m = [1, 0]
[[term]]
a = 0.01
m = [0, 1]
"#;

    #[test]
    fn parse_defaults() {
        let c = RunConfig::parse(EPS).unwrap();
        assert_eq!(c.big_n, 4);
        assert_eq!(c.hamiltonian(), TrigHamiltonian::cos_cos(0.01));
        assert_eq!(c.perturbation, PerturbationPolicy::Auto);
        assert_eq!(RunConfig::for_hamiltonian(&c.hamiltonian()).terms, c.terms);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse(&format!("tol_flore = 1e-8\n{EPS}")), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse(&format!("N = 1\n{EPS}")), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse(&format!("tol_spec = -1.0\n{EPS}")), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("n = 1\n[[term]]\na = 1.0\nm = [1]\n"), Err(Error::Config(_))));
    }
}

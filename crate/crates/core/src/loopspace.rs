//! Truncated Fourier loops in the torus.
//!
//! A loop is stored as `x = [x0] + sum_{0<|k|<=N} exp(2 pi k J0 t) x_k` with
//! `J0 = [[0, I], [-I, 0]]`. Numerical modules work on the flat *mode vector*
//! of length `2n(2N+1)`, blocks ordered `k = -N, ..., N` with the base in the
//! middle. In these coordinates the L2 inner product is Euclidean.

use std::f64::consts::PI;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig17_vec;

/// Galerkin truncation data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalerkinSpace {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
}

impl GalerkinSpace {
    pub fn new(n: usize, big_n: usize) -> Self {
        assert!(n >= 1 && big_n >= 1, "GalerkinSpace needs n >= 1 and N >= 1");
        Self { n, big_n }
    }

    /// Real dimension of one mode block.
    pub fn block(&self) -> usize {
        2 * self.n
    }

    pub fn dim_total(&self) -> usize {
        2 * self.n * (2 * self.big_n + 1)
    }

    /// Dimension of the truncated reference space `R^n x H^+`.
    pub fn dim_v(&self) -> usize {
        self.n + 2 * self.n * self.big_n
    }

    /// Offset of mode `k` in the flat mode vector.
    pub fn offset(&self, k: i64) -> usize {
        debug_assert!(k.unsigned_abs() as usize <= self.big_n);
        (k + self.big_n as i64) as usize * self.block()
    }

    /// Mode index of a flat coordinate.
    pub fn mode_of(&self, idx: usize) -> i64 {
        (idx / self.block()) as i64 - self.big_n as i64
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let nn = self.big_n as i64;
        -nn..=nn
    }
}

/// `(J0 v)` for a vector of length `2n`.
pub fn apply_j(v: &[f64], out: &mut [f64]) {
    let n = v.len() / 2;
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
}

/// Reduce a point of `R^{2n}` to `[0,1)^{2n}`.
pub fn reduce_point(p: &[f64]) -> Vec<f64> {
    p.iter()
        .map(|&x| {
            let r = x - x.floor();
            if r >= 1.0 { 0.0 } else { r }
        })
        .collect()
}

/// Lift a difference of base points to the representative in `(-1/2, 1/2]`.
pub fn lift_diff(d: f64) -> f64 {
    let r = d - d.round();
    if r <= -0.5 { r + 1.0 } else { r }
}

/// Weight of mode `k` in the `H^s` inner product.
///
/// The base block has weight 1 and mode `k != 0` has `(2 pi |k|)^{2s}`.
/// At `s = 1/2` this is `2 pi |k|`; at `s = 0` it is the L2 weight.
pub fn mode_weight(k: i64, s: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        (2.0 * PI * k.unsigned_abs() as f64).powf(2.0 * s)
    }
}

/// Which part of a loop `project` keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Plus,
    Minus,
    Zero,
}

/// A truncated loop.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierLoop {
    pub n: usize,
    pub big_n: usize,
    pub base: Vec<f64>,
    /// Dense coefficients for `k = -N..-1, 1..N`, each of length `2n`.
    pub coeffs: Vec<f64>,
}

impl FourierLoop {
    pub fn zero(space: GalerkinSpace) -> Self {
        Self {
            n: space.n,
            big_n: space.big_n,
            base: vec![0.0; 2 * space.n],
            coeffs: vec![0.0; 4 * space.n * space.big_n],
        }
    }

    pub fn constant(space: GalerkinSpace, c: &[f64]) -> Self {
        let mut x = Self::zero(space);
        x.base = reduce_point(c);
        x
    }

    /// `exp(2 pi k J0 t) v` on top of a zero base.
    pub fn single_mode(space: GalerkinSpace, k: i64, v: &[f64]) -> Self {
        let mut x = Self::zero(space);
        x.coeff_mut(k).copy_from_slice(v);
        x
    }

    pub fn space(&self) -> GalerkinSpace {
        GalerkinSpace::new(self.n, self.big_n)
    }

    fn slot(&self, k: i64) -> usize {
        assert!(k != 0 && k.unsigned_abs() as usize <= self.big_n, "mode {k} out of range");
        let nn = self.big_n as i64;
        let idx = if k < 0 { k + nn } else { k + nn - 1 };
        idx as usize * 2 * self.n
    }

    pub fn coeff(&self, k: i64) -> &[f64] {
        if k == 0 {
            return &self.base;
        }
        let o = self.slot(k);
        &self.coeffs[o..o + 2 * self.n]
    }

    pub fn coeff_mut(&mut self, k: i64) -> &mut [f64] {
        if k == 0 {
            return &mut self.base;
        }
        let o = self.slot(k);
        &mut self.coeffs[o..o + 2 * self.n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base.len() != 2 * self.n || self.coeffs.len() != 4 * self.n * self.big_n {
            return Err(Error::Dimension("loop storage does not match (n, N)".into()));
        }
        if self.base.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Dimension(format!("base {:?} not reduced to [0,1)", self.base)));
        }
        if self.coeffs.iter().chain(self.base.iter()).any(|c| !c.is_finite()) {
            return Err(Error::Dimension("non-finite loop coefficient".into()));
        }
        Ok(())
    }

    /// Flat mode vector, base not reduced further.
    pub fn to_vec(&self) -> Vec<f64> {
        let sp = self.space();
        let mut v = vec![0.0; sp.dim_total()];
        for k in sp.modes() {
            let o = sp.offset(k);
            v[o..o + 2 * self.n].copy_from_slice(self.coeff(k));
        }
        v
    }

    /// Loop from a flat mode vector; the base is reduced mod `Z^{2n}`.
    pub fn from_vec(space: GalerkinSpace, v: &[f64]) -> Self {
        assert_eq!(v.len(), space.dim_total());
        let mut x = Self::zero(space);
        for k in space.modes() {
            let o = space.offset(k);
            x.coeff_mut(k).copy_from_slice(&v[o..o + 2 * space.n]);
        }
        x.base = reduce_point(&x.base);
        x
    }

    /// Same loop with cutoff `big_n`, truncating or zero padding.
    pub fn with_cutoff(&self, big_n: usize) -> Self {
        let sp = GalerkinSpace::new(self.n, big_n);
        let mut x = Self::zero(sp);
        x.base = self.base.clone();
        for k in 1..=big_n.min(self.big_n) as i64 {
            x.coeff_mut(k).copy_from_slice(self.coeff(k));
            x.coeff_mut(-k).copy_from_slice(self.coeff(-k));
        }
        x
    }

    /// Value in `R^{2n}` at time `t`, base not reduced.
    pub fn eval_lifted(&self, t: f64) -> Vec<f64> {
        let d = 2 * self.n;
        let mut out = self.base.clone();
        let mut jv = vec![0.0; d];
        for k in 1..=self.big_n as i64 {
            for kk in [k, -k] {
                let (s, c) = (2.0 * PI * kk as f64 * t).sin_cos();
                let v = self.coeff(kk);
                apply_j(v, &mut jv);
                for i in 0..d {
                    out[i] += c * v[i] + s * jv[i];
                }
            }
        }
        out
    }

    /// Point of the torus at time `t`.
    pub fn eval_loop(&self, t: f64) -> Vec<f64> {
        reduce_point(&self.eval_lifted(t))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.big_n != other.big_n {
            return Err(Error::Dimension(format!(
                "(n, N) = ({}, {}) vs ({}, {})",
                self.n, self.big_n, other.n, other.big_n
            )));
        }
        Ok(())
    }

    pub fn project(&self, part: Part) -> Self {
        let mut x = Self::zero(self.space());
        match part {
            Part::Zero => x.base = self.base.clone(),
            Part::Plus | Part::Minus => {
                for k in 1..=self.big_n as i64 {
                    let kk = if part == Part::Plus { k } else { -k };
                    x.coeff_mut(kk).copy_from_slice(self.coeff(kk));
                }
            }
        }
        x
    }

    /// Adjoint of the inclusion `H^{1/2} -> L2` on the truncation.
    pub fn jstar(&self) -> Self {
        let mut x = self.clone();
        for k in 1..=self.big_n as i64 {
            for kk in [k, -k] {
                let f = 1.0 / (2.0 * PI * k as f64);
                x.coeff_mut(kk).iter_mut().for_each(|c| *c *= f);
            }
        }
        x
    }

    /// Componentwise `self + a * other`, base reduced afterwards.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let mut v = self.to_vec();
        for (vi, oi) in v.iter_mut().zip(other.to_vec()) {
            *vi += a * oi;
        }
        Self::from_vec(self.space(), &v)
    }
}

/// `<x0, y0> + sum_{k != 0} (2 pi |k|)^{2s} <x_k, y_k>`.
pub fn inner_hs(x: &FourierLoop, y: &FourierLoop, s: f64) -> Result<f64> {
    x.check_same(y)?;
    let sp = x.space();
    Ok(sp
        .modes()
        .map(|k| mode_weight(k, s) * dot(x.coeff(k), y.coeff(k)))
        .sum())
}

/// True L2 product, i.e. `inner_hs(x, y, 0)`.
pub fn inner_l2(x: &FourierLoop, y: &FourierLoop) -> Result<f64> {
    inner_hs(x, y, 0.0)
}

pub fn norm_hs(x: &FourierLoop, s: f64) -> f64 {
    inner_hs(x, x, s).expect("same space").sqrt()
}

/// `H^s` distance with the base difference lifted to `(-1/2, 1/2]^{2n}`.
pub fn distance_hs(x: &FourierLoop, y: &FourierLoop, s: f64) -> Result<f64> {
    x.check_same(y)?;
    let mut acc: f64 = x.base.iter().zip(&y.base).map(|(a, b)| lift_diff(a - b).powi(2)).sum();
    for k in 1..=x.big_n as i64 {
        for kk in [k, -k] {
            let d: f64 = x.coeff(kk).iter().zip(y.coeff(kk)).map(|(a, b)| (a - b).powi(2)).sum();
            acc += mode_weight(kk, s) * d;
        }
    }
    Ok(acc.sqrt())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flat-vector weights `diag(D)` of the `H^{1/2}` product: 1 on the base,
/// `2 pi |k|` elsewhere.
pub fn half_weights(space: GalerkinSpace) -> Vec<f64> {
    (0..space.dim_total()).map(|i| mode_weight(space.mode_of(i), 0.5)).collect()
}

/// Flat-vector `H^{1/2}` product.
pub fn inner_half_vec(space: GalerkinSpace, a: &[f64], b: &[f64]) -> f64 {
    (0..space.dim_total())
        .map(|i| mode_weight(space.mode_of(i), 0.5) * a[i] * b[i])
        .sum()
}

/// Evaluation and projection between mode vectors and uniform `t`-samples.
///
/// Samples are stored row-major, `M` rows of length `2n`, at `t_j = j/M`.
/// Projection is the trapezoid rule for `x_k = int exp(-2 pi k J0 t) x(t) dt`.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub space: GalerkinSpace,
    pub m: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Sampler {
    pub fn new(space: GalerkinSpace, m: usize) -> Self {
        let nk = space.big_n + 1;
        let mut cos = vec![0.0; m * nk];
        let mut sin = vec![0.0; m * nk];
        for j in 0..m {
            for k in 0..nk {
                // Reduce the phase exactly before evaluating.
                let ph = ((j * k) % m) as f64 / m as f64;
                let (s, c) = (2.0 * PI * ph).sin_cos();
                cos[j * nk + k] = c;
                sin[j * nk + k] = s;
            }
        }
        Self { space, m, cos, sin }
    }

    /// Default quadrature size `8N + 16`.
    pub fn default_for(space: GalerkinSpace) -> Self {
        Self::new(space, 8 * space.big_n + 16)
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 / self.m as f64
    }

    #[inline]
    fn cs(&self, j: usize, k: i64) -> (f64, f64) {
        let nk = self.space.big_n + 1;
        let a = k.unsigned_abs() as usize;
        let c = self.cos[j * nk + a];
        let s = self.sin[j * nk + a];
        (c, if k < 0 { -s } else { s })
    }

    /// Samples of the loop with mode vector `v` (base as stored, not reduced).
    pub fn sample(&self, v: &[f64], out: &mut [f64]) {
        let sp = self.space;
        let d = sp.block();
        let n = sp.n;
        for j in 0..self.m {
            let row = &mut out[j * d..(j + 1) * d];
            row.copy_from_slice(&v[sp.offset(0)..sp.offset(0) + d]);
            for k in sp.modes().filter(|&k| k != 0) {
                let (c, s) = self.cs(j, k);
                let o = sp.offset(k);
                let x = &v[o..o + d];
                for i in 0..n {
                    row[i] += c * x[i] + s * x[n + i];
                    row[n + i] += c * x[n + i] - s * x[i];
                }
            }
        }
    }

    /// Mode vector of the band-limited interpolant of the samples.
    pub fn project(&self, samples: &[f64], out: &mut [f64]) {
        let sp = self.space;
        let d = sp.block();
        let n = sp.n;
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / self.m as f64;
        let f0 = &samples[0..d];
        let mut df = vec![0.0; d];
        for j in 0..self.m {
            let f = &samples[j * d..(j + 1) * d];
            let o = sp.offset(0);
            for i in 0..d {
                out[o + i] += w * f[i];
                // nonzero modes of a constant signal vanish exactly
                df[i] = f[i] - f0[i];
            }
            for k in sp.modes().filter(|&k| k != 0) {
                let (c, s) = self.cs(j, k);
                let o = sp.offset(k);
                // exp(-theta J) f = cos f - sin J f
                for i in 0..n {
                    out[o + i] += w * (c * df[i] - s * df[n + i]);
                    out[o + n + i] += w * (c * df[n + i] + s * df[i]);
                }
            }
        }
    }

    /// Value of basis vector `e_idx` (flat index) at sample `j`, as a
    /// `(component, coefficient)` pair list of length `2`; used to assemble
    /// multiplication operators.
    pub fn basis_at(&self, j: usize, idx: usize) -> [(usize, f64); 2] {
        let sp = self.space;
        let d = sp.block();
        let n = sp.n;
        let k = sp.mode_of(idx);
        let i = idx % d;
        let (c, s) = self.cs(j, k);
        // exp(theta J) e_i = cos e_i + sin J e_i, J e_i = -e_{i-n} (i >= n) or e_{i+n}... see apply_j
        if i < n {
            // J e_i = -e_{n+i}
            [(i, c), (n + i, -s)]
        } else {
            // J e_{n+i'} = e_{i'}
            [(i, c), (i - n, s)]
        }
    }
}

impl Serialize for FourierLoop {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Coef {
            k: i64,
            #[serde(serialize_with = "sig17_vec")]
            v: Vec<f64>,
        }
        struct Base<'a>(&'a [f64]);
        impl Serialize for Base<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                sig17_vec(&self.0.to_vec(), s)
            }
        }
        let mut coeffs = Vec::with_capacity(2 * self.big_n);
        for k in (-(self.big_n as i64)..=self.big_n as i64).filter(|&k| k != 0) {
            coeffs.push(Coef { k, v: self.coeff(k).to_vec() });
        }
        let mut st = ser.serialize_struct("FourierLoop", 4)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("N", &self.big_n)?;
        st.serialize_field("base", &Base(&self.base))?;
        st.serialize_field("coeffs", &coeffs)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for FourierLoop {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Coef {
            k: i64,
            v: Vec<f64>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            n: usize,
            #[serde(rename = "N")]
            big_n: usize,
            base: Vec<f64>,
            coeffs: Vec<Coef>,
        }
        let raw = Raw::deserialize(de)?;
        if raw.n == 0 || raw.big_n == 0 {
            return Err(de::Error::custom("n and N must be positive"));
        }
        let sp = GalerkinSpace::new(raw.n, raw.big_n);
        let mut x = FourierLoop::zero(sp);
        if raw.base.len() != 2 * raw.n {
            return Err(de::Error::custom("base has wrong length"));
        }
        x.base = reduce_point(&raw.base);
        for c in raw.coeffs {
            if c.k == 0 || c.k.unsigned_abs() as usize > raw.big_n || c.v.len() != 2 * raw.n {
                return Err(de::Error::custom(format!("bad coefficient entry k = {}", c.k)));
            }
            x.coeff_mut(c.k).copy_from_slice(&c.v);
        }
        x.validate().map_err(de::Error::custom)?;
        Ok(x)
    }
}

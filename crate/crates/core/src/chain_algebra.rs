//! Graded chain complexes over GF(2).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense bit-packed matrix over GF(2), row-major, 64 columns per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GF2Matrix {
    rows: usize,
    cols: usize,
    words: usize,
    bits: Vec<u64>,
}

impl GF2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64);
        Self { rows, cols, words, bits: vec![0; rows * words] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v % 2 == 1);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.rows && j < self.cols);
        (self.bits[i * self.words + j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        assert!(i < self.rows && j < self.cols);
        let w = &mut self.bits[i * self.words + j / 64];
        if v {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|w| *w == 0)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j) as u8).collect()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "GF(2) product of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.get(i, k) {
                    let (dst, src) = (i * out.words, k * other.words);
                    for w in 0..out.words {
                        out.bits[dst + w] ^= other.bits[src + w];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("GF(2) sum of differently shaped matrices".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.bits.iter_mut().zip(&other.bits) {
            *a ^= b;
        }
        Ok(out)
    }

    /// Rank by Gaussian elimination, pivoting on the lowest available row.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for j in 0..m.cols {
            let Some(p) = (rank..m.rows).find(|&i| m.get(i, j)) else { continue };
            if p != rank {
                for w in 0..m.words {
                    m.bits.swap(p * m.words + w, rank * m.words + w);
                }
            }
            for i in 0..m.rows {
                if i != rank && m.get(i, j) {
                    for w in 0..m.words {
                        let v = m.bits[rank * m.words + w];
                        m.bits[i * m.words + w] ^= v;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    pub fn is_invertible(&self) -> bool {
        self.rows == self.cols && self.rank() == self.rows
    }
}

impl Serialize for GF2Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GF2Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        Ok(Self::from_rows(&rows))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub action: f64,
}

/// Generators graded by degree, with `boundary[k]: C_k -> C_{k-1}`
/// (rows indexed by degree `k-1` generators, columns by degree `k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradedComplex {
    pub generators: BTreeMap<i64, Vec<Generator>>,
    pub boundary: BTreeMap<i64, GF2Matrix>,
}

impl GradedComplex {
    /// Complex with the given generators and all boundaries zero.
    pub fn new(mut generators: BTreeMap<i64, Vec<Generator>>) -> Self {
        for g in generators.values_mut() {
            g.sort_by(|a, b| a.action.total_cmp(&b.action).then(a.id.cmp(&b.id)));
        }
        let mut boundary = BTreeMap::new();
        for (&k, gens) in &generators {
            let below = generators.get(&(k - 1)).map_or(0, Vec::len);
            boundary.insert(k, GF2Matrix::zeros(below, gens.len()));
        }
        Self { generators, boundary }
    }

    /// Generators keyed by degree from `(id, degree, action)` triples.
    pub fn from_generators(gens: impl IntoIterator<Item = (usize, i64, f64)>) -> Self {
        let mut by: BTreeMap<i64, Vec<Generator>> = BTreeMap::new();
        for (id, k, action) in gens {
            by.entry(k).or_default().push(Generator { id, action });
        }
        Self::new(by)
    }

    pub fn degrees(&self) -> Vec<i64> {
        self.generators.keys().copied().collect()
    }

    pub fn count(&self, k: i64) -> usize {
        self.generators.get(&k).map_or(0, Vec::len)
    }

    /// Position of generator `id` within its degree.
    pub fn position(&self, id: usize) -> Option<(i64, usize)> {
        self.generators
            .iter()
            .find_map(|(&k, g)| g.iter().position(|x| x.id == id).map(|p| (k, p)))
    }

    /// Sets the `y`-coefficient of `d(x)`.
    pub fn set_entry(&mut self, x: usize, y: usize, v: bool) -> Result<()> {
        let (kx, px) = self.position(x).ok_or_else(|| Error::Dimension(format!("unknown generator {x}")))?;
        let (ky, py) = self.position(y).ok_or_else(|| Error::Dimension(format!("unknown generator {y}")))?;
        if ky != kx - 1 {
            return Err(Error::Dimension(format!("generators {x} and {y} are not in adjacent degrees")));
        }
        self.boundary.get_mut(&kx).expect("boundary for every degree").set(py, px, v);
        Ok(())
    }

    /// `d_k`, or a zero matrix of the right shape.
    pub fn d(&self, k: i64) -> GF2Matrix {
        self.boundary
            .get(&k)
            .cloned()
            .unwrap_or_else(|| GF2Matrix::zeros(self.count(k - 1), self.count(k)))
    }

    fn check_shapes(&self) -> Result<()> {
        for (&k, m) in &self.boundary {
            if m.rows() != self.count(k - 1) || m.cols() != self.count(k) {
                return Err(Error::Dimension(format!("boundary in degree {k} has the wrong shape")));
            }
        }
        Ok(())
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.generators.iter().map(|(&k, g)| sign(k) * g.len() as i64).sum()
    }
}

fn sign(k: i64) -> i64 {
    if k.rem_euclid(2) == 0 { 1 } else { -1 }
}

/// Outcome of a complex or chain-map check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// First offending degree.
    pub degree: Option<i64>,
}

/// `d_{k-1} d_k = 0` for every `k`.
pub fn verify_complex(c: &GradedComplex) -> Result<Verdict> {
    c.check_shapes()?;
    let lo = c.degrees().first().copied().unwrap_or(0);
    let hi = c.degrees().last().copied().unwrap_or(0);
    for k in (lo..=hi).rev() {
        if !c.d(k - 1).mul(&c.d(k))?.is_zero() {
            return Ok(Verdict { pass: false, degree: Some(k) });
        }
    }
    Ok(Verdict { pass: true, degree: None })
}

/// `phi_{k-1} dm_k = df_k phi_k` for every `k`, where `phi[k]` maps degree
/// `k` of `cm` to degree `k` of `cf`.
pub fn verify_chain_map(
    phi: &BTreeMap<i64, GF2Matrix>,
    cm: &GradedComplex,
    cf: &GradedComplex,
) -> Result<Verdict> {
    let phi_at = |k: i64| -> Result<GF2Matrix> {
        let m = phi.get(&k).cloned().unwrap_or_else(|| GF2Matrix::zeros(cf.count(k), cm.count(k)));
        if m.rows() != cf.count(k) || m.cols() != cm.count(k) {
            return Err(Error::Dimension(format!("chain map in degree {k} has the wrong shape")));
        }
        Ok(m)
    };
    let degrees: std::collections::BTreeSet<i64> = cm.degrees().into_iter().chain(cf.degrees()).collect();
    for &k in &degrees {
        let lhs = phi_at(k - 1)?.mul(&cm.d(k))?;
        let rhs = cf.d(k).mul(&phi_at(k)?)?;
        if lhs != rhs {
            return Ok(Verdict { pass: false, degree: Some(k) });
        }
    }
    Ok(Verdict { pass: true, degree: None })
}

/// `dim ker d_k - rank d_{k+1}` per degree. Refuses complexes with `d^2 != 0`.
pub fn homology_ranks(c: &GradedComplex) -> Result<BTreeMap<i64, usize>> {
    let v = verify_complex(c)?;
    if !v.pass {
        return Err(Error::Structural(format!("d^2 != 0 in degree {:?}", v.degree)));
    }
    Ok(c
        .degrees()
        .into_iter()
        .map(|k| {
            let kernel = c.count(k) - c.d(k).rank();
            (k, kernel - c.d(k + 1).rank())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(d2: &[Vec<u8>], d1: &[Vec<u8>]) -> GradedComplex {
        let mut c = GradedComplex::from_generators([(0, 2, 0.0), (1, 1, 0.0), (2, 1, 0.0), (3, 0, 0.0)]);
        let n2 = d2.len();
        let n1 = d1[0].len();
        assert_eq!(n2, n1);
        c.boundary.insert(2, GF2Matrix::from_rows(d2));
        c.boundary.insert(1, GF2Matrix::from_rows(d1));
        c
    }

    #[test]
    fn complex_checks() {
        assert!(verify_complex(&chain(&[vec![1], vec![1]], &[vec![1, 1]])).unwrap().pass);
        let v = verify_complex(&chain(&[vec![1], vec![0]], &[vec![1, 1]])).unwrap();
        assert_eq!(v, Verdict { pass: false, degree: Some(2) });
        let z = GradedComplex::from_generators([(0, 1, 0.0), (1, 0, 0.0)]);
        assert!(verify_complex(&z).unwrap().pass);
    }

    #[test]
    fn ranks() {
        let c = GradedComplex::from_generators([(0, 1, 0.02), (1, 0, 0.0), (2, 0, 0.0), (3, -1, -0.02)]);
        let r = homology_ranks(&c).unwrap();
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec![(-1, 1), (0, 2), (1, 1)]);
        let mut one = GradedComplex::from_generators([(0, 1, 1.0), (1, 0, 0.0)]);
        one.set_entry(0, 1, true).unwrap();
        assert_eq!(homology_ranks(&one).unwrap().values().sum::<usize>(), 0);
        let single = GradedComplex::from_generators([(0, 0, 0.0)]);
        assert_eq!(homology_ranks(&single).unwrap()[&0], 1);
    }

    #[test]
    fn chain_maps() {
        let c = chain(&[vec![1], vec![1]], &[vec![1, 1]]);
        let phi: BTreeMap<i64, GF2Matrix> =
            [(2, GF2Matrix::identity(1)), (1, GF2Matrix::identity(2)), (0, GF2Matrix::identity(1))].into();
        assert!(verify_chain_map(&phi, &c, &c).unwrap().pass);
        let mut other = c.clone();
        other.boundary.insert(1, GF2Matrix::from_rows(&[vec![0, 1]]));
        assert!(!verify_chain_map(&phi, &c, &other).unwrap().pass);
    }

    #[test]
    fn wide_rows_and_rank() {
        let mut m = GF2Matrix::zeros(3, 130);
        m.set(0, 129, true);
        m.set(1, 129, true);
        m.set(2, 64, true);
        assert_eq!(m.rank(), 2);
        assert!(m.transpose().get(129, 1));
        assert!(GF2Matrix::identity(70).is_invertible());
    }
}

//! Truncated multivariate orthonormal polynomial bases.
//!
//! Univariate families are orthonormal with respect to the standardized
//! marginal: Legendre for `U(-1, 1)`, probabilists' Hermite for `N(0, 1)`,
//! and arbitrary polynomial chaos (aPC) built from raw moments. The
//! multivariate basis is the tensor product over a total-degree truncation
//! set in graded-lexicographic order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inputspace::{Coordinates, InputSpace, Marginal, SampleMatrix};

/// Highest degree accepted for moment-based bases; Hankel matrices of
/// higher order are too ill-conditioned in double precision.
pub const APC_MAX_DEGREE: usize = 10;

/// Total-degree truncation set `{ alpha : |alpha| <= p }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<u32>>,
}

impl MultiIndexSet {
    /// All multi-indices of total degree `<= degree`, sorted by total degree
    /// and, within a degree, lexicographically descending (`(1,0)` before
    /// `(0,1)`).
    pub fn total_degree(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("multi-index dimension must be at least 1"));
        }
        let mut indices = Vec::new();
        let mut current = vec![0u32; dim];
        for d in 0..=degree {
            compositions(d as u32, 0, &mut current, &mut indices);
        }
        Ok(Self { dim, degree, indices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.indices[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.iter().map(Vec::as_slice)
    }

    /// Position of `alpha` in the set.
    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let dim = current.len();
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Orthonormal polynomial family of a single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Legendre,
    Hermite,
    /// Monomial coefficients, `coefficients[j][k]` multiplies `u^k` in `psi_j`.
    Apc { coefficients: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateBasis {
    #[serde(flatten)]
    family: Family,
    degree: usize,
}

impl UnivariateBasis {
    pub fn legendre(degree: usize) -> Self {
        Self { family: Family::Legendre, degree }
    }

    pub fn hermite(degree: usize) -> Self {
        Self { family: Family::Hermite, degree }
    }

    /// aPC basis orthonormal under the measure with raw moments
    /// `m_0..m_{2p}` (`m_0 = 1`), by modified Gram-Schmidt on monomials in the
    /// moment inner product `<u^i, u^j> = m_{i+j}`, with one round of
    /// re-orthogonalization.
    pub fn from_moments(moments: &[f64], degree: usize) -> Result<Self> {
        if degree > APC_MAX_DEGREE {
            return Err(invalid(format!("aPC degree {degree} exceeds cap {APC_MAX_DEGREE}")));
        }
        if moments.len() < 2 * degree + 1 {
            return Err(invalid(format!(
                "degree {degree} needs {} moments, got {}",
                2 * degree + 1,
                moments.len()
            )));
        }
        if (moments[0] - 1.0).abs() > 1e-12 {
            return Err(Error::IllPosedMoments("m_0 must equal 1".into()));
        }
        let n = degree + 1;
        let hankel = DMatrix::from_fn(n, n, |i, j| moments[i + j]);
        if hankel.clone().cholesky().is_none() {
            return Err(Error::IllPosedMoments(format!(
                "Hankel moment matrix of order {n} is not positive definite"
            )));
        }
        let inner = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (j, &bj) in b.iter().enumerate() {
                    s += ai * bj * moments[i + j];
                }
            }
            s
        };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut v = vec![0.0; k + 1];
            v[k] = 1.0;
            let raw_norm = inner(&v, &v).sqrt();
            for _ in 0..2 {
                for q in &basis {
                    let proj = inner(&v, q);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= proj * qi;
                    }
                }
            }
            let norm2 = inner(&v, &v);
            if !(norm2 > 1e-14 * raw_norm * raw_norm) {
                return Err(Error::IllPosedMoments(format!(
                    "degree {k} polynomial has non-positive norm {norm2:e}"
                )));
            }
            let norm = norm2.sqrt();
            v.iter_mut().for_each(|c| *c /= norm);
            basis.push(v);
        }
        Ok(Self { family: Family::Apc { coefficients: basis }, degree })
    }

    /// Basis orthonormal under the standardized marginal.
    pub fn for_marginal(marginal: &Marginal, degree: usize) -> Result<Self> {
        match marginal {
            Marginal::Uniform { .. } => Ok(Self::legendre(degree)),
            Marginal::Gaussian { .. } => Ok(Self::hermite(degree)),
            Marginal::Moments { moments } => Self::from_moments(moments, degree),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `psi_j(u)`.
    pub fn eval(&self, j: usize, u: f64) -> Result<f64> {
        if j > self.degree {
            return Err(invalid(format!("degree {j} exceeds basis degree {}", self.degree)));
        }
        let mut out = vec![0.0; self.degree + 1];
        self.eval_into(u, &mut out);
        Ok(out[j])
    }

    /// Fills `out[j] = psi_j(u)` for `j = 0..=min(degree, out.len() - 1)`.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        let n = out.len().min(self.degree + 1);
        if n == 0 {
            return;
        }
        match &self.family {
            Family::Legendre => {
                let (mut p0, mut p1) = (1.0, u);
                out[0] = 1.0;
                if n > 1 {
                    out[1] = 3f64.sqrt() * u;
                }
                for k in 1..n.saturating_sub(1) {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf + 1.0) * u * p1 - kf * p0) / (kf + 1.0);
                    out[k + 1] = (2.0 * kf + 3.0).sqrt() * p2;
                    p0 = p1;
                    p1 = p2;
                }
            }
            Family::Hermite => {
                let (mut h0, mut h1) = (1.0, u);
                out[0] = 1.0;
                if n > 1 {
                    out[1] = u;
                }
                let mut fact = 1.0;
                for k in 1..n.saturating_sub(1) {
                    let kf = k as f64;
                    let h2 = u * h1 - kf * h0;
                    fact *= kf + 1.0;
                    out[k + 1] = h2 / fact.sqrt();
                    h0 = h1;
                    h1 = h2;
                }
            }
            Family::Apc { coefficients } => {
                for (j, c) in coefficients.iter().take(n).enumerate() {
                    out[j] = c.iter().rev().fold(0.0, |acc, &ck| acc * u + ck);
                }
            }
        }
    }

    /// Monomial coefficients of `psi_0..psi_p`; row `j` has length `j + 1`.
    pub fn monomial_coefficients(&self) -> Vec<Vec<f64>> {
        match &self.family {
            Family::Apc { coefficients } => coefficients.clone(),
            Family::Legendre | Family::Hermite => {
                let legendre = matches!(self.family, Family::Legendre);
                let mut raw: Vec<Vec<f64>> = vec![vec![1.0]];
                if self.degree >= 1 {
                    raw.push(vec![0.0, 1.0]);
                }
                for k in 1..self.degree {
                    let kf = k as f64;
                    let mut next = vec![0.0; k + 2];
                    let (a, b) = if legendre {
                        ((2.0 * kf + 1.0) / (kf + 1.0), kf / (kf + 1.0))
                    } else {
                        (1.0, kf)
                    };
                    for (i, &c) in raw[k].iter().enumerate() {
                        next[i + 1] += a * c;
                    }
                    for (i, &c) in raw[k - 1].iter().enumerate() {
                        next[i] -= b * c;
                    }
                    raw.push(next);
                }
                let mut fact = 1.0;
                raw.into_iter()
                    .enumerate()
                    .map(|(j, c)| {
                        if j > 0 {
                            fact *= j as f64;
                        }
                        let scale = if legendre { (2.0 * j as f64 + 1.0).sqrt() } else { 1.0 / fact.sqrt() };
                        c.into_iter().map(|x| x * scale).collect()
                    })
                    .collect()
            }
        }
    }
}

/// Tensor-product basis `Psi_alpha(u) = prod_i psi_{alpha_i}(u_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCEBasis {
    univariate: Vec<UnivariateBasis>,
    indices: MultiIndexSet,
}

impl PCEBasis {
    pub fn new(univariate: Vec<UnivariateBasis>, indices: MultiIndexSet) -> Result<Self> {
        if univariate.len() != indices.dim() {
            return Err(invalid(format!(
                "{} univariate bases for a {}-dimensional index set",
                univariate.len(),
                indices.dim()
            )));
        }
        if univariate.iter().any(|b| b.degree() < indices.degree()) {
            return Err(invalid("univariate basis degree below truncation degree"));
        }
        Ok(Self { univariate, indices })
    }

    /// Total-degree basis matched to the marginals of `space`.
    pub fn for_space(space: &InputSpace, degree: usize) -> Result<Self> {
        let univariate = space
            .parameters()
            .iter()
            .map(|p| UnivariateBasis::for_marginal(&p.marginal, degree))
            .collect::<Result<Vec<_>>>()?;
        Self::new(univariate, MultiIndexSet::total_degree(space.dim(), degree)?)
    }

    pub fn dim(&self) -> usize {
        self.indices.dim()
    }

    pub fn degree(&self) -> usize {
        self.indices.degree()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &MultiIndexSet {
        &self.indices
    }

    pub fn univariate(&self) -> &[UnivariateBasis] {
        &self.univariate
    }

    /// Per-dimension tables `table[i * (p+1) + j] = psi_j^{(i)}(u_i)`.
    fn tables(&self, u: &[f64], table: &mut [f64]) {
        let stride = self.degree() + 1;
        for (i, b) in self.univariate.iter().enumerate() {
            b.eval_into(u[i], &mut table[i * stride..(i + 1) * stride]);
        }
    }

    fn product(&self, alpha: &[u32], table: &[f64]) -> f64 {
        let stride = self.degree() + 1;
        alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, &a)| table[i * stride + a as usize])
            .product()
    }

    /// Basis row `Psi(u)` at a standardized point.
    pub fn eval_row(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.eval_terms(u, &(0..self.len()).collect::<Vec<_>>())
    }

    /// Selected entries of `Psi(u)`, in the order of `terms`.
    pub fn eval_terms(&self, u: &[f64], terms: &[usize]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(invalid(format!("point has {} coordinates, basis has {}", u.len(), self.dim())));
        }
        let mut table = vec![0.0; self.dim() * (self.degree() + 1)];
        self.tables(u, &mut table);
        Ok(terms.iter().map(|&t| self.product(self.indices.get(t), &table)).collect())
    }

    /// `N x P` design matrix over standardized points.
    pub fn design_matrix(&self, u: &SampleMatrix) -> Result<DMatrix<f64>> {
        if u.ncols() != self.dim() {
            return Err(invalid(format!("sample has {} columns, basis has {}", u.ncols(), self.dim())));
        }
        if u.coordinates() != Coordinates::Standard {
            return Err(invalid("design matrix needs standardized coordinates"));
        }
        let (n, p) = (u.nrows(), self.len());
        let mut table = vec![0.0; self.dim() * (self.degree() + 1)];
        let mut out = DMatrix::zeros(n, p);
        for r in 0..n {
            self.tables(u.row(r), &mut table);
            for (c, alpha) in self.indices.iter().enumerate() {
                out[(r, c)] = self.product(alpha, &table);
            }
        }
        Ok(out)
    }
}

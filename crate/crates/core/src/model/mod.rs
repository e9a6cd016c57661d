//! Nonnegative vectors and matrices under the 1-norm on the positive cone, laws of
//! the driving pair `(M, Q)` and the structural conditions on them.
//!
//! With `|v| = Σ v_i` the operator norm of a nonnegative matrix is its largest
//! column sum and `ι(M) = inf_{|x|=1} |Mx|` is its smallest column sum.

mod conditions;
mod law;

pub use conditions::{check_conditions, A3Evidence, ConditionReport, Heuristic};
pub use law::{
    build_law_garch12, build_law_scalar, bundled_law, bundled_law_names, Atom, Dependence,
    GarchParams, LawConfig, MatrixQLaw, PairSampler,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on `Σ x_i = 1` when accepting a user-supplied direction.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_entries(xs: &[f64], what: &str) -> Result<()> {
    for (i, &x) in xs.iter().enumerate() {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("{what} entry {i} is {x}, expected a finite value >= 0")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NonnegVector(Vec<f64>);

impl NonnegVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_entries(&entries, "vector")?;
        if entries.is_empty() {
            return Err(Error::Domain("empty vector".into()));
        }
        Ok(Self(entries))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for NonnegVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NonnegVector> for Vec<f64> {
    fn from(v: NonnegVector) -> Self {
        v.0
    }
}

/// `|v| = Σ v_i`, rejecting negative entries.
pub fn vec_norm(v: &[f64]) -> Result<f64> {
    check_entries(v, "vector")?;
    Ok(v.iter().sum())
}

/// A point of the positive unit simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirectionPoint(Vec<f64>);

impl DirectionPoint {
    /// Accepts entries that already sum to one (within [`SIMPLEX_TOL`]) and removes the rounding.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_entries(&entries, "direction")?;
        let total: f64 = entries.iter().sum();
        if entries.is_empty() || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("direction entries sum to {total}, expected 1")));
        }
        Ok(Self(entries.into_iter().map(|x| x / total).collect()))
    }

    /// Normalizes any nonzero nonnegative vector.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        let total = vec_norm(v)?;
        if total <= 0.0 {
            return Err(Error::DegenerateAction);
        }
        Ok(Self(v.iter().map(|x| x / total).collect()))
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn vertex(d: usize, i: usize) -> Self {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        Self(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DirectionPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DirectionPoint> for Vec<f64> {
    fn from(v: DirectionPoint) -> Self {
        v.0
    }
}

/// Square nonnegative matrix stored row-major; serialized as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct NonnegMatrix {
    d: usize,
    data: Vec<f64>,
}

impl NonnegMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::Domain("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(d * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::Domain(format!("row {i} has {} entries, expected {d}", row.len())));
            }
            data.extend(row);
        }
        check_entries(&data, "matrix")?;
        Ok(Self { d, data })
    }

    pub fn from_row_major(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() != d * d {
            return Err(Error::Domain(format!("expected {} entries for d={d}", d * d)));
        }
        check_entries(&data, "matrix")?;
        Ok(Self { d, data })
    }

    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self { d, data }
    }

    pub fn scalar(m: f64) -> Result<Self> {
        Self::from_row_major(1, vec![m])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.d).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.d;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        Self { d, data }
    }

    pub fn mul(&self, other: &NonnegMatrix) -> Self {
        let d = self.d;
        assert_eq!(d, other.d, "dimension mismatch");
        let mut data = vec![0.0; d * d];
        mat_mul(d, &self.data, &other.data, &mut data);
        Self { d, data }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        mat_vec(self.d, &self.data, x, &mut out);
        out
    }

    /// Maximum column sum, equal to `sup_{x ∈ simplex} |Mx|`.
    pub fn op_norm(&self) -> f64 {
        col_sums(self.d, &self.data).fold(0.0, f64::max)
    }

    /// Minimum column sum, equal to `inf_{x ∈ simplex} |Mx|`.
    pub fn iota(&self) -> f64 {
        col_sums(self.d, &self.data).fold(f64::INFINITY, f64::min)
    }

    /// Every row and every column has a positive entry.
    pub fn is_allowable(&self) -> bool {
        let d = self.d;
        (0..d).all(|i| (0..d).any(|j| self.data[i * d + j] > 0.0))
            && (0..d).all(|j| (0..d).any(|i| self.data[i * d + j] > 0.0))
    }

    pub fn is_positive(&self) -> bool {
        self.data.iter().all(|&x| x > 0.0)
    }

    /// Perron root by power iteration on `M + I`, which shares the Perron vector and is
    /// aperiodic whenever `M` is irreducible.
    pub fn dominant_eigenvalue(&self) -> f64 {
        let d = self.d;
        if d == 1 {
            return self.data[0];
        }
        let mut x = vec![1.0 / d as f64; d];
        let mut y = vec![0.0; d];
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            mat_vec(d, &self.data, &x, &mut y);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for i in 0..d {
                y[i] += x[i];
                if x[i] > 0.0 {
                    let r = y[i] / x[i];
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            let total: f64 = y.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            lambda = total - 1.0;
            for i in 0..d {
                x[i] = y[i] / total;
            }
            if hi - lo <= 1e-14 * hi {
                return 0.5 * (lo + hi) - 1.0;
            }
        }
        lambda
    }
}

impl TryFrom<Vec<Vec<f64>>> for NonnegMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<NonnegMatrix> for Vec<Vec<f64>> {
    fn from(m: NonnegMatrix) -> Self {
        m.rows()
    }
}

pub fn op_norm(m: &NonnegMatrix) -> f64 {
    m.op_norm()
}

pub fn iota(m: &NonnegMatrix) -> f64 {
    m.iota()
}

/// Projective action `M·x = Mx / |Mx|`.
pub fn project(m: &NonnegMatrix, x: &DirectionPoint) -> Result<DirectionPoint> {
    if m.dim() != x.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let y = m.apply(x.as_slice());
    let total: f64 = y.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateAction);
    }
    Ok(DirectionPoint(y.into_iter().map(|v| v / total).collect()))
}

fn col_sums(d: usize, m: &[f64]) -> impl Iterator<Item = f64> + '_ {
    (0..d).map(move |j| (0..d).map(|i| m[i * d + j]).sum())
}

#[inline]
pub(crate) fn mat_vec(d: usize, m: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out = Mᵀ x`.
#[inline]
pub(crate) fn mat_t_vec(d: usize, m: &[f64], x: &[f64], out: &mut [f64]) {
    for j in 0..d {
        out[j] = (0..d).map(|i| m[i * d + j] * x[i]).sum();
    }
}

#[inline]
pub(crate) fn mat_mul(d: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
}

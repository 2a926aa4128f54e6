//! Dense real symmetric matrices and the Givens rotations that diagonalize them.
//!
//! All pivots are strictly upper-triangular pairs `(p, q)` with `p < q`.
//! Rotations follow the convention `M' = Jᵀ M J` where `J` equals the identity
//! except `J[p][p] = J[q][q] = c`, `J[p][q] = s` and `J[q][p] = -s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative factor for the default "approximately zero" tolerance.
pub const DEFAULT_TOL_FACTOR: f64 = 1e-9;

/// An upper-triangle pivot `(p, q)` with `p < q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PivotAction {
    pub p: usize,
    pub q: usize,
}

impl PivotAction {
    pub fn new(p: usize, q: usize, n: usize) -> Result<Self> {
        if p >= q || q >= n {
            return Err(Error::IndexOutOfRange { i: p, j: q, n });
        }
        Ok(Self { p, q })
    }

    /// Lattice distance of the pivot from the main diagonal.
    pub fn band(&self) -> usize {
        self.q - self.p
    }
}

impl std::fmt::Display for PivotAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.p, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GivensRotation<T> {
    pub p: usize,
    pub q: usize,
    pub c: T,
    pub s: T,
}

impl<T: Scalar> GivensRotation<T> {
    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            c: T::one(),
            s: T::zero(),
        }
    }
}

/// Number of strictly upper-triangular pivots of an `n × n` matrix.
pub fn num_pivots(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Number of upper-triangular cells (diagonal included).
pub fn num_upper(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major flat index of the upper-triangle cell `(i, j)`, diagonal included.
pub fn upper_index(i: usize, j: usize, n: usize) -> Result<usize> {
    if i > j || j >= n {
        return Err(Error::IndexOutOfRange { i, j, n });
    }
    Ok(num_upper(n) - (n - i) * (n - i + 1) / 2 + (j - i))
}

/// Inverse of [`upper_index`].
pub fn upper_pair(index: usize, n: usize) -> Result<(usize, usize)> {
    if index >= num_upper(n) {
        return Err(Error::IndexOutOfRange {
            i: index,
            j: index,
            n,
        });
    }
    let mut start = 0;
    for i in 0..n {
        let len = n - i;
        if index < start + len {
            return Ok((i, i + index - start));
        }
        start += len;
    }
    unreachable!("index bounded by num_upper")
}

/// Row-major flat index of a strict-upper pivot, in `0..n(n-1)/2`.
pub fn strict_upper_index(a: PivotAction, n: usize) -> Result<usize> {
    if a.p >= a.q || a.q >= n {
        return Err(Error::IndexOutOfRange { i: a.p, j: a.q, n });
    }
    let p = a.p;
    // rows 0..p contribute (n-1) + (n-2) + ... + (n-p) pivots
    Ok(p * (2 * n - p - 1) / 2 + (a.q - p - 1))
}

/// Inverse of [`strict_upper_index`].
pub fn strict_upper_pair(index: usize, n: usize) -> Result<PivotAction> {
    if index >= num_pivots(n) {
        return Err(Error::IndexOutOfRange {
            i: index,
            j: index,
            n,
        });
    }
    let mut start = 0;
    for p in 0..n - 1 {
        let len = n - 1 - p;
        if index < start + len {
            return Ok(PivotAction {
                p,
                q: p + 1 + index - start,
            });
        }
        start += len;
    }
    unreachable!("index bounded by num_pivots")
}

/// Iterator over all strict-upper pivots in row-major order.
pub fn pivots(n: usize) -> impl Iterator<Item = PivotAction> {
    (0..n).flat_map(move |p| (p + 1..n).map(move |q| PivotAction { p, q }))
}

/// Dense symmetric `n × n` matrix stored row-major with both triangles kept in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix<T> {
    n: usize,
    data: Vec<T>,
    tol: T,
}

impl<T: Scalar> SymmetricMatrix<T> {
    /// Builds a matrix from rows. Rows must form an exactly symmetric square matrix.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidMatrix(format!("dimension {n} < 2")));
        }
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        for i in 0..n {
            for j in i + 1..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Self::from_data(n, data)
    }

    /// Builds a matrix from an entry function; only `f(i, j)` with `i <= j` is consulted.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidMatrix(format!("dimension {n} < 2")));
        }
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self::from_data(n, data)
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { T::zero() })
    }

    fn from_data(n: usize, data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let mut m = Self {
            n,
            data,
            tol: T::zero(),
        };
        m.tol = m.default_tol();
        Ok(m)
    }

    /// `max(1e-9, machine epsilon) · ‖M‖_F`, floored at the smallest positive value.
    pub fn default_tol(&self) -> T {
        let factor = T::lit(DEFAULT_TOL_FACTOR).max(T::epsilon());
        (factor * self.frobenius_norm()).max(T::min_positive_value())
    }

    /// Returns a copy with a different zero threshold. Non-positive values are floored.
    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol.max(T::min_positive_value());
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tol(&self) -> T {
        self.tol
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set_sym(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Upper triangle (diagonal included) flattened in [`upper_index`] order.
    pub fn upper_entries(&self) -> Vec<T> {
        (0..self.n)
            .flat_map(|i| (i..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = *v * factor);
        out.tol = out.default_tol();
        out
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm of the off-diagonal part.
    pub fn off_norm(&self) -> T {
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = self.get(i, j);
                acc = acc + two * v * v;
            }
        }
        acc.sqrt()
    }

    pub fn is_diagonalized(&self, threshold: T) -> bool {
        self.off_norm() < threshold
    }

    /// Whether the pivot entry is "approximately zero" under this matrix's tolerance.
    pub fn is_negligible(&self, a: PivotAction) -> bool {
        self.get(a.p, a.q).abs() <= self.tol
    }

    /// Pivots whose entry exceeds the tolerance, row-major.
    pub fn nonzero_pivots(&self) -> Vec<PivotAction> {
        pivots(self.n).filter(|&a| !self.is_negligible(a)).collect()
    }

    /// Classical Jacobi pivot: the largest-magnitude off-diagonal entry above tolerance.
    /// Ties resolve to the first pivot in row-major order.
    pub fn max_pivot(&self) -> Option<PivotAction> {
        let mut best: Option<(PivotAction, T)> = None;
        for a in pivots(self.n) {
            let v = self.get(a.p, a.q).abs();
            if v > self.tol && best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        best.map(|(a, _)| a)
    }

    fn check_pivot(&self, p: usize, q: usize) -> Result<()> {
        if p >= q || q >= self.n {
            return Err(Error::IndexOutOfRange {
                i: p,
                j: q,
                n: self.n,
            });
        }
        Ok(())
    }

    /// Rotation that annihilates entry `(p, q)`, using the stable
    /// `τ = (a_qq − a_pp) / (2 a_pq)`, `t = sign(τ) / (|τ| + √(1 + τ²))` form.
    pub fn compute_givens(&self, a: PivotAction) -> Result<GivensRotation<T>> {
        self.check_pivot(a.p, a.q)?;
        if self.is_negligible(a) {
            return Err(Error::DegeneratePivot { p: a.p, q: a.q });
        }
        let t = self.rotation_tangent(a);
        let c = (T::one() + t * t).sqrt().recip();
        Ok(GivensRotation {
            p: a.p,
            q: a.q,
            c,
            s: t * c,
        })
    }

    fn rotation_tangent(&self, a: PivotAction) -> T {
        let apq = self.get(a.p, a.q);
        let tau = (self.get(a.q, a.q) - self.get(a.p, a.p)) / (T::lit(2.0) * apq);
        if tau == T::zero() {
            T::one()
        } else if tau.abs() > T::lit(1e150).min(T::max_value().sqrt()) {
            // τ² would overflow; t ≈ 1 / (2τ)
            (T::lit(2.0) * tau).recip()
        } else {
            tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt())
        }
    }

    /// `Jᵀ M J` for an arbitrary rotation in the `(p, q)` plane. Touches only rows and
    /// columns `p` and `q`.
    pub fn apply_rotation(&self, g: &GivensRotation<T>) -> Result<Self> {
        let mut out = self.clone();
        out.rotate_mut(g)?;
        Ok(out)
    }

    /// In-place form of [`apply_rotation`](Self::apply_rotation).
    pub fn rotate_mut(&mut self, g: &GivensRotation<T>) -> Result<()> {
        self.check_pivot(g.p, g.q)?;
        let (p, q, c, s) = (g.p, g.q, g.c, g.s);
        let app = self.get(p, p);
        let aqq = self.get(q, q);
        let apq = self.get(p, q);
        let two = T::lit(2.0);
        let cs = c * s;
        self.update_off_rows(p, q, c, s);
        self.set_sym(p, p, c * c * app - two * cs * apq + s * s * aqq);
        self.set_sym(q, q, s * s * app + two * cs * apq + c * c * aqq);
        self.set_sym(p, q, cs * (app - aqq) + (c * c - s * s) * apq);
        Ok(())
    }

    fn update_off_rows(&mut self, p: usize, q: usize, c: T, s: T) {
        for r in 0..self.n {
            if r == p || r == q {
                continue;
            }
            let arp = self.get(r, p);
            let arq = self.get(r, q);
            self.set_sym(r, p, c * arp - s * arq);
            self.set_sym(r, q, s * arp + c * arq);
        }
    }

    /// Computes and applies the annihilating rotation for `a` in place. The pivot entry
    /// is set to exactly zero and the diagonal uses the `a_pp − t·a_pq` update.
    pub fn rotate_pivot(&mut self, a: PivotAction) -> Result<GivensRotation<T>> {
        let g = self.compute_givens(a)?;
        let t = self.rotation_tangent(a);
        let apq = self.get(a.p, a.q);
        let app = self.get(a.p, a.p);
        let aqq = self.get(a.q, a.q);
        self.update_off_rows(a.p, a.q, g.c, g.s);
        self.set_sym(a.p, a.p, app - t * apq);
        self.set_sym(a.q, a.q, aqq + t * apq);
        self.set_sym(a.p, a.q, T::zero());
        Ok(g)
    }

    pub fn cast<U: Scalar>(&self) -> SymmetricMatrix<U> {
        SymmetricMatrix {
            n: self.n,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            tol: U::lit(self.tol.as_f64()).max(U::min_positive_value()),
        }
    }
}

/// Deterministic random symmetric matrix: i.i.d. uniform entries in `[-scale, scale]`
/// drawn row-major from a ChaCha8 stream seeded with `seed`, then symmetrized as
/// `(A + Aᵀ) / 2`.
pub fn generate_random_symmetric<T: Scalar>(
    n: usize,
    seed: u64,
    scale: f64,
) -> Result<SymmetricMatrix<T>> {
    if n < 2 {
        return Err(Error::InvalidMatrix(format!("dimension {n} < 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n * n)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    SymmetricMatrix::from_fn(n, |i, j| T::lit(0.5 * (raw[i * n + j] + raw[j * n + i])))
}

/// Runs classical (MaxElem) Jacobi in place until `off_norm < threshold` or no pivot
/// exceeds the tolerance. Returns the number of rotations performed.
pub fn classical_jacobi<T: Scalar>(
    m: &mut SymmetricMatrix<T>,
    threshold: T,
    max_rotations: usize,
) -> Result<usize> {
    let mut count = 0;
    while !m.is_diagonalized(threshold) {
        let Some(a) = m.max_pivot() else { break };
        if count == max_rotations {
            return Err(Error::NonConvergence {
                sweeps: 0,
                rotations: count,
                off_norm: m.off_norm().as_f64(),
            });
        }
        m.rotate_pivot(a)?;
        count += 1;
    }
    Ok(count)
}

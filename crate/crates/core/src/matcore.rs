//! Dense symmetric matrices, the diagonal/off-diagonal projectors and a
//! cyclic Jacobi eigensolver.
//!
//! Everything downstream (shrinkage operators, solvers, metrics) goes
//! through [`eig_sym`], so its output is made fully deterministic: values are
//! sorted descending with a stable sort and every eigenvector is signed so
//! that its largest-magnitude entry is positive (lowest index wins ties).

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to `‖M‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;
/// Tolerance used to validate [`OrthonormalBasis`] columns.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Dense real symmetric `p × p` matrix with finite entries.
///
/// Symmetry is exact: `m[i][j]` and `m[j][i]` are the same bit pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(p: usize) -> Self {
        SymMatrix {
            data: DMatrix::zeros(p, p),
        }
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix {
            data: DMatrix::identity(p, p),
        }
    }

    /// Diagonal matrix with the given diagonal.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        check_finite_slice(diag)?;
        let p = diag.len();
        Ok(SymMatrix {
            data: DMatrix::from_fn(p, p, |i, j| if i == j { diag[i] } else { 0.0 }),
        })
    }

    /// Builds a matrix by evaluating `f(i, j)` for `i >= j` and mirroring.
    pub fn from_lower_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in j..p {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Ok(SymMatrix { data })
    }

    /// Strict constructor: the matrix must be square, finite and exactly symmetric.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let (gap, row, col) = validate_square(&data)?;
        if gap > 0.0 {
            return Err(Error::NotSymmetric { row, col, gap });
        }
        Ok(SymMatrix { data })
    }

    /// Accepts a nearly symmetric matrix, averaging `m` and `mᵀ` when the
    /// largest asymmetry is at most `tol`. Returns the matrix and that asymmetry.
    pub fn from_matrix_symmetrized(data: DMatrix<f64>, tol: f64) -> Result<(Self, f64)> {
        let (gap, row, col) = validate_square(&data)?;
        if gap > tol {
            return Err(Error::NotSymmetric { row, col, gap });
        }
        let p = data.nrows();
        let m = Self::from_lower_fn(p, |i, j| 0.5 * (data[(i, j)] + data[(j, i)]))?;
        Ok((m, gap))
    }

    /// Strict constructor from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: r.len(),
                });
            }
        }
        Self::from_matrix(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let p = self.dim();
        (0..p)
            .map(|i| (0..p).map(|j| self.data[(i, j)]).collect())
            .collect()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    /// Keeps the diagonal, zeros everything else.
    pub fn pdiag(&self) -> SymMatrix {
        let p = self.dim();
        SymMatrix {
            data: DMatrix::from_fn(p, p, |i, j| if i == j { self.data[(i, i)] } else { 0.0 }),
        }
    }

    /// Zeros the diagonal, keeps everything else.
    pub fn poffdiag(&self) -> SymMatrix {
        let mut data = self.data.clone();
        for i in 0..self.dim() {
            data[(i, i)] = 0.0;
        }
        SymMatrix { data }
    }

    /// Off-diagonal part of `self` plus the diagonal of `diag_source`.
    pub fn with_diagonal_of(&self, diag_source: &SymMatrix) -> SymMatrix {
        let mut data = self.data.clone();
        for i in 0..self.dim() {
            data[(i, i)] = diag_source.data[(i, i)];
        }
        SymMatrix { data }
    }

    pub fn is_diagonal(&self) -> bool {
        let p = self.dim();
        (0..p).all(|j| (0..p).all(|i| i == j || self.data[(i, j)] == 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.norm_squared()
    }

    /// `eᵀ M e` with `e` the all-ones vector.
    pub fn sum_of_entries(&self) -> f64 {
        self.data.sum()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix {
            data: &self.data * c,
        }
    }

    pub fn eig(&self) -> Result<EigenDecomp> {
        eig_sym(self)
    }

    /// Sum of absolute eigenvalues.
    pub fn nuclear_norm(&self) -> Result<f64> {
        nuclear_norm_sym(self)
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self
            .eig()?
            .values
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs())))
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

fn check_finite_slice(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite { row: i, col: i }),
        None => Ok(()),
    }
}

/// Returns the largest asymmetry and where it occurs.
fn validate_square(data: &DMatrix<f64>) -> Result<(f64, usize, usize)> {
    if data.nrows() != data.ncols() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            found: data.ncols(),
        });
    }
    let p = data.nrows();
    let mut worst = (0.0, 0, 0);
    for i in 0..p {
        for j in 0..p {
            let v = data[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            if j > i {
                let gap = (v - data[(j, i)]).abs();
                if gap > worst.0 {
                    worst = (gap, i, j);
                }
            }
        }
    }
    Ok(worst)
}

/// `p × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Validates `UᵀU = I` within [`ORTHONORMAL_TOL`] (Frobenius).
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() > columns.nrows() || columns.ncols() == 0 {
            return Err(invalid(format!(
                "basis must have 1 <= r <= p columns, got {}x{}",
                columns.nrows(),
                columns.ncols()
            )));
        }
        let gram = columns.transpose() * &columns;
        let err = (gram - DMatrix::<f64>::identity(columns.ncols(), columns.ncols())).norm();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(invalid(format!(
                "columns are not orthonormal (‖UᵀU - I‖_F = {err:e})"
            )));
        }
        Ok(OrthonormalBasis { columns })
    }

    pub(crate) fn from_columns_unchecked(columns: DMatrix<f64>) -> Self {
        OrthonormalBasis { columns }
    }

    /// Ambient dimension.
    pub fn p(&self) -> usize {
        self.columns.nrows()
    }

    /// Subspace dimension.
    pub fn r(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// First `r` columns.
    pub fn leading(&self, r: usize) -> Result<OrthonormalBasis> {
        if r == 0 || r > self.r() {
            return Err(invalid(format!("cannot take {r} of {} columns", self.r())));
        }
        Ok(OrthonormalBasis {
            columns: self.columns.columns(0, r).into_owned(),
        })
    }

    /// Columns picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<OrthonormalBasis> {
        if idx.is_empty() || idx.iter().any(|&k| k >= self.r()) {
            return Err(invalid("column selection out of range"));
        }
        Ok(OrthonormalBasis {
            columns: self.columns.select_columns(idx),
        })
    }

    /// Orthogonal projector `UUᵀ`.
    pub fn projector(&self) -> SymMatrix {
        let prod = &self.columns * self.columns.transpose();
        SymMatrix::from_lower_fn(self.p(), |i, j| prod[(i, j)])
            .expect("projector of a finite basis is finite")
    }
}

/// Eigendecomposition of a [`SymMatrix`]: values descending, matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: OrthonormalBasis,
}

impl EigenDecomp {
    /// `Σ_i w_i v_i v_iᵀ`, skipping zero weights.
    pub fn weighted_sum(&self, weights: &[f64]) -> SymMatrix {
        assert_eq!(weights.len(), self.values.len());
        let p = self.vectors.p();
        let active: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] != 0.0).collect();
        if active.is_empty() {
            return SymMatrix::zeros(p);
        }
        let v = self.vectors.columns().select_columns(&active);
        let mut scaled = v.clone();
        for (c, &k) in active.iter().enumerate() {
            scaled.column_mut(c).scale_mut(weights[k]);
        }
        let prod = scaled * v.transpose();
        SymMatrix::from_lower_fn(p, |i, j| prod[(i, j)]).expect("finite reconstruction")
    }

    /// `Σ_i f(λ_i) v_i v_iᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let w: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        self.weighted_sum(&w)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.weighted_sum(&self.values)
    }
}

/// Diagonal projector.
pub fn pdiag(m: &SymMatrix) -> SymMatrix {
    m.pdiag()
}

/// Off-diagonal projector, `M - pdiag(M)`.
pub fn poffdiag(m: &SymMatrix) -> SymMatrix {
    m.poffdiag()
}

/// Sum of absolute eigenvalues (equals the trace for PSD input).
pub fn nuclear_norm_sym(m: &SymMatrix) -> Result<f64> {
    Ok(eig_sym(m)?.values.iter().map(|v| v.abs()).sum())
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges when the off-diagonal Frobenius norm drops below
/// `JACOBI_REL_TOL · ‖M‖_F`; fails after [`JACOBI_MAX_SWEEPS`] sweeps.
/// Equal eigenvalues keep the order the sweeps leave them in.
pub fn eig_sym(m: &SymMatrix) -> Result<EigenDecomp> {
    let n = m.dim();
    // row-major working copies
    let mut a: Vec<f64> = (0..n * n).map(|k| m.get(k / n, k % n)).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let norm = m.frobenius_norm();
    let tol = JACOBI_REL_TOL * norm;
    let mut converged = norm == 0.0;
    let mut off = 0.0;
    let mut sweep = 0;
    while !converged {
        off = off_diagonal_norm(&a, n);
        if off <= tol {
            converged = true;
            break;
        }
        if sweep == JACOBI_MAX_SWEEPS {
            break;
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence {
            sweeps: sweep,
            off_norm: off,
        });
    }

    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep their Jacobi order
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let values: Vec<f64> = order.iter().map(|&k| diag[k]).collect();
    let mut cols = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        let mut lead = 0;
        for i in 1..n {
            if v[i * n + k].abs() > v[lead * n + k].abs() {
                lead = i;
            }
        }
        let sign = if v[lead * n + k] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            cols[(i, c)] = sign * v[i * n + k];
        }
    }
    Ok(EigenDecomp {
        values,
        vectors: OrthonormalBasis::from_columns_unchecked(cols),
    })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`.
#[inline]
fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let g = a[r * n + p];
        let h = a[r * n + q];
        let rp = g - s * (h + g * tau);
        let rq = h + s * (g - h * tau);
        a[r * n + p] = rp;
        a[p * n + r] = rp;
        a[r * n + q] = rq;
        a[q * n + r] = rq;
    }
    for r in 0..n {
        let g = v[r * n + p];
        let h = v[r * n + q];
        v[r * n + p] = g - s * (h + g * tau);
        v[r * n + q] = h + s * (g - h * tau);
    }
}

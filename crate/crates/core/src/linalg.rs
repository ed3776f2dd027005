//! Dense row-major matrices and the least-squares projection behind every
//! hyperplane fit.
//!
//! Least squares never forms `XᵀX`. The design matrix is decomposed with a
//! one-sided Jacobi SVD and singular values below `rtol · σ_max` are dropped,
//! which gives the ordinary `(XᵀX)⁻¹XᵀB` answer on full-rank input and the
//! minimum-norm answer otherwise.

use std::fmt;

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when callers have no opinion.
pub const DEFAULT_RTOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(6) {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row = self.row(r);
            for (c, v) in row.iter().take(6).enumerate() {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v:.6}")?;
            }
            if self.cols > 6 {
                write!(f, ", ..")?;
            }
        }
        if self.rows > 6 {
            write!(f, "; ..")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &DenseMatrix) -> bool {
        self.shape() == other.shape()
    }

    /// Gathers the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`. Each output entry accumulates its products in
    /// ascending inner index, so results are reproducible bit for bit.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "t_matmul",
                format!(
                    "({}x{})ᵀ times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let n = other.cols;
        let mut out = DenseMatrix::zeros(self.cols, n);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_t",
                format!(
                    "{}x{} times ({}x{})ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "mul_vec",
                format!("{}x{} times vector of {}", self.rows, self.cols, v.len()),
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn t_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "t_mul_vec",
                format!("({}x{})ᵀ times vector of {}", self.rows, self.cols, v.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &s) in v.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += s * a;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    pub fn neg(&self) -> DenseMatrix {
        self.map(|v| -v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += s · other`.
    pub fn add_scaled_assign(&mut self, s: f64, other: &DenseMatrix) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                "add_scaled_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &DenseMatrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ` with `r = min(m, n)`
/// columns in `U` (m×r) and `V` (n×r). Singular values are not sorted.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Data("svd input contains non-finite values".into()));
    }
    let wide = a.rows < a.cols;
    let g = if wide { a.transpose() } else { a.clone() };
    let (m, n) = g.shape();

    // Column-major working copies: rotations act on whole columns.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| g.column(c)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (m.max(1) as f64);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD of a {}x{} matrix did not converge in {JACOBI_MAX_SWEEPS} sweeps",
            a.rows, a.cols
        )));
    }

    let mut sigma = Vec::with_capacity(n);
    let mut u = DenseMatrix::zeros(m, n);
    let mut v = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let norm = dot(&cols[j], &cols[j]).sqrt();
        sigma.push(norm);
        if norm > 0.0 {
            for (i, x) in cols[j].iter().enumerate() {
                u.set(i, j, x / norm);
            }
        }
        for (i, x) in vcols[j].iter().enumerate() {
            v.set(i, j, *x);
        }
    }
    Ok(if wide {
        Svd {
            u: v,
            singular_values: sigma,
            v: u,
        }
    } else {
        Svd {
            u,
            singular_values: sigma,
            v,
        }
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// The truncated pseudo-inverse of a design matrix: `operator · B` is the
/// least-squares coefficient matrix for any right-hand side `B`.
#[derive(Debug, Clone)]
pub struct Projection {
    /// d×M, where the design matrix is M×d.
    pub operator: DenseMatrix,
    pub rank: usize,
    pub singular_floor: f64,
}

pub fn pseudo_inverse(x: &DenseMatrix, rtol: f64) -> Result<Projection> {
    if x.rows == 0 || x.cols == 0 {
        return Err(Error::shape(
            "pseudo_inverse",
            format!("empty design matrix {}x{}", x.rows, x.cols),
        ));
    }
    if rtol.is_nan() || rtol <= 0.0 {
        return Err(Error::Numeric(format!("rtol must be positive, got {rtol}")));
    }
    let Svd {
        u,
        singular_values,
        v,
    } = svd(x)?;
    let sigma_max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let floor = rtol * sigma_max;
    let (m, d) = x.shape();
    let mut operator = DenseMatrix::zeros(d, m);
    let mut rank = 0;
    for (j, &s) in singular_values.iter().enumerate() {
        if s <= floor || s == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / s;
        // operator += v_j · u_jᵀ / σ_j
        for i in 0..d {
            let vij = v.get(i, j) * inv;
            if vij == 0.0 {
                continue;
            }
            let row = operator.row_mut(i);
            for (k, o) in row.iter_mut().enumerate() {
                *o += vij * u.get(k, j);
            }
        }
    }
    if !operator.is_finite() {
        return Err(Error::Numeric(
            "pseudo-inverse produced non-finite values".into(),
        ));
    }
    Ok(Projection {
        operator,
        rank,
        singular_floor: floor,
    })
}

#[derive(Debug, Clone)]
pub struct LstsqResult {
    /// d×c coefficient matrix.
    pub solution: DenseMatrix,
    pub rank: usize,
    pub singular_floor: f64,
}

/// Minimum-norm minimizer of `‖X·W − B‖_F` over `W`.
pub fn least_squares_project(x: &DenseMatrix, b: &DenseMatrix, rtol: f64) -> Result<LstsqResult> {
    if x.rows != b.rows {
        return Err(Error::shape(
            "least_squares_project",
            format!("design has {} rows, targets have {}", x.rows, b.rows),
        ));
    }
    if !x.is_finite() || !b.is_finite() {
        return Err(Error::Data(
            "least-squares input contains non-finite values".into(),
        ));
    }
    let proj = pseudo_inverse(x, rtol)?;
    let solution = proj.operator.matmul(b)?;
    if !solution.is_finite() {
        return Err(Error::Numeric(
            "least-squares solution is not finite".into(),
        ));
    }
    Ok(LstsqResult {
        solution,
        rank: proj.rank,
        singular_floor: proj.singular_floor,
    })
}

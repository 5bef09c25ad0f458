//! Sparse symmetric matrices and a preconditioned conjugate-gradient
//! solver. Everything here runs serially in a fixed order so repeated
//! solves are bit-identical.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iterative solver did not converge within {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
}

/// Compressed sparse rows, scalar entries. Only used for symmetric
/// operators; the full pattern is stored.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from a fixed sparsity pattern given per-row sorted column
    /// lists; values start at zero.
    pub fn from_pattern(patterns: &[Vec<u32>]) -> Csr {
        let n = patterns.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        for row in patterns {
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Csr { n, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    /// Add `v` at (i, j); the slot must exist in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let cols = &self.cols[lo..hi];
        let k = match cols.binary_search(&(j as u32)) {
            Ok(k) => k,
            Err(_) => panic!("entry ({i}, {j}) not in sparsity pattern"),
        };
        self.vals[lo + k] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] as usize == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }
}

/// Symmetric block-sparse matrix with 3x3 blocks; only the upper triangle
/// (block column >= block row) is stored and the transpose contribution is
/// applied on the fly.
#[derive(Debug, Clone)]
pub struct SymBsr3 {
    pub n_blocks: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    /// Row-major 3x3 blocks.
    pub blocks: Vec<[f64; 9]>,
}

impl SymBsr3 {
    /// Build from per-row sorted upper-triangle column lists (each list
    /// must start at the diagonal block).
    pub fn from_pattern(patterns: &[Vec<u32>]) -> SymBsr3 {
        let n_blocks = patterns.len();
        let mut row_ptr = Vec::with_capacity(n_blocks + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        for row in patterns {
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        SymBsr3 { n_blocks, row_ptr, cols, blocks: vec![[0.0; 9]; nnz] }
    }

    /// Accumulate a full 3x3 block at block position (i, j) with i <= j.
    #[inline]
    pub fn add_block(&mut self, i: usize, j: usize, b: &[f64; 9]) {
        debug_assert!(i <= j);
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let k = match self.cols[lo..hi].binary_search(&(j as u32)) {
            Ok(k) => k,
            Err(_) => panic!("block ({i}, {j}) not in sparsity pattern"),
        };
        let dst = &mut self.blocks[lo + k];
        for m in 0..9 {
            dst[m] += b[m];
        }
    }

    /// y = A x, applying stored blocks and their transposes.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n_blocks {
            let xi = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
            let mut yi = [0.0f64; 3];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                let b = &self.blocks[k];
                let xj = [x[3 * j], x[3 * j + 1], x[3 * j + 2]];
                yi[0] += b[0] * xj[0] + b[1] * xj[1] + b[2] * xj[2];
                yi[1] += b[3] * xj[0] + b[4] * xj[1] + b[5] * xj[2];
                yi[2] += b[6] * xj[0] + b[7] * xj[1] + b[8] * xj[2];
                if j != i {
                    y[3 * j] += b[0] * xi[0] + b[3] * xi[1] + b[6] * xi[2];
                    y[3 * j + 1] += b[1] * xi[0] + b[4] * xi[1] + b[7] * xi[2];
                    y[3 * j + 2] += b[2] * xi[0] + b[5] * xi[1] + b[8] * xi[2];
                }
            }
            y[3 * i] += yi[0];
            y[3 * i + 1] += yi[1];
            y[3 * i + 2] += yi[2];
        }
    }

    /// Inverses of the diagonal 3x3 blocks, for block-Jacobi
    /// preconditioning.
    pub fn diagonal_block_inverses(&self) -> Result<Vec<[f64; 9]>, SolveError> {
        let mut out = Vec::with_capacity(self.n_blocks);
        for i in 0..self.n_blocks {
            let lo = self.row_ptr[i];
            debug_assert_eq!(self.cols[lo] as usize, i, "row must start at the diagonal block");
            let b = &self.blocks[lo];
            out.push(invert3(b).ok_or_else(|| SolveError::Singular(format!("diagonal block {i}")))?);
        }
        Ok(out)
    }
}

fn invert3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

/// Abstraction over the two matrix layouts so one PCG loop serves both.
pub trait SpdOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

/// Scalar operator with Jacobi preconditioning.
pub struct JacobiCsr<'a> {
    pub mat: &'a Csr,
    pub inv_diag: Vec<f64>,
}

impl<'a> JacobiCsr<'a> {
    pub fn new(mat: &'a Csr) -> Result<Self, SolveError> {
        let mut inv_diag = mat.diagonal();
        for (i, d) in inv_diag.iter_mut().enumerate() {
            if *d <= 0.0 || !d.is_finite() {
                return Err(SolveError::Singular(format!("nonpositive diagonal at row {i}")));
            }
            *d = 1.0 / *d;
        }
        Ok(JacobiCsr { mat, inv_diag })
    }
}

impl SpdOperator for JacobiCsr<'_> {
    fn dim(&self) -> usize {
        self.mat.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mat.matvec(x, y);
    }
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        for i in 0..r.len() {
            z[i] = r[i] * self.inv_diag[i];
        }
    }
}

/// Block operator with block-Jacobi preconditioning.
pub struct BlockJacobiBsr3<'a> {
    pub mat: &'a SymBsr3,
    pub inv_blocks: Vec<[f64; 9]>,
}

impl<'a> BlockJacobiBsr3<'a> {
    pub fn new(mat: &'a SymBsr3) -> Result<Self, SolveError> {
        Ok(BlockJacobiBsr3 { mat, inv_blocks: mat.diagonal_block_inverses()? })
    }
}

impl SpdOperator for BlockJacobiBsr3<'_> {
    fn dim(&self) -> usize {
        3 * self.mat.n_blocks
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mat.matvec(x, y);
    }
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        for i in 0..self.inv_blocks.len() {
            let b = &self.inv_blocks[i];
            let r0 = r[3 * i];
            let r1 = r[3 * i + 1];
            let r2 = r[3 * i + 2];
            z[3 * i] = b[0] * r0 + b[1] * r1 + b[2] * r2;
            z[3 * i + 1] = b[3] * r0 + b[4] * r1 + b[5] * r2;
            z[3 * i + 2] = b[6] * r0 + b[7] * r1 + b[8] * r2;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients on an SPD operator. `x` holds the
/// initial guess on entry and the solution on success. Convergence is
/// `||b - Ax|| <= rel_tol * ||b||`; a zero right-hand side yields x = 0.
pub fn pcg<M: SpdOperator>(
    op: &M,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgReport, SolveError> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);

    let norm_b = norm2(b);
    if norm_b == 0.0 {
        x.fill(0.0);
        return Ok(CgReport { iterations: 0, relative_residual: 0.0 });
    }
    let target = rel_tol * norm_b;

    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    op.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rho = dot(&r, &z);
    let mut res = norm2(&r);

    let mut iterations = 0;
    while res > target {
        if iterations >= max_iter {
            return Err(SolveError::NonConvergence { iterations, residual: res / norm_b });
        }
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Err(SolveError::Singular("operator is not positive definite".into()));
        }
        let alpha = rho / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm2(&r);
        iterations += 1;
        if res <= target {
            break;
        }
        op.precondition(&r, &mut z);
        let rho_next = dot(&r, &z);
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Ok(CgReport { iterations, relative_residual: res / norm_b })
}

/// Dense Gaussian elimination with partial pivoting for small systems.
/// Returns `None` when the matrix is numerically rank-deficient.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col].abs() < 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

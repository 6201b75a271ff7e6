//! Small dense linear algebra.
//!
//! Matrices here are tiny (tens of rows at most), so everything is dense,
//! row-major and allocation-happy. Provides real matrices, complex LU
//! solves for the nodal equations, a Hessenberg/shifted-QR eigenvalue
//! routine for general real matrices, and cyclic Jacobi for symmetric ones.

#![allow(clippy::needless_range_loop, clippy::assign_op_pattern)]

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot column {0})")]
    Singular(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `self · other · selfᵀ`, the congruence used for projections.
    pub fn congruence(&self, other: &Self) -> Self {
        self.matmul(other).matmul(&self.transpose())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn symmetric_part(&self) -> Self {
        self.add(&self.transpose()).scale(T::c(0.5))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: Self) -> Matrix<T> {
        self.matmul(rhs)
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// LU factorization with partial pivoting of a dense complex matrix.
#[derive(Debug, Clone)]
pub struct ComplexLu<T> {
    n: usize,
    lu: Vec<Complex<T>>,
    perm: Vec<usize>,
}

impl<T: Scalar> ComplexLu<T> {
    /// Factors the `n×n` row-major matrix `a`.
    pub fn factor(n: usize, mut a: Vec<Complex<T>>) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::Dimension {
                expected: n * n,
                got: a.len(),
            });
        }
        let scale = a.iter().fold(T::zero(), |m, z| m.max(z.norm()));
        let tiny = scale * T::epsilon() * T::c(n.max(1) as f64);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].norm()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tiny || pmax == T::zero() {
                return Err(LinalgError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f == Complex::new(T::zero(), T::zero()) {
                    continue;
                }
                for j in k + 1..n {
                    let akj = a[k * n + j];
                    a[i * n + j] = a[i * n + j] - f * akj;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex<T>> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                x[i] = x[i] - l * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                x[i] = x[i] - u * x[j];
            }
            x[i] = x[i] / self.lu[i * n + i];
        }
        x
    }
}

/// Solves `a·x = b` for a dense complex `n×n` system.
pub fn solve_complex<T: Scalar>(
    n: usize,
    a: Vec<Complex<T>>,
    b: &[Complex<T>],
) -> Result<Vec<Complex<T>>, LinalgError> {
    Ok(ComplexLu::factor(n, a)?.solve(b))
}

/// Solves the real system `a·x = b` through the complex LU.
pub fn solve_real<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(LinalgError::Dimension { expected: n, got: b.len() });
    }
    let z = |x: T| Complex::new(x, T::zero());
    let m: Vec<Complex<T>> = (0..n).flat_map(|i| a.row(i).iter().map(move |&x| z(x))).collect();
    let rhs: Vec<Complex<T>> = b.iter().map(|&x| z(x)).collect();
    Ok(solve_complex(n, m, &rhs)?.into_iter().map(|c| c.re).collect())
}

/// Eigenvalues of a general real square matrix.
///
/// Balancing, reduction to upper Hessenberg form by stabilized elementary
/// similarity transforms, then the Francis double-shift QR iteration.
/// Conjugate pairs are returned adjacent, positive imaginary part first.
pub fn eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<Complex<T>>, LinalgError> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy keeps the QR sweep readable.
    let mut a = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    balance(&mut a, n);
    to_hessenberg(&mut a, n);
    for i in 1..=n {
        for j in 1..i.saturating_sub(1) {
            a[i][j] = T::zero();
        }
    }
    hessenberg_qr(&mut a, n)
}

fn balance<T: Scalar>(a: &mut [Vec<T>], n: usize) {
    let radix = T::c(2.0);
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = T::zero();
            let mut c = T::zero();
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != T::zero() && r != T::zero() {
                let mut g = r / radix;
                let mut f = T::one();
                let s = c + r;
                while c < g {
                    f *= radix;
                    c *= sqrdx;
                }
                g = r * radix;
                while c > g {
                    f /= radix;
                    c /= sqrdx;
                }
                if (c + r) / f < T::c(0.95) * s {
                    done = false;
                    let g = T::one() / f;
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for j in 1..=n {
                        a[j][i] *= f;
                    }
                }
            }
        }
    }
}

fn to_hessenberg<T: Scalar>(a: &mut [Vec<T>], n: usize) {
    if n < 3 {
        return;
    }
    for m in 2..n {
        let mut x = T::zero();
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let tmp = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut().skip(1).take(n) {
                row.swap(i, m);
            }
        }
        if x != T::zero() {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != T::zero() {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        let amj = a[m][j];
                        a[i][j] -= y * amj;
                    }
                    for j in 1..=n {
                        let aji = a[j][i];
                        a[j][m] += y * aji;
                    }
                }
            }
        }
    }
}

#[inline]
fn sign<T: Scalar>(a: T, b: T) -> T {
    if b >= T::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names)]
fn hessenberg_qr<T: Scalar>(a: &mut [Vec<T>], n: usize) -> Result<Vec<Complex<T>>, LinalgError> {
    const MAX_ITS: usize = 60;
    let zero = T::zero();
    let mut wr = vec![zero; n + 1];
    let mut wi = vec![zero; n + 1];
    let mut anorm = zero;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = zero;
    let (mut p, mut q, mut r): (T, T, T);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == zero {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = zero;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = zero;
                nn -= 1;
                break;
            }
            y = a[nn - 1][nn - 1];
            w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                p = T::c(0.5) * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= zero {
                    z = p + sign(z, p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != zero {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = zero;
                    wi[nn] = zero;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = z;
                    wi[nn] = -z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if its == MAX_ITS {
                return Err(LinalgError::NoConvergence(MAX_ITS));
            }
            if its == 10 || its == 20 || its == 40 {
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = T::c(0.75) * s;
                y = x;
                w = T::c(-0.4375) * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            loop {
                z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i][i - 2] = zero;
                if i != m + 2 {
                    a[i][i - 3] = zero;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = zero;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != zero {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != zero {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex::new(wr[i], wi[i])).collect())
}

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues (ascending) and eigenvectors as the
/// columns of the returned matrix, in matching order.
pub fn symmetric_eigen<T: Scalar>(m: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>), LinalgError> {
    assert!(m.is_square());
    let n = m.rows();
    let mut a = m.symmetric_part();
    let mut v = Matrix::identity(n);
    const MAX_SWEEPS: usize = 100;
    let scale = a.frobenius_norm().max(T::min_positive_value());
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<T>()
            .sqrt();
        if off <= scale * T::epsilon() {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::c(2.0) * apq);
                let t = sign(T::one(), theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Roots of `c[0]·x^d + c[1]·x^(d-1) + … + c[d]` via the companion matrix.
/// Leading zero coefficients are stripped first.
pub fn poly_roots<T: Scalar>(coeffs: &[T]) -> Result<Vec<Complex<T>>, LinalgError> {
    let start = coeffs.iter().position(|&c| c != T::zero()).unwrap_or(coeffs.len());
    let c = &coeffs[start..];
    if c.len() <= 1 {
        return Ok(Vec::new());
    }
    let d = c.len() - 1;
    let mut comp = Matrix::zeros(d, d);
    for j in 0..d {
        comp[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..d {
        comp[(i, i - 1)] = T::one();
    }
    eigenvalues(&comp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        v
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotation() {
        let d = Matrix::diag(&[3.0, -1.0, 2.0]);
        let ev = sorted(eigenvalues(&d).unwrap());
        assert!((ev[0].re + 1.0).abs() < 1e-14);
        assert!((ev[2].re - 3.0).abs() < 1e-14);

        let rot = Matrix::from_rows(&[vec![0.0, -2.0], vec![2.0, 0.0]]);
        let ev = sorted(eigenvalues(&rot).unwrap());
        assert!(ev[0].re.abs() < 1e-14 && (ev[0].im.abs() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn polynomial_roots_known() {
        // (x-1)(x-2)(x-3)
        let r = sorted(poly_roots(&[1.0, -6.0, 11.0, -6.0]).unwrap());
        for (z, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z.re - want).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
        // x^2 + 1
        let r = poly_roots(&[1.0f64, 0.0, 1.0]).unwrap();
        assert!(r.iter().all(|z| z.re.abs() < 1e-14 && (z.im.abs() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn f32_eigenvalues() {
        let m = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut ev: Vec<f32> = eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 1.0).abs() < 1e-5 && (ev[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, -2.0],
            vec![1.0, 2.0, 0.5],
            vec![-2.0, 0.5, 3.0],
        ]);
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        let rebuilt = vecs.matmul(&Matrix::diag(&vals)).matmul(&vecs.transpose());
        assert!(rebuilt.sub(&m).max_abs() < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn complex_solve_and_singular() {
        let c = |re: f64, im: f64| Complex::new(re, im);
        let a = vec![c(2.0, 1.0), c(0.0, -1.0), c(1.0, 0.0), c(3.0, 0.0)];
        let x = [c(1.0, 2.0), c(-0.5, 0.25)];
        let b = vec![a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]];
        let got = solve_complex(2, a, &b).unwrap();
        assert!((got[0] - x[0]).norm() < 1e-14 && (got[1] - x[1]).norm() < 1e-14);

        let sing = vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)];
        assert!(matches!(
            ComplexLu::factor(2, sing),
            Err(LinalgError::Singular(_))
        ));
    }
}

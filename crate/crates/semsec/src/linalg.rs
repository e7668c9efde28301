//! Small dense f64 linear algebra: row-major matrices, cache-friendly
//! products, Cholesky/LU solves and a Jacobi symmetric eigensolver.
//!
//! Everything here is sized for desk-scale work (4x4 channel matrices,
//! minibatch-by-feature activation blocks); there are no heap-free fast
//! paths or SIMD intrinsics, just loop orders the compiler vectorizes.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out = a * b`. Panics on dimension mismatch.
pub fn matmul_into(a: &Mat, b: &Mat, out: &mut Mat) {
    assert_eq!(a.cols, b.rows, "matmul inner dims must agree");
    assert_eq!((out.rows, out.cols), (a.rows, b.cols));
    out.data.fill(0.0);
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out);
    out
}

/// `out += a^T * b` without materializing the transpose.
/// Shapes: a is (n, r), b is (n, c), out is (r, c).
pub fn matmul_at_b_accum(a: &Mat, b: &Mat, out: &mut Mat) {
    assert_eq!(a.rows, b.rows, "a^T*b: row counts must agree");
    assert_eq!((out.rows, out.cols), (a.cols, b.cols));
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let b_row = &b.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let out_row = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out = a * b^T` without materializing the transpose.
/// Shapes: a is (n, c), b is (m, c), out is (n, m).
pub fn matmul_a_bt_into(a: &Mat, b: &Mat, out: &mut Mat) {
    assert_eq!(a.cols, b.cols, "a*b^T: column counts must agree");
    assert_eq!((out.rows, out.cols), (a.rows, b.rows));
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out.data[i * b.rows..(i + 1) * b.rows];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b.data[j * b.cols..(j + 1) * b.cols];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
}

/// Solves `m * x = rhs` for symmetric positive definite `m` via Cholesky.
/// `rhs` may have multiple columns.
pub fn cholesky_solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", m.rows, m.cols),
            "cholesky_solve matrix",
        ));
    }
    if rhs.rows != n {
        return Err(Error::shape(
            format!("{n} rows"),
            format!("{} rows", rhs.rows),
            "cholesky_solve rhs",
        ));
    }

    // Lower-triangular factor, in place over a copy.
    let mut l = m.clone();
    for j in 0..n {
        let mut d = l.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "cholesky factorization failed at pivot {j}: value {d}"
            )));
        }
        let d_sqrt = d.sqrt();
        l.set(j, j, d_sqrt);
        for i in (j + 1)..n {
            let mut v = l.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / d_sqrt);
        }
    }

    // Forward then backward substitution per column.
    let mut x = rhs.clone();
    for c in 0..rhs.cols {
        for i in 0..n {
            let mut v = x.get(i, c);
            for k in 0..i {
                v -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut v = x.get(i, c);
            for k in (i + 1)..n {
                v -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
    }
    Ok(x)
}

/// Solves `m * x = rhs` for general square `m` via LU with partial pivoting.
pub fn lu_solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", m.rows, m.cols),
            "lu_solve matrix",
        ));
    }
    if rhs.rows != n {
        return Err(Error::shape(
            format!("{n} rows"),
            format!("{} rows", rhs.rows),
            "lu_solve rhs",
        ));
    }

    let mut lu = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pivot = k;
        let mut pivot_abs = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > pivot_abs {
                pivot = i;
                pivot_abs = v;
            }
        }
        if pivot_abs < 1e-300 || !pivot_abs.is_finite() {
            return Err(Error::Numerical(format!(
                "lu factorization failed: singular at column {k}"
            )));
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(pivot, j));
                lu.set(pivot, j, tmp);
            }
            perm.swap(k, pivot);
        }
        let pivot_val = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pivot_val;
            lu.set(i, k, factor);
            for j in (k + 1)..n {
                let v = lu.get(i, j) - factor * lu.get(k, j);
                lu.set(i, j, v);
            }
        }
    }

    let mut x = Mat::zeros(n, rhs.cols);
    for c in 0..rhs.cols {
        // Apply permutation, then forward/backward substitution.
        for i in 0..n {
            x.set(i, c, rhs.get(perm[i], c));
        }
        for i in 0..n {
            let mut v = x.get(i, c);
            for k in 0..i {
                v -= lu.get(i, k) * x.get(k, c);
            }
            x.set(i, c, v);
        }
        for i in (0..n).rev() {
            let mut v = x.get(i, c);
            for k in (i + 1)..n {
                v -= lu.get(i, k) * x.get(k, c);
            }
            x.set(i, c, v / lu.get(i, i));
        }
    }
    Ok(x)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvectors are the columns of the returned matrix.
pub fn sym_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", m.rows, m.cols),
            "sym_eigen matrix",
        ));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("sym_eigen: non-finite input".into()));
    }

    let mut a = m.clone();
    let mut v = Mat::identity(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.frobenius_norm()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let eig_sorted: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let v_sorted = Mat::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((eig_sorted, v_sorted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Brute-force triple loop, kept deliberately separate from matmul_into.
    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..a.cols {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (n, k, m) = (
                rng.random_range(1..7),
                rng.random_range(1..7),
                rng.random_range(1..7),
            );
            let a = random_mat(n, k, &mut rng);
            let b = random_mat(k, m, &mut rng);
            let fast = matmul(&a, &b);
            let slow = naive_matmul(&a, &b);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a = random_mat(5, 3, &mut rng);
        let b = random_mat(5, 4, &mut rng);
        let mut atb = Mat::zeros(3, 4);
        matmul_at_b_accum(&a, &b, &mut atb);
        assert!(atb.max_abs_diff(&naive_matmul(&a.transpose(), &b)) < 1e-12);

        let c = random_mat(6, 4, &mut rng);
        let d = random_mat(2, 4, &mut rng);
        let mut cdt = Mat::zeros(6, 2);
        matmul_a_bt_into(&c, &d, &mut cdt);
        assert!(cdt.max_abs_diff(&naive_matmul(&c, &d.transpose())) < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_mat(4, 4, &mut rng);
            // h*h^T + I is SPD.
            let mut m = naive_matmul(&h, &h.transpose());
            for i in 0..4 {
                m.set(i, i, m.get(i, i) + 1.0);
            }
            let x_true = random_mat(4, 3, &mut rng);
            let rhs = naive_matmul(&m, &x_true);
            let x = cholesky_solve(&m, &rhs).unwrap();
            assert!(x.max_abs_diff(&x_true) < 1e-9);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        let rhs = Mat::zeros(2, 1);
        assert!(cholesky_solve(&m, &rhs).is_err());
    }

    #[test]
    fn lu_solves_general_system() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_mat(4, 4, &mut rng);
            let x_true = random_mat(4, 2, &mut rng);
            let rhs = naive_matmul(&m, &x_true);
            let x = lu_solve(&m, &rhs).unwrap();
            assert!(x.max_abs_diff(&x_true) < 1e-8);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        let rhs = Mat::zeros(2, 1);
        assert!(lu_solve(&m, &rhs).is_err());
    }

    #[test]
    fn jacobi_recovers_diagonal_spectrum() {
        let m = Mat::from_fn(4, 4, |i, j| if i == j { (4 - i) as f64 } else { 0.0 });
        let (eig, v) = sym_eigen(&m).unwrap();
        assert!((eig[0] - 4.0).abs() < 1e-12);
        assert!((eig[3] - 1.0).abs() < 1e-12);
        // Eigenvectors of a diagonal matrix are signed unit vectors.
        for j in 0..4 {
            let col: Vec<f64> = (0..4).map(|i| v.get(i, j)).collect();
            let nrm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((nrm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_diagonalizes_random_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h = random_mat(4, 4, &mut rng);
            let m = naive_matmul(&h, &h.transpose());
            let (eig, v) = sym_eigen(&m).unwrap();
            // Descending order.
            for w in eig.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
            // m*v_j == eig_j * v_j.
            for j in 0..4 {
                let col = Mat::from_fn(4, 1, |i, _| v.get(i, j));
                let mv = naive_matmul(&m, &col);
                let lv = col.scale(eig[j]);
                assert!(mv.max_abs_diff(&lv) < 1e-9);
            }
            // v orthonormal.
            let vtv = naive_matmul(&v.transpose(), &v);
            assert!(vtv.max_abs_diff(&Mat::identity(4)) < 1e-10);
        }
    }
}

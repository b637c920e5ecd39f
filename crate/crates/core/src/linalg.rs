//! Dense linear-algebra helpers shared by the model, solver and synthesis code.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.max()
}

/// Largest singular value.
pub fn norm2(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are floored at zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let n = m.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(sym(m));
    let d = Mat::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Thin factor `G` (n x r) with `G Gᵀ = m`, dropping the numerically zero part
/// of the spectrum. Returns an n x 0 matrix for a zero input.
pub fn thin_factor(m: &Mat) -> Mat {
    let n = m.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(sym(m));
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let cut = 1e-13 * top;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cut && top > 0.0).collect();
    let mut g = Mat::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..n {
            g[(r, c)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    g
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn trace(m: &Mat) -> f64 {
    m.diagonal().sum()
}

/// Frobenius inner product.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Matrix exponential by Padé(13) scaling and squaring.
pub fn expm(a: &Mat) -> Mat {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * 2f64.powi(-s);
    let id = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Solves `X = A X Aᵀ + Q` for Schur-stable `A` by the doubling iteration.
pub fn dlyap(a: &Mat, q: &Mat) -> Option<Mat> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &x * ak.transpose();
        let done = inc.norm() <= 1e-15 * x.norm().max(1e-300);
        x += inc;
        if done {
            return Some(sym(&x));
        }
        ak = &ak * &ak;
        if !is_finite(&ak) {
            return None;
        }
    }
    None
}

/// Lower Cholesky factor computed with a blocked right-looking sweep so the
/// trailing updates run through the optimized matrix product.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

const CHOL_BLOCK: usize = 64;

impl Cholesky {
    /// Factors a symmetric positive definite matrix (only the lower triangle is read).
    /// On failure returns the index of the first non-positive pivot.
    pub fn new(mut a: Mat) -> std::result::Result<Self, usize> {
        let n = a.nrows();
        let mut k = 0;
        while k < n {
            let b = CHOL_BLOCK.min(n - k);
            // unblocked factor of the diagonal block
            for j in k..k + b {
                let mut d = a[(j, j)];
                for p in k..j {
                    d -= a[(j, p)] * a[(j, p)];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return Err(j);
                }
                let d = d.sqrt();
                a[(j, j)] = d;
                for i in j + 1..k + b {
                    let mut s = a[(i, j)];
                    for p in k..j {
                        s -= a[(i, p)] * a[(j, p)];
                    }
                    a[(i, j)] = s / d;
                }
            }
            let rest = n - k - b;
            if rest > 0 {
                // panel: A21 <- A21 L11^{-T}
                let l11 = a.view((k, k), (b, b)).clone_owned();
                let mut panel_t = a.view((k + b, k), (rest, b)).transpose();
                for c in 0..rest {
                    for j in 0..b {
                        let mut s = panel_t[(j, c)];
                        for p in 0..j {
                            s -= l11[(j, p)] * panel_t[(p, c)];
                        }
                        panel_t[(j, c)] = s / l11[(j, j)];
                    }
                }
                let panel = panel_t.transpose();
                a.view_mut((k + b, k), (rest, b)).copy_from(&panel);
                // trailing lower update, one column block at a time
                let mut j = 0;
                while j < rest {
                    let w = CHOL_BLOCK.min(rest - j);
                    let lhs = panel.view((j, 0), (rest - j, b));
                    let rhs = panel_t.view((0, j), (b, w));
                    a.view_mut((k + b + j, k + b + j), (rest - j, w)).gemm(-1.0, &lhs, &rhs, 1.0);
                    j += w;
                }
            }
            k += b;
        }
        for j in 0..n {
            for i in 0..j {
                a[(i, j)] = 0.0;
            }
        }
        Ok(Self { l: a })
    }

    pub fn l(&self) -> &Mat {
        &self.l
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.l.nrows();
        let l = &self.l;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for p in 0..i {
                s -= l[(i, p)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for p in i + 1..n {
                s -= l[(p, i)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_cholesky_matches_nalgebra() {
        let n = 150;
        let g = Mat::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 23) as f64 / 23.0 - 0.5);
        let a = &g * g.transpose() + Mat::identity(n, n);
        let ours = Cholesky::new(a.clone()).unwrap();
        let reference = a.clone().cholesky().unwrap();
        assert!((ours.l() - reference.l()).norm() < 1e-10);
        let b = Vector::from_fn(n, |i, _| i as f64);
        let x = ours.solve(&b);
        assert!((&a * x - b).norm() < 1e-8);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(Cholesky::new(a).unwrap_err(), 1);
    }

    #[test]
    fn dlyap_scalar() {
        let a = Mat::from_element(1, 1, 0.5);
        let q = Mat::from_element(1, 1, 1.0);
        let x = dlyap(&a, &q).unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn thin_factor_reproduces_gram() {
        let g = Mat::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0]);
        let m = &g * g.transpose();
        let f = thin_factor(&m);
        assert_eq!(f.ncols(), 2);
        assert!((&f * f.transpose() - m).norm() < 1e-12);
    }
}

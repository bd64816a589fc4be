//! Singular values by Householder bidiagonalization followed by implicitly
//! shifted QR on the bidiagonal (Golub-Reinsch). Singular vectors are never
//! formed.

use super::{LinalgError, Matrix, SingularSpectrum};

const MAX_QR_ITERATIONS: usize = 75;

/// All `min(rows, cols)` singular values of `m`, descending.
///
/// Values at or below `max(rows, cols) * ε * σ₁` are indistinguishable from
/// rounding and are reported as exact zeros.
pub fn singular_values(m: &Matrix) -> Result<SingularSpectrum, LinalgError> {
    let (tall_rows, tall_cols) = if m.rows() >= m.cols() {
        (m.rows(), m.cols())
    } else {
        (m.cols(), m.rows())
    };
    let mut work = Workspace::new(m, tall_rows, tall_cols)?;
    work.bidiagonalize();
    work.diagonalize()?;

    let mut values = work.diag;
    values.iter_mut().for_each(|v| *v = v.abs());
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let floor = tall_rows as f64 * f64::EPSILON * top;
    for v in &mut values {
        if *v <= floor {
            *v = 0.0;
        }
    }
    SingularSpectrum::from_unsorted(values)
}

struct Workspace {
    m: usize,
    n: usize,
    /// Column-major `m x n`, `m >= n`.
    a: Vec<f64>,
    diag: Vec<f64>,
    /// Superdiagonal; `superdiag[i]` couples `diag[i-1]` and `diag[i]`.
    superdiag: Vec<f64>,
    norm: f64,
}

fn alloc(len: usize, rows: usize, cols: usize) -> Result<Vec<f64>, LinalgError> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|_| LinalgError::Resource { rows, cols })?;
    v.resize(len, 0.0);
    Ok(v)
}

#[inline]
fn with_sign(magnitude: f64, sign_of: f64) -> f64 {
    if sign_of >= 0.0 {
        magnitude.abs()
    } else {
        -magnitude.abs()
    }
}

impl Workspace {
    fn new(src: &Matrix, m: usize, n: usize) -> Result<Self, LinalgError> {
        let len = m
            .checked_mul(n)
            .ok_or(LinalgError::Resource { rows: src.rows(), cols: src.cols() })?;
        let mut a = alloc(len, src.rows(), src.cols())?;
        let data = src.as_slice();
        if src.rows() >= src.cols() {
            // column j of the tall matrix is column j of src
            for r in 0..m {
                for c in 0..n {
                    a[c * m + r] = data[r * n + c];
                }
            }
        } else {
            // tall matrix is the transpose: its column j is row j of src
            a.copy_from_slice(data);
        }
        Ok(Self {
            m,
            n,
            a,
            diag: alloc(n, src.rows(), src.cols())?,
            superdiag: alloc(n, src.rows(), src.cols())?,
            norm: 0.0,
        })
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.m..(j + 1) * self.m]
    }

    fn bidiagonalize(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut g = 0.0_f64;
        let mut scale = 0.0_f64;
        let mut row_buf = vec![0.0; n];
        let mut dots = vec![0.0; m];

        for i in 0..n {
            let l = i + 1;
            self.superdiag[i] = scale * g;

            // left reflector zeroing column i below the diagonal
            g = 0.0;
            scale = self.col(i)[i..].iter().map(|v| v.abs()).sum();
            if scale != 0.0 {
                let col_i = &mut self.a[i * m..(i + 1) * m];
                let mut s = 0.0;
                for v in &mut col_i[i..] {
                    *v /= scale;
                    s += *v * *v;
                }
                let f = col_i[i];
                g = -with_sign(s.sqrt(), f);
                let h = f * g - s;
                col_i[i] = f - g;
                for j in l..n {
                    let (head, tail) = self.a.split_at_mut(j * m);
                    let ci = &head[i * m..(i + 1) * m];
                    let cj = &mut tail[..m];
                    let s: f64 = ci[i..].iter().zip(&cj[i..]).map(|(x, y)| x * y).sum();
                    let f = s / h;
                    for (y, x) in cj[i..].iter_mut().zip(&ci[i..]) {
                        *y += f * x;
                    }
                }
                self.a[i * m + i..(i + 1) * m].iter_mut().for_each(|v| *v *= scale);
            }
            self.diag[i] = scale * g;

            // right reflector zeroing row i right of the superdiagonal
            g = 0.0;
            scale = 0.0;
            if i + 1 < n {
                scale = (l..n).map(|k| self.a[k * m + i].abs()).sum();
                if scale != 0.0 {
                    let mut s = 0.0;
                    for k in l..n {
                        let v = &mut self.a[k * m + i];
                        *v /= scale;
                        s += *v * *v;
                    }
                    let f = self.a[l * m + i];
                    g = -with_sign(s.sqrt(), f);
                    let h = f * g - s;
                    self.a[l * m + i] = f - g;
                    for (k, r) in (l..n).zip(&mut row_buf[l..n]) {
                        *r = self.a[k * m + i] / h;
                    }
                    // dots[j] = <row j, row i> over columns l..n, for rows j in l..m
                    dots[l..].iter_mut().for_each(|d| *d = 0.0);
                    for k in l..n {
                        let rik = self.a[k * m + i];
                        let ck = &self.a[k * m..(k + 1) * m];
                        for (d, x) in dots[l..].iter_mut().zip(&ck[l..]) {
                            *d += x * rik;
                        }
                    }
                    for (k, &r) in (l..n).zip(&row_buf[l..n]) {
                        let ck = &mut self.a[k * m..(k + 1) * m];
                        for (x, d) in ck[l..].iter_mut().zip(&dots[l..]) {
                            *x += d * r;
                        }
                    }
                    for k in l..n {
                        self.a[k * m + i] *= scale;
                    }
                }
            }
            self.norm = self.norm.max(self.diag[i].abs() + self.superdiag[i].abs());
        }
    }

    fn diagonalize(&mut self) -> Result<(), LinalgError> {
        let n = self.n;
        let w = &mut self.diag;
        let rv1 = &mut self.superdiag;
        let tol = f64::EPSILON * self.norm;

        for k in (0..n).rev() {
            let mut iterations = 0;
            loop {
                // find l such that rv1[l] is negligible (rv1[0] always is)
                let mut l = k;
                let mut cancel = true;
                loop {
                    if l == 0 || rv1[l].abs() <= tol {
                        cancel = false;
                        break;
                    }
                    if w[l - 1].abs() <= tol {
                        break;
                    }
                    l -= 1;
                }
                if cancel {
                    // w[l-1] is negligible: chase rv1[l] out of the block
                    let mut c = 0.0;
                    let mut s = 1.0;
                    for i in l..=k {
                        let f = s * rv1[i];
                        rv1[i] *= c;
                        if f.abs() <= tol {
                            break;
                        }
                        let g = w[i];
                        let h = f.hypot(g);
                        w[i] = h;
                        c = g / h;
                        s = -f / h;
                    }
                }
                let z = w[k];
                if l == k {
                    if z < 0.0 {
                        w[k] = -z;
                    }
                    break;
                }
                if iterations == MAX_QR_ITERATIONS {
                    return Err(LinalgError::NoConvergence { iterations });
                }
                iterations += 1;

                // Wilkinson shift from the trailing 2x2
                let mut x = w[l];
                let nm = k - 1;
                let mut y = w[nm];
                let mut g = rv1[nm];
                let mut h = rv1[k];
                let mut f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y);
                g = f.hypot(1.0);
                f = ((x - z) * (x + z) + h * ((y / (f + with_sign(g, f))) - h)) / x;

                let mut c = 1.0;
                let mut s = 1.0;
                for j in l..=nm {
                    let i = j + 1;
                    g = rv1[i];
                    y = w[i];
                    h = s * g;
                    g *= c;
                    let mut z = f.hypot(h);
                    rv1[j] = z;
                    c = f / z;
                    s = h / z;
                    f = x * c + g * s;
                    g = g * c - x * s;
                    h = y * s;
                    y *= c;
                    z = f.hypot(h);
                    w[j] = z;
                    if z != 0.0 {
                        c = f / z;
                        s = h / z;
                    }
                    f = c * g + s * y;
                    x = c * y - s * g;
                }
                rv1[l] = 0.0;
                rv1[k] = f;
                w[k] = x;
            }
        }
        Ok(())
    }
}

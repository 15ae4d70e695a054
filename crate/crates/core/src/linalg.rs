//! Dense linear algebra helpers for desk-scale problems.
//!
//! Eigenvalues come from balancing, elimination to upper Hessenberg form and
//! the Francis double-shift QR iteration. Everything else is thin glue over
//! nalgebra factorizations.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

const QR_MAX_ITS: usize = 60;

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("matrix has non-finite entries".into()));
    }
    // 1-based working copy; index 0 unused.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    balance(&mut a, n);
    to_hessenberg(&mut a, n);
    hqr(&mut a, n)
}

fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
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

/// Similarity reduction to upper Hessenberg form by stabilized elimination.
fn to_hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x = 0.0f64;
        let mut piv = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..=n {
                let t = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 3..=n {
        for j in 1..(i - 1) {
            a[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (1-based storage).
#[allow(clippy::many_single_char_names)]
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                y = a[nu - 1][nu - 1];
                w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nu - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if its == QR_MAX_ITS {
                        return Err(Error::NonConvergence(format!(
                            "QR iteration exceeded {QR_MAX_ITS} sweeps"
                        )));
                    }
                    if its == 10 || its == 20 || its == 40 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nu {
                            a[i][i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nu - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s0;
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
                    for i in (m + 2)..=nu {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nu - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
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
                            for j in k..=nu {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nu - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nu - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 1 || !(l + 1 < nn as usize) {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest eigenvalue real part.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Rank tolerance used throughout: `1e-9 * ||m||`.
pub fn rank_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-9 * m.norm().max(f64::MIN_POSITIVE)
}

/// Rank from the diagonal of a column-pivoted QR factorization.
pub fn col_piv_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let r = m.clone().col_piv_qr().r();
    (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > tol)
        .count()
}

/// Numerical rank of a complex matrix from its singular values.
pub fn complex_rank(m: &DMatrix<Complex64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// A factor `C` with `C'C = Q` for symmetric positive semidefinite `Q`.
pub fn psd_factor(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(q).symmetric_eigen();
    let n = q.nrows();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        for j in 0..n {
            c[(k, j)] = s * eig.eigenvectors[(j, k)];
        }
    }
    c
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

fn vec_of(m: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &nalgebra::DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Solves the Stein equation `X = F'XF + C`.
pub fn solve_stein(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let ft = f.transpose();
    let op = DMatrix::identity(n * n, n * n) - kron(&ft, &ft);
    let x = op
        .lu()
        .solve(&vec_of(c))
        .ok_or_else(|| Error::Singular("Stein operator is singular".into()))?;
    Ok(symmetrize(&unvec(&x, n)))
}

/// Solves the Lyapunov equation `F'X + XF + C = 0`.
pub fn solve_lyapunov(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let id = DMatrix::identity(n, n);
    let ft = f.transpose();
    let op = kron(&id, &ft) + kron(&ft, &id);
    let x = op
        .lu()
        .solve(&(-vec_of(c)))
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&unvec(&x, n)))
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let mut s = c.clone();
    for _ in 0..100 {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("sign iteration hit a singular iterate".into()))?;
        let det = s.determinant().abs();
        let mu = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&s * mu + inv / mu) * 0.5;
        let delta = (&next - &s).norm();
        s = next;
        if delta <= 1e-14 * s.norm() {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence("matrix sign iteration".into()))
}

/// Orthonormal bases for the stable and unstable invariant subspaces of a
/// discrete-time map (eigenvalues inside / outside the unit circle).
///
/// Uses the Cayley transform `(H+I)(H-I)^-1`, which sends the open unit disc
/// to the open left half plane, and the matrix sign function of the result.
pub fn discrete_invariant_split(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let id = DMatrix::identity(n, n);
    let hm = (h - &id)
        .try_inverse()
        .ok_or_else(|| Error::Precondition("eigenvalue at 1: map is not hyperbolic".into()))?;
    let cayley = (h + &id) * hm;
    let sgn = matrix_sign(&cayley)?;
    let proj_s = (&id - &sgn) * 0.5;
    let proj_u = (&id + &sgn) * 0.5;
    Ok((range_basis(&proj_s), range_basis(&proj_u)))
}

/// Orthonormal basis of the column space.
///
/// Eigenvectors of `M M'`; the SVD in nalgebra returns inaccurate left
/// vectors for rank-deficient input.
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (m * m.transpose()).symmetric_eigen();
    let vals = &eig.eigenvalues;
    let max = vals.iter().cloned().fold(0.0, f64::max);
    let mut idx: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] > 1e-10 * max.max(1e-300))
        .collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        out.set_column(c, &eig.eigenvectors.column(i));
    }
    out
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_moduli(v: &[Complex64]) -> Vec<f64> {
        let mut m: Vec<f64> = v.iter().map(|z| z.norm()).collect();
        m.sort_by(f64::total_cmp);
        m
    }

    #[test]
    fn range_basis_of_oblique_projector() {
        // P = V (W'V)^-1 W' with skewed V, W
        let v = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, -0.7, 2.0, 0.1, 0.5, 3.0, -1.0]);
        let w = DMatrix::from_row_slice(4, 2, &[0.2, 1.0, 1.0, 0.0, -0.4, 2.0, 0.5, 0.3]);
        let p = &v * (w.transpose() * &v).try_inverse().unwrap() * w.transpose();
        let b = range_basis(&p);
        assert_eq!(b.ncols(), 2);
        assert!((&p * &b - &b).norm() < 1e-12);
        assert!((b.transpose() * &b - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn scalar_radius() {
        let m = DMatrix::from_row_slice(1, 1, &[0.382]);
        assert!((spectral_radius(&m).unwrap() - 0.382).abs() < 1e-15);
    }

    #[test]
    fn rotation_has_unit_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-14);
        assert!(ev.iter().all(|z| z.re.abs() < 1e-14));
    }

    #[test]
    fn golden_pair() {
        // characteristic polynomial t^2 - 3t + 1
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
        let r = spectral_radius(&m).unwrap();
        assert!((r - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn companion_roots() {
        // (t-1)(t-2)(t-3)(t-4)(t+5) = t^5 - 5t^4 - 15t^3 + 125t^2 - 226t + 120
        let c = [-5.0, -15.0, 125.0, -226.0, 120.0];
        let mut m = DMatrix::zeros(5, 5);
        for j in 0..5 {
            m[(0, j)] = -c[j];
        }
        for i in 1..5 {
            m[(i, i - 1)] = 1.0;
        }
        let mut re: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        for (a, b) in re.iter().zip([-5.0, 1.0, 2.0, 3.0, 4.0]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn complex_pairs_in_larger_matrix() {
        // block diag of rotation-scaling blocks
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 0)] = 0.5;
        m[(0, 1)] = -0.3;
        m[(1, 0)] = 0.3;
        m[(1, 1)] = 0.5;
        m[(2, 2)] = 2.0;
        m[(3, 3)] = -1.5;
        m[(2, 3)] = 1.0;
        let q = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 3.0, 0.0, 2.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 2.0,
            ],
        );
        let qi = q.clone().try_inverse().unwrap();
        let sim = &q * &m * qi;
        let got = sorted_moduli(&eigenvalues(&sim).unwrap());
        let want = [0.34f64.sqrt(), 0.34f64.sqrt(), 1.5, 2.0];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stein_and_lyapunov_residuals() {
        let f = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.5]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let x = solve_stein(&f, &c).unwrap();
        assert!((&x - f.transpose() * &x * &f - &c).norm() < 1e-13);
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.0, -2.0]);
        let y = solve_lyapunov(&g, &c).unwrap();
        assert!((g.transpose() * &y + &y * &g + &c).norm() < 1e-13);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = psd_factor(&q);
        assert!((c.transpose() * &c - &q).norm() < 1e-13);
    }

    #[test]
    fn invariant_split_of_diagonal_map() {
        let h = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 3.0]);
        let (vs, vu) = discrete_invariant_split(&h).unwrap();
        assert_eq!(vs.ncols(), 1);
        assert_eq!(vu.ncols(), 1);
        // H vs = 0.5 vs
        assert!((&h * &vs - &vs * 0.5).norm() < 1e-12);
        assert!((&h * &vu - &vu * 3.0).norm() < 1e-12);
    }

    #[test]
    fn ranks() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(col_piv_rank(&m, rank_tolerance(&m)), 1);
        let mc = m.map(|v| Complex64::new(v, 0.0));
        assert_eq!(complex_rank(&mc, 1e-9), 1);
    }
}

//! Dense linear-algebra helpers on top of nalgebra: complex eigen-decomposition
//! through the Schur form, matrix φ-functions, generalized symmetric eigenvalues
//! and small fitting utilities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Right eigen-decomposition of a general complex matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Columns are unit-norm right eigenvectors.
    pub vectors: CMat,
}

/// Eigenvalues and right eigenvectors of `a` from its complex Schur form.
pub fn eig(a: &CMat) -> Result<Eigen> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Eigen { values: vec![], vectors: CMat::zeros(0, 0) });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("eigensolve on non-finite matrix".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut x = CMat::zeros(n, n);
    for k in 0..n {
        let lk = t[(k, k)];
        x[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in i + 1..=k {
                acc += t[(i, j)] * x[(j, k)];
            }
            let mut d = t[(i, i)] - lk;
            if d.norm() < tiny {
                d = Complex64::new(tiny, 0.0);
            }
            x[(i, k)] = -acc / d;
        }
    }
    let mut v = q * x;
    for mut col in v.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= Complex64::new(nrm, 0.0);
        }
    }
    Ok(Eigen { values, vectors: v })
}

/// Promote a real matrix to complex.
pub fn complexify(a: &DMatrix<f64>) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

/// `(exp(hA), h·φ₁(hA))` with φ₁(z) = (eᶻ − 1)/z, from one Padé exponential of
/// the block matrix `[[hA, I], [0, 0]]`.
pub fn exp_phi1(a: &CMat, h: f64) -> Result<(CMat, CMat)> {
    let n = a.nrows();
    let mut aug = CMat::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * Complex64::new(h, 0.0)));
    for i in 0..n {
        aug[(i, n + i)] = Complex64::new(1.0, 0.0);
    }
    let e = aug.exp();
    let ex = e.view((0, 0), (n, n)).into_owned();
    let p1 = e.view((0, n), (n, n)).into_owned() * Complex64::new(h, 0.0);
    check_finite(&ex)?;
    check_finite(&p1)?;
    Ok((ex, p1))
}

/// `(exp(hA), h·φ₁(hA), h·φ₂(hA))` with φ₂(z) = (eᶻ − 1 − z)/z².
pub fn exp_phi12(a: &CMat, h: f64) -> Result<(CMat, CMat, CMat)> {
    let n = a.nrows();
    let mut aug = CMat::zeros(3 * n, 3 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * Complex64::new(h, 0.0)));
    for i in 0..n {
        aug[(i, n + i)] = Complex64::new(1.0, 0.0);
        aug[(n + i, 2 * n + i)] = Complex64::new(1.0, 0.0);
    }
    let e = aug.exp();
    let hc = Complex64::new(h, 0.0);
    let ex = e.view((0, 0), (n, n)).into_owned();
    let p1 = e.view((0, n), (n, n)).into_owned() * hc;
    let p2 = e.view((0, 2 * n), (n, n)).into_owned() * hc;
    check_finite(&ex)?;
    Ok((ex, p1, p2))
}

fn check_finite(m: &CMat) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("matrix function produced non-finite entries; reduce dt".into()))
    }
}

/// Ascending eigenvalues and matching orthonormal eigenvectors of a real symmetric matrix.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let se = nalgebra::linalg::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let vals = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(a.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Ascending eigenvalues of the pencil `A x = λ B x` with `B` symmetric positive definite.
pub fn gen_sym_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let bs = (b + b.transpose()) * 0.5;
    let chol = nalgebra::linalg::Cholesky::new(bs)
        .ok_or_else(|| Error::Numerical("pencil matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = &linv * ((a + a.transpose()) * 0.5) * linv.transpose();
    Ok(sym_eigen(&c).0)
}

/// Largest eigenvalue of a real symmetric matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    *sym_eigen(a).0.last().unwrap_or(&0.0)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    *sym_eigen(a).0.first().unwrap_or(&0.0)
}

/// Orthonormal basis (as columns) of the orthogonal complement of the span of `vs` in ℝⁿ.
pub fn orth_complement(vs: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut proj = DMatrix::<f64>::identity(n, n);
    for v in vs {
        proj -= v * v.transpose();
    }
    let (vals, vecs) = sym_eigen(&proj);
    let keep: Vec<usize> = (0..n).filter(|&i| vals[i] > 0.5).collect();
    let mut q = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &vecs.column(i));
    }
    q
}

/// Least-squares line `y ≈ slope·x + intercept`, returning the RMS residual too.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Spectral 2-norm of a complex matrix.
pub fn norm2(a: &CMat) -> f64 {
    let h = a.adjoint() * a;
    let se = nalgebra::linalg::SymmetricEigen::new(h);
    se.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn eig_residuals_are_small() {
        let a = random_cmat(30, 1);
        let e = eig(&a).unwrap();
        for k in 0..30 {
            let v = e.vectors.column(k);
            let r = &a * v - v * e.values[k];
            assert!(r.norm() < 1e-11, "residual {}", r.norm());
        }
    }

    #[test]
    fn eig_of_hermitian_is_real() {
        let a = random_cmat(12, 2);
        let h = &a + a.adjoint();
        let e = eig(&h).unwrap();
        assert!(e.values.iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn phi1_matches_eigen_formula() {
        let a = random_cmat(8, 3) - CMat::identity(8, 8) * Complex64::new(2.0, 0.0);
        let h = 0.3;
        let (ex, p1) = exp_phi1(&a, h).unwrap();
        let e = eig(&a).unwrap();
        let vinv = e.vectors.clone().try_inverse().unwrap();
        let de = CMat::from_diagonal(&CVec::from_iterator(8, e.values.iter().map(|l| (l * h).exp())));
        let dp = CMat::from_diagonal(&CVec::from_iterator(8, e.values.iter().map(|l| ((l * h).exp() - 1.0) / l)));
        assert!((&e.vectors * de * &vinv - &ex).norm() < 1e-11);
        assert!((&e.vectors * dp * &vinv - &p1).norm() < 1e-11);
    }

    #[test]
    fn phi2_of_zero_matrix() {
        let a = CMat::zeros(3, 3);
        let (ex, p1, p2) = exp_phi12(&a, 0.5).unwrap();
        let id = CMat::identity(3, 3);
        assert!((ex - &id).norm() < 1e-14);
        assert!((p1 - &id * Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((p2 - &id * Complex64::new(0.25, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn generalized_eigenvalues_of_scaled_pencil() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 6.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let v = gen_sym_eigenvalues(&a, &b).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn complement_is_orthonormal() {
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let q = orth_complement(std::slice::from_ref(&v), 4);
        assert_eq!(q.ncols(), 3);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).norm() < 1e-14);
        assert!((q.transpose() * v).norm() < 1e-14);
    }

    #[test]
    fn line_fit_is_exact_on_lines() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|t| -2.0 * t + 1.0).collect();
        let (s, c, r) = fit_line(&x, &y);
        assert!((s + 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14 && r < 1e-14);
    }
}

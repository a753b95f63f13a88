//! Orthonormal tensor Hermite basis of L²(ℝ³, M dv) with M the standard Gaussian.
//!
//! Basis functions are ψ_α(v) = ψ_{α₁}(v₁)ψ_{α₂}(v₂)ψ_{α₃}(v₃) with ψ_n = He_n/√(n!),
//! truncated at total degree |α| ≤ K. Flat indices enumerate the total degree first,
//! then α₁ descending, then α₂ descending, so indices 1, 2, 3 hold v₁, v₂, v₃.
//! Velocity axes are 0-based (`axis` ∈ {0, 1, 2}).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Coefficients of a function of velocity in a [`HermiteBasis`].
pub type VelocityVector = DVector<Complex64>;

/// `C(K+3, 3)`: number of multi-indices with total degree at most `k`.
pub fn basis_size(k: usize) -> usize {
    (k + 1) * (k + 2) * (k + 3) / 6
}

/// Gauss–Hermite rule for the standard normal density: Golub–Welsch nodes polished
/// by Newton steps on ψ_n, weights from the Christoffel sum 1/Σ_{k<n} ψ_k(x)².
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let (mut nodes, _) = crate::linalg::sym_eigen(&jac);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let h = hermite_values(n, *x);
            let dp = (n as f64).sqrt() * h[n - 1];
            if dp != 0.0 {
                *x -= h[n] / dp;
            }
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| 1.0 / hermite_values(n - 1, x).iter().map(|p| p * p).sum::<f64>())
        .collect();
    (nodes, weights)
}

/// Values ψ_0(x), …, ψ_{n_max}(x) of the normalized probabilists' Hermite functions.
pub fn hermite_values(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    out[0] = 1.0;
    if n_max >= 1 {
        out[1] = x;
    }
    for n in 1..n_max {
        let nf = n as f64;
        out[n + 1] = (x * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
    out
}

/// Tensor Gauss–Hermite rule with the basis evaluated at its nodes.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub points: Vec<[f64; 3]>,
    pub weights: DVector<f64>,
    /// `eval[(q, i)] = ψ_i(points[q])`.
    pub eval: DMatrix<f64>,
    /// `Eᵀ·diag(w)`, mapping node values back to coefficients.
    pub project: DMatrix<f64>,
}

impl TensorRule {
    fn new(n: usize, index: &[[usize; 3]], k: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let vals: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_values(k, xi)).collect();
        let nq = n * n * n;
        let mut points = Vec::with_capacity(nq);
        let mut weights = DVector::zeros(nq);
        let mut eval = DMatrix::zeros(nq, index.len());
        let mut q = 0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    points.push([x[a], x[b], x[c]]);
                    weights[q] = w[a] * w[b] * w[c];
                    for (i, al) in index.iter().enumerate() {
                        eval[(q, i)] = vals[a][al[0]] * vals[b][al[1]] * vals[c][al[2]];
                    }
                    q += 1;
                }
            }
        }
        let mut project = eval.transpose();
        for (q, wq) in weights.iter().enumerate() {
            project.column_mut(q).scale_mut(*wq);
        }
        TensorRule { points, weights, eval, project }
    }
}

/// Truncated tensor Hermite basis with its quadratures and ladder tables.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    k: usize,
    index: Vec<[usize; 3]>,
    lookup: Vec<usize>,
    full: TensorRule,
    product: TensorRule,
    /// Per axis: `(from, to, √α_axis)` with `to = α − e_axis`.
    lower: [Vec<(usize, usize, f64)>; 3],
}

impl HermiteBasis {
    /// Basis of total degree `k` with a `2k+2`-point rule per axis for inner
    /// products and a `⌈(3k+1)/2⌉`-point rule that integrates triple products exactly.
    pub fn new(k: usize) -> Self {
        let mut index = Vec::with_capacity(basis_size(k));
        for d in 0..=k {
            for a1 in (0..=d).rev() {
                for a2 in (0..=d - a1).rev() {
                    index.push([a1, a2, d - a1 - a2]);
                }
            }
        }
        let side = k + 1;
        let mut lookup = vec![usize::MAX; side * side * side];
        for (i, a) in index.iter().enumerate() {
            lookup[(a[0] * side + a[1]) * side + a[2]] = i;
        }
        let full = TensorRule::new(2 * k + 2, &index, k);
        let product = TensorRule::new(((3 * k + 2) / 2).max(1), &index, k);
        let mut lower: [Vec<(usize, usize, f64)>; 3] = Default::default();
        for (i, a) in index.iter().enumerate() {
            for (axis, table) in lower.iter_mut().enumerate() {
                if a[axis] > 0 {
                    let mut b = *a;
                    b[axis] -= 1;
                    let j = lookup[(b[0] * side + b[1]) * side + b[2]];
                    table.push((i, j, (a[axis] as f64).sqrt()));
                }
            }
        }
        HermiteBasis { k, index, lookup, full, product, lower }
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        self.index.len()
    }

    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        self.index[i]
    }

    /// Total degree of the basis function at flat index `i`.
    pub fn total_degree(&self, i: usize) -> usize {
        self.index[i].iter().sum()
    }

    pub fn flat_index(&self, a: [usize; 3]) -> Option<usize> {
        if a.iter().sum::<usize>() > self.k {
            return None;
        }
        let side = self.k + 1;
        Some(self.lookup[(a[0] * side + a[1]) * side + a[2]])
    }

    /// Inner-product quadrature (`2K+2` nodes per axis).
    pub fn rule(&self) -> &TensorRule {
        &self.full
    }

    /// Quadrature that is exact for products of three basis functions.
    pub fn product_rule(&self) -> &TensorRule {
        &self.product
    }

    fn check(&self, f: &VelocityVector) -> Result<()> {
        if f.len() != self.size() {
            return Err(Error::BasisMismatch { expected: self.size(), got: f.len() });
        }
        Ok(())
    }

    pub fn zeros(&self) -> VelocityVector {
        VelocityVector::zeros(self.size())
    }

    /// Basis vector ψ_α.
    pub fn unit(&self, a: [usize; 3]) -> VelocityVector {
        let mut f = self.zeros();
        f[self.flat_index(a).expect("multi-index above truncation degree")] = Complex64::new(1.0, 0.0);
        f
    }

    /// `⟨f, g⟩ = ∫ f ḡ M dv`, the coefficient dot product.
    pub fn weighted_inner(&self, f: &VelocityVector, g: &VelocityVector) -> Result<Complex64> {
        self.check(f)?;
        self.check(g)?;
        Ok(f.iter().zip(g.iter()).map(|(a, b)| a * b.conj()).sum())
    }

    /// Values of `f` at the inner-product quadrature nodes.
    pub fn values_at_nodes(&self, f: &VelocityVector) -> VelocityVector {
        crate::linalg::complexify(&self.full.eval) * f
    }

    /// `(∫ |f|² (1+|v|) M dv)^{1/2}` by quadrature.
    pub fn lambda_norm(&self, f: &VelocityVector) -> f64 {
        let vals = self.values_at_nodes(f);
        let s: f64 = vals
            .iter()
            .zip(self.full.points.iter())
            .zip(self.full.weights.iter())
            .map(|((z, p), w)| w * z.norm_sqr() * (1.0 + norm3(p)))
            .sum();
        s.sqrt()
    }

    /// Galerkin projection of the pointwise product `f·g` onto degree ≤ K.
    pub fn multiply_project(&self, f: &VelocityVector, g: &VelocityVector) -> Result<VelocityVector> {
        self.check(f)?;
        self.check(g)?;
        let e = crate::linalg::complexify(&self.product.eval);
        let fv = &e * f;
        let gv = &e * g;
        let prod = fv.component_mul(&gv);
        Ok(crate::linalg::complexify(&self.product.project) * prod)
    }

    /// Column-wise squares: column `j` of the result is the projection of the square of
    /// the function whose coefficients form column `j` of `g`.
    pub fn project_squares(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = &self.product.eval * g;
        v.apply(|x| *x = *x * *x);
        &self.product.project * v
    }

    /// Column-wise products of the functions in `a` and `b`.
    pub fn project_products(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let va = &self.product.eval * a;
        let vb = &self.product.eval * b;
        &self.product.project * va.component_mul(&vb)
    }

    /// Matrix of multiplication by `weight`: `(M_w)_{αβ} = ⟨w ψ_β, ψ_α⟩`.
    pub fn multiplier_matrix(&self, weight: impl Fn(&[f64; 3]) -> f64) -> DMatrix<f64> {
        let mut scaled = self.full.eval.clone();
        for (q, p) in self.full.points.iter().enumerate() {
            let s = self.full.weights[q] * weight(p);
            scaled.row_mut(q).scale_mut(s);
        }
        let m = self.full.eval.transpose() * scaled;
        (&m + m.transpose()) * 0.5
    }

    /// Coefficients of the projection of a real function of `v`.
    pub fn project_function(&self, f: impl Fn(&[f64; 3]) -> f64) -> DVector<f64> {
        let vals = DVector::from_iterator(self.full.points.len(), self.full.points.iter().map(f));
        self.full.eval.transpose() * vals.component_mul(&self.full.weights)
    }

    /// Value of the expansion `f` at the velocity `v`.
    pub fn evaluate(&self, f: &VelocityVector, v: [f64; 3]) -> Complex64 {
        let h: Vec<Vec<f64>> = v.iter().map(|&x| hermite_values(self.k, x)).collect();
        self.index
            .iter()
            .zip(f.iter())
            .map(|(a, c)| c * (h[0][a[0]] * h[1][a[1]] * h[2][a[2]]))
            .sum()
    }

    /// `∂_{v_axis} f`: ψ_n ↦ √n ψ_{n−1} along the axis.
    pub fn gradient_v(&self, f: &VelocityVector, axis: usize) -> VelocityVector {
        let mut out = self.zeros();
        for &(from, to, c) in &self.lower[axis] {
            out[to] += f[from] * c;
        }
        out
    }

    /// Raising part of multiplication by `v_axis`: ψ_n ↦ √(n+1) ψ_{n+1}, truncated at K.
    /// Equals `(v_axis − ∂_{v_axis}) f` on the truncated space.
    pub fn raise_v(&self, f: &VelocityVector, axis: usize) -> VelocityVector {
        let mut out = self.zeros();
        for &(from, to, c) in &self.lower[axis] {
            out[from] += f[to] * c;
        }
        out
    }

    /// `v_axis f` truncated at degree K.
    pub fn multiply_v(&self, f: &VelocityVector, axis: usize) -> VelocityVector {
        self.raise_v(f, axis) + self.gradient_v(f, axis)
    }

    /// Matrix of `∂_{v_axis}` on the truncated space.
    pub fn gradient_matrix(&self, axis: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size(), self.size());
        for &(from, to, c) in &self.lower[axis] {
            m[(to, from)] = c;
        }
        m
    }

    /// Matrix of the truncated raising operator `v_axis − ∂_{v_axis}`.
    pub fn raise_matrix(&self, axis: usize) -> DMatrix<f64> {
        self.gradient_matrix(axis).transpose()
    }

    /// Symmetric matrix of truncated multiplication by `v_axis`.
    pub fn multiply_matrix(&self, axis: usize) -> DMatrix<f64> {
        let g = self.gradient_matrix(axis);
        &g + g.transpose()
    }

    /// Lowering table for `axis`: `(from, to, coefficient)`.
    pub fn lowering(&self, axis: usize) -> &[(usize, usize, f64)] {
        &self.lower[axis]
    }

    /// Orthonormal collision invariants χ₀ = 1, χ₁..χ₃ = v, χ₄ = (|v|²−3)/√6.
    pub fn chi(&self, k: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.size());
        match k {
            0 => c[0] = 1.0,
            1..=3 => c[k] = 1.0,
            4 => {
                assert!(self.k >= 2, "χ₄ needs K ≥ 2");
                for axis in 0..3 {
                    let mut a = [0; 3];
                    a[axis] = 2;
                    c[self.flat_index(a).unwrap()] = 1.0 / 3f64.sqrt();
                }
            }
            _ => panic!("collision invariant index {k} out of range"),
        }
        c
    }

    /// `Σ_i ‖∂^i_v f‖²` summed over all ordered `i`-fold velocity derivatives:
    /// each coefficient is weighted by the falling factorial `|α|(|α|−1)…(|α|−i+1)`.
    pub fn derivative_weight(&self, idx: usize, order: usize) -> f64 {
        let d = self.total_degree(idx);
        (0..order).map(|j| d.saturating_sub(j) as f64).product()
    }
}

pub(crate) fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

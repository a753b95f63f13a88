//! Frequency-space analysis of the linearized operator
//! B_ε(ξ) = −L − i(v·ξ) − iε²(v·ξ)/|ξ|² ⟨·, 1⟩,
//! related to the torus generator by G_ε(n) = ε⁻² B_ε(εn).
//!
//! Branch computations take ξ = s e₁. The ξ-weighted norm
//! ‖f‖²_ξ = ‖f‖² + (ε²/s²)|⟨f, 1⟩|² is the Euclidean norm of D f, where D scales the
//! χ₀ coefficient by √(s²+ε²)/s, and B̃ = D B D⁻¹ stays bounded as s → 0.
//! Reflections v₂ ↦ −v₂ and v₃ ↦ −v₃ commute with B(s e₁); the basis splits into four
//! parity blocks and the degenerate shear pair λ₂ = λ₃ lands in two different blocks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionModel;
use crate::linalg::{complexify, eig, norm2, CMat, CVec};
use crate::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Branch labels in output order.
pub const BRANCHES: [i32; 5] = [-1, 0, 1, 2, 3];

/// Dense B_ε(ξ); the field term is dropped at ξ = 0.
pub fn assemble_b(model: &CollisionModel, epsilon: f64, xi: [f64; 3], z: f64) -> CMat {
    let b = model.basis();
    let nb = b.size();
    let mut m = complexify(&model.l_at(z)) * Complex64::new(-1.0, 0.0);
    let mut vxi = DMatrix::<f64>::zeros(nb, nb);
    for (axis, &x) in xi.iter().enumerate() {
        if x != 0.0 {
            vxi += b.multiply_matrix(axis) * x;
        }
    }
    m -= complexify(&vxi) * I;
    let s2 = xi.iter().map(|x| x * x).sum::<f64>();
    if s2 > 0.0 {
        for r in 1..4 {
            m[(r, 0)] -= I * (epsilon * epsilon * xi[r - 1] / s2);
        }
    }
    m
}

/// `√(s²+ε²)/s`, the χ₀ scaling of the ξ-weighted norm.
pub fn xi_scaling(epsilon: f64, s: f64) -> f64 {
    (s * s + epsilon * epsilon).sqrt() / s
}

/// B̃ = D B_ε(s e₁) D⁻¹, well defined down to s = 0.
pub fn symmetrized_b(model: &CollisionModel, epsilon: f64, s: f64, z: f64) -> CMat {
    let b = model.basis();
    let mut m = complexify(&model.l_at(z)) * Complex64::new(-1.0, 0.0);
    m -= complexify(&b.multiply_matrix(0)) * (I * s);
    let c = -I * (s * s + epsilon * epsilon).sqrt();
    m[(0, 1)] = c;
    m[(1, 0)] = c;
    m
}

/// (f, g)_ξ = (f, g) + (ε²/|ξ|²)⟨f, 1⟩ conj⟨g, 1⟩.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiInnerProduct {
    pub epsilon: f64,
    pub s: f64,
}

impl XiInnerProduct {
    pub fn new(epsilon: f64, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::validation("s", "ξ-inner product needs |ξ| > 0"));
        }
        Ok(XiInnerProduct { epsilon, s })
    }

    pub fn inner(&self, f: &CVec, g: &CVec) -> Complex64 {
        let plain: Complex64 = f.iter().zip(g.iter()).map(|(a, b)| a * b.conj()).sum();
        plain + f[0] * g[0].conj() * (self.epsilon * self.epsilon / (self.s * self.s))
    }

    pub fn norm(&self, f: &CVec) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }

    /// Map to coordinates where the form is Euclidean.
    pub fn to_euclidean(&self, f: &CVec) -> CVec {
        let mut g = f.clone();
        g[0] *= xi_scaling(self.epsilon, self.s);
        g
    }

    pub fn from_euclidean(&self, f: &CVec) -> CVec {
        let mut g = f.clone();
        g[0] /= xi_scaling(self.epsilon, self.s);
        g
    }
}

/// Index sets by parity of (α₂, α₃): (e,e), (o,e), (e,o), (o,o).
pub fn parity_blocks(model: &CollisionModel) -> [Vec<usize>; 4] {
    let b = model.basis();
    let mut out: [Vec<usize>; 4] = Default::default();
    for i in 0..b.size() {
        let a = b.multi_index(i);
        out[(a[1] % 2) + 2 * (a[2] % 2)].push(i);
    }
    out
}

/// Eigen-decomposition of B̃ restricted to parity blocks, with dual (left) vectors.
#[derive(Debug, Clone)]
pub struct FluidSpectrum {
    pub s: f64,
    /// λ_j for j = −1, 0, 1, 2, 3.
    pub lambda: [Complex64; 5],
    /// Unit right eigenvectors of B̃.
    pub right: [CVec; 5],
    /// Dual vectors: wⱼᴴ vₖ = δⱼₖ.
    pub left: [CVec; 5],
    /// Largest real part among the discarded eigenvalues.
    pub gap: f64,
}

fn block_eig(m: &CMat, idx: &[usize]) -> Result<(Vec<Complex64>, CMat, CMat)> {
    let sub = CMat::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
    let e = eig(&sub)?;
    let inv = e
        .vectors
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("defective eigensystem in parity block".into()))?;
    Ok((e.values, e.vectors, inv))
}

fn embed(v: impl Iterator<Item = Complex64>, idx: &[usize], n: usize) -> CVec {
    let mut out = CVec::zeros(n);
    for (k, x) in v.enumerate() {
        out[idx[k]] = x;
    }
    out
}

/// Five eigenvalues of B̃(s) above Re λ = −a₂/2 (a₂ = 1), labelled by branch.
pub fn fluid_spectrum(model: &CollisionModel, epsilon: f64, s: f64, z: f64) -> Result<FluidSpectrum> {
    let threshold = -0.5 * model.factor(z);
    let m = symmetrized_b(model, epsilon, s, z);
    let n = m.nrows();
    let blocks = parity_blocks(model);
    let mut gap = f64::NEG_INFINITY;
    let mut picked: Vec<Vec<(Complex64, CVec, CVec)>> = Vec::new();
    for idx in blocks.iter().take(3) {
        let (vals, vecs, inv) = block_eig(&m, idx)?;
        let mut sel = Vec::new();
        for (k, l) in vals.iter().enumerate() {
            if l.re > threshold {
                let r = embed(vecs.column(k).iter().cloned(), idx, n);
                let w = embed(inv.row(k).iter().map(|x| x.conj()), idx, n);
                sel.push((*l, r, w));
            } else {
                gap = gap.max(l.re);
            }
        }
        picked.push(sel);
    }
    let (oo, _, _) = block_eig(&m, &blocks[3])?;
    let extra = oo.iter().filter(|l| l.re > threshold).count();
    gap = oo.iter().filter(|l| l.re <= threshold).fold(gap, |g, l| g.max(l.re));
    let found: usize = picked.iter().map(|p| p.len()).sum::<usize>() + extra;
    if extra > 0 || picked[0].len() != 3 || picked[1].len() != 1 || picked[2].len() != 1 {
        return Err(Error::BranchCount { s, found });
    }
    let mut ee = picked[0].clone();
    ee.sort_by(|a, b| a.0.im.abs().total_cmp(&b.0.im.abs()));
    let zero = ee.remove(0);
    let (plus, minus) = if ee[0].0.im >= ee[1].0.im { (ee[0].clone(), ee[1].clone()) } else { (ee[1].clone(), ee[0].clone()) };
    let two = picked[1][0].clone();
    let three = picked[2][0].clone();
    let all = [minus, zero, plus, two, three];
    Ok(FluidSpectrum {
        s,
        lambda: std::array::from_fn(|j| all[j].0),
        right: std::array::from_fn(|j| all[j].1.clone()),
        left: std::array::from_fn(|j| all[j].2.clone()),
        gap,
    })
}

/// Sampled branch j with the fit λ_j(s) ≈ λ_j(0) + c s².
#[derive(Debug, Clone)]
pub struct EigenBranch {
    pub j: i32,
    pub s: Vec<f64>,
    pub lambda: Vec<Complex64>,
    pub lambda0: Complex64,
    pub c: Complex64,
    /// RMS misfit of the quadratic model.
    pub residual: f64,
    /// Smallest overlap |⟨ψ(s_k), ψ(s_{k+1})⟩| between neighbouring samples, refined by bisection.
    pub min_overlap: f64,
    pub vectors: Vec<CVec>,
}

/// Least squares λ − λ₀ ≈ b s + c s² + d s³, returning (b, c, rms residual).
pub fn fit_expansion(s: &[f64], lambda: &[Complex64], lambda0: Complex64) -> (Complex64, Complex64, f64) {
    if s.len() < 3 {
        return (C0, C0, f64::INFINITY);
    }
    let a = DMatrix::from_fn(s.len(), 3, |r, c| s[r].powi(c as i32 + 1));
    let rhs = CMat::from_fn(s.len(), 1, |r, _| lambda[r] - lambda0);
    let svd = complexify(&a).svd(true, true);
    let Ok(x) = svd.solve(&rhs, 1e-14) else {
        return (C0, C0, f64::INFINITY);
    };
    let res = (complexify(&a) * &x - &rhs).norm_squared();
    (x[0], x[1], (res / s.len() as f64).sqrt())
}

/// Least squares λ − λ₀ ≈ c s², returning (c, rms residual).
pub fn fit_quadratic(s: &[f64], lambda: &[Complex64], lambda0: Complex64) -> (Complex64, f64) {
    let den: f64 = s.iter().map(|x| x.powi(4)).sum();
    if den == 0.0 {
        return (C0, f64::INFINITY);
    }
    let c = s.iter().zip(lambda).map(|(x, l)| (l - lambda0) * (x * x)).sum::<Complex64>() / den;
    let res = s.iter().zip(lambda).map(|(x, l)| (l - lambda0 - c * (x * x)).norm_sqr()).sum::<f64>();
    (c, (res / s.len() as f64).sqrt())
}

/// Overlap of branch `jj` between two samples, bisecting the interval while the
/// direct overlap is below the continuity threshold.
fn refined_overlap(model: &CollisionModel, epsilon: f64, z: f64, a: &FluidSpectrum, b: &FluidSpectrum, jj: usize, depth: usize) -> f64 {
    let direct = a.right[jj].dotc(&b.right[jj]).norm();
    if direct >= 0.9 || depth == 0 {
        return direct;
    }
    let Ok(mid) = fluid_spectrum(model, epsilon, 0.5 * (a.s + b.s), z) else {
        return direct;
    };
    refined_overlap(model, epsilon, z, a, &mid, jj, depth - 1).min(refined_overlap(model, epsilon, z, &mid, b, jj, depth - 1))
}

/// Trace the five branches over an increasing grid in (0, r₀].
pub fn eigen_branches(model: &CollisionModel, epsilon: f64, s_grid: &[f64], z: f64) -> Result<Vec<EigenBranch>> {
    if s_grid.is_empty() || s_grid.iter().any(|s| !(*s > 0.0)) || s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("s_grid", "must be positive and increasing"));
    }
    let base = fluid_spectrum(model, epsilon, 0.0, z)?;
    let spectra: Vec<FluidSpectrum> =
        s_grid.par_iter().map(|&s| fluid_spectrum(model, epsilon, s, z)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(5);
    for (jj, &j) in BRANCHES.iter().enumerate() {
        let lambda: Vec<Complex64> = spectra.iter().map(|f| f.lambda[jj]).collect();
        let vectors: Vec<CVec> = spectra.iter().map(|f| f.right[jj].clone()).collect();
        let min_overlap = std::iter::once(&base)
            .chain(spectra.iter())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| refined_overlap(model, epsilon, z, w[0], w[1], jj, 8))
            .fold(1.0, f64::min);
        let (c, residual) = fit_quadratic(s_grid, &lambda, base.lambda[jj]);
        out.push(EigenBranch { j, s: s_grid.to_vec(), lambda, lambda0: base.lambda[jj], c, residual, min_overlap, vectors });
    }
    if let Some(b) = out.iter().find(|b| b.min_overlap < 0.9) {
        return Err(Error::Numerical(format!("branch {} lost continuity (overlap {:.3})", b.j, b.min_overlap)));
    }
    Ok(out)
}

/// Log-spaced grid of `n` points on [a, b].
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Largest radius on the 40-point log grid over [1e-3, 2] up to which exactly five
/// branches stay above −a₂/2 and continue with overlap ≥ 0.9.
pub fn choose_r0(model: &CollisionModel, epsilon: f64, z: f64) -> Result<f64> {
    let grid = log_grid(1e-3, 2.0, 40);
    let spectra: Vec<Option<FluidSpectrum>> = grid.par_iter().map(|&s| fluid_spectrum(model, epsilon, s, z).ok()).collect();
    let mut prev = Some(fluid_spectrum(model, epsilon, 0.0, z)?);
    let mut r0 = 0.0;
    for (s, cur) in grid.iter().zip(spectra) {
        let ok = match (&prev, &cur) {
            (Some(p), Some(c)) => (0..5).all(|j| p.right[j].dotc(&c.right[j]).norm() >= 0.9),
            _ => false,
        };
        if !ok {
            break;
        }
        r0 = *s;
        prev = cur;
    }
    if r0 == 0.0 {
        return Err(Error::Numerical("no radius with five continued branches on the search grid".into()));
    }
    Ok(r0)
}

/// Coefficients a_ij = ⟨R Π⊥(v₁χ_i), v₁χ_j⟩ for i, j = 1..4 (stored at [i−1][j−1]),
/// R = −(λ + L + isΠ⊥v₁Π⊥)⁻¹ on Ker⊥.
pub fn resolvent_aij(model: &CollisionModel, lambda: Complex64, s: f64, z: f64) -> Result<[[Complex64; 4]; 4]> {
    let q = model.ker_perp_basis();
    let b = model.basis();
    let v1 = b.multiply_matrix(0);
    let l = model.l_at(z);
    let m = q.ncols();
    let restricted = complexify(&(q.transpose() * &l * q)) + complexify(&(q.transpose() * &v1 * q)) * (I * s)
        + CMat::identity(m, m) * lambda;
    let lu = restricted.lu();
    let f: Vec<CVec> =
        (1..5).map(|i| (q.transpose() * (&v1 * &model.projection.chi[i])).map(|x| Complex64::new(x, 0.0))).collect();
    let mut out = [[C0; 4]; 4];
    for i in 0..4 {
        let sol = lu
            .solve(&f[i])
            .ok_or_else(|| Error::Numerical(format!("resolvent singular at λ = {lambda}, s = {s}")))?;
        if sol.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::Numerical(format!("resolvent singular at λ = {lambda}, s = {s}")));
        }
        for j in 0..4 {
            out[i][j] = -sol.iter().zip(f[j].iter()).map(|(a, b)| a * b).sum::<Complex64>();
        }
    }
    Ok(out)
}

/// Coefficients of D_ε(λ, s) = λ³ + c₂λ² + c₁λ + c₀ for a frozen table a.
pub fn dispersion_cubic(epsilon: f64, s: f64, a: &[[Complex64; 4]; 4]) -> [Complex64; 3] {
    let r23 = (2.0f64 / 3.0).sqrt();
    let b = I * s;
    let c = I * (s + epsilon * epsilon / s);
    let d = -a[0][0] * (s * s);
    let e = I * (s * r23) - a[3][0] * (s * s);
    let f = I * (s * r23) - a[0][3] * (s * s);
    let g = -a[3][3] * (s * s);
    [-b * c * g, d * g - e * f - b * c, d + g]
}

fn cubic_roots(c: [Complex64; 3]) -> Result<Vec<Complex64>> {
    let mut comp = CMat::zeros(3, 3);
    comp[(1, 0)] = Complex64::new(1.0, 0.0);
    comp[(2, 1)] = Complex64::new(1.0, 0.0);
    comp[(0, 2)] = -c[0];
    comp[(1, 2)] = -c[1];
    comp[(2, 2)] = -c[2];
    Ok(eig(&comp)?.values)
}

fn cubic_value(c: [Complex64; 3], l: Complex64) -> Complex64 {
    ((l + c[2]) * l + c[1]) * l + c[0]
}

/// Roots of D_ε(λ, s) = 0 with λ-dependent a_ij, ordered (λ₋₁, λ₀, λ₁).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionRoots {
    pub roots: [Complex64; 3],
    pub iterations: usize,
    pub residual: f64,
}

/// Iterate λ ← next(λ), halving the step whenever the residual grows.
fn fixed_point(
    seed: Complex64,
    mut next: impl FnMut(Complex64) -> Result<(Complex64, f64)>,
) -> Result<(Complex64, usize, f64)> {
    let mut l = seed;
    let mut last_res = f64::INFINITY;
    for it in 1..=50 {
        let (cand, res) = next(l)?;
        let (new, res) = if res > last_res { (l + (cand - l) * 0.5, res) } else { (cand, res) };
        let step = (new - l).norm();
        l = new;
        last_res = res;
        if step < 1e-12 * (1.0 + l.norm()) {
            return Ok((l, it, res));
        }
    }
    Err(Error::Numerical(format!("fixed-point dispersion solve did not converge near λ = {l}")))
}

/// Self-consistent roots of the dispersion cubic. The iteration is continued in
/// s from the s = 0 roots {−iε, 0, iε}.
pub fn dispersion_roots(model: &CollisionModel, epsilon: f64, s: f64, z: f64) -> Result<DispersionRoots> {
    if !(s > 0.0) {
        return Ok(DispersionRoots { roots: [-I * epsilon, C0, I * epsilon], iterations: 0, residual: 0.0 });
    }
    let stages = ((s / 0.02).ceil() as usize).max(8);
    let mut roots = [-I * epsilon, C0, I * epsilon];
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    for k in 1..=stages {
        let sk = s * k as f64 / stages as f64;
        for r in roots.iter_mut() {
            let (l, it, res) = fixed_point(*r, |l| {
                let a = resolvent_aij(model, l, sk, z)?;
                let c = dispersion_cubic(epsilon, sk, &a);
                let cand = cubic_roots(c)?.into_iter().min_by(|x, y| (x - l).norm().total_cmp(&(y - l).norm())).unwrap();
                let a2 = resolvent_aij(model, cand, sk, z)?;
                Ok((cand, cubic_value(dispersion_cubic(epsilon, sk, &a2), cand).norm()))
            })?;
            *r = l;
            iterations += it;
            if k == stages {
                residual = residual.max(res);
            }
        }
    }
    roots.sort_by(|a, b| a.im.total_cmp(&b.im));
    if (roots[0] - roots[1]).norm() < 1e-8 || (roots[1] - roots[2]).norm() < 1e-8 {
        return Err(Error::Numerical(format!("dispersion roots merged at s = {s}")));
    }
    Ok(DispersionRoots { roots, iterations, residual })
}

/// Self-consistent shear root λ = s² a₂₂(λ).
pub fn shear_root(model: &CollisionModel, s: f64, z: f64) -> Result<Complex64> {
    let (l, _, _) = fixed_point(C0, |l| {
        let cand = resolvent_aij(model, l, s, z)?[1][1] * (s * s);
        let res = (cand - resolvent_aij(model, cand, s, z)?[1][1] * (s * s)).norm();
        Ok((cand, res))
    })?;
    Ok(l)
}

/// Riesz projectors for ξ = s e₁ in the original coordinates, grouped as
/// P₋₁, P₀, P₁ and the rank-2 shear projector P₂₃.
#[derive(Debug, Clone)]
pub struct Projections {
    pub s: f64,
    pub lambda: [Complex64; 5],
    pub p: [CMat; 4],
}

impl Projections {
    /// Σ_j e^{tλ_j} P_j.
    pub fn evolve(&self, t: f64) -> CMat {
        let l = &self.lambda;
        let mut out = &self.p[0] * (l[0] * t).exp() + &self.p[1] * (l[1] * t).exp() + &self.p[2] * (l[2] * t).exp();
        // λ₂ = λ₃ up to round-off; each half of P₂₃ carries its own exponent.
        let half = (l[3] * t).exp() * 0.5 + (l[4] * t).exp() * 0.5;
        out += &self.p[3] * half;
        out
    }

    pub fn total(&self) -> CMat {
        &self.p[0] + &self.p[1] + &self.p[2] + &self.p[3]
    }
}

fn rank_one(v: &CVec, w: &CVec) -> CMat {
    v * w.adjoint()
}

/// Projections for 0 < s; the ξ-weighted structure enters through D.
pub fn projections(model: &CollisionModel, epsilon: f64, s: f64, z: f64) -> Result<Projections> {
    if !(s > 0.0) {
        return Err(Error::validation("s", "projections need |ξ| > 0"));
    }
    let fs = fluid_spectrum(model, epsilon, s, z)?;
    let k = xi_scaling(epsilon, s);
    let tilde: Vec<CMat> = (0..5).map(|j| rank_one(&fs.right[j], &fs.left[j])).collect();
    let back = |m: &CMat| {
        let mut out = m.clone();
        for c in 0..out.ncols() {
            out[(0, c)] /= k;
        }
        for r in 0..out.nrows() {
            out[(r, 0)] *= k;
        }
        out
    };
    Ok(Projections {
        s,
        lambda: fs.lambda,
        p: [back(&tilde[0]), back(&tilde[1]), back(&tilde[2]), back(&(&tilde[3] + &tilde[4]))],
    })
}

/// S₁ g = Σ_j e^{tλ_j}P_j g on |ξ| ≤ r₀ and S₂ g = e^{tB}g − S₁ g, for ξ = s e₁.
pub fn semigroup_split(
    model: &CollisionModel,
    epsilon: f64,
    s: f64,
    t: f64,
    g: &CVec,
    r0: f64,
    z: f64,
) -> Result<(CVec, CVec)> {
    let full = (assemble_b(model, epsilon, [s, 0.0, 0.0], z) * Complex64::new(t, 0.0)).exp() * g;
    let s1 = if s <= r0 && s > 0.0 { projections(model, epsilon, s, z)?.evolve(t) * g } else { CVec::zeros(g.len()) };
    let s2 = &full - &s1;
    Ok((s1, s2))
}

/// ‖S₂(t, s e₁)‖ as an operator on the ξ-weighted space.
pub fn s2_norm(model: &CollisionModel, epsilon: f64, s: f64, t: f64, r0: f64, z: f64) -> Result<f64> {
    let bt = symmetrized_b(model, epsilon, s, z);
    let e = (bt * Complex64::new(t, 0.0)).exp();
    if s <= r0 {
        let fs = fluid_spectrum(model, epsilon, s, z)?;
        let n = e.nrows();
        let mut rest = CMat::identity(n, n);
        for j in 0..5 {
            rest -= rank_one(&fs.right[j], &fs.left[j]);
        }
        Ok(norm2(&(e * rest)))
    } else {
        Ok(norm2(&e))
    }
}

/// Fitted bound ‖S₂(t, ξ)‖ ≤ C e^{−σt} over a (ξ, t) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub sigma: f64,
    pub c: f64,
    /// max over the grid of (‖S₂‖ − C e^{−σt}) / (C e^{−σt}).
    pub max_violation: f64,
    /// Norms indexed [s][t].
    pub norms: Vec<Vec<f64>>,
}

/// σ is the slope of the log-envelope max_s ‖S₂(t, s)‖ over t; C is the smallest
/// prefactor that bounds every grid value.
pub fn high_frequency_decay(
    model: &CollisionModel,
    epsilon: f64,
    s_grid: &[f64],
    t_grid: &[f64],
    r0: f64,
    z: f64,
) -> Result<DecayFit> {
    let norms: Vec<Vec<f64>> = s_grid
        .par_iter()
        .map(|&s| t_grid.iter().map(|&t| s2_norm(model, epsilon, s, t, r0, z)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let env: Vec<f64> = (0..t_grid.len()).map(|k| norms.iter().map(|r| r[k]).fold(0.0, f64::max)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) =
        t_grid.iter().zip(&env).filter(|(_, e)| **e > 0.0).map(|(t, e)| (*t, e.ln())).unzip();
    let (slope, _, _) = crate::linalg::fit_line(&x, &y);
    let sigma = -slope;
    let c = t_grid.iter().zip(&env).map(|(t, e)| e * (sigma * t).exp()).fold(0.0, f64::max);
    let max_violation = norms
        .iter()
        .flat_map(|r| r.iter().zip(t_grid).map(|(n, t)| (n - c * (-sigma * t).exp()) / (c * (-sigma * t).exp())))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit { sigma, c, max_violation, norms })
}

/// One row of the branch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub epsilon: f64,
    pub s: f64,
    pub j: i32,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub fit_c_re: f64,
    pub fit_c_im: f64,
    pub residual: f64,
}

pub fn branch_rows(epsilon: f64, branches: &[EigenBranch]) -> Vec<BranchRow> {
    let mut rows = Vec::new();
    for b in branches {
        for (s, l) in b.s.iter().zip(&b.lambda) {
            rows.push(BranchRow {
                epsilon,
                s: *s,
                j: b.j,
                re_lambda: l.re,
                im_lambda: l.im,
                fit_c_re: b.c.re,
                fit_c_im: b.c.im,
                residual: b.residual,
            });
        }
    }
    rows
}

/// Exponents of the acoustic modes in generator units, (1/ε²)λ_{±1}(ε|n|) ≈ a/ε + b|n|²:
/// returns (a, b) for j = +1 from the branch data.
pub fn acoustic_exponents(branches: &[EigenBranch], epsilon: f64) -> Option<(Complex64, Complex64)> {
    let b = branches.iter().find(|b| b.j == 1)?;
    Some((b.lambda0 / epsilon, b.c))
}

/// Real-vector helper for moment checks.
pub fn fluid_components(model: &CollisionModel, v: &CVec) -> [Complex64; 5] {
    std::array::from_fn(|k| {
        let chi: &DVector<f64> = &model.projection.chi[k];
        chi.iter().zip(v.iter()).map(|(a, b)| b * *a).sum()
    })
}

//! Model linearized collision operator L = Π⊥ Λ Π⊥ with Λ the multiplier by
//! v̂ = 1+|v|, its splitting L = −K + Λ, the fluid projection, the bilinear term Γ,
//! the random-kernel modulation and the transport coefficients μ, κ.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::hermite::{norm3, HermiteBasis, VelocityVector};
use crate::linalg::complexify;
use crate::{Error, Result};

/// Orthogonal projection onto Ker L = span{χ₀, …, χ₄}.
#[derive(Debug, Clone)]
pub struct FluidProjection {
    pub chi: Vec<DVector<f64>>,
    pub pi: DMatrix<f64>,
    pub pi_perp: DMatrix<f64>,
}

impl FluidProjection {
    pub fn new(basis: &HermiteBasis) -> Self {
        let n = basis.size();
        let chi: Vec<DVector<f64>> = (0..5).map(|k| basis.chi(k)).collect();
        let mut pi = DMatrix::zeros(n, n);
        for c in &chi {
            pi += c * c.transpose();
        }
        let pi_perp = DMatrix::identity(n, n) - &pi;
        FluidProjection { chi, pi, pi_perp }
    }
}

/// Hydrodynamic moments of a velocity function.
#[derive(Debug, Clone)]
pub struct FluidMoments {
    /// ρ = ⟨g, 1⟩.
    pub rho: Complex64,
    /// u_i = ⟨g, v_i⟩.
    pub u: [Complex64; 3],
    /// θ = ⟨g, (|v|²−3)/3⟩.
    pub theta: Complex64,
    /// P g expanded in χ₀..χ₄.
    pub pg: VelocityVector,
}

/// Shape `m` of the kernel modulation `1 + η·m(z)` on I_z = [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Modulation {
    /// m(z) = z.
    Linear,
    /// m(z) = sin(πz/2).
    Sine,
}

impl Modulation {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Modulation::Linear => z,
            Modulation::Sine => (std::f64::consts::FRAC_PI_2 * z).sin(),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Modulation::Linear => 1.0,
            Modulation::Sine => std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * z).cos(),
        }
    }
}

/// Viscosity, heat conduction and the correctors Â, B̂.
#[derive(Debug, Clone)]
pub struct TransportCoefficients {
    /// (1/15)·Σ⟨A_ij, Â_ij⟩.
    pub mu: f64,
    /// Shear viscosity of the limit, (1/10)·Σ⟨A_ij, Â_ij⟩ = (3/2)·μ.
    pub nu: f64,
    pub kappa: f64,
    /// Â_ij in row-major order (i, j) ∈ {0,1,2}².
    pub a_hat: Vec<DVector<f64>>,
    pub b_hat: Vec<DVector<f64>>,
    /// Largest of ‖LÂ − A‖, ‖LB̂ − B‖.
    pub residual: f64,
}

/// The model collision operator on a truncated Hermite basis.
#[derive(Debug, Clone)]
pub struct CollisionModel {
    basis: Arc<HermiteBasis>,
    pub lambda: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub projection: FluidProjection,
    pub eta: f64,
    pub modulation: Modulation,
    ker_perp: DMatrix<f64>,
}

impl CollisionModel {
    /// Default model: Λ = 1+|v|, modulation m(z) = z with amplitude `eta`.
    pub fn new(basis: Arc<HermiteBasis>, eta: f64) -> Result<Self> {
        Self::with_weight(basis, |v| 1.0 + norm3(v), eta, Modulation::Linear)
    }

    /// Pure relaxation variant Λ = I, so L = Π⊥.
    pub fn relaxation(basis: Arc<HermiteBasis>) -> Result<Self> {
        Self::with_weight(basis, |_| 1.0, 0.0, Modulation::Linear)
    }

    pub fn with_weight(
        basis: Arc<HermiteBasis>,
        weight: impl Fn(&[f64; 3]) -> f64,
        eta: f64,
        modulation: Modulation,
    ) -> Result<Self> {
        if basis.degree() < 2 {
            return Err(Error::validation("K", "collision model needs K >= 2"));
        }
        if !(eta.abs() < 1.0) {
            return Err(Error::validation("eta", "modulation amplitude must satisfy |eta| < 1"));
        }
        let lambda = basis.multiplier_matrix(weight);
        let projection = FluidProjection::new(&basis);
        let pp = &projection.pi_perp;
        let l = pp * &lambda * pp;
        let l = (&l + l.transpose()) * 0.5;
        let k = &lambda - &l;
        let ker_perp = crate::linalg::orth_complement(&projection.chi, basis.size());
        Ok(CollisionModel { basis, lambda, l, k, projection, eta, modulation, ker_perp })
    }

    pub fn basis(&self) -> &Arc<HermiteBasis> {
        &self.basis
    }

    /// Same operator with a different modulation amplitude.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        if !(eta.abs() < 1.0) {
            return Err(Error::validation("eta", "modulation amplitude must satisfy |eta| < 1"));
        }
        let mut m = self.clone();
        m.eta = eta;
        Ok(m)
    }

    /// `1 + η·m(z)`.
    pub fn factor(&self, z: f64) -> f64 {
        1.0 + self.eta * self.modulation.value(z)
    }

    /// Lower bound of `1 + η·m(z)` on I_z.
    pub fn factor_min(&self) -> f64 {
        1.0 - self.eta.abs()
    }

    /// Matrix of L(z).
    pub fn l_at(&self, z: f64) -> DMatrix<f64> {
        &self.l * self.factor(z)
    }

    /// Orthonormal basis of Ker⊥ as columns.
    pub fn ker_perp_basis(&self) -> &DMatrix<f64> {
        &self.ker_perp
    }

    pub fn apply_l(&self, g: &VelocityVector, z: f64) -> VelocityVector {
        complexify(&self.l) * g * Complex64::new(self.factor(z), 0.0)
    }

    /// `∂_z L(z) g = η m′(z) L g`.
    pub fn dz_l(&self, g: &VelocityVector, z: f64) -> VelocityVector {
        complexify(&self.l) * g * Complex64::new(self.eta * self.modulation.derivative(z), 0.0)
    }

    /// `(K, Λ)` with `−K + Λ = L`.
    pub fn split_k_lambda(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.k, &self.lambda)
    }

    pub fn project_fluid(&self, g: &VelocityVector) -> FluidMoments {
        let c = |k: usize| -> Complex64 {
            self.projection.chi[k].iter().zip(g.iter()).map(|(a, b)| b * *a).sum()
        };
        let coeffs: Vec<Complex64> = (0..5).map(c).collect();
        let pg = complexify(&self.projection.pi) * g;
        FluidMoments {
            rho: coeffs[0],
            u: [coeffs[1], coeffs[2], coeffs[3]],
            theta: coeffs[4] * (6f64.sqrt() / 3.0),
            pg,
        }
    }

    /// `g^⊥ = g − P g`.
    pub fn perp(&self, g: &VelocityVector) -> VelocityVector {
        complexify(&self.projection.pi_perp) * g
    }

    /// Bilinear term Γ(g, h) = ¼·L(z)(gh + hg), so that Γ(g, g) = ½·L(z)(g²).
    pub fn apply_gamma(&self, g: &VelocityVector, h: &VelocityVector, z: f64) -> Result<VelocityVector> {
        let gh = self.basis.multiply_project(g, h)?;
        let hg = self.basis.multiply_project(h, g)?;
        Ok(self.apply_l(&(gh + hg), z) * Complex64::new(0.25, 0.0))
    }

    /// Solve `L(z) x = b` for `b ⊥ Ker L`, with `x ⊥ Ker L`.
    pub fn solve_perp(&self, b: &DVector<f64>, z: f64) -> Result<DVector<f64>> {
        let q = &self.ker_perp;
        let lq = q.transpose() * self.l_at(z) * q;
        let chol = nalgebra::linalg::Cholesky::new(lq)
            .ok_or_else(|| Error::Numerical("L restricted to Ker⊥ is singular".into()))?;
        Ok(q * chol.solve(&(q.transpose() * b)))
    }

    /// μ = (1/15) Σ ⟨A_ij, Â_ij⟩ and κ = (2/15) Σ ⟨B_i, B̂_i⟩ at kernel coordinate `z`.
    pub fn transport_coefficients(&self, z: f64) -> Result<TransportCoefficients> {
        if self.basis.degree() < 3 {
            return Err(Error::Numerical("transport coefficients need K >= 3".into()));
        }
        let b = &self.basis;
        let lz = self.l_at(z);
        let mut mu = 0.0;
        let mut kappa = 0.0;
        let mut residual: f64 = 0.0;
        let mut a_hat = Vec::with_capacity(9);
        let mut b_hat = Vec::with_capacity(3);
        for i in 0..3 {
            for j in 0..3 {
                let a = b.project_function(|v| {
                    v[i] * v[j] - if i == j { (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 3.0 } else { 0.0 }
                });
                let ah = self.solve_perp(&a, z)?;
                residual = residual.max((&lz * &ah - &a).norm());
                mu += a.dot(&ah);
                a_hat.push(ah);
            }
            let bi = b.project_function(|v| v[i] * ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 2.0 - 2.5));
            let bh = self.solve_perp(&bi, z)?;
            residual = residual.max((&lz * &bh - &bi).norm());
            kappa += bi.dot(&bh);
            b_hat.push(bh);
        }
        Ok(TransportCoefficients { mu: mu / 15.0, nu: mu / 10.0, kappa: 2.0 * kappa / 15.0, a_hat, b_hat, residual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(k: usize) -> CollisionModel {
        CollisionModel::new(Arc::new(HermiteBasis::new(k)), 0.2).unwrap()
    }

    fn rand_vv(n: usize, rng: &mut ChaCha8Rng) -> VelocityVector {
        VelocityVector::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn projection_is_rank_five_orthogonal_projector() {
        let m = model(4);
        let p = &m.projection.pi;
        assert!((p * p - p).camax() < 1e-14);
        assert!((p - p.transpose()).camax() < 1e-15);
        assert!((p.trace() - 5.0).abs() < 1e-13);
        for c in &m.projection.chi {
            assert!((p * c - c).camax() < 1e-14);
        }
    }

    #[test]
    fn fluid_moments_examples() {
        let m = model(4);
        let b = m.basis().clone();
        let f = m.project_fluid(&b.unit([1, 0, 0]));
        assert!(f.rho.norm() < 1e-15 && (f.u[0] - 1.0).norm() < 1e-15 && f.theta.norm() < 1e-15);
        let v1sq = b.project_function(|v| v[0] * v[0]).map(|x| Complex64::new(x, 0.0));
        let f = m.project_fluid(&v1sq);
        assert!((f.rho - 1.0).norm() < 1e-13);
        assert!((f.theta - 2.0 / 3.0).norm() < 1e-13);
        let third = b.project_function(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 3.0);
        assert!((f.pg.map(|z| z.re) - third).camax() < 1e-13);
        let chi4 = b.chi(4).map(|x| Complex64::new(x, 0.0));
        let f = m.project_fluid(&chi4);
        assert!((f.pg - &chi4).camax() < 1e-14);
    }

    #[test]
    fn kernel_is_annihilated() {
        let m = model(6);
        for c in &m.projection.chi {
            let cc = c.map(|x| Complex64::new(x, 0.0));
            assert!(m.apply_l(&cc, 0.7).camax() < 1e-13);
            assert!(m.dz_l(&cc, 0.7).camax() < 1e-13);
        }
    }

    #[test]
    fn quadratic_form_is_lambda_norm_of_perp() {
        let m = model(8);
        let b = m.basis().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = rand_vv(b.size(), &mut rng);
            let z = rng.random_range(-1.0..1.0);
            let lhs = b.weighted_inner(&m.apply_l(&g, z), &g).unwrap();
            let rhs = m.factor(z) * b.lambda_norm(&m.perp(&g)).powi(2);
            assert!((lhs.re - rhs).abs() < 1e-10 * rhs.max(1.0));
            assert!(lhs.im.abs() < 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn l_of_v1v2_is_projected_multiplier() {
        let m = model(6);
        let b = m.basis().clone();
        let v1v2 = b.unit([1, 1, 0]);
        let direct = b.project_function(|v| (1.0 + norm3(v)) * v[0] * v[1]);
        let expect = &m.projection.pi_perp * direct;
        assert!((m.apply_l(&v1v2, 0.0).map(|z| z.re) - expect).camax() < 1e-12);
    }

    #[test]
    fn splitting_reassembles() {
        let m = model(5);
        let (k, lam) = m.split_k_lambda();
        assert!((lam - k - &m.l).camax() < 1e-14);
        let (vals, _) = crate::linalg::sym_eigen(lam);
        assert!(vals[0] >= 1.0 - 1e-10);
    }

    #[test]
    fn gamma_structure() {
        let m = model(6);
        let b = m.basis().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = rand_vv(b.size(), &mut rng);
        let h = rand_vv(b.size(), &mut rng);
        assert_eq!(m.apply_gamma(&b.unit([0, 0, 0]), &b.zeros(), 0.0).unwrap().camax(), 0.0);
        let gam = m.apply_gamma(&g, &h, 0.3).unwrap();
        for c in &m.projection.chi {
            let cc = c.map(|x| Complex64::new(x, 0.0));
            assert!(b.weighted_inner(&gam, &cc).unwrap().norm() < 1e-12);
        }
        let sym = m.apply_gamma(&h, &g, 0.3).unwrap();
        assert!((gam - sym).camax() < 1e-12);
        // Γ(Pg, Pg) = ½ L((Pg)²) for the modulated operator.
        let pg = m.project_fluid(&g).pg;
        let lhs = m.apply_gamma(&pg, &pg, 0.5).unwrap();
        let rhs = m.apply_l(&b.multiply_project(&pg, &pg).unwrap(), 0.5) * Complex64::new(0.5, 0.0);
        assert!((lhs - rhs).camax() < 1e-13);
    }

    #[test]
    fn dz_l_matches_central_difference() {
        for modulation in [Modulation::Linear, Modulation::Sine] {
            let b = Arc::new(HermiteBasis::new(4));
            let m = CollisionModel::with_weight(b.clone(), |v| 1.0 + norm3(v), 0.2, modulation).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let g = rand_vv(b.size(), &mut rng);
            let z = 0.37;
            let hh = 1e-3;
            let fd = (m.apply_l(&g, z + hh) - m.apply_l(&g, z - hh)) / Complex64::new(2.0 * hh, 0.0);
            assert!((fd - m.dz_l(&g, z)).camax() < 1e-5);
            let zero = m.with_eta(0.0).unwrap();
            assert_eq!(zero.dz_l(&g, z).camax(), 0.0);
        }
    }

    #[test]
    fn relaxation_transport_coefficients() {
        let m = CollisionModel::relaxation(Arc::new(HermiteBasis::new(4))).unwrap();
        let t = m.transport_coefficients(0.0).unwrap();
        assert!((t.mu - 2.0 / 3.0).abs() < 1e-12, "{}", t.mu);
        assert!((t.nu - 1.0).abs() < 1e-12);
        assert!((t.kappa - 1.0).abs() < 1e-12, "{}", t.kappa);
        assert!(t.residual < 1e-10);
    }

    #[test]
    fn default_transport_coefficients_positive_and_scale_with_modulation() {
        let m = model(6);
        let t0 = m.transport_coefficients(0.0).unwrap();
        assert!(t0.mu > 0.0 && t0.kappa > 0.0 && t0.residual < 1e-10);
        let t1 = m.transport_coefficients(0.5).unwrap();
        assert!((t1.mu * m.factor(0.5) - t0.mu).abs() < 1e-12);
        assert!((t1.kappa * m.factor(0.5) - t0.kappa).abs() < 1e-12);
    }

    #[test]
    fn transport_needs_cubic_degree() {
        let m = CollisionModel::new(Arc::new(HermiteBasis::new(2)), 0.0).unwrap();
        assert!(m.transport_coefficients(0.0).is_err());
    }

    #[test]
    fn modulation_amplitude_validated() {
        assert!(CollisionModel::new(Arc::new(HermiteBasis::new(2)), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn l_is_self_adjoint(seed in 0u64..500) {
            let m = model(4);
            let b = m.basis().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = rand_vv(b.size(), &mut rng);
            let h = rand_vv(b.size(), &mut rng);
            let a = b.weighted_inner(&m.apply_l(&g, 0.1), &h).unwrap();
            let c = b.weighted_inner(&g, &m.apply_l(&h, 0.1)).unwrap();
            prop_assert!((a - c).norm() < 1e-12);
        }
    }
}

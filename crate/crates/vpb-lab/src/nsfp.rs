//! Pseudo-spectral solver for the incompressible Navier–Stokes–Fourier–Poisson limit
//!
//! ∂ₜu + u·∇u − ν Δu + ∇P = ρ∇θ,   div u = 0,
//! ∂ₜσ + u·∇σ − (5κ/2) Δθ = 0,     σ = (3/2)θ − ρ,   Δ(ρ + θ) = ρ,
//!
//! evolving (u, σ) and recovering (ρ, θ) mode by mode from the constraint.

use num_complex::Complex64;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::hermite::HermiteBasis;
use crate::torus::Torus;
use crate::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Mode coefficients of (u, σ) in [`Torus`] mode order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub t: f64,
    pub u: [Vec<Complex64>; 3],
    pub sigma: Vec<Complex64>,
}

impl FluidState {
    pub fn zeros(torus: &Torus) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); torus.len()];
        FluidState { t: 0.0, u: [z.clone(), z.clone(), z.clone()], sigma: z }
    }

    /// Largest |n·û(n)|.
    pub fn divergence(&self, torus: &Torus) -> f64 {
        (0..torus.len())
            .map(|i| {
                let n = torus.wavevector(i);
                (self.u[0][i] * n[0] + self.u[1][i] * n[1] + self.u[2][i] * n[2]).norm()
            })
            .fold(0.0, f64::max)
    }

    /// ‖u‖² + ‖σ‖².
    pub fn energy(&self) -> f64 {
        self.u.iter().flatten().chain(self.sigma.iter()).map(|z| z.norm_sqr()).sum()
    }
}

/// Derived density, temperature and potential.
#[derive(Debug, Clone)]
pub struct Derived {
    pub rho: Vec<Complex64>,
    pub theta: Vec<Complex64>,
    /// φ = ρ + θ (mean free), so that Δφ = ρ.
    pub phi: Vec<Complex64>,
}

/// ρ̂ = −(2/3)|n|²σ̂/(1 + (5/3)|n|²), θ̂ = (2/3)(σ̂ + ρ̂), φ̂ = ρ̂ + θ̂ (zero at n = 0).
pub fn recover_rho_theta(torus: &Torus, sigma: &[Complex64]) -> Derived {
    let m = torus.len();
    let mut rho = Vec::with_capacity(m);
    let mut theta = Vec::with_capacity(m);
    let mut phi = Vec::with_capacity(m);
    for (i, s) in sigma.iter().enumerate() {
        let n2 = torus.norm2(i);
        let r = -s * (2.0 / 3.0 * n2 / (1.0 + 5.0 / 3.0 * n2));
        let th = (s + r) * (2.0 / 3.0);
        rho.push(r);
        theta.push(th);
        phi.push(if n2 == 0.0 { Complex64::new(0.0, 0.0) } else { r + th });
    }
    Derived { rho, theta, phi }
}

/// Largest |n|²(ρ̂ + θ̂) + ρ̂ over the modes.
pub fn constraint_residual(torus: &Torus, d: &Derived) -> f64 {
    (0..torus.len()).map(|i| (torus.norm2(i) * (d.rho[i] + d.theta[i]) + d.rho[i]).norm()).fold(0.0, f64::max)
}

/// û ↦ û − n(n·û)/|n|², leaving n = 0 untouched.
pub fn leray_project(torus: &Torus, u: &mut [Vec<Complex64>; 3]) {
    for i in 0..torus.len() {
        let n2 = torus.norm2(i);
        if n2 == 0.0 {
            continue;
        }
        let n = torus.wavevector(i);
        let dot = u[0][i] * n[0] + u[1][i] * n[1] + u[2][i] * n[2];
        for a in 0..3 {
            u[a][i] -= dot * (n[a] / n2);
        }
    }
}

/// Decay rate of σ̂(n) under the temperature diffusion written in σ.
pub fn sigma_diffusion_rate(kappa: f64, n2: f64) -> f64 {
    (5.0 * kappa / 3.0) * n2 * (1.0 + n2) / (1.0 + 5.0 / 3.0 * n2)
}

/// Integrating-factor Heun scheme (exact diffusion, explicit transport and forcing).
#[derive(Debug, Clone)]
pub struct NsfpSolver {
    pub torus: Torus,
    pub nu: f64,
    pub kappa: f64,
    pub dt: f64,
    /// Drop advection and forcing (linearized limit semigroup).
    pub linear: bool,
}

impl NsfpSolver {
    pub fn new(torus: Torus, nu: f64, kappa: f64, dt: f64) -> Result<Self> {
        if !(nu > 0.0 && kappa > 0.0) {
            return Err(Error::validation("nu/kappa", "transport coefficients must be positive"));
        }
        if !(dt > 0.0) {
            return Err(Error::validation("dt", "must be positive"));
        }
        Ok(NsfpSolver { torus, nu, kappa, dt, linear: false })
    }

    fn decay(&self, s: &mut FluidState, h: f64) {
        for i in 0..self.torus.len() {
            let n2 = self.torus.norm2(i);
            let fu = (-self.nu * n2 * h).exp();
            for a in 0..3 {
                s.u[a][i] *= fu;
            }
            s.sigma[i] *= (-sigma_diffusion_rate(self.kappa, n2) * h).exp();
        }
    }

    /// Explicit terms: Leray(−u·∇u + ρ∇θ) and −u·∇σ.
    pub fn explicit_terms(&self, s: &FluidState) -> ([Vec<Complex64>; 3], Vec<Complex64>) {
        let t = &self.torus;
        let m = t.len();
        let d = t.dim();
        let der = recover_rho_theta(t, &s.sigma);
        // rows: u0,u1,u2, σ, ρ, then ∂_a u_j (3d), ∂_a σ (d), ∂_a θ (d)
        let rows = 5 + 3 * d + 2 * d;
        let mut spec = DMatrix::zeros(rows, m);
        for i in 0..m {
            let n = t.wavevector(i);
            for j in 0..3 {
                spec[(j, i)] = s.u[j][i];
            }
            spec[(3, i)] = s.sigma[i];
            spec[(4, i)] = der.rho[i];
            for a in 0..d {
                for j in 0..3 {
                    spec[(5 + 3 * a + j, i)] = I * n[a] * s.u[j][i];
                }
                spec[(5 + 3 * d + a, i)] = I * n[a] * s.sigma[i];
                spec[(5 + 4 * d + a, i)] = I * n[a] * der.theta[i];
            }
        }
        let phys = t.to_physical(&spec);
        let p = phys.ncols();
        let mut out = DMatrix::zeros(4, p);
        for q in 0..p {
            for j in 0..3 {
                let mut adv = 0.0;
                for a in 0..d {
                    adv += phys[(a, q)] * phys[(5 + 3 * a + j, q)];
                }
                let force = if j < d { phys[(4, q)] * phys[(5 + 4 * d + j, q)] } else { 0.0 };
                out[(j, q)] = -adv + force;
            }
            let mut adv = 0.0;
            for a in 0..d {
                adv += phys[(a, q)] * phys[(5 + 3 * d + a, q)];
            }
            out[(3, q)] = -adv;
        }
        let back = t.to_spectral(&out);
        let mut fu = [back.row(0).iter().cloned().collect::<Vec<_>>(), back.row(1).iter().cloned().collect(), back.row(2).iter().cloned().collect()];
        leray_project(t, &mut fu);
        (fu, back.row(3).iter().cloned().collect())
    }

    fn axpy(s: &FluidState, h: f64, f: &([Vec<Complex64>; 3], Vec<Complex64>)) -> FluidState {
        let mut o = s.clone();
        for a in 0..3 {
            for (x, y) in o.u[a].iter_mut().zip(f.0[a].iter()) {
                *x += y * h;
            }
        }
        for (x, y) in o.sigma.iter_mut().zip(f.1.iter()) {
            *x += y * h;
        }
        o
    }

    pub fn step(&self, s: &FluidState) -> Result<FluidState> {
        let h = self.dt;
        let mut out = if self.linear {
            let mut o = s.clone();
            self.decay(&mut o, h);
            o
        } else {
            let f0 = self.explicit_terms(s);
            let mut pred = Self::axpy(s, h, &f0);
            self.decay(&mut pred, h);
            let f1 = self.explicit_terms(&pred);
            let mut o = Self::axpy(s, 0.5 * h, &f0);
            self.decay(&mut o, h);
            Self::axpy(&o, 0.5 * h, &f1)
        };
        out.t = s.t + h;
        let m = self.torus.len();
        let zero = self.torus.zero_index();
        for i in zero..m {
            let j = m - 1 - i;
            for a in 0..3 {
                if i == j {
                    out.u[a][i].im = 0.0;
                } else {
                    out.u[a][j] = out.u[a][i].conj();
                }
            }
            if i == j {
                out.sigma[i].im = 0.0;
            } else {
                out.sigma[j] = out.sigma[i].conj();
            }
        }
        if out.u.iter().flatten().chain(out.sigma.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("NSFP state became non-finite; reduce dt".into()));
        }
        Ok(out)
    }

    /// Advance `n_steps`, recording every `every` steps (including the start).
    pub fn run(&self, s0: &FluidState, n_steps: u64, every: u64) -> Result<Vec<FluidState>> {
        let mut out = vec![s0.clone()];
        let mut s = s0.clone();
        for k in 1..=n_steps {
            s = self.step(&s)?;
            s.t = s0.t + k as f64 * self.dt;
            if k % every == 0 || k == n_steps {
                out.push(s.clone());
            }
        }
        Ok(out)
    }
}

/// Values at the requested increasing `times` (the first must equal `s0.t`), with
/// `self.dt` as the largest sub-step.
pub fn run_to_times(solver: &NsfpSolver, s0: &FluidState, times: &[f64]) -> Result<Vec<FluidState>> {
    let mut out = Vec::with_capacity(times.len());
    let mut s = s0.clone();
    for (k, &t) in times.iter().enumerate() {
        let gap = t - s.t;
        if gap < -1e-12 || (k == 0 && gap.abs() > 1e-12) {
            return Err(Error::validation("times", "must start at the initial time and increase"));
        }
        if gap > 1e-12 {
            let n = (gap / solver.dt - 1e-9).ceil().max(1.0) as u64;
            let sub = NsfpSolver { dt: gap / n as f64, ..solver.clone() };
            let t0 = s.t;
            for _ in 0..n {
                s = sub.step(&s)?;
            }
            s.t = t0 + gap;
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// Kinetic representation g = ρ + u·v + (θ/2)(|v|²−3) of a fluid state, one
/// Hermite coefficient vector per mode.
pub fn lift_to_kinetic(torus: &Torus, basis: &HermiteBasis, s: &FluidState) -> Vec<Vec<Complex64>> {
    let d = recover_rho_theta(torus, &s.sigma);
    let chi4 = basis.chi(4);
    (0..torus.len())
        .map(|i| {
            let mut g = vec![Complex64::new(0.0, 0.0); basis.size()];
            g[0] = d.rho[i];
            for a in 0..3 {
                g[a + 1] = s.u[a][i];
            }
            let big_theta = d.theta[i] * (1.5f64).sqrt();
            for (k, c) in chi4.iter().enumerate() {
                g[k] += big_theta * *c;
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real_field(t: &Torus, rng: &mut ChaCha8Rng, amp: f64) -> Vec<Complex64> {
        let m = t.len();
        let mut f = vec![Complex64::new(0.0, 0.0); m];
        for i in t.zero_index() + 1..m {
            f[i] = Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp));
            f[m - 1 - i] = f[i].conj();
        }
        f
    }

    #[test]
    fn recovery_examples() {
        let t = Torus::new(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sigma = random_real_field(&t, &mut rng, 1.0);
        sigma[t.zero_index()] = Complex64::new(0.9, 0.0);
        let d = recover_rho_theta(&t, &sigma);
        assert!(constraint_residual(&t, &d) < 1e-14);
        assert_eq!(d.rho[t.zero_index()], Complex64::new(0.0, 0.0));
        assert!((d.theta[t.zero_index()] - 0.6).norm() < 1e-15);
        for i in 0..t.len() {
            assert!((d.theta[i] * 1.5 - d.rho[i] - sigma[i]).norm() < 1e-14);
        }
        // |n| → ∞: ρ̂/σ̂ → −2/5.
        let big = Torus::new(1, 1000).unwrap();
        let mut s = vec![Complex64::new(0.0, 0.0); big.len()];
        let k = big.index_of([1000, 0]).unwrap();
        s[k] = Complex64::new(1.0, 0.0);
        let d = recover_rho_theta(&big, &s);
        assert!((d.rho[k].re + 0.4).abs() < 1e-6);
    }

    #[test]
    fn leray_examples() {
        let t = Torus::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_real_field(&t, &mut rng, 1.0);
        let mut grad = [
            (0..t.len()).map(|i| I * t.wavevector(i)[0] * p[i]).collect::<Vec<_>>(),
            (0..t.len()).map(|i| I * t.wavevector(i)[1] * p[i]).collect(),
            vec![Complex64::new(0.0, 0.0); t.len()],
        ];
        leray_project(&t, &mut grad);
        assert!(grad.iter().flatten().all(|z| z.norm() < 1e-14));
        let mut u = [random_real_field(&t, &mut rng, 1.0), random_real_field(&t, &mut rng, 1.0), random_real_field(&t, &mut rng, 1.0)];
        leray_project(&t, &mut u);
        let once = u.clone();
        leray_project(&t, &mut u);
        assert!(once.iter().flatten().zip(u.iter().flatten()).all(|(a, b)| (a - b).norm() < 1e-15));
        let s = FluidState { t: 0.0, u, sigma: vec![Complex64::new(0.0, 0.0); t.len()] };
        assert!(s.divergence(&t) < 1e-14);
    }

    #[test]
    fn shear_mode_decays_viscously() {
        let t = Torus::new(1, 4).unwrap();
        let solver = NsfpSolver::new(t.clone(), 0.4, 0.5, 1e-3).unwrap();
        let mut s = FluidState::zeros(&t);
        let k = t.index_of([2, 0]).unwrap();
        s.u[1][k] = Complex64::new(0.3, 0.1);
        s.u[1][t.neg_index(k)] = Complex64::new(0.3, -0.1);
        let traj = solver.run(&s, 1000, 1000).unwrap();
        let end = traj.last().unwrap();
        let expect = Complex64::new(0.3, 0.1) * (-0.4 * 4.0 * 1.0f64).exp();
        assert!((end.u[1][k] - expect).norm() < 1e-8 * expect.norm().max(1.0));
    }

    #[test]
    fn sigma_only_data_diffuses() {
        let t = Torus::new(1, 4).unwrap();
        let solver = NsfpSolver::new(t.clone(), 0.4, 0.5, 1e-3).unwrap();
        let mut s = FluidState::zeros(&t);
        let k = t.index_of([1, 0]).unwrap();
        s.sigma[k] = Complex64::new(0.2, 0.0);
        s.sigma[t.neg_index(k)] = Complex64::new(0.2, 0.0);
        let end = solver.run(&s, 500, 500).unwrap().pop().unwrap();
        let expect = 0.2 * (-sigma_diffusion_rate(0.5, 1.0) * 0.5).exp();
        assert!((end.sigma[k].re - expect).abs() < 1e-10);
        assert!(end.u.iter().flatten().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn two_dimensional_run_keeps_invariants() {
        let t = Torus::new(2, 4).unwrap();
        let solver = NsfpSolver::new(t.clone(), 0.3, 0.4, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut u = [random_real_field(&t, &mut rng, 0.2), random_real_field(&t, &mut rng, 0.2), random_real_field(&t, &mut rng, 0.2)];
        leray_project(&t, &mut u);
        let mut s = FluidState { t: 0.0, u, sigma: random_real_field(&t, &mut rng, 0.2) };
        s.u[0][t.zero_index()] = Complex64::new(0.05, 0.0);
        s.sigma[t.zero_index()] = Complex64::new(0.1, 0.0);
        let e0 = s.energy();
        let traj = solver.run(&s, 200, 50).unwrap();
        for st in &traj {
            assert!(st.divergence(&t) < 1e-12);
            assert!(constraint_residual(&t, &recover_rho_theta(&t, &st.sigma)) < 1e-10);
            assert!((st.u[0][t.zero_index()].re - 0.05).abs() < 1e-13);
            assert!((st.sigma[t.zero_index()].re - 0.1).abs() < 1e-13);
        }
        assert!(traj.last().unwrap().energy() < e0);
    }

    #[test]
    fn lift_round_trip() {
        let t = Torus::new(1, 3).unwrap();
        let basis = std::sync::Arc::new(HermiteBasis::new(4));
        let model = crate::collision::CollisionModel::new(basis.clone(), 0.0).unwrap();
        let zero = lift_to_kinetic(&t, &basis, &FluidState::zeros(&t));
        assert!(zero.iter().flatten().all(|z| z.norm() == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = FluidState::zeros(&t);
        s.u[1] = random_real_field(&t, &mut rng, 1.0);
        let g = lift_to_kinetic(&t, &basis, &s);
        for v in &g {
            assert!(v.iter().enumerate().all(|(a, z)| a == 2 || z.norm() == 0.0));
        }
        s.sigma = random_real_field(&t, &mut rng, 1.0);
        let g = lift_to_kinetic(&t, &basis, &s);
        let d = recover_rho_theta(&t, &s.sigma);
        for i in 0..t.len() {
            let fm = model.project_fluid(&crate::hermite::VelocityVector::from_column_slice(&g[i]));
            assert!((fm.rho - d.rho[i]).norm() < 1e-14);
            assert!((fm.u[1] - s.u[1][i]).norm() < 1e-14);
            assert!((fm.theta - d.theta[i]).norm() < 1e-14);
        }
    }
}

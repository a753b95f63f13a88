//! Time integration of the scaled VPB fluctuation system on 𝕋ᵈ × ℝ³:
//!
//! ∂ₜg + (1/ε) v·∇ₓg + (1/ε²) L g − (1/ε) v·∇ₓφ = (v g − ∇ᵥg)·∇ₓφ + (1/ε) Γ(g, g),
//! Δₓφ = ∫ g M dv.
//!
//! The linear part is propagated exactly per Fourier mode by matrix exponentials;
//! the nonlinear terms are evaluated pseudo-spectrally on a padded grid.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionModel;
use crate::hermite::{HermiteBasis, VelocityVector};
use crate::linalg::{complexify, CMat};
use crate::torus::Torus;
use crate::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Kind of initial data (see [`crate::limit::prepare_initial`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialKind {
    Zero,
    /// Fluid data in Ker L with div u = 0 and Δ(ρ+θ) = ρ.
    WellPrepared,
    /// Well-prepared data plus an ε-sized microscopic part.
    KineticPerturbed,
    /// Seeded random smooth data of low Hermite degree with zero spatial mean.
    Generic,
}

/// Time-stepping scheme for the nonlinear terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// gⁿ⁺¹ = e^{ΔtG} gⁿ + Δt φ₁(ΔtG) N(gⁿ).
    ExponentialEuler,
    /// Second-order exponential Runge–Kutta (Cox–Matthews ETD2RK).
    Etd2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub epsilon: f64,
    pub dim: usize,
    /// Fourier cut N_x: modes with |n|_∞ ≤ N_x.
    pub modes: usize,
    /// Hermite degree K.
    pub degree: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Random-kernel coordinate z ∈ [−1, 1].
    pub z: f64,
    /// Kernel modulation amplitude η.
    pub eta: f64,
    pub initial: InitialKind,
    pub amplitude: f64,
    pub seed: u64,
    pub nonlinear: bool,
    pub scheme: Scheme,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            epsilon: 0.5,
            dim: 1,
            modes: 8,
            degree: 6,
            dt: default_dt(0.5),
            t_final: 0.5,
            z: 0.0,
            eta: 0.2,
            initial: InitialKind::WellPrepared,
            amplitude: 0.05,
            seed: 1,
            nonlinear: true,
            scheme: Scheme::ExponentialEuler,
        }
    }
}

/// `min(1e-3, ε²/4)`.
pub fn default_dt(epsilon: f64) -> f64 {
    (epsilon * epsilon / 4.0).min(1e-3)
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::validation("epsilon", format!("must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::validation("dim", "must be 1 or 2"));
        }
        if self.modes < 1 {
            return Err(Error::validation("modes", "must be at least 1"));
        }
        if self.degree < 4 {
            return Err(Error::validation("degree", "Hermite degree must be at least 4"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", "must be positive"));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::validation("T", "must be nonnegative"));
        }
        if !(-1.0..=1.0).contains(&self.z) {
            return Err(Error::validation("z", "must lie in [-1, 1]"));
        }
        if !(self.eta.abs() < 1.0) {
            return Err(Error::validation("eta", "must satisfy |eta| < 1"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::validation("amplitude", "must be nonnegative"));
        }
        Ok(())
    }

    /// Number of steps and the effective step that lands exactly on `t_final`.
    pub fn steps(&self) -> (u64, f64) {
        if self.t_final == 0.0 {
            return (0, self.dt);
        }
        let n = (self.t_final / self.dt - 1e-9).ceil().max(1.0) as u64;
        (n, self.t_final / n as f64)
    }
}

/// Dense matrix of the Fourier-mode generator
/// G_ε(n) = −(1/ε²) L(z) − (i/ε)(v·n) − (i/ε)(v·n)/|n|² ⟨·, 1⟩, with the field
/// term absent at n = 0. `n` may be any real wavevector.
pub fn assemble_generator(model: &CollisionModel, epsilon: f64, n: [f64; 3], z: f64) -> CMat {
    let b = model.basis();
    let size = b.size();
    let mut g = complexify(&model.l_at(z)) * Complex64::new(-1.0 / (epsilon * epsilon), 0.0);
    let n2 = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
    for (axis, &na) in n.iter().enumerate() {
        if na == 0.0 {
            continue;
        }
        let c = -I * (na / epsilon);
        for &(from, to, s) in b.lowering(axis) {
            g[(to, from)] += c * s;
            g[(from, to)] += c * s;
        }
        g[(axis + 1, 0)] += c / n2;
    }
    debug_assert_eq!(g.nrows(), size);
    g
}

/// φ̂(n) = −ρ̂(n)/|n|² for n ≠ 0 and φ̂(0) = 0.
pub fn poisson_solve(torus: &Torus, rho: &[Complex64]) -> Vec<Complex64> {
    (0..torus.len())
        .map(|i| {
            let n2 = torus.norm2(i);
            if n2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                -rho[i] / n2
            }
        })
        .collect()
}

/// Spectral state ĝ(n, ·) with its potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub t: f64,
    pub step: u64,
    /// One coefficient vector per mode, in [`Torus`] mode order.
    pub g: Vec<Vec<Complex64>>,
    pub phi: Vec<Complex64>,
}

impl KineticState {
    pub fn coeffs(&self, i: usize) -> VelocityVector {
        VelocityVector::from_column_slice(&self.g[i])
    }

    pub fn rho(&self) -> Vec<Complex64> {
        self.g.iter().map(|c| c[0]).collect()
    }

    /// Largest |ĝ(−n) − conj ĝ(n)|.
    pub fn reality_defect(&self) -> f64 {
        let m = self.g.len();
        let mut d: f64 = 0.0;
        for i in 0..m {
            let j = m - 1 - i;
            for (a, b) in self.g[i].iter().zip(self.g[j].iter()) {
                d = d.max((a - b.conj()).norm());
            }
        }
        d
    }
}

/// One accepted step's invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationEntry {
    pub t: f64,
    /// ∫∫ g M.
    pub mass: f64,
    /// ∫∫ v g M.
    pub momentum: [f64; 3],
    /// ∫∫ (|v|²−3) g M + ε‖∇φ‖².
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationLedger {
    pub entries: Vec<ConservationEntry>,
}

impl ConservationLedger {
    /// Largest deviations from the first entry: (mass, momentum, energy).
    pub fn drifts(&self) -> (f64, f64, f64) {
        let Some(first) = self.entries.first() else { return (0.0, 0.0, 0.0) };
        let mut d = (0.0f64, 0.0f64, 0.0f64);
        for e in &self.entries {
            d.0 = d.0.max((e.mass - first.mass).abs());
            for k in 0..3 {
                d.1 = d.1.max((e.momentum[k] - first.momentum[k]).abs());
            }
            d.2 = d.2.max((e.energy - first.energy).abs());
        }
        d
    }
}

/// The discretized system: basis, collision model, torus and parameters.
#[derive(Debug, Clone)]
pub struct VpbSystem {
    pub basis: Arc<HermiteBasis>,
    pub model: Arc<CollisionModel>,
    pub torus: Torus,
    pub epsilon: f64,
    pub z: f64,
    raise: [DMatrix<f64>; 3],
    l_gamma: DMatrix<f64>,
}

impl VpbSystem {
    pub fn new(model: Arc<CollisionModel>, torus: Torus, epsilon: f64, z: f64) -> Self {
        let basis = model.basis().clone();
        let raise = [basis.raise_matrix(0), basis.raise_matrix(1), basis.raise_matrix(2)];
        let l_gamma = model.l_at(z) * (0.5 / epsilon);
        VpbSystem { basis, model, torus, epsilon, z, raise, l_gamma }
    }

    pub fn from_config(cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = Arc::new(HermiteBasis::new(cfg.degree));
        let model = Arc::new(CollisionModel::new(basis, cfg.eta)?);
        let torus = Torus::new(cfg.dim, cfg.modes)?;
        Ok(Self::new(model, torus, cfg.epsilon, cfg.z))
    }

    pub fn generator(&self, i: usize) -> CMat {
        assemble_generator(&self.model, self.epsilon, self.torus.wavevector(i), self.z)
    }

    pub fn zero_state(&self) -> KineticState {
        let m = self.torus.len();
        KineticState {
            t: 0.0,
            step: 0,
            g: vec![vec![Complex64::new(0.0, 0.0); self.basis.size()]; m],
            phi: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    /// Re-solve the Poisson equation in place.
    pub fn refresh_potential(&self, s: &mut KineticState) {
        s.phi = poisson_solve(&self.torus, &s.rho());
    }

    fn spectral_matrix(&self, g: &[Vec<Complex64>]) -> DMatrix<Complex64> {
        let nb = self.basis.size();
        DMatrix::from_fn(nb, g.len(), |a, i| g[i][a])
    }

    fn field_rows(&self, phi: &[Complex64]) -> DMatrix<f64> {
        let d = self.torus.dim();
        let spec = DMatrix::from_fn(d, self.torus.len(), |axis, i| {
            let n = self.torus.mode(i);
            I * (n[axis] as f64) * phi[i]
        });
        self.torus.to_physical(&spec)
    }

    /// Spectral N₁ = (v g − ∇ᵥg)·∇φ and N₂ = (1/ε)Γ(g, g), dealiased to the mode set.
    pub fn nonlinear_parts(&self, s: &KineticState) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let (n1, n2) = self.physical_parts(s);
        (self.to_modes(&self.torus.to_spectral(&n1)), self.to_modes(&self.torus.to_spectral(&n2)))
    }

    /// Spectral N₁ + N₂.
    pub fn nonlinear_rhs(&self, s: &KineticState) -> Vec<Vec<Complex64>> {
        let (n1, n2) = self.physical_parts(s);
        self.to_modes(&self.torus.to_spectral(&(n1 + n2)))
    }

    fn to_modes(&self, spec: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
        (0..spec.ncols()).map(|i| spec.column(i).iter().cloned().collect()).collect()
    }

    fn physical_parts(&self, s: &KineticState) -> (DMatrix<f64>, DMatrix<f64>) {
        let gphys = self.torus.to_physical(&self.spectral_matrix(&s.g));
        let field = self.field_rows(&s.phi);
        let mut n1 = DMatrix::zeros(gphys.nrows(), gphys.ncols());
        for axis in 0..self.torus.dim() {
            let mut r = &self.raise[axis] * &gphys;
            for (p, mut col) in r.column_iter_mut().enumerate() {
                col *= field[(axis, p)];
            }
            n1 += r;
        }
        let n2 = &self.l_gamma * self.basis.project_squares(&gphys);
        (n1, n2)
    }

    pub fn conservation(&self, s: &KineticState) -> ConservationEntry {
        let g0 = &s.g[self.torus.zero_index()];
        let b = &self.basis;
        let e_moment: f64 = (0..3)
            .map(|axis| {
                let mut a = [0; 3];
                a[axis] = 2;
                g0[b.flat_index(a).unwrap()].re
            })
            .sum::<f64>()
            * 2f64.sqrt();
        ConservationEntry {
            t: s.t,
            mass: g0[0].re,
            momentum: [g0[1].re, g0[2].re, g0[3].re],
            energy: e_moment + self.epsilon * self.field_energy(s),
        }
    }

    /// ‖∇φ‖² = Σ |n|²|φ̂(n)|².
    pub fn field_energy(&self, s: &KineticState) -> f64 {
        (0..self.torus.len()).map(|i| self.torus.norm2(i) * s.phi[i].norm_sqr()).sum()
    }

    /// Distance between P ĝ(0) and −(ε/√6)‖∇φ‖² χ₄, the mean fluid part forced by the
    /// conservation laws when the initial data satisfy the mean constraints.
    pub fn mean_drift_residual(&self, s: &KineticState) -> f64 {
        let g0 = s.coeffs(self.torus.zero_index());
        let pg = self.model.project_fluid(&g0).pg;
        let target = self.basis.chi(4) * (-self.epsilon / 6f64.sqrt() * self.field_energy(s));
        pg.iter().zip(target.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Per-mode matrix functions for one step size.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub dt: f64,
    pub scheme: Scheme,
    exp: Vec<CMat>,
    phi1: Vec<CMat>,
    phi2: Vec<CMat>,
    canonical: Vec<usize>,
}

impl Propagator {
    pub fn new(sys: &VpbSystem, dt: f64, scheme: Scheme) -> Result<Self> {
        let canonical: Vec<usize> = (0..sys.torus.len()).filter(|&i| sys.torus.is_canonical(i)).collect();
        let mats: Vec<Result<(CMat, CMat, CMat)>> = canonical
            .par_iter()
            .map(|&i| {
                let g = sys.generator(i);
                match scheme {
                    Scheme::ExponentialEuler => {
                        let (e, p) = crate::linalg::exp_phi1(&g, dt)?;
                        Ok((e, p, CMat::zeros(0, 0)))
                    }
                    Scheme::Etd2 => crate::linalg::exp_phi12(&g, dt),
                }
            })
            .collect();
        let mut exp = Vec::new();
        let mut phi1 = Vec::new();
        let mut phi2 = Vec::new();
        for m in mats {
            let (e, p1, p2) = m?;
            exp.push(e);
            phi1.push(p1);
            phi2.push(p2);
        }
        Ok(Propagator { dt, scheme, exp, phi1, phi2, canonical })
    }

    fn combine(&self, sys: &VpbSystem, base: &KineticState, terms: &[(&[CMat], &[Vec<Complex64>])], out: &mut KineticState) {
        let nb = sys.basis.size();
        let updated: Vec<Vec<Complex64>> = self
            .canonical
            .par_iter()
            .enumerate()
            .map(|(c, &i)| {
                let mut acc = &self.exp[c] * VelocityVector::from_column_slice(&base.g[i]);
                for (mats, vecs) in terms {
                    acc += &mats[c] * VelocityVector::from_column_slice(&vecs[i]);
                }
                acc.iter().cloned().collect()
            })
            .collect();
        let m = sys.torus.len();
        for (c, &i) in self.canonical.iter().enumerate() {
            out.g[i] = updated[c].clone();
            if i != m - 1 - i {
                out.g[m - 1 - i] = updated[c].iter().map(|z| z.conj()).collect();
            } else {
                for z in out.g[i].iter_mut() {
                    z.im = 0.0;
                }
            }
        }
        debug_assert!(out.g.iter().all(|v| v.len() == nb));
    }

    /// Exact linear propagation over one step (N ≡ 0).
    pub fn step_linear(&self, sys: &VpbSystem, s: &KineticState) -> KineticState {
        let mut out = s.clone();
        self.combine(sys, s, &[], &mut out);
        self.finish(sys, s, out)
    }

    /// One nonlinear step of the configured scheme.
    pub fn step(&self, sys: &VpbSystem, s: &KineticState) -> Result<KineticState> {
        let n0 = sys.nonlinear_rhs(s);
        let mut a = s.clone();
        self.combine(sys, s, &[(&self.phi1, &n0)], &mut a);
        let mut out = if self.scheme == Scheme::Etd2 {
            sys.refresh_potential(&mut a);
            let na = sys.nonlinear_rhs(&a);
            let diff: Vec<Vec<Complex64>> =
                na.iter().zip(n0.iter()).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
            let mut b = s.clone();
            self.combine(sys, s, &[(&self.phi1, &n0), (&self.phi2, &diff)], &mut b);
            b
        } else {
            a
        };
        out = self.finish(sys, s, out);
        if out.g.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at t = {}; reduce dt", out.t)));
        }
        Ok(out)
    }

    /// One step applied to separately propagated Duhamel pieces: returns the
    /// increments `(U, Ψ₁, Ψ₂)` whose sum is the exponential-Euler update of `s`.
    pub fn step_split(
        &self,
        sys: &VpbSystem,
        s: &KineticState,
        pieces: &[KineticState; 3],
    ) -> [KineticState; 3] {
        let (n1, n2) = sys.nonlinear_parts(s);
        let mut u = pieces[0].clone();
        self.combine(sys, &pieces[0], &[], &mut u);
        let mut p1 = pieces[1].clone();
        self.combine(sys, &pieces[1], &[(&self.phi1, &n1)], &mut p1);
        let mut p2 = pieces[2].clone();
        self.combine(sys, &pieces[2], &[(&self.phi1, &n2)], &mut p2);
        [self.finish(sys, &pieces[0], u), self.finish(sys, &pieces[1], p1), self.finish(sys, &pieces[2], p2)]
    }

    fn finish(&self, sys: &VpbSystem, prev: &KineticState, mut out: KineticState) -> KineticState {
        out.step = prev.step + 1;
        out.t = out.step as f64 * self.dt;
        sys.refresh_potential(&mut out);
        out
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: SimulationConfig,
    pub dt: f64,
    pub snapshots: Vec<KineticState>,
    pub ledger: ConservationLedger,
}

/// Snapshot cadence `max(1, T/(100Δt))` in steps.
pub fn snapshot_every(n_steps: u64) -> u64 {
    (n_steps / 100).max(1)
}

/// Run a configured simulation from its prepared initial data.
pub fn run(cfg: &SimulationConfig) -> Result<Trajectory> {
    let sys = VpbSystem::from_config(cfg)?;
    let init = crate::limit::prepare_initial(&sys, cfg.initial, cfg.amplitude, cfg.seed, cfg.nonlinear)?;
    run_from(cfg, &sys, init.kinetic)
}

/// Continue a simulation from `state` until `cfg.t_final`.
pub fn run_from(cfg: &SimulationConfig, sys: &VpbSystem, state: KineticState) -> Result<Trajectory> {
    let (n_steps, dt) = cfg.steps();
    let every = snapshot_every(n_steps);
    let mut ledger = ConservationLedger::default();
    let mut snapshots = Vec::new();
    let mut s = state;
    sys.refresh_potential(&mut s);
    ledger.entries.push(sys.conservation(&s));
    if s.step.is_multiple_of(every) || s.step == n_steps {
        snapshots.push(s.clone());
    }
    if s.step >= n_steps {
        return Ok(Trajectory { config: cfg.clone(), dt, snapshots, ledger });
    }
    let prop = Propagator::new(sys, dt, cfg.scheme)?;
    while s.step < n_steps {
        s = if cfg.nonlinear { prop.step(sys, &s)? } else { prop.step_linear(sys, &s) };
        ledger.entries.push(sys.conservation(&s));
        if s.step.is_multiple_of(every) || s.step == n_steps {
            snapshots.push(s.clone());
        }
    }
    Ok(Trajectory { config: cfg.clone(), dt, snapshots, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(eps: f64, k: usize, nx: usize) -> VpbSystem {
        let basis = Arc::new(HermiteBasis::new(k));
        let model = Arc::new(CollisionModel::new(basis, 0.2).unwrap());
        VpbSystem::new(model, Torus::new(1, nx).unwrap(), eps, 0.0)
    }

    fn random_state(sys: &VpbSystem, seed: u64, amp: f64) -> KineticState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sys.zero_state();
        let m = sys.torus.len();
        let zero = sys.torus.zero_index();
        for i in zero + 1..m {
            if sys.torus.norm2(i) > 4.0 {
                continue;
            }
            for a in 0..sys.basis.size() {
                if sys.basis.total_degree(a) <= 3 {
                    s.g[i][a] = Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp));
                }
            }
            s.g[m - 1 - i] = s.g[i].iter().map(|z| z.conj()).collect();
        }
        sys.refresh_potential(&mut s);
        s
    }

    #[test]
    fn generator_special_cases() {
        let sys = system(1.0, 4, 2);
        let z = sys.torus.zero_index();
        let g0 = sys.generator(z);
        assert!((g0 + complexify(&sys.model.l)).camax() < 1e-15);
        let i1 = sys.torus.index_of([1, 0]).unwrap();
        let g = sys.generator(i1);
        let col0: Vec<usize> = (0..sys.basis.size()).filter(|&r| g[(r, 0)].norm() > 0.0).collect();
        assert_eq!(col0, vec![1]);
    }

    #[test]
    fn generator_is_dissipative() {
        let sys = system(0.3, 5, 3);
        for i in 0..sys.torus.len() {
            let e = crate::linalg::eig(&sys.generator(i)).unwrap();
            assert!(e.values.iter().all(|l| l.re <= 1e-10), "mode {i}");
        }
    }

    #[test]
    fn poisson_examples() {
        let t = Torus::new(1, 3).unwrap();
        let zero = vec![Complex64::new(0.0, 0.0); t.len()];
        assert!(poisson_solve(&t, &zero).iter().all(|z| z.norm() == 0.0));
        let mut rho = zero.clone();
        rho[t.index_of([1, 0]).unwrap()] = Complex64::new(1.0, 0.0);
        let phi = poisson_solve(&t, &rho);
        assert_eq!(phi[t.index_of([1, 0]).unwrap()], Complex64::new(-1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho: Vec<Complex64> = (0..t.len()).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let phi = poisson_solve(&t, &rho);
        for i in 0..t.len() {
            if t.norm2(i) > 0.0 {
                assert!((phi[i] * t.norm2(i) + rho[i]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn nonlinear_rhs_examples() {
        let sys = system(0.5, 5, 3);
        let zero = sys.zero_state();
        assert!(sys.nonlinear_rhs(&zero).iter().flatten().all(|z| z.norm() == 0.0));
        // Spatially uniform data: no field and N₂ = (1/ε)Γ(g, g).
        let mut s = sys.zero_state();
        let z0 = sys.torus.zero_index();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for a in 0..sys.basis.size() {
            s.g[z0][a] = Complex64::new(rng.random_range(-0.1..0.1), 0.0);
        }
        sys.refresh_potential(&mut s);
        let (n1, n2) = sys.nonlinear_parts(&s);
        assert!(n1.iter().flatten().all(|z| z.norm() < 1e-15));
        let g = s.coeffs(z0);
        let expect = sys.model.apply_gamma(&g, &g, 0.0).unwrap() * Complex64::new(1.0 / sys.epsilon, 0.0);
        let got = VelocityVector::from_column_slice(&n2[z0]);
        assert!((got - expect).camax() < 1e-14);
        // N₂ is orthogonal to the collision invariants at every mode.
        let s = random_state(&sys, 4, 0.1);
        let (_, n2) = sys.nonlinear_parts(&s);
        for v in &n2 {
            let vv = VelocityVector::from_column_slice(v);
            let p = sys.model.project_fluid(&vv).pg;
            assert!(p.camax() < 1e-14);
        }
    }

    #[test]
    fn nonlinear_terms_match_direct_convolution() {
        let sys = system(0.7, 4, 3);
        let s = random_state(&sys, 12, 0.2);
        let n = sys.nonlinear_rhs(&s);
        let t = &sys.torus;
        let b = &sys.basis;
        for i in 0..t.len() {
            let mut direct = b.zeros();
            for j in 0..t.len() {
                let nj = t.mode(j);
                let k = [t.mode(i)[0] - nj[0], 0];
                let Some(kk) = t.index_of(k) else { continue };
                let gj = s.coeffs(j);
                let gk = s.coeffs(kk);
                let dphi = I * (k[0] as f64) * s.phi[kk];
                direct += b.raise_v(&gj, 0) * dphi;
                direct += sys.model.apply_gamma(&gj, &gk, 0.0).unwrap() * Complex64::new(1.0 / sys.epsilon, 0.0);
            }
            let got = VelocityVector::from_column_slice(&n[i]);
            assert!((got - direct).camax() < 1e-13, "mode {i}");
        }
    }

    #[test]
    fn linear_step_is_exact_and_preserves_invariants() {
        let sys = system(0.5, 5, 3);
        let s = random_state(&sys, 5, 0.1);
        let prop = Propagator::new(&sys, 0.01, Scheme::ExponentialEuler).unwrap();
        let mut cur = s.clone();
        for _ in 0..50 {
            cur = prop.step_linear(&sys, &cur);
        }
        let i = sys.torus.index_of([2, 0]).unwrap();
        let e = crate::linalg::eig(&sys.generator(i)).unwrap();
        let vinv = e.vectors.clone().try_inverse().unwrap();
        let d = CMat::from_diagonal(&crate::linalg::CVec::from_iterator(
            e.values.len(),
            e.values.iter().map(|l| (l * 0.5).exp()),
        ));
        let expect = &e.vectors * d * vinv * s.coeffs(i);
        assert!((cur.coeffs(i) - expect).norm() < 1e-10);
        assert!(cur.reality_defect() < 1e-12);
        let (dm, dp, _) = ConservationLedger { entries: vec![sys.conservation(&s), sys.conservation(&cur)] }.drifts();
        assert!(dm < 1e-10 && dp < 1e-10);
    }

    #[test]
    fn exponential_euler_is_first_order() {
        let sys = system(1.0, 4, 2);
        let s = random_state(&sys, 6, 0.05);
        let run_with = |dt: f64, n: usize| {
            let p = Propagator::new(&sys, dt, Scheme::ExponentialEuler).unwrap();
            let mut c = s.clone();
            for _ in 0..n {
                c = p.step(&sys, &c).unwrap();
            }
            c
        };
        let diff = |a: &KineticState, b: &KineticState| -> f64 {
            a.g.iter().flatten().zip(b.g.iter().flatten()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
        };
        let coarse = run_with(0.01, 20);
        let mid = run_with(0.005, 40);
        let fine = run_with(0.0025, 80);
        let ratio = diff(&coarse, &mid) / diff(&mid, &fine);
        assert!(ratio > 1.8, "ratio {ratio}");
    }

    #[test]
    fn etd2_is_second_order() {
        let sys = system(1.0, 4, 2);
        let s = random_state(&sys, 6, 0.05);
        let run_with = |dt: f64, n: usize| {
            let p = Propagator::new(&sys, dt, Scheme::Etd2).unwrap();
            let mut c = s.clone();
            for _ in 0..n {
                c = p.step(&sys, &c).unwrap();
            }
            c
        };
        let diff = |a: &KineticState, b: &KineticState| -> f64 {
            a.g.iter().flatten().zip(b.g.iter().flatten()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
        };
        let coarse = run_with(0.02, 10);
        let mid = run_with(0.01, 20);
        let fine = run_with(0.005, 40);
        let ratio = diff(&coarse, &mid) / diff(&mid, &fine);
        assert!(ratio > 3.5, "ratio {ratio}");
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = SimulationConfig { epsilon: 0.0, ..Default::default() };
        match c.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "epsilon"),
            other => panic!("{other:?}"),
        }
        c.epsilon = 0.5;
        c.degree = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let cfg = SimulationConfig { t_final: 0.0, modes: 2, degree: 4, ..Default::default() };
        let tr = run(&cfg).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.snapshots[0].step, 0);
    }
}

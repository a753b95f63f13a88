//! Collocation in the random variable z ∈ [−1, 1]: ensembles of deterministic
//! runs at Gauss–Legendre nodes, mixed L²_z / sup_z norms, z-sensitivities,
//! stability under perturbed data and node-wise fluid limits.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionModel;
use crate::hermite::HermiteBasis;
use crate::hypocoercivity::{fit_decay, plain_energy, DecayFit};
use crate::limit::{hl_norm2, limit_sweep, ExperimentPlan, LimitRow};
use crate::torus::Torus;
use crate::vpb::{run_from, KineticState, SimulationConfig, VpbSystem};
use crate::{Error, Result};

/// Points of the fine grid used to approximate sup_z of the interpolant.
pub const FINE_POINTS: usize = 201;

/// Quadrature nodes on [−1, 1] with weights for the uniform density (sum 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    // P_n and P_n′
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre rule by Golub–Welsch, nodes polished with Newton steps;
/// weights normalized to the probability measure dz/2.
pub fn build_grid(n: usize) -> Result<Grid> {
    if n == 0 {
        return Err(Error::validation("nodes", "need at least one node"));
    }
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let (mut nodes, _) = crate::linalg::sym_eigen(&jac);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre(n, *x);
            if dp != 0.0 && n > 1 {
                *x -= p / dp;
            }
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            if n == 1 {
                1.0
            } else {
                let (_, dp) = legendre(n, x);
                1.0 / ((1.0 - x * x) * dp * dp)
            }
        })
        .collect();
    Ok(Grid { nodes, weights })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ w_k f_k.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    fn bary_weights(&self) -> Vec<f64> {
        let x = &self.nodes;
        (0..x.len())
            .map(|j| 1.0 / (0..x.len()).filter(|&k| k != j).map(|k| x[j] - x[k]).product::<f64>())
            .collect()
    }

    /// Value at `z` of the polynomial interpolating `f` at the nodes.
    pub fn interpolate(&self, f: &[f64], z: f64) -> f64 {
        let w = self.bary_weights();
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &xj) in self.nodes.iter().enumerate() {
            if z == xj {
                return f[j];
            }
            let c = w[j] / (z - xj);
            num += c * f[j];
            den += c;
        }
        num / den
    }

    /// Differentiation matrix of the node interpolant.
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let w = self.bary_weights();
        let x = &self.nodes;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    d[(i, j)] = (w[j] / w[i]) / (x[i] - x[j]);
                    s += d[(i, j)];
                }
            }
            d[(i, i)] = -s;
        }
        d
    }

    /// Maximum of the interpolant of `f` over an equispaced fine grid on [−1, 1].
    pub fn fine_sup(&self, f: &[f64]) -> f64 {
        (0..FINE_POINTS)
            .map(|k| self.interpolate(f, -1.0 + 2.0 * k as f64 / (FINE_POINTS - 1) as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// z-dependence of the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RandomData {
    /// Same data at every node.
    Deterministic,
    /// g₀(z) = (1 + slope·z)·g₀.
    Linear { slope: f64 },
}

impl RandomData {
    fn scale(&self, z: f64) -> f64 {
        match self {
            RandomData::Deterministic => 1.0,
            RandomData::Linear { slope } => 1.0 + slope * z,
        }
    }
}

/// Mixed norms of the ensemble at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNorms {
    pub t: f64,
    /// ∫ ℰ^s(z) π(z) dz.
    pub l2: f64,
    /// max over nodes of ℰ^s(z).
    pub sup_nodes: f64,
    /// max over [−1, 1] of the node interpolant of ℰ^s(z).
    pub sup: f64,
    /// l2 + sup.
    pub l2_inf: f64,
    /// ∫ ‖∂_z g‖²_{H^{s−1}} π(z) dz.
    pub dz: f64,
}

/// Node runs of an ensemble with their mixed norms.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub grid: Grid,
    pub epsilon: f64,
    pub s: usize,
    pub config_hashes: Vec<String>,
    /// Per node, the snapshot sequence (identical times across nodes).
    pub snapshots: Vec<Vec<KineticState>>,
    pub norms: Vec<MixedNorms>,
    /// Set when the interpolant's fine-grid sup exceeds the node maximum by 50 %.
    pub runge_flag: bool,
}

/// Ensemble manifest: nodes, weights and per-node configuration hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub config_hashes: Vec<String>,
    pub epsilon: f64,
    pub s: usize,
}

impl EnsembleResult {
    pub fn times(&self) -> Vec<f64> {
        self.norms.iter().map(|n| n.t).collect()
    }

    pub fn manifest(&self) -> EnsembleManifest {
        EnsembleManifest {
            nodes: self.grid.nodes.clone(),
            weights: self.grid.weights.clone(),
            config_hashes: self.config_hashes.clone(),
            epsilon: self.epsilon,
            s: self.s,
        }
    }

    /// Exponential fit of the L^{2∩∞}_z norm past `transient`.
    pub fn decay(&self, transient: f64) -> Result<DecayFit> {
        let v: Vec<f64> = self.norms.iter().map(|n| n.l2_inf).collect();
        fit_decay(&self.times(), &v, transient)
    }

    /// Exponential fit of the ∂_z piece past `transient`.
    pub fn dz_decay(&self, transient: f64) -> Result<DecayFit> {
        let v: Vec<f64> = self.norms.iter().map(|n| n.dz).collect();
        fit_decay(&self.times(), &v, transient)
    }
}

fn node_config(cfg: &SimulationConfig, z: f64) -> SimulationConfig {
    SimulationConfig { z, ..cfg.clone() }
}

fn scaled_initial(sys: &VpbSystem, cfg: &SimulationConfig, data: RandomData, z: f64) -> Result<KineticState> {
    let amp = cfg.amplitude * data.scale(z);
    Ok(crate::limit::prepare_initial(sys, cfg.initial, amp, cfg.seed, cfg.nonlinear)?.kinetic)
}

fn run_nodes(
    cfg: &SimulationConfig,
    grid: &Grid,
    init: impl Fn(&VpbSystem, f64) -> Result<KineticState> + Sync,
) -> Result<Vec<Vec<KineticState>>> {
    cfg.validate()?;
    let basis = Arc::new(HermiteBasis::new(cfg.degree));
    let model = Arc::new(CollisionModel::new(basis, cfg.eta)?);
    let torus = Torus::new(cfg.dim, cfg.modes)?;
    grid.nodes
        .par_iter()
        .map(|&z| {
            let c = node_config(cfg, z);
            let sys = VpbSystem::new(model.clone(), torus.clone(), c.epsilon, z);
            let s0 = init(&sys, z)?;
            run_from(&c, &sys, s0).map(|t| t.snapshots).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("node z = {z}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// ∂_z g at every node for one time, by differentiating the node interpolant.
pub fn z_derivative(grid: &Grid, states: &[&KineticState]) -> Result<Vec<Vec<Vec<Complex64>>>> {
    if grid.len() < 5 {
        return Err(Error::validation("nodes", "z-derivatives need at least 5 nodes"));
    }
    if states.len() != grid.len() {
        return Err(Error::validation("nodes", "one state per node required"));
    }
    let d = grid.diff_matrix();
    let n = grid.len();
    Ok((0..n)
        .map(|i| {
            let mut out: Vec<Vec<Complex64>> = states[0].g.iter().map(|v| vec![Complex64::new(0.0, 0.0); v.len()]).collect();
            for j in 0..n {
                let c = d[(i, j)];
                if c == 0.0 {
                    continue;
                }
                for (o, g) in out.iter_mut().zip(&states[j].g) {
                    for (a, b) in o.iter_mut().zip(g) {
                        *a += b * c;
                    }
                }
            }
            out
        })
        .collect())
}

/// Run the solver at every node with z-dependent kernel L(z) and data, then
/// assemble the mixed norms of ℰ^s along the common snapshot times.
pub fn ensemble_run(cfg: &SimulationConfig, grid: &Grid, data: RandomData, s: usize) -> Result<EnsembleResult> {
    if let RandomData::Linear { slope } = data {
        if !(slope.abs() <= 1.0) {
            return Err(Error::validation("slope", "need |slope| <= 1 so the data scale stays nonnegative"));
        }
    }
    if s == 0 {
        return Err(Error::validation("s", "must be at least 1"));
    }
    let snapshots = run_nodes(cfg, grid, |sys, z| scaled_initial(sys, cfg, data, z))?;
    let basis = HermiteBasis::new(cfg.degree);
    let torus = Torus::new(cfg.dim, cfg.modes)?;
    let n_t = snapshots[0].len();
    if snapshots.iter().any(|v| v.len() != n_t) {
        return Err(Error::Numerical("node runs produced different snapshot counts".into()));
    }
    let mut runge_flag = false;
    let norms: Vec<MixedNorms> = (0..n_t)
        .map(|k| {
            let e: Vec<f64> = snapshots.iter().map(|v| plain_energy(&basis, &torus, &v[k], cfg.epsilon, s)).collect();
            let l2 = grid.integrate(&e);
            let sup_nodes = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sup = grid.fine_sup(&e).max(sup_nodes);
            let dz = if grid.len() >= 5 {
                let states: Vec<&KineticState> = snapshots.iter().map(|v| &v[k]).collect();
                let dg = z_derivative(grid, &states)?;
                let vals: Vec<f64> = dg.iter().map(|g| hl_sum(&torus, g, s - 1)).collect();
                grid.integrate(&vals)
            } else {
                0.0
            };
            Ok(MixedNorms { t: snapshots[0][k].t, l2, sup_nodes, sup, l2_inf: l2 + sup, dz })
        })
        .collect::<Result<_>>()?;
    for n in &norms {
        if n.sup > 1.5 * n.sup_nodes && n.sup_nodes > 0.0 {
            runge_flag = true;
        }
    }
    let config_hashes = grid.nodes.iter().map(|&z| crate::io::config_hash(&node_config(cfg, z))).collect();
    Ok(EnsembleResult { grid: grid.clone(), epsilon: cfg.epsilon, s, config_hashes, snapshots, norms, runge_flag })
}

/// Σₙ Σ_{k≤r} |n|^{2k} |ĝ(n)|².
fn hl_sum(torus: &Torus, g: &[Vec<Complex64>], r: usize) -> f64 {
    g.iter()
        .enumerate()
        .map(|(i, v)| {
            let m = torus.norm2(i);
            (0..=r).map(|k| m.powi(k as i32)).sum::<f64>() * v.iter().map(|z| z.norm_sqr()).sum::<f64>()
        })
        .sum()
}

/// Difference of two ensembles in H^ℓ_x L^{2∩∞}_z and its exponential contraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ell: usize,
    pub times: Vec<f64>,
    pub difference: Vec<f64>,
    /// Fitted amplitude s̄₀ and rate s̄.
    pub amplitude: f64,
    pub rate: f64,
    pub fit: Option<DecayFit>,
}

/// Fluid-moment bump of relative size `size` on the lowest mode.
pub fn fluid_bump(sys: &VpbSystem, size: f64) -> Vec<Vec<Complex64>> {
    let t = &sys.torus;
    let mut g = vec![vec![Complex64::new(0.0, 0.0); sys.basis.size()]; t.len()];
    if let Some(i) = t.index_of([1, 0]) {
        let j = t.neg_index(i);
        for k in 0..5 {
            let chi = sys.basis.chi(k);
            let c = Complex64::new(size * (1.0 + 0.5 * k as f64), 0.25 * size);
            for (a, x) in chi.iter().enumerate() {
                g[i][a] += c * *x;
                g[j][a] += c.conj() * *x;
            }
        }
    }
    g
}

/// Run data₁ (prepared) and data₂ = data₁ + `bump`·(fluid perturbation) at every
/// node; fit the decay of the difference past `transient`.
pub fn stability_experiment(
    cfg: &SimulationConfig,
    grid: &Grid,
    bump: f64,
    ell: usize,
    transient: f64,
) -> Result<StabilityReport> {
    let base = |sys: &VpbSystem, z: f64| scaled_initial(sys, cfg, RandomData::Deterministic, z);
    let a = run_nodes(cfg, grid, base)?;
    let b = run_nodes(cfg, grid, |sys, z| {
        let mut s = base(sys, z)?;
        for (g, h) in s.g.iter_mut().zip(fluid_bump(sys, bump)) {
            for (x, y) in g.iter_mut().zip(h) {
                *x += y;
            }
        }
        sys.refresh_potential(&mut s);
        Ok(s)
    })?;
    let torus = Torus::new(cfg.dim, cfg.modes)?;
    let n_t = a[0].len();
    let mut times = Vec::with_capacity(n_t);
    let mut difference = Vec::with_capacity(n_t);
    for k in 0..n_t {
        let d: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let diff: Vec<Vec<Complex64>> = x[k]
                    .g
                    .iter()
                    .zip(&y[k].g)
                    .map(|(p, q)| p.iter().zip(q).map(|(u, v)| u - v).collect())
                    .collect();
                hl_norm2(&torus, &diff, ell as f64)
            })
            .collect();
        times.push(a[0][k].t);
        difference.push(grid.integrate(&d) + d.iter().cloned().fold(0.0, f64::max));
    }
    let fit = if difference.iter().all(|&d| d == 0.0) { None } else { Some(fit_decay(&times, &difference, transient)?) };
    let (amplitude, rate) = fit.map(|f| (f.amplitude, f.rate)).unwrap_or((0.0, f64::INFINITY));
    Ok(StabilityReport { ell, times, difference, amplitude, rate, fit })
}

/// Node-wise ε-sweeps against node-wise NSFP references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomLimitReport {
    pub nodes: Vec<f64>,
    /// Shear viscosity and heat conductivity of the limit at every node.
    pub nu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rows: Vec<Vec<LimitRow>>,
    /// max over nodes of the integrated error, per ε of the plan.
    pub max_integrated: Vec<f64>,
}

pub fn random_fluid_limit(plan: &ExperimentPlan, grid: &Grid) -> Result<RandomLimitReport> {
    plan.validate()?;
    let basis = Arc::new(HermiteBasis::new(plan.degree));
    let model = CollisionModel::new(basis, plan.eta)?;
    let mut nu = Vec::new();
    let mut kappa = Vec::new();
    let mut rows = Vec::new();
    for &z in &grid.nodes {
        let tc = model.transport_coefficients(z)?;
        nu.push(tc.nu);
        kappa.push(tc.kappa);
        rows.push(limit_sweep(&ExperimentPlan { z, ..plan.clone() })?);
    }
    let max_integrated = (0..plan.epsilons.len())
        .map(|k| rows.iter().map(|r| r[k].integrated_err).fold(0.0, f64::max))
        .collect();
    Ok(RandomLimitReport { nodes: grid.nodes.clone(), nu, kappa, rows, max_integrated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vpb::InitialKind;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small_cfg(eps: f64, eta: f64) -> SimulationConfig {
        SimulationConfig {
            epsilon: eps,
            modes: 2,
            degree: 4,
            dt: 0.01,
            t_final: 1.0,
            eta,
            initial: InitialKind::Generic,
            amplitude: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn single_node_is_midpoint() {
        let g = build_grid(1).unwrap();
        assert_eq!((g.nodes[0], g.weights[0]), (0.0, 1.0));
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        for n in [2, 5, 9, 16] {
            let g = build_grid(n).unwrap();
            assert_abs_diff_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert!(g.weights.iter().all(|&w| w > 0.0));
            let z2: Vec<f64> = g.nodes.iter().map(|z| z * z).collect();
            assert_abs_diff_eq!(g.integrate(&z2), 1.0 / 3.0, epsilon = 1e-14);
            let p = 2 * n - 2;
            let zp: Vec<f64> = g.nodes.iter().map(|z| z.powi(p as i32)).collect();
            assert_abs_diff_eq!(g.integrate(&zp), 1.0 / (p as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn differentiation_matrix_is_exact_on_cubics() {
        let g = build_grid(7).unwrap();
        let f: Vec<f64> = g.nodes.iter().map(|z| z * z * z - 2.0 * z).collect();
        let d = g.diff_matrix() * nalgebra::DVector::from_vec(f);
        for (i, z) in g.nodes.iter().enumerate() {
            assert_abs_diff_eq!(d[i], 3.0 * z * z - 2.0, epsilon = 1e-11);
        }
        let f: Vec<f64> = g.nodes.iter().map(|z| (1.0 + z).powi(2)).collect();
        assert_abs_diff_eq!(g.fine_sup(&f), 4.0, epsilon = 1e-10);
    }

    #[test]
    fn deterministic_ensemble_without_randomness_is_constant_in_z() {
        let r = ensemble_run(&small_cfg(0.5, 0.0), &build_grid(5).unwrap(), RandomData::Deterministic, 1).unwrap();
        for v in &r.snapshots[1..] {
            assert_eq!(v.last().unwrap().g, r.snapshots[0].last().unwrap().g);
        }
        assert!(r.norms.iter().all(|n| n.dz < 1e-20));
        assert!(r.norms.iter().all(|n| n.l2 <= n.sup_nodes * (1.0 + 1e-12)));
        assert!(!r.runge_flag);
    }

    #[test]
    fn linear_data_dependence_is_recovered() {
        let cfg = SimulationConfig { t_final: 0.0, nonlinear: false, ..small_cfg(0.5, 0.0) };
        let grid = build_grid(6).unwrap();
        let r = ensemble_run(&cfg, &grid, RandomData::Linear { slope: 1.0 }, 1).unwrap();
        let states: Vec<&KineticState> = r.snapshots.iter().map(|v| &v[0]).collect();
        let dz = z_derivative(&grid, &states).unwrap();
        let base = &r.snapshots[0][0];
        let scale = 1.0 + grid.nodes[0];
        for (gd, gb) in dz[3].iter().zip(&base.g) {
            for (a, b) in gd.iter().zip(gb) {
                assert!((a - b / scale).norm() < 1e-10);
            }
        }
        assert!(z_derivative(&build_grid(4).unwrap(), &states[..4]).is_err());
    }

    #[test]
    fn identical_data_give_zero_difference() {
        let r = stability_experiment(&small_cfg(1.0, 0.2), &build_grid(3).unwrap(), 0.0, 0, 0.0).unwrap();
        assert!(r.difference.iter().all(|&d| d == 0.0));
        assert!(r.fit.is_none());
    }

    #[test]
    fn transport_coefficients_scale_with_kernel() {
        let plan = ExperimentPlan { epsilons: vec![0.5], modes: 2, degree: 4, t_final: 0.2, ..Default::default() };
        let grid = build_grid(3).unwrap();
        let r = random_fluid_limit(&plan, &grid).unwrap();
        for (k, &z) in grid.nodes.iter().enumerate() {
            let f = 1.0 + plan.eta * z;
            assert_abs_diff_eq!(r.nu[k] * f, r.nu[1] * (1.0 + plan.eta * grid.nodes[1]), epsilon = 1e-10);
            assert_abs_diff_eq!(r.kappa[k] * f, r.kappa[1] * (1.0 + plan.eta * grid.nodes[1]), epsilon = 1e-10);
        }
        assert_eq!(r.max_integrated.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn node_permutation_leaves_integrals_unchanged(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let g = build_grid(9).unwrap();
            let f: Vec<f64> = g.nodes.iter().map(|z| (3.0 * z).sin() + 2.0).collect();
            let mut idx: Vec<usize> = (0..9).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let gp = Grid { nodes: idx.iter().map(|&i| g.nodes[i]).collect(), weights: idx.iter().map(|&i| g.weights[i]).collect() };
            let fp: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
            prop_assert!((g.integrate(&f) - gp.integrate(&fp)).abs() < 1e-13);
            prop_assert!((g.fine_sup(&f) - gp.fine_sup(&fp)).abs() < 1e-10);
        }
    }
}

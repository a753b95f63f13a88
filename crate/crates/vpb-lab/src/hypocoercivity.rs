//! Structural constants of the collision model, the λ-coefficient selection,
//! the hypocoercive energy functionals 𝔈^s_ε and decay-rate fits.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionModel;
use crate::hermite::{HermiteBasis, VelocityVector};
use crate::linalg::{fit_line, gen_sym_eigenvalues, lambda_max, lambda_min, CMat};
use crate::torus::Torus;
use crate::vpb::{run, KineticState, SimulationConfig};
use crate::{Error, Result};

/// Number of log-spaced a₃ trial values in the defect-of-coercivity scan.
pub const DEFECT_GRID: usize = 50;

/// Every named constant of the energy method. Measured fields are filled by
/// [`measure_constants`], the rest by [`select_coefficients`] and
/// [`equivalence_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub c_u: f64,
    pub c_delta: f64,
    pub c_delta1: f64,
    pub c_delta2: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda1_tilde: f64,
    pub lambda2_tilde: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub lambda7: f64,
    pub c_l: f64,
    pub c_u_equiv: f64,
    pub c_d: f64,
    pub c_e: f64,
    pub c_f: f64,
}

fn grad_mats(basis: &HermiteBasis) -> [DMatrix<f64>; 3] {
    [basis.gradient_matrix(0), basis.gradient_matrix(1), basis.gradient_matrix(2)]
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest Rayleigh quotient ⟨Lg, g⟩ / ‖g‖²_Λ over Ker⊥.
pub fn coercivity_constant(model: &CollisionModel) -> Result<f64> {
    let q = model.ker_perp_basis();
    let (_, lambda) = model.split_k_lambda();
    let a = q.transpose() * &model.l * q;
    let b = q.transpose() * lambda * q;
    Ok(*gen_sym_eigenvalues(&a, &b)?.first().unwrap_or(&0.0))
}

/// Forms `(Q, R)` with ⟨∇ᵥΛh, ∇ᵥh⟩ = hᵀQh and ‖∇ᵥh‖²_Λ = hᵀRh.
fn defect_forms(model: &CollisionModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let basis = model.basis();
    let n = basis.size();
    let (_, lambda) = model.split_k_lambda();
    let mut q = DMatrix::zeros(n, n);
    let mut r = DMatrix::zeros(n, n);
    for d in grad_mats(basis) {
        q += lambda * d.transpose() * &d;
        r += d.transpose() * lambda * &d;
    }
    (sym(&q), sym(&r))
}

/// Smallest a₄ ≥ 0 with ⟨∇ᵥΛh, ∇ᵥh⟩ ≥ a₃‖∇ᵥh‖²_Λ − a₄‖h‖² for the given a₃.
pub fn defect_a4(model: &CollisionModel, a3: f64) -> f64 {
    let (q, r) = defect_forms(model);
    (-lambda_min(&(q - r * a3))).max(0.0)
}

/// Best (a₃, a₄) on a log grid of a₃ ∈ [1e-3, 1], maximizing a₃/(1 + a₄).
pub fn defect_of_coercivity(model: &CollisionModel) -> (f64, f64) {
    let (q, r) = defect_forms(model);
    let mut best = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..DEFECT_GRID {
        let a3 = 10f64.powf(-3.0 + 3.0 * i as f64 / (DEFECT_GRID - 1) as f64);
        let a4 = (-lambda_min(&(&q - &r * a3))).max(0.0);
        let score = a3 / (1.0 + a4);
        if score > best.2 {
            best = (a3, a4, score);
        }
    }
    (best.0, best.1)
}

/// Smallest C_δ with |⟨∂K h, ∂h⟩| ≤ C_δ‖h‖² + δ‖∂h‖²_Λ, taken over each single
/// velocity derivative and over the full gradient.
pub fn mixing_constant(model: &CollisionModel, delta: f64) -> f64 {
    let basis = model.basis();
    let (k, lambda) = model.split_k_lambda();
    let n = basis.size();
    let mut s_sum = DMatrix::zeros(n, n);
    let mut r_sum = DMatrix::zeros(n, n);
    let mut c: f64 = 0.0;
    let bound = |s: &DMatrix<f64>, r: &DMatrix<f64>| -> f64 {
        let rd = r * delta;
        lambda_max(&(s - &rd)).max(lambda_max(&(-s - &rd))).max(0.0)
    };
    for d in grad_mats(basis) {
        let s = sym(&(k * d.transpose() * &d));
        let r = sym(&(d.transpose() * lambda * &d));
        c = c.max(bound(&s, &r));
        s_sum += s;
        r_sum += r;
    }
    c.max(bound(&s_sum, &r_sum))
}

/// Continuity constant of Λ in the Λ-norm: sup |⟨Λh, g⟩| / (‖h‖_Λ ‖g‖_Λ).
pub fn continuity_constant(model: &CollisionModel) -> Result<f64> {
    let (_, lambda) = model.split_k_lambda();
    let vals = gen_sym_eigenvalues(lambda, lambda)?;
    Ok(vals.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Poincaré constant 1/|n_min|² of the torus.
pub fn poincare_constant(torus: &Torus) -> f64 {
    let m = (0..torus.len()).map(|i| torus.norm2(i)).filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if m.is_finite() { 1.0 / m } else { 1.0 }
}

/// Measured constants; `delta` defaults to a₃/12.
pub fn measure_constants(model: &CollisionModel, torus: &Torus, delta: Option<f64>) -> Result<EnergyLedger> {
    let a2 = coercivity_constant(model)?;
    let (a3, a4) = defect_of_coercivity(model);
    let delta = delta.unwrap_or(a3 / 12.0);
    Ok(EnergyLedger {
        a2,
        a3,
        a4,
        a5: poincare_constant(torus),
        c_u: continuity_constant(model)?,
        c_delta: mixing_constant(model, delta),
        c_delta1: 1.0 / (4.0 * delta),
        c_delta2: 1.0 / (4.0 * delta),
        delta,
        ..Default::default()
    })
}

/// One selection inequality `lhs ≥ rhs` (or `lhs = rhs` when `equality`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub equality: bool,
}

impl Inequality {
    pub fn slack(&self) -> f64 {
        if self.equality { -(self.lhs - self.rhs).abs() } else { self.lhs - self.rhs }
    }
}

/// Choose λ₁..λ₄ for `epsilon` with smallness parameter `delta` (default a₃/12)
/// and fill in the derived coefficients.
pub fn select_coefficients(ledger: &EnergyLedger, epsilon: f64, delta: Option<f64>) -> Result<EnergyLedger> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::validation("epsilon", "must lie in (0, 1]"));
    }
    let mut l = *ledger;
    let d = delta.unwrap_or(l.delta);
    if !(d > 0.0) {
        return Err(Error::validation("delta", "must be positive"));
    }
    if d >= l.a3 / 3.0 {
        return Err(Error::Infeasible(format!(
            "lambda5 <= 0: delta = {d} is not below a3/3 = {}",
            l.a3 / 3.0
        )));
    }
    if d != l.delta {
        l.delta = d;
        l.c_delta1 = 1.0 / (4.0 * d);
        l.c_delta2 = 1.0 / (4.0 * d);
    }
    let e2 = epsilon * epsilon;
    let ak = l.a4 + l.c_delta;
    l.epsilon = epsilon;
    l.lambda4 = 2.0 * d * l.a5 + 2.0 * l.a5 + d;
    let c9 = l.a5 * ak + l.c_delta1 * e2;
    l.lambda3 = 0.5 * ((0.5 * l.lambda4 - 2.0 * d) / c9).min((l.lambda4 / l.a5 - d) / (l.c_delta2 * e2));
    l.a6 = l.lambda3 * (l.a3 - 3.0 * d) / (2.0 * l.lambda4);
    l.lambda1 = e2 * (l.lambda3 * ak + 2.0 * d) + l.lambda3 * e2 + 1.0;
    l.lambda2 = (l.lambda4 + e2 * (l.lambda4 * l.c_u * l.c_u / l.a6 + 2.0 * d))
        .max(2.0 * l.lambda4 * l.lambda4 / l.lambda3);
    l.lambda1_tilde = l.lambda1 * l.a2 / e2 - l.lambda3 * ak;
    l.lambda2_tilde = l.lambda2 * l.a2 / e2 - l.lambda4 * l.c_u * l.c_u / l.a6 - l.lambda3 * l.a5 * ak;
    l.lambda5 = l.lambda3 * (l.a3 - 3.0 * d) - l.lambda4 * l.a6;
    l.lambda6 = l.lambda4 - l.lambda3 * l.c_delta1 * e2 - l.a5 * ak * l.lambda3;
    l.lambda7 = 2.0 * l.lambda4 - l.lambda3 * l.a5 * l.c_delta2 * e2;
    l.c_d = d.min(0.5 * l.lambda3 * (l.a3 - 3.0 * d));
    l.c_f = (l.a3 - 4.0 * d) / c9;
    l.c_e = (ak + l.c_delta1 * e2 + d) / l.c_d;
    for (name, v) in [
        ("lambda1_tilde", l.lambda1_tilde),
        ("lambda2_tilde", l.lambda2_tilde),
        ("lambda5", l.lambda5),
        ("lambda6", l.lambda6),
        ("lambda7", l.lambda7),
        ("lambda3", l.lambda3),
        ("a6", l.a6),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Infeasible(format!("{name} <= 0 ({v})")));
        }
    }
    if let Some(bad) = selection_inequalities(&l).into_iter().find(|q| !q.equality && q.slack() < 0.5 * d) {
        return Err(Error::Infeasible(format!("{} fails: {} < {}", bad.name, bad.lhs, bad.rhs)));
    }
    Ok(l)
}

/// The selection inequalities evaluated at the ledger's λ's and ε.
pub fn selection_inequalities(l: &EnergyLedger) -> Vec<Inequality> {
    let e2 = l.epsilon * l.epsilon;
    let d = l.delta;
    let ak = l.a4 + l.c_delta;
    let q = |name: &str, lhs: f64, rhs: f64| Inequality { name: name.into(), lhs, rhs, equality: false };
    vec![
        q("lambda4 >= 2 delta a5 + 2 a5", l.lambda4, 2.0 * d * l.a5 + 2.0 * l.a5),
        q(
            "lambda4/2 >= lambda3 (a5 (a4 + C_delta) + C_delta1 eps^2) + delta",
            0.5 * l.lambda4,
            l.lambda3 * (l.a5 * ak + l.c_delta1 * e2) + d,
        ),
        Inequality {
            name: "lambda4 a6 = lambda3 (a3 - 3 delta) / 2".into(),
            lhs: l.lambda4 * l.a6,
            rhs: 0.5 * l.lambda3 * (l.a3 - 3.0 * d),
            equality: true,
        },
        q(
            "(lambda1 - lambda3 eps^2 - 1)/eps^2 >= lambda3 (a4 + C_delta) + delta",
            (l.lambda1 - l.lambda3 * e2 - 1.0) / e2,
            l.lambda3 * ak + d,
        ),
        q(
            "(lambda2 - lambda4)/eps^2 >= lambda4 C_u^2 / a6 + delta",
            (l.lambda2 - l.lambda4) / e2,
            l.lambda4 * l.c_u * l.c_u / l.a6 + d,
        ),
        q("lambda4/a5 >= lambda3 C_delta2 eps^2 + delta", l.lambda4 / l.a5, l.lambda3 * l.c_delta2 * e2 + d),
    ]
}

/// Sign in front of ‖∇φ‖² inside the λ₃ term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldSign {
    /// λ₃ε²(‖∇ᵥg‖² − ‖∇φ‖²).
    Minus,
    /// λ₃ε²(‖∇ᵥg‖² + ‖∇φ‖²).
    Plus,
}

impl FieldSign {
    fn value(self) -> f64 {
        match self {
            FieldSign::Minus => -1.0,
            FieldSign::Plus => 1.0,
        }
    }
}

/// Parts of 𝔈^s_ε and the plain energy ℰ^s_ε.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyValue {
    pub t: f64,
    /// 𝔈_{ε,1}: the λ-weighted functional.
    pub e1: f64,
    /// 𝔈_{ε,2,1} = ε²‖∇²ᵥ∇^{s−2}g‖².
    pub e21: f64,
    /// 𝔈_{ε,2,2} = Σ_{i≥3} ε²‖∇ⁱᵥ∇^{s−i}g‖².
    pub e22: f64,
    /// 𝔈_{ε,1} for s = 1, c_e·𝔈_{ε,1} + c_f·𝔈_{ε,2,2} + 𝔈_{ε,2,1} otherwise.
    pub total: f64,
    /// `total` with the opposite field sign.
    pub total_plus: f64,
    /// ℰ^s_ε = ‖(g, ∇φ)‖²_{H^s} + ε²‖∇ᵥg‖²_{H^{s−1}}.
    pub plain: f64,
}

/// Per-mode geometry shared by the evaluation and the matrix forms.
struct ModeWeights {
    /// Σ_{k<s} |n|^{2k}.
    w_low: f64,
    /// Σ_{k≤s} |n|^{2k}.
    w_full: f64,
    m: f64,
    n: [f64; 3],
}

fn mode_weights(torus: &Torus, i: usize, s: usize) -> ModeWeights {
    let m = torus.norm2(i);
    let w_low = (0..s).map(|k| m.powi(k as i32)).sum();
    let w_full = (0..=s).map(|k| m.powi(k as i32)).sum();
    ModeWeights { w_low, w_full, m, n: torus.wavevector(i) }
}

fn velocity_weighted(basis: &HermiteBasis, g: &[Complex64], order: usize) -> f64 {
    g.iter().enumerate().map(|(a, z)| basis.derivative_weight(a, order) * z.norm_sqr()).sum()
}

/// Re Σᵢ ⟨i nᵢ g, ∂ᵥᵢ g⟩.
fn cross_term(basis: &HermiteBasis, g: &[Complex64], n: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for (axis, &ni) in n.iter().enumerate() {
        if ni == 0.0 {
            continue;
        }
        for &(from, to, c) in basis.lowering(axis) {
            // ⟨i nᵢ g, ∂g⟩ picks g_to · conj(c·g_from)
            acc += (Complex64::new(0.0, ni) * g[to] * (g[from] * c).conj()).re;
        }
    }
    acc
}

/// Evaluate 𝔈^s_ε on a state with the ledger's λ's.
pub fn energy_functional(
    basis: &HermiteBasis,
    torus: &Torus,
    state: &KineticState,
    ledger: &EnergyLedger,
    s: usize,
) -> Result<EnergyValue> {
    if s == 0 || s > 4 {
        return Err(Error::validation("s", "energy functionals are defined for 1 <= s <= 4"));
    }
    let e2 = ledger.epsilon * ledger.epsilon;
    let mut v = EnergyValue { t: state.t, ..Default::default() };
    let mut field_part = 0.0;
    for (i, g) in state.g.iter().enumerate() {
        let w = mode_weights(torus, i, s);
        let g2: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        // m|φ|² = |ρ|²/m
        let f2 = if w.m > 0.0 { g[0].norm_sqr() / w.m } else { 0.0 };
        let dv = velocity_weighted(basis, g, 1);
        let cross = cross_term(basis, g, w.n);
        v.e1 += ledger.lambda1 * w.w_low * (g2 + f2)
            + ledger.lambda2 * w.w_low * w.m * (g2 + f2)
            + ledger.lambda3 * e2 * w.w_low * dv
            + 2.0 * ledger.lambda4 * ledger.epsilon * w.w_low * cross;
        field_part += ledger.lambda3 * e2 * w.w_low * f2;
        v.plain += w.w_full * (g2 + f2) + e2 * w.w_low * dv;
        if s >= 2 {
            v.e21 += e2 * w.m.powi(s as i32 - 2) * velocity_weighted(basis, g, 2);
            for order in 3..=s {
                v.e22 += e2 * w.m.powi((s - order) as i32) * velocity_weighted(basis, g, order);
            }
        }
    }
    let combine = |e1: f64| if s == 1 { e1 } else { ledger.c_e * e1 + ledger.c_f * v.e22 + v.e21 };
    let e1_minus = v.e1 - field_part;
    let e1_plus = v.e1 + field_part;
    v.e1 = e1_minus;
    v.total = combine(e1_minus);
    v.total_plus = combine(e1_plus);
    Ok(v)
}

/// ℰ^s_ε = ‖(g, ∇φ)‖²_{H^s} + ε²‖∇ᵥg‖²_{H^{s−1}}.
pub fn plain_energy(basis: &HermiteBasis, torus: &Torus, state: &KineticState, epsilon: f64, s: usize) -> f64 {
    let e2 = epsilon * epsilon;
    state
        .g
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = mode_weights(torus, i, s);
            let g2: f64 = g.iter().map(|z| z.norm_sqr()).sum();
            let f2 = if w.m > 0.0 { g[0].norm_sqr() / w.m } else { 0.0 };
            w.w_full * (g2 + f2) + e2 * w.w_low * velocity_weighted(basis, g, 1)
        })
        .sum()
}

/// Hermitian matrix of `total` at mode `i` (with the given field sign) and the
/// diagonal of ℰ^s at that mode.
pub fn mode_forms(
    basis: &HermiteBasis,
    torus: &Torus,
    i: usize,
    ledger: &EnergyLedger,
    s: usize,
    sign: FieldSign,
) -> (CMat, Vec<f64>) {
    let nb = basis.size();
    let w = mode_weights(torus, i, s);
    let e2 = ledger.epsilon * ledger.epsilon;
    let mut a = CMat::zeros(nb, nb);
    let mut b = vec![0.0; nb];
    let scale = if s == 1 { 1.0 } else { ledger.c_e };
    for (idx, bi) in b.iter_mut().enumerate() {
        let dv = basis.derivative_weight(idx, 1);
        let mut diag = (ledger.lambda1 + ledger.lambda2 * w.m) * w.w_low + ledger.lambda3 * e2 * w.w_low * dv;
        diag *= scale;
        if s >= 2 {
            diag += e2 * w.m.powi(s as i32 - 2) * basis.derivative_weight(idx, 2);
            for order in 3..=s {
                diag += ledger.c_f * e2 * w.m.powi((s - order) as i32) * basis.derivative_weight(idx, order);
            }
        }
        a[(idx, idx)] = Complex64::new(diag, 0.0);
        *bi = w.w_full + e2 * w.w_low * dv;
    }
    if w.m > 0.0 {
        let f = (ledger.lambda1 + ledger.lambda2 * w.m + sign.value() * ledger.lambda3 * e2) * w.w_low / w.m;
        a[(0, 0)] += Complex64::new(scale * f, 0.0);
        b[0] += w.w_full / w.m;
    }
    let c = 2.0 * ledger.lambda4 * ledger.epsilon * w.w_low * scale;
    for (axis, &ni) in w.n.iter().enumerate() {
        if ni == 0.0 {
            continue;
        }
        for &(from, to, k) in basis.lowering(axis) {
            // Re(i nᵢ g_to conj(k g_from)) as a Hermitian form
            let h = Complex64::new(0.0, 0.5 * c * ni * k);
            a[(from, to)] += h;
            a[(to, from)] -= h;
        }
    }
    (a, b)
}

/// Extreme generalized eigenvalues of a Hermitian form against a positive diagonal.
fn pencil_range(a: &CMat, b: &[f64]) -> (f64, f64) {
    let n = b.len();
    let scaled = CMat::from_fn(n, n, |r, c| a[(r, c)] / (b[r] * b[c]).sqrt());
    let h = (&scaled + scaled.adjoint()) * Complex64::new(0.5, 0.0);
    let ev = nalgebra::linalg::SymmetricEigen::new(h).eigenvalues;
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Equivalence constants `c_l·ℰ^s ≤ 𝔈^s ≤ c_u·ℰ^s` over every mode of the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub sign: FieldSign,
    pub c_l: f64,
    pub c_u: f64,
}

impl Equivalence {
    pub fn holds(&self) -> bool {
        self.c_l > 0.0 && self.c_l <= self.c_u
    }
}

pub fn equivalence(basis: &HermiteBasis, torus: &Torus, ledger: &EnergyLedger, s: usize, sign: FieldSign) -> Equivalence {
    let mut c_l = f64::INFINITY;
    let mut c_u = f64::NEG_INFINITY;
    for i in (0..torus.len()).filter(|&i| torus.is_canonical(i)) {
        let (a, b) = mode_forms(basis, torus, i, ledger, s, sign);
        let (lo, hi) = pencil_range(&a, &b);
        c_l = c_l.min(lo);
        c_u = c_u.max(hi);
    }
    Equivalence { sign, c_l, c_u }
}

/// Both signed variants; stores the `Minus` pair in the ledger.
pub fn equivalence_constants(
    basis: &HermiteBasis,
    torus: &Torus,
    ledger: &mut EnergyLedger,
    s: usize,
) -> [Equivalence; 2] {
    let minus = equivalence(basis, torus, ledger, s, FieldSign::Minus);
    let plus = equivalence(basis, torus, ledger, s, FieldSign::Plus);
    ledger.c_l = minus.c_l;
    ledger.c_u_equiv = minus.c_u;
    [minus, plus]
}

/// Log-linear fit of a decaying series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub residual: f64,
    /// Samples used (those with t ≥ transient).
    pub samples: usize,
    /// False when the fitted tail increases somewhere.
    pub monotone_tail: bool,
}

/// Fit `value ≈ amplitude·exp(−rate·t)` on samples with `t ≥ transient`.
pub fn fit_decay(t: &[f64], values: &[f64], transient: f64) -> Result<DecayFit> {
    if t.len() != values.len() {
        return Err(Error::validation("series", "time and value lengths differ"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) =
        t.iter().zip(values).filter(|(a, v)| **a >= transient && **v > 0.0).map(|(a, v)| (*a, v.ln())).unzip();
    if x.len() < 10 {
        return Err(Error::validation("series", format!("need at least 10 positive samples past the transient, got {}", x.len())));
    }
    let (slope, intercept, residual) = fit_line(&x, &y);
    let monotone_tail = y.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(DecayFit { rate: -slope, amplitude: intercept.exp(), residual, samples: x.len(), monotone_tail })
}

/// Energy series of a linear run with its decay fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayExperiment {
    pub epsilon: f64,
    pub ledger: EnergyLedger,
    pub series: Vec<EnergyValue>,
    pub fit: DecayFit,
}

/// Run `cfg` (forced linear), evaluate 𝔈^s along the snapshots and fit the decay
/// past `transient`.
pub fn decay_experiment(cfg: &SimulationConfig, s: usize, transient: f64) -> Result<DecayExperiment> {
    let mut cfg = cfg.clone();
    cfg.nonlinear = false;
    let traj = run(&cfg)?;
    let basis = std::sync::Arc::new(HermiteBasis::new(cfg.degree));
    let model = CollisionModel::new(basis.clone(), cfg.eta)?;
    let torus = Torus::new(cfg.dim, cfg.modes)?;
    let measured = measure_constants(&model, &torus, None)?;
    let mut ledger = select_coefficients(&measured, cfg.epsilon, None)?;
    equivalence_constants(&basis, &torus, &mut ledger, s);
    let series = traj
        .snapshots
        .iter()
        .map(|st| energy_functional(&basis, &torus, st, &ledger, s))
        .collect::<Result<Vec<_>>>()?;
    let t: Vec<f64> = series.iter().map(|e| e.t).collect();
    let v: Vec<f64> = series.iter().map(|e| e.total).collect();
    let fit = fit_decay(&t, &v, transient)?;
    Ok(DecayExperiment { epsilon: cfg.epsilon, ledger, series, fit })
}

/// Random checks of the mixing bound with a measured C_δ: largest value of
/// `|⟨∂K h, ∂h⟩| − C_δ‖h‖² − δ‖∂h‖²_Λ`, relative to ‖h‖², over single derivatives.
pub fn mixing_violation(model: &CollisionModel, delta: f64, c_delta: f64, samples: usize, seed: u64) -> f64 {
    let basis = model.basis();
    let (k, _) = model.split_k_lambda();
    let kc = crate::linalg::complexify(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let h = random_vector(basis, &mut rng);
        let h2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        for axis in 0..3 {
            let dh = basis.gradient_v(&h, axis);
            let dkh = basis.gradient_v(&(&kc * &h), axis);
            let lhs = dh.iter().zip(dkh.iter()).map(|(a, b)| b * a.conj()).sum::<Complex64>().norm();
            let ln = basis.lambda_norm(&dh);
            worst = worst.max((lhs - c_delta * h2 - delta * ln * ln) / h2);
        }
    }
    worst
}

/// Measured bilinear bound: the largest ratio
/// |⟨Γ(g,h), f⟩| / ((‖g‖‖h‖_Λ + ‖g‖_Λ‖h‖)·‖f^⊥‖_Λ) and the largest fluid
/// component of Γ(g,h) over random triples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilinearReport {
    pub constant: f64,
    pub max_kernel_component: f64,
}

pub fn bilinear_bound(model: &CollisionModel, samples: usize, seed: u64) -> Result<BilinearReport> {
    let basis = model.basis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = crate::linalg::complexify(&model.projection.pi);
    let norm = |x: &VelocityVector| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut report = BilinearReport { constant: 0.0, max_kernel_component: 0.0 };
    for _ in 0..samples {
        let g = random_vector(basis, &mut rng);
        let h = random_vector(basis, &mut rng);
        let f = random_vector(basis, &mut rng);
        let z = rng.random_range(-1.0..1.0);
        let gam = model.apply_gamma(&g, &h, z)?;
        let pair = norm(&g) * basis.lambda_norm(&h) + basis.lambda_norm(&g) * norm(&h);
        let denom = pair * basis.lambda_norm(&model.perp(&f));
        let val = basis.weighted_inner(&gam, &f)?.norm();
        report.constant = report.constant.max(val / denom);
        report.max_kernel_component = report.max_kernel_component.max(norm(&(&pi * &gam)) / norm(&gam).max(1e-300));
    }
    Ok(report)
}

fn random_vector(basis: &HermiteBasis, rng: &mut ChaCha8Rng) -> VelocityVector {
    VelocityVector::from_iterator(
        basis.size(),
        (0..basis.size()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
    )
}

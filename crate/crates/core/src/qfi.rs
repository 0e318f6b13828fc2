//! Quantum Fisher information and the Cramér-Rao bound.
//!
//! The phase enters as `U(phi) = exp(i phi G)` with `G` the number operator
//! of the phase mode. Loss commutes with `U`, so the lossy state still
//! satisfies `d rho / d phi = i [G, rho]` and no numerical derivative is
//! needed.
//!
//! Four routes are provided and cross-checked in tests:
//!
//! * full eigendecomposition of a dense `rho` ([`qfi_mixed`]);
//! * eigendecomposition of the support of a low-rank ensemble ([`qfi_ensemble`]);
//! * `4 Var(G)` for pure states ([`qfi_pure`]);
//! * the closed form for balanced two-branch states ([`qfi_analytic_eq3`]);
//! * the 2x2 problem in the orthogonal cat basis for lossy unbalanced cats
//!   ([`qfi_two_branch`]).

use nalgebra::Matrix2;

use crate::channels::{LossMode, PureEnsemble};
use crate::error::{Error, Result};
use crate::fock::{eigh, number_operator_on, CVector, DensityOperator, FockVector, Operator, C64};
use crate::states::{build_state, norm_cat, norm_ecs, norm_ucs, solve_alpha_of_a, StateSpec};

/// Eigenvalue floor: pairs with `lambda_i + lambda_j <= EPS_DEFAULT` are skipped.
pub const EPS_DEFAULT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfiMethod {
    NumericEigh,
    LowRankEigh,
    PureVariance,
    AnalyticEq3,
    CatBasis2x2,
}

impl QfiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            QfiMethod::NumericEigh => "numeric-eigh",
            QfiMethod::LowRankEigh => "low-rank-eigh",
            QfiMethod::PureVariance => "pure-variance",
            QfiMethod::AnalyticEq3 => "analytic-eq3",
            QfiMethod::CatBasis2x2 => "cat-basis-2x2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfiResult {
    pub f_q: f64,
    pub method: QfiMethod,
    pub eps_used: f64,
}

impl QfiResult {
    fn new(f_q: f64, method: QfiMethod, eps_used: f64) -> Self {
        // round-off can leave a tiny negative value for zero-information states
        let f_q = if f_q < 0.0 && f_q > -1e-9 { 0.0 } else { f_q };
        QfiResult { f_q, method, eps_used }
    }
}

/// Which two-branch family [`qfi_analytic_eq3`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancedKind {
    Ecs,
    Cat,
}

/// `4 (<G^2> - <G>^2)` for a normalized pure state.
pub fn qfi_pure(state: &FockVector, generator: &Operator) -> Result<QfiResult> {
    state.check_normalized()?;
    if !generator.is_hermitian() {
        return Err(Error::InvalidArgument("generator must be Hermitian".into()));
    }
    let g_psi = generator.apply(state)?;
    let mean = state.inner(&g_psi)?.re;
    let second = g_psi.norm_sqr();
    Ok(QfiResult::new(
        4.0 * (second - mean * mean),
        QfiMethod::PureVariance,
        0.0,
    ))
}

/// `F = 4 alpha^2 N^2 (1 + alpha^2 - alpha^2 N^2)` with `N = N_e` or `N_c`.
pub fn qfi_analytic_eq3(alpha: f64, kind: BalancedKind) -> QfiResult {
    let n2 = match kind {
        BalancedKind::Ecs => norm_ecs(alpha),
        BalancedKind::Cat => norm_cat(alpha),
    }
    .powi(2);
    let x = alpha * alpha;
    QfiResult::new(4.0 * x * n2 * (1.0 + x - x * n2), QfiMethod::AnalyticEq3, 0.0)
}

/// Mixed-state QFI from the full eigendecomposition of `rho`:
///
/// `F = sum_{ij} 2 |<i| d rho |j>|^2 / (lambda_i + lambda_j)` over pairs with
/// `lambda_i + lambda_j > eps`, where `<i| d rho |j> = i (lambda_j - lambda_i) <i|G|j>`.
pub fn qfi_mixed(rho: &DensityOperator, generator: &Operator, eps: f64) -> Result<QfiResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue floor {eps} must be positive"
        )));
    }
    if generator.cutoff() != rho.cutoff() || generator.modes() != rho.modes() {
        return Err(Error::DimensionMismatch("generator/density space mismatch".into()));
    }
    let tr = rho.trace() + rho.tail_loss();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("trace {tr} is not 1")));
    }
    let eig = eigh(rho.matrix())?;
    let v = &eig.eigenvectors;
    let g_v = match generator.diagonal() {
        Some(d) => {
            let mut m = v.clone();
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row *= d[i];
            }
            m
        }
        None => generator.to_dense() * v,
    };
    let g = v.adjoint() * g_v;
    let lambda = &eig.eigenvalues;
    let n = lambda.len();
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = lambda[i] + lambda[j];
            if s <= eps {
                continue;
            }
            let d = lambda[j] - lambda[i];
            f += 2.0 * d * d * g[(i, j)].norm_sqr() / s;
        }
    }
    Ok(QfiResult::new(f, QfiMethod::NumericEigh, eps))
}

/// QFI from the support of `rho` only.
///
/// With `rho = sum_{k in S} lambda_k |k><k|`,
///
/// ```text
/// F = sum_{k,l in S} 2 (lambda_k - lambda_l)^2 / (lambda_k + lambda_l) |G_kl|^2
///   + 4 sum_{k in S} lambda_k (<k|G^2|k> - sum_{l in S} |G_kl|^2)
/// ```
///
/// where the second line collects every pair with one index in the kernel.
fn qfi_from_support(lambda: &[f64], g: impl Fn(usize, usize) -> C64, g2: impl Fn(usize) -> f64, eps: f64) -> f64 {
    let n = lambda.len();
    let mut f = 0.0;
    for k in 0..n {
        let mut in_support = 0.0;
        for l in 0..n {
            let gkl = g(k, l).norm_sqr();
            in_support += gkl;
            let s = lambda[k] + lambda[l];
            if s > eps {
                let d = lambda[k] - lambda[l];
                f += 2.0 * d * d * gkl / s;
            }
        }
        f += 4.0 * lambda[k] * (g2(k) - in_support);
    }
    f
}

/// QFI of `rho = sum_i |v_i><v_i|` for a diagonal generator, from the Gram
/// matrix of the ensemble. Exact up to eigenvalues below `eps`, which are
/// treated as kernel.
pub fn qfi_ensemble(ens: &PureEnsemble, generator: &Operator, eps: f64) -> Result<QfiResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue floor {eps} must be positive"
        )));
    }
    if generator.cutoff() != ens.cutoff() || generator.modes() != ens.modes() {
        return Err(Error::DimensionMismatch("generator/ensemble space mismatch".into()));
    }
    let tr = ens.trace() + ens.dropped();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("ensemble trace {tr} is not 1")));
    }
    let (lambda, vecs) = ens.support(eps)?;
    let g_vecs: Vec<CVector> = vecs.iter().map(|v| generator.apply_vec(v)).collect();
    let n = lambda.len();
    let mut g = vec![C64::new(0.0, 0.0); n * n];
    for k in 0..n {
        for l in 0..n {
            g[k * n + l] = vecs[k].dotc(&g_vecs[l]);
        }
    }
    let f = qfi_from_support(&lambda, |k, l| g[k * n + l], |k| g_vecs[k].norm_squared(), eps);
    Ok(QfiResult::new(f, QfiMethod::LowRankEigh, eps))
}

/// Eigensystem of a lossy two-branch state `N^2[|g><g| + a^2|0><0| + a k (|g><0| + h.c.)]`
/// in the orthonormal cat basis `|Psi_+->` = `N_+-(|g> +- |0>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatBasisEigensystem {
    /// Descending.
    pub eigenvalues: [f64; 2],
    /// Eigenvector `k` has coordinates `eigenvectors[k] = [c_plus, c_minus]`.
    pub eigenvectors: [[f64; 2]; 2],
    pub norm_plus: f64,
    pub norm_minus: f64,
    /// `alpha(a) sqrt(eta)`
    pub alpha_eta: f64,
    pub phi: f64,
}

/// Two-branch eigensystem for an explicit amplitude `alpha`.
pub fn two_branch_eigensystem(alpha: f64, a: f64, eta: f64, phi: f64) -> Result<CatBasisEigensystem> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("a={a}, eta={eta} must lie in [0, 1]")));
    }
    let alpha_eta = alpha * eta.sqrt();
    let half = 0.5 * alpha_eta * alpha_eta;
    // 2 - 2c with c = <0|g> = e^{-|g|^2/2}
    let two_minus = -2.0 * (-half).exp_m1();
    if !(two_minus > 0.0) {
        return Err(Error::DegenerateBasis);
    }
    let c = (-half).exp();
    let norm_plus = 1.0 / (2.0 + 2.0 * c).sqrt();
    let norm_minus = 1.0 / two_minus.sqrt();
    // |g> and |0> in the (+, -) basis; both coordinate pairs are real
    let gv = [0.5 / norm_plus, 0.5 / norm_minus];
    let zv = [0.5 / norm_plus, -0.5 / norm_minus];
    let n2 = norm_ucs(a, alpha).powi(2);
    let kappa = a * (-0.5 * alpha * alpha * (1.0 - eta)).exp();
    let entry =
        |s: usize, t: usize| n2 * (gv[s] * gv[t] + a * a * zv[s] * zv[t] + kappa * (gv[s] * zv[t] + zv[s] * gv[t]));
    let m = Matrix2::new(entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1));
    let (eigenvalues, eigenvectors) = sym2_eigen(&m);
    Ok(CatBasisEigensystem {
        eigenvalues,
        eigenvectors,
        norm_plus,
        norm_minus,
        alpha_eta,
        phi,
    })
}

/// Eigensystem of the lossy unbalanced cat state with photon budget `n_phi`.
pub fn ucs_lossy_eigensystem(a: f64, n_phi: f64, eta: f64, phi: f64) -> Result<CatBasisEigensystem> {
    let alpha = solve_alpha_of_a(a, n_phi)?;
    two_branch_eigensystem(alpha, a, eta, phi)
}

fn sym2_eigen(m: &Matrix2<f64>) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = mean + r;
    let l2 = mean - r;
    // eigenvector of l1: pick the better-conditioned of (b, l1 - a) and (l1 - c, b)
    let (x, y) = if (l1 - a).abs() + b.abs() >= (l1 - c).abs() + b.abs() {
        (b, l1 - a)
    } else {
        (l1 - c, b)
    };
    let (x, y) = if x == 0.0 && y == 0.0 { (1.0, 0.0) } else { (x, y) };
    let n = x.hypot(y);
    let v1 = [x / n, y / n];
    let v2 = [-v1[1], v1[0]];
    ([l1, l2], [v1, v2])
}

impl CatBasisEigensystem {
    /// `<Psi_s| n |Psi_t> = N_s N_t |g|^2` and `<Psi_s| n^2 |Psi_t> = N_s N_t (|g|^4 + |g|^2)`.
    pub fn qfi(&self, eps: f64) -> QfiResult {
        let norms = [self.norm_plus, self.norm_minus];
        let g2 = self.alpha_eta * self.alpha_eta;
        let proj = |k: usize| {
            let v = self.eigenvectors[k];
            norms[0] * v[0] + norms[1] * v[1]
        };
        let p = [proj(0), proj(1)];
        let f = qfi_from_support(
            &self.eigenvalues,
            |k, l| C64::new(p[k] * p[l] * g2, 0.0),
            |k| p[k] * p[k] * (g2 * g2 + g2),
            eps,
        );
        QfiResult::new(f, QfiMethod::CatBasis2x2, eps)
    }

    /// Eigenvector `k` as a Fock-space vector.
    pub fn eigenvector_fock(&self, k: usize, cutoff: usize) -> Result<FockVector> {
        let g = crate::fock::coherent_vector(C64::from_polar(self.alpha_eta, self.phi), cutoff)?;
        let vac = FockVector::vacuum(cutoff);
        let [cp, cm] = self.eigenvectors[k];
        let coef_g = cp * self.norm_plus + cm * self.norm_minus;
        let coef_0 = cp * self.norm_plus - cm * self.norm_minus;
        g.scale(C64::new(coef_g, 0.0)).add(&vac.scale(C64::new(coef_0, 0.0)))
    }
}

/// QFI of a lossy two-branch state `N(|alpha> + a|0>)` via the cat basis.
pub fn qfi_two_branch(alpha: f64, a: f64, eta: f64, eps: f64) -> Result<QfiResult> {
    Ok(two_branch_eigensystem(alpha, a, eta, 0.0)?.qfi(eps))
}

/// QFI of the lossy unbalanced cat state via the cat basis.
pub fn qfi_ucs_cat_basis(a: f64, n_phi: f64, eta: f64, eps: f64) -> Result<QfiResult> {
    qfi_two_branch(solve_alpha_of_a(a, n_phi)?, a, eta, eps)
}

/// `1 / sqrt(m F)`.
pub fn crb(f_q: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("repetitions {m} must be positive")));
    }
    if f_q < 0.0 || f_q.is_nan() {
        return Err(Error::InvalidArgument(format!("Fisher information {f_q} is negative")));
    }
    if f_q == 0.0 {
        return Err(Error::ZeroInformation);
    }
    Ok(1.0 / (m * f_q).sqrt())
}

/// How [`lossy_qfi`] evaluates a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QfiRoute {
    /// Cat basis for two-branch single-mode families, low-rank numerics otherwise.
    #[default]
    Auto,
    /// Always the Fock-space pipeline.
    Numeric,
}

/// Per-state QFI after phase shift and loss `eta`.
///
/// The numeric route builds the state on `cutoff` (or the family default),
/// applies the Kraus channel to the arms picked by `loss_mode`, and evaluates
/// the QFI on the support of the result with the phase-mode number operator
/// as generator.
pub fn lossy_qfi(
    spec: &StateSpec,
    eta: f64,
    loss_mode: LossMode,
    route: QfiRoute,
    cutoff: Option<usize>,
) -> Result<QfiResult> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("transmissivity {eta} outside [0, 1]")));
    }
    if route == QfiRoute::Auto && cutoff.is_none() {
        if let Some((alpha, a)) = spec.two_branch()? {
            match qfi_two_branch(alpha, a, eta, EPS_DEFAULT) {
                Ok(r) => return Ok(r),
                Err(Error::DegenerateBasis) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let cutoff = match cutoff {
        Some(c) => c,
        None => spec.default_cutoff()?,
    };
    let psi = build_state(spec, cutoff)?;
    let ens = PureEnsemble::from_pure(&psi).apply_loss(eta, loss_mode)?;
    let g = number_operator_on(1, cutoff, spec.modes())?;
    qfi_ensemble(&ens, &g, EPS_DEFAULT)
}

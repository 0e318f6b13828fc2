//! Photon loss.
//!
//! Loss is a beam splitter of transmissivity `eta` whose second input is the
//! vacuum, followed by a trace over the reflected (environment) port. In
//! operator-sum form the channel has Kraus operators
//!
//! ```text
//! K_k = sum_n sqrt(C(n,k) eta^(n-k) (1-eta)^k) |n-k><n|,   k = 0..=cutoff
//! ```
//!
//! which lose no trace on a truncated space because they never raise the
//! photon number.

use crate::error::{Error, Result};
use crate::fock::{
    coherent_vector, eigh, ln_factorials, max_abs_diff, CMatrix, CVector, DensityOperator, FockVector, Modes, C64,
};
use crate::states::{norm_ucs, solve_alpha_of_a};

/// Vectors whose squared norm falls below this are dropped from an ensemble.
const DROP_NORM_SQR: f64 = 1e-32;

/// Which arms of a two-mode state suffer loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Independent loss of equal transmissivity on both modes.
    #[default]
    BothArms,
    /// Loss only on mode 1, the phase-shifted mode.
    PhaseArmOnly,
}

impl LossMode {
    pub fn modes_hit(self, modes: Modes) -> &'static [usize] {
        match (modes, self) {
            (Modes::One, _) | (Modes::Two, LossMode::PhaseArmOnly) => &[1],
            (Modes::Two, LossMode::BothArms) => &[1, 2],
        }
    }
}

/// Single-mode loss channel. Kraus weights are stored as a table and the
/// matrices are materialized on request.
#[derive(Debug, Clone)]
pub struct LossChannel {
    eta: f64,
    cutoff: usize,
    // weights[k][n - k] = sqrt(C(n,k) eta^(n-k) mu^k)
    weights: Vec<Vec<f64>>,
}

/// Builds the Kraus representation of loss with transmissivity `eta`.
pub fn loss_kraus(eta: f64, cutoff: usize) -> Result<LossChannel> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("transmissivity {eta} outside [0, 1]")));
    }
    let mu = 1.0 - eta;
    let lf = ln_factorials(cutoff);
    let weights = (0..=cutoff)
        .map(|k| {
            (k..=cutoff)
                .map(|n| {
                    let kept = n - k;
                    if (kept > 0 && eta == 0.0) || (k > 0 && mu == 0.0) {
                        return 0.0;
                    }
                    let mut ln_w = lf[n] - lf[k] - lf[kept];
                    if kept > 0 {
                        ln_w += kept as f64 * eta.ln();
                    }
                    if k > 0 {
                        ln_w += k as f64 * mu.ln();
                    }
                    (0.5 * ln_w).exp()
                })
                .collect()
        })
        .collect();
    Ok(LossChannel { eta, cutoff, weights })
}

impl LossChannel {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mu(&self) -> f64 {
        1.0 - self.eta
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Number of Kraus operators, `cutoff + 1`.
    pub fn len(&self) -> usize {
        self.cutoff + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `<n-k|K_k|n>`; zero when `n < k`.
    pub fn weight(&self, k: usize, n: usize) -> f64 {
        if n < k || n > self.cutoff {
            0.0
        } else {
            self.weights[k][n - k]
        }
    }

    pub fn kraus_matrix(&self, k: usize) -> CMatrix {
        let d = self.cutoff + 1;
        let mut m = CMatrix::zeros(d, d);
        for n in k..=self.cutoff {
            m[(n - k, n)] = C64::new(self.weights[k][n - k], 0.0);
        }
        m
    }

    pub fn kraus(&self) -> Vec<CMatrix> {
        (0..=self.cutoff).map(|k| self.kraus_matrix(k)).collect()
    }

    /// `max |sum_k K_k^dagger K_k - I|`.
    pub fn completeness_error(&self) -> f64 {
        // sum_k K_k^dagger K_k is diagonal with entries sum_k weight(k, n)^2
        (0..=self.cutoff)
            .map(|n| {
                let s: f64 = (0..=n).map(|k| self.weight(k, n).powi(2)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Applies `K_k` to `mode` of a flattened state vector.
    pub fn apply_kraus_vec(&self, k: usize, v: &CVector, modes: Modes, mode: usize) -> CVector {
        let d = self.cutoff + 1;
        let mut out = CVector::zeros(v.len());
        match (modes, mode) {
            (Modes::One, _) => {
                for n in k..d {
                    out[n - k] = v[n] * self.weights[k][n - k];
                }
            }
            (Modes::Two, 1) => {
                for n in k..d {
                    let w = self.weights[k][n - k];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        out[(n - k) * d + j] = v[n * d + j] * w;
                    }
                }
            }
            (Modes::Two, _) => {
                for i in 0..d {
                    for n in k..d {
                        out[i * d + n - k] = v[i * d + n] * self.weights[k][n - k];
                    }
                }
            }
        }
        out
    }
}

/// `sum_k (K_k (x) I) rho (K_k (x) I)^dagger` with the channel on `mode`.
pub fn apply_channel(rho: &DensityOperator, ch: &LossChannel, mode: usize) -> Result<DensityOperator> {
    if rho.cutoff() != ch.cutoff {
        return Err(Error::DimensionMismatch(format!(
            "density cutoff {} vs channel cutoff {}",
            rho.cutoff(),
            ch.cutoff
        )));
    }
    let modes = rho.modes();
    match (modes, mode) {
        (Modes::One, 1) | (Modes::Two, 1 | 2) => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "mode {mode} out of range for {} mode(s)",
                modes.count()
            )))
        }
    }
    let d = ch.cutoff + 1;
    let m = rho.matrix();
    let dim = m.nrows();
    let mut out = CMatrix::zeros(dim, dim);
    // split a flat index into (channel-mode index, spectator index)
    let split = |idx: usize| -> (usize, usize) {
        match (modes, mode) {
            (Modes::One, _) => (idx, 0),
            (Modes::Two, 1) => (idx / d, idx % d),
            _ => (idx % d, idx / d),
        }
    };
    let join = |n: usize, s: usize| -> usize {
        match (modes, mode) {
            (Modes::One, _) => n,
            (Modes::Two, 1) => n * d + s,
            _ => s * d + n,
        }
    };
    for col in 0..dim {
        let (b, sb) = split(col);
        for row in 0..dim {
            let (a, sa) = split(row);
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..d {
                if a + k >= d || b + k >= d {
                    break;
                }
                let w = ch.weights[k][a] * ch.weights[k][b];
                if w != 0.0 {
                    acc += m[(join(a + k, sa), join(b + k, sb))] * w;
                }
            }
            out[(row, col)] = acc;
        }
    }
    Ok(DensityOperator::new_unchecked(out, rho.cutoff(), modes)?.with_tail_loss(rho.tail_loss()))
}

/// Loss on every arm selected by `loss_mode`.
pub fn apply_loss(rho: &DensityOperator, eta: f64, loss_mode: LossMode) -> Result<DensityOperator> {
    let ch = loss_kraus(eta, rho.cutoff())?;
    let mut out = rho.clone();
    for &mode in loss_mode.modes_hit(rho.modes()) {
        out = apply_channel(&out, &ch, mode)?;
    }
    Ok(out)
}

/// A mixed state kept as `rho = sum_i |v_i><v_i|` with unnormalized vectors.
///
/// Loss maps a pure state to a handful of such vectors (one per Kraus
/// operator that does not annihilate it), so for the probe states used here
/// the ensemble is far smaller than the full density matrix.
#[derive(Debug, Clone)]
pub struct PureEnsemble {
    vectors: Vec<CVector>,
    cutoff: usize,
    modes: Modes,
    dropped: f64,
}

impl PureEnsemble {
    pub fn from_pure(psi: &FockVector) -> Self {
        PureEnsemble {
            vectors: vec![psi.amplitudes().clone()],
            cutoff: psi.cutoff(),
            modes: psi.modes(),
            dropped: 0.0,
        }
    }

    pub fn vectors(&self) -> &[CVector] {
        &self.vectors
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> Modes {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.modes.dim(self.cutoff)
    }

    /// Trace discarded by dropping negligible vectors.
    pub fn dropped(&self) -> f64 {
        self.dropped
    }

    pub fn trace(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn apply_channel(&self, ch: &LossChannel, mode: usize) -> Result<PureEnsemble> {
        if ch.cutoff != self.cutoff {
            return Err(Error::DimensionMismatch("ensemble/channel cutoff mismatch".into()));
        }
        if mode == 0 || mode > self.modes.count() {
            return Err(Error::InvalidArgument(format!("mode {mode} out of range")));
        }
        let mut vectors = Vec::new();
        let mut dropped = self.dropped;
        for v in &self.vectors {
            for k in 0..=ch.cutoff {
                let u = ch.apply_kraus_vec(k, v, self.modes, mode);
                let n = u.norm_squared();
                if n > DROP_NORM_SQR {
                    vectors.push(u);
                } else {
                    dropped += n;
                }
            }
        }
        Ok(PureEnsemble {
            vectors,
            cutoff: self.cutoff,
            modes: self.modes,
            dropped,
        })
    }

    pub fn apply_loss(&self, eta: f64, loss_mode: LossMode) -> Result<PureEnsemble> {
        let ch = loss_kraus(eta, self.cutoff)?;
        let mut out = self.clone();
        for &mode in loss_mode.modes_hit(self.modes) {
            out = out.apply_channel(&ch, mode)?;
        }
        Ok(out)
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        let dim = self.dim();
        let mut m = CMatrix::zeros(dim, dim);
        for v in &self.vectors {
            m += v * v.adjoint();
        }
        Ok(DensityOperator::new_unchecked(m, self.cutoff, self.modes)?.with_tail_loss(self.dropped))
    }

    /// Eigenpairs of `rho` with eigenvalue above `floor`, from the Gram matrix
    /// of the ensemble vectors. Eigenvalues descend.
    pub fn support(&self, floor: f64) -> Result<(Vec<f64>, Vec<CVector>)> {
        let r = self.vectors.len();
        let mut gram = CMatrix::zeros(r, r);
        for i in 0..r {
            for j in i..r {
                let g = self.vectors[i].dotc(&self.vectors[j]);
                gram[(i, j)] = g;
                gram[(j, i)] = g.conj();
            }
        }
        let eig = eigh(&gram)?;
        let mut values = Vec::new();
        let mut vecs = Vec::new();
        for (k, &s) in eig.eigenvalues.iter().enumerate() {
            if s <= floor {
                break;
            }
            let w = eig.eigenvectors.column(k);
            let mut u = CVector::zeros(self.dim());
            for (i, v) in self.vectors.iter().enumerate() {
                u.axpy(w[i], v, C64::new(1.0, 0.0));
            }
            u /= C64::new(s.sqrt(), 0.0);
            values.push(s);
            vecs.push(u);
        }
        Ok((values, vecs))
    }
}

/// Closed-form lossy unbalanced cat state after phase shift `phi`:
///
/// ```text
/// N_u^2 [ |g><g| + a^2 |0><0| + a e^{-alpha_mu^2/2} (|g><0| + |0><g|) ]
/// ```
///
/// with `g = alpha(a) sqrt(eta) e^{i phi}` and `alpha_mu = alpha(a) sqrt(1 - eta)`.
pub fn ucs_lossy_rho_analytic(a: f64, n_phi: f64, eta: f64, phi: f64, cutoff: usize) -> Result<DensityOperator> {
    let alpha = solve_alpha_of_a(a, n_phi)?;
    two_branch_lossy_rho(alpha, a, eta, phi, cutoff)
}

/// As [`ucs_lossy_rho_analytic`] for an explicit branch amplitude `alpha`.
pub fn two_branch_lossy_rho(alpha: f64, a: f64, eta: f64, phi: f64, cutoff: usize) -> Result<DensityOperator> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("unbalancing {a} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("transmissivity {eta} outside [0, 1]")));
    }
    let n2 = norm_ucs(a, alpha).powi(2);
    let g = coherent_vector(C64::from_polar(alpha * eta.sqrt(), phi), cutoff)?;
    let g = g.amplitudes();
    let vac = FockVector::vacuum(cutoff);
    let z = vac.amplitudes();
    let coh = a * (-0.5 * alpha * alpha * (1.0 - eta)).exp();
    let m = (g * g.adjoint()) * C64::new(n2, 0.0)
        + (z * z.adjoint()) * C64::new(n2 * a * a, 0.0)
        + (g * z.adjoint() + z * g.adjoint()) * C64::new(n2 * coh, 0.0);
    DensityOperator::new_unchecked(m, cutoff, Modes::One)
}

/// Loss realized as an explicit beam splitter with a vacuum environment
/// followed by a partial trace. Single mode only; builds a dense
/// `(cutoff+1)^2` unitary, so keep the cutoff small.
pub fn beam_splitter_loss(rho: &DensityOperator, eta: f64) -> Result<DensityOperator> {
    if rho.modes() != Modes::One {
        return Err(Error::Unsupported("beam-splitter dilation is single-mode".into()));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("transmissivity {eta} outside [0, 1]")));
    }
    let c = rho.cutoff();
    let d = c + 1;
    // generator H = i (a^dagger b - a b^dagger) on system (x) environment; it
    // conserves total photon number, so restrict to n_s + n_e <= c where the
    // truncation is exact
    let states: Vec<(usize, usize)> = (0..d)
        .flat_map(|s| (0..d).map(move |e| (s, e)))
        .filter(|&(s, e)| s + e <= c)
        .collect();
    let index = |s: usize, e: usize| states.iter().position(|&p| p == (s, e));
    let dim = states.len();
    let mut h = CMatrix::zeros(dim, dim);
    for (col, &(s, e)) in states.iter().enumerate() {
        // a^dagger b |s,e> = sqrt((s+1) e) |s+1, e-1>
        if e > 0 {
            if let Some(row) = index(s + 1, e - 1) {
                h[(row, col)] += C64::new(0.0, (((s + 1) * e) as f64).sqrt());
            }
        }
        // a b^dagger |s,e> = sqrt(s (e+1)) |s-1, e+1>
        if s > 0 {
            if let Some(row) = index(s - 1, e + 1) {
                h[(row, col)] -= C64::new(0.0, ((s * (e + 1)) as f64).sqrt());
            }
        }
    }
    let theta = (1.0 - eta).sqrt().asin();
    let eig = eigh(&h)?;
    let phases = CVector::from_iterator(dim, eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -theta * l)));
    let v = &eig.eigenvectors;
    let mut vd = v.clone();
    for (j, mut col) in vd.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    let u = vd * v.adjoint();

    // embed rho (x) |0><0| and evolve
    let sys = rho.matrix();
    let mut big = CMatrix::zeros(dim, dim);
    for i in 0..d {
        for j in 0..d {
            if let (Some(r), Some(q)) = (index(i, 0), index(j, 0)) {
                big[(r, q)] = sys[(i, j)];
            }
        }
    }
    let evolved = &u * big * u.adjoint();
    let mut out = CMatrix::zeros(d, d);
    for (r, &(s1, e1)) in states.iter().enumerate() {
        for (q, &(s2, e2)) in states.iter().enumerate() {
            if e1 == e2 {
                out[(s1, s2)] += evolved[(r, q)];
            }
        }
    }
    DensityOperator::new_unchecked(out, c, Modes::One)
}

/// Largest element-wise distance between two density operators.
pub fn density_distance(a: &DensityOperator, b: &DensityOperator) -> f64 {
    max_abs_diff(a.matrix(), b.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{cutoff_for_mean, phase_shift, Tensor};
    use crate::states::{build_state, StateSpec};
    use proptest::prelude::*;

    fn coherent_rho(alpha: C64, cutoff: usize) -> DensityOperator {
        DensityOperator::from_pure(&coherent_vector(alpha, cutoff).unwrap())
    }

    #[test]
    fn no_loss_is_identity_kraus() {
        let ch = loss_kraus(1.0, 6).unwrap();
        let k = ch.kraus();
        assert_eq!(k[0], CMatrix::identity(7, 7));
        assert!(k[1..].iter().all(|m| m.iter().all(|x| *x == C64::new(0.0, 0.0))));
    }

    #[test]
    fn full_loss_gives_vacuum() {
        let rho = coherent_rho(C64::new(1.5, 0.3), 30);
        let out = apply_loss(&rho, 0.0, LossMode::BothArms).unwrap();
        let vac = DensityOperator::from_pure(&FockVector::vacuum(30));
        assert!(density_distance(&out, &vac) < 1e-12);
    }

    #[test]
    fn completeness_and_subdiagonal_structure() {
        for &eta in &[0.0, 0.13, 0.5, 0.97, 1.0] {
            let ch = loss_kraus(eta, 25).unwrap();
            assert!(ch.completeness_error() <= 1e-10, "eta={eta}");
            let explicit: CMatrix = ch.kraus().iter().map(|k| k.adjoint() * k).sum();
            assert!(max_abs_diff(&explicit, &CMatrix::identity(26, 26)) <= 1e-10);
            for (k, m) in ch.kraus().iter().enumerate() {
                for ((i, j), x) in m.iter().enumerate().map(|(idx, x)| ((idx % 26, idx / 26), x)) {
                    if j != i + k {
                        assert_eq!(*x, C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn eta_out_of_range() {
        assert!(loss_kraus(1.2, 5).is_err());
        assert!(loss_kraus(-0.1, 5).is_err());
    }

    #[test]
    fn coherent_states_stay_coherent() {
        let cutoff = cutoff_for_mean(4.0);
        let out = apply_loss(&coherent_rho(C64::new(2.0, 0.0), cutoff), 0.5, LossMode::BothArms).unwrap();
        let target = coherent_vector(C64::new(2.0 * 0.5f64.sqrt(), 0.0), cutoff).unwrap();
        let fidelity = target.amplitudes().dotc(&(out.matrix() * target.amplitudes())).re;
        assert!(fidelity > 1.0 - 1e-10, "{fidelity}");
    }

    #[test]
    fn identity_channel_leaves_rho() {
        let rho = coherent_rho(C64::new(0.7, -1.1), 25);
        let out = apply_loss(&rho, 1.0, LossMode::BothArms).unwrap();
        assert!(density_distance(&rho, &out) <= 1e-12);
    }

    #[test]
    fn number_state_binomial_populations() {
        let eta: f64 = 0.63;
        let rho = DensityOperator::from_pure(&FockVector::number_state(3, 5).unwrap());
        let out = apply_loss(&rho, eta, LossMode::BothArms).unwrap();
        let p = out.diagonal_probabilities();
        let mu = 1.0 - eta;
        let expect = [mu.powi(3), 3.0 * eta * mu * mu, 3.0 * eta * eta * mu, eta.powi(3)];
        for n in 0..4 {
            assert!((p[n] - expect[n]).abs() < 1e-14);
        }
        assert!(
            out.max_abs_diff(
                &DensityOperator::new_unchecked(
                    CMatrix::from_diagonal(&CVector::from_iterator(6, p.iter().map(|&x| C64::new(x, 0.0)))),
                    5,
                    Modes::One
                )
                .unwrap()
            ) < 1e-15
        );
    }

    #[test]
    fn two_mode_noon_trace_preserved() {
        let psi = build_state(&StateSpec::Noon { n: 2 }, 2).unwrap();
        let rho = DensityOperator::from_pure(&psi);
        let out = apply_loss(&rho, 0.8, LossMode::BothArms).unwrap();
        assert!((out.trace() - 1.0).abs() <= 1e-10);
        out.validate().unwrap();
    }

    #[test]
    fn mode_out_of_range() {
        let rho = coherent_rho(C64::new(1.0, 0.0), 16);
        let ch = loss_kraus(0.5, 12).unwrap();
        assert!(apply_channel(&rho, &ch, 2).is_err());
    }

    #[test]
    fn ensemble_matches_dense_channel() {
        let psi = build_state(&StateSpec::Ecs { alpha: 1.2 }, 20).unwrap();
        let rho = apply_loss(&DensityOperator::from_pure(&psi), 0.7, LossMode::BothArms).unwrap();
        let ens = PureEnsemble::from_pure(&psi)
            .apply_loss(0.7, LossMode::BothArms)
            .unwrap();
        assert!(density_distance(&rho, &ens.to_density().unwrap()) < 1e-13);

        let rho1 = apply_loss(&DensityOperator::from_pure(&psi), 0.4, LossMode::PhaseArmOnly).unwrap();
        let ens1 = PureEnsemble::from_pure(&psi)
            .apply_loss(0.4, LossMode::PhaseArmOnly)
            .unwrap();
        assert!(density_distance(&rho1, &ens1.to_density().unwrap()) < 1e-13);
    }

    #[test]
    fn ensemble_support_reconstructs_rho() {
        let psi = build_state(&StateSpec::Cat { alpha: 2.0 }, 40).unwrap();
        let ens = PureEnsemble::from_pure(&psi)
            .apply_loss(0.6, LossMode::BothArms)
            .unwrap();
        let (vals, vecs) = ens.support(1e-14).unwrap();
        // a lossy two-branch superposition has rank two
        assert_eq!(vals.len(), 2);
        let mut rebuilt = CMatrix::zeros(41, 41);
        for (l, v) in vals.iter().zip(&vecs) {
            rebuilt += v * v.adjoint() * C64::new(*l, 0.0);
        }
        assert!(max_abs_diff(&rebuilt, ens.to_density().unwrap().matrix()) < 1e-12);
    }

    #[test]
    fn beam_splitter_dilation_matches_kraus() {
        let cutoff = 8;
        let mut v = CVector::zeros(cutoff + 1);
        v[0] = C64::new(1.0, 0.0);
        v[2] = C64::new(0.6, 0.0);
        v[5] = C64::new(0.0, 0.3);
        v[8] = C64::new(-0.2, 0.1);
        let psi = FockVector::new(v, cutoff, Modes::One).unwrap().normalized().unwrap();
        let rho = DensityOperator::from_pure(&psi);
        for &eta in &[0.25, 0.6, 0.9] {
            let kraus = apply_loss(&rho, eta, LossMode::BothArms).unwrap();
            let dil = beam_splitter_loss(&rho, eta).unwrap();
            assert!(density_distance(&kraus, &dil) < 1e-12, "eta={eta}");
        }
    }

    #[test]
    fn analytic_ucs_reductions() {
        let cutoff = 60;
        let n_phi = 9.0 / (2.0 + 2.0 * (-4.5f64).exp());
        // eta = 1: pure projector
        let rho = ucs_lossy_rho_analytic(0.6, n_phi, 1.0, 0.4, cutoff).unwrap();
        let eig = eigh(rho.matrix()).unwrap();
        assert!((eig.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!(eig.eigenvalues[1].abs() < 1e-10);
        // a = 0: lossy coherent state
        let rho0 = ucs_lossy_rho_analytic(0.0, 9.0, 0.5, 0.3, cutoff).unwrap();
        let coh = coherent_rho(C64::from_polar(3.0 * 0.5f64.sqrt(), 0.3), cutoff);
        assert!(density_distance(&rho0, &coh) < 1e-14);
    }

    #[test]
    fn analytic_ucs_matches_kraus_pipeline() {
        let n_phi = 9.0 / (2.0 + 2.0 * (-4.5f64).exp());
        let spec = StateSpec::Ucs { a: 1.0, n_phi };
        let cutoff = spec.default_cutoff().unwrap();
        let psi = build_state(&spec, cutoff).unwrap();
        let rotated = phase_shift(0.3, cutoff).apply(&psi).unwrap();
        let pipeline = apply_loss(&DensityOperator::from_pure(&rotated), 0.6, LossMode::BothArms).unwrap();
        let analytic = ucs_lossy_rho_analytic(1.0, n_phi, 0.6, 0.3, cutoff).unwrap();
        assert!(density_distance(&pipeline, &analytic) <= 1e-9);
    }

    #[test]
    fn phase_commutes_with_loss() {
        let cutoff = 30;
        let psi = build_state(&StateSpec::Ucs { a: 0.4, n_phi: 2.0 }, cutoff).unwrap();
        let rho = DensityOperator::from_pure(&psi);
        let u = phase_shift(0.83, cutoff);
        let a = apply_loss(&rho.conjugate_by(&u).unwrap(), 0.55, LossMode::BothArms).unwrap();
        let b = apply_loss(&rho, 0.55, LossMode::BothArms)
            .unwrap()
            .conjugate_by(&u)
            .unwrap();
        assert!(density_distance(&a, &b) <= 1e-10);
    }

    #[test]
    fn two_mode_tensor_loss_on_single_arm() {
        let cutoff = 10;
        let psi = coherent_vector(C64::new(1.0, 0.0), 30).unwrap();
        let trunc = FockVector::new(
            CVector::from_iterator(cutoff + 1, psi.amplitudes().iter().take(cutoff + 1).copied()),
            cutoff,
            Modes::One,
        )
        .unwrap();
        let two = trunc.tensor(&FockVector::vacuum(cutoff)).unwrap();
        let ens = PureEnsemble::from_pure(&two)
            .apply_loss(0.3, LossMode::PhaseArmOnly)
            .unwrap();
        // environment-free mode 2 stays vacuum
        let rho = ens.to_density().unwrap();
        let d = cutoff + 1;
        for i in 0..rho.dim() {
            if i % d != 0 {
                assert_eq!(rho.matrix()[(i, i)].re, 0.0);
            }
        }
    }

    fn random_state(seed: &[f64], cutoff: usize) -> DensityOperator {
        let v = CVector::from_iterator(
            cutoff + 1,
            (0..=cutoff).map(|n| C64::new(seed[n % seed.len()], seed[(n + 3) % seed.len()])),
        );
        let psi = FockVector::new(v, cutoff, Modes::One).unwrap().normalized().unwrap();
        DensityOperator::from_pure(&psi)
    }

    proptest! {
        #[test]
        fn loss_channels_compose(
            eta1 in 0.0f64..=1.0,
            eta2 in 0.0f64..=1.0,
            seed in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            prop_assume!(seed.iter().any(|x| x.abs() > 1e-3));
            let rho = random_state(&seed, 9);
            let two = apply_loss(&apply_loss(&rho, eta1, LossMode::BothArms).unwrap(), eta2, LossMode::BothArms).unwrap();
            let one = apply_loss(&rho, eta1 * eta2, LossMode::BothArms).unwrap();
            prop_assert!(density_distance(&one, &two) <= 1e-10);
            prop_assert!((two.trace() - 1.0).abs() <= 1e-10);
        }
    }
}

//! Displace-and-count readout.
//!
//! After the phase shift and loss the mode is displaced by `D(-beta)` and its
//! photons are counted. For states `N(|alpha> + a|0>)` the displaced state is
//!
//! ```text
//! N^2 [ |s><s| + a^2 |-b><-b| + a k (e^{i t} |s><-b| + h.c.) ]
//! s = alpha_eta e^{i phi} - b,   t = alpha_eta b sin(phi),   k = e^{-alpha^2 (1 - eta) / 2}
//! ```
//!
//! so count probabilities and their phase derivatives are available in
//! closed form. A Fock-space route (Kraus ensemble, then the displacement
//! matrix) is kept as an independent check.

use std::f64::consts::PI;
use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channels::{LossMode, PureEnsemble};
use crate::error::{Error, Result};
use crate::fock::{
    cutoff_for_amplitudes, cutoff_for_mean, displacement_operator, ln_factorial, ln_poisson, phase_shift, CVector,
    FockVector, C64,
};
use crate::precision::{golden_section_min, A_TOL};
use crate::states::{build_state, mean_photons_through_phase, norm_ucs, solve_alpha_of_a, StateSpec};

/// Default central-difference step in the phase.
pub const DEFAULT_DPHI: f64 = 1e-5;
/// Outcomes rarer than this are left out of Fisher sums.
pub const PROB_FLOOR: f64 = 1e-14;
/// Allowed `1 - sum p` before a distribution counts as truncated.
pub const DIST_TAIL_TOL: f64 = 1e-9;
pub const PRIOR_WIDTH: f64 = 0.5;
pub const POSTERIOR_GRID: usize = 2001;
/// Posterior mass allowed in the outer 2.5% of the grid on either side.
pub const ESCAPE_MASS: f64 = 1e-3;
pub const MAX_WIDENINGS: usize = 3;
/// Spacing of the default phase grid on `(0, pi)`.
pub const PHI_GRID_STEP: f64 = 0.005;
/// Coarse step in `a` for the joint `(a, phi)` search.
pub const MEAS_A_STEP: f64 = 0.05;

/// Count probabilities `p(n | phi)` for `n = offset .. offset + probs.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    pub phi: f64,
    pub offset: usize,
    pub probs: Vec<f64>,
    /// `1 - sum(probs)`
    pub tail: f64,
}

impl OutcomeDistribution {
    fn new(phi: f64, offset: usize, probs: Vec<f64>) -> Self {
        let tail = 1.0 - probs.iter().sum::<f64>();
        OutcomeDistribution {
            phi,
            offset,
            probs,
            tail,
        }
    }

    pub fn prob(&self, n: usize) -> f64 {
        n.checked_sub(self.offset)
            .and_then(|i| self.probs.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.probs.len()
    }

    pub fn mean(&self) -> f64 {
        self.range().map(|n| n as f64 * self.prob(n)).sum()
    }
}

fn poisson(n: usize, mean: f64) -> f64 {
    ln_poisson(n, mean).exp()
}

/// Lowest count with non-negligible Poisson mass.
fn poisson_floor(mean: f64) -> usize {
    (mean - 8.0 * mean.sqrt() - 20.0).floor().max(0.0) as usize
}

/// Closed-form readout of a lossy `N(|alpha> + a|0>)` state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBranchReadout {
    alpha: f64,
    alpha_eta: f64,
    a: f64,
    beta: f64,
    kappa: f64,
    norm2: f64,
}

impl TwoBranchReadout {
    pub fn new(alpha: f64, a: f64, eta: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!(
                "alpha={alpha}, a={a}, eta={eta} out of range"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "displacement {beta} must be non-negative"
            )));
        }
        Ok(TwoBranchReadout {
            alpha,
            alpha_eta: alpha * eta.sqrt(),
            a,
            beta,
            kappa: (-0.5 * alpha * alpha * (1.0 - eta)).exp(),
            norm2: norm_ucs(a, alpha).powi(2),
        })
    }

    /// Readout for a coherent, cat or UCS spec.
    pub fn for_spec(spec: &StateSpec, eta: f64, beta: f64) -> Result<Self> {
        match spec.two_branch()? {
            Some((alpha, a)) => Self::new(alpha, a, eta, beta),
            None => Err(Error::Unsupported(format!("closed-form readout for `{spec}`"))),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_eta(&self) -> f64 {
        self.alpha_eta
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Count range covering every phase: `|s|` lies in `[|b - alpha_eta|, b + alpha_eta]`.
    pub fn window(&self) -> (usize, usize) {
        let low = (self.beta - self.alpha_eta).abs().min(self.beta);
        let high = self.beta + self.alpha_eta;
        (poisson_floor(low * low), cutoff_for_mean(high * high))
    }

    fn sigma(&self, phi: f64) -> C64 {
        C64::from_polar(self.alpha_eta, phi) - self.beta
    }

    fn theta(&self, phi: f64) -> f64 {
        self.alpha_eta * self.beta * phi.sin()
    }

    /// `e^{i t} <n|s><-b|n>` computed as a geometric mean of two Poisson weights.
    fn cross(&self, n: usize, sigma: C64, theta: f64) -> C64 {
        let s2 = sigma.norm_sqr();
        let b2 = self.beta * self.beta;
        let mag = (0.5 * (ln_poisson(n, s2) + ln_poisson(n, b2))).exp();
        if mag == 0.0 {
            return C64::new(0.0, 0.0);
        }
        // arg(-b s) = arg(-s) for b > 0
        C64::from_polar(mag, theta + n as f64 * (-sigma).arg())
    }

    pub fn prob(&self, n: usize, phi: f64) -> f64 {
        let sigma = self.sigma(phi);
        let mut p = poisson(n, sigma.norm_sqr()) + self.a * self.a * poisson(n, self.beta * self.beta);
        if self.a > 0.0 {
            p += 2.0 * self.a * self.kappa * self.cross(n, sigma, self.theta(phi)).re;
        }
        self.norm2 * p
    }

    /// `d p(n | phi) / d phi`.
    pub fn dprob(&self, n: usize, phi: f64) -> f64 {
        let gamma = C64::from_polar(self.alpha_eta, phi);
        let sigma = gamma - self.beta;
        let s2 = sigma.norm_sqr();
        // d|s|^2/dphi
        let ds2 = 2.0 * self.alpha_eta * self.beta * phi.sin();
        let below = if n > 0 { poisson(n - 1, s2) } else { 0.0 };
        let mut d = ds2 * (below - poisson(n, s2));
        if self.a > 0.0 {
            let theta = self.theta(phi);
            let dtheta = self.alpha_eta * self.beta * phi.cos();
            let v = self.cross(n, sigma, theta);
            // V_n = e^{it} e^{-(|s|^2+b^2)/2} (-b s)^n / n!
            // dV_n/dphi = V_n (i t' - |s|^2'/2) - i b gamma V_{n-1}
            let mut dv = v * C64::new(-0.5 * ds2, dtheta);
            if n > 0 {
                dv -= C64::new(0.0, self.beta) * gamma * self.cross(n - 1, sigma, theta);
            }
            d += 2.0 * self.a * self.kappa * dv.re;
        }
        self.norm2 * d
    }

    pub fn distribution(&self, phi: f64) -> OutcomeDistribution {
        let (lo, hi) = self.window();
        OutcomeDistribution::new(phi, lo, (lo..=hi).map(|n| self.prob(n, phi)).collect())
    }

    /// Classical Fisher information from the exact derivative.
    pub fn fisher(&self, phi: f64) -> f64 {
        let sigma = self.sigma(phi);
        let s2 = sigma.norm_sqr();
        let b2 = self.beta * self.beta;
        if !(s2 > 0.0 && b2 > 0.0) {
            return self.fisher_termwise(phi);
        }
        // same sum as `fisher_termwise`, with the Poisson weights stepped in log space;
        // counts outside both branches' ranges carry nothing, the cross term included
        let (lo, hi) = self.window();
        let lo = lo.max(poisson_floor(s2.min(b2)));
        let hi = hi.min(cutoff_for_mean(s2.max(b2)));
        let (ln_s2, ln_b2) = (s2.ln(), b2.ln());
        let gamma = C64::from_polar(self.alpha_eta, phi);
        let ds2 = 2.0 * self.alpha_eta * self.beta * phi.sin();
        let theta = self.theta(phi);
        let dtheta = self.alpha_eta * self.beta * phi.cos();
        let psi = (-sigma).arg();
        let weight = 2.0 * self.a * self.kappa;
        let cross = |ls: f64, lb: f64, k: f64| C64::from_polar((0.5 * (ls + lb)).exp(), theta + k * psi);
        let mut f = 0.0;
        for n in lo..=hi {
            let x = n as f64;
            let lf = ln_factorial(n);
            let ls = -s2 + x * ln_s2 - lf;
            let lb = -b2 + x * ln_b2 - lf;
            let ps = ls.exp();
            let mut p = ps + self.a * self.a * lb.exp();
            let (ps_below, v_below) = if n > 0 {
                let ls1 = ls - ln_s2 + x.ln();
                let lb1 = lb - ln_b2 + x.ln();
                (ls1.exp(), cross(ls1, lb1, x - 1.0))
            } else {
                (0.0, C64::new(0.0, 0.0))
            };
            let mut d = ds2 * (ps_below - ps);
            if self.a > 0.0 {
                let v = cross(ls, lb, x);
                p += weight * v.re;
                let dv = v * C64::new(-0.5 * ds2, dtheta) - C64::new(0.0, self.beta) * gamma * v_below;
                d += weight * dv.re;
            }
            let (p, d) = (self.norm2 * p, self.norm2 * d);
            if p >= PROB_FLOOR {
                f += d * d / p;
            }
        }
        f
    }

    /// [`fisher`](Self::fisher) summed term by term from [`prob`](Self::prob) and [`dprob`](Self::dprob).
    pub fn fisher_termwise(&self, phi: f64) -> f64 {
        let (lo, hi) = self.window();
        let mut f = 0.0;
        for n in lo..=hi {
            let p = self.prob(n, phi);
            if p >= PROB_FLOOR {
                let d = self.dprob(n, phi);
                f += d * d / p;
            }
        }
        f
    }

    /// Classical Fisher information with a central-difference derivative.
    pub fn fisher_central(&self, phi: f64, dphi: f64) -> Result<f64> {
        check_step(dphi)?;
        let (lo, hi) = self.window();
        let mut f = 0.0;
        for n in lo..=hi {
            let p = self.prob(n, phi);
            if p >= PROB_FLOOR {
                let d = (self.prob(n, phi + dphi) - self.prob(n, phi - dphi)) / (2.0 * dphi);
                f += d * d / p;
            }
        }
        Ok(f)
    }

    /// Classical Fisher information with the five-point fourth-order stencil.
    pub fn fisher_five_point(&self, phi: f64, dphi: f64) -> Result<f64> {
        check_step(dphi)?;
        let (lo, hi) = self.window();
        let mut f = 0.0;
        for n in lo..=hi {
            let p = self.prob(n, phi);
            if p >= PROB_FLOOR {
                let q = |k: f64| self.prob(n, phi + k * dphi);
                let d = (q(-2.0) - 8.0 * q(-1.0) + 8.0 * q(1.0) - q(2.0)) / (12.0 * dphi);
                f += d * d / p;
            }
        }
        Ok(f)
    }
}

fn check_step(dphi: f64) -> Result<()> {
    if !(dphi > 0.0) || !dphi.is_finite() {
        return Err(Error::InvalidArgument(format!("phase step {dphi} must be positive")));
    }
    Ok(())
}

/// `p(n | phi)` for a coherent, cat or UCS spec, in closed form.
pub fn outcome_distribution(spec: &StateSpec, eta: f64, phi: f64, beta: f64) -> Result<OutcomeDistribution> {
    let d = TwoBranchReadout::for_spec(spec, eta, beta)?.distribution(phi);
    if d.tail.abs() > DIST_TAIL_TOL {
        return Err(Error::Truncation {
            cutoff: d.offset + d.probs.len() - 1,
            tail: d.tail,
            limit: DIST_TAIL_TOL,
        });
    }
    Ok(d)
}

/// `p(n | phi)` for any single-mode spec from the Fock-space pipeline:
/// phase, Kraus loss, `D(-beta)`, diagonal. `cutoff` is the output cutoff.
pub fn outcome_distribution_numeric(
    spec: &StateSpec,
    eta: f64,
    phi: f64,
    beta: f64,
    cutoff: Option<usize>,
) -> Result<OutcomeDistribution> {
    if spec.modes().count() != 1 {
        return Err(Error::Unsupported(format!(
            "photon-counting readout of two-mode `{spec}`"
        )));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "displacement {beta} must be non-negative"
        )));
    }
    let natural = spec.default_cutoff()?;
    let amplitude = match spec.two_branch()? {
        Some((alpha, _)) => alpha,
        None => (natural as f64).sqrt(),
    };
    let big = cutoff.unwrap_or_else(|| cutoff_for_amplitudes(amplitude, beta));
    // a small override truncates the state itself; build_state reports it
    let state_cutoff = natural.min(big);
    let psi = build_state(spec, state_cutoff)?;
    let mut padded = CVector::zeros(big + 1);
    padded.rows_mut(0, state_cutoff + 1).copy_from(psi.amplitudes());
    let psi = FockVector::new(padded, big, spec.modes())?;
    let psi = phase_shift(phi, big).apply(&psi)?;
    let ens = PureEnsemble::from_pure(&psi).apply_loss(eta, LossMode::BothArms)?;
    let d = displacement_operator(C64::new(-beta, 0.0), big)?;
    let mut probs = vec![0.0; big + 1];
    for v in ens.vectors() {
        let w = d.apply_vec(v);
        for (p, x) in probs.iter_mut().zip(w.iter()) {
            *p += x.norm_sqr();
        }
    }
    let dist = OutcomeDistribution::new(phi, 0, probs);
    if dist.tail.abs() > DIST_TAIL_TOL {
        return Err(Error::Truncation {
            cutoff: big,
            tail: dist.tail,
            limit: DIST_TAIL_TOL,
        });
    }
    Ok(dist)
}

/// `sum_n (dp/dphi)^2 / p` with a central difference of step `dphi`.
pub fn classical_fisher(spec: &StateSpec, eta: f64, phi: f64, beta: f64, dphi: f64) -> Result<f64> {
    TwoBranchReadout::for_spec(spec, eta, beta)?.fisher_central(phi, dphi)
}

/// Central-difference Fisher information on the Fock-space distributions.
pub fn classical_fisher_numeric(
    spec: &StateSpec,
    eta: f64,
    phi: f64,
    beta: f64,
    dphi: f64,
    cutoff: Option<usize>,
) -> Result<f64> {
    check_step(dphi)?;
    let p0 = outcome_distribution_numeric(spec, eta, phi, beta, cutoff)?;
    let pp = outcome_distribution_numeric(spec, eta, phi + dphi, beta, cutoff)?;
    let pm = outcome_distribution_numeric(spec, eta, phi - dphi, beta, cutoff)?;
    let mut f = 0.0;
    for ((p, a), b) in p0.probs.iter().zip(&pp.probs).zip(&pm.probs) {
        if *p >= PROB_FLOOR {
            let d = (a - b) / (2.0 * dphi);
            f += d * d / p;
        }
    }
    Ok(f)
}

/// Evenly spaced phases strictly inside `(0, pi)`.
pub fn default_phi_grid() -> Vec<f64> {
    let n = (PI / PHI_GRID_STEP).floor() as usize;
    (1..n).map(|i| i as f64 * PHI_GRID_STEP).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementOptimum {
    pub phi: f64,
    pub a: f64,
    pub f_c: f64,
    pub m: f64,
    pub delta_phi: f64,
}

/// Phase of largest Fisher information for one readout: grid, then a
/// golden-section refinement between the neighbours of the best grid point.
pub fn best_phase(readout: &TwoBranchReadout, phi_grid: &[f64]) -> Result<(f64, f64)> {
    if phi_grid.is_empty() {
        return Err(Error::InvalidArgument("empty phase grid".into()));
    }
    let mut best = (phi_grid[0], f64::NEG_INFINITY);
    let mut best_i = 0;
    for (i, &phi) in phi_grid.iter().enumerate() {
        let f = readout.fisher(phi);
        if f > best.1 {
            best = (phi, f);
            best_i = i;
        }
    }
    if phi_grid.len() > 1 {
        let l = phi_grid[best_i.saturating_sub(1)];
        let r = phi_grid[(best_i + 1).min(phi_grid.len() - 1)];
        let (x, neg) = golden_section_min(|p| Ok(-readout.fisher(p)), l, r, 1e-9)?;
        if -neg > best.1 {
            best = (x, -neg);
        }
    }
    Ok(best)
}

/// Best phase and the implied precision for a coherent, cat or UCS input.
pub fn optimize_measurement(
    spec: &StateSpec,
    eta: f64,
    beta: f64,
    phi_grid: &[f64],
    r_phi: f64,
) -> Result<MeasurementOptimum> {
    let readout = TwoBranchReadout::for_spec(spec, eta, beta)?;
    let (phi, f_c) = best_phase(&readout, phi_grid)?;
    let m = r_phi / mean_photons_through_phase(spec)?;
    Ok(MeasurementOptimum {
        phi,
        a: readout.a(),
        f_c,
        m,
        delta_phi: crate::qfi::crb(f_c, m)?,
    })
}

/// Joint best `(a, phi)` for a UCS of `n_phi` photons read out with displacement `beta`.
pub fn optimize_ucs_measurement(
    n_phi: f64,
    eta: f64,
    beta: f64,
    phi_grid: &[f64],
    r_phi: f64,
) -> Result<MeasurementOptimum> {
    let readout = |a: f64| TwoBranchReadout::new(solve_alpha_of_a(a, n_phi)?, a, eta, beta);
    let steps = (1.0 / MEAS_A_STEP).round() as usize;
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=steps {
        let a = i as f64 / steps as f64;
        let (phi, f) = best_phase(&readout(a)?, phi_grid)?;
        if f > best.2 {
            best = (a, phi, f);
        }
    }
    // refine a with the phase searched near the coarse optimum only
    let local: Vec<f64> = phi_grid.iter().copied().filter(|p| (p - best.1).abs() <= 0.1).collect();
    let lo = (best.0 - MEAS_A_STEP).max(0.0);
    let hi = (best.0 + MEAS_A_STEP).min(1.0);
    let mut refined = best;
    let (a_ref, _) = golden_section_min(
        |a| {
            let (phi, f) = best_phase(&readout(a)?, &local)?;
            if f > refined.2 {
                refined = (a, phi, f);
            }
            Ok(-f)
        },
        lo,
        hi,
        A_TOL,
    )?;
    let _ = a_ref;
    let (a, phi, f_c) = refined;
    let m = r_phi / n_phi;
    Ok(MeasurementOptimum {
        phi,
        a,
        f_c,
        m,
        delta_phi: crate::qfi::crb(f_c, m)?,
    })
}

/// `delta phi = Delta n / |d<n>/dphi|` for a lossy coherent input.
pub fn propagation_error_coherent(alpha: f64, eta: f64, phi: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("displacement {beta} must be positive")));
    }
    if !(alpha > 0.0) || !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha={alpha}, eta={eta} leave no signal"
        )));
    }
    let s = phi.sin();
    if s.abs() < 1e-12 {
        return Err(Error::DivergentSensitivity);
    }
    let alpha_eta = alpha * eta.sqrt();
    let sigma = C64::from_polar(alpha_eta, phi) - beta;
    Ok(sigma.norm() / (2.0 * alpha_eta * beta * s.abs()))
}

/// Settings of a simulated counting experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConfig {
    pub spec: StateSpec,
    pub eta: f64,
    pub beta: f64,
    /// Counts per trial.
    pub m: usize,
    pub seed: u64,
    pub prior_center: f64,
    pub prior_width: f64,
    pub grid_points: usize,
}

impl MeasurementConfig {
    pub fn new(spec: StateSpec, eta: f64, beta: f64, m: usize, seed: u64, prior_center: f64) -> Self {
        MeasurementConfig {
            spec,
            eta,
            beta,
            m,
            seed,
            prior_center,
            prior_width: PRIOR_WIDTH,
            grid_points: POSTERIOR_GRID,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta >= 0.0) {
            return bad(format!("displacement {} must be non-negative", self.beta));
        }
        if self.m == 0 {
            return bad("at least one count per trial is needed".into());
        }
        if !(self.prior_width > 0.0) || self.grid_points < 3 {
            return bad("prior needs a positive width and at least 3 grid points".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("transmissivity {} outside [0, 1]", self.eta));
        }
        Ok(())
    }
}

/// Result of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub trial: u64,
    pub phi_true: f64,
    pub mean_phi: f64,
    pub std_phi: f64,
    pub n_updates: usize,
    pub prior_width: f64,
    /// Observed `(count, multiplicity)` pairs in increasing count order.
    pub counts: Vec<(usize, usize)>,
}

impl fmt::Display for PosteriorSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial={} phi_true={:.12e} mean_phi={:.12e} std_phi={:.12e} m={} prior_width={} counts=",
            self.trial, self.phi_true, self.mean_phi, self.std_phi, self.n_updates, self.prior_width
        )?;
        for (i, (n, c)) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{n}:{c}")?;
        }
        Ok(())
    }
}

/// Draws `m` counts at `phi_true` on RNG stream `trial`.
pub fn sample_counts(config: &MeasurementConfig, phi_true: f64, trial: u64) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    let dist = outcome_distribution(&config.spec, config.eta, phi_true, config.beta)?;
    let weights: Vec<f64> = dist.probs.iter().map(|p| p.max(0.0)).collect();
    let sampler =
        WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(format!("count distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial);
    let mut hist = vec![0usize; weights.len()];
    for _ in 0..config.m {
        hist[sampler.sample(&mut rng)] += 1;
    }
    Ok(hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i + dist.offset, c))
        .collect())
}

/// Gridded posterior over `[center - width/2, center + width/2]` from a flat prior.
pub fn posterior(
    readout: &TwoBranchReadout,
    counts: &[(usize, usize)],
    center: f64,
    width: f64,
    points: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid: Vec<f64> = (0..points)
        .map(|j| center - 0.5 * width + width * j as f64 / (points - 1) as f64)
        .collect();
    let log_like: Vec<f64> = grid
        .iter()
        .map(|&phi| {
            counts
                .iter()
                .map(|&(n, c)| {
                    let p = readout.prob(n, phi);
                    if p > 0.0 {
                        c as f64 * p.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .sum::<f64>()
        })
        .collect();
    let top = log_like.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::PosteriorEscaped { mass: 1.0, width });
    }
    let mut w: Vec<f64> = log_like.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok((grid, w))
}

fn summarize(grid: &[f64], w: &[f64]) -> (f64, f64) {
    let mean: f64 = grid.iter().zip(w).map(|(x, p)| x * p).sum();
    let var: f64 = grid.iter().zip(w).map(|(x, p)| (x - mean) * (x - mean) * p).sum();
    (mean, var.sqrt())
}

/// One trial at the configured prior width. Fails with `PosteriorEscaped`
/// when the posterior leans on the edge of the prior support.
pub fn bayesian_simulate(config: &MeasurementConfig, phi_true: f64, trial: u64) -> Result<PosteriorSummary> {
    let counts = sample_counts(config, phi_true, trial)?;
    infer(config, phi_true, trial, &counts, config.prior_width)
}

fn infer(
    config: &MeasurementConfig,
    phi_true: f64,
    trial: u64,
    counts: &[(usize, usize)],
    width: f64,
) -> Result<PosteriorSummary> {
    let readout = TwoBranchReadout::for_spec(&config.spec, config.eta, config.beta)?;
    let (grid, w) = posterior(&readout, counts, config.prior_center, width, config.grid_points)?;
    let edge = ((config.grid_points as f64) * 0.025).ceil() as usize;
    let mass: f64 = w[..edge].iter().sum::<f64>().max(w[w.len() - edge..].iter().sum());
    if mass > ESCAPE_MASS {
        return Err(Error::PosteriorEscaped { mass, width });
    }
    let (mean_phi, std_phi) = summarize(&grid, &w);
    Ok(PosteriorSummary {
        trial,
        phi_true,
        mean_phi,
        std_phi,
        n_updates: config.m,
        prior_width: width,
        counts: counts.to_vec(),
    })
}

/// [`bayesian_simulate`] that doubles the prior width, keeping the same
/// counts, up to [`MAX_WIDENINGS`] times.
pub fn bayesian_simulate_with_retry(config: &MeasurementConfig, phi_true: f64, trial: u64) -> Result<PosteriorSummary> {
    let counts = sample_counts(config, phi_true, trial)?;
    let mut width = config.prior_width;
    let mut last = None;
    for _ in 0..=MAX_WIDENINGS {
        match infer(config, phi_true, trial, &counts, width) {
            Err(e @ Error::PosteriorEscaped { .. }) => {
                last = Some(e);
                width *= 2.0;
            }
            other => return other,
        }
    }
    Err(last.unwrap())
}

/// Trials `0..trials`, each on its own RNG stream.
pub fn run_trials(config: &MeasurementConfig, phi_true: f64, trials: u64) -> Result<Vec<PosteriorSummary>> {
    (0..trials)
        .map(|t| bayesian_simulate_with_retry(config, phi_true, t))
        .collect()
}

/// Uniform draws on stream `trial`; exposed so callers can check stream separation.
pub fn stream_head(seed: u64, trial: u64, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    (0..k).map(|_| rng.gen::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfi::{lossy_qfi, QfiRoute};
    use approx::assert_relative_eq;

    fn ucs(a: f64, alpha_bal: f64) -> StateSpec {
        let n_phi = mean_photons_through_phase(&StateSpec::Cat { alpha: alpha_bal }).unwrap();
        StateSpec::Ucs { a, n_phi }
    }

    #[test]
    fn stepped_fisher_matches_termwise() {
        for &(alpha, a, eta, beta) in &[
            (3.0, 1.0, 0.5, 12.0),
            (4.2, 0.4, 0.9, 16.0),
            (1.0, 0.0, 0.3, 2.0),
            (3.0, 0.7, 1.0, 3.0),
        ] {
            let r = TwoBranchReadout::new(alpha, a, eta, beta).unwrap();
            for &phi in &[0.01, 0.4, 1.3, 2.9] {
                assert_relative_eq!(r.fisher(phi), r.fisher_termwise(phi), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn coherent_displaced_to_vacuum() {
        let d = outcome_distribution(&StateSpec::Coherent { alpha: 3.0 }, 1.0, 0.0, 3.0).unwrap();
        assert!(d.prob(0) >= 1.0 - 1e-9);
    }

    #[test]
    fn normalized_at_fig4_convention() {
        let d = outcome_distribution(&ucs(1.0, 3.0), 0.7, 0.5, 12.0).unwrap();
        assert!(d.tail.abs() < 1e-9);
        assert!(d.probs.iter().all(|&p| p > -1e-15));
    }

    #[test]
    fn closed_form_matches_fock_pipeline() {
        for &a in &[0.0, 0.5, 1.0] {
            for &eta in &[0.3, 0.7, 1.0] {
                for &phi in &[0.2, 1.1, 2.5] {
                    let spec = ucs(a, 2.0);
                    let exact = outcome_distribution(&spec, eta, phi, 8.0).unwrap();
                    let num = outcome_distribution_numeric(&spec, eta, phi, 8.0, None).unwrap();
                    let diff = num
                        .range()
                        .map(|n| (num.prob(n) - exact.prob(n)).abs())
                        .fold(0.0, f64::max);
                    assert!(diff < 1e-9, "a={a} eta={eta} phi={phi}: {diff}");
                }
            }
        }
    }

    #[test]
    fn derivative_oracles_agree() {
        for (spec, eta, phi, beta) in [
            (ucs(1.0, 4.0), 0.8, 0.7, 16.0),
            (ucs(0.4, 3.0), 0.5, 1.9, 12.0),
            (StateSpec::Coherent { alpha: 2.0 }, 1.0, 1.2, 5.0),
        ] {
            let r = TwoBranchReadout::for_spec(&spec, eta, beta).unwrap();
            let exact = r.fisher(phi);
            let central = r.fisher_central(phi, DEFAULT_DPHI).unwrap();
            let five = r.fisher_five_point(phi, 1e-3).unwrap();
            assert!((central - exact).abs() < 1e-6 * exact, "{spec}: {central} vs {exact}");
            assert!((five - exact).abs() < 1e-8 * exact, "{spec}: {five} vs {exact}");
            assert_eq!(classical_fisher(&spec, eta, phi, beta, DEFAULT_DPHI).unwrap(), central);
        }
    }

    #[test]
    fn numeric_fisher_matches_closed_form() {
        let spec = ucs(0.7, 2.0);
        let f_num = classical_fisher_numeric(&spec, 0.6, 0.9, 8.0, DEFAULT_DPHI, None).unwrap();
        let f = TwoBranchReadout::for_spec(&spec, 0.6, 8.0).unwrap().fisher(0.9);
        assert!((f_num - f).abs() < 1e-5 * f);
    }

    #[test]
    fn fisher_bounded_by_quantum_fisher() {
        for &a in &[0.0, 0.3, 1.0] {
            for &eta in &[0.3, 0.8, 1.0] {
                let spec = ucs(a, 3.0);
                let f_q = lossy_qfi(&spec, eta, LossMode::BothArms, QfiRoute::Auto, None)
                    .unwrap()
                    .f_q;
                let r = TwoBranchReadout::for_spec(&spec, eta, 12.0).unwrap();
                for phi in default_phi_grid().iter().step_by(20) {
                    assert!(r.fisher(*phi) <= f_q + 1e-8);
                }
            }
        }
    }

    #[test]
    fn coherent_readout_saturates_at_optimal_phase() {
        // cos(phi) = alpha_eta / beta gives F_C = 4 alpha_eta^2 exactly
        let (alpha, eta, beta) = (2.0, 0.6, 9.0);
        let r = TwoBranchReadout::new(alpha, 0.0, eta, beta).unwrap();
        let phi = (alpha * eta.sqrt() / beta).acos();
        assert_relative_eq!(r.fisher(phi), 4.0 * alpha * alpha * eta, max_relative = 1e-10);
    }

    #[test]
    fn propagation_examples() {
        let d = propagation_error_coherent(3.0, 1.0, PI / 2.0, 1000.0).unwrap();
        assert_relative_eq!(d, (9.0f64 + 1e6).sqrt() / 6000.0, max_relative = 1e-14);
        assert!((d / 0.16668 - 1.0).abs() < 1e-4);
        // the minimum sits at cos(phi) = alpha_eta / beta, where it equals 1/(2 alpha_eta);
        // the quarter turn is above it by a relative alpha_eta^2 / (2 beta^2)
        let best = propagation_error_coherent(3.0, 1.0, (3.0f64 / 1000.0).acos(), 1000.0).unwrap();
        assert_relative_eq!(best, 1.0 / 6.0, max_relative = 1e-14);
        for phi in default_phi_grid() {
            let other = propagation_error_coherent(3.0, 1.0, phi, 1000.0).unwrap();
            assert!(best <= other * (1.0 + 1e-15));
            assert!(d <= other * (1.0 + 9.0 / 2e6));
        }
        let quarter = propagation_error_coherent(3.0, 0.25, PI / 2.0, 1e6).unwrap();
        let full = propagation_error_coherent(3.0, 1.0, PI / 2.0, 1e6).unwrap();
        assert_relative_eq!(quarter / full, 2.0, max_relative = 1e-9);
        assert_eq!(
            propagation_error_coherent(3.0, 1.0, 0.0, 10.0).unwrap_err(),
            Error::DivergentSensitivity
        );
        assert!(propagation_error_coherent(3.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn propagation_matches_fisher_for_coherent() {
        for &beta in &[300.0, 3000.0] {
            let r = TwoBranchReadout::new(3.0, 0.0, 1.0, beta).unwrap();
            let from_fisher = 1.0 / r.fisher(PI / 2.0).sqrt();
            let prop = propagation_error_coherent(3.0, 1.0, PI / 2.0, beta).unwrap();
            assert!((from_fisher - prop).abs() < 1e-6 * prop, "{from_fisher} vs {prop}");
        }
    }

    #[test]
    fn coherent_optimum_near_quarter_turn_for_large_beta() {
        let o = optimize_measurement(
            &StateSpec::Coherent { alpha: 3.0 },
            1.0,
            300.0,
            &default_phi_grid(),
            400.0,
        )
        .unwrap();
        assert!((o.phi - (3.0f64 / 300.0).acos()).abs() < 1e-4, "{}", o.phi);
        assert!((o.phi - PI / 2.0).abs() < 0.02);
    }

    #[test]
    fn larger_displacement_helps() {
        // with the unbalancing free, precision improves monotonically from beta = alpha to 4 alpha
        let n_phi = mean_photons_through_phase(&StateSpec::Cat { alpha: 3.0 }).unwrap();
        let grid = default_phi_grid();
        for &eta in &[0.5, 0.8] {
            let d: Vec<f64> = [3.0, 6.0, 9.0, 12.0]
                .iter()
                .map(|&b| optimize_ucs_measurement(n_phi, eta, b, &grid, 400.0).unwrap().delta_phi)
                .collect();
            assert!(d.windows(2).all(|w| w[1] < w[0]), "eta={eta}: {d:?}");
        }
    }

    #[test]
    fn phase_optimum_stable_under_step_halving() {
        let r = TwoBranchReadout::for_spec(&ucs(0.8, 3.0), 0.9, 12.0).unwrap();
        let grid = default_phi_grid();
        let argmax = |step: f64| {
            grid.iter()
                .copied()
                .max_by(|x, y| {
                    r.fisher_central(*x, step)
                        .unwrap()
                        .total_cmp(&r.fisher_central(*y, step).unwrap())
                })
                .unwrap()
        };
        assert!((argmax(DEFAULT_DPHI) - argmax(DEFAULT_DPHI / 2.0)).abs() <= PHI_GRID_STEP + 1e-12);
    }

    #[test]
    fn ucs_measurement_beats_fixed_a() {
        let n_phi = mean_photons_through_phase(&StateSpec::Cat { alpha: 3.0 }).unwrap();
        let grid = default_phi_grid();
        let joint = optimize_ucs_measurement(n_phi, 0.7, 12.0, &grid, 400.0).unwrap();
        for &a in &[0.0, 0.5, 1.0] {
            let fixed = optimize_measurement(&StateSpec::Ucs { a, n_phi }, 0.7, 12.0, &grid, 400.0).unwrap();
            assert!(joint.delta_phi <= fixed.delta_phi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn seeded_trials_are_reproducible() {
        let cfg = MeasurementConfig::new(ucs(0.8, 2.0), 0.9, 8.0, 500, 7, 1.0);
        let a = bayesian_simulate_with_retry(&cfg, 1.0, 3).unwrap();
        let b = bayesian_simulate_with_retry(&cfg, 1.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), b.to_string());
        let c = bayesian_simulate_with_retry(&cfg, 1.0, 4).unwrap();
        assert_ne!(a.counts, c.counts);
        assert_ne!(stream_head(7, 0, 4), stream_head(7, 1, 4));
        assert_eq!(a.counts.iter().map(|x| x.1).sum::<usize>(), 500);
    }

    #[test]
    fn escaped_posterior_is_signalled_and_retried() {
        // a prior far narrower than the posterior
        let mut cfg = MeasurementConfig::new(ucs(0.0, 2.0), 1.0, 8.0, 50, 1, 1.2);
        cfg.prior_width = 0.01;
        assert!(matches!(
            bayesian_simulate(&cfg, 1.2, 0),
            Err(Error::PosteriorEscaped { .. })
        ));
        cfg.prior_width = 0.2;
        let s = bayesian_simulate_with_retry(&cfg, 1.2, 0).unwrap();
        assert!(s.prior_width > 0.2);
    }

    #[test]
    fn posterior_concentrates() {
        let spec = ucs(0.6, 2.0);
        let r = TwoBranchReadout::for_spec(&spec, 0.9, 8.0).unwrap();
        let (phi0, f_c) = best_phase(&r, &default_phi_grid()).unwrap();
        let cfg = MeasurementConfig::new(spec, 0.9, 8.0, 2000, 11, phi0);
        let s = bayesian_simulate_with_retry(&cfg, phi0, 0).unwrap();
        let expect = 1.0 / (2000.0 * f_c).sqrt();
        assert!((s.std_phi / expect - 1.0).abs() < 0.3, "{} vs {expect}", s.std_phi);
        assert!((s.mean_phi - phi0).abs() < 5.0 * s.std_phi);
    }

    #[test]
    fn two_mode_readout_is_unsupported() {
        assert!(matches!(
            outcome_distribution_numeric(&StateSpec::Noon { n: 2 }, 1.0, 0.1, 1.0, None),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            outcome_distribution(&StateSpec::No { n: 2 }, 1.0, 0.1, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn number_state_readout_runs_numerically() {
        let d = outcome_distribution_numeric(&StateSpec::No { n: 3 }, 0.8, 0.4, 2.0, None).unwrap();
        assert!(d.tail.abs() < 1e-9);
        let f = classical_fisher_numeric(&StateSpec::No { n: 3 }, 0.8, 0.4, 2.0, DEFAULT_DPHI, None).unwrap();
        let f_q = lossy_qfi(&StateSpec::No { n: 3 }, 0.8, LossMode::BothArms, QfiRoute::Auto, None)
            .unwrap()
            .f_q;
        assert!(f > 0.0 && f <= f_q + 1e-6);
    }
}

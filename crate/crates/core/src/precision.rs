//! Precision-versus-transmission curves at a fixed photon budget.
//!
//! Every curve spends `R_phi` photons through the phase shift in total, so a
//! state carrying `n_phi` photons is used `m = R_phi / n_phi` times. `m` is a
//! real number.

use std::fmt;
use std::str::FromStr;

use crate::channels::LossMode;
use crate::error::{Error, Result};
use crate::qfi::{crb, lossy_qfi, qfi_ucs_cat_basis, QfiRoute, EPS_DEFAULT};
use crate::states::{mean_photons_through_phase, norm_cat, StateSpec};

pub const DEFAULT_R_PHI: f64 = 400.0;
pub const DEFAULT_ALPHA_BAL_MAX: f64 = 5.0;
/// Step of the coarse grid in `a`.
pub const A_GRID_STEP: f64 = 0.01;
/// Final bracket width of the golden-section refinement in `a`.
pub const A_TOL: f64 = 1e-6;
/// Points of the logarithmic size grid in the chop search.
pub const CHOP_GRID_POINTS: usize = 32;
pub const CHOP_MIN_SIZE: f64 = 0.1;
/// Final bracket width of the refinement in `ln n_phi`.
pub const CHOP_LOG_TOL: f64 = 1e-6;

/// Uniform grid of transmissivities written `min:max:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for EtaGrid {
    fn default() -> Self {
        EtaGrid {
            min: 0.01,
            max: 1.0,
            count: 101,
        }
    }
}

impl EtaGrid {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let g = EtaGrid { min, max, count };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.count == 0 {
            return bad("eta grid needs at least one point".into());
        }
        if !(self.min > 0.0 && self.max <= 1.0) {
            return bad(format!("eta grid [{}, {}] must lie in (0, 1]", self.min, self.max));
        }
        if self.count == 1 && self.min != self.max {
            return bad("a one-point eta grid needs min == max".into());
        }
        if self.count > 1 && !(self.min < self.max) {
            return bad(format!("eta grid needs min < max, got {}:{}", self.min, self.max));
        }
        Ok(())
    }

    /// Grid values; the last one is exactly `max`.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.max
                } else {
                    self.min + step * i as f64
                }
            })
            .collect()
    }
}

impl FromStr for EtaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("`{s}`: expected MIN:MAX:COUNT")));
        }
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("`{t}`: not a number")))
        };
        let count = parts[2]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("`{}`: not a point count", parts[2])))?;
        EtaGrid::new(num(parts[0])?, num(parts[1])?, count).map_err(|e| Error::Parse(format!("`{s}`: {e}")))
    }
}

impl fmt::Display for EtaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPoint {
    pub eta: f64,
    pub delta_phi: f64,
    pub m: f64,
    pub n_phi: f64,
    pub a_opt: Option<f64>,
    /// `None` for reference curves that are not tied to a state.
    pub spec: Option<StateSpec>,
}

impl PrecisionPoint {
    /// Point for a budget `r_phi` split into states of `n_phi` photons.
    /// Zero information gives an infinite `delta_phi`.
    pub fn from_information(eta: f64, f_q: f64, n_phi: f64, r_phi: f64) -> Result<Self> {
        if !(n_phi > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "no photons through the phase (n_phi={n_phi})"
            )));
        }
        let m = r_phi / n_phi;
        let delta_phi = match crb(f_q, m) {
            Err(Error::ZeroInformation) => f64::INFINITY,
            other => other?,
        };
        Ok(PrecisionPoint {
            eta,
            delta_phi,
            m,
            n_phi,
            a_opt: None,
            spec: None,
        })
    }

    pub fn budget(&self) -> f64 {
        self.m * self.n_phi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCurve {
    pub label: String,
    pub points: Vec<PrecisionPoint>,
}

impl PrecisionCurve {
    pub fn new(label: impl Into<String>, points: Vec<PrecisionPoint>) -> Result<Self> {
        let c = PrecisionCurve {
            label: label.into(),
            points,
        };
        if c.points.windows(2).any(|w| !(w[0].eta < w[1].eta)) {
            return Err(Error::InvalidArgument(format!(
                "curve `{}`: eta not strictly increasing",
                c.label
            )));
        }
        Ok(c)
    }

    pub fn etas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.eta).collect()
    }

    pub fn delta_phis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta_phi).collect()
    }

    pub fn at(&self, eta: f64) -> Option<&PrecisionPoint> {
        self.points.iter().find(|p| p.eta == eta)
    }
}

/// How the per-state information is computed along a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CurveOptions {
    pub loss_mode: LossMode,
    pub route: QfiRoute,
    /// Forces the Fock-space route on this per-mode cutoff.
    pub cutoff: Option<usize>,
}

impl CurveOptions {
    fn route(&self) -> QfiRoute {
        if self.cutoff.is_some() {
            QfiRoute::Numeric
        } else {
            self.route
        }
    }
}

/// CSV-safe label for a single-spec curve: `cat:alpha=3`, `ucs:a=0.7;nphi=4.45`.
pub fn spec_label(spec: &StateSpec) -> String {
    spec.to_string().replace(',', ";")
}

/// Cramér-Rao curve of one fixed state.
pub fn crb_curve(spec: &StateSpec, etas: &[f64], r_phi: f64, opts: CurveOptions) -> Result<PrecisionCurve> {
    crb_curve_labeled(spec, etas, r_phi, opts, &spec_label(spec))
}

pub fn crb_curve_labeled(
    spec: &StateSpec,
    etas: &[f64],
    r_phi: f64,
    opts: CurveOptions,
    label: &str,
) -> Result<PrecisionCurve> {
    check_budget(r_phi)?;
    let n_phi = mean_photons_through_phase(spec)?;
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        check_eta(eta)?;
        let point = lossy_qfi(spec, eta, opts.loss_mode, opts.route(), opts.cutoff)
            .and_then(|r| PrecisionPoint::from_information(eta, r.f_q, n_phi, r_phi))
            .map_err(|e| e.at(label, eta))?;
        points.push(PrecisionPoint {
            spec: Some(*spec),
            ..point
        });
    }
    PrecisionCurve::new(label, points)
}

fn check_budget(r_phi: f64) -> Result<()> {
    if !(r_phi > 0.0) || !r_phi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "photon budget R_phi={r_phi} must be positive"
        )));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("transmissivity {eta} outside (0, 1]")));
    }
    Ok(())
}

/// Minimizes `f` on `[lo, hi]` by golden-section search until the bracket is
/// narrower than `tol`. Returns the best point seen, endpoints excluded.
pub fn golden_section_min<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Optimal unbalancing for states of `n_phi` photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcsOptimum {
    pub a: f64,
    pub delta_phi: f64,
    pub f_q: f64,
}

/// Best `a` in `[0, 1]` for a UCS with `n_phi` photons at transmissivity `eta`.
pub fn optimize_ucs_a(n_phi: f64, eta: f64, r_phi: f64) -> Result<UcsOptimum> {
    check_budget(r_phi)?;
    check_eta(eta)?;
    if !(n_phi > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "photon budget {n_phi} must be positive"
        )));
    }
    let m = r_phi / n_phi;
    let info = |a: f64| qfi_ucs_cat_basis(a, n_phi, eta, EPS_DEFAULT).map(|r| r.f_q);
    let steps = (1.0 / A_GRID_STEP).round() as usize;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=steps {
        let a = i as f64 / steps as f64;
        let f = info(a)?;
        if f > best.1 {
            best = (a, f);
        }
    }
    let lo = (best.0 - A_GRID_STEP).max(0.0);
    let hi = (best.0 + A_GRID_STEP).min(1.0);
    let (a_ref, neg_f) = golden_section_min(|a| info(a).map(|f| -f), lo, hi, A_TOL)?;
    if -neg_f > best.1 {
        best = (a_ref, -neg_f);
    }
    Ok(UcsOptimum {
        a: best.0,
        delta_phi: crb(best.1, m)?,
        f_q: best.1,
    })
}

/// Curve of the a-optimized UCS at a fixed photon number.
pub fn ucs_optimized_curve(n_phi: f64, etas: &[f64], r_phi: f64, label: &str) -> Result<PrecisionCurve> {
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let opt = optimize_ucs_a(n_phi, eta, r_phi).map_err(|e| e.at(label, eta))?;
        points.push(PrecisionPoint {
            eta,
            delta_phi: opt.delta_phi,
            m: r_phi / n_phi,
            n_phi,
            a_opt: Some(opt.a),
            spec: Some(StateSpec::Ucs { a: opt.a, n_phi }),
        });
    }
    PrecisionCurve::new(label, points)
}

/// Largest photon number of a balanced cat with `alpha <= alpha_bal_max`.
pub fn chop_ceiling(alpha_bal_max: f64) -> f64 {
    let x = alpha_bal_max * alpha_bal_max;
    norm_cat(alpha_bal_max).powi(2) * x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChopOptimum {
    pub n_phi: f64,
    pub a: f64,
    pub delta_phi: f64,
}

/// Joint optimum over state size and unbalancing under the `alpha_bal_max`
/// ceiling. `extra_sizes` below the ceiling are always evaluated, so any
/// fixed-size UCS in that list can never beat the result.
pub fn chop_optimize(eta: f64, r_phi: f64, alpha_bal_max: f64, extra_sizes: &[f64]) -> Result<ChopOptimum> {
    if !(alpha_bal_max > 0.0) || !alpha_bal_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha_bal_max {alpha_bal_max} must be positive"
        )));
    }
    let ceiling = chop_ceiling(alpha_bal_max);
    let lo = CHOP_MIN_SIZE.min(ceiling);
    let mut sizes: Vec<f64> = if ceiling > lo {
        let (l0, l1) = (lo.ln(), ceiling.ln());
        (0..CHOP_GRID_POINTS)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (CHOP_GRID_POINTS - 1) as f64).exp())
            .collect()
    } else {
        vec![ceiling]
    };
    // the ceiling itself, not its exp(ln(.)) round trip
    *sizes.last_mut().unwrap() = ceiling;
    sizes.extend(extra_sizes.iter().copied().filter(|&n| n > 0.0 && n <= ceiling));
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();

    let evaluate = |n: f64| optimize_ucs_a(n, eta, r_phi);
    let mut results = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        results.push((n, evaluate(n)?));
    }
    let (best_i, _) = results
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .1.delta_phi.total_cmp(&y.1 .1.delta_phi))
        .unwrap();
    let mut best = results[best_i];
    if results.len() > 1 {
        let l = results[best_i.saturating_sub(1)].0.ln();
        let r = results[(best_i + 1).min(results.len() - 1)].0.ln();
        if r > l {
            let (x, _) = golden_section_min(|t| evaluate(t.exp()).map(|o| o.delta_phi), l, r, CHOP_LOG_TOL)?;
            let n = x.exp().min(ceiling);
            let o = evaluate(n)?;
            if o.delta_phi < best.1.delta_phi {
                best = (n, o);
            }
        }
    }
    Ok(ChopOptimum {
        n_phi: best.0,
        a: best.1.a,
        delta_phi: best.1.delta_phi,
    })
}

pub fn chop_curve(
    etas: &[f64],
    r_phi: f64,
    alpha_bal_max: f64,
    extra_sizes: &[f64],
    label: &str,
) -> Result<PrecisionCurve> {
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let o = chop_optimize(eta, r_phi, alpha_bal_max, extra_sizes).map_err(|e| e.at(label, eta))?;
        points.push(PrecisionPoint {
            eta,
            delta_phi: o.delta_phi,
            m: r_phi / o.n_phi,
            n_phi: o.n_phi,
            a_opt: Some(o.a),
            spec: Some(StateSpec::Ucs { a: o.a, n_phi: o.n_phi }),
        });
    }
    PrecisionCurve::new(label, points)
}

/// Shot-noise reference `1/sqrt(eta R_phi)`, recorded as `R_phi` single photons.
pub fn snl_curve(etas: &[f64], r_phi: f64) -> Result<PrecisionCurve> {
    check_budget(r_phi)?;
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        check_eta(eta)?;
        points.push(PrecisionPoint {
            eta,
            delta_phi: 1.0 / (eta * r_phi).sqrt(),
            m: r_phi,
            n_phi: 1.0,
            a_opt: None,
            spec: None,
        });
    }
    PrecisionCurve::new("SNL", points)
}

/// NOON ceiling matching a UCS photon ceiling: `N_max = round(2 n_phi_max)`.
pub fn noon_n_max(n_phi_ceiling: f64) -> usize {
    ((2.0 * n_phi_ceiling).round() as usize).max(1)
}

/// Per-eta best NOON state among `N = 1..=n_max`.
pub fn noon_chop_curve(
    etas: &[f64],
    r_phi: f64,
    n_max: usize,
    opts: CurveOptions,
    label: &str,
) -> Result<PrecisionCurve> {
    check_budget(r_phi)?;
    if n_max == 0 {
        return Err(Error::InvalidArgument("N_max must be positive".into()));
    }
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        check_eta(eta)?;
        let mut best: Option<PrecisionPoint> = None;
        for n in 1..=n_max {
            let spec = StateSpec::Noon { n };
            let f = lossy_qfi(&spec, eta, opts.loss_mode, opts.route(), opts.cutoff.map(|c| c.max(n)))
                .map_err(|e| e.at(label, eta))?
                .f_q;
            let p = PrecisionPoint::from_information(eta, f, n as f64 / 2.0, r_phi).map_err(|e| e.at(label, eta))?;
            if best.is_none_or(|b| p.delta_phi < b.delta_phi) {
                best = Some(PrecisionPoint { spec: Some(spec), ..p });
            }
        }
        points.push(best.unwrap());
    }
    PrecisionCurve::new(label, points)
}

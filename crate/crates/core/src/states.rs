//! Probe-state families and photon-number accounting.
//!
//! All coherent amplitudes are real and non-negative. Two-mode states put
//! the phase-shifted arm in mode 1.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fock::{coherent_vector, cutoff_for_mean, FockVector, Modes, Tensor, C64};

/// Residual tolerance for the `alpha(a)` self-consistency equation.
pub const ALPHA_TOL: f64 = 1e-12;
pub const ALPHA_MAX_ITER: usize = 500;

/// Declarative description of a probe state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpec {
    /// `|alpha>`
    Coherent { alpha: f64 },
    /// `N_c (|alpha> + |0>)`
    Cat { alpha: f64 },
    /// `N_u (|alpha(a)> + a|0>)` with `alpha(a)` fixed by the photon budget `n_phi`.
    Ucs { a: f64, n_phi: f64 },
    /// `(|N> + |0>) / sqrt 2`
    No { n: usize },
    /// `(|N,0> + |0,N>) / sqrt 2`
    Noon { n: usize },
    /// `N_e (|alpha,0> + |0,alpha>)`
    Ecs { alpha: f64 },
}

/// `N_e = 1/sqrt(2 + 2 e^{-alpha^2})`
pub fn norm_ecs(alpha: f64) -> f64 {
    1.0 / (2.0 + 2.0 * (-alpha * alpha).exp()).sqrt()
}

/// `N_c = 1/sqrt(2 + 2 e^{-alpha^2/2})`
pub fn norm_cat(alpha: f64) -> f64 {
    1.0 / (2.0 + 2.0 * (-0.5 * alpha * alpha).exp()).sqrt()
}

/// `N_u = 1/sqrt(1 + a^2 + 2a e^{-alpha^2/2})`
pub fn norm_ucs(a: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + a * a + 2.0 * a * (-0.5 * alpha * alpha).exp()).sqrt()
}

/// The three normalization constants for one amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSet {
    pub n_e: f64,
    pub n_c: f64,
    pub n_u: f64,
}

impl NormalizationSet {
    pub fn new(alpha: f64, a: f64) -> Self {
        NormalizationSet {
            n_e: norm_ecs(alpha),
            n_c: norm_cat(alpha),
            n_u: norm_ucs(a, alpha),
        }
    }
}

/// Amplitude `alpha(a)` that keeps `N_u^2 alpha^2 = n_phi`.
///
/// Fixed-point iteration on `x = alpha^2`:
/// `x <- n_phi (1 + a^2 + 2a e^{-x/2})`, started at `n_phi (1 + a^2)`. The
/// map's slope is bounded by `a n_phi e^{-x/2} <= 1/e`, so it contracts.
pub fn solve_alpha_of_a(a: f64, n_phi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("unbalancing {a} outside [0, 1]")));
    }
    if !(n_phi > 0.0) || !n_phi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "photon budget {n_phi} must be positive"
        )));
    }
    let base = n_phi * (1.0 + a * a);
    let map = |x: f64| base + 2.0 * a * n_phi * (-0.5 * x).exp();
    let mut x = base;
    let mut residual = f64::INFINITY;
    for _ in 0..ALPHA_MAX_ITER {
        let next = map(x);
        residual = (next - x).abs();
        x = next;
        if residual <= ALPHA_TOL * 0.5 {
            // one more step so the returned x is at least as converged as the residual says
            let r = (map(x) - x).abs();
            if r <= ALPHA_TOL {
                return Ok(x.sqrt());
            }
        }
    }
    Err(Error::NotConverged {
        what: "alpha(a) fixed point",
        iterations: ALPHA_MAX_ITER,
        residual,
    })
}

impl StateSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            StateSpec::Coherent { alpha } | StateSpec::Cat { alpha } | StateSpec::Ecs { alpha } => {
                if !(alpha >= 0.0) || !alpha.is_finite() {
                    return bad(format!("amplitude {alpha} must be real and non-negative"));
                }
            }
            StateSpec::Ucs { a, n_phi } => {
                if !(0.0..=1.0).contains(&a) {
                    return bad(format!("unbalancing {a} outside [0, 1]"));
                }
                if !(n_phi > 0.0) || !n_phi.is_finite() {
                    return bad(format!("photon budget {n_phi} must be positive"));
                }
            }
            StateSpec::No { n } | StateSpec::Noon { n } => {
                if n == 0 {
                    return bad("photon number N must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Short family name used in CSV labels.
    pub fn family(&self) -> &'static str {
        match self {
            StateSpec::Coherent { .. } => "CS",
            StateSpec::Cat { .. } => "cat",
            StateSpec::Ucs { .. } => "UCS",
            StateSpec::No { .. } => "NO",
            StateSpec::Noon { .. } => "NOON",
            StateSpec::Ecs { .. } => "ECS",
        }
    }

    pub fn modes(&self) -> Modes {
        match self {
            StateSpec::Noon { .. } | StateSpec::Ecs { .. } => Modes::Two,
            _ => Modes::One,
        }
    }

    /// Superpositions of one coherent branch and the vacuum, as `(alpha, a)`
    /// in `N (|alpha> + a|0>)`.
    pub fn two_branch(&self) -> Result<Option<(f64, f64)>> {
        Ok(match *self {
            StateSpec::Coherent { alpha } => Some((alpha, 0.0)),
            StateSpec::Cat { alpha } => Some((alpha, 1.0)),
            StateSpec::Ucs { a, n_phi } => Some((solve_alpha_of_a(a, n_phi)?, a)),
            _ => None,
        })
    }

    /// Per-mode cutoff: exact for number-state families, Poisson headroom otherwise.
    pub fn default_cutoff(&self) -> Result<usize> {
        self.validate()?;
        Ok(match *self {
            StateSpec::No { n } | StateSpec::Noon { n } => n,
            StateSpec::Coherent { alpha } | StateSpec::Cat { alpha } | StateSpec::Ecs { alpha } => {
                cutoff_for_mean(alpha * alpha)
            }
            StateSpec::Ucs { a, n_phi } => {
                let alpha = solve_alpha_of_a(a, n_phi)?;
                cutoff_for_mean(alpha * alpha)
            }
        })
    }
}

/// Normalized state vector for `spec` on a per-mode `cutoff`.
pub fn build_state(spec: &StateSpec, cutoff: usize) -> Result<FockVector> {
    spec.validate()?;
    let r2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let real = |x: f64| C64::new(x, 0.0);
    match *spec {
        StateSpec::Coherent { alpha } => coherent_vector(real(alpha), cutoff),
        StateSpec::Cat { .. } | StateSpec::Ucs { .. } => {
            let (alpha, a) = spec.two_branch()?.expect("single-mode two-branch family");
            let n = norm_ucs(a, alpha);
            let coh = coherent_vector(real(alpha), cutoff)?;
            let vac = FockVector::vacuum(cutoff).scale(real(a));
            Ok(coh.add(&vac)?.scale(real(n)))
        }
        StateSpec::No { n } => {
            let top = FockVector::number_state(n, cutoff)?;
            Ok(top.add(&FockVector::vacuum(cutoff))?.scale(r2))
        }
        StateSpec::Noon { n } => {
            let a = FockVector::number_state2(n, 0, cutoff)?;
            let b = FockVector::number_state2(0, n, cutoff)?;
            Ok(a.add(&b)?.scale(r2))
        }
        StateSpec::Ecs { alpha } => {
            let coh = coherent_vector(real(alpha), cutoff)?;
            let vac = FockVector::vacuum(cutoff);
            let a = coh.tensor(&vac)?;
            let b = vac.tensor(&coh)?;
            Ok(a.add(&b)?.scale(real(norm_ecs(alpha))))
        }
    }
}

/// Mean photon number through the phase shift per use of the state.
pub fn mean_photons_through_phase(spec: &StateSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match *spec {
        StateSpec::Coherent { alpha } => alpha * alpha,
        StateSpec::Cat { alpha } => norm_cat(alpha).powi(2) * alpha * alpha,
        StateSpec::Ecs { alpha } => norm_ecs(alpha).powi(2) * alpha * alpha,
        StateSpec::No { n } | StateSpec::Noon { n } => n as f64 / 2.0,
        StateSpec::Ucs { n_phi, .. } => n_phi,
    })
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Coherent { alpha } => write!(f, "coh:alpha={alpha}"),
            StateSpec::Cat { alpha } => write!(f, "cat:alpha={alpha}"),
            StateSpec::Ucs { a, n_phi } => write!(f, "ucs:a={a},nphi={n_phi}"),
            StateSpec::No { n } => write!(f, "no:N={n}"),
            StateSpec::Noon { n } => write!(f, "noon:N={n}"),
            StateSpec::Ecs { alpha } => write!(f, "ecs:alpha={alpha}"),
        }
    }
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("`{s}`: expected `kind:key=value,...`")))?;
        let mut fields: Vec<(&str, &str)> = Vec::new();
        for tok in params.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("`{tok}`: expected key=value")))?;
            fields.push((k.trim(), v.trim()));
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Parse(format!("`{s}`: missing `{key}`")))
        };
        let float = |key: &str| -> Result<f64> {
            let v = get(key)?;
            v.parse::<f64>()
                .map_err(|_| Error::Parse(format!("`{key}={v}`: not a number")))
        };
        let int = |key: &str| -> Result<usize> {
            let v = get(key)?;
            v.parse::<usize>()
                .map_err(|_| Error::Parse(format!("`{key}={v}`: not a non-negative integer")))
        };
        let allowed: &[&str] = match kind.trim() {
            "coh" | "cat" | "ecs" => &["alpha"],
            "ucs" => &["a", "nphi"],
            "no" | "noon" => &["N"],
            other => return Err(Error::Parse(format!("`{other}`: unknown state kind"))),
        };
        if let Some((k, _)) = fields.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(Error::Parse(format!("`{k}`: unknown parameter for `{kind}`")));
        }
        let spec = match kind.trim() {
            "coh" => StateSpec::Coherent { alpha: float("alpha")? },
            "cat" => StateSpec::Cat { alpha: float("alpha")? },
            "ecs" => StateSpec::Ecs { alpha: float("alpha")? },
            "ucs" => StateSpec::Ucs {
                a: float("a")?,
                n_phi: float("nphi")?,
            },
            "no" => StateSpec::No { n: int("N")? },
            _ => StateSpec::Noon { n: int("N")? },
        };
        spec.validate().map_err(|e| Error::Parse(format!("`{s}`: {e}")))?;
        Ok(spec)
    }
}

/// Parses a comma-separated list of specs where a spec's own parameters are
/// also comma-separated: `cat:alpha=3,ucs:a=0.7,nphi=4.45`. A token without
/// `:` continues the previous spec.
pub fn parse_spec_list(s: &str) -> Result<Vec<StateSpec>> {
    let mut groups: Vec<String> = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if tok.contains(':') {
            groups.push(tok.to_string());
        } else if let Some(last) = groups.last_mut() {
            last.push(',');
            last.push_str(tok);
        } else {
            return Err(Error::Parse(format!("`{tok}`: parameter before any state kind")));
        }
    }
    if groups.is_empty() {
        return Err(Error::Parse("empty state list".into()));
    }
    groups.iter().map(|g| g.parse()).collect()
}

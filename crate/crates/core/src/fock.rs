//! Truncated Fock-space linear algebra.
//!
//! Single-mode objects live on the basis `|0>, ..., |cutoff>`. Two-mode
//! objects use the tensor basis `|n1, n2>` flattened row-major, with mode 1
//! (the phase mode) as the outer index.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Allowed deviation of a normalized state's squared norm from one.
pub const NORM_TOL: f64 = 1e-10;
/// Largest Poisson tail a coherent amplitude may leave beyond the cutoff.
pub const TAIL_TOL: f64 = 1e-12;
/// Hermiticity tolerance for flagged operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Fraction of the basis (at the top) excluded from displacement unitarity checks.
pub const GUARD_BAND_FRACTION: f64 = 0.2;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modes {
    One,
    Two,
}

impl Modes {
    pub fn count(self) -> usize {
        match self {
            Modes::One => 1,
            Modes::Two => 2,
        }
    }

    pub fn dim(self, cutoff: usize) -> usize {
        (cutoff + 1).pow(self.count() as u32)
    }
}

/// `ln(n!)` for `n = 0..=max`, accumulated term by term.
pub fn ln_factorials(max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=max {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Cutoff covering a mean photon number `mean` with Poisson headroom.
pub fn cutoff_for_mean(mean: f64) -> usize {
    let mean = mean.max(0.0);
    (mean + 8.0 * mean.sqrt() + 20.0).ceil() as usize
}

/// Cutoff for a pipeline whose largest coherent amplitude is `|alpha| + |beta|`.
pub fn cutoff_for_amplitudes(alpha: f64, beta: f64) -> usize {
    let s = alpha.abs() + beta.abs();
    cutoff_for_mean(s * s)
}

/// Poisson mass `sum_{n > cutoff} e^{-mean} mean^n / n!`.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let ln_mean = mean.ln();
    let mut ln_fact = ln_factorial(cutoff);
    let mut sum = 0.0;
    let mut n = cutoff;
    loop {
        n += 1;
        ln_fact += (n as f64).ln();
        let term = (-mean + n as f64 * ln_mean - ln_fact).exp();
        sum += term;
        if n as f64 > mean && (term <= 1e-30 * sum || term == 0.0) {
            break;
        }
        if n > cutoff + 100_000 {
            break;
        }
    }
    sum
}

const EXACT_LN_FACT: usize = 256;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| ln_factorials(EXACT_LN_FACT))
}

fn stirling_correction(n: f64) -> f64 {
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// `ln(n!)`; exact accumulation for small `n`, Stirling series beyond.
pub fn ln_factorial(n: usize) -> f64 {
    if n <= EXACT_LN_FACT {
        return ln_fact_table()[n];
    }
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + stirling_correction(x)
}

/// `ln(e^{-mean} mean^n / n!)`, written to avoid cancellation at large `n`.
pub fn ln_poisson(n: usize, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if n <= EXACT_LN_FACT {
        return -mean + n as f64 * mean.ln() - ln_fact_table()[n];
    }
    let x = n as f64;
    let d = (mean - x) / x;
    -x * (d - d.ln_1p()) - 0.5 * (2.0 * std::f64::consts::PI * x).ln() - stirling_correction(x)
}

/// `<n|z>` for `n = lo..=hi`.
pub fn coherent_amplitudes(z: C64, lo: usize, hi: usize) -> Vec<C64> {
    let r2 = z.norm_sqr();
    if r2 == 0.0 {
        return (lo..=hi).map(|n| if n == 0 { ONE } else { ZERO }).collect();
    }
    let arg = z.arg();
    (lo..=hi)
        .map(|n| C64::from_polar((0.5 * ln_poisson(n, r2)).exp(), n as f64 * arg))
        .collect()
}

/// State vector over the truncated photon-number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    amplitudes: CVector,
    cutoff: usize,
    modes: Modes,
}

impl FockVector {
    pub fn new(amplitudes: CVector, cutoff: usize, modes: Modes) -> Result<Self> {
        if amplitudes.len() != modes.dim(cutoff) {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for cutoff {} with {} mode(s)",
                amplitudes.len(),
                cutoff,
                modes.count()
            )));
        }
        Ok(FockVector {
            amplitudes,
            cutoff,
            modes,
        })
    }

    pub fn zeros(cutoff: usize, modes: Modes) -> Self {
        FockVector {
            amplitudes: CVector::zeros(modes.dim(cutoff)),
            cutoff,
            modes,
        }
    }

    /// Single-mode number state `|n>`.
    pub fn number_state(n: usize, cutoff: usize) -> Result<Self> {
        if n > cutoff {
            return Err(Error::InvalidArgument(format!(
                "number state {n} exceeds cutoff {cutoff}"
            )));
        }
        let mut v = Self::zeros(cutoff, Modes::One);
        v.amplitudes[n] = ONE;
        Ok(v)
    }

    /// Two-mode product basis state `|n1, n2>`.
    pub fn number_state2(n1: usize, n2: usize, cutoff: usize) -> Result<Self> {
        if n1 > cutoff || n2 > cutoff {
            return Err(Error::InvalidArgument(format!(
                "number state ({n1},{n2}) exceeds cutoff {cutoff}"
            )));
        }
        let mut v = Self::zeros(cutoff, Modes::Two);
        v.amplitudes[n1 * (cutoff + 1) + n2] = ONE;
        Ok(v)
    }

    pub fn vacuum(cutoff: usize) -> Self {
        let mut v = Self::zeros(cutoff, Modes::One);
        v.amplitudes[0] = ONE;
        v
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> Modes {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Amplitude of the two-mode basis state `|n1, n2>`.
    pub fn amplitude2(&self, n1: usize, n2: usize) -> C64 {
        self.amplitudes[n1 * (self.cutoff + 1) + n2]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> Result<C64> {
        self.check_same_space(other)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn scale(&self, s: C64) -> FockVector {
        FockVector {
            amplitudes: &self.amplitudes * s,
            ..self.clone()
        }
    }

    pub fn add(&self, other: &FockVector) -> Result<FockVector> {
        self.check_same_space(other)?;
        Ok(FockVector {
            amplitudes: &self.amplitudes + &other.amplitudes,
            ..self.clone()
        })
    }

    /// Returns the normalized vector. A zero vector is rejected.
    pub fn normalized(&self) -> Result<FockVector> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(self.scale(C64::new(1.0 / n.sqrt(), 0.0)))
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "state is not normalized: |psi|^2 = {n}"
            )));
        }
        Ok(())
    }

    /// `<self|A|self>`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        let applied = op.apply(self)?;
        self.inner(&applied)
    }

    fn check_same_space(&self, other: &FockVector) -> Result<()> {
        if self.cutoff != other.cutoff || self.modes != other.modes {
            return Err(Error::DimensionMismatch(format!(
                "cutoff/modes ({}, {}) vs ({}, {})",
                self.cutoff,
                self.modes.count(),
                other.cutoff,
                other.modes.count()
            )));
        }
        Ok(())
    }
}

/// Coherent state `|alpha>` truncated at `cutoff`.
///
/// Fails when the Poisson tail beyond the cutoff exceeds [`TAIL_TOL`]; the
/// vector is never renormalized to hide truncation.
pub fn coherent_vector(alpha: C64, cutoff: usize) -> Result<FockVector> {
    let tail = poisson_tail(alpha.norm_sqr(), cutoff);
    if tail > TAIL_TOL {
        return Err(Error::Truncation {
            cutoff,
            tail,
            limit: TAIL_TOL,
        });
    }
    let amps = coherent_amplitudes(alpha, 0, cutoff);
    FockVector::new(CVector::from_vec(amps), cutoff, Modes::One)
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Dense(CMatrix),
    Diagonal(CVector),
}

/// Linear operator on a truncated Fock space.
///
/// Diagonal operators (number operators, phase shifts) are stored as their
/// diagonal so two-mode generators stay cheap at large cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    repr: Repr,
    cutoff: usize,
    modes: Modes,
    hermitian: bool,
}

impl Operator {
    pub fn from_matrix(matrix: CMatrix, cutoff: usize, modes: Modes, hermitian: bool) -> Result<Self> {
        let dim = modes.dim(cutoff);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if hermitian {
            let err = hermitian_error(&matrix);
            if err > HERMITIAN_TOL {
                return Err(Error::NotHermitian(err));
            }
        }
        Ok(Operator {
            repr: Repr::Dense(matrix),
            cutoff,
            modes,
            hermitian,
        })
    }

    pub fn from_diagonal(diag: CVector, cutoff: usize, modes: Modes) -> Result<Self> {
        if diag.len() != modes.dim(cutoff) {
            return Err(Error::DimensionMismatch(format!(
                "diagonal of length {} for dimension {}",
                diag.len(),
                modes.dim(cutoff)
            )));
        }
        let hermitian = diag.iter().all(|d| d.im.abs() <= HERMITIAN_TOL);
        Ok(Operator {
            repr: Repr::Diagonal(diag),
            cutoff,
            modes,
            hermitian,
        })
    }

    pub fn identity(cutoff: usize, modes: Modes) -> Self {
        Operator {
            repr: Repr::Diagonal(CVector::from_element(modes.dim(cutoff), ONE)),
            cutoff,
            modes,
            hermitian: true,
        }
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

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn diagonal(&self) -> Option<&CVector> {
        match &self.repr {
            Repr::Diagonal(d) => Some(d),
            Repr::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Diagonal(d) => CMatrix::from_diagonal(d),
        }
    }

    pub fn apply_vec(&self, v: &CVector) -> CVector {
        match &self.repr {
            Repr::Dense(m) => m * v,
            Repr::Diagonal(d) => v.component_mul(d),
        }
    }

    pub fn apply(&self, v: &FockVector) -> Result<FockVector> {
        if v.cutoff != self.cutoff || v.modes != self.modes {
            return Err(Error::DimensionMismatch("operator/vector space mismatch".into()));
        }
        FockVector::new(self.apply_vec(&v.amplitudes), v.cutoff, v.modes)
    }

    /// `self * rhs`.
    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if self.cutoff != rhs.cutoff || self.modes != rhs.modes {
            return Err(Error::DimensionMismatch("operator space mismatch".into()));
        }
        let repr = match (&self.repr, &rhs.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => Repr::Diagonal(a.component_mul(b)),
            (Repr::Diagonal(a), Repr::Dense(b)) => {
                let mut m = b.clone();
                for (i, mut row) in m.row_iter_mut().enumerate() {
                    row *= a[i];
                }
                Repr::Dense(m)
            }
            (Repr::Dense(a), Repr::Diagonal(b)) => {
                let mut m = a.clone();
                for (j, mut col) in m.column_iter_mut().enumerate() {
                    col *= b[j];
                }
                Repr::Dense(m)
            }
            (Repr::Dense(a), Repr::Dense(b)) => Repr::Dense(a * b),
        };
        Ok(Operator {
            repr,
            cutoff: self.cutoff,
            modes: self.modes,
            hermitian: false,
        })
    }

    pub fn adjoint(&self) -> Operator {
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m.adjoint()),
            Repr::Diagonal(d) => Repr::Diagonal(d.map(|c| c.conj())),
        };
        Operator { repr, ..self.clone() }
    }

    /// Largest element-wise distance between two operators.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs_diff(&self.to_dense(), &other.to_dense())
    }

    /// Lifts a single-mode operator onto `mode` (1 or 2) of a two-mode space.
    pub fn on_mode(&self, mode: usize) -> Result<Operator> {
        if self.modes != Modes::One {
            return Err(Error::InvalidArgument("on_mode needs a single-mode operator".into()));
        }
        let id = Operator::identity(self.cutoff, Modes::One);
        match mode {
            1 => tensor_operators(self, &id),
            2 => tensor_operators(&id, self),
            _ => Err(Error::InvalidArgument(format!("mode {mode} out of range"))),
        }
    }
}

/// `n = a^dagger a` on a single mode.
pub fn number_operator(cutoff: usize) -> Operator {
    let d = CVector::from_iterator(cutoff + 1, (0..=cutoff).map(|n| C64::new(n as f64, 0.0)));
    Operator {
        repr: Repr::Diagonal(d),
        cutoff,
        modes: Modes::One,
        hermitian: true,
    }
}

/// Number operator of `mode` in a space with `modes` modes.
pub fn number_operator_on(mode: usize, cutoff: usize, modes: Modes) -> Result<Operator> {
    match (modes, mode) {
        (Modes::One, 1) => Ok(number_operator(cutoff)),
        (Modes::Two, 1 | 2) => number_operator(cutoff).on_mode(mode),
        _ => Err(Error::InvalidArgument(format!(
            "mode {mode} out of range for {} mode(s)",
            modes.count()
        ))),
    }
}

/// Phase shift `U(phi) = exp(i phi n)`.
pub fn phase_shift(phi: f64, cutoff: usize) -> Operator {
    let d = CVector::from_iterator(cutoff + 1, (0..=cutoff).map(|n| C64::from_polar(1.0, phi * n as f64)));
    Operator {
        repr: Repr::Diagonal(d),
        cutoff,
        modes: Modes::One,
        hermitian: false,
    }
}

/// Displacement `D(beta) = exp(beta a^dagger - beta^* a)` from closed-form
/// matrix elements.
///
/// For `m >= n`,
/// `<m|D|n> = sqrt(n!/m!) beta^(m-n) e^{-|beta|^2/2} L_n^(m-n)(|beta|^2)`,
/// evaluated through a recurrence on the normalized quantity so nothing
/// overflows. Elements with `m < n` follow from `<m|D(beta)|n> = <n|D(-beta)|m>^*`.
/// Fails if the coherent state `D(beta)|0>` itself does not fit in the cutoff.
pub fn displacement_operator(beta: C64, cutoff: usize) -> Result<Operator> {
    let x = beta.norm_sqr();
    let tail = poisson_tail(x, cutoff);
    if tail > TAIL_TOL {
        return Err(Error::Truncation {
            cutoff,
            tail,
            limit: TAIL_TOL,
        });
    }
    let dim = cutoff + 1;
    let mut m = CMatrix::zeros(dim, dim);
    if x == 0.0 {
        return Ok(Operator {
            repr: Repr::Dense(CMatrix::identity(dim, dim)),
            cutoff,
            modes: Modes::One,
            hermitian: true,
        });
    }
    let lf = ln_factorials(cutoff);
    let ln_x = x.ln();
    let arg = beta.arg();
    for k in 0..dim {
        // f_n = sqrt(n!/(n+k)!) e^{-x/2} x^{k/2} L_n^{(k)}(x), n = 0..dim-1-k
        let kf = k as f64;
        let mut prev = 0.0;
        let mut cur = (-0.5 * x + 0.5 * kf * ln_x - 0.5 * lf[k]).exp();
        let lower = C64::from_polar(1.0, kf * arg);
        let upper = if k % 2 == 0 { lower.conj() } else { -lower.conj() };
        for n in 0..dim - k {
            m[(n + k, n)] = lower * cur;
            if k > 0 {
                m[(n, n + k)] = upper * cur;
            }
            let nf = n as f64;
            let next = ((2.0 * nf + 1.0 + kf - x) * cur - (nf * (nf + kf)).sqrt() * prev)
                / ((nf + 1.0) * (nf + kf + 1.0)).sqrt();
            prev = cur;
            cur = next;
        }
    }
    Ok(Operator {
        repr: Repr::Dense(m),
        cutoff,
        modes: Modes::One,
        hermitian: false,
    })
}

/// Size of the interior block on which displacement unitarity is asserted.
pub fn guard_band_interior(cutoff: usize) -> usize {
    let excluded = ((cutoff + 1) as f64 * GUARD_BAND_FRACTION).ceil() as usize;
    (cutoff + 1).saturating_sub(excluded)
}

/// Number of leading columns of `D(beta)` on a `cutoff` basis that are unitary.
///
/// `D(beta)|n>` reaches photon numbers around `(sqrt(n) + |beta|)^2`, so the
/// usable block is the set of `n` whose displaced column fits under `cutoff`
/// by the same rule as [`cutoff_for_amplitudes`], capped by the 20% guard band.
pub fn displacement_interior(beta: f64, cutoff: usize) -> usize {
    let cap = guard_band_interior(cutoff);
    (0..cap)
        .take_while(|&n| cutoff_for_amplitudes((n as f64).sqrt(), beta) <= cutoff)
        .count()
}

/// Kronecker product of two single-mode objects.
pub trait Tensor: Sized {
    type Output;
    fn tensor(&self, other: &Self) -> Result<Self::Output>;
}

impl Tensor for FockVector {
    type Output = FockVector;

    fn tensor(&self, other: &FockVector) -> Result<FockVector> {
        check_single_pair(self.modes, other.modes, self.cutoff, other.cutoff)?;
        FockVector::new(self.amplitudes.kronecker(&other.amplitudes), self.cutoff, Modes::Two)
    }
}

impl Tensor for Operator {
    type Output = Operator;

    fn tensor(&self, other: &Operator) -> Result<Operator> {
        tensor_operators(self, other)
    }
}

fn tensor_operators(a: &Operator, b: &Operator) -> Result<Operator> {
    check_single_pair(a.modes, b.modes, a.cutoff, b.cutoff)?;
    let repr = match (&a.repr, &b.repr) {
        (Repr::Diagonal(x), Repr::Diagonal(y)) => Repr::Diagonal(x.kronecker(y)),
        _ => Repr::Dense(a.to_dense().kronecker(&b.to_dense())),
    };
    Ok(Operator {
        repr,
        cutoff: a.cutoff,
        modes: Modes::Two,
        hermitian: a.hermitian && b.hermitian,
    })
}

fn check_single_pair(ma: Modes, mb: Modes, ca: usize, cb: usize) -> Result<()> {
    if ma != Modes::One || mb != Modes::One {
        return Err(Error::DimensionMismatch("tensor needs two single-mode factors".into()));
    }
    if ca != cb {
        return Err(Error::DimensionMismatch(format!("cutoffs {ca} and {cb} differ")));
    }
    Ok(())
}

/// Density operator on a truncated Fock space.
///
/// `tail_loss` records trace that a channel pushed below the cutoff edge and
/// that was deliberately not renormalized away.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
    cutoff: usize,
    modes: Modes,
    tail_loss: f64,
}

impl DensityOperator {
    /// Validates trace, Hermiticity and positivity.
    pub fn new(matrix: CMatrix, cutoff: usize, modes: Modes) -> Result<Self> {
        let rho = Self::new_unchecked(matrix, cutoff, modes)?;
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn new_unchecked(matrix: CMatrix, cutoff: usize, modes: Modes) -> Result<Self> {
        let dim = modes.dim(cutoff);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} density matrix for dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(DensityOperator {
            matrix,
            cutoff,
            modes,
            tail_loss: 0.0,
        })
    }

    pub fn from_pure(psi: &FockVector) -> Self {
        let a = psi.amplitudes();
        DensityOperator {
            matrix: a * a.adjoint(),
            cutoff: psi.cutoff,
            modes: psi.modes,
            tail_loss: 0.0,
        }
    }

    pub(crate) fn with_tail_loss(mut self, tail: f64) -> Self {
        self.tail_loss = tail;
        self
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> Modes {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn tail_loss(&self) -> f64 {
        self.tail_loss
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn diagonal_probabilities(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|c| c.re).collect()
    }

    pub fn hermitian_error(&self) -> f64 {
        hermitian_error(&self.matrix)
    }

    /// Checks the density-operator invariants, allowing for recorded tail loss.
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr + self.tail_loss - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "trace {tr} (tail loss {}) is not 1",
                self.tail_loss
            )));
        }
        let herm = self.hermitian_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let eig = eigh(&self.matrix)?;
        let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if min < -1e-10 {
            return Err(Error::InvalidArgument(format!(
                "negative eigenvalue {min:e} in density operator"
            )));
        }
        Ok(())
    }

    /// `U rho U^dagger`.
    pub fn conjugate_by(&self, u: &Operator) -> Result<DensityOperator> {
        if u.cutoff != self.cutoff || u.modes != self.modes {
            return Err(Error::DimensionMismatch("operator/density space mismatch".into()));
        }
        let matrix = match &u.repr {
            Repr::Diagonal(d) => {
                let mut m = self.matrix.clone();
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        m[(i, j)] *= d[i] * d[j].conj();
                    }
                }
                m
            }
            Repr::Dense(um) => um * &self.matrix * um.adjoint(),
        };
        Ok(DensityOperator {
            matrix,
            cutoff: self.cutoff,
            modes: self.modes,
            tail_loss: self.tail_loss,
        })
    }

    pub fn max_abs_diff(&self, other: &DensityOperator) -> f64 {
        max_abs_diff(&self.matrix, &other.matrix)
    }
}

/// Eigenvalues in descending order with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl EigenSystem {
    pub fn reconstruct(&self) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::new(self.eigenvalues[j], 0.0);
        }
        scaled * v.adjoint()
    }

    /// `max |V^dagger V - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let g = v.adjoint() * v;
        max_abs_diff(&g, &CMatrix::identity(g.nrows(), g.ncols()))
    }
}

/// Hermitian eigendecomposition; rejects inputs that are not Hermitian to 1e-10.
pub fn eigh(a: &CMatrix) -> Result<EigenSystem> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("eigh needs a square matrix".into()));
    }
    let herm = hermitian_error(a);
    if herm > 1e-10 {
        return Err(Error::NotHermitian(herm));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(EigenSystem {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    // symmetrize so the solver sees an exactly Hermitian input
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    // nalgebra's own QR sweep returns NaN on spectra with large exactly-zero
    // clusters (lossy few-photon states), so only its reduction is used here
    let (q, mut d, off) = sym.symmetric_tridiagonalize().unpack();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off.as_slice());
    let mut z = DMatrix::<f64>::identity(n, n);
    tridiagonal_ql(d.as_mut_slice(), &mut e, &mut z)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let eigenvalues = order.iter().map(|&i| d[i]).collect();
    let mut zs = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for (k, x) in z.column(src).iter().enumerate() {
            zs[(k, dst)] = C64::new(*x, 0.0);
        }
    }
    let eigenvectors = q * zs;
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Implicit QL with Wilkinson shifts on a real symmetric tridiagonal matrix.
///
/// `d` holds the diagonal, `e[i]` the element below `d[i]` (last entry
/// ignored). On return `d` holds the eigenvalues and the columns of `z` have
/// been rotated into the eigenvectors.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut DMatrix<f64>) -> Result<()> {
    let n = d.len();
    if n < 2 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let max_iter = 30 * n;
    let mut iterations = 0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > f64::EPSILON * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::NotConverged {
                        what: "tridiagonal eigensolver",
                        iterations,
                        residual: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (mut left, mut right) = z.columns_range_pair_mut(i, i + 1);
                    for (zi, zi1) in left.iter_mut().zip(right.iter_mut()) {
                        let h = *zi1;
                        *zi1 = s * *zi + c * h;
                        *zi = c * *zi - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= f64::EPSILON * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

pub fn hermitian_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut err: f64 = 0.0;
    for j in 0..n {
        for i in j..n {
            err = err.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    err
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

//! The correlator chain: matched-filter baseline, the partial and complete
//! integrate-and-dump stages of the reduced-complexity correlator, and a
//! dense full-matrix MMSE reference for small synthetic codes.
//!
//! The matched filter correlates the received vector against the unmodified
//! prompt replica; its decision flips once a delayed replica's amplitude
//! times the corresponding autocorrelation sidelobe exceeds the peak, which
//! puts its immunity near `20 log10(1023 / 65) ~ 23.9 dB` of ISR for C/A
//! codes. The partial integrate-and-dump performs code mixing and group
//! summation in one pass, reducing the length-`N` epoch to `M = N / g`
//! partial correlations; the complete integrate-and-dump contracts those
//! against a weight vector to produce the bit decision.

use crate::linalg::Matrix;
use crate::prn::PrnCode;
use crate::signal::EpochVector;
use crate::{Error, Result};

/// One bit decision. Zero resolves to +1 so the decision is total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOutput {
    /// The decision variable, an inner product against the received vector.
    pub d: f64,
    /// `sign(d)` with `sign(0) = +1`.
    pub bit_decision: i8,
    /// True while the weight window has not filled yet and the decision fell
    /// back to the matched-filter equivalent.
    pub warmup: bool,
}

impl DecisionOutput {
    pub fn from_decision_variable(d: f64, warmup: bool) -> DecisionOutput {
        DecisionOutput {
            d,
            bit_decision: if d < 0.0 { -1 } else { 1 },
            warmup,
        }
    }
}

/// The length-`M` vector of per-group partial correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelations {
    values: Vec<f64>,
    g: usize,
}

impl PartialCorrelations {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_size(&self) -> usize {
        self.g
    }

    pub fn group_count(&self) -> usize {
        self.values.len()
    }
}

/// Conventional prompt correlator: `d = sum_n code[n] * r[n]`.
pub fn matched_filter_decision(r: &EpochVector, code: &PrnCode) -> Result<DecisionOutput> {
    if r.samples.len() != code.len() {
        return Err(Error::invalid(format!(
            "epoch holds {} samples, code {} chips",
            r.samples.len(),
            code.len()
        )));
    }
    let d = code
        .chips()
        .iter()
        .zip(&r.samples)
        .map(|(&c, &s)| c as f64 * s)
        .sum();
    Ok(DecisionOutput::from_decision_variable(d, false))
}

/// ISR above which a single synchronized replica at a sidelobe of value
/// `sidelobe` flips the matched-filter decision when its bit opposes.
pub fn mf_flip_threshold_db(peak: i32, sidelobe: i32) -> f64 {
    20.0 * (peak as f64 / sidelobe.unsigned_abs() as f64).log10()
}

/// Code mixing and group summation in one pass:
/// `values[i] = sum_{j in group i} code[j] * r[j]` for `M = N / g` groups.
pub fn partial_integrate_dump(
    r: &EpochVector,
    code: &PrnCode,
    g: usize,
) -> Result<PartialCorrelations> {
    let n = code.len();
    if r.samples.len() != n {
        return Err(Error::invalid(format!(
            "epoch holds {} samples, code {} chips",
            r.samples.len(),
            n
        )));
    }
    if g == 0 || n % g != 0 {
        return Err(Error::invalid(format!(
            "group size {g} does not divide epoch length {n}"
        )));
    }
    let values = code
        .chips()
        .chunks_exact(g)
        .zip(r.samples.chunks_exact(g))
        .map(|(cs, rs)| cs.iter().zip(rs).map(|(&c, &s)| c as f64 * s).sum())
        .collect();
    Ok(PartialCorrelations { values, g })
}

/// Contracts the partial correlations against a weight vector:
/// `d = w . c`. Unit weights reproduce the matched filter.
pub fn complete_integrate(c: &PartialCorrelations, w: &[f64]) -> Result<DecisionOutput> {
    if w.len() != c.values.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} partial correlations",
            w.len(),
            c.values.len()
        )));
    }
    let d = w.iter().zip(&c.values).map(|(a, b)| a * b).sum();
    Ok(DecisionOutput::from_decision_variable(d, false))
}

/// Sample estimate of the full `N x N` received-signal autocorrelation.
#[derive(Debug, Clone)]
pub struct FullAutocorr {
    pub matrix: Matrix,
    pub sample_count: usize,
}

/// Averages `r r^T` over the supplied epochs.
pub fn estimate_full_autocorr(epochs: &[EpochVector]) -> Result<FullAutocorr> {
    if epochs.len() < 2 {
        return Err(Error::invalid("need at least 2 epochs to estimate R"));
    }
    let n = epochs[0].samples.len();
    let mut sum = Matrix::zeros(n);
    for e in epochs {
        if e.samples.len() != n {
            return Err(Error::invalid("epochs differ in length"));
        }
        if e.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sample in epoch".into()));
        }
        sum.add_scaled_outer(&e.samples, 1.0);
    }
    Ok(FullAutocorr {
        matrix: sum.scaled(1.0 / epochs.len() as f64),
        sample_count: epochs.len(),
    })
}

/// Dense MMSE despreading reference: estimates `R` from the epochs and
/// returns `p * (R + nu I)^{-1} s`.
///
/// This is the test reference for the group-weighted solution, intended for
/// small synthetic codes (N <= 128); the `N x N` solve makes it useless as a
/// runtime path.
pub fn full_mmse_oracle(
    epochs: &[EpochVector],
    code: &PrnCode,
    p: f64,
    nu: f64,
) -> Result<Vec<f64>> {
    let est = estimate_full_autocorr(epochs)?;
    if est.matrix.dim() != code.len() {
        return Err(Error::invalid("epoch length does not match code length"));
    }
    if !(p.is_finite() && nu.is_finite() && nu >= 0.0) {
        return Err(Error::Numeric("p and nu must be finite, nu >= 0".into()));
    }
    let mut reg = est.matrix;
    reg.add_diagonal(nu);
    let chol = reg.cholesky()?;
    let s = code.to_f64();
    let mut h = chol.solve(&s);
    for v in h.iter_mut() {
        *v *= p;
    }
    Ok(h)
}

//! Truncated formal power series, the formal M-Borel / M-Laplace transforms
//! (coefficient-wise division / multiplication by the moment sequence), and
//! certification of the weighted sup norm `sup_p |a_p| / (A^p p! M_p)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::moments::MomentTable;
use crate::seqcore::SequenceModel;

/// Hard cap on the truncation order; past this, factorial scales stop being
/// meaningful in double precision even through the log domain.
pub const MAX_ORDER: usize = 512;

#[derive(Debug, Error)]
pub enum FormalError {
    #[error("series order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("empty coefficient list")]
    Empty,
    #[error("moment table covers p <= {have}, series needs p <= {need}")]
    MomentTableTooShort { need: usize, have: usize },
    #[error("cannot certify the zero series")]
    ZeroSeries,
    #[error("|z| = {modulus} outside the evaluation guard {guard}")]
    OutsideGuard { modulus: f64, guard: f64 },
    #[error("unknown series convention {0:?}")]
    UnknownConvention(String),
}

/// Weighted sup-norm certificate: `|a_p| <= c * a^p * p! * M_p` for all
/// stored `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCert {
    pub c: f64,
    pub a: f64,
}

/// `sum a_p z^p` truncated at order `N = coeffs.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    pub coeffs: Vec<Complex64>,
    pub norm_cert: Option<NormCert>,
}

impl TruncatedSeries {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self, FormalError> {
        if coeffs.is_empty() {
            return Err(FormalError::Empty);
        }
        if coeffs.len() - 1 > MAX_ORDER {
            return Err(FormalError::OrderTooLarge(coeffs.len() - 1));
        }
        Ok(TruncatedSeries { coeffs, norm_cert: None })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm() == 0.0)
    }
}

fn require_coverage(series: &TruncatedSeries, moments: &MomentTable) -> Result<(), FormalError> {
    if !moments.covers(series.order()) {
        return Err(FormalError::MomentTableTooShort {
            need: series.order(),
            have: moments.pmax,
        });
    }
    Ok(())
}

/// Formal M-Borel transform: `a_p -> a_p / m(p)`. Any certificate on the
/// input is dropped; it can be re-fitted on the output.
pub fn formal_borel(
    series: &TruncatedSeries,
    moments: &MomentTable,
) -> Result<TruncatedSeries, FormalError> {
    require_coverage(series, moments)?;
    let coeffs = series
        .coeffs
        .iter()
        .enumerate()
        .map(|(p, a)| a / moments.m[p])
        .collect();
    Ok(TruncatedSeries { coeffs, norm_cert: None })
}

/// Formal M-Laplace transform: `a_p -> m(p) * a_p`; inverse of
/// [`formal_borel`] on the stored range.
pub fn formal_laplace(
    series: &TruncatedSeries,
    moments: &MomentTable,
) -> Result<TruncatedSeries, FormalError> {
    require_coverage(series, moments)?;
    let coeffs = series
        .coeffs
        .iter()
        .enumerate()
        .map(|(p, a)| a * moments.m[p])
        .collect();
    Ok(TruncatedSeries { coeffs, norm_cert: None })
}

/// `log(A^p p! M_p)` for the certificate weight.
fn log_weight(seq: &SequenceModel, p: usize, log_a: f64) -> f64 {
    log_a * p as f64 + ln_gamma(p as f64 + 1.0) + seq.log_value(p)
}

/// Check `|a_p| <= c A^p p! M_p` for every stored coefficient, in the log
/// domain and with no slack.
pub fn verify_cert(series: &TruncatedSeries, seq: &SequenceModel, cert: &NormCert) -> bool {
    let (log_c, log_a) = (cert.c.ln(), cert.a.ln());
    series.coeffs.iter().enumerate().all(|(p, a)| {
        let n = a.norm();
        n == 0.0 || n.ln() <= log_c + log_weight(seq, p, log_a)
    })
}

/// Fit a norm certificate: `A` is the smallest geometric rate that pulls
/// every ratio `|a_p|/(p! M_p)` under `max(|a_0|, 1)`, and `C` the exact
/// sup of the weighted ratios at that rate. The result is re-verified
/// before it is returned.
pub fn certify_norm(
    series: &TruncatedSeries,
    seq: &SequenceModel,
) -> Result<NormCert, FormalError> {
    if series.is_zero() {
        return Err(FormalError::ZeroSeries);
    }
    let log_c0 = series.coeffs[0].norm().max(1.0).ln();
    let mut log_a = f64::NEG_INFINITY;
    for (p, a) in series.coeffs.iter().enumerate().skip(1) {
        let n = a.norm();
        if n == 0.0 {
            continue;
        }
        log_a = log_a.max((n.ln() - log_c0 - log_weight(seq, p, 0.0)) / p as f64);
    }
    if !log_a.is_finite() {
        log_a = 0.0; // only a_0 is nonzero
    }
    let mut log_c = f64::NEG_INFINITY;
    for (p, a) in series.coeffs.iter().enumerate() {
        let n = a.norm();
        if n > 0.0 {
            log_c = log_c.max(n.ln() - log_weight(seq, p, log_a));
        }
    }
    // absorb rounding of the log-domain fit, then re-check exactly
    let mut cert = NormCert { c: log_c.exp() * (1.0 + 1e-12), a: log_a.exp() };
    for _ in 0..8 {
        if verify_cert(series, seq, &cert) {
            return Ok(cert);
        }
        cert.c *= 1.0 + 1e-12;
    }
    // unreachable in practice; widen decisively rather than fail
    cert.c *= 1.0 + 1e-9;
    debug_assert!(verify_cert(series, seq, &cert));
    Ok(cert)
}

/// Horner evaluation of the truncated sum, guarded by a caller-supplied
/// radius.
pub fn eval_truncated(
    series: &TruncatedSeries,
    z: Complex64,
    radius_guard: f64,
) -> Result<Complex64, FormalError> {
    let modulus = z.norm();
    if modulus > radius_guard {
        return Err(FormalError::OutsideGuard { modulus, guard: radius_guard });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for a in series.coeffs.iter().rev() {
        acc = acc * z + a;
    }
    Ok(acc)
}

/// On-disk form: coefficients either as stored (`plain`) or divided by `p!`
/// on load (`over-factorial`, i.e. the file carries `f_p` of
/// `sum f_p/p! z^p`).
#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesFile {
    pub convention: String,
    pub coeffs: Vec<[f64; 2]>,
}

impl SeriesFile {
    pub fn into_series(self) -> Result<TruncatedSeries, FormalError> {
        let over_factorial = match self.convention.as_str() {
            "plain" => false,
            "over-factorial" => true,
            other => return Err(FormalError::UnknownConvention(other.to_string())),
        };
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(p, c)| {
                let mut v = Complex64::new(c[0], c[1]);
                if over_factorial {
                    v *= (-ln_gamma(p as f64 + 1.0)).exp();
                }
                v
            })
            .collect();
        TruncatedSeries::new(coeffs)
    }

    pub fn from_series(series: &TruncatedSeries) -> SeriesFile {
        SeriesFile {
            convention: "plain".into(),
            coeffs: series.coeffs.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

//! Strongly regular sequences: construction, regularity certificates, the
//! flatness gauge `h_M`, growth-index estimation and quasianalyticity
//! diagnostics.
//!
//! All internal arithmetic is done on `log M_p` so that Gevrey tables remain
//! usable far beyond the factorial overflow index.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Relative slack applied to every inequality certificate.
pub const CERT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SeqError {
    #[error("table entry at index {0} is not a positive finite number")]
    NonPositiveEntry(usize),
    #[error("M_0 must equal 1")]
    M0NotOne,
    #[error("table holds {got} entries, need pmax+1 = {need}")]
    TableTooShort { got: usize, need: usize },
    #[error("pmax must be at least 2")]
    PmaxTooSmall,
    #[error("linear-domain value overflows at index {0}")]
    OverflowAtIndex(usize),
    #[error("h_M argument is negative")]
    NegativeArgument,
    #[error("quotient-slope window too small (pmax = {0})")]
    WindowTooSmall(usize),
}

/// Where the sequence values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSource {
    /// `M_p = (p!)^alpha`.
    GevreyAlpha(f64),
    /// Explicit table `M_0..M_P`.
    ExplicitTable(Vec<f64>),
}

/// A sequence of positive reals `M_0..M_P` with `M_0 = 1`, stored in the
/// log domain together with its quotients `m_p = M_{p+1}/M_p`.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub source: SequenceSource,
    pub pmax: usize,
    log_values: Vec<f64>,
    log_quotients: Vec<f64>,
    pub gamma_override: Option<f64>,
}

/// Piecewise evaluation of `h_M` with a flag set when the stored table had
/// to be truncated (the minimizing index exceeded `pmax`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    pub log_value: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMethod {
    Override,
    QuotientSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WatsonVerdict {
    Divergent,
    Convergent,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ModerateGrowth {
    pub pass: bool,
    pub fitted_A: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StrongNq {
    pub pass: bool,
    pub fitted_B: f64,
    pub tail_depth: usize,
    /// Set when the two truncation depths disagree by more than 10%,
    /// i.e. the truncated tail sits too close to the fitted bound.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WatsonRecord {
    pub gamma_used: f64,
    pub verdict: WatsonVerdict,
    pub partial_sum: f64,
    pub terms: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub logconvex_pass: bool,
    pub moderate_growth: ModerateGrowth,
    pub strong_nq: StrongNq,
    pub gamma_estimate: f64,
    pub gamma_method: GammaMethod,
    pub watson: WatsonRecord,
}

impl RegularityReport {
    /// Flat key/value view used by the report writers.
    pub fn to_flat_map(&self) -> Vec<(String, serde_json::Value)> {
        use serde_json::json;
        vec![
            ("logconvex_pass".into(), json!(self.logconvex_pass)),
            ("moderate_growth_pass".into(), json!(self.moderate_growth.pass)),
            ("fitted_A".into(), json!(self.moderate_growth.fitted_A)),
            ("strong_nq_pass".into(), json!(self.strong_nq.pass)),
            ("fitted_B".into(), json!(self.strong_nq.fitted_B)),
            ("tail_depth".into(), json!(self.strong_nq.tail_depth)),
            ("strong_nq_inconclusive".into(), json!(self.strong_nq.inconclusive)),
            ("gamma_estimate".into(), json!(self.gamma_estimate)),
            ("gamma_method".into(), json!(format!("{:?}", self.gamma_method))),
            ("watson_gamma_used".into(), json!(self.watson.gamma_used)),
            ("watson_verdict".into(), json!(format!("{:?}", self.watson.verdict))),
            ("watson_partial_sum".into(), json!(self.watson.partial_sum)),
            ("watson_terms".into(), json!(self.watson.terms)),
        ]
    }
}

/// Build a sequence model, populating log-domain values and quotients.
pub fn build_sequence(source: SequenceSource, pmax: usize) -> Result<SequenceModel, SeqError> {
    if pmax < 2 {
        return Err(SeqError::PmaxTooSmall);
    }
    let log_values: Vec<f64> = match &source {
        SequenceSource::GevreyAlpha(alpha) => {
            if !(*alpha > 0.0 && alpha.is_finite()) {
                return Err(SeqError::NonPositiveEntry(0));
            }
            (0..=pmax).map(|p| alpha * ln_gamma(p as f64 + 1.0)).collect()
        }
        SequenceSource::ExplicitTable(vals) => {
            if vals.len() < pmax + 1 {
                return Err(SeqError::TableTooShort { got: vals.len(), need: pmax + 1 });
            }
            for (i, &v) in vals.iter().take(pmax + 1).enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(SeqError::NonPositiveEntry(i));
                }
            }
            if (vals[0] - 1.0).abs() > 1e-14 {
                return Err(SeqError::M0NotOne);
            }
            vals.iter().take(pmax + 1).map(|v| v.ln()).collect()
        }
    };
    let log_quotients: Vec<f64> =
        (0..pmax).map(|p| log_values[p + 1] - log_values[p]).collect();
    Ok(SequenceModel { source, pmax, log_values, log_quotients, gamma_override: None })
}

impl SequenceModel {
    /// `log M_p` for a stored index.
    pub fn log_value(&self, p: usize) -> f64 {
        self.log_values[p]
    }

    /// `M_p` in the linear domain; errs when it overflows an f64.
    pub fn value(&self, p: usize) -> Result<f64, SeqError> {
        let lv = self.log_values[p];
        if lv > f64::MAX.ln() {
            return Err(SeqError::OverflowAtIndex(p));
        }
        Ok(lv.exp())
    }

    /// `log m_p = log M_{p+1} - log M_p` for stored `p < pmax`.
    pub fn log_quotient(&self, p: usize) -> f64 {
        self.log_quotients[p]
    }

    pub fn quotients_nondecreasing(&self) -> bool {
        self.log_quotients.windows(2).all(|w| w[1] >= w[0] - CERT_SLACK)
    }

    /// The sequence `(M_p^s)`; a Gevrey sequence of order `alpha` maps to
    /// one of order `alpha*s`.
    pub fn power(&self, s: f64) -> Result<SequenceModel, SeqError> {
        match &self.source {
            SequenceSource::GevreyAlpha(alpha) => {
                build_sequence(SequenceSource::GevreyAlpha(alpha * s), self.pmax)
            }
            SequenceSource::ExplicitTable(vals) => {
                let powered: Vec<f64> = vals.iter().map(|v| v.powf(s)).collect();
                build_sequence(SequenceSource::ExplicitTable(powered), self.pmax)
            }
        }
    }

    /// `log h_M(t)` with the left-closed branch convention
    /// `t in [1/m_p, 1/m_{p-1}) -> M_p t^p`.
    ///
    /// Gevrey sources evaluate the exact minimizer for arbitrarily small
    /// `t`; explicit tables fall back to a brute-force minimum over the
    /// stored range and set the truncation flag.
    pub fn log_h(&self, t: f64) -> Result<HValue, SeqError> {
        if t < 0.0 || t.is_nan() {
            return Err(SeqError::NegativeArgument);
        }
        if t == 0.0 {
            return Ok(HValue { value: 0.0, log_value: f64::NEG_INFINITY, truncated: false });
        }
        let log_t = t.ln();
        // t >= 1/m_0  <=>  log t >= -log m_0
        if log_t >= -self.log_quotients[0] {
            return Ok(HValue { value: 1.0, log_value: 0.0, truncated: false });
        }
        if let SequenceSource::GevreyAlpha(alpha) = self.source {
            // m_p = (p+1)^alpha; smallest p with m_p >= 1/t.
            let target = (-log_t / alpha).exp(); // (1/t)^{1/alpha} = p+1 threshold
            let p = (target.ceil() - 1.0).max(0.0);
            let lh = alpha * ln_gamma(p + 1.0) + p * log_t;
            return Ok(HValue { value: lh.exp(), log_value: lh, truncated: false });
        }
        if self.quotients_nondecreasing() {
            // binary search: smallest p with log m_p >= -log t
            let q = &self.log_quotients;
            let needle = -log_t;
            if q[q.len() - 1] < needle {
                // t below 1/m_{pmax-1}: brute-force over stored indices
                return Ok(self.brute_force_h(log_t, true));
            }
            let mut lo = 0usize;
            let mut hi = q.len() - 1;
            while lo < hi {
                let mid = (lo + hi) / 2;
                if q[mid] >= needle {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let p = lo;
            let lh = self.log_values[p] + p as f64 * log_t;
            Ok(HValue { value: lh.exp(), log_value: lh, truncated: false })
        } else {
            Ok(self.brute_force_h(log_t, false))
        }
    }

    fn brute_force_h(&self, log_t: f64, truncated: bool) -> HValue {
        let mut best = f64::INFINITY;
        for (p, lv) in self.log_values.iter().enumerate() {
            let cand = lv + p as f64 * log_t;
            if cand < best {
                best = cand;
            }
        }
        HValue { value: best.exp(), log_value: best, truncated }
    }

    /// `h_M(t) = inf_p M_p t^p`, in `[0, 1]`.
    pub fn eval_h(&self, t: f64) -> Result<f64, SeqError> {
        Ok(self.log_h(t)?.value)
    }
}

/// Certify log-convexity, moderate growth and the strong
/// non-quasianalyticity tail inequality on the stored range.
pub fn check_regularity(seq: &SequenceModel, tail_depth: usize) -> Result<RegularityReport, SeqError> {
    let pmax = seq.pmax;
    let tail_depth = tail_depth.min(pmax.saturating_sub(2));

    let logconvex_pass = (1..pmax).all(|p| {
        2.0 * seq.log_value(p)
            <= seq.log_value(p - 1) + seq.log_value(p + 1) + CERT_SLACK * seq.log_value(p).abs().max(1.0)
    });

    // (mu): minimal grid A >= 1 with M_{p+l} <= A^{p+l} M_p M_l.
    let mut need_log_a = 0.0f64;
    for p in 0..=pmax {
        for l in 0..=(pmax - p) {
            if p + l == 0 {
                continue;
            }
            let excess = (seq.log_value(p + l) - seq.log_value(p) - seq.log_value(l))
                / (p + l) as f64;
            need_log_a = need_log_a.max(excess);
        }
    }
    let grid_step = 2f64.ln() / 8.0;
    let steps = (need_log_a / grid_step).ceil().max(0.0);
    let fitted_a = (steps * grid_step).exp();
    let moderate_growth = ModerateGrowth { pass: fitted_a <= 1e6, fitted_A: fitted_a.max(1.0) };

    let strong_nq = fit_strong_nq(seq, tail_depth);

    let (gamma_estimate, gamma_method) = match estimate_gamma(seq) {
        Ok(g) => g,
        Err(_) => (1.0, GammaMethod::QuotientSlope),
    };
    let watson = watson_diagnostic(seq, gamma_estimate);

    Ok(RegularityReport {
        logconvex_pass,
        moderate_growth,
        strong_nq,
        gamma_estimate,
        gamma_method,
        watson,
    })
}

/// Tail terms of the (gamma_1) sum: `u_l = M_l / ((l+1) M_{l+1})`.
fn nq_terms(seq: &SequenceModel) -> Vec<f64> {
    (0..seq.pmax)
        .map(|l| (-seq.log_quotient(l)).exp() / (l as f64 + 1.0))
        .collect()
}

/// Log-log slope of the terms over the window `[n/2, n)`; large for
/// geometric decay, ~1 for a harmonic tail.
fn loglog_slope(terms: &[f64], lo: usize, hi: usize) -> f64 {
    let xs: Vec<f64> = (lo..hi).map(|l| ((l + 1) as f64).ln()).collect();
    let ys: Vec<f64> = (lo..hi).map(|l| -terms[l].max(f64::MIN_POSITIVE).ln()).collect();
    least_squares_slope(&xs, &ys)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Estimated remainder of `sum_{l >= n} u_l` from a power-law fit of the
/// tail terms; `None` when the fit says the series diverges.
fn tail_remainder(terms: &[f64], n: usize) -> Option<f64> {
    let beta = loglog_slope(terms, n / 2, n);
    if beta <= 1.02 {
        return None;
    }
    // integral comparison for u_l ~ c l^{-beta}
    Some(terms[n - 1] * n as f64 / (beta - 1.0))
}

fn fit_strong_nq(seq: &SequenceModel, tail_depth: usize) -> StrongNq {
    let terms = nq_terms(seq);
    let n = terms.len();

    let bound_at = |depth: usize| -> Option<f64> {
        let rem = tail_remainder(&terms, depth)?;
        let mut best = 0.0f64;
        let mut suffix = rem;
        // accumulate suffix sums from depth-1 down to 0, track max of m_p * tail_p
        let mut tails = vec![0.0; depth];
        for p in (0..depth).rev() {
            suffix += terms[p];
            tails[p] = suffix;
        }
        for p in 0..=tail_depth.min(depth - 1) {
            let b = seq.log_quotient(p).exp() * tails[p];
            if b > best {
                best = b;
            }
        }
        Some(best)
    };

    let full = bound_at(n);
    let half = bound_at(n / 2);
    match (full, half) {
        (Some(bf), Some(bh)) => {
            let drift = (bf - bh).abs() / bf.max(f64::MIN_POSITIVE);
            StrongNq {
                pass: drift <= 0.10,
                fitted_B: bf,
                tail_depth,
                inconclusive: drift > 0.10 && drift <= 0.5,
            }
        }
        (Some(bf), None) => {
            StrongNq { pass: false, fitted_B: bf, tail_depth, inconclusive: true }
        }
        _ => StrongNq { pass: false, fitted_B: f64::INFINITY, tail_depth, inconclusive: false },
    }
}

/// Growth index: the override when present, otherwise the median slope of
/// `log m_p` against `log(p+1)` over the tail half of the table.
pub fn estimate_gamma(seq: &SequenceModel) -> Result<(f64, GammaMethod), SeqError> {
    if let Some(g) = seq.gamma_override {
        return Ok((g, GammaMethod::Override));
    }
    let pmax = seq.pmax;
    let lo = pmax / 2;
    let hi = pmax - 1;
    if hi <= lo + 1 {
        return Err(SeqError::WindowTooSmall(pmax));
    }
    let mut slopes: Vec<f64> = (lo..hi)
        .map(|p| {
            (seq.log_quotient(p + 1) - seq.log_quotient(p))
                / (((p + 2) as f64).ln() - ((p + 1) as f64).ln())
        })
        .collect();
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gamma = if slopes.len() % 2 == 1 {
        slopes[slopes.len() / 2]
    } else {
        0.5 * (slopes[slopes.len() / 2 - 1] + slopes[slopes.len() / 2])
    };
    Ok((gamma, GammaMethod::QuotientSlope))
}

/// Fit the smallest grid `rho >= 1` with `h_M(t) <= h_M(rho t)^s` at every
/// grid `t`; records the grid result even when no such `rho` exists below
/// the ceiling.
pub fn check_rho_property(
    seq: &SequenceModel,
    s: f64,
    grid: &[f64],
) -> Result<(f64, bool), SeqError> {
    let ceiling = 1e6;
    let mut rho = 1.0f64;
    let factor = 2f64.powf(0.125);
    loop {
        let mut ok = true;
        for &t in grid {
            let lh = seq.log_h(t)?.log_value;
            let lhr = seq.log_h((rho * t).min(1e300))?.log_value;
            if lh > s * lhr + 1e-9 {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok((rho, true));
        }
        rho *= factor;
        if rho > ceiling {
            return Ok((ceiling, false));
        }
    }
}

/// Partial sums of `(M_n/M_{n+1})^{1/gamma}` with a divergence verdict per
/// the Watson-lemma condition.
pub fn watson_diagnostic(seq: &SequenceModel, gamma: f64) -> WatsonRecord {
    let n = seq.pmax;
    let terms: Vec<f64> = (0..n).map(|p| (-seq.log_quotient(p) / gamma).exp()).collect();
    let partial: f64 = terms.iter().sum();
    let beta = loglog_slope(&terms, n / 2, n);
    let verdict = if beta >= 1.1 {
        WatsonVerdict::Convergent
    } else if beta <= 1.02 {
        // cross-check that partial sums actually track c*log N, c > 0
        let xs: Vec<f64> = (n / 2..n).map(|k| ((k + 1) as f64).ln()).collect();
        let mut acc = 0.0;
        let mut sums = Vec::with_capacity(n);
        for &t in &terms {
            acc += t;
            sums.push(acc);
        }
        let ys: Vec<f64> = (n / 2..n).map(|k| sums[k]).collect();
        let c = least_squares_slope(&xs, &ys);
        if c > 0.0 {
            WatsonVerdict::Divergent
        } else {
            WatsonVerdict::Inconclusive
        }
    } else {
        WatsonVerdict::Inconclusive
    };
    WatsonRecord { gamma_used: gamma, verdict, partial_sum: partial, terms: n }
}

/// On-disk sequence description.
#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceSpecFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub pmax: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl SequenceSpecFile {
    pub fn into_model(self) -> Result<SequenceModel, String> {
        let source = match self.kind.as_str() {
            "gevrey" => SequenceSource::GevreyAlpha(
                self.alpha.ok_or("gevrey spec needs an `alpha` field")?,
            ),
            "table" => SequenceSource::ExplicitTable(
                self.values.ok_or("table spec needs a `values` field")?,
            ),
            other => return Err(format!("unknown sequence kind `{other}`")),
        };
        let mut model = build_sequence(source, self.pmax).map_err(|e| e.to_string())?;
        model.gamma_override = self.gamma;
        Ok(model)
    }
}

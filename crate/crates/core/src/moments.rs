//! The moment function `m(lambda) = int_0^inf t^{lambda-1} e_M(t) dt`, its
//! integer-order table, and the numerical check that the moment sequence is
//! equivalent to `M` (bounded ratio drift `C^{-1} D^{-p} <= m(p)/M_p <= C D^p`).

use num_complex::Complex64;
use thiserror::Error;

use crate::kernel::{KernelError, KernelFlavor, KernelHandle, RayPoint};
use crate::quad::{envelope_cut, integrate_finite, QuadConfig, QuadError, SingularityHint};
use crate::seqcore::SeqError;

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("moment function requires Re lambda >= 0, got {0}")]
    ReLambdaNegative(f64),
    #[error("moment table needs pmax >= 4, got {0}")]
    TableTooShort(usize),
    #[error("moment m({0}) is not a positive finite real")]
    NotPositive(usize),
    #[error("moment magnitude did not stabilize at Re lambda = {0}")]
    DidNotStabilize(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

/// Fitted constants of the sequence equivalence `m(p) ~ M_p`.
///
/// `ratio_log[p] = log(m(p)/M_p)`; `step_bound_d` bounds the step of that
/// ratio so that `offset_c^{-1} d^{-p} <= m(p)/M_p <= offset_c * d^p` holds
/// on the whole table by construction.
#[derive(Debug, Clone)]
pub struct EquivalenceFit {
    pub ratio_log: Vec<f64>,
    pub step_bound_d: f64,
    pub offset_c: f64,
    pub pass: bool,
}

/// Integer moments `m(0..=pmax)` of a kernel, with error estimates and the
/// equivalence diagnostics.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub kernel: KernelHandle,
    pub pmax: usize,
    pub m: Vec<f64>,
    pub err: Vec<f64>,
    pub equivalence: EquivalenceFit,
}

/// Largest acceptable fitted step constant `D` for a PASS verdict.
pub const EQUIVALENCE_STEP_CEILING: f64 = 1e3;

/// Default relative tolerance of a single moment integral.
pub fn default_moment_tolerance(kernel: &KernelHandle) -> f64 {
    match kernel.flavor {
        KernelFlavor::ClosedFormGevrey(_) => 1e-8,
        // two stacked quadrature layers; the kernel cache budget is 1e-8
        KernelFlavor::ConstructedThilliez => 1e-6,
    }
}

/// Small-`t` power bound `|e_M(t)| <= coeff * t^q` valid on the whole axis:
/// `|G_M| <= 1` on the positive axis for the constructed kernel, and the
/// closed form is explicit.
fn small_t_bound(kernel: &KernelHandle) -> (f64, f64) {
    match kernel.flavor {
        KernelFlavor::ConstructedThilliez => (1.0, 1.0),
        KernelFlavor::ClosedFormGevrey(alpha) => (1.0 / alpha, 1.0 / alpha),
    }
}

struct MomentQuad {
    value: Complex64,
    abs_err: f64,
}

/// One moment integral at a fixed absolute budget, split between the lower
/// cutoff, the ray truncation, and the adaptive pass itself.
fn moment_at_abs_tol(
    kernel: &KernelHandle,
    lambda: Complex64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<MomentQuad, MomentError> {
    let re = lambda.re;
    let (coeff, q) = small_t_bound(kernel);
    let (c, k) = kernel.flatness.ok_or(KernelError::SandwichNotVerified)?;
    let seq = &kernel.seq;

    // |t^{lambda-1} e_M(t)| <= C t^{Re lambda - 1} h_M(K/t) for large t
    let env = move |t: f64| {
        if t <= 0.0 {
            return 0.0;
        }
        let h = seq.eval_h(k / t).unwrap_or(1.0);
        c * t.powf(re - 1.0) * h
    };
    let cut = envelope_cut(env, 0.5 * abs_tol)?;

    // below t_lo the integrand is under coeff * t^{Re lambda - 1 + q}
    let lower_budget = 0.25 * abs_tol;
    let t_lo = (lower_budget * (re + q) / coeff).powf(1.0 / (re + q));
    let t_lo = t_lo.min(0.5 * cut);

    let real_lambda = lambda.im == 0.0;
    let f = |t: f64| -> Complex64 {
        let e = kernel
            .eval_e(RayPoint::positive_real(t))
            .unwrap_or(Complex64::new(f64::NAN, 0.0));
        if real_lambda {
            // keep the result exactly real on the axis
            t.powf(re - 1.0) * e
        } else {
            ((lambda - 1.0) * t.ln()).exp() * e
        }
    };
    let hint = match kernel.flavor {
        // the closed form is cheap; resolve the integrable power
        // singularity at the origin by the exponential substitution
        KernelFlavor::ClosedFormGevrey(_) => SingularityHint::LogAtLeft,
        // the constructed integrand t^{lambda} G_M(1/t) is bounded at 0;
        // start at t_lo so the cache band stays finite
        KernelFlavor::ConstructedThilliez => SingularityHint::None,
    };
    let (a, hint) = match hint {
        SingularityHint::LogAtLeft => (0.0, SingularityHint::LogAtLeft),
        _ => (t_lo, SingularityHint::None),
    };
    let cfg = QuadConfig {
        rel_tol,
        abs_tol: 0.25 * abs_tol,
        max_subdivisions: kernel.quad_cfg.max_subdivisions,
        singularity_hint: hint,
    };
    let res = integrate_finite(&f, a, cut, &cfg)?;
    let mut abs_err = res.abs_error_estimate + 0.75 * abs_tol;
    if a > 0.0 {
        abs_err += lower_budget;
    }
    Ok(MomentQuad { value: res.value, abs_err })
}

/// `m(lambda)` for `Re lambda >= 0` at a caller-chosen relative tolerance.
///
/// Two-pass: a proxy magnitude (from `M_p`, which the moment sequence is
/// equivalent to) fixes the first absolute budget, then the budget is
/// re-anchored on the computed value until consistent.
pub fn moment_with_error(
    kernel: &KernelHandle,
    lambda: Complex64,
    rel_tol: f64,
) -> Result<(Complex64, f64), MomentError> {
    if lambda.re < 0.0 {
        return Err(MomentError::ReLambdaNegative(lambda.re));
    }
    let mut magnitude = magnitude_proxy(kernel, lambda.re);
    for _ in 0..4 {
        let abs_tol = (magnitude * rel_tol / 8.0).max(f64::MIN_POSITIVE);
        let out = moment_at_abs_tol(kernel, lambda, rel_tol, abs_tol)?;
        let got = out.value.norm();
        if !got.is_finite() {
            return Err(MomentError::NotPositive(lambda.re.round() as usize));
        }
        if got >= 0.1 * magnitude && got <= 10.0 * magnitude {
            return Ok((out.value, out.abs_err));
        }
        magnitude = got.max(f64::MIN_POSITIVE);
    }
    Err(MomentError::DidNotStabilize(lambda.re))
}

/// `m(lambda)` at the default tolerance for the kernel's flavor.
pub fn moment(kernel: &KernelHandle, lambda: Complex64) -> Result<Complex64, MomentError> {
    moment_with_error(kernel, lambda, default_moment_tolerance(kernel)).map(|(v, _)| v)
}

/// Magnitude guess for `m(x)` from `log M_p`, linearly interpolated in `p`.
fn magnitude_proxy(kernel: &KernelHandle, x: f64) -> f64 {
    let seq = &kernel.seq;
    let top = seq.pmax.saturating_sub(1);
    let p0 = (x.floor() as usize).min(top.saturating_sub(1));
    let frac = (x - p0 as f64).clamp(0.0, 1.0);
    let lg = seq.log_value(p0) * (1.0 - frac) + seq.log_value((p0 + 1).min(top)) * frac;
    lg.clamp(-600.0, 600.0).exp()
}

/// Fit flatness constants and (for the constructed flavor) warm the kernel
/// cache over the modulus band the table's integrals will visit, so no
/// moment integral triggers a cold nested quadrature.
pub fn prepare_kernel(kernel: &mut KernelHandle, pmax: usize) -> Result<(), MomentError> {
    if matches!(kernel.flavor, KernelFlavor::ConstructedThilliez) && !kernel.cache_is_warm() {
        kernel.warm_up(1e-2, 1e2, 1e-8)?;
    }
    if kernel.flatness.is_none() {
        let grid: Vec<f64> =
            (0..160).map(|i| 1e-2 * 10f64.powf(4.0 * i as f64 / 159.0)).collect();
        kernel.fit_flatness(&grid)?;
    }
    if matches!(kernel.flavor, KernelFlavor::ClosedFormGevrey(_)) {
        return Ok(());
    }

    let rel = default_moment_tolerance(kernel);
    let (c, k) = kernel.flatness.expect("fitted above");
    let seq = kernel.seq.clone();

    // largest t the top moment can reach before its envelope tail is spent
    let top_tol = magnitude_proxy(kernel, pmax as f64) * rel / 8.0;
    let re = pmax as f64;
    let env = move |t: f64| {
        let h = seq.eval_h(k / t).unwrap_or(1.0);
        c * t.powf(re - 1.0) * h
    };
    let cut = envelope_cut(env, 0.5 * top_tol)?;

    // smallest t the p = 0 moment can reach through its lower cutoff
    let low_tol = magnitude_proxy(kernel, 0.0) * rel / 8.0;
    let t_lo = 0.25 * low_tol;

    kernel.warm_up(1.0 / cut, 1.0 / t_lo, 1e-8)?;
    Ok(())
}

/// Integer moments `m(0..=pmax)` plus the equivalence fit of
/// `ratio_log[p] = log(m(p)/M_p)`: `D = exp(max step)` and
/// `C = exp(max(|ratio_log[p]| - p log D))`, PASS iff `D` stays under
/// [`EQUIVALENCE_STEP_CEILING`].
pub fn moment_table(kernel: &mut KernelHandle, pmax: usize) -> Result<MomentTable, MomentError> {
    if pmax < 4 {
        return Err(MomentError::TableTooShort(pmax));
    }
    prepare_kernel(kernel, pmax)?;
    let rel = default_moment_tolerance(kernel);

    let mut m = Vec::with_capacity(pmax + 1);
    let mut err = Vec::with_capacity(pmax + 1);
    for p in 0..=pmax {
        let (v, e) = moment_with_error(kernel, Complex64::new(p as f64, 0.0), rel)?;
        if !(v.re.is_finite() && v.re > 0.0) || v.im != 0.0 {
            return Err(MomentError::NotPositive(p));
        }
        m.push(v.re);
        err.push(e);
    }

    let ratio_log: Vec<f64> =
        (0..=pmax).map(|p| m[p].ln() - kernel.seq.log_value(p)).collect();
    let mut max_step = 0.0f64;
    for w in ratio_log.windows(2) {
        max_step = max_step.max((w[1] - w[0]).abs());
    }
    let log_d = max_step;
    let mut log_c = 0.0f64;
    for (p, rl) in ratio_log.iter().enumerate() {
        log_c = log_c.max(rl.abs() - p as f64 * log_d);
    }
    let finite = m.iter().all(|v| v.is_finite());
    let step_bound_d = log_d.exp();
    let equivalence = EquivalenceFit {
        ratio_log,
        step_bound_d,
        offset_c: log_c.exp(),
        pass: finite && step_bound_d <= EQUIVALENCE_STEP_CEILING,
    };
    Ok(MomentTable { kernel: kernel.clone(), pmax, m, err, equivalence })
}

impl MomentTable {
    /// `m(p)`; panics if `p` is outside the table.
    pub fn value(&self, p: usize) -> f64 {
        self.m[p]
    }

    pub fn covers(&self, p: usize) -> bool {
        p <= self.pmax
    }

    /// CSV dump, header `p,M_p,m_p,abs_err,ratio_log`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,M_p,m_p,abs_err,ratio_log\n");
        for p in 0..=self.pmax {
            let mp = self.kernel.seq.log_value(p).exp();
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                p, mp, self.m[p], self.err[p], self.equivalence.ratio_log[p]
            ));
        }
        out
    }
}

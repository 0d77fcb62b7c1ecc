//! The truncated-Laplace extension operator: from a certified coefficient
//! sequence `(a_p)` to the holomorphic function
//! `f(z) = int_0^{R0} e_M(u/z) g(u) du/u` with `g(u) = sum a_p/(m(p) p!) u^p`,
//! a right inverse of the asymptotic Borel map, plus the numerical
//! verification that `f` admits the expected M-asymptotic expansion.

use num_complex::Complex64;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::formal::{eval_truncated, formal_borel, verify_cert, FormalError, TruncatedSeries};
use crate::kernel::{KernelError, KernelHandle, RayPoint};
use crate::moments::MomentTable;
use crate::quad::{integrate_finite, QuadConfig, QuadError, SingularityHint};

#[derive(Debug, Error)]
pub enum ExtendError {
    #[error("data carries no valid weighted-norm certificate")]
    NoNormCertificate,
    #[error("eps margin {0} outside (0, 1)")]
    EpsMarginOutOfRange(f64),
    #[error("truncation radius {requested} above the certified {max}")]
    RadiusTooLarge { requested: f64, max: f64 },
    #[error(transparent)]
    Formal(#[from] FormalError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Truncated-Laplace extension operator, frozen after construction.
#[derive(Debug, Clone)]
pub struct ExtensionOperator {
    pub kernel: KernelHandle,
    pub moments: MomentTable,
    /// `a_p = f^{(p)}(0)`, the target derivatives.
    pub data: TruncatedSeries,
    /// Borel coefficients `b_p = a_p / (m(p) p!)` of `g`.
    pub borel: TruncatedSeries,
    /// Fitted growth rate of the Borel coefficients, `max |b_p|^{1/p}`.
    pub d2: f64,
    pub r0: f64,
    pub eps_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticFit {
    pub c: f64,
    pub d: f64,
}

/// Measured remainders `sup_z |f(z) - S_N(z)|` against the geometric-times-
/// `M_N` envelope they are required to satisfy.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticReport {
    pub ns: Vec<usize>,
    pub sup_err: Vec<f64>,
    pub fitted: AsymptoticFit,
    pub pass: bool,
}

/// Build the operator: re-check the data certificate, fit the Borel rate
/// `D2`, and set `R0 = (1 - eps)/D2` (the zero series gets `R0 = 1`).
pub fn build_extension(
    kernel: &KernelHandle,
    moments: &MomentTable,
    data: TruncatedSeries,
    eps_margin: f64,
) -> Result<ExtensionOperator, ExtendError> {
    if !(eps_margin > 0.0 && eps_margin < 1.0) {
        return Err(ExtendError::EpsMarginOutOfRange(eps_margin));
    }
    if !data.is_zero() {
        let cert = data.norm_cert.as_ref().ok_or(ExtendError::NoNormCertificate)?;
        if !verify_cert(&data, &kernel.seq, cert) {
            return Err(ExtendError::NoNormCertificate);
        }
    }
    let mut borel = formal_borel(&data, moments)?;
    for (p, b) in borel.coeffs.iter_mut().enumerate() {
        *b *= (-ln_gamma(p as f64 + 1.0)).exp();
    }
    let mut log_d2 = f64::NEG_INFINITY;
    for (p, b) in borel.coeffs.iter().enumerate().skip(1) {
        let n = b.norm();
        if n > 0.0 {
            log_d2 = log_d2.max(n.ln() / p as f64);
        }
    }
    let (d2, r0) = if log_d2.is_finite() {
        let d2 = log_d2.exp();
        (d2, (1.0 - eps_margin) / d2)
    } else {
        // constant or zero data puts no constraint on the radius
        (0.0, 1.0)
    };
    Ok(ExtensionOperator {
        kernel: kernel.clone(),
        moments: moments.clone(),
        data,
        borel,
        d2,
        r0,
        eps_margin,
    })
}

impl ExtensionOperator {
    /// Shrink the truncation radius; growing it would break the
    /// construction's invariant.
    pub fn with_radius(mut self, r0: f64) -> Result<Self, ExtendError> {
        if r0 > self.r0 {
            return Err(ExtendError::RadiusTooLarge { requested: r0, max: self.r0 });
        }
        self.r0 = r0;
        Ok(self)
    }

    /// `f(z)` for `z` in the kernel's sector `S_delta`.
    pub fn apply(&self, z: RayPoint) -> Result<Complex64, ExtendError> {
        let limit = self.kernel.delta * std::f64::consts::FRAC_PI_2;
        if z.argument.abs() >= limit {
            return Err(ExtendError::Kernel(KernelError::ArgumentOutsideSector {
                arg: z.argument,
                limit,
            }));
        }
        let f = |u: f64| -> Complex64 {
            let w = match self.kernel.eval_e_over_u(RayPoint::positive_real(u), z) {
                Ok(w) => w,
                Err(_) => Complex64::new(f64::NAN, 0.0),
            };
            let g = eval_truncated(&self.borel, Complex64::new(u, 0.0), self.r0)
                .unwrap_or(Complex64::new(f64::NAN, 0.0));
            w * g
        };
        let cfg = QuadConfig {
            rel_tol: self.kernel.quad_cfg.rel_tol,
            abs_tol: self.kernel.quad_cfg.abs_tol.max(1e-15),
            max_subdivisions: self.kernel.quad_cfg.max_subdivisions,
            // u -> 0 is an integrable endpoint: e_M(u/z)/u = G_M(z/u)/z
            singularity_hint: SingularityHint::LogAtLeft,
        };
        Ok(integrate_finite(f, 0.0, self.r0, &cfg)?.value)
    }

    /// Partial sum `S_N(z) = sum_{p<N} a_p z^p / p!`.
    pub fn partial_sum(&self, z: Complex64, n: usize) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for p in (0..n.min(self.data.coeffs.len())).rev() {
            acc = acc * z + self.data.coeffs[p] * (-ln_gamma(p as f64 + 1.0)).exp();
        }
        acc
    }

    /// Measure `sup_z |f - S_N|` for `N = 1..=n_max` over `z_grid` and fit
    /// `log sup_err[N] ~ log C + N log(D * D1) + log M_N`, where `D1` is
    /// the data certificate's rate; PASS iff the fit residuals stay under
    /// `log 10`.
    pub fn asymptotic_report(
        &self,
        z_grid: &[RayPoint],
        n_max: usize,
    ) -> Result<AsymptoticReport, ExtendError> {
        let values: Vec<(Complex64, Complex64)> = z_grid
            .iter()
            .map(|&z| self.apply(z).map(|f| (z.to_complex(), f)))
            .collect::<Result<_, _>>()?;
        let ns: Vec<usize> = (1..=n_max).collect();
        let sup_err: Vec<f64> = ns
            .iter()
            .map(|&n| {
                values
                    .iter()
                    .map(|&(z, f)| (f - self.partial_sum(z, n)).norm())
                    .fold(0.0, f64::max)
            })
            .collect();

        if sup_err.iter().all(|&e| e == 0.0) {
            return Ok(AsymptoticReport {
                ns,
                sup_err,
                fitted: AsymptoticFit { c: 0.0, d: 1.0 },
                pass: true,
            });
        }

        let log_d1 = self.data.norm_cert.map(|c| c.a.ln()).unwrap_or(0.0);
        let seq = &self.kernel.seq;
        let ys: Vec<f64> = ns
            .iter()
            .zip(&sup_err)
            .map(|(&n, &e)| {
                e.max(f64::MIN_POSITIVE).ln() - seq.log_value(n) - n as f64 * log_d1
            })
            .collect();
        // least-squares line y = log C + N log D
        let k = ns.len() as f64;
        let sx: f64 = ns.iter().map(|&n| n as f64).sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = ns.iter().map(|&n| (n * n) as f64).sum();
        let sxy: f64 = ns.iter().zip(&ys).map(|(&n, &y)| n as f64 * y).sum();
        let denom = k * sxx - sx * sx;
        let (slope, intercept) = if denom.abs() > 0.0 {
            ((k * sxy - sx * sy) / denom, (sy * sxx - sx * sxy) / denom)
        } else {
            (0.0, ys[0])
        };
        let max_residual = ns
            .iter()
            .zip(&ys)
            .map(|(&n, &y)| (y - intercept - slope * n as f64).abs())
            .fold(0.0, f64::max);
        Ok(AsymptoticReport {
            ns,
            sup_err,
            fitted: AsymptoticFit { c: intercept.exp(), d: slope.exp() },
            pass: max_residual <= 10f64.ln(),
        })
    }

    /// One-sided finite-difference estimate of `f^{(p)}(0)` from a
    /// degree-`(nodes-1)` polynomial fit through `f(j h)`, `j = 1..=nodes`.
    ///
    /// Only `p <= 3` is meaningful: the `h^{-p}` noise amplification and
    /// the divergent tail of the expansion squeeze the usable `h` window
    /// shut for higher orders.
    pub fn derivative_probe(&self, p: usize, h: f64, nodes: usize) -> Result<Complex64, ExtendError> {
        assert!(p < nodes && nodes <= 12, "unsupported stencil");
        // Vandermonde in the scaled variable x = u/h on nodes 1..=nodes
        let n = nodes;
        let mut a = vec![vec![Complex64::new(0.0, 0.0); n + 1]; n];
        for (i, row) in a.iter_mut().enumerate() {
            let x = (i + 1) as f64;
            let mut pw = 1.0;
            for cell in row.iter_mut().take(n) {
                *cell = Complex64::new(pw, 0.0);
                pw *= x;
            }
            row[n] = self.apply(RayPoint::positive_real((i + 1) as f64 * h))?;
        }
        // Gaussian elimination with partial pivoting
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
                .unwrap();
            a.swap(col, piv);
            for row in col + 1..n {
                let factor = a[row][col] / a[col][col];
                for k in col..=n {
                    let sub = factor * a[col][k];
                    a[row][k] -= sub;
                }
            }
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for row in (0..n).rev() {
            let mut acc = a[row][n];
            for k in row + 1..n {
                acc -= a[row][k] * coeffs[k];
            }
            coeffs[row] = acc / a[row][row];
        }
        // d^p/du^p at 0 = p! * (coefficient of x^p) / h^p
        Ok(coeffs[p] * ln_gamma(p as f64 + 1.0).exp() / h.powi(p as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formal::certify_norm;
    use crate::kernel::{build_kernel, KernelFlavor};
    use crate::moments::moment_table;
    use crate::seqcore::{build_sequence, SequenceSource};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn gevrey1_setup(pmax: usize) -> (KernelHandle, MomentTable) {
        let seq = build_sequence(SequenceSource::GevreyAlpha(1.0), 64).unwrap();
        let mut k =
            build_kernel(&seq, 0.8, KernelFlavor::ClosedFormGevrey(1.0), QuadConfig::default())
                .unwrap();
        let table = moment_table(&mut k, pmax).unwrap();
        (k, table)
    }

    /// `a_p = (-1)^p (p!)^2`: the Euler-series data, whose Borel
    /// coefficients collapse to `(-1)^p`.
    fn euler_data(kernel: &KernelHandle, n: usize) -> TruncatedSeries {
        let coeffs = (0..=n)
            .map(|p| {
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                c(sign * (2.0 * ln_gamma(p as f64 + 1.0)).exp())
            })
            .collect();
        let mut s = TruncatedSeries::new(coeffs).unwrap();
        s.norm_cert = Some(certify_norm(&s, &kernel.seq).unwrap());
        s
    }

    #[test]
    fn euler_borel_coefficients_and_radius() {
        let (k, table) = gevrey1_setup(20);
        let data = euler_data(&k, 20);
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        for (p, b) in op.borel.coeffs.iter().enumerate() {
            let want = if p % 2 == 0 { 1.0 } else { -1.0 };
            assert!((b.re - want).abs() < 1e-6, "p {p}: {}", b.re);
        }
        assert!((op.d2 - 1.0).abs() < 1e-6);
        assert!((op.r0 - 0.9).abs() < 1e-5);
    }

    #[test]
    fn zero_data_is_zero_map() {
        let (k, table) = gevrey1_setup(6);
        let data = TruncatedSeries::new(vec![c(0.0); 7]).unwrap();
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        assert_eq!(op.d2, 0.0);
        let v = op.apply(RayPoint::positive_real(0.1)).unwrap();
        assert!(v.norm() <= 1e-14);
        let grid = [RayPoint::positive_real(0.05), RayPoint::positive_real(0.1)];
        let rep = op.asymptotic_report(&grid, 4).unwrap();
        assert!(rep.pass);
        assert!(rep.sup_err.iter().all(|&e| e <= 1e-13));
    }

    #[test]
    fn broken_certificate_rejected() {
        let (k, table) = gevrey1_setup(6);
        let mut data = TruncatedSeries::new(vec![c(1.0), c(1e9)]).unwrap();
        data.norm_cert = Some(crate::formal::NormCert { c: 1.0, a: 1.0 });
        assert!(matches!(
            build_extension(&k, &table, data, 0.1),
            Err(ExtendError::NoNormCertificate)
        ));
        let bare = TruncatedSeries::new(vec![c(1.0), c(1.0)]).unwrap();
        assert!(matches!(
            build_extension(&k, &table, bare, 0.1),
            Err(ExtendError::NoNormCertificate)
        ));
    }

    #[test]
    fn euler_apply_matches_borel_sum() {
        // f(0.1) should sit within the flat gap of the full Borel sum
        // (1/z) e^{1/z} E_1(1/z) = 0.9156333393978808 at z = 0.1
        let (k, table) = gevrey1_setup(40);
        let data = euler_data(&k, 40);
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        let v = op.apply(RayPoint::positive_real(0.1)).unwrap();
        assert!(v.im.abs() < 1e-10);
        assert!((v.re - 0.9156333393978808).abs() <= 1e-3, "got {}", v.re);
    }

    #[test]
    fn constant_data_tends_to_one() {
        // a_0 = 1 only: f(z) = int_0^{R0} e_M(u/z)/(m(0) u) du -> 1 as
        // z -> 0 along the positive axis
        let (k, table) = gevrey1_setup(6);
        let mut data = TruncatedSeries::new(vec![c(1.0)]).unwrap();
        data.norm_cert = Some(certify_norm(&data, &k.seq).unwrap());
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        let v = op.apply(RayPoint::positive_real(1e-3)).unwrap();
        assert!((v.re - 1.0).abs() < 1e-2, "got {}", v.re);
        assert!(v.im.abs() < 1e-12);
    }

    #[test]
    fn euler_asymptotic_report_passes() {
        let (k, table) = gevrey1_setup(40);
        let data = euler_data(&k, 40);
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        let grid: Vec<RayPoint> =
            [0.02, 0.05, 0.1].iter().map(|&r| RayPoint::positive_real(r)).collect();
        let rep = op.asymptotic_report(&grid, 12).unwrap();
        assert!(rep.pass, "sup_err {:?}", rep.sup_err);
        assert!(rep.fitted.d <= 20.0, "fitted d = {}", rep.fitted.d);
        assert!(rep.sup_err.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn single_coefficient_report_is_degenerate_but_passes() {
        let (k, table) = gevrey1_setup(8);
        let mut data = TruncatedSeries::new(vec![c(2.0)]).unwrap();
        data.norm_cert = Some(certify_norm(&data, &k.seq).unwrap());
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        let grid = [RayPoint::positive_real(0.05), RayPoint::positive_real(0.1)];
        let rep = op.asymptotic_report(&grid, 6).unwrap();
        assert!(rep.pass);
        let spread = rep.sup_err.iter().fold(0.0f64, |m, &e| m.max(e))
            - rep.sup_err.iter().fold(f64::INFINITY, |m, &e| m.min(e));
        assert!(spread <= 1e-12 * rep.sup_err[0].max(1e-300));
    }

    #[test]
    fn sector_uniformity_of_remainders() {
        // a narrower sector than the other tests: uniformity constants
        // blow up as the rays approach the kernel's own sector edge
        let seq = build_sequence(SequenceSource::GevreyAlpha(1.0), 64).unwrap();
        let mut kernel =
            build_kernel(&seq, 0.5, KernelFlavor::ClosedFormGevrey(1.0), QuadConfig::default())
                .unwrap();
        let table = moment_table(&mut kernel, 24).unwrap();
        let k = kernel;
        let data = euler_data(&k, 24);
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        let tilt = 0.8 * k.delta * std::f64::consts::FRAC_PI_2;
        let moduli = [0.02, 0.05, 0.1];
        let err_at = |arg: f64, n: usize| -> f64 {
            moduli
                .iter()
                .map(|&r| {
                    let z = RayPoint::new(r, arg);
                    (op.apply(z).unwrap() - op.partial_sum(z.to_complex(), n)).norm()
                })
                .fold(0.0, f64::max)
        };
        for n in [4usize, 8] {
            let center = err_at(0.0, n);
            for arg in [tilt, -tilt] {
                let side = err_at(arg, n);
                let ratio = side / center.max(f64::MIN_POSITIVE);
                assert!(ratio <= 10.0 && ratio >= 0.1, "n {n} arg {arg}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn apply_is_linear_in_data() {
        let (k, table) = gevrey1_setup(8);
        let mk = |coeffs: Vec<Complex64>| -> TruncatedSeries {
            let mut s = TruncatedSeries::new(coeffs).unwrap();
            s.norm_cert = Some(certify_norm(&s, &k.seq).unwrap());
            s
        };
        let a = mk(vec![c(1.0), c(-0.5), c(2.0), c(0.25)]);
        let b = mk(vec![c(0.3), c(1.5), c(-1.0), c(0.75)]);
        let scale = -1.75;
        let combo = mk((0..4)
            .map(|p| a.coeffs[p] + scale * b.coeffs[p])
            .collect());
        let r0 = 0.25;
        let op_a = build_extension(&k, &table, a, 0.1).unwrap().with_radius(r0).unwrap();
        let op_b = build_extension(&k, &table, b, 0.1).unwrap().with_radius(r0).unwrap();
        let op_c = build_extension(&k, &table, combo, 0.1).unwrap().with_radius(r0).unwrap();
        for &r in &[0.05, 0.1, 0.3] {
            let z = RayPoint::new(r, 0.2);
            let lhs = op_c.apply(z).unwrap();
            let rhs = op_a.apply(z).unwrap() + scale * op_b.apply(z).unwrap();
            assert!((lhs - rhs).norm() <= 1e-9 * rhs.norm().max(1.0), "r {r}");
        }
    }

    #[test]
    fn derivatives_recover_data() {
        let (k, table) = gevrey1_setup(24);
        let data = euler_data(&k, 24);
        let want: Vec<f64> = data.coeffs.iter().map(|a| a.re).collect();
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        for p in 0..=3usize {
            let got = op.derivative_probe(p, 0.005, 8).unwrap();
            let rel = (got.re - want[p]).abs() / want[p].abs();
            assert!(rel <= 1e-3, "p {p}: got {} want {} rel {rel}", got.re, want[p]);
        }
    }

    #[test]
    fn radius_can_only_shrink() {
        let (k, table) = gevrey1_setup(8);
        let data = euler_data(&k, 8);
        let op = build_extension(&k, &table, data, 0.1).unwrap();
        assert!(matches!(op.with_radius(5.0), Err(ExtendError::RadiusTooLarge { .. })));
    }
}

//! The flat kernel: `G_M` through its boundary-integral representation and
//! the Laplace kernel `e_M(z) = z G_M(1/z)`, plus the closed-form Gevrey
//! kernel used as an independent oracle.
//!
//! For `w` in the sector the integral representation collapses, after
//! pairing `t` with `-t`, to
//!
//! ```text
//!   G_M(w) = exp( (1/pi) * INT_0^T0  log h_{M^s}(t) * 2 w^s / (t^2 + w^(2s)) dt )
//! ```
//!
//! with `T0 = 1/m_0^s`, since `log h_{M^s}` vanishes beyond `T0`. The
//! integrand has an integrable power singularity at `t = 0`, handled by the
//! quadrature module's exponential substitution.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quad::{integrate_finite, QuadConfig, QuadError, SingularityHint};
use crate::seqcore::{estimate_gamma, SeqError, SequenceModel, SequenceSource};

/// A point of the Riemann surface of the logarithm: positive modulus and
/// unrestricted real argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPoint {
    pub modulus: f64,
    pub argument: f64,
}

impl RayPoint {
    pub fn new(modulus: f64, argument: f64) -> Self {
        RayPoint { modulus, argument }
    }

    pub fn positive_real(x: f64) -> Self {
        RayPoint { modulus: x, argument: 0.0 }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.modulus, self.argument)
    }

    /// `z^s` staying on the Riemann surface (argument scales, no wrap).
    pub fn powf(self, s: f64) -> Self {
        RayPoint { modulus: self.modulus.powf(s), argument: self.argument * s }
    }

    pub fn inv(self) -> Self {
        RayPoint { modulus: 1.0 / self.modulus, argument: -self.argument }
    }

    pub fn conj(self) -> Self {
        RayPoint { modulus: self.modulus, argument: -self.argument }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFlavor {
    ConstructedThilliez,
    ClosedFormGevrey(f64),
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("delta = {delta} outside (0, {gamma})")]
    DeltaOutOfRange { delta: f64, gamma: f64 },
    #[error("closed-form Gevrey kernel requires a matching Gevrey sequence")]
    FlavorSequenceMismatch,
    #[error("argument {arg} outside the sector |arg| < {limit}")]
    ArgumentOutsideSector { arg: f64, limit: f64 },
    #[error("sandwich constants not fitted yet")]
    SandwichNotVerified,
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("cache file rejected: {0}")]
    CacheMismatch(String),
    #[error("cache io: {0}")]
    CacheIo(String),
}

/// Fitted constants of the two-sided bound
/// `k1 h_M(k2 |w|) <= |G_M(w)| <= h_M(k3 |w|)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SandwichFit {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub pass: bool,
}

/// One memoized ray: `ln(-Re exponent)` sampled on a uniform `ln r` grid.
/// Only argument-zero rays are cached (the exponent is real there).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RayTable {
    argument: f64,
    x0: f64,
    dx: f64,
    u_re: Vec<f64>,
}

impl RayTable {
    fn covers(&self, x: f64) -> bool {
        x >= self.x0 && x <= self.x0 + self.dx * (self.u_re.len() - 1) as f64
    }

    /// Six-point Lagrange interpolation on the uniform grid. The stored
    /// quantity is close to linear in `ln r`, so the stencil reaches the
    /// interpolation budget at moderate density.
    fn eval(&self, x: f64) -> f64 {
        let n = self.u_re.len();
        let pos = (x - self.x0) / self.dx;
        let cell = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
        let lo = cell.saturating_sub(2).min(n - 6);
        let t = pos - lo as f64;
        let mut acc = 0.0;
        for j in 0..6 {
            let mut w = 1.0;
            for k in 0..6 {
                if k != j {
                    w *= (t - k as f64) / (j as f64 - k as f64);
                }
            }
            acc += w * self.u_re[lo + j];
        }
        acc
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    digest: String,
    delta1: f64,
    s: f64,
    rel_tol: f64,
    abs_tol: f64,
    tables: Vec<RayTable>,
}

/// Evaluator for `G_M` / `e_M` with its sector parameters and cache.
#[derive(Debug, Clone)]
pub struct KernelHandle {
    pub flavor: KernelFlavor,
    pub seq: SequenceModel,
    pub delta: f64,
    pub delta1: f64,
    pub s: f64,
    pub gamma: f64,
    pub quad_cfg: QuadConfig,
    seq_pow_s: Option<SequenceModel>,
    t0: f64,
    tables: Vec<RayTable>,
    pub sandwich: Option<SandwichFit>,
    /// Fitted `(C, K)` of the flatness bound `|e_M(z)| <= C h_M(K/|z|)`.
    pub flatness: Option<(f64, f64)>,
}

/// Moduli below this are never served from the cache.
const CACHE_MIN_MODULUS: f64 = 1e-6;

pub fn build_kernel(
    seq: &SequenceModel,
    delta: f64,
    flavor: KernelFlavor,
    quad_cfg: QuadConfig,
) -> Result<KernelHandle, KernelError> {
    let (gamma, _) = estimate_gamma(seq)?;
    if !(delta > 0.0 && delta < gamma) {
        return Err(KernelError::DeltaOutOfRange { delta, gamma });
    }
    if let KernelFlavor::ClosedFormGevrey(alpha) = flavor {
        match seq.source {
            SequenceSource::GevreyAlpha(a) if (a - alpha).abs() < 1e-12 => {}
            _ => return Err(KernelError::FlavorSequenceMismatch),
        }
    }
    let delta1 = 0.5 * (delta + gamma);
    let s = 0.5 * (1.0 / gamma + 1.0 / delta1);
    let (seq_pow_s, t0) = match flavor {
        KernelFlavor::ConstructedThilliez => {
            let sp = seq.power(s)?;
            // log h_{M^s} vanishes for t >= 1/m_0^s
            let t0 = (-sp.log_quotient(0)).exp();
            (Some(sp), t0)
        }
        KernelFlavor::ClosedFormGevrey(_) => (None, 1.0),
    };
    Ok(KernelHandle {
        flavor,
        seq: seq.clone(),
        delta,
        delta1,
        s,
        gamma,
        quad_cfg,
        seq_pow_s,
        t0,
        tables: Vec::new(),
        sandwich: None,
        flatness: None,
    })
}

impl KernelHandle {
    fn check_sector(&self, arg: f64, half_widths: f64) -> Result<(), KernelError> {
        let limit = half_widths * FRAC_PI_2;
        if arg.abs() >= limit {
            return Err(KernelError::ArgumentOutsideSector { arg, limit });
        }
        Ok(())
    }

    /// The exponent of the constructed representation, by direct quadrature.
    fn exponent_direct(&self, w: RayPoint) -> Result<Complex64, KernelError> {
        let sp = self.seq_pow_s.as_ref().expect("constructed flavor");
        let zs = w.powf(self.s).to_complex();
        let zs2 = zs * zs;
        // absolute error on the exponent maps one-to-one onto relative
        // error of G; 3e-10 leaves headroom under the 1e-8 cache budget
        let cfg = QuadConfig {
            rel_tol: self.quad_cfg.rel_tol.min(1e-10),
            abs_tol: 3e-10,
            max_subdivisions: self.quad_cfg.max_subdivisions,
            singularity_hint: SingularityHint::LogAtLeft,
        };
        let f = |t: f64| {
            let lh = sp.log_h(t).map(|h| h.log_value).unwrap_or(0.0);
            lh * 2.0 * zs / (Complex64::new(t * t, 0.0) + zs2)
        };
        let q = integrate_finite(f, 0.0, self.t0, &cfg)?;
        Ok(q.value / PI)
    }

    fn exponent(&self, w: RayPoint) -> Result<Complex64, KernelError> {
        if w.argument == 0.0 && w.modulus >= CACHE_MIN_MODULUS {
            let x = w.modulus.ln();
            for tbl in &self.tables {
                if tbl.argument == 0.0 && tbl.covers(x) {
                    return Ok(Complex64::new(-tbl.eval(x).exp(), 0.0));
                }
            }
        }
        self.exponent_direct(w)
    }

    /// `G_M(w)` for `|arg w| < delta_1 * pi / 2`.
    pub fn eval_g(&self, w: RayPoint) -> Result<Complex64, KernelError> {
        self.check_sector(w.argument, self.delta1)?;
        match self.flavor {
            KernelFlavor::ConstructedThilliez => Ok(self.exponent(w)?.exp()),
            KernelFlavor::ClosedFormGevrey(_) => {
                // e_M(z) = z G_M(1/z)  =>  G_M(w) = w * e_M(1/w)
                Ok(w.to_complex() * self.closed_form_e(w.inv()))
            }
        }
    }

    fn closed_form_e(&self, z: RayPoint) -> Complex64 {
        let KernelFlavor::ClosedFormGevrey(alpha) = self.flavor else {
            unreachable!()
        };
        let za = z.powf(1.0 / alpha);
        let zc = za.to_complex();
        zc * (-zc).exp() / alpha
    }

    /// `e_M(z) = z G_M(1/z)` for `|arg z| < delta * pi / 2`.
    pub fn eval_e(&self, z: RayPoint) -> Result<Complex64, KernelError> {
        self.check_sector(z.argument, self.delta)?;
        match self.flavor {
            KernelFlavor::ClosedFormGevrey(_) => Ok(self.closed_form_e(z)),
            KernelFlavor::ConstructedThilliez => {
                Ok(z.to_complex() * self.exponent(z.inv())?.exp())
            }
        }
    }

    /// `e_M(u/z)/u` along a ray `u = r e^{i tau}`; equals `G_M(z/u)/z` so it
    /// stays finite as `r -> 0` for the constructed flavor.
    pub fn eval_e_over_u(&self, u: RayPoint, z: RayPoint) -> Result<Complex64, KernelError> {
        let ratio = RayPoint::new(u.modulus / z.modulus, u.argument - z.argument);
        self.check_sector(ratio.argument, self.delta)?;
        match self.flavor {
            KernelFlavor::ConstructedThilliez => {
                Ok(self.exponent(ratio.inv())?.exp() / z.to_complex())
            }
            KernelFlavor::ClosedFormGevrey(_) => {
                Ok(self.closed_form_e(ratio) / u.to_complex())
            }
        }
    }

    /// Populate the argument-zero cache band `[r_min, r_max]`, refining
    /// until midpoint probes match direct evaluation within `budget`
    /// (relative on `G` where `G` is representable, on the exponent
    /// otherwise).
    pub fn warm_up(&mut self, r_min: f64, r_max: f64, budget: f64) -> Result<(), KernelError> {
        if !matches!(self.flavor, KernelFlavor::ConstructedThilliez) {
            return Ok(()); // closed form needs no cache
        }
        let r_min = r_min.max(CACHE_MIN_MODULUS);
        let x0 = r_min.ln();
        let x1 = r_max.ln();
        let mut per_unit = 48.0f64; // points per ln-unit
        for _ in 0..4 {
            let n = (((x1 - x0) * per_unit).ceil() as usize + 2).max(8);
            let dx = (x1 - x0) / (n - 1) as f64;
            let mut u_re = Vec::with_capacity(n);
            for i in 0..n {
                let r = (x0 + dx * i as f64).exp();
                let ex = self.exponent_direct(RayPoint::positive_real(r))?;
                u_re.push((-ex.re).max(f64::MIN_POSITIVE).ln());
            }
            let tbl = RayTable { argument: 0.0, x0, dx, u_re };
            // probe at cell midpoints on a subsample
            let mut worst = 0.0f64;
            let step = (n / 24).max(1);
            for i in (0..n - 1).step_by(step) {
                let x = x0 + dx * (i as f64 + 0.5);
                let direct = self.exponent_direct(RayPoint::positive_real(x.exp()))?.re;
                let interp = -tbl.eval(x).exp();
                let err = if direct.abs() < 60.0 {
                    (interp.exp() - direct.exp()).abs() / direct.exp().max(f64::MIN_POSITIVE)
                } else {
                    (interp - direct).abs() / direct.abs()
                };
                worst = worst.max(err);
            }
            if worst <= budget {
                self.tables.retain(|t| t.argument != 0.0);
                self.tables.push(tbl);
                return Ok(());
            }
            per_unit *= 2.0;
        }
        Err(KernelError::CacheMismatch(format!(
            "interpolation budget {budget:.1e} not reached"
        )))
    }

    pub fn cache_is_warm(&self) -> bool {
        !self.tables.is_empty()
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "{:?}|{}|{}|{}|{:.17e}|{:.17e}",
            self.seq.source, self.seq.pmax, self.delta1, self.s,
            self.quad_cfg.rel_tol, self.quad_cfg.abs_tol
        ));
        hex::encode(&h.finalize()[..16])
    }

    pub fn cache_path(&self, dir: &Path) -> std::path::PathBuf {
        dir.join(format!("kernel-{}.json", self.digest()))
    }

    pub fn cache_save(&self, dir: &Path) -> Result<(), KernelError> {
        std::fs::create_dir_all(dir).map_err(|e| KernelError::CacheIo(e.to_string()))?;
        let file = CacheFile {
            digest: self.digest(),
            delta1: self.delta1,
            s: self.s,
            rel_tol: self.quad_cfg.rel_tol,
            abs_tol: self.quad_cfg.abs_tol,
            tables: self.tables.clone(),
        };
        let txt = serde_json::to_string(&file).map_err(|e| KernelError::CacheIo(e.to_string()))?;
        std::fs::write(self.cache_path(dir), txt).map_err(|e| KernelError::CacheIo(e.to_string()))
    }

    /// Load a cache dump if one matches this kernel's key; `Ok(false)` when
    /// no file is present.
    pub fn cache_load(&mut self, dir: &Path) -> Result<bool, KernelError> {
        let path = self.cache_path(dir);
        if !path.exists() {
            return Ok(false);
        }
        let txt = std::fs::read_to_string(&path).map_err(|e| KernelError::CacheIo(e.to_string()))?;
        let file: CacheFile =
            serde_json::from_str(&txt).map_err(|e| KernelError::CacheIo(e.to_string()))?;
        if file.digest != self.digest() {
            return Err(KernelError::CacheMismatch("digest mismatch".into()));
        }
        self.tables = file.tables;
        Ok(true)
    }

    /// Fit the sandwich constants of the two-sided `h_M` bound on a
    /// positive grid.
    pub fn verify_sandwich(&mut self, grid: &[f64]) -> Result<SandwichFit, KernelError> {
        let log_g: Vec<f64> = grid
            .iter()
            .map(|&x| self.eval_g(RayPoint::positive_real(x)).map(|g| g.norm().ln()))
            .collect::<Result<_, _>>()?;
        let kgrid: Vec<f64> = (0..97).map(|i| 1e-3 * 10f64.powf(6.0 * i as f64 / 96.0)).collect();

        // smallest k3 with |G(x)| <= h(k3 x) everywhere
        let mut k3 = None;
        for &k in &kgrid {
            let ok = grid.iter().zip(&log_g).all(|(&x, &lg)| {
                self.seq
                    .log_h(k * x)
                    .map(|h| lg <= h.log_value + 1e-9)
                    .unwrap_or(false)
            });
            if ok {
                k3 = Some(k);
                break;
            }
        }
        // largest k2 whose implied k1 stays above the floor
        let mut best = None;
        for &k in kgrid.iter().rev() {
            let mut log_k1 = f64::INFINITY;
            for (&x, &lg) in grid.iter().zip(&log_g) {
                let lh = self.seq.log_h(k * x)?.log_value;
                log_k1 = log_k1.min(lg - lh);
            }
            if log_k1 >= (1e-3f64).ln() {
                best = Some((log_k1.min(0.0).exp(), k));
                break;
            }
        }
        let fit = match (best, k3) {
            (Some((k1, k2)), Some(k3)) => SandwichFit { k1, k2, k3, pass: true },
            _ => SandwichFit {
                k1: best.map(|b| b.0).unwrap_or(0.0),
                k2: best.map(|b| b.1).unwrap_or(0.0),
                k3: k3.unwrap_or(f64::INFINITY),
                pass: false,
            },
        };
        self.sandwich = Some(fit);
        Ok(fit)
    }

    /// Fit `(C, K)` with `|e_M(x)| <= C h_M(K/x)` on a positive grid.
    pub fn fit_flatness(&mut self, grid: &[f64]) -> Result<(f64, f64), KernelError> {
        let log_e: Vec<f64> = grid
            .iter()
            .map(|&x| self.eval_e(RayPoint::positive_real(x)).map(|e| e.norm().ln()))
            .collect::<Result<_, _>>()?;
        let kgrid: Vec<f64> = (0..49).map(|i| 10f64.powf(3.0 * i as f64 / 48.0)).collect();
        let mut best: Option<(f64, f64)> = None;
        for &k in &kgrid {
            let mut log_c = f64::NEG_INFINITY;
            for (&x, &le) in grid.iter().zip(&log_e) {
                let lh = self.seq.log_h(k / x)?.log_value;
                log_c = log_c.max(le - lh);
            }
            let c = log_c.exp().max(1.0);
            if best.map(|(bc, _)| c < bc).unwrap_or(true) {
                best = Some((c, k));
            }
        }
        let (c, k) = best.unwrap();
        self.flatness = Some((c, k));
        Ok((c, k))
    }

    /// Majorant `r -> (C/|z|) h_M(K |z| / r)` for `|e_M(r e^{i tau}/z)/r|`,
    /// usable as a ray-truncation envelope.
    pub fn envelope_for_ray(
        &self,
        z: RayPoint,
    ) -> Result<impl Fn(f64) -> f64 + '_, KernelError> {
        let (c, k) = self.flatness.ok_or(KernelError::SandwichNotVerified)?;
        let seq = &self.seq;
        let zm = z.modulus;
        Ok(move |r: f64| {
            if r <= 0.0 {
                return c / zm;
            }
            (c / zm) * seq.eval_h(k * zm / r).unwrap_or(1.0)
        })
    }
}

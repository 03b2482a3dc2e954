//! Magnetostatics on the unit ball: spherical-Bessel zero solver with
//! interlacing brackets, toroidal Stokes eigenfields u = grad(psi) x X with
//! psi = f(r) Y_l^m, eigenvalue enumeration with the Weyl-trend fit,
//! Gauss-Legendre product quadrature, spectral energy modes
//! E_k(B) = (1/2) <B, B_k>^2, coarse-field synthesis from prescribed energy
//! profiles, the curl eigenfield on the (2 pi)-torus with its relaxation
//! interpolant, and the almost-sure-dynamo rate estimator.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::dynamo::smoothstep7;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, VectorField};

// ---------------------------------------------------------------------------
// spherical Bessel functions and their zeros
// ---------------------------------------------------------------------------

/// Spherical Bessel function j_l(x): closed forms for l <= 2, upward
/// recurrence for x >= l (stable there), downward Miller recurrence
/// otherwise.
pub fn sph_bessel(l: usize, x: f64) -> f64 {
    if x.abs() < 1e-10 {
        return if l == 0 { 1.0 - x * x / 6.0 } else { 0.0 };
    }
    let j0 = x.sin() / x;
    if l == 0 {
        return j0;
    }
    let j1 = x.sin() / (x * x) - x.cos() / x;
    if l == 1 {
        return j1;
    }
    if x >= l as f64 {
        let (mut a, mut b) = (j0, j1);
        for n in 1..l {
            let c = (2 * n + 1) as f64 / x * b - a;
            a = b;
            b = c;
        }
        b
    } else {
        // downward recurrence from well above l, normalized against j0
        let start = l + 16 + (x as usize);
        let (mut jp, mut j) = (0.0f64, 1e-280f64);
        let mut out = 0.0;
        for n in (0..=start).rev() {
            let jm = (2 * n + 3) as f64 / x * j - jp;
            jp = j;
            j = jm;
            if n == l {
                out = j;
            }
            // rescale to avoid overflow
            if j.abs() > 1e250 {
                jp /= 1e250;
                j /= 1e250;
                out /= 1e250;
            }
        }
        out * j0 / j
    }
}

/// d/dx j_l(x) = j_{l-1}(x) - (l+1)/x j_l(x).
pub fn sph_bessel_deriv(l: usize, x: f64) -> f64 {
    if l == 0 {
        -sph_bessel(1, x)
    } else {
        sph_bessel(l - 1, x) - (l + 1) as f64 / x * sph_bessel(l, x)
    }
}

fn refine_zero(l: usize, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = sph_bessel(l, a);
    for attempt in 0..=3 {
        if fa * sph_bessel(l, b) < 0.0 {
            break;
        }
        if attempt == 3 {
            return Err(Error::Ball(format!(
                "no sign change bracketing a zero of j_{l} in ({a}, {b})"
            )));
        }
        let w = (b - a) * 0.25;
        a -= w;
        b += w;
        fa = sph_bessel(l, a);
    }
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = sph_bessel(l, m);
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if b - a < 1e-13 * b {
            break;
        }
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..4 {
        let f = sph_bessel(l, x);
        let d = sph_bessel_deriv(l, x);
        if d.abs() < 1e-300 {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() < 1e-15 * x {
            break;
        }
    }
    Ok(x)
}

/// Table of zeros: row l holds the first `counts[l]` positive zeros of j_l,
/// built row by row from the interlacing brackets
/// j_{l-1,k} < j_{l,k} < j_{l-1,k+1} (row 0 is exactly k pi).
pub fn bessel_zero_table(l_max: usize, k_max: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(l_max + 1);
    let n0 = k_max + l_max;
    rows.push((1..=n0).map(|k| k as f64 * PI).collect());
    for l in 1..=l_max {
        let prev = &rows[l - 1];
        let count = k_max + (l_max - l);
        let mut row = Vec::with_capacity(count);
        for k in 1..=count {
            // nudge the bracket ends off the neighboring zeros
            let a = prev[k - 1] + 1e-9;
            let b = prev[k] - 1e-9;
            row.push(refine_zero(l, a, b)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// k-th positive zero of J_{l+1/2} (equivalently of j_l).
pub fn bessel_zero(l: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Ball("zero index k starts at 1".into()));
    }
    if l == 0 {
        return Ok(k as f64 * PI);
    }
    let table = bessel_zero_table(l, k)?;
    Ok(table[l][k - 1])
}

/// Residual of the half-integer Bessel function at x:
/// J_{l+1/2}(x) = sqrt(2x/pi) j_l(x).
pub fn half_bessel(l: usize, x: f64) -> f64 {
    (2.0 * x / PI).sqrt() * sph_bessel(l, x)
}

// ---------------------------------------------------------------------------
// real spherical harmonics
// ---------------------------------------------------------------------------

/// Associated Legendre P_l^m(x) for m >= 0 (Condon-Shortley phase).
fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    debug_assert!(m <= l);
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= -fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    for ll in (m + 2)..=l {
        let pll = (x * ((2 * ll - 1) as f64) * pmmp1 - ((ll + m - 1) as f64) * pmm)
            / ((ll - m) as f64);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pmmp1
}

/// d/dtheta P_l^m(cos theta) via the stable two-term identity.
fn assoc_legendre_theta_deriv(l: usize, m: usize, ct: f64, st: f64) -> f64 {
    // dP/dtheta = [l ct P_l^m - (l+m) P_{l-1}^m] / st * (-1)... derived from
    // (1-x^2) dP/dx = -l x P_l^m + (l+m) P_{l-1}^m with x = cos theta:
    // dP/dtheta = -st dP/dx = [l ct P_l^m - (l+m) P_{l-1}^m] / st
    let p = assoc_legendre(l, m, ct);
    let pm1 = if m <= l - 1 { assoc_legendre(l - 1, m, ct) } else { 0.0 };
    let s = if st.abs() < 1e-12 { 1e-12f64.copysign(st) } else { st };
    (l as f64 * ct * p - (l + m) as f64 * pm1) / s
}

fn sph_norm(l: usize, m: usize) -> f64 {
    // sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) in log space to survive l = 40
    let mut lg = 0.0f64;
    for i in (l - m + 1)..=(l + m) {
        lg += (i as f64).ln();
    }
    (((2 * l + 1) as f64 / (4.0 * PI)).ln() - lg).exp().sqrt() * 1.0
}

/// Real spherical harmonic Y_l^m(theta, phi) and its angular derivatives;
/// returns (Y, dY/dtheta, dY/dphi / sin(theta)).
fn real_sph_harm_all(l: usize, m: i32, ct: f64, st: f64, phi: f64) -> (f64, f64, f64) {
    let ma = m.unsigned_abs() as usize;
    let n = sph_norm(l, ma);
    let p = assoc_legendre(l, ma, ct);
    let dp = assoc_legendre_theta_deriv(l, ma, ct, st);
    let s = if st.abs() < 1e-12 { 1e-12f64.copysign(st) } else { st };
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => (n * p, n * dp, 0.0),
        std::cmp::Ordering::Greater => {
            let (c, sn) = ((ma as f64 * phi).cos(), (ma as f64 * phi).sin());
            let r2 = std::f64::consts::SQRT_2;
            (
                r2 * n * p * c,
                r2 * n * dp * c,
                -r2 * n * p * ma as f64 * sn / s,
            )
        }
        std::cmp::Ordering::Less => {
            let (c, sn) = ((ma as f64 * phi).cos(), (ma as f64 * phi).sin());
            let r2 = std::f64::consts::SQRT_2;
            (
                r2 * n * p * sn,
                r2 * n * dp * sn,
                r2 * n * p * ma as f64 * c / s,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// eigenmodes and toroidal fields
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct BallEigenmode {
    pub ell: usize,
    pub m: i32,
    pub k: usize,
    /// j_{ell,k}, the k-th positive zero of J_{ell+1/2}
    pub zero: f64,
    /// Stokes/magnetostatic eigenvalue j_{ell,k}^2
    pub lambda: f64,
    /// L^2 norm of the raw (unnormalized) toroidal field, by quadrature
    pub norm: f64,
}

/// Raw toroidal field u = grad(psi) x X = f(r) [ (dY/dphi / sin) theta_hat
/// - (dY/dtheta) phi_hat ] with f(r) = j_ell(sqrt(lambda) r). Defined for
/// every point (the radial profile is entire); boundary and tangency
/// properties hold on the closed ball.
fn toroidal_raw(ell: usize, m: i32, zero: f64, p: [f64; 3]) -> [f64; 3] {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r < 1e-14 {
        return [0.0; 3];
    }
    let ct = (p[2] / r).clamp(-1.0, 1.0);
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let phi = p[1].atan2(p[0]);
    let f = sph_bessel(ell, zero * r);
    let (_, dy_dtheta, dy_dphi_over_sin) = real_sph_harm_all(ell, m, ct, st, phi);
    let (cp, sp) = (phi.cos(), phi.sin());
    let theta_hat = [ct * cp, ct * sp, -st];
    let phi_hat = [-sp, cp, 0.0];
    let mut u = [0.0; 3];
    for i in 0..3 {
        u[i] = f * (dy_dphi_over_sin * theta_hat[i] - dy_dtheta * phi_hat[i]);
    }
    u
}

/// Evaluate the toroidal eigenfield of `mode` (unnormalized unless scaled by
/// 1/mode.norm) at points inside the closed unit ball.
pub fn toroidal_eigenfield(mode: &BallEigenmode, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if r2 > 1.0 + 1e-12 {
            return Err(Error::Ball(format!(
                "evaluation point at |x| = {} lies outside the unit ball",
                r2.sqrt()
            )));
        }
        out.push(toroidal_raw(mode.ell, mode.m, mode.zero, *p));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// ball quadrature
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton on the recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, 0.0f64);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, 0.0f64);
        for j in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
        }
        let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[derive(Clone)]
pub struct BallQuadrature {
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// largest harmonic degree whose pairwise products integrate exactly
    pub max_ell: usize,
}

/// Product rule: Gauss-Legendre in r on [0, 1] (the r^2 Jacobian folded into
/// the weights), Gauss-Legendre in cos(theta), uniform in phi. Exact for
/// products of two harmonics up to degree min(n_theta - 1, (n_phi - 1)/2).
pub fn ball_quadrature(n_r: usize, n_theta: usize, n_phi: usize) -> BallQuadrature {
    let (xr, wr) = gauss_legendre(n_r);
    let (xt, wt) = gauss_legendre(n_theta);
    let mut nodes = Vec::with_capacity(n_r * n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_r * n_theta * n_phi);
    let wphi = 2.0 * PI / n_phi as f64;
    for (i, &xi) in xr.iter().enumerate() {
        let r = 0.5 * (xi + 1.0);
        let wr_i = 0.5 * wr[i] * r * r;
        for (j, &ct) in xt.iter().enumerate() {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for kk in 0..n_phi {
                let phi = wphi * kk as f64;
                nodes.push([r * st * phi.cos(), r * st * phi.sin(), r * ct]);
                weights.push(wr_i * wt[j] * wphi);
            }
        }
    }
    BallQuadrature {
        nodes,
        weights,
        max_ell: (n_theta - 1).min((n_phi - 1) / 2),
    }
}

// ---------------------------------------------------------------------------
// energy modes
// ---------------------------------------------------------------------------

/// An L^2-normalized eigenmode sampled at the quadrature nodes.
#[derive(Clone)]
pub struct ModeField {
    pub mode: BallEigenmode,
    pub samples: Vec<[f64; 3]>,
}

fn quad_inner(a: &[[f64; 3]], b: &[[f64; 3]], quad: &BallQuadrature) -> f64 {
    a.iter()
        .zip(b)
        .zip(&quad.weights)
        .map(|((x, y), w)| w * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]))
        .sum()
}

/// Build the normalized mode field for (ell, m, k) on the given quadrature.
pub fn mode_field(ell: usize, m: i32, k: usize, quad: &BallQuadrature) -> Result<ModeField> {
    if ell == 0 || ell > quad.max_ell {
        return Err(Error::Ball(format!(
            "degree ell = {ell} outside (0, {}] supported by the quadrature",
            quad.max_ell
        )));
    }
    if m.unsigned_abs() as usize > ell {
        return Err(Error::Ball(format!("order m = {m} exceeds degree {ell}")));
    }
    let zero = bessel_zero(ell, k)?;
    let mut mode = BallEigenmode {
        ell,
        m,
        k,
        zero,
        lambda: zero * zero,
        norm: 1.0,
    };
    let mut samples: Vec<[f64; 3]> = quad
        .nodes
        .iter()
        .map(|p| toroidal_raw(ell, m, zero, *p))
        .collect();
    let norm = quad_inner(&samples, &samples, quad).sqrt();
    if norm < 1e-300 {
        return Err(Error::Ball("degenerate mode with zero norm".into()));
    }
    for s in &mut samples {
        for c in s.iter_mut() {
            *c /= norm;
        }
    }
    mode.norm = norm;
    Ok(ModeField { mode, samples })
}

/// Spectral energy E_k(B) = (1/2) <B, B_k>_{L^2}^2 by quadrature; rejects
/// basis elements that are not normalized to 1e-6.
pub fn energy_mode(b: &[[f64; 3]], basis: &ModeField, quad: &BallQuadrature) -> Result<f64> {
    if b.len() != quad.nodes.len() || basis.samples.len() != quad.nodes.len() {
        return Err(Error::Ball("sample count does not match the quadrature".into()));
    }
    let nrm = quad_inner(&basis.samples, &basis.samples, quad).sqrt();
    if (nrm - 1.0).abs() > 1e-6 {
        return Err(Error::Ball(format!("basis element has L2 norm {nrm}, expected 1")));
    }
    let inner = quad_inner(b, &basis.samples, quad);
    Ok(0.5 * inner * inner)
}

// ---------------------------------------------------------------------------
// eigenvalue enumeration and the Weyl trend
// ---------------------------------------------------------------------------

/// All eigenvalues with lambda <= bound as (lambda, ell, k), ell >= 1,
/// each carrying multiplicity 2 ell + 1 (not expanded).
pub fn enumerate_eigenvalues(bound: f64) -> Result<Vec<(f64, usize, usize)>> {
    let jmax = bound.max(0.0).sqrt();
    let mut out = Vec::new();
    let mut l = 1usize;
    // row l has no zeros below jmax once j_{l,1} > jmax; j_{l,1} > l
    loop {
        if (l as f64) > jmax {
            break;
        }
        let first = bessel_zero(l, 1)?;
        if first > jmax {
            break;
        }
        let mut k = 1usize;
        loop {
            let z = bessel_zero(l, k)?;
            if z > jmax {
                break;
            }
            out.push((z * z, l, k));
            k += 1;
        }
        l += 1;
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// N(bound) = sum of multiplicities 2 ell + 1 over eigenvalues <= bound.
pub fn eigenvalue_count(bound: f64) -> Result<usize> {
    Ok(enumerate_eigenvalues(bound)?
        .iter()
        .map(|(_, l, _)| 2 * l + 1)
        .sum())
}

/// Sorted first `count` eigenvalues with multiplicity expanded.
pub fn eigenvalue_sequence(count: usize) -> Result<Vec<f64>> {
    let mut bound = 40.0;
    loop {
        let modes = enumerate_eigenvalues(bound)?;
        let total: usize = modes.iter().map(|(_, l, _)| 2 * l + 1).sum();
        if total >= count {
            let mut seq = Vec::with_capacity(total);
            for (lam, l, _) in modes {
                for _ in 0..(2 * l + 1) {
                    seq.push(lam);
                }
            }
            seq.truncate(count);
            return Ok(seq);
        }
        bound *= 2.0;
    }
}

/// Least-squares exponent of log(lambda_k) against log(k): the first
/// `count` eigenvalues (distinct (ell, zero-index) modes in increasing
/// order) are expanded with their multiplicities 2 ell + 1 into the ranked
/// sequence lambda_1 <= lambda_2 <= ... and the fit runs over the full
/// expanded sequence. The Weyl trend predicts 2/3.
pub fn weyl_fit(count: usize) -> Result<f64> {
    if count < 50 {
        return Err(Error::Ball("weyl_fit needs at least 50 eigenvalues".into()));
    }
    let mut bound = 40.0;
    let modes = loop {
        let modes = enumerate_eigenvalues(bound)?;
        if modes.len() >= count {
            break modes;
        }
        bound *= 2.0;
    };
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (lam, l, _) in modes.iter().take(count) {
        for _ in 0..(2 * l + 1) {
            pts.push(((pts.len() + 1) as f64, *lam));
        }
    }
    Ok(crate::dynamo::fit_loglog_slope(&pts))
}

// ---------------------------------------------------------------------------
// energy profiles and coarse-field synthesis
// ---------------------------------------------------------------------------

pub type EnergyFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct EnergyProfile {
    /// mode index in the global (sorted, multiplicity-expanded) sequence;
    /// drives the k^{m/3} weight of the summability surrogate
    pub k: usize,
    pub label: String,
    pub sampler: EnergyFn,
}

#[derive(Clone, Default)]
pub struct EnergyProfileSet {
    pub profiles: Vec<EnergyProfile>,
}

impl EnergyProfileSet {
    pub fn single(label: &str, sampler: EnergyFn) -> Self {
        EnergyProfileSet {
            profiles: vec![EnergyProfile {
                k: 1,
                label: label.into(),
                sampler,
            }],
        }
    }

    /// Nonnegativity plus the summability surrogate
    /// sum_k |d_t^n sqrt(E_k(t))| k^{m/3} evaluated on the sample grid
    /// (finite lists make it automatically finite; the value is returned for
    /// logging). Derivatives by centered differences with step h.
    pub fn summability_surrogate(
        &self,
        times: &[f64],
        n: usize,
        m: usize,
        h: f64,
    ) -> Result<f64> {
        if n > 2 || m > 2 {
            return Err(Error::Ball("surrogate tested only for (n, m) <= (2, 2)".into()));
        }
        let mut worst: f64 = 0.0;
        for &t in times {
            let mut total = 0.0;
            for p in &self.profiles {
                let g = |s: f64| -> Result<f64> {
                    let v = (p.sampler)(s);
                    if v < 0.0 {
                        return Err(Error::Ball(format!(
                            "profile {} negative at t = {s}: {v}",
                            p.label
                        )));
                    }
                    Ok(v.sqrt())
                };
                let d = match n {
                    0 => g(t)?,
                    1 => (g(t + h)? - g(t - h)?) / (2.0 * h),
                    _ => (g(t + h)? - 2.0 * g(t)? + g(t - h)?) / (h * h),
                };
                total += d.abs() * (p.k as f64).powf(m as f64 / 3.0);
            }
            if !total.is_finite() {
                return Err(Error::Ball("summability surrogate diverged".into()));
            }
            worst = worst.max(total);
        }
        Ok(worst)
    }
}

/// Coarse field snapshots B(t_i) = sum_k sqrt(2 E_k(t_i)) B_k at the
/// quadrature nodes; profiles pair with basis elements positionally.
pub fn synth_coarse_field(
    set: &EnergyProfileSet,
    basis: &[ModeField],
    times: &[f64],
    quad: &BallQuadrature,
) -> Result<Vec<Vec<[f64; 3]>>> {
    if set.profiles.len() != basis.len() {
        return Err(Error::Ball(format!(
            "{} profiles against {} basis modes",
            set.profiles.len(),
            basis.len()
        )));
    }
    let npts = quad.nodes.len();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let mut snap = vec![[0.0f64; 3]; npts];
        for (p, b) in set.profiles.iter().zip(basis) {
            let e = (p.sampler)(t);
            if e < 0.0 {
                return Err(Error::Ball(format!(
                    "profile {} negative at t = {t}: {e}",
                    p.label
                )));
            }
            let c = (2.0 * e).sqrt();
            for (s, bs) in snap.iter_mut().zip(&b.samples) {
                for i in 0..3 {
                    s[i] += c * bs[i];
                }
            }
        }
        out.push(snap);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// torus curl eigenfield and relaxation interpolant
// ---------------------------------------------------------------------------

/// The classical curl eigenfield with eigenvalue 1 on the (2 pi)-periodic
/// 3-torus: (sin x3 + cos x2, sin x1 + cos x3, sin x2 + cos x1).
pub fn beltrami_torus(spec: GridSpec) -> Result<VectorField> {
    if spec.dim != 3 {
        return Err(Error::Ball("curl eigenfield lives on the 3-torus".into()));
    }
    if (spec.len - 2.0 * PI).abs() > 1e-12 {
        return Err(Error::Ball(format!(
            "torus period {} must be 2 pi for the unit curl eigenvalue",
            spec.len
        )));
    }
    let bx = ScalarField::from_fn(spec, |x| x[2].sin() + x[1].cos());
    let by = ScalarField::from_fn(spec, |x| x[0].sin() + x[2].cos());
    let bz = ScalarField::from_fn(spec, |x| x[1].sin() + x[0].cos());
    Ok(VectorField::from_comps(vec![bx, by, bz]))
}

/// Relaxation cutoff: 1 on t <= 1, 0 on t >= 2, smooth in between.
pub fn relaxation_cutoff(t: f64) -> f64 {
    1.0 - smoothstep7(t - 1.0)
}

/// Interpolant chi(t) B0 + (1 - chi(t)) Bend between a solenoidal initial
/// field and the relaxed state; exact plateaus outside (1, 2).
pub fn taylor_interpolant(b0: &VectorField, bend: &VectorField, t: f64) -> Result<VectorField> {
    let div = b0.divergence()?.lebesgue_norm(f64::INFINITY)?;
    let scale = b0.lebesgue_norm(f64::INFINITY)?.max(1e-300);
    if div > 1e-8 * scale {
        return Err(Error::Ball(format!(
            "initial field is not solenoidal: |div| = {div:.3e}"
        )));
    }
    let chi = relaxation_cutoff(t);
    if chi == 1.0 {
        return Ok(b0.clone());
    }
    if chi == 0.0 {
        return Ok(bend.clone());
    }
    Ok(b0.scale(chi).add(&bend.scale(1.0 - chi)))
}

// ---------------------------------------------------------------------------
// dynamo rate estimate
// ---------------------------------------------------------------------------

/// Fraction of the time measure in (0, T] where (1/t) log E(t) >= gamma,
/// with trapezoid weights on the sample grid. Nonpositive energies count as
/// failures at their weight.
pub fn dynamo_rate_estimate(
    times: &[f64],
    energies: &[f64],
    gamma: f64,
    t_max: f64,
) -> Result<f64> {
    if times.is_empty() || times.len() != energies.len() {
        return Err(Error::Ball("empty or mismatched energy series".into()));
    }
    let mut measure = 0.0;
    let mut hit = 0.0;
    for i in 0..times.len() {
        let t = times[i];
        if t <= 0.0 || t > t_max {
            continue;
        }
        let left = if i == 0 { t } else { times[i - 1].max(0.0) };
        let right = if i + 1 < times.len() {
            times[i + 1].min(t_max)
        } else {
            t_max
        };
        let w = 0.5 * ((t - left) + (right - t)).max(0.0);
        measure += w;
        let e = energies[i];
        if e > 0.0 && e.ln() / t >= gamma {
            hit += w;
        }
    }
    if measure <= 0.0 {
        return Err(Error::Ball("no samples inside (0, T]".into()));
    }
    Ok(hit / measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_closed_form_and_oracle() {
        // j_0 zeros are exactly k pi
        for k in 1..=10 {
            let z = bessel_zero(0, k).unwrap();
            assert!((z - k as f64 * PI).abs() < 1e-12);
        }
        // first zero of j_1 solves tan x = x; independent bisection oracle
        // on (pi, 3 pi / 2)
        let (mut a, mut b) = (PI + 1e-9, 1.5 * PI - 1e-9);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m.tan() - m > 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let oracle = 0.5 * (a + b);
        assert!((oracle - 4.493409457909064).abs() < 1e-12, "oracle {oracle}");
        let z11 = bessel_zero(1, 1).unwrap();
        assert!((z11 - 4.493409457909064).abs() < 1e-9, "j_1,1 = {z11}");
        assert!((z11 * z11 - 20.190728556426629).abs() < 1e-6);
        // interlacing example
        assert!(z11 < bessel_zero(0, 2).unwrap());
    }

    #[test]
    fn zero_table_residuals_and_interlacing() {
        let table = bessel_zero_table(40, 40).unwrap();
        for (l, row) in table.iter().enumerate() {
            for (i, &z) in row.iter().enumerate() {
                let res = half_bessel(l, z).abs();
                assert!(res < 1e-10, "residual {res:.3e} at l={l} k={}", i + 1);
                if l > 0 {
                    // j_{l,k} < j_{l-1,k+1}
                    assert!(
                        z < table[l - 1][i + 1],
                        "interlacing fails at l={l} k={}",
                        i + 1
                    );
                    assert!(table[l - 1][i] < z, "lower interlacing fails");
                }
            }
        }
    }

    #[test]
    fn weyl_trend_and_counting() {
        // empty below the smallest eigenvalue
        assert_eq!(eigenvalue_count(20.0).unwrap(), 0);
        assert!(eigenvalue_count(20.2).unwrap() >= 3); // j_{1,1}^2 with mult 3
        // monotone counting
        let mut prev = 0;
        for b in [25.0, 50.0, 100.0, 200.0] {
            let n = eigenvalue_count(b).unwrap();
            assert!(n >= prev);
            prev = n;
        }
        let fit = weyl_fit(200).unwrap();
        assert!((0.6..=0.75).contains(&fit), "weyl exponent {fit}");
        // single measured envelope constant over the first 500 modes
        let seq = eigenvalue_sequence(500).unwrap();
        let c = seq
            .iter()
            .enumerate()
            .map(|(i, &l)| l / ((i + 1) as f64).powf(2.0 / 3.0))
            .fold(0.0f64, f64::max);
        assert!(c.is_finite() && c < 30.0, "envelope constant {c}");
        for (i, &l) in seq.iter().enumerate() {
            assert!(l <= c * ((i + 1) as f64).powf(2.0 / 3.0) + 1e-9);
        }
    }

    #[test]
    fn toroidal_fields_tangent_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let quad = ball_quadrature(48, 48, 96);
        let mf = mode_field(2, 1, 1, &quad).unwrap();
        // tangency at random interior points
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                let r: f64 = rng.gen_range(0.05..0.95);
                let ct: f64 = rng.gen_range(-0.99..0.99);
                let phi: f64 = rng.gen_range(0.0..2.0 * PI);
                let st = (1.0 - ct * ct).sqrt();
                [r * st * phi.cos(), r * st * phi.sin(), r * ct]
            })
            .collect();
        let vals = toroidal_eigenfield(&mf.mode, &pts).unwrap();
        let sup = vals
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0f64, f64::max);
        assert!(sup > 0.0);
        for (p, v) in pts.iter().zip(&vals) {
            let dot = p[0] * v[0] + p[1] * v[1] + p[2] * v[2];
            assert!(dot.abs() < 1e-10 * sup.max(1.0), "tangency {dot:.3e}");
        }
        // boundary samples vanish
        for p in pts.iter().take(50) {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let bp = [p[0] / r, p[1] / r, p[2] / r];
            let v = toroidal_eigenfield(&mf.mode, &[bp]).unwrap()[0];
            let mag = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!(mag < 1e-8 * sup, "boundary magnitude {mag:.3e}");
        }
        // outside point rejected
        assert!(toroidal_eigenfield(&mf.mode, &[[1.2, 0.0, 0.0]]).is_err());
    }

    fn fd_curl(ell: usize, m: i32, zero: f64, p: [f64; 3], h: f64) -> [f64; 3] {
        let eval = |q: [f64; 3]| toroidal_raw(ell, m, zero, q);
        let mut d = [[0.0f64; 3]; 3]; // d[i][j] = d_i u_j
        for i in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            let (up, um) = (eval(pp), eval(pm));
            for j in 0..3 {
                d[i][j] = (up[j] - um[j]) / (2.0 * h);
            }
        }
        [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]]
    }

    #[test]
    fn rayleigh_quotient_recovers_eigenvalue() {
        let quad = ball_quadrature(48, 48, 96);
        for (ell, m, k) in [(1usize, 0i32, 1usize), (2, 1, 1), (3, -2, 2)] {
            let mf = mode_field(ell, m, k, &quad).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (p, w) in quad.nodes.iter().zip(&quad.weights) {
                let u = toroidal_raw(ell, m, mf.mode.zero, *p);
                let c = fd_curl(ell, m, mf.mode.zero, *p, 1e-4);
                num += w * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
                den += w * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
            }
            let rq = num / den;
            let rel = (rq - mf.mode.lambda).abs() / mf.mode.lambda;
            assert!(rel < 5e-3, "Rayleigh {rq} vs {} ({rel:.2e})", mf.mode.lambda);
        }
    }

    #[test]
    fn sobolev_trend_of_modes() {
        // ||B_k||_{H^m} estimate grows no faster than C (1 + lambda^{m/2})
        let quad = ball_quadrature(24, 24, 48);
        let modes = enumerate_eigenvalues(250.0).unwrap();
        let chosen: Vec<_> = modes.iter().step_by(modes.len() / 20).take(20).collect();
        for m_ord in [1usize, 2] {
            let mut ratios = Vec::new();
            for &&(lam, ell, k) in &chosen {
                let mf = mode_field(ell, 0, k, &quad).unwrap();
                let h = 1e-3;
                let mut acc = 0.0;
                for (p, w) in quad.nodes.iter().zip(&quad.weights) {
                    if m_ord == 1 {
                        let mut pt = *p;
                        let mut s = 0.0;
                        for i in 0..3 {
                            let (o0, o1) = (pt[i] - h, pt[i] + h);
                            let mut pp = pt;
                            pp[i] = o1;
                            let up = toroidal_raw(ell, 0, mf.mode.zero, pp);
                            pp[i] = o0;
                            let um = toroidal_raw(ell, 0, mf.mode.zero, pp);
                            pt[i] = p[i];
                            for j in 0..3 {
                                let d = (up[j] - um[j]) / (2.0 * h);
                                s += d * d;
                            }
                        }
                        acc += w * s;
                    } else {
                        let u0 = toroidal_raw(ell, 0, mf.mode.zero, *p);
                        let mut s = 0.0;
                        for i in 0..3 {
                            let mut pp = *p;
                            pp[i] += h;
                            let up = toroidal_raw(ell, 0, mf.mode.zero, pp);
                            pp[i] = p[i] - h;
                            let um = toroidal_raw(ell, 0, mf.mode.zero, pp);
                            for j in 0..3 {
                                let d2 = (up[j] - 2.0 * u0[j] + um[j]) / (h * h);
                                s += d2 * d2;
                            }
                        }
                        acc += w * s;
                    }
                }
                let est = acc.sqrt() / mf.mode.norm;
                ratios.push(est / (1.0 + lam.powf(m_ord as f64 / 2.0)));
            }
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
            assert!(
                hi.is_finite() && hi < 10.0 * lo.max(1e-6),
                "m = {m_ord}: ratio spread [{lo:.3}, {hi:.3}]"
            );
        }
    }

    #[test]
    fn energy_modes_orthonormal_and_quadratic() {
        let quad = ball_quadrature(48, 48, 96);
        let b1 = mode_field(1, 0, 1, &quad).unwrap();
        let b2 = mode_field(2, 1, 1, &quad).unwrap();
        let b3 = mode_field(1, 0, 2, &quad).unwrap();
        // self pairing is exactly 1/2
        let e = energy_mode(&b1.samples, &b1, &quad).unwrap();
        assert!((e - 0.5).abs() < 1e-6, "self energy {e}");
        // cross modes orthogonal
        for other in [&b2, &b3] {
            let c = energy_mode(&other.samples, &b1, &quad).unwrap();
            assert!(c < 1e-8, "cross energy {c:.3e}");
        }
        // linearity: B = a B1 + b B2 -> a^2/2
        let (a, bb) = (0.7, -1.3);
        let combo: Vec<[f64; 3]> = b1
            .samples
            .iter()
            .zip(&b2.samples)
            .map(|(x, y)| [a * x[0] + bb * y[0], a * x[1] + bb * y[1], a * x[2] + bb * y[2]])
            .collect();
        let ec = energy_mode(&combo, &b1, &quad).unwrap();
        assert!((ec - a * a / 2.0).abs() < 1e-6, "combo energy {ec}");
        // quadratic scaling to 1e-10 relative
        let scaled: Vec<[f64; 3]> = combo
            .iter()
            .map(|x| [3.0 * x[0], 3.0 * x[1], 3.0 * x[2]])
            .collect();
        let es = energy_mode(&scaled, &b1, &quad).unwrap();
        assert_relative_eq!(es, 9.0 * ec, max_relative = 1e-10);
        // un-normalized basis rejected
        let mut bad = b1.clone();
        for s in &mut bad.samples {
            s[0] *= 1.01;
        }
        assert!(energy_mode(&combo, &bad, &quad).is_err());
    }

    #[test]
    fn coarse_field_reproduces_profiles() {
        let quad = ball_quadrature(48, 48, 96);
        let basis = vec![
            mode_field(1, 0, 1, &quad).unwrap(),
            mode_field(2, 1, 1, &quad).unwrap(),
            mode_field(2, -1, 1, &quad).unwrap(),
        ];
        let gamma_bar = 1.0;
        let set = EnergyProfileSet {
            profiles: (0..3)
                .map(|i| EnergyProfile {
                    k: i + 1,
                    label: format!("decaying-exponential-{}", i + 1),
                    sampler: Arc::new(move |t: f64| (gamma_bar * t - (i + 1) as f64).exp()),
                })
                .collect(),
        };
        let times = [0.0, 0.3, 0.7, 1.0];
        let snaps = synth_coarse_field(&set, &basis, &times, &quad).unwrap();
        for (ti, snap) in times.iter().zip(&snaps) {
            for (p, b) in set.profiles.iter().zip(&basis) {
                let want = (p.sampler)(*ti);
                let got = energy_mode(snap, b, &quad).unwrap();
                assert!(
                    (got - want).abs() < 1e-5 * want,
                    "mode {} energy {got} vs {want}",
                    p.label
                );
            }
        }
        // single profile: total energy (1/2)||B||^2 = E(t)
        let single = EnergyProfileSet::single("exponential", Arc::new(|t: f64| t.exp()));
        let snaps = synth_coarse_field(&single, &basis[..1], &times, &quad).unwrap();
        for (ti, snap) in times.iter().zip(&snaps) {
            let total = 0.5 * quad_inner(snap, snap, &quad);
            assert!((total - ti.exp()).abs() < 1e-5 * ti.exp());
        }
        // all-zero profiles give the zero field
        let zero = EnergyProfileSet::single("zero", Arc::new(|_| 0.0));
        let z = synth_coarse_field(&zero, &basis[..1], &[0.5], &quad).unwrap();
        assert!(z[0].iter().all(|v| v == &[0.0, 0.0, 0.0]));
        // surrogate finite and logged
        let s = set.summability_surrogate(&times, 2, 2, 1e-4).unwrap();
        assert!(s.is_finite() && s > 0.0);
    }

    #[test]
    fn torus_curl_eigenfield_and_interpolant() {
        let spec = GridSpec::new(3, 32, 2.0 * PI).unwrap();
        let b = beltrami_torus(spec).unwrap();
        let res = b.curl3().unwrap().sub(&b).lebesgue_norm(f64::INFINITY).unwrap();
        let scale = b.lebesgue_norm(f64::INFINITY).unwrap();
        assert!(res < 1e-10 * scale, "curl residual {:.3e}", res / scale);
        // solenoidal initial field: another eigenfield-like combination
        let b0 = VectorField::from_comps(vec![
            ScalarField::from_fn(spec, |x| x[1].sin()),
            ScalarField::from_fn(spec, |x| x[2].sin()),
            ScalarField::from_fn(spec, |x| x[0].sin()),
        ]);
        // plateaus are exact
        let early = taylor_interpolant(&b0, &b, 0.7).unwrap();
        assert_eq!(
            early.sub(&b0).lebesgue_norm(f64::INFINITY).unwrap(),
            0.0,
            "t <= 1 must return the initial field bitwise"
        );
        let late = taylor_interpolant(&b0, &b, 2.0).unwrap();
        assert_eq!(late.sub(&b).lebesgue_norm(f64::INFINITY).unwrap(), 0.0);
        // divergence-free at intermediate times
        for t in [1.2, 1.5, 1.8] {
            let mid = taylor_interpolant(&b0, &b, t).unwrap();
            let d = mid.divergence().unwrap().lebesgue_norm(f64::INFINITY).unwrap();
            assert!(d < 1e-10 * scale, "div {d:.3e} at t = {t}");
        }
        // non-solenoidal input rejected
        let bad = VectorField::from_comps(vec![
            ScalarField::from_fn(spec, |x| x[0].sin()),
            ScalarField::from_fn(spec, |_| 0.0),
            ScalarField::from_fn(spec, |_| 0.0),
        ]);
        assert!(taylor_interpolant(&bad, &b, 1.5).is_err());
    }

    #[test]
    fn rate_estimate_examples() {
        let times: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.01).collect();
        let gamma = 0.4;
        // exact exponential with rate 2 gamma -> fraction 1
        let e1: Vec<f64> = times.iter().map(|t| (2.0 * gamma * t).exp()).collect();
        assert_eq!(dynamo_rate_estimate(&times, &e1, gamma, 10.0).unwrap(), 1.0);
        // constant energy -> fraction 0
        let e2: Vec<f64> = times.iter().map(|_| 1.0).collect();
        assert_eq!(dynamo_rate_estimate(&times, &e2, gamma, 10.0).unwrap(), 0.0);
        // dips of width w on each unit interval -> fraction about 1 - w
        let w = 0.25;
        let e3: Vec<f64> = times
            .iter()
            .map(|t| {
                if t.fract() < w {
                    1e-12
                } else {
                    (2.0 * gamma * t).exp()
                }
            })
            .collect();
        let frac = dynamo_rate_estimate(&times, &e3, gamma, 10.0).unwrap();
        assert!((frac - (1.0 - w)).abs() < 0.03, "dip fraction {frac}");
        // zeros are failures, not errors
        let e4 = vec![0.0; times.len()];
        assert_eq!(dynamo_rate_estimate(&times, &e4, gamma, 10.0).unwrap(), 0.0);
        // empty series is an error
        assert!(dynamo_rate_estimate(&[], &[], gamma, 1.0).is_err());
    }
}

//! Uniform periodic grids on the d-torus of side `len`, with FFT-based
//! calculus: spectral derivatives, antiderivatives, the Fourier-multiplier
//! inverse divergence, and grid Lebesgue / C^m / Sobolev norms.
//!
//! Conventions: N points per axis (power of two), collocation points
//! x_i = i*len/N, row-major storage with the last axis fastest. A field
//! containing oscillation frequency lambda*mu must satisfy
//! N >= 8*lambda*mu*len per axis; `check_resolution` enforces this.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Hard cap on spatial dimension; keeps index bookkeeping on the stack.
pub const MAX_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub len: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, len: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Grid(format!("dim must be in 1..={MAX_DIM}, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Grid(format!("n must be a power of two >= 4, got {n}")));
        }
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Grid(format!("len must be positive, got {len}")));
        }
        Ok(GridSpec { dim, n, len })
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.len / self.n as f64
    }

    /// Cell volume of the rectangle quadrature rule.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Decompose a flat index into per-axis indices (last axis fastest).
    #[inline]
    pub fn unravel(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    #[inline]
    pub fn ravel(&self, ix: &[usize]) -> usize {
        let mut idx = 0;
        for axis in 0..self.dim {
            idx = idx * self.n + ix[axis];
        }
        idx
    }

    /// Coordinates of the grid point with per-axis indices `ix`.
    #[inline]
    pub fn coords(&self, ix: &[usize; MAX_DIM]) -> [f64; MAX_DIM] {
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = ix[axis] as f64 * h;
        }
        x
    }

    /// Signed integer frequency for mode index k on one axis.
    #[inline]
    pub fn signed_freq(&self, k: usize) -> i64 {
        if k <= self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// Minimum per-axis resolution for oscillation frequency `lambda*mu` on
    /// a torus of side `len`: eight samples per feature cell.
    pub fn required_n(lambda: u64, mu: f64, len: f64) -> usize {
        let need = 8.0 * lambda as f64 * mu * len;
        need.ceil() as usize
    }

    pub fn check_resolution(&self, lambda: u64, mu: f64) -> Result<()> {
        let required = Self::required_n(lambda, mu, self.len);
        if self.n < required {
            Err(Error::Resolution { required, actual: self.n })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.points() {
            return Err(Error::Grid(format!(
                "value buffer has {} entries, grid needs {}",
                values.len(),
                spec.points()
            )));
        }
        Ok(ScalarField { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        ScalarField { spec, values: vec![0.0; spec.points()] }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.points());
        for idx in 0..spec.points() {
            let ix = spec.unravel(idx);
            let x = spec.coords(&ix);
            values.push(f(&x[..spec.dim]));
        }
        ScalarField { spec, values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.spec, other.spec);
        ScalarField {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Pointwise composition with the dilation x -> lambda*x on the torus.
    /// Exact on the grid: index i -> (lambda*i) mod N on every axis.
    pub fn oscillate(&self, lambda: u64) -> Self {
        let spec = self.spec;
        let n = spec.n as u64;
        let mut values = vec![0.0; spec.points()];
        for idx in 0..spec.points() {
            let ix = spec.unravel(idx);
            let mut jx = [0usize; MAX_DIM];
            for axis in 0..spec.dim {
                jx[axis] = ((ix[axis] as u64 * lambda) % n) as usize;
            }
            values[idx] = self.values[spec.ravel(&jx[..spec.dim])];
        }
        ScalarField { spec, values }
    }

    /// Full complex DFT of the sampled field (unnormalized).
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut data: Vec<Complex64> =
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(self.spec.n);
        for axis in 0..self.spec.dim {
            fft_axis(&mut data, &self.spec, axis, &fft);
        }
        data
    }

    pub fn from_spectrum(spec: GridSpec, mut freq: Vec<Complex64>) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_inverse(spec.n);
        for axis in 0..spec.dim {
            fft_axis(&mut freq, &spec, axis, &fft);
        }
        let norm = 1.0 / spec.points() as f64;
        ScalarField {
            spec,
            values: freq.iter().map(|c| c.re * norm).collect(),
        }
    }

    /// Apply a Fourier multiplier given the signed integer frequency vector.
    pub fn apply_multiplier(&self, mult: impl Fn(&[i64]) -> Complex64) -> Self {
        let spec = self.spec;
        let mut freq = self.spectrum();
        for idx in 0..spec.points() {
            let ix = spec.unravel(idx);
            let mut k = [0i64; MAX_DIM];
            for axis in 0..spec.dim {
                k[axis] = spec.signed_freq(ix[axis]);
            }
            freq[idx] *= mult(&k[..spec.dim]);
        }
        Self::from_spectrum(spec, freq)
    }

    /// Spectral partial derivative of order `order` along `axis`.
    /// Odd orders zero the Nyquist mode on that axis.
    pub fn derivative(&self, axis: usize, order: u32) -> Result<ScalarField> {
        if axis >= self.spec.dim {
            return Err(Error::Grid(format!(
                "axis {axis} out of range for dim {}",
                self.spec.dim
            )));
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let two_pi_over_len = std::f64::consts::TAU / self.spec.len;
        let nyquist = (self.spec.n / 2) as i64;
        let odd = order % 2 == 1;
        Ok(self.apply_multiplier(|k| {
            let kk = k[axis];
            if odd && kk.abs() == nyquist {
                return Complex64::new(0.0, 0.0);
            }
            let xi = Complex64::new(0.0, two_pi_over_len * kk as f64);
            xi.powu(order)
        }))
    }

    /// Spectral antiderivative along `axis` with zero mean along that axis.
    /// Requires the input to have (numerically) zero mean along the axis;
    /// the k=0 modes are checked and dropped.
    pub fn antiderivative(&self, axis: usize) -> Result<ScalarField> {
        if axis >= self.spec.dim {
            return Err(Error::Grid(format!(
                "axis {axis} out of range for dim {}",
                self.spec.dim
            )));
        }
        let max = self
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        if self.mean().abs() > 1e-10 * max {
            return Err(Error::Grid(format!(
                "antiderivative needs zero-mean input, mean = {}",
                self.mean()
            )));
        }
        let two_pi_over_len = std::f64::consts::TAU / self.spec.len;
        Ok(self.apply_multiplier(|k| {
            let kk = k[axis];
            if kk == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, two_pi_over_len * kk as f64).inv()
            }
        }))
    }

    pub fn gradient(&self) -> Result<VectorField> {
        let comps = (0..self.spec.dim)
            .map(|axis| self.derivative(axis, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { comps })
    }

    /// Rectangle-rule L^r norm; `r = f64::INFINITY` gives the grid sup norm.
    pub fn lebesgue_norm(&self, r: f64) -> Result<f64> {
        vector_norm_impl(self.spec, r, self.values.iter().map(|v| v.abs()))
    }

    /// Grid C^m norm: max over all partial derivatives of order <= m of the
    /// sup norm.
    pub fn cm_norm(&self, m: u32) -> Result<f64> {
        let mut best = 0.0f64;
        for alpha in multi_indices(self.spec.dim, m) {
            let mut g = self.clone();
            for (axis, &ord) in alpha.iter().enumerate() {
                if ord > 0 {
                    g = g.derivative(axis, ord)?;
                }
            }
            best = best.max(g.lebesgue_norm(f64::INFINITY)?);
        }
        Ok(best)
    }

    /// Grid W^{m,r} norm: sum of L^r norms of all partial derivatives of
    /// order <= m. Fractional m is supported only for r = 2, via the
    /// multiplier (1 + |xi|^2)^{m/2}.
    pub fn sobolev_norm(&self, m: f64, r: f64) -> Result<f64> {
        if m < 0.0 {
            return Err(Error::Grid(format!("negative smoothness {m}")));
        }
        if m.fract() != 0.0 {
            if r != 2.0 {
                return Err(Error::Grid(
                    "fractional smoothness is only supported for r = 2".into(),
                ));
            }
            let two_pi_over_len = std::f64::consts::TAU / self.spec.len;
            let g = self.apply_multiplier(|k| {
                let xi2: f64 = k
                    .iter()
                    .map(|&kk| (two_pi_over_len * kk as f64).powi(2))
                    .sum();
                Complex64::new((1.0 + xi2).powf(m / 2.0), 0.0)
            });
            return g.lebesgue_norm(2.0);
        }
        let mut total = 0.0;
        for alpha in multi_indices(self.spec.dim, m as u32) {
            let mut g = self.clone();
            for (axis, &ord) in alpha.iter().enumerate() {
                if ord > 0 {
                    g = g.derivative(axis, ord)?;
                }
            }
            total += g.lebesgue_norm(r)?;
        }
        Ok(total)
    }
}

/// All multi-indices alpha in N^dim with |alpha| <= max_order.
pub fn multi_indices(dim: usize, max_order: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    fn rec(axis: usize, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if axis == cur.len() {
            out.push(cur.clone());
            return;
        }
        for ord in 0..=budget {
            cur[axis] = ord;
            rec(axis + 1, budget - ord, cur, out);
        }
        cur[axis] = 0;
    }
    rec(0, max_order, &mut cur, &mut out);
    out
}

fn vector_norm_impl(
    spec: GridSpec,
    r: f64,
    magnitudes: impl Iterator<Item = f64>,
) -> Result<f64> {
    if r.is_infinite() {
        return Ok(magnitudes.fold(0.0, f64::max));
    }
    if !(r >= 1.0) {
        return Err(Error::Grid(format!("Lebesgue exponent must be >= 1, got {r}")));
    }
    let cell = spec.cell_volume();
    let sum: f64 = magnitudes.map(|m| m.powf(r)).sum();
    Ok((cell * sum).powf(1.0 / r))
}

#[derive(Clone, Debug)]
pub struct VectorField {
    pub comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(spec: GridSpec, ncomp: usize) -> Self {
        VectorField {
            comps: (0..ncomp).map(|_| ScalarField::zeros(spec)).collect(),
        }
    }

    pub fn from_comps(comps: Vec<ScalarField>) -> Self {
        VectorField { comps }
    }

    pub fn spec(&self) -> GridSpec {
        self.comps[0].spec
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn add(&self, other: &VectorField) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField { comps: self.comps.iter().map(|f| f.scale(c)).collect() }
    }

    /// Pointwise multiplication by a scalar field.
    pub fn mul_scalar(&self, f: &ScalarField) -> Self {
        VectorField { comps: self.comps.iter().map(|g| g.mul(f)).collect() }
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut acc = ScalarField::zeros(self.spec());
        for (a, b) in self.comps.iter().zip(&other.comps) {
            acc = acc.add(&a.mul(b));
        }
        acc
    }

    pub fn cross(&self, other: &VectorField) -> Result<VectorField> {
        if self.ncomp() != 3 || other.ncomp() != 3 {
            return Err(Error::Grid("cross product needs 3 components".into()));
        }
        let (a, b) = (&self.comps, &other.comps);
        Ok(VectorField {
            comps: vec![
                a[1].mul(&b[2]).sub(&a[2].mul(&b[1])),
                a[2].mul(&b[0]).sub(&a[0].mul(&b[2])),
                a[0].mul(&b[1]).sub(&a[1].mul(&b[0])),
            ],
        })
    }

    pub fn divergence(&self) -> Result<ScalarField> {
        let mut acc = ScalarField::zeros(self.spec());
        for (axis, f) in self.comps.iter().enumerate() {
            acc = acc.add(&f.derivative(axis, 1)?);
        }
        Ok(acc)
    }

    /// Spectral curl of a 3-component field on a 3-torus.
    pub fn curl3(&self) -> Result<VectorField> {
        if self.ncomp() != 3 || self.spec().dim != 3 {
            return Err(Error::Grid("curl3 needs a 3-component field on a 3-torus".into()));
        }
        let d = |i: usize, axis: usize| self.comps[i].derivative(axis, 1);
        Ok(VectorField {
            comps: vec![
                d(2, 1)?.sub(&d(1, 2)?),
                d(0, 2)?.sub(&d(2, 0)?),
                d(1, 0)?.sub(&d(0, 1)?),
            ],
        })
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let mut acc = ScalarField::zeros(self.spec());
        for f in &self.comps {
            acc = acc.zip(f, |s, v| s + v * v);
        }
        acc.map(f64::sqrt)
    }

    /// L^r norm of the pointwise magnitude.
    pub fn lebesgue_norm(&self, r: f64) -> Result<f64> {
        let mag = self.magnitude();
        vector_norm_impl(self.spec(), r, mag.values.iter().copied())
    }

    /// Max over components of the scalar C^m norm.
    pub fn cm_norm(&self, m: u32) -> Result<f64> {
        let mut best = 0.0f64;
        for f in &self.comps {
            best = best.max(f.cm_norm(m)?);
        }
        Ok(best)
    }

    /// Sum over components of the scalar W^{m,r} norm.
    pub fn sobolev_norm(&self, m: f64, r: f64) -> Result<f64> {
        let mut total = 0.0;
        for f in &self.comps {
            total += f.sobolev_norm(m, r)?;
        }
        Ok(total)
    }

    pub fn oscillate(&self, lambda: u64) -> Self {
        VectorField { comps: self.comps.iter().map(|f| f.oscillate(lambda)).collect() }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps.iter().map(|f| f.mean()).collect()
    }
}

/// Solve div G = g on the torus: G_j has Fourier coefficients
/// -i xi_j / |xi|^2 * g_hat(xi), with the zero mode dropped.
/// Requires g to have zero mean.
pub fn inverse_divergence(g: &ScalarField) -> Result<VectorField> {
    let max = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if g.mean().abs() > 1e-10 * max {
        return Err(Error::Grid(format!(
            "inverse divergence needs zero-mean input, mean = {}",
            g.mean()
        )));
    }
    let spec = g.spec;
    let two_pi_over_len = std::f64::consts::TAU / spec.len;
    let comps = (0..spec.dim)
        .map(|j| {
            g.apply_multiplier(|k| {
                let xi2: f64 = k
                    .iter()
                    .map(|&kk| (two_pi_over_len * kk as f64).powi(2))
                    .sum();
                if xi2 == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    let xi_j = two_pi_over_len * k[j] as f64;
                    Complex64::new(0.0, -xi_j / xi2)
                }
            })
        })
        .collect();
    Ok(VectorField { comps })
}

fn fft_axis(data: &mut [Complex64], spec: &GridSpec, axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let n = spec.n;
    let stride = n.pow((spec.dim - 1 - axis) as u32);
    let lines = data.len() / n;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..lines {
        let base = (t / stride) * (stride * n) + (t % stride);
        for j in 0..n {
            buf[j] = data[base + j * stride];
        }
        fft.process(&mut buf);
        for j in 0..n {
            data[base + j * stride] = buf[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn spec1(n: usize, len: f64) -> GridSpec {
        GridSpec::new(1, n, len).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0, 8, 1.0).is_err());
        assert!(GridSpec::new(1, 6, 1.0).is_err());
        assert!(GridSpec::new(1, 2, 1.0).is_err());
        assert!(GridSpec::new(1, 8, 0.0).is_err());
        assert!(GridSpec::new(7, 8, 1.0).is_err());
    }

    #[test]
    fn derivative_of_sine_matches_closed_form() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin());
        let df = f.derivative(0, 1).unwrap();
        let expected = ScalarField::from_fn(spec, |x| TAU * (TAU * x[0]).cos());
        for (a, b) in df.values.iter().zip(&expected.values) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_matches_symbolic_oracle_for_trig_polynomial() {
        // oracle: d/dx [sin(2 pi x) + 0.3 cos(6 pi x)] computed by hand
        let spec = spec1(128, 2.0);
        let w = TAU / 2.0;
        let f = ScalarField::from_fn(spec, |x| (w * x[0]).sin() + 0.3 * (3.0 * w * x[0]).cos());
        let df = f.derivative(0, 1).unwrap();
        let oracle = ScalarField::from_fn(spec, |x| {
            w * (w * x[0]).cos() - 0.9 * w * (3.0 * w * x[0]).sin()
        });
        for (a, b) in df.values.iter().zip(&oracle.values) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn second_derivative_finite_difference_oracle() {
        // independent oracle: 4th-order centred finite differences on a
        // smooth periodic function, coarse grid so FD error dominates
        let spec = spec1(256, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin().exp());
        let d2 = f.derivative(0, 2).unwrap();
        let n = spec.n;
        let h = spec.spacing();
        for i in 0..n {
            let v = |o: i64| f.values[((i as i64 + o).rem_euclid(n as i64)) as usize];
            let fd = (-v(2) + 16.0 * v(1) - 30.0 * v(0) + 16.0 * v(-1) - v(-2)) / (12.0 * h * h);
            assert_relative_eq!(d2.values[i], fd, epsilon = 2e-4, max_relative = 2e-4);
        }
    }

    #[test]
    fn parseval_l2_norm() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin());
        // ||sin(2 pi x)||_2 on [0,1] = 1/sqrt(2)
        assert_relative_eq!(
            f.lebesgue_norm(2.0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sobolev_norm_of_sine() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin());
        let w12 = f.sobolev_norm(1.0, 2.0).unwrap();
        let expected = std::f64::consts::FRAC_1_SQRT_2 * (1.0 + TAU);
        assert_relative_eq!(w12, expected, epsilon = 1e-10);
    }

    #[test]
    fn fractional_sobolev_reduces_to_integer_multiplier() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin());
        // single mode xi = 2 pi: ||f||_{W^{s,2}} = (1+|xi|^2)^{s/2} / sqrt(2)
        let expected = (1.0 + TAU * TAU).powf(0.25) * std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(f.sobolev_norm(0.5, 2.0).unwrap(), expected, epsilon = 1e-9);
        assert!(f.sobolev_norm(0.5, 1.0).is_err());
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin() + 0.5 * (2.0 * TAU * x[0]).cos());
        let g = f.antiderivative(0).unwrap();
        let back = g.derivative(0, 1).unwrap();
        for (a, b) in back.values.iter().zip(&f.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn antiderivative_rejects_nonzero_mean() {
        let spec = spec1(16, 1.0);
        let f = ScalarField::from_fn(spec, |_| 1.0);
        assert!(f.antiderivative(0).is_err());
    }

    #[test]
    fn inverse_divergence_solves_div() {
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let g = ScalarField::from_fn(spec, |x| {
            (TAU * x[0]).sin() * (TAU * x[1]).cos() + (2.0 * TAU * x[2]).sin()
        });
        let v = inverse_divergence(&g).unwrap();
        let div = v.divergence().unwrap();
        for (a, b) in div.values.iter().zip(&g.values) {
            assert_relative_eq!(a, b, epsilon = 1e-11);
        }
        for comp in &v.comps {
            assert!(comp.mean().abs() < 1e-13);
        }
    }

    #[test]
    fn curl_of_gradient_vanishes() {
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let f = ScalarField::from_fn(spec, |x| {
            (TAU * x[0]).sin() * (TAU * x[1]).sin() * (2.0 * TAU * x[2]).cos()
        });
        let curl = f.gradient().unwrap().curl3().unwrap();
        assert!(curl.lebesgue_norm(f64::INFINITY).unwrap() < 1e-10);
    }

    #[test]
    fn divergence_of_curl_vanishes() {
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let v = VectorField::from_comps(vec![
            ScalarField::from_fn(spec, |x| (TAU * x[1]).sin()),
            ScalarField::from_fn(spec, |x| (TAU * x[2]).cos() * (TAU * x[0]).sin()),
            ScalarField::from_fn(spec, |x| (2.0 * TAU * x[0]).sin()),
        ]);
        let div = v.curl3().unwrap().divergence().unwrap();
        assert!(div.lebesgue_norm(f64::INFINITY).unwrap() < 1e-9);
    }

    #[test]
    fn oscillate_dilates_on_grid() {
        let spec = spec1(64, 1.0);
        let f = ScalarField::from_fn(spec, |x| (TAU * x[0]).sin());
        let g = f.oscillate(3);
        let expected = ScalarField::from_fn(spec, |x| (3.0 * TAU * x[0]).sin());
        for (a, b) in g.values.iter().zip(&expected.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn resolution_rule() {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        assert!(spec.check_resolution(4, 2.0).is_ok()); // 8*4*2 = 64
        assert!(matches!(
            spec.check_resolution(8, 2.0),
            Err(Error::Resolution { required: 128, actual: 64 })
        ));
    }

    #[test]
    fn multi_index_count() {
        // |alpha| <= 2 in 3 axes: C(3+2,3) = 10 of order <= 2? Enumerate:
        // order 0: 1, order 1: 3, order 2: 6 -> 10
        assert_eq!(multi_indices(3, 2).len(), 10);
    }
}

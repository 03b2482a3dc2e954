//! Exterior algebra for k-vectors and grid k-currents: wedge products,
//! contraction against coordinate covectors, the boundary operator
//! dT = -sum_j (d_j T) . dx_j, and the Leibniz formulas for products with
//! scalar functions and 1-vector fields.
//!
//! Components are stored densely, indexed by the colexicographic rank of
//! the strictly increasing multi-index (axes are 0-based internally). All
//! signs are derived from the single contraction primitive
//! e_alpha . dx_i = (-1)^{j-1} e_{alpha \ i} (j = position of i).
//!
//! In the product formula for a scalar factor, the derivative of f acts as
//! a scalar multiplier on the contracted current:
//! d(fT) = f dT - sum_j (d_j f) * (T . dx_j).
//! A literal wedge with (d_j f) e_j would change the degree and fails the
//! direct-evaluation oracle; the scalar reading is the one consistent with
//! d(fT) = -sum_j (d_j(fT)) . dx_j.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, VectorField};

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Strictly increasing tuple of distinct 0-based axis labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    axes: Vec<usize>,
}

impl MultiIndex {
    pub fn new(axes: &[usize], d: usize) -> Result<Self> {
        for w in axes.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Exterior(format!(
                    "multi-index {:?} is not strictly increasing",
                    axes
                )));
            }
        }
        if let Some(&last) = axes.last() {
            if last >= d {
                return Err(Error::Exterior(format!(
                    "axis {last} out of range for dimension {d}"
                )));
            }
        }
        Ok(MultiIndex { axes: axes.to_vec() })
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn degree(&self) -> usize {
        self.axes.len()
    }

    /// Colexicographic rank among all strictly increasing k-tuples in 0..d.
    pub fn rank(&self) -> usize {
        self.axes
            .iter()
            .enumerate()
            .map(|(j, &a)| binomial(a, j + 1))
            .sum()
    }

    /// Inverse of `rank` for fixed (d, k).
    pub fn unrank(d: usize, k: usize, mut rank: usize) -> Self {
        let mut axes = vec![0usize; k];
        for j in (1..=k).rev() {
            // largest a with C(a, j) <= rank
            let mut a = j - 1;
            while a + 1 < d && binomial(a + 1, j) <= rank {
                a += 1;
            }
            axes[j - 1] = a;
            rank -= binomial(a, j);
        }
        MultiIndex { axes }
    }

    /// All multi-indices of degree k in dimension d, in colex order.
    pub fn enumerate(d: usize, k: usize) -> Vec<MultiIndex> {
        (0..binomial(d, k)).map(|r| Self::unrank(d, k, r)).collect()
    }
}

/// Merge two strictly increasing axis lists; `None` on a repeated axis,
/// otherwise the merged list and the sign of the interleaving permutation.
fn merge_sign(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut swaps = 0usize;
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            return None;
        }
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            // b[j] jumps over the remaining a-entries
            swaps += a.len() - i;
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    let sign = if swaps % 2 == 0 { 1.0 } else { -1.0 };
    Some((out, sign))
}

/// Dense k-vector in dimension d.
#[derive(Clone, Debug, PartialEq)]
pub struct KVector {
    pub d: usize,
    pub k: usize,
    pub coeffs: Vec<f64>,
}

impl KVector {
    pub fn zero(d: usize, k: usize) -> Self {
        KVector { d, k, coeffs: vec![0.0; binomial(d, k)] }
    }

    pub fn basis(d: usize, axes: &[usize]) -> Result<Self> {
        let mi = MultiIndex::new(axes, d)?;
        let mut v = Self::zero(d, axes.len());
        v.coeffs[mi.rank()] = 1.0;
        Ok(v)
    }

    pub fn get(&self, mi: &MultiIndex) -> f64 {
        self.coeffs[mi.rank()]
    }

    pub fn set(&mut self, mi: &MultiIndex, value: f64) {
        self.coeffs[mi.rank()] = value;
    }

    pub fn wedge(&self, other: &KVector) -> Result<KVector> {
        if self.d != other.d {
            return Err(Error::Exterior("ambient dimensions differ".into()));
        }
        if self.k + other.k > self.d {
            return Err(Error::Exterior(format!(
                "wedge degree {} + {} exceeds dimension {}",
                self.k, other.k, self.d
            )));
        }
        let mut out = KVector::zero(self.d, self.k + other.k);
        let left = MultiIndex::enumerate(self.d, self.k);
        let right = MultiIndex::enumerate(self.d, other.k);
        for a in &left {
            let ca = self.get(a);
            if ca == 0.0 {
                continue;
            }
            for b in &right {
                let cb = other.get(b);
                if cb == 0.0 {
                    continue;
                }
                if let Some((axes, sign)) = merge_sign(a.axes(), b.axes()) {
                    let mi = MultiIndex { axes };
                    out.coeffs[mi.rank()] += sign * ca * cb;
                }
            }
        }
        Ok(out)
    }

    /// tau . dx_i: drop axis i with sign (-1)^{j-1}, j its 1-based position.
    pub fn contract(&self, axis: usize) -> Result<KVector> {
        if self.k == 0 {
            return Err(Error::Exterior("cannot contract a 0-vector".into()));
        }
        let mut out = KVector::zero(self.d, self.k - 1);
        for mi in MultiIndex::enumerate(self.d, self.k) {
            let c = self.get(&mi);
            if c == 0.0 {
                continue;
            }
            if let Some(j) = mi.axes().iter().position(|&a| a == axis) {
                let mut axes = mi.axes().to_vec();
                axes.remove(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let target = MultiIndex { axes };
                out.coeffs[target.rank()] += sign * c;
            }
        }
        Ok(out)
    }

    /// Euclidean inner product in the orthonormal e_alpha basis.
    pub fn inner(&self, other: &KVector) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }
}

/// Absolutely continuous k-current on the grid: one scalar component per
/// multi-index of degree k, colex-ranked.
#[derive(Clone, Debug)]
pub struct CurrentField {
    pub k: usize,
    pub comps: Vec<ScalarField>,
}

impl CurrentField {
    pub fn zero(spec: GridSpec, k: usize) -> Result<Self> {
        if k > spec.dim {
            return Err(Error::Exterior(format!(
                "degree {k} exceeds dimension {}",
                spec.dim
            )));
        }
        Ok(CurrentField {
            k,
            comps: (0..binomial(spec.dim, k))
                .map(|_| ScalarField::zeros(spec))
                .collect(),
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.comps[0].spec
    }

    pub fn dim(&self) -> usize {
        self.spec().dim
    }

    pub fn comp(&self, mi: &MultiIndex) -> &ScalarField {
        &self.comps[mi.rank()]
    }

    pub fn comp_mut(&mut self, mi: &MultiIndex) -> &mut ScalarField {
        &mut self.comps[mi.rank()]
    }

    pub fn add(&self, other: &CurrentField) -> Self {
        CurrentField {
            k: self.k,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &CurrentField) -> Self {
        CurrentField {
            k: self.k,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        CurrentField { k: self.k, comps: self.comps.iter().map(|f| f.scale(c)).collect() }
    }

    pub fn mul_scalar(&self, f: &ScalarField) -> Self {
        CurrentField { k: self.k, comps: self.comps.iter().map(|g| g.mul(f)).collect() }
    }

    /// Pointwise k-vector value at a flat grid index.
    pub fn value_at(&self, idx: usize) -> KVector {
        KVector {
            d: self.dim(),
            k: self.k,
            coeffs: self.comps.iter().map(|f| f.values[idx]).collect(),
        }
    }

    /// L^r norm of the pointwise Euclidean magnitude over components.
    pub fn lebesgue_norm(&self, r: f64) -> Result<f64> {
        let spec = self.spec();
        let npts = spec.points();
        let mags = (0..npts).map(|i| {
            self.comps
                .iter()
                .map(|f| f.values[i] * f.values[i])
                .sum::<f64>()
                .sqrt()
        });
        if r.is_infinite() {
            return Ok(mags.fold(0.0, f64::max));
        }
        if !(r >= 1.0) {
            return Err(Error::Grid(format!("Lebesgue exponent must be >= 1, got {r}")));
        }
        let cell = spec.cell_volume();
        Ok((cell * mags.map(|m| m.powf(r)).sum::<f64>()).powf(1.0 / r))
    }

    pub fn cm_norm(&self, m: u32) -> Result<f64> {
        let mut best = 0.0f64;
        for f in &self.comps {
            best = best.max(f.cm_norm(m)?);
        }
        Ok(best)
    }

    /// Boundary dT = -sum_j (d_j T) . dx_j with spectral derivatives.
    /// For k = 0 returns the zero 0-current (dT = 0 by convention).
    pub fn boundary(&self) -> Result<CurrentField> {
        let spec = self.spec();
        if self.k == 0 {
            return CurrentField::zero(spec, 0);
        }
        let d = self.dim();
        let mut out = CurrentField::zero(spec, self.k - 1)?;
        for mi in MultiIndex::enumerate(d, self.k) {
            let f = self.comp(&mi);
            for (j, &axis) in mi.axes().iter().enumerate() {
                // contraction keeps only the axes present in mi
                let df = f.derivative(axis, 1)?;
                let mut axes = mi.axes().to_vec();
                axes.remove(j);
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 }; // -1 * (-1)^{j-1}... j is 0-based
                let target = MultiIndex { axes };
                let r = target.rank();
                out.comps[r] = out.comps[r].add(&df.scale(sign));
            }
        }
        Ok(out)
    }

    /// L^2-adjoint of the boundary: d'S = sum_j e_j wedge (d_j S).
    /// Raises the degree by one; satisfies <dT, S> = <T, d'S>.
    pub fn coboundary(&self) -> Result<CurrentField> {
        let spec = self.spec();
        let d = self.dim();
        if self.k + 1 > d {
            return Err(Error::Exterior("coboundary degree overflow".into()));
        }
        let mut out = CurrentField::zero(spec, self.k + 1)?;
        for mi in MultiIndex::enumerate(d, self.k) {
            let f = self.comp(&mi);
            for axis in 0..d {
                if mi.axes().contains(&axis) {
                    continue;
                }
                let df = f.derivative(axis, 1)?;
                let (axes, sign) = merge_sign(&[axis], mi.axes()).unwrap();
                let target = MultiIndex { axes };
                let r = target.rank();
                out.comps[r] = out.comps[r].add(&df.scale(sign));
            }
        }
        Ok(out)
    }

    /// Pointwise contraction (T . dx_i) as a current of degree k-1.
    pub fn contract(&self, axis: usize) -> Result<CurrentField> {
        if self.k == 0 {
            return Err(Error::Exterior("cannot contract a 0-current".into()));
        }
        let spec = self.spec();
        let d = self.dim();
        let mut out = CurrentField::zero(spec, self.k - 1)?;
        for mi in MultiIndex::enumerate(d, self.k) {
            if let Some(j) = mi.axes().iter().position(|&a| a == axis) {
                let mut axes = mi.axes().to_vec();
                axes.remove(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let target = MultiIndex { axes };
                let r = target.rank();
                out.comps[r] = out.comps[r].add(&self.comp(&mi).scale(sign));
            }
        }
        Ok(out)
    }

    /// Global L^2 pairing sum_alpha int T_alpha S_alpha.
    pub fn l2_pairing(&self, other: &CurrentField) -> f64 {
        let cell = self.spec().cell_volume();
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum::<f64>()
            * cell
    }
}

/// d(fT) via the Leibniz right-hand side f dT - sum_j (d_j f)(T . dx_j).
pub fn scalar_times_current_boundary(
    f: &ScalarField,
    t: &CurrentField,
) -> Result<CurrentField> {
    if f.spec != t.spec() {
        return Err(Error::Exterior("scalar factor and current must share a grid".into()));
    }
    if t.k == 0 {
        // d(fT) for a 0-current is zero by the same convention as boundary
        return CurrentField::zero(f.spec, 0);
    }
    let mut out = t.boundary()?.mul_scalar(f);
    for axis in 0..t.dim() {
        let df = f.derivative(axis, 1)?;
        let contracted = t.contract(axis)?.mul_scalar(&df);
        out = out.sub(&contracted);
    }
    Ok(out)
}

/// Pointwise wedge of a 1-vector field with a k-current.
pub fn wedge_field(u: &VectorField, t: &CurrentField) -> Result<CurrentField> {
    let spec = t.spec();
    let d = t.dim();
    if u.ncomp() != d {
        return Err(Error::Exterior(format!(
            "vector field has {} components, ambient dimension is {d}",
            u.ncomp()
        )));
    }
    if t.k + 1 > d {
        return Err(Error::Exterior("wedge degree overflow".into()));
    }
    let mut out = CurrentField::zero(spec, t.k + 1)?;
    for mi in MultiIndex::enumerate(d, t.k) {
        let f = t.comp(&mi);
        for axis in 0..d {
            if mi.axes().contains(&axis) {
                continue;
            }
            let (axes, sign) = merge_sign(&[axis], mi.axes()).unwrap();
            let target = MultiIndex { axes };
            let r = target.rank();
            out.comps[r] = out.comps[r].add(&u.comps[axis].mul(f).scale(sign));
        }
    }
    Ok(out)
}

/// Leibniz formula d(u wedge T) = -sum_j ((d_j u) wedge T + u wedge (d_j T)) . dx_j,
/// evaluated from the right-hand side.
pub fn wedge_field_boundary(u: &VectorField, t: &CurrentField) -> Result<CurrentField> {
    let spec = t.spec();
    let d = t.dim();
    let mut out = CurrentField::zero(spec, t.k)?;
    for axis_j in 0..d {
        let du = VectorField::from_comps(
            u.comps
                .iter()
                .map(|c| c.derivative(axis_j, 1))
                .collect::<Result<Vec<_>>>()?,
        );
        let dt = CurrentField {
            k: t.k,
            comps: t
                .comps
                .iter()
                .map(|c| c.derivative(axis_j, 1))
                .collect::<Result<Vec<_>>>()?,
        };
        let term = wedge_field(&du, t)?.add(&wedge_field(u, &dt)?);
        out = out.sub(&term.contract(axis_j)?);
    }
    Ok(out)
}

/// Identification of 2-currents with vector fields for d = 3, fixed by the
/// cross-product oracle: e_{(2,3)} -> e_1, e_{(1,3)} -> -e_2, e_{(1,2)} -> e_3
/// (1-based axis labels). With it, u wedge T corresponds to u x T and
/// boundary(u wedge T) to +curl(u x T) for divergence-free inputs.
pub fn hodge3_to_vector(s: &CurrentField) -> Result<VectorField> {
    if s.dim() != 3 || s.k != 2 {
        return Err(Error::Exterior("hodge3_to_vector expects a 2-current in d=3".into()));
    }
    // colex ranks in d=3, k=2: (0,1) -> 0, (0,2) -> 1, (1,2) -> 2
    Ok(VectorField::from_comps(vec![
        s.comps[2].clone(),
        s.comps[1].scale(-1.0),
        s.comps[0].clone(),
    ]))
}

pub fn hodge3_from_vector(v: &VectorField) -> Result<CurrentField> {
    if v.ncomp() != 3 || v.spec().dim != 3 {
        return Err(Error::Exterior("hodge3_from_vector expects a 3-vector field".into()));
    }
    Ok(CurrentField {
        k: 2,
        comps: vec![
            v.comps[2].clone(),
            v.comps[1].scale(-1.0),
            v.comps[0].clone(),
        ],
    })
}

/// View a vector field as a 1-current (components coincide).
pub fn current_from_vector(v: &VectorField) -> CurrentField {
    CurrentField { k: 1, comps: v.comps.clone() }
}

pub fn vector_from_current(t: &CurrentField) -> Result<VectorField> {
    if t.k != 1 {
        return Err(Error::Exterior("expected a 1-current".into()));
    }
    Ok(VectorField::from_comps(t.comps.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn wedge_basis_cases() {
        let e1 = KVector::basis(3, &[0]).unwrap();
        let e2 = KVector::basis(3, &[1]).unwrap();
        let e12 = e1.wedge(&e2).unwrap();
        assert_eq!(e12.get(&MultiIndex::new(&[0, 1], 3).unwrap()), 1.0);
        let e21 = e2.wedge(&e1).unwrap();
        assert_eq!(e21.get(&MultiIndex::new(&[0, 1], 3).unwrap()), -1.0);
        let e13 = KVector::basis(3, &[0, 2]).unwrap();
        let z = e1.wedge(&e13).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn wedge_graded_anticommutative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 2..=5 {
            for j in 0..=d {
                for k in 0..=(d - j) {
                    let mut a = KVector::zero(d, j);
                    let mut b = KVector::zero(d, k);
                    for c in a.coeffs.iter_mut().chain(b.coeffs.iter_mut()) {
                        *c = rng.gen_range(-1.0..1.0);
                    }
                    let ab = a.wedge(&b).unwrap();
                    let ba = b.wedge(&a).unwrap();
                    let sign = if (j * k) % 2 == 0 { 1.0 } else { -1.0 };
                    for (x, y) in ab.coeffs.iter().zip(&ba.coeffs) {
                        assert!((x - sign * y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn wedge_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 5;
        let mut a = KVector::zero(d, 1);
        let mut b = KVector::zero(d, 2);
        let mut c = KVector::zero(d, 1);
        for x in a
            .coeffs
            .iter_mut()
            .chain(b.coeffs.iter_mut())
            .chain(c.coeffs.iter_mut())
        {
            *x = rng.gen_range(-1.0..1.0);
        }
        let left = a.wedge(&b).unwrap().wedge(&c).unwrap();
        let right = a.wedge(&b.wedge(&c).unwrap()).unwrap();
        for (x, y) in left.coeffs.iter().zip(&right.coeffs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn contraction_signs() {
        let e12 = KVector::basis(3, &[0, 1]).unwrap();
        let c1 = e12.contract(0).unwrap();
        assert_eq!(c1.get(&MultiIndex::new(&[1], 3).unwrap()), 1.0);
        let c2 = e12.contract(1).unwrap();
        assert_eq!(c2.get(&MultiIndex::new(&[0], 3).unwrap()), -1.0);
        let c3 = e12.contract(2).unwrap();
        assert!(c3.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn contraction_duality() {
        // <dx_i wedge beta, tau> = <beta, tau . dx_i> over all bases, d <= 5
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=5 {
            for k in 1..=d {
                for axis in 0..d {
                    let mut tau = KVector::zero(d, k);
                    for c in tau.coeffs.iter_mut() {
                        *c = rng.gen_range(-1.0..1.0);
                    }
                    for beta_mi in MultiIndex::enumerate(d, k - 1) {
                        let beta = KVector::basis(d, beta_mi.axes()).unwrap();
                        let ei = KVector::basis(d, &[axis]).unwrap();
                        let lhs = ei.wedge(&beta).unwrap().inner(&tau);
                        let rhs = beta.inner(&tau.contract(axis).unwrap());
                        assert!((lhs - rhs).abs() < 1e-12, "d={d} k={k} axis={axis}");
                    }
                }
            }
        }
    }

    fn random_current(spec: GridSpec, k: usize, rng: &mut ChaCha8Rng) -> CurrentField {
        // band-limited: a handful of low modes per component
        let d = spec.dim;
        let mut cur = CurrentField::zero(spec, k).unwrap();
        for comp in cur.comps.iter_mut() {
            let mut modes = Vec::new();
            for _ in 0..4 {
                let kvec: Vec<f64> = (0..d)
                    .map(|_| rng.gen_range(-2i32..=2) as f64)
                    .collect();
                let amp = rng.gen_range(-1.0..1.0);
                let phase = rng.gen_range(0.0..TAU);
                modes.push((kvec, amp, phase));
            }
            let len = spec.len;
            *comp = ScalarField::from_fn(spec, |x| {
                modes
                    .iter()
                    .map(|(kvec, amp, phase)| {
                        let arg: f64 =
                            kvec.iter().zip(x).map(|(k, xi)| TAU * k * xi / len).sum();
                        amp * (arg + phase).cos()
                    })
                    .sum()
            });
        }
        cur
    }

    #[test]
    fn boundary_is_minus_divergence_for_one_currents() {
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let t = CurrentField {
            k: 1,
            comps: vec![
                ScalarField::from_fn(spec, |x| (TAU * x[0]).sin()),
                ScalarField::zeros(spec),
                ScalarField::zeros(spec),
            ],
        };
        let b = t.boundary().unwrap();
        let oracle = ScalarField::from_fn(spec, |x| -TAU * (TAU * x[0]).cos());
        for (a, o) in b.comps[0].values.iter().zip(&oracle.values) {
            assert!((a - o).abs() < 1e-10);
        }
        // shear with no dependence on its own axis is boundary-free
        let shear = CurrentField {
            k: 1,
            comps: vec![
                ScalarField::from_fn(spec, |x| (TAU * x[1]).sin()),
                ScalarField::zeros(spec),
                ScalarField::zeros(spec),
            ],
        };
        let bs = shear.boundary().unwrap();
        assert!(bs.lebesgue_norm(f64::INFINITY).unwrap() < 1e-12);
    }

    #[test]
    fn boundary_squares_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..=5 {
            let n = if d <= 3 { 16 } else { 8 };
            let spec = GridSpec::new(d, n, 1.0).unwrap();
            for k in 2..=d {
                let t = random_current(spec, k, &mut rng);
                let scale = t.lebesgue_norm(f64::INFINITY).unwrap().max(1.0);
                let bb = t.boundary().unwrap().boundary().unwrap();
                assert!(
                    bb.lebesgue_norm(f64::INFINITY).unwrap() < 1e-9 * scale,
                    "d={d} k={k}"
                );
            }
        }
    }

    #[test]
    fn leibniz_scalar_factor_matches_direct_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in 2..=4 {
            let n = 16;
            let spec = GridSpec::new(d, n, 1.0).unwrap();
            for k in 1..=d {
                let t = random_current(spec, k, &mut rng);
                let f = ScalarField::from_fn(spec, |x| {
                    1.0 + 0.3 * (TAU * x[0]).sin() * (TAU * x[d - 1]).cos()
                });
                let rhs = scalar_times_current_boundary(&f, &t).unwrap();
                let direct = t.mul_scalar(&f).boundary().unwrap();
                let scale = direct.lebesgue_norm(f64::INFINITY).unwrap().max(1.0);
                let err = rhs.sub(&direct).lebesgue_norm(f64::INFINITY).unwrap();
                assert!(err < 1e-9 * scale, "d={d} k={k} err={err}");
            }
        }
    }

    #[test]
    fn leibniz_constant_factor_is_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let t = random_current(spec, 2, &mut rng);
        let one = ScalarField::from_fn(spec, |_| 1.0);
        let lhs = scalar_times_current_boundary(&one, &t).unwrap();
        let rhs = t.boundary().unwrap();
        assert!(lhs.sub(&rhs).lebesgue_norm(f64::INFINITY).unwrap() < 1e-12);
    }

    #[test]
    fn leibniz_vector_factor_matches_direct_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for d in 2..=4 {
            let spec = GridSpec::new(d, 16, 1.0).unwrap();
            for k in 0..d {
                let t = random_current(spec, k, &mut rng);
                let u = VectorField::from_comps(
                    (0..d)
                        .map(|j| {
                            let ph = rng.gen_range(0.0..TAU);
                            ScalarField::from_fn(spec, |x| {
                                (TAU * x[j] + ph).sin() + 0.2 * (TAU * x[(j + 1) % d]).cos()
                            })
                        })
                        .collect(),
                );
                let rhs = wedge_field_boundary(&u, &t).unwrap();
                let direct = wedge_field(&u, &t).unwrap().boundary().unwrap();
                let scale = direct.lebesgue_norm(f64::INFINITY).unwrap().max(1.0);
                let err = rhs.sub(&direct).lebesgue_norm(f64::INFINITY).unwrap();
                assert!(err < 1e-9 * scale, "d={d} k={k} err={err}");
            }
        }
    }

    #[test]
    fn wedge_field_cross_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let t = random_current(spec, 1, &mut rng);
        let u = VectorField::from_comps(
            (0..3)
                .map(|j| {
                    let ph = rng.gen_range(0.0..TAU);
                    ScalarField::from_fn(spec, |x| (TAU * x[j] + ph).cos())
                })
                .collect(),
        );
        let tv = vector_from_current(&t).unwrap();
        let wedge = wedge_field(&u, &t).unwrap();
        let as_vec = hodge3_to_vector(&wedge).unwrap();
        let cross = u.cross(&tv).unwrap();
        let err = as_vec.sub(&cross).lebesgue_norm(f64::INFINITY).unwrap();
        assert!(err < 1e-12, "err={err}");
        // parallel fields annihilate
        let self_wedge = wedge_field(&tv, &t).unwrap();
        assert!(self_wedge.lebesgue_norm(f64::INFINITY).unwrap() < 1e-12);
    }

    #[test]
    fn boundary_of_wedge_is_curl_of_cross_product() {
        // divergence-free u and T: boundary(u wedge T) = +curl(u x T) under
        // the frozen d=3 identification
        let spec = GridSpec::new(3, 16, 1.0).unwrap();
        let u = VectorField::from_comps(vec![
            ScalarField::from_fn(spec, |x| (TAU * x[1]).sin()),
            ScalarField::from_fn(spec, |x| (TAU * x[2]).sin()),
            ScalarField::from_fn(spec, |x| (TAU * x[0]).sin()),
        ]);
        let bv = VectorField::from_comps(vec![
            ScalarField::from_fn(spec, |x| (TAU * x[2]).cos()),
            ScalarField::from_fn(spec, |x| (TAU * x[0]).cos()),
            ScalarField::from_fn(spec, |x| (TAU * x[1]).cos()),
        ]);
        assert!(u.divergence().unwrap().lebesgue_norm(f64::INFINITY).unwrap() < 1e-12);
        let t = current_from_vector(&bv);
        // u wedge T <-> u x T as a 2-current; its boundary is a 1-current
        // whose components are the curl of the identified vector field
        let lhs = vector_from_current(&wedge_field(&u, &t).unwrap().boundary().unwrap()).unwrap();
        let rhs = u.cross(&bv).unwrap().curl3().unwrap();
        let scale = rhs.lebesgue_norm(f64::INFINITY).unwrap();
        let err = lhs.sub(&rhs).lebesgue_norm(f64::INFINITY).unwrap();
        assert!(err < 1e-10 * scale, "relative err {}", err / scale);
    }

    #[test]
    fn coboundary_is_adjoint_of_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for d in 2..=4 {
            let spec = GridSpec::new(d, 16, 1.0).unwrap();
            for k in 1..=d {
                let t = random_current(spec, k, &mut rng);
                let s = random_current(spec, k - 1, &mut rng);
                let lhs = t.boundary().unwrap().l2_pairing(&s);
                let rhs = t.l2_pairing(&s.coboundary().unwrap());
                assert!((lhs - rhs).abs() < 1e-9 * (lhs.abs().max(1.0)), "d={d} k={k}");
            }
        }
    }

    #[test]
    fn rank_unrank_roundtrip() {
        for d in 1..=6 {
            for k in 0..=d {
                let all = MultiIndex::enumerate(d, k);
                assert_eq!(all.len(), binomial(d, k));
                for (r, mi) in all.iter().enumerate() {
                    assert_eq!(mi.rank(), r);
                    assert_eq!(&MultiIndex::unrank(d, k, r), mi);
                }
            }
        }
    }

    #[test]
    fn multi_index_validation() {
        assert!(MultiIndex::new(&[0, 0], 3).is_err());
        assert!(MultiIndex::new(&[1, 0], 3).is_err());
        assert!(MultiIndex::new(&[0, 3], 3).is_err());
        assert!(MultiIndex::new(&[], 3).is_ok());
    }
}

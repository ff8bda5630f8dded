//! Dense complex linear algebra over finite product Hilbert spaces.
//!
//! Tensor products follow the usual convention: in `kron(a, b)` the first
//! factor is the slow index. Product spaces list the lattice factor(s) first
//! and then phonon modes in ascending mode order.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Square complex matrix on a finite Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { diag[i] } else { ZERO })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO })
    }

    /// Row-major construction; fails unless `entries.len()` is a perfect square.
    pub fn from_row_major(entries: &[C64]) -> Result<Self> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        if dim * dim != entries.len() || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} entries do not form a square matrix",
                entries.len()
            )));
        }
        Ok(Self(DMatrix::from_row_slice(dim, dim, entries)))
    }

    /// |ket><bra|
    pub fn outer(ket: &StateVector, bra: &StateVector) -> Self {
        assert_eq!(ket.len(), bra.len(), "outer product of unequal lengths");
        Self(ket * bra.adjoint())
    }

    pub fn projector(vectors: &[StateVector]) -> Self {
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut p = Self::zeros(dim);
        for v in vectors {
            p.0 += v * v.adjoint();
        }
        p
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "ComplexMatrix::from_dmatrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<C64> {
        let n = self.dim();
        (0..n * n).map(|k| self.0[(k / n, k % n)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        &self.0 * v
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (max column sum); used for exponential scaling.
    pub fn one_norm(&self) -> f64 {
        (0..self.dim())
            .map(|j| self.0.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Hilbert-Schmidt inner product Tr(self† other).
    pub fn hs_inner(&self, other: &Self) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        (&self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim();
        let g = self.0.adjoint() * &self.0 - DMatrix::<C64>::identity(n, n);
        g.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_deviation() <= tol
    }

    /// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
    /// the matching orthonormal eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<C64>) {
        let sym = self.hermitian_part();
        let eig = sym.0.symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    pub fn eigvalsh(&self) -> Vec<f64> {
        self.eigh().0
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// (A - A†)/(2i), so that A = H + iK with both parts Hermitian.
    pub fn antihermitian_part(&self) -> Self {
        Self((&self.0 - self.0.adjoint()) * C64::new(0.0, -0.5))
    }

    /// Positive square root of a positive semidefinite Hermitian matrix.
    pub fn sqrt_psd(&self) -> Self {
        let (vals, vecs) = self.eigh();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
        ));
        Self(&vecs * d * vecs.adjoint())
    }

    /// exp(-i H t) for Hermitian `self`, via the eigen-decomposition.
    pub fn unitary_propagator(&self, t: f64) -> Self {
        let (vals, vecs) = self.eigh();
        HermitianPropagator { values: vals, vectors: vecs }.at(t)
    }
}

/// Cached eigenbasis of a static Hermitian generator, producing exp(-iHt) for any t.
#[derive(Clone, Debug)]
pub struct HermitianPropagator {
    values: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl HermitianPropagator {
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        let dev = h.hermiticity_deviation();
        if dev > 1e-10 * h.max_abs().max(1.0) {
            return Err(Error::NotHermitian {
                context: "HermitianPropagator::new",
                deviation: dev,
            });
        }
        let (values, vectors) = h.eigh();
        Ok(Self { values, vectors })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    pub fn at(&self, t: f64) -> ComplexMatrix {
        let n = self.values.len();
        let phases = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            self.values.iter().map(|&l| C64::from_polar(1.0, -l * t)),
        ));
        ComplexMatrix(&self.vectors * phases * self.vectors.adjoint())
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        assert_eq!(self.dim(), rhs.dim(), "matrix addition dimension mismatch");
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        assert_eq!(self.dim(), rhs.dim(), "matrix subtraction dimension mismatch");
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        assert_eq!(self.dim(), rhs.dim(), "matrix product dimension mismatch");
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Mul<&StateVector> for &ComplexMatrix {
    type Output = StateVector;
    fn mul(self, rhs: &StateVector) -> StateVector {
        &self.0 * rhs
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.0 += &rhs.0;
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    dim: usize,
    entries: Vec<C64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            dim: self.dim(),
            entries: self.to_row_major(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MatrixRepr::deserialize(d)?;
        if r.entries.len() != r.dim * r.dim {
            return Err(serde::de::Error::custom("entry count must equal dim²"));
        }
        Self::from_row_major(&r.entries).map_err(serde::de::Error::custom)
    }
}

/// Ordered tensor-product structure of a Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSpace {
    factors: Vec<(String, usize)>,
}

impl ProductSpace {
    pub fn new(factors: Vec<(String, usize)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("product space needs at least one factor".into()));
        }
        for (i, (label, dim)) in factors.iter().enumerate() {
            if *dim == 0 {
                return Err(Error::InvalidArgument(format!("factor '{label}' has zero dimension")));
            }
            if factors[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidArgument(format!("duplicate factor label '{label}'")));
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn factor_dim(&self, k: usize) -> usize {
        self.factors[k].1
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| d).product()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.factors.iter().position(|(l, _)| l == label)
    }
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix(a.0.kronecker(&b.0))
}

pub fn kron_vec(a: &StateVector, b: &StateVector) -> StateVector {
    a.kronecker(b)
}

/// Lift a single-factor operator to the full product space.
pub fn embed(op: &ComplexMatrix, factor_index: usize, space: &ProductSpace) -> Result<ComplexMatrix> {
    if factor_index >= space.n_factors() {
        return Err(Error::InvalidArgument(format!(
            "factor index {factor_index} out of range for {} factors",
            space.n_factors()
        )));
    }
    let expected = space.factor_dim(factor_index);
    if op.dim() != expected {
        return Err(Error::DimensionMismatch {
            context: "embed",
            expected,
            found: op.dim(),
        });
    }
    let dims = space.dims();
    let left: usize = dims[..factor_index].iter().product();
    let right: usize = dims[factor_index + 1..].iter().product();
    let mut out = op.clone();
    if right > 1 {
        out = kron(&out, &ComplexMatrix::identity(right));
    }
    if left > 1 {
        out = kron(&ComplexMatrix::identity(left), &out);
    }
    Ok(out)
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "commutator",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(&(a * b) - &(b * a))
}

const EXP_MAX_TERMS: usize = 60;

/// Matrix exponential by scaling and squaring with a Taylor kernel.
///
/// The input is scaled by 2^-s until its 1-norm is at most 1/2; the series is
/// summed until the next term is below machine precision relative to the sum.
pub fn matrix_exponential(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.dim();
    let norm = a.one_norm();
    if !norm.is_finite() || a.0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonConvergence {
            norm,
            scaled_norm: norm,
            terms: 0,
        });
    }
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm *= 0.5;
        squarings += 1;
    }
    let scaled = a.scale_real(0.5f64.powi(squarings as i32));

    let mut sum = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut converged = false;
    for k in 1..=EXP_MAX_TERMS {
        term = &term * &scaled.0 * C64::new(1.0 / k as f64, 0.0);
        sum += &term;
        let term_norm = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let sum_norm = sum.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if term_norm <= f64::EPSILON * 1e-2 * sum_norm.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            norm,
            scaled_norm,
            terms: EXP_MAX_TERMS,
        });
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(ComplexMatrix(sum))
}

/// exp(-i H t) v without forming the exponential, by substepped Taylor series.
pub fn expm_apply(h: &ComplexMatrix, t: f64, v: &StateVector) -> Result<StateVector> {
    let norm = h.one_norm() * t.abs();
    let substeps = (norm / 0.5).ceil().max(1.0) as usize;
    let tau = C64::new(0.0, -t / substeps as f64);
    let mut out = v.clone();
    for _ in 0..substeps {
        let mut term = out.clone();
        let mut acc = out.clone();
        let mut converged = false;
        for k in 1..=EXP_MAX_TERMS {
            term = (&h.0 * &term) * (tau / k as f64);
            acc += &term;
            if term.norm() <= f64::EPSILON * 1e-2 * acc.norm().max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                norm,
                scaled_norm: norm / substeps as f64,
                terms: EXP_MAX_TERMS,
            });
        }
        out = acc;
    }
    Ok(out)
}

/// Partial trace keeping the listed factors (in their original order).
pub fn partial_trace(rho: &ComplexMatrix, space: &ProductSpace, keep: &[usize]) -> Result<ComplexMatrix> {
    if rho.dim() != space.total_dim() {
        return Err(Error::DimensionMismatch {
            context: "partial_trace",
            expected: space.total_dim(),
            found: rho.dim(),
        });
    }
    let nf = space.n_factors();
    let mut keep_sorted: Vec<usize> = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || keep_sorted.iter().any(|&k| k >= nf) {
        return Err(Error::InvalidArgument(format!(
            "bad factor index set {keep:?} for {nf} factors"
        )));
    }
    let dims = space.dims();
    let traced: Vec<usize> = (0..nf).filter(|k| !keep_sorted.contains(k)).collect();
    let kept_dims: Vec<usize> = keep_sorted.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product();
    let traced_dim: usize = traced_dims.iter().product();

    // strides of each factor in the full row-major multi-index
    let mut strides = vec![1usize; nf];
    for k in (0..nf.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let offset = |sub: usize, which: &[usize], which_dims: &[usize]| -> usize {
        let mut rem = sub;
        let mut acc = 0;
        for (pos, &k) in which.iter().enumerate().rev() {
            let d = which_dims[pos];
            acc += (rem % d) * strides[k];
            rem /= d;
        }
        acc
    };
    let kept_offsets: Vec<usize> = (0..out_dim).map(|i| offset(i, &keep_sorted, &kept_dims)).collect();
    let traced_offsets: Vec<usize> = (0..traced_dim).map(|i| offset(i, &traced, &traced_dims)).collect();

    let mut out = ComplexMatrix::zeros(out_dim);
    for (i, &oi) in kept_offsets.iter().enumerate() {
        for (j, &oj) in kept_offsets.iter().enumerate() {
            let mut acc = ZERO;
            for &ot in &traced_offsets {
                acc += rho.0[(oi + ot, oj + ot)];
            }
            out.0[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Trace distance ½‖a − b‖₁ between Hermitian matrices.
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "trace_distance",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    for (m, ctx) in [(a, "trace_distance(a)"), (b, "trace_distance(b)")] {
        let dev = m.hermiticity_deviation();
        if dev > 1e-9 * m.max_abs().max(1.0) {
            return Err(Error::NotHermitian { context: ctx, deviation: dev });
        }
    }
    let diff = a - b;
    Ok(0.5 * diff.eigvalsh().iter().map(|l| l.abs()).sum::<f64>())
}

/// Annihilator and creator on the truncated Fock space {|0>, …, |n_cut−1>}.
pub fn boson_ladder(n_cut: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if n_cut < 2 {
        return Err(Error::InvalidArgument(format!("n_cut must be at least 2, got {n_cut}")));
    }
    let a = ComplexMatrix::from_fn(n_cut, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let ad = a.adjoint();
    Ok((a, ad))
}

pub fn number_operator(n_cut: usize) -> ComplexMatrix {
    ComplexMatrix::from_real_diagonal(&(0..n_cut).map(|n| n as f64).collect::<Vec<_>>())
}

pub fn basis_vector(dim: usize, k: usize) -> StateVector {
    let mut v = StateVector::zeros(dim);
    v[k] = ONE;
    v
}

pub fn inner(a: &StateVector, b: &StateVector) -> C64 {
    a.dotc(b)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut impl Rng, dim: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(dim, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    pub fn random_hermitian(rng: &mut impl Rng, dim: usize) -> ComplexMatrix {
        random_matrix(rng, dim).hermitian_part()
    }

    pub fn random_vector(rng: &mut impl Rng, dim: usize) -> StateVector {
        let v = StateVector::from_fn(dim, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let n = v.norm();
        v / C64::new(n, 0.0)
    }

    pub fn random_density(rng: &mut impl Rng, dim: usize) -> ComplexMatrix {
        let a = random_matrix(rng, dim);
        let rho = &a * &a.adjoint();
        let tr = rho.trace().re;
        rho.scale_real(1.0 / tr)
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
        (a - b).max_abs() < tol
    }

    #[test]
    fn kron_identity_and_blocks() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), ComplexMatrix::identity(4));
        let d = ComplexMatrix::from_real_diagonal(&[0.0, 1.0]);
        assert_eq!(kron(&d, &i2), ComplexMatrix::from_real_diagonal(&[0.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn kron_mixed_product_and_associativity() {
        let mut r = rng(1);
        let (a, b, c, d) = (
            random_matrix(&mut r, 2),
            random_matrix(&mut r, 2),
            random_matrix(&mut r, 2),
            random_matrix(&mut r, 2),
        );
        let lhs = &kron(&a, &b) * &kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert!(close(&lhs, &rhs, 1e-13));
        let e = random_matrix(&mut r, 3);
        assert!(close(&kron(&kron(&a, &b), &e), &kron(&a, &kron(&b, &e)), 1e-13));
    }

    #[test]
    fn embed_identity_commutation_and_trace() {
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3), ("c".into(), 2)]).unwrap();
        assert_eq!(embed(&ComplexMatrix::identity(3), 1, &space).unwrap(), ComplexMatrix::identity(12));
        let mut r = rng(2);
        let a = random_matrix(&mut r, 2);
        let b = random_matrix(&mut r, 3);
        let ea = embed(&a, 0, &space).unwrap();
        let eb = embed(&b, 1, &space).unwrap();
        assert!(commutator(&ea, &eb).unwrap().max_abs() < 1e-13);
        assert!((ea.trace() - a.trace() * 6.0).norm() < 1e-12);
        let eb_trace = embed(&b, 1, &space).unwrap().trace();
        assert!((eb_trace - b.trace() * 4.0).norm() < 1e-12);
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        assert!(matches!(
            embed(&ComplexMatrix::identity(2), 1, &space),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn product_space_rejects_duplicate_labels() {
        assert!(ProductSpace::new(vec![("a".into(), 2), ("a".into(), 3)]).is_err());
    }

    #[test]
    fn commutator_basics() {
        let mut r = rng(3);
        let a = random_matrix(&mut r, 4);
        assert!(commutator(&a, &a).unwrap().max_abs() < 1e-15);
        let d = ComplexMatrix::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let e = ComplexMatrix::from_real_diagonal(&[-1.0, 0.5, 7.0]);
        assert_eq!(commutator(&d, &e).unwrap().max_abs(), 0.0);
        assert!(commutator(&d, &a).is_err());
    }

    #[test]
    fn ladder_commutator_is_truncation_corrected_identity() {
        let n = 6;
        let (b, bd) = boson_ladder(n).unwrap();
        let c = commutator(&b, &bd).unwrap();
        let mut expected = vec![1.0; n];
        expected[n - 1] = -((n - 1) as f64);
        assert!(close(&c, &ComplexMatrix::from_real_diagonal(&expected), 1e-13));
    }

    #[test]
    fn ladder_shapes() {
        let (b, _) = boson_ladder(2).unwrap();
        assert_eq!(
            b,
            ComplexMatrix::from_row_major(&[ZERO, ONE, ZERO, ZERO]).unwrap()
        );
        let (b, bd) = boson_ladder(7).unwrap();
        assert!(close(&(&bd * &b), &number_operator(7), 1e-14));
        assert!(boson_ladder(1).is_err());
    }

    #[test]
    fn ladder_on_coherent_expansion() {
        // amplitudes e^{-|β|²/2} β^n / √n!, summed independently of the bath module
        let beta = C64::new(0.3, 0.4);
        let n_cut = 20;
        let mut amp = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
        let v = StateVector::from_fn(n_cut, |n, _| {
            if n > 0 {
                amp *= beta / (n as f64).sqrt();
            }
            amp
        });
        let (b, _) = boson_ladder(n_cut).unwrap();
        let residual = (&b * &v) - &v * beta;
        // the truncated top level contributes |β|^{2n}/n! ~ 1e-20
        assert!(residual.norm() < 1e-10);
    }

    fn taylor30(a: &ComplexMatrix) -> ComplexMatrix {
        let n = a.dim();
        let mut sum = ComplexMatrix::identity(n);
        let mut term = ComplexMatrix::identity(n);
        for k in 1..=30 {
            term = (&term * a).scale_real(1.0 / k as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn exponential_trivial_cases() {
        assert!(close(&matrix_exponential(&ComplexMatrix::zeros(3)).unwrap(), &ComplexMatrix::identity(3), 1e-15));
        let theta = 0.7;
        let a = ComplexMatrix::from_diagonal(&[ZERO, I * theta, I * (2.0 * theta)]);
        let expected = ComplexMatrix::from_diagonal(&[ONE, C64::from_polar(1.0, theta), C64::from_polar(1.0, 2.0 * theta)]);
        assert!(close(&matrix_exponential(&a).unwrap(), &expected, 1e-14));
    }

    #[test]
    fn exponential_matches_taylor_oracle() {
        let mut r = rng(4);
        for _ in 0..5 {
            let a = random_matrix(&mut r, 6);
            let a = a.scale_real(1.0 / a.one_norm());
            let oracle = taylor30(&a);
            assert!(close(&matrix_exponential(&a).unwrap(), &oracle, 1e-12));
            // nalgebra's Padé implementation as a second route
            let pade = ComplexMatrix(a.as_dmatrix().exp());
            assert!(close(&matrix_exponential(&a).unwrap(), &pade, 1e-12));
        }
    }

    #[test]
    fn exponential_of_antihermitian_is_unitary() {
        let mut r = rng(5);
        for scale in [0.1, 1.0, 10.0, 50.0] {
            let h = random_hermitian(&mut r, 8).scale_real(scale);
            let u = matrix_exponential(&h.scale(-I)).unwrap();
            assert!(u.unitarity_deviation() < 1e-12, "scale {scale}");
            assert!(close(&u, &h.unitary_propagator(1.0), 1e-10 * scale.max(1.0)));
        }
    }

    #[test]
    fn exponential_reports_nonfinite_input() {
        let a = ComplexMatrix::from_real_diagonal(&[f64::NAN, 0.0]);
        assert!(matches!(matrix_exponential(&a), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn expm_apply_matches_dense_exponential() {
        let mut r = rng(6);
        let h = random_hermitian(&mut r, 7);
        let v = random_vector(&mut r, 7);
        let dense = h.unitary_propagator(2.3).apply(&v);
        assert!((expm_apply(&h, 2.3, &v).unwrap() - dense).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut r = rng(7);
        let ra = random_density(&mut r, 2);
        let rb = random_density(&mut r, 3);
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let rho = kron(&ra, &rb);
        assert!(close(&partial_trace(&rho, &space, &[0]).unwrap(), &ra, 1e-14));
        assert!(close(&partial_trace(&rho, &space, &[1]).unwrap(), &rb, 1e-14));
        let all = partial_trace(&rho, &space, &[]).unwrap();
        assert_eq!(all.dim(), 1);
        assert!((all.get(0, 0) - rho.trace()).norm() < 1e-14);
        assert!(partial_trace(&rho, &space, &[2]).is_err());
        assert!(partial_trace(&rho, &space, &[0, 0]).is_err());
    }

    #[test]
    fn partial_trace_middle_factor() {
        let mut r = rng(8);
        let (ra, rb, rc) = (random_density(&mut r, 2), random_density(&mut r, 3), random_density(&mut r, 2));
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3), ("c".into(), 2)]).unwrap();
        let rho = kron(&kron(&ra, &rb), &rc);
        assert!(close(&partial_trace(&rho, &space, &[1]).unwrap(), &rb, 1e-14));
        assert!(close(&partial_trace(&rho, &space, &[0, 2]).unwrap(), &kron(&ra, &rc), 1e-14));
    }

    #[test]
    fn entangled_reductions_share_spectrum() {
        let mut r = rng(9);
        let psi = random_vector(&mut r, 6);
        let rho = ComplexMatrix::outer(&psi, &psi);
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let ea = partial_trace(&rho, &space, &[0]).unwrap().eigvalsh();
        let mut eb = partial_trace(&rho, &space, &[1]).unwrap().eigvalsh();
        eb.retain(|l| l.abs() > 1e-12);
        assert_eq!(eb.len(), 2);
        for (x, y) in ea.iter().zip(eb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_locality() {
        let mut r = rng(10);
        let space = ProductSpace::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let ra = random_density(&mut r, 2);
        let rb = random_density(&mut r, 3);
        let a = random_matrix(&mut r, 2);
        let rho = kron(&ra, &rb);
        let lhs = partial_trace(&(&embed(&a, 0, &space).unwrap() * &rho), &space, &[0]).unwrap();
        let rhs = &a * &partial_trace(&rho, &space, &[0]).unwrap();
        assert!(close(&lhs, &rhs, 1e-13));
    }

    #[test]
    fn trace_distance_cases() {
        let p0 = ComplexMatrix::from_real_diagonal(&[1.0, 0.0]);
        let p1 = ComplexMatrix::from_real_diagonal(&[0.0, 1.0]);
        assert!((trace_distance(&p0, &p1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(trace_distance(&p0, &p0).unwrap(), 0.0);
        let mut r = rng(11);
        assert!(matches!(
            trace_distance(&random_matrix(&mut r, 2), &p0),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn trace_distance_is_a_metric() {
        let mut r = rng(12);
        for _ in 0..50 {
            let (a, b, c) = (random_density(&mut r, 4), random_density(&mut r, 4), random_density(&mut r, 4));
            let ab = trace_distance(&a, &b).unwrap();
            let ba = trace_distance(&b, &a).unwrap();
            let bc = trace_distance(&b, &c).unwrap();
            let ac = trace_distance(&a, &c).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-12);
            assert!(ac <= ab + bc + 1e-12);
        }
    }
}

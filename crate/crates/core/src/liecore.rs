//! Matrix Lie group and Lie algebra numerics for `U(m)` / `GL(m, C)`.
//!
//! Everything is carried through a fixed faithful unitary representation on
//! `C^m` (the anchor). Algebra elements are `m x m` complex matrices tagged
//! with a parity: skew-Hermitian for the compact algebra `k`, Hermitian for
//! `ik`, general for the complexification. The metric on `k` is
//! `<s, t> = Tr(s t^*)`, and the dual `k^*` is always identified with `k`
//! through it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Entrywise tolerance for parity checks.
pub const PARITY_TOL: f64 = 1e-12;
/// Relative gap under which two eigenvalues are treated as one cluster.
pub const CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("parity violation: expected {expected:?}, deviation {deviation:e}")]
    Parity { expected: Parity, deviation: f64 },
    #[error("antidominant weights must be negative, got {0}")]
    NonNegativeWeight(f64),
    #[error("invalid rank sequence: {0}")]
    InvalidRanks(String),
    #[error("invalid anchor representation: {0}")]
    InvalidAnchor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    SkewHermitian,
    Hermitian,
    General,
}

/// Which subgroup of `U(m)` acts through the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "weights")]
pub enum AnchorKind {
    /// The full unitary group in its standard representation.
    Unitary,
    /// A torus acting diagonally; each list is the diagonal of one generator
    /// of `ik` (the generator in `k` is `i * diag(w)`).
    DiagonalWeights(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRep {
    pub m: usize,
    pub kind: AnchorKind,
    /// Orthonormal basis (under the trace form) of the real diagonal span of
    /// the torus generators; empty for `Unitary`.
    #[serde(skip)]
    torus_basis: Vec<Vec<f64>>,
}

impl AnchorRep {
    pub fn standard(m: usize) -> Result<Self, LieError> {
        if m == 0 {
            return Err(LieError::InvalidAnchor("m must be at least 1".into()));
        }
        Ok(Self { m, kind: AnchorKind::Unitary, torus_basis: Vec::new() })
    }

    pub fn torus(m: usize, weights: Vec<Vec<f64>>) -> Result<Self, LieError> {
        if m == 0 {
            return Err(LieError::InvalidAnchor("m must be at least 1".into()));
        }
        for w in &weights {
            if w.len() != m {
                return Err(LieError::InvalidAnchor(format!(
                    "weight list of length {} for anchor dimension {m}",
                    w.len()
                )));
            }
        }
        let torus_basis = gram_schmidt(&weights);
        if torus_basis.is_empty() {
            return Err(LieError::InvalidAnchor("torus generators span nothing".into()));
        }
        Ok(Self { m, kind: AnchorKind::DiagonalWeights(weights), torus_basis })
    }

    /// The traceless diagonal torus of `U(m)` (the maximal torus of `SU(m)`).
    pub fn traceless_torus(m: usize) -> Result<Self, LieError> {
        let weights = (0..m.saturating_sub(1))
            .map(|j| {
                let mut w = vec![0.0; m];
                w[j] = 1.0;
                w[j + 1] = -1.0;
                w
            })
            .collect();
        Self::torus(m, weights)
    }

    /// Rebuilds cached data after deserialization.
    pub fn validated(self) -> Result<Self, LieError> {
        match self.kind {
            AnchorKind::Unitary => Self::standard(self.m),
            AnchorKind::DiagonalWeights(w) => Self::torus(self.m, w),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, AnchorKind::DiagonalWeights(_))
    }

    /// Real dimension of the acting algebra.
    pub fn algebra_dim(&self) -> usize {
        match self.kind {
            AnchorKind::Unitary => self.m * self.m,
            AnchorKind::DiagonalWeights(_) => self.torus_basis.len(),
        }
    }

    /// True when the torus contains every traceless diagonal direction.
    pub fn contains_traceless_torus(&self) -> bool {
        match self.kind {
            AnchorKind::Unitary => true,
            AnchorKind::DiagonalWeights(_) => {
                let m = self.m;
                (0..m.saturating_sub(1)).all(|j| {
                    let mut d = vec![0.0; m];
                    d[j] = 1.0;
                    d[j + 1] = -1.0;
                    let p = project_onto(&self.torus_basis, &d);
                    p.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-10)
                })
            }
        }
    }

    /// Orthonormal basis of `k` (skew-Hermitian) under the trace pairing.
    pub fn basis(&self) -> Vec<AlgebraElement> {
        let m = self.m;
        let i = C64::i();
        match &self.kind {
            AnchorKind::Unitary => {
                let mut out = Vec::with_capacity(m * m);
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for k in 0..m {
                    let mut e = CMat::zeros(m, m);
                    e[(k, k)] = i;
                    out.push(AlgebraElement { mat: e, parity: Parity::SkewHermitian });
                }
                for k in 0..m {
                    for l in (k + 1)..m {
                        let mut a = CMat::zeros(m, m);
                        a[(k, l)] = C64::new(r, 0.0);
                        a[(l, k)] = C64::new(-r, 0.0);
                        out.push(AlgebraElement { mat: a, parity: Parity::SkewHermitian });
                        let mut b = CMat::zeros(m, m);
                        b[(k, l)] = i * r;
                        b[(l, k)] = i * r;
                        out.push(AlgebraElement { mat: b, parity: Parity::SkewHermitian });
                    }
                }
                out
            }
            AnchorKind::DiagonalWeights(_) => self
                .torus_basis
                .iter()
                .map(|w| AlgebraElement {
                    mat: CMat::from_diagonal(&DVector::from_iterator(
                        m,
                        w.iter().map(|&x| C64::new(0.0, x)),
                    )),
                    parity: Parity::SkewHermitian,
                })
                .collect(),
        }
    }

    /// Orthogonal projection of a Hermitian matrix onto `ik`.
    pub fn project_hermitian(&self, h: &CMat) -> CMat {
        match self.kind {
            AnchorKind::Unitary => h.clone(),
            AnchorKind::DiagonalWeights(_) => {
                let d: Vec<f64> = (0..self.m).map(|k| h[(k, k)].re).collect();
                let p = project_onto(&self.torus_basis, &d);
                real_diag(&p)
            }
        }
    }

    /// Whether a Hermitian matrix lies in `ik` (up to `tol` in Frobenius norm).
    pub fn contains_hermitian(&self, h: &CMat, tol: f64) -> bool {
        (self.project_hermitian(h) - h).norm() <= tol
    }

    /// Random Hermitian element of `ik` with Gaussian coordinates.
    pub fn random_hermitian<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> CMat {
        let mut h = CMat::zeros(self.m, self.m);
        for b in self.basis() {
            let x: f64 = gaussian(rng) * scale;
            // basis elements are skew-Hermitian; i*b is Hermitian
            h += b.mat * C64::new(0.0, x);
        }
        h
    }

    /// Random element of the acting compact group.
    pub fn random_unitary<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        match self.kind {
            AnchorKind::Unitary => random_unitary(self.m, rng),
            AnchorKind::DiagonalWeights(_) => {
                let h = self.random_hermitian(rng, 3.0);
                // exp(i h) with h diagonal
                let d: Vec<C64> = (0..self.m).map(|k| C64::new(0.0, h[(k, k)].re).exp()).collect();
                GroupElement { mat: CMat::from_diagonal(&DVector::from_vec(d)) }
            }
        }
    }

    /// Random element `k * exp(h)` of the complexified acting group.
    pub fn random_group<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> GroupElement {
        let k = self.random_unitary(rng);
        let h = self.random_hermitian(rng, scale);
        GroupElement { mat: k.mat * exp_hermitian(&h, 1.0) }
    }
}

fn gram_schmidt(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut u = v.clone();
        for b in &basis {
            let d: f64 = u.iter().zip(b).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(b).for_each(|(a, b)| *a -= d * b);
        }
        let n = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-10 {
            basis.push(u.into_iter().map(|a| a / n).collect());
        }
    }
    basis
}

fn project_onto(basis: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for b in basis {
        let c: f64 = d.iter().zip(b).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(b).for_each(|(o, b)| *o += c * b);
    }
    out
}

pub fn real_diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| C64::new(x, 0.0))))
}

/// Standard normal sample via Box-Muller.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Element of the Lie algebra of `GL(m, C)` in the anchor representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    mat: CMat,
    parity: Parity,
}

impl AlgebraElement {
    pub fn new(mat: CMat, parity: Parity) -> Result<Self, LieError> {
        if !mat.is_square() {
            return Err(LieError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
        }
        let dev = match parity {
            Parity::SkewHermitian => (&mat + mat.adjoint()).camax(),
            Parity::Hermitian => (&mat - mat.adjoint()).camax(),
            Parity::General => 0.0,
        };
        if dev > PARITY_TOL * mat.camax().max(1.0) {
            return Err(LieError::Parity { expected: parity, deviation: dev });
        }
        Ok(Self { mat, parity })
    }

    pub fn skew_hermitian(mat: CMat) -> Result<Self, LieError> {
        Self::new(mat, Parity::SkewHermitian)
    }

    pub fn hermitian(mat: CMat) -> Result<Self, LieError> {
        Self::new(mat, Parity::Hermitian)
    }

    pub fn general(mat: CMat) -> Result<Self, LieError> {
        Self::new(mat, Parity::General)
    }

    pub fn zero(m: usize, parity: Parity) -> Self {
        Self { mat: CMat::zeros(m, m), parity }
    }

    /// `diag(d)` as a Hermitian element.
    pub fn hermitian_diag(d: &[f64]) -> Self {
        Self { mat: real_diag(d), parity: Parity::Hermitian }
    }

    /// `i * diag(d)` as an element of `k`.
    pub fn skew_diag(d: &[f64]) -> Self {
        Self { mat: real_diag(d) * C64::i(), parity: Parity::SkewHermitian }
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// The Hermitian generator `i s` of a skew-Hermitian `s`. Hermitian
    /// elements are returned unchanged.
    pub fn weight_operator(&self) -> Result<CMat, LieError> {
        match self.parity {
            Parity::SkewHermitian => Ok(&self.mat * C64::i()),
            Parity::Hermitian => Ok(self.mat.clone()),
            Parity::General => Err(LieError::Parity {
                expected: Parity::SkewHermitian,
                deviation: (&self.mat + self.mat.adjoint()).camax(),
            }),
        }
    }

    /// `-i h` for a Hermitian `h`, i.e. the element of `k` whose weight
    /// operator is `h`.
    pub fn from_weight_operator(h: &CMat) -> Result<Self, LieError> {
        Self::skew_hermitian(h * -C64::i())
    }

    pub fn scale(&self, t: f64) -> Self {
        Self { mat: &self.mat * C64::new(t, 0.0), parity: self.parity }
    }

    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    /// `Ad_g s = g s g^{-1}`.
    pub fn adjoint(&self, g: &GroupElement) -> Self {
        let inv = g.inverse();
        let mat = &g.mat * &self.mat * inv.mat;
        let parity = if g.is_unitary(1e-10) { self.parity } else { Parity::General };
        Self { mat, parity }
    }
}

/// Invertible matrix in the anchor representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    mat: CMat,
}

impl GroupElement {
    pub fn new(mat: CMat) -> Result<Self, LieError> {
        if !mat.is_square() {
            return Err(LieError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
        }
        let svd = mat.clone().svd(false, false);
        let smin = svd.singular_values.min();
        if smin <= 1e-14 * svd.singular_values.max().max(1.0) {
            return Err(LieError::Singular(smin));
        }
        Ok(Self { mat })
    }

    pub fn identity(m: usize) -> Self {
        Self { mat: CMat::identity(m, m) }
    }

    pub fn from_diag(d: &[C64]) -> Result<Self, LieError> {
        Self::new(CMat::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `exp(h)` for Hermitian `h`.
    pub fn exp_hermitian(h: &CMat) -> Self {
        Self { mat: exp_hermitian(h, 1.0) }
    }

    pub fn exp(s: &AlgebraElement) -> Self {
        let mat = match s.parity {
            Parity::Hermitian => exp_hermitian(&s.mat, 1.0),
            Parity::SkewHermitian => exp_skew(&s.mat),
            Parity::General => s.mat.clone().exp(),
        };
        Self { mat }
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn inverse(&self) -> Self {
        let inv = self.mat.clone().try_inverse().expect("group elements are invertible");
        Self { mat: inv }
    }

    pub fn mul(&self, other: &GroupElement) -> Self {
        Self { mat: &self.mat * &other.mat }
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let m = self.mat.nrows();
        (&self.mat * self.mat.adjoint() - CMat::identity(m, m)).norm() <= tol
    }

    /// Operator norm.
    pub fn op_norm(&self) -> f64 {
        self.mat.clone().svd(false, false).singular_values.max()
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<(), LieError> {
    if a != b {
        return Err(LieError::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// `Tr(s t^*)`.
pub fn pairing(s: &AlgebraElement, t: &AlgebraElement) -> Result<C64, LieError> {
    check_same_dim(s.dim(), t.dim())?;
    Ok(trace_pair(&s.mat, &t.mat))
}

/// `Tr(a b^*)` on raw matrices.
pub fn trace_pair(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

pub fn norm(s: &AlgebraElement) -> f64 {
    trace_pair(&s.mat, &s.mat).re.max(0.0).sqrt()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eig(h: &CMat) -> (Vec<f64>, CMat) {
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (j, &k) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

/// `exp(t h)` for Hermitian `h`.
pub fn exp_hermitian(h: &CMat, t: f64) -> CMat {
    let (vals, u) = hermitian_eig(h);
    let d: Vec<f64> = vals.iter().map(|l| (t * l).exp()).collect();
    &u * real_diag(&d) * u.adjoint()
}

fn exp_skew(s: &CMat) -> CMat {
    // s = -i h with h Hermitian
    let h = s * C64::i();
    let (vals, u) = hermitian_eig(&h);
    let d = CMat::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&l| C64::new(0.0, -l).exp()),
    ));
    &u * d * u.adjoint()
}

/// Polar decomposition `g = k * exp(s)` with `k` unitary and `s` Hermitian.
pub fn cartan_decompose(g: &GroupElement) -> Result<(GroupElement, AlgebraElement), LieError> {
    let svd = g.mat.clone().svd(true, true);
    let (w, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sigma = &svd.singular_values;
    let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) {
        return Err(LieError::Singular(smin.max(0.0)));
    }
    let logs: Vec<f64> = sigma.iter().map(|l| l.ln()).collect();
    let v = v_t.adjoint();
    let s = &v * real_diag(&logs) * &v_t;
    let s = (&s + s.adjoint()) * C64::new(0.5, 0.0);
    let k = w * v_t;
    Ok((GroupElement { mat: k }, AlgebraElement { mat: s, parity: Parity::Hermitian }))
}

/// `|g|_log`, the Frobenius norm of the Hermitian part of `g`'s polar decomposition.
pub fn length_log(g: &GroupElement) -> Result<f64, LieError> {
    let (_, s) = cartan_decompose(g)?;
    Ok(s.norm())
}

/// Partial flag of cumulative eigenspaces of a Hermitian element.
#[derive(Debug, Clone)]
pub struct EigenFlag {
    /// Distinct eigenvalues, strictly ascending.
    pub eigenvalues: Vec<f64>,
    /// `subspaces[j]` is an orthonormal basis of the sum of eigenspaces for
    /// the first `j + 1` eigenvalues.
    pub subspaces: Vec<CMat>,
    pub ranks: Vec<usize>,
}

impl EigenFlag {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

pub fn eigen_flag(chi: &AlgebraElement) -> Result<EigenFlag, LieError> {
    if chi.parity == Parity::SkewHermitian {
        return Err(LieError::Parity {
            expected: Parity::Hermitian,
            deviation: (&chi.mat - chi.mat.adjoint()).camax(),
        });
    }
    Ok(eigen_flag_of(&chi.mat))
}

/// Eigenvalue clusters of a Hermitian matrix as `(value, multiplicity)`,
/// ascending, together with the eigenvector matrix (columns ordered to match).
pub fn clustered_eig(h: &CMat) -> (Vec<(f64, usize)>, CMat) {
    let (vals, u) = hermitian_eig(h);
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    let mut sum = 0.0;
    let mut last = f64::NEG_INFINITY;
    for &v in &vals {
        match clusters.last_mut() {
            Some(c) if v - last <= CLUSTER_TOL * scale => {
                c.1 += 1;
                sum += v;
                c.0 = sum / c.1 as f64;
            }
            _ => {
                clusters.push((v, 1));
                sum = v;
            }
        }
        last = v;
    }
    (clusters, u)
}

fn eigen_flag_of(h: &CMat) -> EigenFlag {
    let (clusters, u) = clustered_eig(h);
    let mut ranks = Vec::with_capacity(clusters.len());
    let mut subspaces = Vec::with_capacity(clusters.len());
    let mut r = 0;
    for &(_, mult) in &clusters {
        r += mult;
        ranks.push(r);
        subspaces.push(u.columns(0, r).into_owned());
    }
    EigenFlag { eigenvalues: clusters.iter().map(|c| c.0).collect(), subspaces, ranks }
}

/// `z I + sum_j m_j (pi_j - (R^j / R) I)` where `pi_j` projects onto the
/// first `R^j` coordinates of `C^R`.
pub fn antidominant_compose(
    z: f64,
    ranks: &[usize],
    weights: &[f64],
    total_rank: usize,
) -> Result<AlgebraElement, LieError> {
    if ranks.len() != weights.len() {
        return Err(LieError::InvalidRanks(format!(
            "{} ranks for {} weights",
            ranks.len(),
            weights.len()
        )));
    }
    let mut prev = 0;
    for &r in ranks {
        if r <= prev || r >= total_rank {
            return Err(LieError::InvalidRanks(format!(
                "ranks must be strictly increasing within (0, {total_rank}): {ranks:?}"
            )));
        }
        prev = r;
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w < 0.0)) {
        return Err(LieError::NonNegativeWeight(w));
    }
    let big_r = total_rank as f64;
    let mut d = vec![z; total_rank];
    for (&r, &m) in ranks.iter().zip(weights) {
        let shift = r as f64 / big_r;
        for (k, dk) in d.iter_mut().enumerate() {
            *dk += m * (if k < r { 1.0 } else { 0.0 } - shift);
        }
    }
    Ok(AlgebraElement::hermitian_diag(&d))
}

/// Haar-distributed unitary matrix (QR of a complex Gaussian matrix with
/// phase correction).
pub fn random_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> GroupElement {
    let z = CMat::from_fn(m, m, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..m {
            q[(i, j)] *= ph;
        }
    }
    GroupElement { mat: q }
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(m: usize, rng: &mut R, scale: f64) -> CMat {
    let z = CMat::from_fn(m, m, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    (&z + z.adjoint()) * C64::new(0.5 * scale, 0.0)
}

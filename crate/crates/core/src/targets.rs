//! Kähler targets with a unitary action: linear spaces, projective spaces,
//! Grassmannians and partial flag manifolds.
//!
//! # Sign convention
//!
//! For `s` in `k` write `H = i s` (Hermitian). The flow generated by `s` is
//! `x -> exp(t H) x`, and the moment map is fixed by requiring that
//! `lambda_t(x; s) = <mu(exp(tH) x), s>` is nondecreasing and that its value
//! at an attracting fixed point is the closed-form maximal weight. With the
//! pairing `<a, b> = Tr(a b^*)` this gives `mu(x) = -i Q(x)` and
//! `<mu(x), s> = Tr(Q(x) H)` where
//!
//! | target      | `Q(x)`                                  |
//! |-------------|-----------------------------------------|
//! | linear      | `x x^* / 2`                             |
//! | projective  | `tau x x^* / |x|^2`                     |
//! | Grassmann   | `tau P` (orthogonal projection)         |
//! | flag        | `sum_k tau_k P_k`                       |
//!
//! For a torus anchor the moment map of the subgroup is the orthogonal
//! projection of `Q` onto the torus algebra.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liecore::{
    clustered_eig, gaussian, hermitian_eig, AlgebraElement, AnchorRep, CMat, GroupElement, LieError, Parity, C64,
};

/// Absolute threshold for support and intersection-dimension decisions.
pub const RANK_TOL: f64 = 1e-10;
/// `lambda_t` above this value with a positive slope counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("homogeneous vector vanished under the action")]
    ZeroVector,
    #[error("maximal weight inconclusive: lambda = {value}, slope = {slope}")]
    Inconclusive { value: f64, slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetKind {
    Linear,
    /// `tau` is experimental here; the default is 1.
    Projective {
        #[serde(default = "one")]
        tau: f64,
    },
    Grassmann { k: usize, tau: f64 },
    Flag { ranks: Vec<usize>, taus: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    kind: TargetKind,
    anchor: AnchorRep,
}

/// A point of a target, stored as an ambient frame.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetPoint {
    /// Column vector in `C^m`.
    Linear(CMat),
    /// Unit column vector (a lift of the projective point).
    Projective(CMat),
    /// `R x k` matrix with orthonormal columns.
    Grassmann(CMat),
    /// `R x i_s` orthonormal frame; the first `i_j` columns span `V_j`.
    Flag(CMat),
}

impl TargetPoint {
    pub fn frame(&self) -> &CMat {
        match self {
            TargetPoint::Linear(m)
            | TargetPoint::Projective(m)
            | TargetPoint::Grassmann(m)
            | TargetPoint::Flag(m) => m,
        }
    }

    fn with_frame(&self, frame: CMat) -> Self {
        match self {
            TargetPoint::Linear(_) => TargetPoint::Linear(frame),
            TargetPoint::Projective(_) => TargetPoint::Projective(frame),
            TargetPoint::Grassmann(_) => TargetPoint::Grassmann(frame),
            TargetPoint::Flag(_) => TargetPoint::Flag(frame),
        }
    }
}

/// Value of a maximal weight: finite (with an error estimate when produced
/// numerically) or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExtendedWeight {
    Finite { value: f64, error: f64 },
    Infinite,
}

impl ExtendedWeight {
    pub fn exact(value: f64) -> Self {
        ExtendedWeight::Finite { value, error: 0.0 }
    }

    pub fn value(&self) -> f64 {
        match self {
            ExtendedWeight::Finite { value, .. } => *value,
            ExtendedWeight::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtendedWeight::Infinite)
    }

    /// Shift a finite weight by `delta`; infinity is absorbing.
    pub fn shifted(self, delta: f64) -> Self {
        match self {
            ExtendedWeight::Finite { value, error } => {
                ExtendedWeight::Finite { value: value + delta, error }
            }
            ExtendedWeight::Infinite => ExtendedWeight::Infinite,
        }
    }
}

impl Target {
    pub fn new(kind: TargetKind, anchor: AnchorRep) -> Result<Self, TargetError> {
        let m = anchor.m;
        match &kind {
            TargetKind::Linear => {}
            TargetKind::Projective { tau } => {
                if m < 1 || !(*tau > 0.0) {
                    return Err(TargetError::InvalidTarget(format!("projective tau = {tau}")));
                }
            }
            TargetKind::Grassmann { k, tau } => {
                if *k == 0 || *k >= m {
                    return Err(TargetError::InvalidTarget(format!("need 0 < k < R, got k={k}, R={m}")));
                }
                if !(*tau > 0.0) {
                    return Err(TargetError::InvalidTarget(format!("tau must be positive, got {tau}")));
                }
            }
            TargetKind::Flag { ranks, taus } => {
                if ranks.is_empty() || ranks.len() != taus.len() {
                    return Err(TargetError::InvalidTarget("flag needs one tau per rank".into()));
                }
                let mut prev = 0;
                for &r in ranks {
                    if r <= prev || r >= m {
                        return Err(TargetError::InvalidTarget(format!(
                            "flag ranks must increase strictly within (0, {m}): {ranks:?}"
                        )));
                    }
                    prev = r;
                }
                if taus.iter().any(|t| !(*t > 0.0)) {
                    return Err(TargetError::InvalidTarget("flag weights must be positive".into()));
                }
            }
        }
        Ok(Self { kind, anchor })
    }

    pub fn linear(anchor: AnchorRep) -> Self {
        Self { kind: TargetKind::Linear, anchor }
    }

    pub fn projective(anchor: AnchorRep) -> Self {
        Self { kind: TargetKind::Projective { tau: 1.0 }, anchor }
    }

    pub fn grassmann(anchor: AnchorRep, k: usize, tau: f64) -> Result<Self, TargetError> {
        Self::new(TargetKind::Grassmann { k, tau }, anchor)
    }

    pub fn flag(anchor: AnchorRep, ranks: Vec<usize>, taus: Vec<f64>) -> Result<Self, TargetError> {
        Self::new(TargetKind::Flag { ranks, taus }, anchor)
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn anchor(&self) -> &AnchorRep {
        &self.anchor
    }

    pub fn ambient_dim(&self) -> usize {
        self.anchor.m
    }

    /// Number of frame columns a point carries.
    pub fn frame_cols(&self) -> usize {
        match &self.kind {
            TargetKind::Linear | TargetKind::Projective { .. } => 1,
            TargetKind::Grassmann { k, .. } => *k,
            TargetKind::Flag { ranks, .. } => *ranks.last().unwrap(),
        }
    }

    /// `(rank, tau)` of each component subspace; empty for linear targets.
    pub fn components(&self) -> Vec<(usize, f64)> {
        match &self.kind {
            TargetKind::Linear => Vec::new(),
            TargetKind::Projective { tau } => vec![(1, *tau)],
            TargetKind::Grassmann { k, tau } => vec![(*k, *tau)],
            TargetKind::Flag { ranks, taus } => ranks.iter().copied().zip(taus.iter().copied()).collect(),
        }
    }

    /// Validate a frame as a point of this target. Projective vectors are
    /// normalized; subspace frames must already be orthonormal.
    pub fn point(&self, frame: CMat) -> Result<TargetPoint, TargetError> {
        self.check_frame_shape(&frame)?;
        match &self.kind {
            TargetKind::Linear => Ok(TargetPoint::Linear(frame)),
            TargetKind::Projective { .. } => {
                let n = frame.norm();
                if n < 1e-300 {
                    return Err(TargetError::ZeroVector);
                }
                Ok(TargetPoint::Projective(frame / C64::new(n, 0.0)))
            }
            _ => {
                let k = frame.ncols();
                let dev = (frame.adjoint() * &frame - CMat::identity(k, k)).camax();
                if dev > 1e-12 {
                    return Err(TargetError::InvalidPoint(format!(
                        "frame is not orthonormal (deviation {dev:e})"
                    )));
                }
                Ok(self.wrap(frame))
            }
        }
    }

    /// Build a point from any full-rank spanning frame (orthonormalized by QR,
    /// which keeps flags nested).
    pub fn point_from_spanning(&self, frame: CMat) -> Result<TargetPoint, TargetError> {
        self.check_frame_shape(&frame)?;
        match &self.kind {
            TargetKind::Linear | TargetKind::Projective { .. } => self.point(frame),
            _ => Ok(self.wrap(orthonormalize(frame)?)),
        }
    }

    fn wrap(&self, frame: CMat) -> TargetPoint {
        match &self.kind {
            TargetKind::Linear => TargetPoint::Linear(frame),
            TargetKind::Projective { .. } => TargetPoint::Projective(frame),
            TargetKind::Grassmann { .. } => TargetPoint::Grassmann(frame),
            TargetKind::Flag { .. } => TargetPoint::Flag(frame),
        }
    }

    fn check_frame_shape(&self, frame: &CMat) -> Result<(), TargetError> {
        if frame.nrows() != self.ambient_dim() {
            return Err(TargetError::DimensionMismatch { expected: self.ambient_dim(), found: frame.nrows() });
        }
        if frame.ncols() != self.frame_cols() {
            return Err(TargetError::DimensionMismatch { expected: self.frame_cols(), found: frame.ncols() });
        }
        Ok(())
    }

    fn check_point(&self, x: &TargetPoint) -> Result<(), TargetError> {
        let ok = matches!(
            (&self.kind, x),
            (TargetKind::Linear, TargetPoint::Linear(_))
                | (TargetKind::Projective { .. }, TargetPoint::Projective(_))
                | (TargetKind::Grassmann { .. }, TargetPoint::Grassmann(_))
                | (TargetKind::Flag { .. }, TargetPoint::Flag(_))
        );
        if !ok {
            return Err(TargetError::InvalidPoint("point variant does not match target".into()));
        }
        self.check_frame_shape(x.frame())
    }

    fn check_group(&self, g: &GroupElement) -> Result<(), TargetError> {
        if g.dim() != self.ambient_dim() {
            return Err(TargetError::DimensionMismatch { expected: self.ambient_dim(), found: g.dim() });
        }
        Ok(())
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> TargetPoint {
        let frame = CMat::from_fn(self.ambient_dim(), self.frame_cols(), |_, _| {
            C64::new(gaussian(rng), gaussian(rng))
        });
        self.point_from_spanning(frame).expect("Gaussian frames have full rank")
    }

    /// The holomorphic action of `g`.
    pub fn act(&self, g: &GroupElement, x: &TargetPoint) -> Result<TargetPoint, TargetError> {
        self.check_group(g)?;
        self.check_point(x)?;
        let y = g.mat() * x.frame();
        match &self.kind {
            TargetKind::Linear => Ok(TargetPoint::Linear(y)),
            TargetKind::Projective { .. } => {
                let n = y.norm();
                if !(n > 1e-300) || !n.is_finite() {
                    return Err(TargetError::ZeroVector);
                }
                Ok(TargetPoint::Projective(y / C64::new(n, 0.0)))
            }
            _ => Ok(x.with_frame(orthonormalize(y)?)),
        }
    }

    /// Hermitian matrix `Q(x)` of the full `U(m)` moment map, `mu(x) = -i Q(x)`.
    pub fn moment_hermitian(&self, x: &TargetPoint) -> CMat {
        let f = x.frame();
        match &self.kind {
            TargetKind::Linear => f * f.adjoint() * C64::new(0.5, 0.0),
            TargetKind::Projective { tau } => {
                f * f.adjoint() * C64::new(tau / f.norm_squared(), 0.0)
            }
            TargetKind::Grassmann { tau, .. } => f * f.adjoint() * C64::new(*tau, 0.0),
            TargetKind::Flag { ranks, taus } => {
                let m = self.ambient_dim();
                let mut q = CMat::zeros(m, m);
                for (&r, &tau) in ranks.iter().zip(taus) {
                    let y = f.columns(0, r);
                    q += y * y.adjoint() * C64::new(tau, 0.0);
                }
                q
            }
        }
    }

    /// Moment map of the acting group as a Hermitian matrix in `ik`.
    pub fn moment_projected(&self, x: &TargetPoint) -> CMat {
        self.anchor.project_hermitian(&self.moment_hermitian(x))
    }

    /// `<mu(x), s>` for `s` in `k`.
    pub fn moment_pair(&self, x: &TargetPoint, s: &AlgebraElement) -> Result<f64, TargetError> {
        self.check_point(x)?;
        let h = skew_weight_operator(s)?;
        if h.nrows() != self.ambient_dim() {
            return Err(TargetError::DimensionMismatch { expected: self.ambient_dim(), found: h.nrows() });
        }
        Ok(self.moment_pair_hermitian(x, &h))
    }

    /// `Tr(Q(x) H)`, the moment pairing written through the weight operator.
    pub fn moment_pair_hermitian(&self, x: &TargetPoint, h: &CMat) -> f64 {
        let f = x.frame();
        match &self.kind {
            TargetKind::Linear => 0.5 * quad_form(f, h),
            TargetKind::Projective { tau } => tau * quad_form(f, h) / f.norm_squared(),
            TargetKind::Grassmann { tau, .. } => tau * quad_form(f, h),
            TargetKind::Flag { ranks, taus } => ranks
                .iter()
                .zip(taus)
                .map(|(&r, tau)| tau * quad_form(&f.columns(0, r).into_owned(), h))
                .sum(),
        }
    }

    /// `mu(x)` materialized in `k` through the trace pairing.
    pub fn moment_element(&self, x: &TargetPoint) -> Result<AlgebraElement, TargetError> {
        self.check_point(x)?;
        let q = self.moment_projected(x);
        let q = (&q + q.adjoint()) * C64::new(0.5, 0.0);
        Ok(AlgebraElement::from_weight_operator(&q)?)
    }

    /// `exp(i t s) x`.
    pub fn flow(&self, x: &TargetPoint, s: &AlgebraElement, t: f64) -> Result<TargetPoint, TargetError> {
        self.check_point(x)?;
        let h = skew_weight_operator(s)?;
        self.flow_hermitian(x, &h, t)
    }

    /// `exp(t H) x` for Hermitian `H`, evaluated in the eigenbasis of `H` so
    /// that large `t` stays accurate. Eigen-coordinates below `RANK_TOL` are
    /// treated as exact zeros.
    pub fn flow_hermitian(&self, x: &TargetPoint, h: &CMat, t: f64) -> Result<TargetPoint, TargetError> {
        if t == 0.0 {
            self.check_point(x)?;
            return Ok(x.clone());
        }
        self.flow_path(x, h)?.point(t)
    }

    /// Precomputes the eigen-decomposition of `H` for repeated evaluation of
    /// the trajectory `t -> exp(tH) x`.
    pub fn flow_path<'a>(&'a self, x: &TargetPoint, h: &CMat) -> Result<FlowPath<'a>, TargetError> {
        self.check_point(x)?;
        if h.nrows() != self.ambient_dim() || h.ncols() != self.ambient_dim() {
            return Err(TargetError::DimensionMismatch { expected: self.ambient_dim(), found: h.nrows() });
        }
        let (vals, u) = hermitian_eig(h);
        let z = u.adjoint() * x.frame();
        Ok(FlowPath { target: self, u, vals, z, base: x.clone() })
    }

    /// `lambda_t(x; s) = <mu(exp(its) x), s>`.
    pub fn lambda_t(&self, x: &TargetPoint, s: &AlgebraElement, t: f64) -> Result<f64, TargetError> {
        let h = skew_weight_operator(s)?;
        self.lambda_t_hermitian(x, &h, t)
    }

    pub fn lambda_t_hermitian(&self, x: &TargetPoint, h: &CMat, t: f64) -> Result<f64, TargetError> {
        self.flow_path(x, h)?.lambda(t)
    }

    /// Closed-form maximal weight `lim_{t -> inf} lambda_t(x; s)`.
    pub fn maximal_weight(&self, x: &TargetPoint, s: &AlgebraElement) -> Result<ExtendedWeight, TargetError> {
        self.check_point(x)?;
        let h = skew_weight_operator(s)?;
        self.maximal_weight_hermitian(x, &h)
    }

    pub fn maximal_weight_hermitian(&self, x: &TargetPoint, h: &CMat) -> Result<ExtendedWeight, TargetError> {
        self.check_point(x)?;
        let (clusters, u) = clustered_eig(h);
        let z = u.adjoint() * x.frame();
        let scale = clusters.iter().fold(0.0f64, |a, c| a.max(c.0.abs()));
        match &self.kind {
            TargetKind::Linear => {
                let norm = z.norm();
                let mut row = 0;
                for &(lam, mult) in &clusters {
                    let mass: f64 = (row..row + mult).map(|r| z[(r, 0)].norm_sqr()).sum::<f64>().sqrt();
                    if mass > RANK_TOL * norm.max(f64::MIN_POSITIVE) && lam > 1e-12 * scale.max(1.0) {
                        return Ok(ExtendedWeight::Infinite);
                    }
                    row += mult;
                }
                Ok(ExtendedWeight::exact(0.0))
            }
            _ => {
                let value = self
                    .components()
                    .iter()
                    .map(|&(r, tau)| tau * grassmann_weight(&z.columns(0, r).into_owned(), &clusters))
                    .sum();
                Ok(ExtendedWeight::exact(value))
            }
        }
    }

    /// Maximal weight read off the flow at `t_max`.
    pub fn numeric_maximal_weight(
        &self,
        x: &TargetPoint,
        s: &AlgebraElement,
        t_max: f64,
        slope_tol: f64,
    ) -> Result<ExtendedWeight, TargetError> {
        if !(t_max > 0.0) {
            return Err(TargetError::InvalidTarget(format!("t_max must be positive, got {t_max}")));
        }
        let h = skew_weight_operator(s)?;
        if h.norm() == 0.0 {
            return Ok(ExtendedWeight::exact(0.0));
        }
        let dt = 1e-2 * t_max.min(1.0);
        let v = self.lambda_t_hermitian(x, &h, t_max)?;
        let v_prev = self.lambda_t_hermitian(x, &h, t_max - dt)?;
        let slope = (v - v_prev) / dt;
        if !v.is_finite() || (v > DIVERGENCE_THRESHOLD && !(slope < slope_tol)) {
            return Ok(ExtendedWeight::Infinite);
        }
        if slope.abs() < slope_tol {
            return Ok(ExtendedWeight::Finite { value: v, error: slope.abs() });
        }
        Err(TargetError::Inconclusive { value: v, slope })
    }
}

/// The trajectory `t -> exp(tH) x` in the eigenbasis of `H`.
#[derive(Debug, Clone)]
pub struct FlowPath<'a> {
    target: &'a Target,
    u: CMat,
    vals: Vec<f64>,
    z: CMat,
    base: TargetPoint,
}

impl FlowPath<'_> {
    /// Eigenvalues of `H` in the order used by the eigenbasis.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.vals
    }

    fn eigen_frame(&self, t: f64) -> Result<CMat, TargetError> {
        match &self.target.kind {
            TargetKind::Linear => {
                let mut w = self.z.clone();
                for (r, l) in self.vals.iter().enumerate() {
                    w[(r, 0)] *= (t * l).exp();
                }
                Ok(w)
            }
            TargetKind::Projective { .. } | TargetKind::Grassmann { .. } => flow_subspace(&self.z, &self.vals, t),
            TargetKind::Flag { ranks, .. } => {
                let parts = ranks
                    .iter()
                    .map(|&r| flow_subspace(&self.z.columns(0, r).into_owned(), &self.vals, t))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(nest_frames(&parts))
            }
        }
    }

    pub fn point(&self, t: f64) -> Result<TargetPoint, TargetError> {
        if t == 0.0 {
            return Ok(self.base.clone());
        }
        Ok(self.base.with_frame(&self.u * self.eigen_frame(t)?))
    }

    /// `<mu(exp(tH) x), H>` evaluated in eigen-coordinates.
    pub fn lambda(&self, t: f64) -> Result<f64, TargetError> {
        let w = if t == 0.0 { self.z.clone() } else { self.eigen_frame(t)? };
        let weighted = |cols: usize| -> f64 {
            let mut acc = 0.0;
            for c in 0..cols {
                for (r, l) in self.vals.iter().enumerate() {
                    acc += l * w[(r, c)].norm_sqr();
                }
            }
            acc
        };
        Ok(match &self.target.kind {
            TargetKind::Linear => 0.5 * weighted(1),
            TargetKind::Projective { tau } => tau * weighted(1) / w.norm_squared(),
            TargetKind::Grassmann { k, tau } => tau * weighted(*k),
            TargetKind::Flag { ranks, taus } => ranks.iter().zip(taus).map(|(&r, tau)| tau * weighted(r)).sum(),
        })
    }
}

fn skew_weight_operator(s: &AlgebraElement) -> Result<CMat, TargetError> {
    if s.parity() != Parity::SkewHermitian {
        return Err(TargetError::Lie(LieError::Parity {
            expected: Parity::SkewHermitian,
            deviation: (s.mat() + s.mat().adjoint()).camax(),
        }));
    }
    Ok(s.weight_operator()?)
}

/// `Re Tr(Y^* H Y)`.
fn quad_form(y: &CMat, h: &CMat) -> f64 {
    (y.adjoint() * h * y).trace().re
}

/// Thin QR keeping column order (so nested spans are preserved).
pub fn orthonormalize(frame: CMat) -> Result<CMat, TargetError> {
    let k = frame.ncols();
    let scale = frame.norm();
    if !scale.is_finite() || scale == 0.0 {
        return Err(TargetError::ZeroVector);
    }
    let qr = (frame / C64::new(scale, 0.0)).qr();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)].norm() < 1e-13 {
            return Err(TargetError::InvalidPoint("frame lost rank".into()));
        }
    }
    Ok(qr.q().columns(0, k).into_owned())
}

const DIRECT_FLOW_RANGE: f64 = 4.0;

/// Flow of the span of `z` (coordinates in the eigenbasis, `vals` the
/// matching eigenvalues) by `diag(exp(t vals))`, returned as an orthonormal
/// frame in eigen-coordinates. The columns are first brought to echelon form
/// with respect to the rows ordered by decreasing `t * lambda`, so every
/// column is dominated by its pivot after scaling.
fn flow_subspace(z: &CMat, vals: &[f64], t: f64) -> Result<CMat, TargetError> {
    let (n, k) = z.shape();
    let top = vals.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(t * v));
    let bottom = vals.iter().fold(f64::INFINITY, |a, &v| a.min(t * v));
    if top - bottom <= DIRECT_FLOW_RANGE {
        let mut w = z.clone();
        for r in 0..n {
            let f = (t * vals[r] - top).exp();
            for c in 0..k {
                w[(r, c)] *= f;
            }
        }
        return orthonormalize(w);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (t * vals[b]).total_cmp(&(t * vals[a])));
    let mut w = z.clone();
    let tol = RANK_TOL * w.camax().max(f64::MIN_POSITIVE);
    let mut pivot_row: Vec<Option<usize>> = vec![None; k];
    let mut used = 0;
    for &row in &order {
        if used == k {
            break;
        }
        let best = (0..k)
            .filter(|&c| pivot_row[c].is_none())
            .max_by(|&a, &b| w[(row, a)].norm().total_cmp(&w[(row, b)].norm()));
        let Some(p) = best else { break };
        if w[(row, p)].norm() <= tol {
            for c in (0..k).filter(|&c| pivot_row[c].is_none()) {
                w[(row, c)] = C64::new(0.0, 0.0);
            }
            continue;
        }
        let piv = w[(row, p)];
        for r in 0..n {
            w[(r, p)] /= piv;
        }
        for c in (0..k).filter(|&c| c != p && pivot_row[c].is_none()) {
            let f = w[(row, c)];
            if f != C64::new(0.0, 0.0) {
                for r in 0..n {
                    let v = w[(r, p)];
                    w[(r, c)] -= f * v;
                }
            }
        }
        pivot_row[p] = Some(row);
        used += 1;
    }
    if used < k {
        return Err(TargetError::InvalidPoint("frame is rank deficient".into()));
    }
    for c in 0..k {
        let lp = vals[pivot_row[c].unwrap()];
        for r in 0..n {
            if w[(r, c)] != C64::new(0.0, 0.0) {
                w[(r, c)] *= (t * (vals[r] - lp)).exp();
            }
        }
    }
    orthonormalize(w)
}

/// Assemble a nested orthonormal frame from frames of increasing subspaces.
fn nest_frames(parts: &[CMat]) -> CMat {
    let n = parts[0].nrows();
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        let extra = p.ncols() - out.ncols();
        let proj = p - &out * (out.adjoint() * p);
        let svd = proj.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut next = CMat::zeros(n, out.ncols() + extra);
        next.columns_mut(0, out.ncols()).copy_from(&out);
        for (j, &c) in idx.iter().take(extra).enumerate() {
            next.set_column(out.ncols() + j, &u.column(c));
        }
        out = next;
    }
    out
}

/// `dim(pi) lambda_r + sum_j dim(pi ∩ E_j)(lambda_j - lambda_{j+1})` for the
/// span of `z` (eigen-coordinates), `E_j` the sum of the first `j` clusters.
fn grassmann_weight(z: &CMat, clusters: &[(f64, usize)]) -> f64 {
    let k = z.ncols();
    let r = clusters.len();
    let mut value = k as f64 * clusters[r - 1].0;
    let mut rows = 0;
    for j in 0..r - 1 {
        rows += clusters[j].1;
        let d = intersection_dim(z, rows);
        value += d as f64 * (clusters[j].0 - clusters[j + 1].0);
    }
    value
}

/// `dim(span(z) ∩ span(e_0, ..., e_{rows-1}))` for orthonormal `z`.
fn intersection_dim(z: &CMat, rows: usize) -> usize {
    let (n, k) = z.shape();
    if rows == n {
        return k;
    }
    let tail = z.rows(rows, n - rows).into_owned();
    let sv = tail.svd(false, false).singular_values;
    let rank = sv.iter().filter(|&&s| s > RANK_TOL).count();
    k - rank
}

/// Plücker coordinates of the span of a frame: all `k x k` minors indexed by
/// increasing row sets.
pub fn plucker(frame: &CMat) -> Vec<(Vec<usize>, C64)> {
    let (n, k) = frame.shape();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let sub = CMat::from_fn(k, k, |i, j| frame[(idx[i], j)]);
        out.push((idx.clone(), sub.determinant()));
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

//! The integral of the moment map, its minimization by the moment-map flow,
//! stability verdicts and K-orbit comparisons.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liecore::{cartan_decompose, AlgebraElement, CMat, GroupElement, LieError, Parity, C64};
use crate::targets::{ExtendedWeight, Target, TargetError, TargetKind, TargetPoint};

pub const DEFAULT_QUAD_TOL: f64 = 1e-9;
const GL_ORDER: usize = 7;
const MAX_DEPTH: usize = 40;
const MAX_PANELS: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KempfError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("c is not central for the acting group (commutator norm {0:e})")]
    NotCentral(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Value of the Kempf–Ness function at a group element.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiRecord {
    pub value: f64,
    /// Difference between one Gauss–Legendre panel and its two halves,
    /// summed over accepted panels.
    pub error: f64,
    /// False when the subdivision depth limit was hit before `quad_tol`.
    pub converged: bool,
    /// `g = k exp(i s)`.
    pub s: AlgebraElement,
    pub k: GroupElement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        // Golub–Welsch
        let n = GL_ORDER;
        let jac = DMatrix::<f64>::from_fn(n, n, |i, k| {
            if i + 1 == k || k + 1 == i {
                let b = i.max(k) as f64;
                b / (4.0 * b * b - 1.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = jac.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> =
            (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

fn gl_panel<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64) -> Result<f64, E> {
    let (nodes, weights) = gl_rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x)?;
    }
    Ok(acc * half)
}

/// Adaptive Gauss–Legendre quadrature of `f` over `[a, b]`: a panel is
/// accepted when it agrees with the sum over its halves to within its share
/// of `tol`, or to within rounding of its value. Runs that exhaust the depth
/// or panel budget report `converged = false`.
pub fn integrate<E>(mut f: impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64, tol: f64) -> Result<Quadrature, E> {
    let whole = gl_panel(&mut f, a, b)?;
    let mut budget = MAX_PANELS;
    refine(&mut f, a, b, whole, tol, 0, &mut budget)
}

fn refine<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    budget: &mut usize,
) -> Result<Quadrature, E> {
    let m = 0.5 * (a + b);
    let left = gl_panel(f, a, m)?;
    let right = gl_panel(f, m, b)?;
    *budget = budget.saturating_sub(2);
    let refined = left + right;
    let diff = (refined - whole).abs();
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if diff <= tol.max(floor) || !diff.is_finite() {
        return Ok(Quadrature { value: refined, error: diff, converged: diff.is_finite() });
    }
    if depth >= MAX_DEPTH || *budget == 0 {
        return Ok(Quadrature { value: refined, error: diff, converged: false });
    }
    let l = refine(f, a, m, left, 0.5 * tol, depth + 1, budget)?;
    let r = refine(f, m, b, right, 0.5 * tol, depth + 1, budget)?;
    Ok(Quadrature { value: l.value + r.value, error: l.error + r.error, converged: l.converged && r.converged })
}

/// `int_0^1 <mu(exp(tH) x), H> dt`, i.e. the Kempf–Ness function at `exp(H)`.
pub fn psi_hermitian(target: &Target, x: &TargetPoint, h: &CMat, quad_tol: f64) -> Result<Quadrature, KempfError> {
    if h.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(Quadrature { value: 0.0, error: 0.0, converged: true });
    }
    let path = target.flow_path(x, h)?;
    Ok(integrate(|t| path.lambda(t), 0.0, 1.0, quad_tol)?)
}

/// `Psi(x, g)` via the polar decomposition `g = k exp(i s)`.
pub fn psi(target: &Target, x: &TargetPoint, g: &GroupElement, quad_tol: f64) -> Result<PsiRecord, KempfError> {
    let m = target.ambient_dim();
    if g.dim() != m {
        return Err(TargetError::DimensionMismatch { expected: m, found: g.dim() }.into());
    }
    if *g.mat() == CMat::identity(m, m) {
        return Ok(PsiRecord {
            value: 0.0,
            error: 0.0,
            converged: true,
            s: AlgebraElement::zero(m, Parity::SkewHermitian),
            k: GroupElement::identity(m),
        });
    }
    let (k, s) = cartan_decompose(g)?;
    let q = psi_hermitian(target, x, s.mat(), quad_tol)?;
    Ok(PsiRecord {
        value: q.value,
        error: q.error,
        converged: q.converged,
        s: AlgebraElement::from_weight_operator(s.mat())?,
        k,
    })
}

/// `|Psi(x, g) + Psi(gx, h) - Psi(x, hg)|`.
pub fn psi_cocycle_check(
    target: &Target,
    x: &TargetPoint,
    g: &GroupElement,
    h: &GroupElement,
    quad_tol: f64,
) -> Result<f64, KempfError> {
    let gx = target.act(g, x)?;
    let a = psi(target, x, g, quad_tol)?.value;
    let b = psi(target, &gx, h, quad_tol)?.value;
    let c = psi(target, x, &h.mul(g), quad_tol)?.value;
    Ok((a + b - c).abs())
}

/// Hermitian operator `C = i c` of a central element, projected onto `ik`.
pub fn central_operator(target: &Target, c: &AlgebraElement) -> Result<CMat, KempfError> {
    let m = target.ambient_dim();
    if c.dim() != m {
        return Err(TargetError::DimensionMismatch { expected: m, found: c.dim() }.into());
    }
    let h = c.weight_operator()?;
    let scale = c.norm().max(1.0);
    let worst = target
        .anchor()
        .basis()
        .iter()
        .map(|b| (c.mat() * b.mat() - b.mat() * c.mat()).norm())
        .fold(0.0, f64::max);
    if worst > 1e-12 * scale {
        return Err(KempfError::NotCentral(worst));
    }
    Ok(target.anchor().project_hermitian(&h))
}

/// The central element `-i level I`, whose weight operator is `level * I`.
pub fn central_level(m: usize, level: f64) -> AlgebraElement {
    AlgebraElement::skew_diag(&vec![-level; m])
}

/// `mu - c` as a Hermitian operator in `ik`.
pub fn shifted_moment(target: &Target, x: &TargetPoint, central: &CMat) -> CMat {
    target.anchor().project_hermitian(&(target.moment_hermitian(x) - central))
}

/// Closed-form maximal weight of `mu - c` along the Hermitian direction `h`.
pub fn shifted_maximal_weight(
    target: &Target,
    x: &TargetPoint,
    h: &CMat,
    central: &CMat,
) -> Result<ExtendedWeight, KempfError> {
    let w = target.maximal_weight_hermitian(x, h)?;
    Ok(w.shifted(-(central * h).trace().re))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOpts {
    pub step: f64,
    pub max_step: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub divergence_budget: f64,
    pub quad_tol: f64,
}

impl Default for MinimizeOpts {
    fn default() -> Self {
        Self { step: 0.5, max_step: 64.0, max_iter: 5000, tol: 1e-8, divergence_budget: 50.0, quad_tol: DEFAULT_QUAD_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    DivergenceWitness,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    pub psi_value: f64,
    pub length_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub status: FlowStatus,
    pub g: GroupElement,
    pub point: TargetPoint,
    /// `|mu(gx) - c|`.
    pub residual: f64,
    /// Unit-norm direction when `status` is `DivergenceWitness`.
    pub witness: Option<AlgebraElement>,
    pub iterations: usize,
    /// `Psi^{mu - c}(x, g)` accumulated along the run.
    pub psi: f64,
    pub length_log: f64,
    pub trace: Vec<TraceRow>,
    /// Dimension of the infinitesimal stabilizer beyond the ineffective part,
    /// evaluated at a converged point.
    pub stabilizer_dim: Option<usize>,
    pub diagnostics: Vec<String>,
}

/// Descend `Psi^{mu - c}` by the moment-map flow from `x`.
pub fn minimize_psi(
    target: &Target,
    x: &TargetPoint,
    c: &AlgebraElement,
    opts: &MinimizeOpts,
) -> Result<FlowResult, KempfError> {
    let central = central_operator(target, c)?;
    let anchor = target.anchor();
    let m = target.ambient_dim();
    let torus = anchor.is_torus();

    let mut y = target.point(x.frame().clone())?;
    let mut g = CMat::identity(m, m);
    let mut log_sum = CMat::zeros(m, m);
    let mut psi_total = 0.0;
    let mut eta = opts.step;
    let mut r_op = shifted_moment(target, &y, &central);
    let mut r = r_op.norm();
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut last_dpsi = f64::NEG_INFINITY;
    let mut fallback_noted = false;

    let finish = |status, g: CMat, y: TargetPoint, r, witness, iters, psi, len, trace, mut diagnostics: Vec<String>| {
        let stabilizer_dim = if status == FlowStatus::Converged {
            let d = stabilizer_dimension(target, &y);
            if d > 0 {
                diagnostics.push("non-simple stabilizer detected".to_string());
            }
            Some(d)
        } else {
            None
        };
        FlowResult {
            status,
            g: GroupElement::new(g).unwrap_or_else(|_| GroupElement::identity(m)),
            point: y,
            residual: r,
            witness,
            iterations: iters,
            psi,
            length_log: len,
            trace,
            stabilizer_dim,
            diagnostics,
        }
    };

    for iter in 0..=opts.max_iter {
        let (len, exact_log) = accumulated_length(&g, &log_sum, torus);
        if !exact_log && !fallback_noted {
            diagnostics.push("length_log taken from the accumulated generator sum".to_string());
            fallback_noted = true;
        }
        trace.push(TraceRow { iter, residual: r, psi_value: psi_total, length_log: len });
        if r < opts.tol {
            return Ok(finish(FlowStatus::Converged, g, y, r, None, iter, psi_total, len, trace, diagnostics));
        }
        if len > opts.divergence_budget && last_dpsi < 0.0 {
            let log = if torus || !exact_log { log_sum.clone() } else { hermitian_log(&g)? };
            let n = log.norm();
            let witness = AlgebraElement::from_weight_operator(&(log / C64::new(n, 0.0)))?;
            return Ok(finish(
                FlowStatus::DivergenceWitness,
                g,
                y,
                r,
                Some(witness),
                iter,
                psi_total,
                len,
                trace,
                diagnostics,
            ));
        }
        if iter == opts.max_iter {
            break;
        }
        let (step, y_new, r_new_op, r_new) = loop {
            let s = &r_op * C64::new(-eta, 0.0);
            let y_new = target.flow_hermitian(&y, &s, 1.0)?;
            let r_new_op = shifted_moment(target, &y_new, &central);
            let r_new = r_new_op.norm();
            if r_new <= r * (1.0 + 1e-12) + 1e-15 {
                break (s, y_new, r_new_op, r_new);
            }
            eta *= 0.5;
            if eta < 1e-14 {
                diagnostics.push("step size underflow".to_string());
                return Ok(finish(FlowStatus::MaxIter, g, y, r, None, iter, psi_total, len, trace, diagnostics));
            }
        };
        let dpsi = psi_hermitian(target, &y, &step, opts.quad_tol)?.value - (&central * &step).trace().re;
        psi_total += dpsi;
        last_dpsi = dpsi;
        g = crate::liecore::exp_hermitian(&step, 1.0) * g;
        log_sum += &step;
        y = y_new;
        r_op = r_new_op;
        r = r_new;
        eta = (eta * 1.5).min(opts.max_step);
    }
    let (len, _) = accumulated_length(&g, &log_sum, torus);
    diagnostics.push(format!("iteration limit {} reached", opts.max_iter));
    Ok(finish(FlowStatus::MaxIter, g, y, r, None, opts.max_iter, psi_total, len, trace, diagnostics))
}

/// `(|g|_log, exact)`. For ill-conditioned `g` acting through a non-abelian
/// group the generator sum is used instead and `exact` is false.
fn accumulated_length(g: &CMat, log_sum: &CMat, torus: bool) -> (f64, bool) {
    if torus {
        return (log_sum.norm(), true);
    }
    let sv = g.clone().svd(false, false).singular_values;
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if lo > 0.0 && hi / lo < 1e10 {
        (sv.iter().map(|s| s.ln().powi(2)).sum::<f64>().sqrt(), true)
    } else {
        (log_sum.norm(), false)
    }
}

fn hermitian_log(g: &CMat) -> Result<CMat, KempfError> {
    let g = GroupElement::new(g.clone())?;
    let (_, s) = cartan_decompose(&g)?;
    Ok(s.into_mat())
}

/// Real dimension of `{H in ik : H acts trivially at y to first order}`
/// minus the part acting trivially everywhere.
pub fn stabilizer_dimension(target: &Target, y: &TargetPoint) -> usize {
    let basis = target.anchor().basis();
    let f = y.frame();
    let m = target.ambient_dim();
    let comps = target.components();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in &basis {
        let h = b.mat() * C64::i();
        let mut v = Vec::new();
        let mut push = |mat: CMat| {
            for z in mat.iter() {
                v.push(z.re);
                v.push(z.im);
            }
        };
        if comps.is_empty() {
            push(&h * f);
        } else {
            for &(r, _) in &comps {
                let yk = f.columns(0, r).into_owned();
                let p = &yk * yk.adjoint();
                push((CMat::identity(m, m) - p) * &h * &yk);
            }
        }
        cols.push(v);
    }
    let rows = cols[0].len();
    let a = DMatrix::<f64>::from_fn(rows, cols.len(), |i, j| cols[j][i]);
    let sv = a.svd(false, false).singular_values;
    let scale = sv.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let rank = sv.iter().filter(|&&s| s > 1e-8 * scale).count();
    let kernel = basis.len() - rank;
    let ident = CMat::identity(m, m);
    let ineffective = usize::from(!comps.is_empty() && target.anchor().contains_hermitian(&ident, 1e-10));
    kernel.saturating_sub(ineffective)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StabilityVerdict {
    Stable { minimizer: FlowResult },
    Unstable { s: AlgebraElement, weight: ExtendedWeight },
    Inconclusive { diagnostics: Vec<String> },
}

impl StabilityVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            StabilityVerdict::Stable { .. } => "stable",
            StabilityVerdict::Unstable { .. } => "unstable",
            StabilityVerdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Closed-form screen over directions adapted to `x`, then a flow probe.
pub fn stability_test(
    target: &Target,
    x: &TargetPoint,
    c: &AlgebraElement,
    opts: &MinimizeOpts,
) -> Result<StabilityVerdict, KempfError> {
    let central = central_operator(target, c)?;
    for h in screen_directions(target, x, &central) {
        let w = shifted_maximal_weight(target, x, &h, &central)?;
        if !w.is_infinite() && w.value() <= 1e-12 {
            return Ok(StabilityVerdict::Unstable { s: AlgebraElement::from_weight_operator(&h)?, weight: w });
        }
    }
    let run = minimize_psi(target, x, c, opts)?;
    match run.status {
        FlowStatus::Converged => Ok(StabilityVerdict::Stable { minimizer: run }),
        FlowStatus::DivergenceWitness => {
            let s = run.witness.clone().expect("witness present on divergence");
            let h = s.weight_operator()?;
            let w = shifted_maximal_weight(target, x, &h, &central)?;
            if !w.is_infinite() && w.value() <= 1e-9 {
                Ok(StabilityVerdict::Unstable { s, weight: w })
            } else {
                let mut d = run.diagnostics;
                d.push(format!("flow diverged but the witness has weight {:?}", w));
                Ok(StabilityVerdict::Inconclusive { diagnostics: d })
            }
        }
        FlowStatus::MaxIter => Ok(StabilityVerdict::Inconclusive { diagnostics: run.diagnostics }),
    }
}

/// Unit Hermitian directions in `ik` tried by the closed-form screen.
fn screen_directions(target: &Target, x: &TargetPoint, central: &CMat) -> Vec<CMat> {
    let anchor = target.anchor();
    let m = target.ambient_dim();
    let mut out = vec![-shifted_moment(target, x, central)];
    if anchor.is_torus() {
        for b in anchor.basis() {
            let h = b.mat() * C64::i();
            out.push(-&h);
            out.push(h);
        }
    }
    let f = x.frame();
    for (r, _) in target.components() {
        let yk = f.columns(0, r).into_owned();
        let p = &yk * yk.adjoint();
        let support: Vec<f64> = (0..m).map(|i| if p[(i, i)].re > 1e-10 { 1.0 } else { 0.0 }).collect();
        out.push(-anchor.project_hermitian(&crate::liecore::real_diag(&support)));
        out.push(-anchor.project_hermitian(&p));
    }
    out.into_iter()
        .filter_map(|h| {
            let n = h.norm();
            (n > 1e-12).then(|| h / C64::new(n, 0.0))
        })
        .collect()
}

/// Ambient chordal distance: `|P_x - P_y|_F / sqrt 2` summed in quadrature
/// over flag components, Euclidean for linear targets.
pub fn point_distance(target: &Target, x: &TargetPoint, y: &TargetPoint) -> Result<f64, KempfError> {
    let m = target.ambient_dim();
    let ones = vec![C64::new(1.0, 0.0); m];
    check_pair(target, x, y)?;
    Ok(aligned_distance(target, x, y, &ones))
}

fn check_pair(target: &Target, x: &TargetPoint, y: &TargetPoint) -> Result<(), KempfError> {
    let probe = GroupElement::identity(target.ambient_dim());
    target.act(&probe, x)?;
    target.act(&probe, y)?;
    Ok(())
}

fn aligned_distance(target: &Target, x: &TargetPoint, y: &TargetPoint, phases: &[C64]) -> f64 {
    let d = CMat::from_diagonal(&nalgebra::DVector::from_column_slice(phases));
    let fx = &d * x.frame();
    let fy = y.frame();
    let comps = target.components();
    if comps.is_empty() {
        return (fx - fy).norm();
    }
    let mut acc = 0.0;
    for (r, _) in comps {
        let a = fx.columns(0, r).into_owned();
        let b = fy.columns(0, r).into_owned();
        let pa = &a * a.adjoint() * C64::new(1.0 / a.norm_squared() * r as f64, 0.0);
        let pb = &b * b.adjoint() * C64::new(1.0 / b.norm_squared() * r as f64, 0.0);
        acc += 0.5 * (pa - pb).norm_squared();
    }
    acc.sqrt()
}

/// `min_k d(kx, y)` over the compact acting group.
///
/// Unitary anchors act transitively on the homogeneous targets, so the
/// distance there is zero. Tori containing the traceless torus are handled
/// by phase synchronization; other tori are unsupported.
pub fn korbit_distance(target: &Target, x: &TargetPoint, y: &TargetPoint) -> Result<f64, KempfError> {
    check_pair(target, x, y)?;
    let anchor = target.anchor();
    let m = target.ambient_dim();
    let linear = matches!(target.kind(), TargetKind::Linear);
    if !anchor.is_torus() {
        return Ok(if linear { (x.frame().norm() - y.frame().norm()).abs() } else { 0.0 });
    }
    if linear {
        if anchor.algebra_dim() < m {
            return Err(KempfError::Unsupported("linear target under a non-maximal torus".into()));
        }
        let d: f64 = (0..m).map(|i| (x.frame()[(i, 0)].norm() - y.frame()[(i, 0)].norm()).powi(2)).sum();
        return Ok(d.sqrt());
    }
    if !anchor.contains_traceless_torus() {
        return Err(KempfError::Unsupported("torus without the traceless directions".into()));
    }
    // maximize d^* M d over unit-modulus d, M_ij = sum_k (P_Y)_ij (P_X)_ji
    let mut mm = CMat::zeros(m, m);
    for (r, _) in target.components() {
        let a = x.frame().columns(0, r).into_owned();
        let b = y.frame().columns(0, r).into_owned();
        let px = &a * a.adjoint();
        let py = &b * b.adjoint();
        mm += py.component_mul(&px.transpose());
    }
    let (_, u) = crate::liecore::hermitian_eig(&mm);
    let top: Vec<C64> = (0..m).map(|i| u[(i, m - 1)]).collect();
    let starts = [unit_phases(&top), vec![C64::new(1.0, 0.0); m]];
    let mut best = f64::INFINITY;
    for start in starts {
        let d = phase_sync(&mm, start);
        best = best.min(aligned_distance(target, x, y, &d));
    }
    Ok(best)
}

fn unit_phases(v: &[C64]) -> Vec<C64> {
    v.iter().map(|z| if z.norm() > 1e-300 { z / z.norm() } else { C64::new(1.0, 0.0) }).collect()
}

fn phase_sync(mm: &CMat, mut d: Vec<C64>) -> Vec<C64> {
    let objective = |d: &[C64]| {
        let v = nalgebra::DVector::from_column_slice(d);
        (v.adjoint() * mm * &v)[(0, 0)].re
    };
    let mut f = objective(&d);
    for _ in 0..2000 {
        let v = nalgebra::DVector::from_column_slice(&d);
        let w = mm * v;
        let next: Vec<C64> = w.iter().zip(&d).map(|(z, old)| if z.norm() > 1e-300 { z / z.norm() } else { *old }).collect();
        let f_next = objective(&next);
        let moved: f64 = next.iter().zip(&d).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        d = next;
        if moved < 1e-15 || f_next <= f {
            break;
        }
        f = f_next;
    }
    d
}

/// Writes a flow trace as CSV with columns `iter,residual,psi_value,length_log`.
pub fn write_trace_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

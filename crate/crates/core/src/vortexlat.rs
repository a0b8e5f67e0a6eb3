//! Abelian vortex equations on a lattice discretization of a flat square
//! torus, the Yang–Mills–Higgs functional and its Bogomolny-type
//! decomposition.
//!
//! # Conventions
//!
//! Sites are `(i, j)` with `i` along `x`; fields are stored at index
//! `i * N + j`. Covariant differences use `D = d - iA`,
//!
//! ```text
//! D_x phi(i, j) = (exp(-i theta_x(i, j)) phi(i + 1, j) - phi(i, j)) / h
//! ```
//!
//! with link angles `theta_x = h a_x` and `theta_y = h a_y + h^2 B0 i`, where
//! `B0 = 2 pi d / L^2` is a constant background field. Crossing `x = L`
//! applies the transition `phi(N, j) = exp(i 2 pi d j / N) phi(0, j)`; the
//! `y` direction is periodic. The perturbation `a` is periodic, so the total
//! flux is exactly `2 pi d`.
//!
//! The moment map of the linear fiber enters as the scalar `m = |phi|^2 / 2`
//! averaged over the four corners of a plaquette, and the equations are
//! `F + m - c = 0` on plaquettes and `dbar_A phi = 0` on sites, with
//! `dbar = (D_x + i D_y) / sqrt 2` and `del = (D_x - i D_y) / sqrt 2`.

use std::f64::consts::{PI, SQRT_2};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liecore::C64;

/// Lattice `c` per filtration-unit `c`: `c_lattice = DEGREE_UNIT * c_filt / area`.
pub const DEGREE_UNIT: f64 = 2.0 * PI;

pub fn filt_to_lattice_c(c_filt: f64, area: f64) -> f64 {
    DEGREE_UNIT * c_filt / area
}

pub fn lattice_to_filt_c(c: f64, area: f64) -> f64 {
    c * area / DEGREE_UNIT
}

#[derive(Debug, Error)]
pub enum VortexError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("field size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed state dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusLattice {
    pub n: usize,
    pub l: f64,
}

impl TorusLattice {
    pub fn new(n: usize, l: f64) -> Result<Self, VortexError> {
        if n < 8 {
            return Err(VortexError::InvalidLattice(format!("need N >= 8, got {n}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(VortexError::InvalidLattice(format!("side length {l}")));
        }
        Ok(Self { n, l })
    }

    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn area(&self) -> f64 {
        self.l * self.l
    }

    pub fn sites(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Background field `2 pi d / area`.
    pub fn background(&self, d: i64) -> f64 {
        2.0 * PI * d as f64 / self.area()
    }

    /// Transition phase `2 pi d j / N` across `x = L`.
    pub fn chi(&self, d: i64, j: usize) -> f64 {
        2.0 * PI * d as f64 * j as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct U1Connection {
    pub d: i64,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
}

impl U1Connection {
    pub fn background(lat: &TorusLattice, d: i64) -> Self {
        Self { d, ax: vec![0.0; lat.sites()], ay: vec![0.0; lat.sites()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub phi: Vec<C64>,
}

impl Section {
    pub fn zero(lat: &TorusLattice) -> Self {
        Self { phi: vec![C64::new(0.0, 0.0); lat.sites()] }
    }

    pub fn constant(lat: &TorusLattice, value: C64) -> Self {
        Self { phi: vec![value; lat.sites()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub lattice: TorusLattice,
    pub conn: U1Connection,
    pub section: Section,
}

fn check(lat: &TorusLattice, conn: &U1Connection, phi: Option<&Section>) -> Result<(), VortexError> {
    let n = lat.sites();
    for len in [conn.ax.len(), conn.ay.len()].into_iter().chain(phi.map(|p| p.phi.len())) {
        if len != n {
            return Err(VortexError::SizeMismatch { expected: n, found: len });
        }
    }
    Ok(())
}

/// Neighbour lookups with the transition function applied.
struct Stencil<'a> {
    lat: &'a TorusLattice,
    conn: &'a U1Connection,
    phi: &'a [C64],
    b0: f64,
}

impl<'a> Stencil<'a> {
    fn new(lat: &'a TorusLattice, conn: &'a U1Connection, phi: &'a [C64]) -> Self {
        Self { lat, conn, phi, b0: lat.background(conn.d) }
    }

    fn theta_x(&self, i: usize, j: usize) -> f64 {
        self.lat.h() * self.conn.ax[self.lat.idx(i, j)]
    }

    fn theta_y(&self, i: usize, j: usize) -> f64 {
        let h = self.lat.h();
        h * self.conn.ay[self.lat.idx(i, j)] + h * h * self.b0 * i as f64
    }

    /// `phi(i + 1, j)` in the chart of `(i, j)`.
    fn fwd_x(&self, i: usize, j: usize) -> C64 {
        let n = self.lat.n;
        if i + 1 == n {
            C64::from_polar(1.0, self.lat.chi(self.conn.d, j)) * self.phi[self.lat.idx(0, j)]
        } else {
            self.phi[self.lat.idx(i + 1, j)]
        }
    }

    fn fwd_y(&self, i: usize, j: usize) -> C64 {
        self.phi[self.lat.idx(i, (j + 1) % self.lat.n)]
    }

    fn back_x(&self, i: usize, j: usize) -> C64 {
        let n = self.lat.n;
        if i == 0 {
            C64::from_polar(1.0, -self.lat.chi(self.conn.d, j)) * self.phi[self.lat.idx(n - 1, j)]
        } else {
            self.phi[self.lat.idx(i - 1, j)]
        }
    }

    fn back_y(&self, i: usize, j: usize) -> C64 {
        let n = self.lat.n;
        self.phi[self.lat.idx(i, (j + n - 1) % n)]
    }

    fn dx_fwd(&self, i: usize, j: usize) -> C64 {
        (C64::from_polar(1.0, -self.theta_x(i, j)) * self.fwd_x(i, j) - self.phi[self.lat.idx(i, j)]) / self.lat.h()
    }

    fn dy_fwd(&self, i: usize, j: usize) -> C64 {
        (C64::from_polar(1.0, -self.theta_y(i, j)) * self.fwd_y(i, j) - self.phi[self.lat.idx(i, j)]) / self.lat.h()
    }

    fn dx_back(&self, i: usize, j: usize) -> C64 {
        let n = self.lat.n;
        let th = self.theta_x((i + n - 1) % n, j);
        (self.phi[self.lat.idx(i, j)] - C64::from_polar(1.0, th) * self.back_x(i, j)) / self.lat.h()
    }

    fn dy_back(&self, i: usize, j: usize) -> C64 {
        let n = self.lat.n;
        let th = self.theta_y(i, (j + n - 1) % n);
        (self.phi[self.lat.idx(i, j)] - C64::from_polar(1.0, th) * self.back_y(i, j)) / self.lat.h()
    }
}

/// Plaquette curvature `B0 + curl a` (forward differences).
pub fn curvature(lat: &TorusLattice, conn: &U1Connection) -> Vec<f64> {
    let n = lat.n;
    let h = lat.h();
    let b0 = lat.background(conn.d);
    let mut f = vec![0.0; lat.sites()];
    for i in 0..n {
        for j in 0..n {
            let ip = (i + 1) % n;
            let jp = (j + 1) % n;
            let curl = (conn.ay[lat.idx(ip, j)] - conn.ay[lat.idx(i, j)]) - (conn.ax[lat.idx(i, jp)] - conn.ax[lat.idx(i, j)]);
            f[lat.idx(i, j)] = b0 + curl / h;
        }
    }
    f
}

/// `sum_p F_p h^2`.
pub fn topological_charge(lat: &TorusLattice, conn: &U1Connection) -> f64 {
    let h2 = lat.h() * lat.h();
    curvature(lat, conn).iter().sum::<f64>() * h2
}

/// Plaquette average of `|phi|^2 / 2` over the four corners.
pub fn plaquette_moment(lat: &TorusLattice, phi: &Section) -> Vec<f64> {
    let n = lat.n;
    let mut m = vec![0.0; lat.sites()];
    for i in 0..n {
        for j in 0..n {
            let ip = (i + 1) % n;
            let jp = (j + 1) % n;
            let s = phi.phi[lat.idx(i, j)].norm_sqr()
                + phi.phi[lat.idx(ip, j)].norm_sqr()
                + phi.phi[lat.idx(i, jp)].norm_sqr()
                + phi.phi[lat.idx(ip, jp)].norm_sqr();
            m[lat.idx(i, j)] = s / 8.0;
        }
    }
    m
}

/// Forward covariant differences `(D_x phi, D_y phi)` on links.
pub fn d_a(lat: &TorusLattice, conn: &U1Connection, phi: &Section) -> Result<(Vec<C64>, Vec<C64>), VortexError> {
    check(lat, conn, Some(phi))?;
    let st = Stencil::new(lat, conn, &phi.phi);
    let n = lat.n;
    let mut dx = Vec::with_capacity(lat.sites());
    let mut dy = Vec::with_capacity(lat.sites());
    for i in 0..n {
        for j in 0..n {
            dx.push(st.dx_fwd(i, j));
            dy.push(st.dy_fwd(i, j));
        }
    }
    Ok((dx, dy))
}

/// Pointwise split of the forward differences into `(del, dbar)`, so that
/// `|del|^2 + |dbar|^2 = |D_x|^2 + |D_y|^2` at every site.
pub fn split_d_a(lat: &TorusLattice, conn: &U1Connection, phi: &Section) -> Result<(Vec<C64>, Vec<C64>), VortexError> {
    let (dx, dy) = d_a(lat, conn, phi)?;
    let i = C64::i();
    let del = dx.iter().zip(&dy).map(|(u, v)| (u - i * v) / SQRT_2).collect();
    let dbar = dx.iter().zip(&dy).map(|(u, v)| (u + i * v) / SQRT_2).collect();
    Ok((del, dbar))
}

/// `(|del|^2, |dbar|^2)` integrated with the four one-sided stencils at each
/// site averaged; the sum of the two equals the forward-link kinetic term.
fn symmetric_split_norms(lat: &TorusLattice, conn: &U1Connection, phi: &Section) -> (f64, f64) {
    let st = Stencil::new(lat, conn, &phi.phi);
    let n = lat.n;
    let h2 = lat.h() * lat.h();
    let i_unit = C64::i();
    let (mut del, mut dbar) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let xs = [st.dx_fwd(i, j), st.dx_back(i, j)];
            let ys = [st.dy_fwd(i, j), st.dy_back(i, j)];
            for u in xs {
                for v in ys {
                    del += (u - i_unit * v).norm_sqr() / 2.0;
                    dbar += (u + i_unit * v).norm_sqr() / 2.0;
                }
            }
        }
    }
    (del * h2 / 4.0, dbar * h2 / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YmhBreakdown {
    /// `curvature_term + kinetic_term + potential_term`.
    pub total: f64,
    /// `|F|^2`.
    pub curvature_term: f64,
    /// `|d_A phi|^2` over links.
    pub kinetic_term: f64,
    /// `|c - m|^2`.
    pub potential_term: f64,
    /// `|F + m - c|^2`.
    pub residual_term: f64,
    /// `|dbar_A phi|^2` (four-stencil average).
    pub dbar_term: f64,
    /// `2 c int F`.
    pub topological_term: f64,
}

pub fn ymh(lat: &TorusLattice, conn: &U1Connection, phi: &Section, c: f64) -> Result<YmhBreakdown, VortexError> {
    check(lat, conn, Some(phi))?;
    let h2 = lat.h() * lat.h();
    let f = curvature(lat, conn);
    let m = plaquette_moment(lat, phi);
    let (dx, dy) = d_a(lat, conn, phi)?;
    let curvature_term = f.iter().map(|x| x * x).sum::<f64>() * h2;
    let kinetic_term = dx.iter().chain(&dy).map(|z| z.norm_sqr()).sum::<f64>() * h2;
    let potential_term = m.iter().map(|x| (c - x).powi(2)).sum::<f64>() * h2;
    let residual_term = f.iter().zip(&m).map(|(a, b)| (a + b - c).powi(2)).sum::<f64>() * h2;
    let (_, dbar_term) = symmetric_split_norms(lat, conn, phi);
    let topological_term = 2.0 * c * f.iter().sum::<f64>() * h2;
    Ok(YmhBreakdown {
        total: curvature_term + kinetic_term + potential_term,
        curvature_term,
        kinetic_term,
        potential_term,
        residual_term,
        dbar_term,
        topological_term,
    })
}

/// `|YMH - (|F + m - c|^2 + 2 |dbar phi|^2 + 2 c int F + 2 T)|` where the
/// coupling integral `T` of a linear fiber vanishes identically. The
/// residual measures the discrete integration by parts
/// `|del phi|^2 - |dbar phi|^2 = int F |phi|^2`.
pub fn decomposition_check(lat: &TorusLattice, conn: &U1Connection, phi: &Section, c: f64) -> Result<f64, VortexError> {
    let b = ymh(lat, conn, phi, c)?;
    let rhs = b.residual_term + 2.0 * b.dbar_term + b.topological_term;
    Ok((b.total - rhs).abs())
}

/// The coupling integral evaluated through the split differences,
/// `(|del|^2 - |dbar|^2) / 2 - int F m`; zero in the continuum.
pub fn coupling_integral(lat: &TorusLattice, conn: &U1Connection, phi: &Section) -> Result<f64, VortexError> {
    check(lat, conn, Some(phi))?;
    let (del, dbar) = symmetric_split_norms(lat, conn, phi);
    let h2 = lat.h() * lat.h();
    let f = curvature(lat, conn);
    let m = plaquette_moment(lat, phi);
    let fm: f64 = f.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>() * h2;
    Ok(0.5 * (del - dbar) - fm)
}

/// Applies the gauge transformation `phi -> exp(i alpha) phi`,
/// `a -> a + grad alpha` for a periodic site function `alpha`.
pub fn gauge_transform(lat: &TorusLattice, conn: &U1Connection, phi: &Section, alpha: &[f64]) -> (U1Connection, Section) {
    let n = lat.n;
    let h = lat.h();
    let mut out = conn.clone();
    let mut psi = phi.clone();
    for i in 0..n {
        for j in 0..n {
            let k = lat.idx(i, j);
            out.ax[k] += (alpha[lat.idx((i + 1) % n, j)] - alpha[k]) / h;
            out.ay[k] += (alpha[lat.idx(i, (j + 1) % n)] - alpha[k]) / h;
            psi.phi[k] *= C64::from_polar(1.0, alpha[k]);
        }
    }
    (out, psi)
}

/// Smooth degree-`d` section `sum_n exp(i 2 pi d n y / L) exp(-B0 (x - nL)^2 / 2)`,
/// holomorphic for the background connection in the continuum (for `d = 0`
/// the constant section).
pub fn theta_section(lat: &TorusLattice, d: i64) -> Section {
    let n = lat.n;
    let h = lat.h();
    let l = lat.l;
    if d == 0 {
        return Section::constant(lat, C64::new(1.0, 0.0));
    }
    let b0 = lat.background(d);
    let reach = (6.0 / (b0.abs().sqrt() * l)).ceil() as i64 + 2;
    let mut phi = Vec::with_capacity(lat.sites());
    for i in 0..n {
        for j in 0..n {
            let x = i as f64 * h;
            let y = j as f64 * h;
            let mut acc = C64::new(0.0, 0.0);
            for k in -reach..=reach {
                let xs = x - k as f64 * l;
                let phase = 2.0 * PI * d as f64 * k as f64 * y / l;
                acc += C64::from_polar((-0.5 * b0 * xs * xs).exp(), phase);
            }
            phi.push(acc);
        }
    }
    Section { phi }
}

/// Sample a smooth periodic one-form at link midpoints.
pub fn sample_connection(lat: &TorusLattice, d: i64, fx: impl Fn(f64, f64) -> f64, fy: impl Fn(f64, f64) -> f64) -> U1Connection {
    let n = lat.n;
    let h = lat.h();
    let mut conn = U1Connection::background(lat, d);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let k = lat.idx(i, j);
            conn.ax[k] = fx(x + 0.5 * h, y);
            conn.ay[k] = fy(x, y + 0.5 * h);
        }
    }
    conn
}

/// Fixed smooth test data: a sheared theta section and a periodic
/// perturbation of the background connection.
pub fn smooth_state(lat: &TorusLattice, d: i64) -> LatticeState {
    let l = lat.l;
    let w = 2.0 * PI / l;
    let conn = sample_connection(
        lat,
        d,
        |x, y| 0.3 * (w * y).sin() + 0.1 * (w * x).cos() * (w * y).cos(),
        |x, y| -0.2 * (w * x).cos() + 0.15 * (w * (x + y)).sin(),
    );
    let mut section = theta_section(lat, d);
    for (k, z) in section.phi.iter_mut().enumerate() {
        let i = k / lat.n;
        let j = k % lat.n;
        let (x, y) = (i as f64 * lat.h(), j as f64 * lat.h());
        *z *= C64::new(1.0 + 0.2 * (w * y).cos(), 0.1 * (w * x).sin());
    }
    LatticeState { lattice: *lat, conn, section }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOpts {
    pub tol: f64,
    pub max_iter: usize,
    /// Force `phi = 0`.
    pub zero_section: bool,
    pub record_every: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200_000, zero_section: false, record_every: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub equation_residual: f64,
    pub dbar_residual: f64,
    pub charge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `max |F + m - c|`.
    pub equation: f64,
    /// `max |dbar_A phi|` (forward stencil).
    pub dbar: f64,
    pub objective: f64,
    /// `max |charge - 2 pi d|` over all iterates.
    pub charge_drift: f64,
    pub iterations: usize,
    /// Descent stopped at a stationary point above tolerance.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Solution { state: LatticeState, residuals: Residuals, trace: Vec<SolveTraceRow> },
    NoSolution { reason: String, bound: f64 },
    MaxIter { state: LatticeState, residuals: Residuals, trace: Vec<SolveTraceRow> },
}

impl SolveOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            SolveOutcome::Solution { .. } => "solution",
            SolveOutcome::NoSolution { .. } => "no_solution",
            SolveOutcome::MaxIter { .. } => "max_iter",
        }
    }
}

/// `c * area - 2 pi d`, which equals `int m >= 0` on any solution.
pub fn mean_constraint_bound(lat: &TorusLattice, d: i64, c: f64) -> f64 {
    c * lat.area() - 2.0 * PI * d as f64
}

/// The same bound evaluated on a lattice state: `c * area - int F`.
pub fn lattice_bogomolov(state: &LatticeState, c: f64) -> f64 {
    c * state.lattice.area() - topological_charge(&state.lattice, &state.conn)
}

fn screen_tol(lat: &TorusLattice, d: i64, c: f64) -> f64 {
    1e-12 * (c.abs() * lat.area()).max(2.0 * PI * d.unsigned_abs() as f64).max(1.0)
}

/// Solve `F + m = c`, `dbar_A phi = 0` on the lattice.
pub fn solve(lat: &TorusLattice, d: i64, c: f64, opts: &SolveOpts) -> SolveOutcome {
    let bound = mean_constraint_bound(lat, d, c);
    let tol = screen_tol(lat, d, c);
    let zero_state = || LatticeState { lattice: *lat, conn: U1Connection::background(lat, d), section: Section::zero(lat) };
    if bound.abs() <= tol {
        let state = zero_state();
        let residuals = residuals_of(&state, c, 0.0, 0);
        return SolveOutcome::Solution { state, residuals, trace: Vec::new() };
    }
    if opts.zero_section {
        return SolveOutcome::NoSolution {
            reason: "zero section requires c = 2 pi d / area".into(),
            bound,
        };
    }
    if bound < 0.0 {
        return SolveOutcome::NoSolution { reason: "degree bound".into(), bound };
    }
    if d < 0 {
        return SolveOutcome::NoSolution { reason: "negative degree".into(), bound };
    }

    // initial guess: holomorphic section scaled to satisfy the mean constraint
    let mut section = theta_section(lat, d);
    let h2 = lat.h() * lat.h();
    let mass: f64 = plaquette_moment(lat, &section).iter().sum::<f64>() * h2;
    let scale = (bound / mass).sqrt();
    section.phi.iter_mut().for_each(|z| *z *= scale);
    let start = LatticeState { lattice: *lat, conn: U1Connection::background(lat, d), section };
    descend(start, c, opts)
}

fn pack(state: &LatticeState) -> Vec<f64> {
    let s = &state.section.phi;
    let mut v = Vec::with_capacity(4 * s.len());
    v.extend_from_slice(&state.conn.ax);
    v.extend_from_slice(&state.conn.ay);
    v.extend(s.iter().map(|z| z.re));
    v.extend(s.iter().map(|z| z.im));
    v
}

fn unpack(lat: &TorusLattice, d: i64, v: &[f64]) -> LatticeState {
    let n = lat.sites();
    LatticeState {
        lattice: *lat,
        conn: U1Connection { d, ax: v[..n].to_vec(), ay: v[n..2 * n].to_vec() },
        section: Section { phi: (0..n).map(|k| C64::new(v[2 * n + k], v[3 * n + k])).collect() },
    }
}

/// Solver objective `|F + m - c|^2 + |D_x phi + i D_y phi|^2` (forward
/// stencil) and its gradient in packed coordinates `[a_x, a_y, re phi, im phi]`.
pub fn objective(state: &LatticeState, c: f64) -> (f64, Vec<f64>) {
    let lat = &state.lattice;
    let conn = &state.conn;
    let phi = &state.section.phi;
    let n = lat.n;
    let ns = lat.sites();
    let h = lat.h();
    let h2 = h * h;
    let f = curvature(lat, conn);
    let m = plaquette_moment(lat, &state.section);
    let r: Vec<f64> = f.iter().zip(&m).map(|(a, b)| a + b - c).collect();
    let st = Stencil::new(lat, conn, phi);
    let i_unit = C64::i();

    let mut grad = vec![0.0; 4 * ns];
    let mut gphi = vec![C64::new(0.0, 0.0); ns];
    let mut value = r.iter().map(|x| x * x).sum::<f64>() * h2;

    for i in 0..n {
        for j in 0..n {
            let k = lat.idx(i, j);
            let im = (i + n - 1) % n;
            let jm = (j + n - 1) % n;
            // curvature part
            grad[k] += 2.0 * h * (r[k] - r[lat.idx(i, jm)]);
            grad[ns + k] += 2.0 * h * (r[lat.idx(im, j)] - r[k]);
            // moment part: plaquettes touching site (i, j)
            let rsum = r[k] + r[lat.idx(im, j)] + r[lat.idx(i, jm)] + r[lat.idx(im, jm)];
            gphi[k] += phi[k] * (h2 * rsum / 2.0);
        }
    }

    for i in 0..n {
        for j in 0..n {
            let k = lat.idx(i, j);
            let ex = C64::from_polar(1.0, -st.theta_x(i, j));
            let ey = C64::from_polar(1.0, -st.theta_y(i, j));
            let px = st.fwd_x(i, j);
            let py = st.fwd_y(i, j);
            let w = (ex * px - phi[k] + i_unit * (ey * py - phi[k])) / h;
            value += h2 * w.norm_sqr();
            // d/d a_x and d/d a_y
            grad[k] += 2.0 * h2 * (w.conj() * (-i_unit) * ex * px).re;
            grad[ns + k] += 2.0 * h2 * (w.conj() * ey * py).re;
            // adjoint of the linear map phi -> w
            let coef = 2.0 * h2 / h;
            gphi[k] += w * C64::new(-1.0, 1.0) * coef;
            let (kx, tx) = if i + 1 == n {
                (lat.idx(0, j), C64::from_polar(1.0, lat.chi(conn.d, j)))
            } else {
                (lat.idx(i + 1, j), C64::new(1.0, 0.0))
            };
            gphi[kx] += (ex * tx).conj() * w * coef;
            let ky = lat.idx(i, (j + 1) % n);
            gphi[ky] += (i_unit * ey).conj() * w * coef;
        }
    }
    for k in 0..ns {
        grad[2 * ns + k] = gphi[k].re;
        grad[3 * ns + k] = gphi[k].im;
    }
    (value, grad)
}

fn residuals_of(state: &LatticeState, c: f64, drift: f64, iterations: usize) -> Residuals {
    let lat = &state.lattice;
    let f = curvature(lat, &state.conn);
    let m = plaquette_moment(lat, &state.section);
    let equation = f.iter().zip(&m).map(|(a, b)| (a + b - c).abs()).fold(0.0, f64::max);
    let (_, dbar) = split_d_a(lat, &state.conn, &state.section).expect("state sizes are consistent");
    let dbar = dbar.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let (objective, _) = objective(state, c);
    Residuals { equation, dbar, objective, charge_drift: drift, iterations, stalled: false }
}

const STALL_WINDOW: usize = 500;

/// Nonmonotone Barzilai–Borwein gradient descent on `objective`. Coarse
/// lattices can have a small positive least-squares floor; the descent then
/// stalls and reports `MaxIter` with `stalled` set.
pub fn descend(start: LatticeState, c: f64, opts: &SolveOpts) -> SolveOutcome {
    let lat = start.lattice;
    let d = start.conn.d;
    let target_charge = 2.0 * PI * d as f64;
    let mut x = pack(&start);
    let mut state = start;
    let (mut e, mut g) = objective(&state, c);
    let alpha0 = 1e-3 * lat.h() * lat.h();
    let mut alpha = alpha0;
    let mut history = vec![e; 10];
    let mut trace = Vec::new();
    let mut drift = (topological_charge(&lat, &state.conn) - target_charge).abs();

    let mut flat = 0usize;
    let mut last = 0;
    for iter in 0..=opts.max_iter {
        last = iter;
        let res = residuals_of_fast(&state, c);
        if opts.record_every > 0 && (iter % opts.record_every == 0 || (res.0 < opts.tol && res.1 < opts.tol)) {
            trace.push(SolveTraceRow {
                iter,
                objective: e,
                equation_residual: res.0,
                dbar_residual: res.1,
                charge: topological_charge(&lat, &state.conn),
            });
        }
        if res.0 < opts.tol && res.1 < opts.tol {
            let residuals = residuals_of(&state, c, drift, iter);
            return SolveOutcome::Solution { state, residuals, trace };
        }
        if iter == opts.max_iter || flat >= STALL_WINDOW {
            break;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let reference = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut step = alpha;
        let (x_new, e_new, g_new, state_new) = loop {
            let x_new: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let s_new = unpack(&lat, d, &x_new);
            let (e_new, g_new) = objective(&s_new, c);
            if e_new <= reference - 1e-4 * step * gg || step < 1e-300 {
                break (x_new, e_new, g_new, s_new);
            }
            step *= 0.5;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        alpha = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { alpha0 };
        flat = if e_new >= e * (1.0 - 1e-13) { flat + 1 } else { 0 };
        x = x_new;
        e = e_new;
        g = g_new;
        state = state_new;
        history.remove(0);
        history.push(e);
        drift = drift.max((topological_charge(&lat, &state.conn) - target_charge).abs());
    }
    let mut residuals = residuals_of(&state, c, drift, last);
    residuals.stalled = flat >= STALL_WINDOW;
    SolveOutcome::MaxIter { state, residuals, trace }
}

fn residuals_of_fast(state: &LatticeState, c: f64) -> (f64, f64) {
    let r = residuals_of(state, c, 0.0, 0);
    (r.equation, r.dbar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub n: usize,
    pub l: f64,
    pub d: i64,
    pub field_order: Vec<String>,
    pub layout: String,
    pub dtype: String,
    pub binary: String,
}

/// Writes `<stem>.json` (header) and `<stem>.bin` (little-endian `f64`
/// arrays `a_x, a_y, re phi, im phi`, each row-major with `i` along `x`).
pub fn write_state(stem: &Path, state: &LatticeState) -> Result<(), VortexError> {
    let bin = stem.with_extension("bin");
    let header = DumpHeader {
        n: state.lattice.n,
        l: state.lattice.l,
        d: state.conn.d,
        field_order: ["a_x", "a_y", "re_phi", "im_phi"].iter().map(|s| s.to_string()).collect(),
        layout: "row-major, index i * N + j with i along x".into(),
        dtype: "f64-le".into(),
        binary: bin.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
    };
    let mut w = BufWriter::new(File::create(&bin)?);
    for v in pack(state) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&header)?;
    std::fs::write(stem.with_extension("json"), json + "\n")?;
    Ok(())
}

pub fn read_state(stem: &Path) -> Result<LatticeState, VortexError> {
    let header: DumpHeader = serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
    let lat = TorusLattice::new(header.n, header.l)?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(stem.with_extension("bin"))?).read_to_end(&mut bytes)?;
    let want = 4 * lat.sites() * 8;
    if bytes.len() != want {
        return Err(VortexError::Dump(format!("expected {want} bytes, found {}", bytes.len())));
    }
    let v: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(unpack(&lat, header.d, &v))
}

/// Writes solver traces as CSV.
pub fn write_solve_trace_csv<W: Write>(w: W, rows: &[SolveTraceRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

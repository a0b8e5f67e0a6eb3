//! Exact rational slope-stability arithmetic for filtered bundles over a
//! curve.
//!
//! Degrees are integers in line-bundle units (first Chern numbers); any
//! `2 pi` normalization of the degree is absorbed into the unit. The base
//! curve has unit volume.

use std::cmp::Ordering;

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Q = Rational64;

/// Base volume; every formula below is written for `Vol(X) = 1`.
pub const VOLUME: i64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FiltError {
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("invalid filtration: {0}")]
    InvalidFiltration(String),
    #[error("invalid subobject: {0}")]
    InvalidSubobject(String),
    #[error("invalid parabolic weights: {0}")]
    InvalidWeights(String),
    #[error("only curves are supported (base dimension {0})")]
    NonCurve(u32),
    #[error("search bounds too large: {0}")]
    BoundOverflow(String),
}

/// Rationals as `"p/q"` strings; integers and plain JSON numbers are accepted
/// on input.
pub mod qstr {
    use super::Q;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(q: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(q)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Q::from_integer(n)),
            Raw::Str(s) => s.trim().parse::<Q>().map_err(serde::de::Error::custom),
        }
    }

    pub mod vec {
        use super::Q;
        use serde::ser::SerializeSeq;
        use serde::Serializer;

        pub fn serialize<S: Serializer>(qs: &[Q], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(qs.len()))?;
            for q in qs {
                seq.serialize_element(&q.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<Q>, D::Error> {
            #[derive(serde::Deserialize)]
            struct Wrap(#[serde(with = "super")] Q);
            let v: Vec<Wrap> = serde::Deserialize::deserialize(d)?;
            Ok(v.into_iter().map(|w| w.0).collect())
        }
    }
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleData {
    pub rank: usize,
    pub degree: i64,
    #[serde(default = "one_u32")]
    pub base_dim: u32,
}

impl BundleData {
    pub fn new(rank: usize, degree: i64) -> Self {
        Self { rank, degree, base_dim: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltrationStep {
    pub rank: usize,
    pub degree: i64,
    #[serde(with = "qstr")]
    pub tau: Q,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionFiltration {
    pub steps: Vec<FiltrationStep>,
}

impl SectionFiltration {
    pub fn new(steps: Vec<(usize, i64, Q)>) -> Self {
        Self { steps: steps.into_iter().map(|(rank, degree, tau)| FiltrationStep { rank, degree, tau }).collect() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A proper subobject `V'` described by rank, degree and `rk(V_k ∩ V')`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subobject {
    pub rank: usize,
    pub degree: i64,
    pub meets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicStep {
    pub rank: usize,
    pub degree: i64,
    #[serde(with = "qstr")]
    pub m: Q,
}

/// `chi = z Id + sum_j m_j (pi_{V^j} - R^j / R Id)` for a flag `V^1 ⊂ ... ⊂ V^J`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicWeights {
    #[serde(with = "qstr")]
    pub z: Q,
    pub steps: Vec<ParabolicStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeVerdict {
    StrictPass,
    Equality,
    Violated,
}

fn q(n: i64) -> Q {
    Q::from_integer(n)
}

fn qu(n: usize) -> Q {
    Q::from_integer(n as i64)
}

pub fn validate(bundle: &BundleData, filt: &SectionFiltration) -> Result<(), FiltError> {
    if bundle.rank == 0 {
        return Err(FiltError::InvalidBundle("rank must be positive".into()));
    }
    let mut prev = 0;
    for s in &filt.steps {
        if s.rank <= prev || s.rank >= bundle.rank {
            return Err(FiltError::InvalidFiltration(format!(
                "ranks must increase strictly inside (0, {})",
                bundle.rank
            )));
        }
        if !s.tau.is_positive() {
            return Err(FiltError::InvalidFiltration(format!("tau = {} is not positive", s.tau)));
        }
        prev = s.rank;
    }
    Ok(())
}

pub fn validate_subobject(bundle: &BundleData, filt: &SectionFiltration, sub: &Subobject) -> Result<(), FiltError> {
    let big_r = bundle.rank;
    if sub.rank == 0 || sub.rank >= big_r {
        return Err(FiltError::InvalidSubobject(format!("rank {} outside (0, {big_r})", sub.rank)));
    }
    if sub.meets.len() != filt.len() {
        return Err(FiltError::InvalidSubobject(format!(
            "{} intersection ranks for a filtration of length {}",
            sub.meets.len(),
            filt.len()
        )));
    }
    let mut prev_meet = 0;
    let mut prev_rank = 0;
    for (step, &meet) in filt.steps.iter().zip(&sub.meets) {
        let lo = (step.rank + sub.rank).saturating_sub(big_r);
        let hi = step.rank.min(sub.rank);
        if meet < lo || meet > hi {
            return Err(FiltError::InvalidSubobject(format!("rk(V_k ∩ V') = {meet} outside [{lo}, {hi}]")));
        }
        if meet < prev_meet || meet - prev_meet > step.rank - prev_rank {
            return Err(FiltError::InvalidSubobject("intersection ranks grow inconsistently".into()));
        }
        prev_meet = meet;
        prev_rank = step.rank;
    }
    Ok(())
}

fn validate_weights(bundle: &BundleData, pw: &ParabolicWeights) -> Result<(), FiltError> {
    let mut prev = 0;
    for s in &pw.steps {
        if !s.m.is_negative() {
            return Err(FiltError::InvalidWeights(format!("m = {} is not negative", s.m)));
        }
        if s.rank <= prev || s.rank >= bundle.rank {
            return Err(FiltError::InvalidWeights("flag ranks must increase strictly inside (0, R)".into()));
        }
        prev = s.rank;
    }
    Ok(())
}

/// `(deg V + sum_k tau_k rk V_k) / R`.
pub fn central_c(bundle: &BundleData, filt: &SectionFiltration) -> Q {
    let num = filt.steps.iter().fold(q(bundle.degree), |acc, s| acc + s.tau * qu(s.rank));
    num / qu(bundle.rank)
}

/// `(deg V' + sum_k tau_k rk(V_k ∩ V')) / rk V'`.
pub fn sub_slope(filt: &SectionFiltration, sub: &Subobject) -> Q {
    let num = filt.steps.iter().zip(&sub.meets).fold(q(sub.degree), |acc, (s, &m)| acc + s.tau * qu(m));
    num / qu(sub.rank)
}

pub fn slope_test(bundle: &BundleData, filt: &SectionFiltration, sub: &Subobject) -> Result<SlopeVerdict, FiltError> {
    validate(bundle, filt)?;
    validate_subobject(bundle, filt, sub)?;
    Ok(slope_verdict(bundle, filt, sub))
}

fn slope_verdict(bundle: &BundleData, filt: &SectionFiltration, sub: &Subobject) -> SlopeVerdict {
    match sub_slope(filt, sub).cmp(&central_c(bundle, filt)) {
        Ordering::Less => SlopeVerdict::StrictPass,
        Ordering::Equal => SlopeVerdict::Equality,
        Ordering::Greater => SlopeVerdict::Violated,
    }
}

/// `z deg V + sum_j m_j (deg V^j - R^j deg V / R)`.
pub fn deg_pair(bundle: &BundleData, pw: &ParabolicWeights) -> Result<Q, FiltError> {
    validate_weights(bundle, pw)?;
    Ok(deg_pair_unchecked(bundle, pw))
}

fn deg_pair_unchecked(bundle: &BundleData, pw: &ParabolicWeights) -> Q {
    deg_pair_core(bundle, pw.z, &pw.steps)
}

/// Eigenvalues of `chi` in increasing order, one per layer of the flag
/// (the last one on `V / V^J`).
pub fn chi_eigenvalues(bundle: &BundleData, pw: &ParabolicWeights) -> Vec<Q> {
    let big_r = qu(bundle.rank);
    let top = pw.steps.iter().fold(pw.z, |acc, s| acc - s.m * qu(s.rank) / big_r);
    let mut out = Vec::with_capacity(pw.steps.len() + 1);
    for j in 0..pw.steps.len() {
        out.push(pw.steps[j..].iter().fold(top, |acc, s| acc + s.m));
    }
    out.push(top);
    out
}

/// The same degree written through eigenvalues:
/// `lambda_top deg V + sum_k (lambda_k - lambda_{k+1}) deg V^k`.
pub fn deg_pair_eigen(bundle: &BundleData, pw: &ParabolicWeights) -> Result<Q, FiltError> {
    validate_weights(bundle, pw)?;
    let lam = chi_eigenvalues(bundle, pw);
    let n = pw.steps.len();
    let mut acc = lam[n] * q(bundle.degree);
    for k in 0..n {
        acc += (lam[k] - lam[k + 1]) * q(pw.steps[k].degree);
    }
    Ok(acc)
}

/// Weight of the section filtration along `chi`:
/// `sum_k tau_k [r_k (z - sum_j m_j R^j / R) + sum_j m_j rk(V_k ∩ V^j)]`.
/// `meets[k][j] = rk(V_k ∩ V^j)`.
pub fn weight_term(bundle: &BundleData, filt: &SectionFiltration, pw: &ParabolicWeights, meets: &[Vec<usize>]) -> Q {
    weight_core(bundle, filt, pw.z, &pw.steps, |k, j| meets[k][j])
}

fn weight_core(
    bundle: &BundleData,
    filt: &SectionFiltration,
    z: Q,
    steps: &[ParabolicStep],
    meet: impl Fn(usize, usize) -> usize,
) -> Q {
    let big_r = qu(bundle.rank);
    let shift = steps.iter().fold(z, |acc, s| acc - s.m * qu(s.rank) / big_r);
    let mut acc = Q::zero();
    for (k, step) in filt.steps.iter().enumerate() {
        let inner = steps.iter().enumerate().fold(qu(step.rank) * shift, |a, (j, s)| a + s.m * qu(meet(k, j)));
        acc += step.tau * inner;
    }
    acc
}

fn deg_pair_core(bundle: &BundleData, z: Q, steps: &[ParabolicStep]) -> Q {
    let d = q(bundle.degree);
    let big_r = qu(bundle.rank);
    steps.iter().fold(z * d, |acc, s| acc + s.m * (q(s.degree) - qu(s.rank) * d / big_r))
}

fn total_core(
    bundle: &BundleData,
    filt: &SectionFiltration,
    z: Q,
    steps: &[ParabolicStep],
    meet: impl Fn(usize, usize) -> usize,
    c: Q,
) -> Q {
    deg_pair_core(bundle, z, steps) + weight_core(bundle, filt, z, steps, meet) - z * c * qu(bundle.rank) * q(VOLUME)
}

/// `deg_pair + weight_term - z c R Vol`.
pub fn total_degree_with_c(
    bundle: &BundleData,
    filt: &SectionFiltration,
    pw: &ParabolicWeights,
    meets: &[Vec<usize>],
    c: Q,
) -> Result<Q, FiltError> {
    validate(bundle, filt)?;
    validate_weights(bundle, pw)?;
    if meets.len() != filt.len() || meets.iter().any(|row| row.len() != pw.steps.len()) {
        return Err(FiltError::InvalidWeights("intersection table has the wrong shape".into()));
    }
    Ok(total_unchecked(bundle, filt, pw, meets, c))
}

fn total_unchecked(bundle: &BundleData, filt: &SectionFiltration, pw: &ParabolicWeights, meets: &[Vec<usize>], c: Q) -> Q {
    total_core(bundle, filt, pw.z, &pw.steps, |k, j| meets[k][j], c)
}

/// Total degree at the central value `c = central_c`.
pub fn total_degree(
    bundle: &BundleData,
    filt: &SectionFiltration,
    pw: &ParabolicWeights,
    meets: &[Vec<usize>],
) -> Result<Q, FiltError> {
    total_degree_with_c(bundle, filt, pw, meets, central_c(bundle, filt))
}

/// Coefficient of `z` in the total degree, read off by evaluating
/// `total_degree_with_c` at `z = 1` and `z = 0` with no flag.
pub fn z_coefficient(bundle: &BundleData, filt: &SectionFiltration, c: Q) -> Result<Q, FiltError> {
    let meets: Vec<Vec<usize>> = vec![Vec::new(); filt.len()];
    let at = |z: Q| total_degree_with_c(bundle, filt, &ParabolicWeights { z, steps: Vec::new() }, &meets, c);
    Ok(at(q(1))? - at(q(0))?)
}

/// The unique `c` making the `z`-coefficient vanish, solved from the affine
/// dependence of `z_coefficient` on `c`.
pub fn central_from_z_coefficient(bundle: &BundleData, filt: &SectionFiltration) -> Result<Q, FiltError> {
    let a = z_coefficient(bundle, filt, q(0))?;
    let b = z_coefficient(bundle, filt, q(1))? - a;
    if b.is_zero() {
        return Err(FiltError::InvalidBundle("z-coefficient does not depend on c".into()));
    }
    Ok(-a / b)
}

/// `deg V * c - sum_k tau_k deg V_k` (the second Chern term vanishes on a
/// curve).
pub fn bogomolov_residual(bundle: &BundleData, filt: &SectionFiltration) -> Result<Q, FiltError> {
    if bundle.base_dim != 1 {
        return Err(FiltError::NonCurve(bundle.base_dim));
    }
    validate(bundle, filt)?;
    let c = central_c(bundle, filt);
    Ok(filt.steps.iter().fold(q(bundle.degree) * c, |acc, s| acc - s.tau * q(s.degree)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BogomolovScreen {
    #[serde(with = "qstr")]
    pub residual: Q,
    pub no_solution_expected: bool,
}

pub fn bogomolov_screen(bundle: &BundleData, filt: &SectionFiltration) -> Result<BogomolovScreen, FiltError> {
    let residual = bogomolov_residual(bundle, filt)?;
    Ok(BogomolovScreen { residual, no_solution_expected: residual.is_negative() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBounds {
    pub max_abs_degree: i64,
    #[serde(with = "qstr::vec")]
    pub z_grid: Vec<Q>,
    #[serde(with = "qstr::vec")]
    pub m_grid: Vec<Q>,
    /// Longest flag `V^1 ⊂ ... ⊂ V^J` evaluated on the grid.
    pub max_chain: usize,
    /// Restrict subobject degrees to `d' <= floor(r' deg V / R)`.
    pub ambient_semistable: bool,
    /// A subobject generically equal to some `V_k` gets its degree (and is
    /// exempt from the semistability cap).
    pub pin_members: bool,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            max_abs_degree: 3,
            z_grid: vec![q(-1), Q::new(1, 2), q(2)],
            m_grid: vec![q(-1), Q::new(-1, 2), q(-2), q(-3)],
            max_chain: 2,
            ambient_semistable: false,
            pin_members: false,
        }
    }
}

const MAX_RANK: usize = 6;
const MAX_DEGREE: i64 = 10;

/// Every subobject admitted by the intersection bounds and `bounds`.
pub fn enumerate_subobjects(
    bundle: &BundleData,
    filt: &SectionFiltration,
    bounds: &SearchBounds,
) -> Result<Vec<Subobject>, FiltError> {
    validate(bundle, filt)?;
    if bundle.rank > MAX_RANK || bounds.max_abs_degree > MAX_DEGREE || bounds.max_abs_degree < 0 {
        return Err(FiltError::BoundOverflow(format!(
            "rank {} (max {MAX_RANK}), degree bound {} (max {MAX_DEGREE})",
            bundle.rank, bounds.max_abs_degree
        )));
    }
    let big_r = bundle.rank;
    let mut out = Vec::new();
    for r1 in 1..big_r {
        let mut meet_sets = Vec::new();
        meets_rec(filt, r1, big_r, 0, 0, 0, &mut Vec::new(), &mut meet_sets);
        for meets in meet_sets {
            let pinned = if bounds.pin_members {
                filt.steps.iter().zip(&meets).find(|(s, &m)| m == r1 && s.rank == r1).map(|(s, _)| s.degree)
            } else {
                None
            };
            let hi = if bounds.ambient_semistable {
                (r1 as i64 * bundle.degree).div_euclid(big_r as i64).min(bounds.max_abs_degree)
            } else {
                bounds.max_abs_degree
            };
            if let Some(p) = pinned {
                if p.abs() <= bounds.max_abs_degree {
                    out.push(Subobject { rank: r1, degree: p, meets });
                }
                continue;
            }
            for d1 in -bounds.max_abs_degree..=hi {
                out.push(Subobject { rank: r1, degree: d1, meets: meets.clone() });
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn meets_rec(
    filt: &SectionFiltration,
    r1: usize,
    big_r: usize,
    k: usize,
    prev_meet: usize,
    prev_rank: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if k == filt.len() {
        out.push(cur.clone());
        return;
    }
    let rk = filt.steps[k].rank;
    let lo = (rk + r1).saturating_sub(big_r).max(prev_meet);
    let hi = rk.min(r1).min(prev_meet + (rk - prev_rank));
    for m in lo..=hi {
        cur.push(m);
        meets_rec(filt, r1, big_r, k + 1, m, rk, cur, out);
        cur.pop();
    }
}

fn nested(a: &Subobject, b: &Subobject) -> bool {
    a.rank < b.rank && a.meets.iter().zip(&b.meets).all(|(&x, &y)| x <= y && y - x <= b.rank - a.rank)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub chain: Vec<Subobject>,
    #[serde(with = "qstr")]
    pub z: Q,
    #[serde(with = "qstr::vec")]
    pub m: Vec<Q>,
    #[serde(with = "qstr")]
    pub total: Q,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    /// `[total_degree > 0 on the whole grid] <=> [every subobject passes strictly]`.
    pub holds: bool,
    pub grid_positive: bool,
    pub all_strict: bool,
    pub subobjects: usize,
    pub chains: usize,
    pub evaluations: usize,
    #[serde(with = "qstr")]
    pub central_c: Q,
    #[serde(with = "qstr")]
    pub z_coefficient: Q,
    pub destabilizing: Option<Subobject>,
    pub equality: Vec<Subobject>,
    pub counterexamples: Vec<Counterexample>,
}

/// Compare the grid side and the slope side over all admissible subobjects.
///
/// Besides the global equivalence, each single-step flag must have the sign
/// of its slope verdict at every grid point, the ray coefficient of `m` must
/// carry the same sign, and longer flags must split additively into their
/// single steps at `z = 0`.
pub fn equivalence_brute(
    bundle: &BundleData,
    filt: &SectionFiltration,
    bounds: &SearchBounds,
) -> Result<EquivalenceReport, FiltError> {
    let subs = enumerate_subobjects(bundle, filt, bounds)?;
    let c = central_c(bundle, filt);
    let z_coef = z_coefficient(bundle, filt, c)?;
    let mut counterexamples = Vec::new();
    let mut evaluations = 0;
    let mut grid_positive = true;
    let mut all_strict = true;
    let mut destabilizing = None;
    let mut equality = Vec::new();
    if !z_coef.is_zero() {
        counterexamples.push(Counterexample {
            chain: Vec::new(),
            z: q(1),
            m: Vec::new(),
            total: z_coef,
            reason: "z-coefficient does not vanish at the central value".into(),
        });
    }

    let single = |sub: &Subobject, z: Q, m: Q| {
        let steps = [ParabolicStep { rank: sub.rank, degree: sub.degree, m }];
        total_core(bundle, filt, z, &steps, |k, _| sub.meets[k], c)
    };

    for sub in &subs {
        let verdict = slope_verdict(bundle, filt, sub);
        match verdict {
            SlopeVerdict::StrictPass => {}
            SlopeVerdict::Equality => {
                all_strict = false;
                equality.push(sub.clone());
            }
            SlopeVerdict::Violated => {
                all_strict = false;
                if destabilizing.is_none() {
                    destabilizing = Some(sub.clone());
                }
            }
        }
        let want = match verdict {
            SlopeVerdict::StrictPass => Ordering::Greater,
            SlopeVerdict::Equality => Ordering::Equal,
            SlopeVerdict::Violated => Ordering::Less,
        };
        for &z in &bounds.z_grid {
            for &m in &bounds.m_grid {
                let t = single(sub, z, m);
                evaluations += 1;
                if !t.is_positive() {
                    grid_positive = false;
                }
                if t.cmp(&Q::zero()) != want {
                    counterexamples.push(Counterexample {
                        chain: vec![sub.clone()],
                        z,
                        m: vec![m],
                        total: t,
                        reason: format!("sign disagrees with slope verdict {verdict:?}"),
                    });
                }
            }
        }
        // ray coefficient of m at z = 0
        let ray = single(sub, q(0), q(-1)) - single(sub, q(0), q(0));
        evaluations += 2;
        if ray.cmp(&Q::zero()) != want {
            counterexamples.push(Counterexample {
                chain: vec![sub.clone()],
                z: q(0),
                m: vec![q(-1)],
                total: ray,
                reason: format!("ray coefficient disagrees with slope verdict {verdict:?}"),
            });
        }
    }

    let mut chains = subs.len();
    if bounds.max_chain >= 2 {
        for a in &subs {
            for b in subs.iter().filter(|b| nested(a, b)) {
                chains += 1;
                for &ma in &bounds.m_grid {
                    for &mb in &bounds.m_grid {
                        for &z in &bounds.z_grid {
                            let steps = [
                                ParabolicStep { rank: a.rank, degree: a.degree, m: ma },
                                ParabolicStep { rank: b.rank, degree: b.degree, m: mb },
                            ];
                            let t = total_core(
                                bundle,
                                filt,
                                z,
                                &steps,
                                |k, j| if j == 0 { a.meets[k] } else { b.meets[k] },
                                c,
                            );
                            evaluations += 1;
                            if !t.is_positive() {
                                grid_positive = false;
                            }
                            let split = single(a, z, ma) + single(b, q(0), mb);
                            if t != split {
                                counterexamples.push(Counterexample {
                                    chain: vec![a.clone(), b.clone()],
                                    z,
                                    m: vec![ma, mb],
                                    total: t,
                                    reason: format!("two-step flag does not split additively (expected {split})"),
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let holds = grid_positive == all_strict;
    if !holds {
        counterexamples.push(Counterexample {
            chain: Vec::new(),
            z: q(0),
            m: Vec::new(),
            total: Q::zero(),
            reason: format!("grid side {grid_positive} but slope side {all_strict}"),
        });
    }
    Ok(EquivalenceReport {
        holds: holds && counterexamples.is_empty(),
        grid_positive,
        all_strict,
        subobjects: subs.len(),
        chains,
        evaluations,
        central_c: c,
        z_coefficient: z_coef,
        destabilizing,
        equality,
        counterexamples,
    })
}

/// One instance of a batch run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub bundle: BundleData,
    pub filtration: SectionFiltration,
}

/// Every `(R, d, filtration)` with `R <= max_rank`, `|d|, |d_k| <= max_abs_degree`,
/// at most `max_steps` steps and weights from `taus`.
pub fn instance_grid(max_rank: usize, max_abs_degree: i64, max_steps: usize, taus: &[Q]) -> Vec<Instance> {
    let mut out = Vec::new();
    for big_r in 1..=max_rank {
        for d in -max_abs_degree..=max_abs_degree {
            let bundle = BundleData::new(big_r, d);
            let mut rank_sets: Vec<Vec<usize>> = vec![Vec::new()];
            for r in 1..big_r {
                let ext: Vec<Vec<usize>> = rank_sets
                    .iter()
                    .filter(|s| s.len() < max_steps)
                    .map(|s| {
                        let mut t = s.clone();
                        t.push(r);
                        t
                    })
                    .collect();
                rank_sets.extend(ext);
            }
            for ranks in rank_sets {
                let mut partial: Vec<Vec<FiltrationStep>> = vec![Vec::new()];
                for &r in &ranks {
                    let mut next = Vec::new();
                    for p in &partial {
                        for dk in -max_abs_degree..=max_abs_degree {
                            for &tau in taus {
                                let mut t = p.clone();
                                t.push(FiltrationStep { rank: r, degree: dk, tau });
                                next.push(t);
                            }
                        }
                    }
                    partial = next;
                }
                for steps in partial {
                    out.push(Instance { bundle: bundle.clone(), filtration: SectionFiltration { steps } });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchRow {
    pub rank: usize,
    pub degree: i64,
    pub filtration: String,
    #[serde(with = "qstr")]
    pub central_c: Q,
    #[serde(with = "qstr")]
    pub bogomolov: Q,
    pub stable: bool,
    pub holds: bool,
    pub counterexamples: usize,
}

/// Runs `equivalence_brute` over a batch in parallel.
pub fn run_batch(instances: &[Instance], bounds: &SearchBounds) -> Result<Vec<(BatchRow, EquivalenceReport)>, FiltError> {
    instances
        .par_iter()
        .map(|inst| {
            let rep = equivalence_brute(&inst.bundle, &inst.filtration, bounds)?;
            let row = BatchRow {
                rank: inst.bundle.rank,
                degree: inst.bundle.degree,
                filtration: inst
                    .filtration
                    .steps
                    .iter()
                    .map(|s| format!("{}:{}:{}", s.rank, s.degree, s.tau))
                    .collect::<Vec<_>>()
                    .join(";"),
                central_c: rep.central_c,
                bogomolov: bogomolov_residual(&inst.bundle, &inst.filtration)?,
                stable: rep.all_strict,
                holds: rep.holds,
                counterexamples: rep.counterexamples.len(),
            };
            Ok((row, rep))
        })
        .collect()
}

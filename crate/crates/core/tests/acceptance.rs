mod common;

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use momentmap::filtstab::{self, BatchRow, Instance, SearchBounds, Q};
use momentmap::kempfness::{
    central_level, central_operator, korbit_distance, minimize_psi, psi, psi_cocycle_check, psi_hermitian, shifted_maximal_weight,
    stability_test, FlowStatus, MinimizeOpts, StabilityVerdict, DEFAULT_QUAD_TOL,
};
use momentmap::liecore::{AlgebraElement, AnchorRep, CMat, C64};
use momentmap::targets::{ExtendedWeight, Target, TargetError, TargetPoint};
use momentmap::vortexlat::{self, LatticeState, SolveOpts, SolveOutcome, TorusLattice};
use num_traits::{Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn psi_along(t: &Target, x: &TargetPoint, s: &AlgebraElement, time: f64, tol: f64) -> f64 {
    let h = s.weight_operator().unwrap() * C64::new(time, 0.0);
    psi_hermitian(t, x, &h, tol).unwrap().value
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn gradient_identity() -> Verdict {
    let mut worst = 0.0f64;
    let mut count = 0;
    for seed in 0..24u64 {
        let mut rng = common::rng(1000 + seed);
        let t = common::target(seed as usize, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let d = 1e-4;
        let fd = (psi_along(&t, &x, &s, d, 1e-13) - psi_along(&t, &x, &s, -d, 1e-13)) / (2.0 * d);
        worst = worst.max(rel(fd, t.moment_pair(&x, &s).unwrap()));
        count += 1;
    }
    verdict(worst <= 1e-6, format!("{count} instances, worst relative error {worst:.2e} (limit 1e-6)"))
}

fn monotone_convex() -> Verdict {
    let mut worst_drop = 0.0f64;
    let mut worst_curv = f64::INFINITY;
    for seed in 0..100u64 {
        let mut rng = common::rng(2000 + seed);
        let t = common::target(seed as usize, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let path = t.flow_path(&x, &s.weight_operator().unwrap()).unwrap();
        let mut prev = path.lambda(0.0).unwrap();
        for k in 1..=100 {
            let l = path.lambda(0.05 * k as f64).unwrap();
            worst_drop = worst_drop.max(prev - l);
            prev = l;
        }
        let d = 0.1;
        for k in 0..5 {
            let t0 = -1.0 + 0.5 * k as f64;
            let second = (psi_along(&t, &x, &s, t0 + d, 1e-12) - 2.0 * psi_along(&t, &x, &s, t0, 1e-12)
                + psi_along(&t, &x, &s, t0 - d, 1e-12))
                / (d * d);
            worst_curv = worst_curv.min(second);
        }
    }
    verdict(
        worst_drop <= 1e-9 && worst_curv >= -1e-8,
        format!("100 instances, largest lambda decrease {worst_drop:.2e}, smallest second difference {worst_curv:.2e}"),
    )
}

fn psi_algebra() -> Verdict {
    let tol = DEFAULT_QUAD_TOL;
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = common::rng(3000 + seed);
        let t = common::target(seed as usize, &mut rng);
        let x = t.random_point(&mut rng);
        let g = t.anchor().random_group(&mut rng, 0.7);
        let h = t.anchor().random_group(&mut rng, 0.7);
        worst = worst.max(psi_cocycle_check(&t, &x, &g, &h, tol).unwrap());
        let k = t.anchor().random_unitary(&mut rng);
        let a = psi(&t, &x, &g, tol).unwrap().value;
        let kgk = k.mul(&g).mul(&k.inverse());
        let b = psi(&t, &t.act(&k, &x).unwrap(), &kgk, tol).unwrap().value;
        worst = worst.max((a - b).abs());
        worst = worst.max(psi(&t, &x, &k, tol).unwrap().value.abs());
    }
    verdict(worst <= 2.0 * tol, format!("100 triples, worst residual {worst:.2e} (limit {:.0e})", 2.0 * tol))
}

fn maximal_weight_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut finite = 0;
    let mut problems = Vec::new();
    let mut seed = 0u64;
    while finite < 100 {
        let mut rng = common::rng(4000 + seed);
        let t = common::target(1 + (seed as usize % 3), &mut rng);
        seed += 1;
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let closed = t.maximal_weight(&x, &s).unwrap();
        match t.numeric_maximal_weight(&x, &s, 50.0, 1e-6) {
            Ok(ExtendedWeight::Finite { value, .. }) => worst = worst.max(rel(value, closed.value())),
            Ok(ExtendedWeight::Infinite) => problems.push(format!("seed {seed}: numeric weight diverged")),
            Err(TargetError::Inconclusive { value, .. }) => worst = worst.max(rel(value, closed.value())),
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
        finite += 1;
    }

    let mut infinite = 0;
    let mut unflagged = 0;
    for seed in 0..50u64 {
        let mut rng = common::rng(4500 + seed);
        let t = common::target(0, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        if t.maximal_weight(&x, &s).unwrap().is_infinite() {
            infinite += 1;
            if !t.numeric_maximal_weight(&x, &s, 50.0, 1e-6).map(|w| w.is_infinite()).unwrap_or(false) {
                unflagged += 1;
            }
        }
    }

    let mut homog = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = common::rng(4800 + seed);
        let t = common::target(seed as usize, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let w = t.maximal_weight(&x, &s).unwrap();
        for f in [2.0, 10.0] {
            let ws = t.maximal_weight(&x, &s.scale(f)).unwrap();
            match (w, ws) {
                (ExtendedWeight::Infinite, ExtendedWeight::Infinite) => {}
                (ExtendedWeight::Finite { value: a, .. }, ExtendedWeight::Finite { value: b, .. }) => {
                    homog = homog.max(rel(b, f * a))
                }
                _ => homog = f64::INFINITY,
            }
        }
    }
    verdict(
        worst <= 1e-4 && problems.is_empty() && unflagged == 0 && infinite > 0 && homog <= 1e-12,
        format!(
            "{finite} finite instances, worst relative gap {worst:.2e}; {infinite} infinite instances, {unflagged} not flagged; \
             homogeneity deviation {homog:.1e}{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

fn kempf_ness_solve() -> Verdict {
    let opts = MinimizeOpts { tol: 1e-10, ..MinimizeOpts::default() };
    let mut worst_res = 0.0f64;
    let mut worst_dist = 0.0f64;
    let mut failures = Vec::new();
    let start = Instant::now();
    for seed in 0..10u64 {
        let mut rng = common::rng(5000 + seed);
        let t = common::torus_target(seed as usize, &mut rng);
        let c = central_level(4, 0.0);
        let x = t.random_point(&mut rng);
        let y1 = t.act(&t.anchor().random_group(&mut rng, 1.0), &x).unwrap();
        let y2 = t.act(&t.anchor().random_group(&mut rng, 1.0), &x).unwrap();
        let r1 = minimize_psi(&t, &y1, &c, &opts).unwrap();
        let r2 = minimize_psi(&t, &y2, &c, &opts).unwrap();
        if r1.status != FlowStatus::Converged || r2.status != FlowStatus::Converged {
            failures.push(format!("seed {seed}: {:?}/{:?}", r1.status, r2.status));
            continue;
        }
        worst_res = worst_res.max(r1.residual).max(r2.residual);
        worst_dist = worst_dist.max(korbit_distance(&t, &r1.point, &r2.point).unwrap());
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && worst_res < 1e-8 && worst_dist < 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "10 instances, worst |mu - c| {worst_res:.2e}, worst K-orbit distance {worst_dist:.2e}, {:.2} s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn projective_point(t: &Target, rng: &mut ChaCha8Rng, zeros: usize) -> TargetPoint {
    let m = t.ambient_dim();
    let mut v = CMat::from_fn(m, 1, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    for i in 0..zeros {
        v[(i, 0)] = C64::new(0.0, 0.0);
    }
    t.point_from_spanning(v).unwrap()
}

fn verdict_consistency() -> Verdict {
    let opts = MinimizeOpts::default();
    let mut mismatches = Vec::new();
    let mut worst_weight = f64::NEG_INFINITY;
    let (mut stable, mut unstable) = (0, 0);
    for seed in 0..50u64 {
        let mut rng = common::rng(6000 + seed);
        let m = 3 + (seed as usize % 2);
        let t = Target::projective(AnchorRep::traceless_torus(m).unwrap());
        let zeros = if seed % 2 == 0 { 0 } else { 1 + (seed as usize / 2) % (m - 1) };
        let x = projective_point(&t, &mut rng, zeros);
        let c = central_level(m, 0.0);
        let central = central_operator(&t, &c).unwrap();
        let v = stability_test(&t, &x, &c, &opts).unwrap();
        let flow = minimize_psi(&t, &x, &c, &opts).unwrap();
        let consistent = matches!(v, StabilityVerdict::Stable { .. }) == (flow.status == FlowStatus::Converged);
        if !consistent || matches!(v, StabilityVerdict::Inconclusive { .. }) {
            mismatches.push(format!("seed {seed}: {} vs {:?}", v.label(), flow.status));
        }
        match &v {
            StabilityVerdict::Stable { .. } => stable += 1,
            StabilityVerdict::Unstable { s, .. } => {
                unstable += 1;
                let h = s.weight_operator().unwrap();
                let w = shifted_maximal_weight(&t, &x, &h, &central).unwrap();
                worst_weight = worst_weight.max(if w.is_infinite() { f64::INFINITY } else { w.value() });
            }
            StabilityVerdict::Inconclusive { .. } => {}
        }
    }
    verdict(
        mismatches.is_empty() && worst_weight <= 0.0,
        format!(
            "50 instances ({stable} stable, {unstable} unstable), largest witness weight {worst_weight:.2e}{}",
            if mismatches.is_empty() { String::new() } else { format!("; {}", mismatches.join(", ")) }
        ),
    )
}

fn acceptance_taus() -> Vec<Q> {
    vec![Q::new(1, 4), Q::new(1, 3), Q::new(1, 2), Q::new(3, 4), Q::new(1, 1), Q::new(2, 1)]
}

/// Rank-4 filtrations with three steps, on a thinner set of degrees and weights.
fn three_step_instances() -> Vec<Instance> {
    let taus = [Q::new(1, 4), Q::new(2, 3)];
    let mut out = Vec::new();
    for d in -3..=3 {
        for d1 in -1..=1 {
            for d2 in -1..=1 {
                for d3 in -1..=1 {
                    for &t1 in &taus {
                        for &t2 in &taus {
                            for &t3 in &taus {
                                out.push(Instance {
                                    bundle: filtstab::BundleData::new(4, d),
                                    filtration: filtstab::SectionFiltration::new(vec![(1, d1, t1), (2, d2, t2), (3, d3, t3)]),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn filtration_equivalence(grid: &[Instance], rows: &OnceCell<Vec<BatchRow>>) -> Verdict {
    let start = Instant::now();
    let single = SearchBounds { max_chain: 1, ..SearchBounds::default() };
    let chained = SearchBounds::default();
    let chain_grid = filtstab::instance_grid(3, 3, 1, &acceptance_taus());
    let deep = three_step_instances();
    let mut counterexamples = 0;
    let mut central_misses = 0;
    let mut total = 0;
    for (k, (set, bounds)) in [(grid, &single), (&chain_grid[..], &chained), (&deep[..], &single)].into_iter().enumerate() {
        let batch = filtstab::run_batch(set, bounds).unwrap();
        for (_, rep) in &batch {
            total += 1;
            counterexamples += rep.counterexamples.len();
            if !rep.z_coefficient.is_zero() {
                central_misses += 1;
            }
        }
        if k == 0 {
            let _ = rows.set(batch.into_iter().map(|(row, _)| row).collect());
        }
        for inst in set {
            let c = filtstab::central_c(&inst.bundle, &inst.filtration);
            if filtstab::central_from_z_coefficient(&inst.bundle, &inst.filtration).unwrap() != c {
                central_misses += 1;
            }
        }
    }
    verdict(
        counterexamples == 0 && central_misses == 0,
        format!(
            "{total} instance runs (R <= 4, |deg| <= 3, tau in {{1/4, 1/3, 1/2, 3/4, 1, 2}}), {counterexamples} counterexamples, \
             {central_misses} z-coefficient mismatches, {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn bogomolov(grid: &[Instance], rows: &OnceCell<Vec<BatchRow>>) -> Verdict {
    let mut stable_negative = 0;
    let mut screen_mismatch = 0;
    let mut stable = 0;
    let rows = rows.get_or_init(|| {
        let bounds = SearchBounds { max_chain: 1, ..SearchBounds::default() };
        filtstab::run_batch(grid, &bounds).unwrap().into_iter().map(|(row, _)| row).collect()
    });
    let capped = SearchBounds { max_chain: 1, ambient_semistable: true, pin_members: true, ..SearchBounds::default() };
    let capped_rows: Vec<BatchRow> = filtstab::run_batch(grid, &capped).unwrap().into_iter().map(|(row, _)| row).collect();
    for row in rows.iter().chain(&capped_rows) {
        if row.stable {
            stable += 1;
            if row.bogomolov.is_negative() {
                stable_negative += 1;
            }
        }
    }
    for inst in grid {
        let screen = filtstab::bogomolov_screen(&inst.bundle, &inst.filtration).unwrap();
        if screen.no_solution_expected != screen.residual.is_negative() {
            screen_mismatch += 1;
        }
    }

    let lat = TorusLattice::new(32, 4.0).unwrap();
    let mut vortex_bad = Vec::new();
    let mut solved = 0;
    let mut screened = 0;
    for d in 0..=2i64 {
        for c_filt in [0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
            let c = vortexlat::filt_to_lattice_c(c_filt, lat.area());
            let bound = vortexlat::mean_constraint_bound(&lat, d, c);
            match vortexlat::solve(&lat, d, c, &SolveOpts::default()) {
                SolveOutcome::Solution { state, .. } => {
                    solved += 1;
                    if vortexlat::lattice_bogomolov(&state, c) < -1e-9 || bound < -1e-9 {
                        vortex_bad.push(format!("d={d} c={c_filt}: solution with negative residual"));
                    }
                }
                SolveOutcome::NoSolution { .. } => {
                    screened += 1;
                    if bound >= 0.0 {
                        vortex_bad.push(format!("d={d} c={c_filt}: screened with residual {bound:.2e}"));
                    }
                }
                SolveOutcome::MaxIter { residuals, .. } => {
                    vortex_bad.push(format!("d={d} c={c_filt}: max_iter at {:.1e}", residuals.equation))
                }
            }
        }
    }
    verdict(
        stable_negative == 0 && screen_mismatch == 0 && vortex_bad.is_empty(),
        format!(
            "filtrations: {stable} stable verdicts over both search bounds, {stable_negative} with negative residual, {screen_mismatch} screen mismatches; \
             vortex: {solved} solved, {screened} screened{}",
            if vortex_bad.is_empty() { String::new() } else { format!("; {}", vortex_bad.join(", ")) }
        ),
    )
}

fn vortex_decomposition() -> Verdict {
    let start = Instant::now();
    let mut orders = Vec::new();
    for d in 0..=2i64 {
        let res: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let lat = TorusLattice::new(n, 4.0).unwrap();
                let s: LatticeState = vortexlat::smooth_state(&lat, d);
                vortexlat::decomposition_check(&lat, &s.conn, &s.section, 1.0).unwrap()
            })
            .collect();
        for w in res.windows(2) {
            orders.push((w[0] / w[1]).log2());
        }
    }
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut worst_eq = 0.0f64;
    let mut worst_drift = 0.0f64;
    let mut failures = Vec::new();
    let mut slowest = Duration::ZERO;
    for (n, d, c) in [(32, 1, 1.0), (64, 1, 1.0), (48, 2, 1.5)] {
        let lat = TorusLattice::new(n, 4.0).unwrap();
        let t0 = Instant::now();
        match vortexlat::solve(&lat, d, c, &SolveOpts::default()) {
            SolveOutcome::Solution { residuals, trace, .. } => {
                worst_eq = worst_eq.max(residuals.equation).max(residuals.dbar);
                worst_drift = worst_drift.max(residuals.charge_drift);
                for row in &trace {
                    worst_drift = worst_drift.max((row.charge - 2.0 * PI * d as f64).abs());
                }
            }
            other => failures.push(format!("N={n} d={d}: {}", other.label())),
        }
        slowest = slowest.max(t0.elapsed());
    }
    verdict(
        min_order >= 1.8 && failures.is_empty() && worst_eq < 1e-6 && worst_drift <= 1e-12 && slowest < Duration::from_secs(300),
        format!(
            "smallest observed order {min_order:.3}, worst equation residual {worst_eq:.2e}, charge drift {worst_drift:.1e}, \
             slowest solve {:.2} s, total {:.1} s{}",
            slowest.as_secs_f64(),
            start.elapsed().as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn equivariance() -> Verdict {
    let mut moment = 0.0f64;
    let mut weight = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = common::rng(10_000 + seed);
        let t = common::target(seed as usize, &mut rng);
        let x = t.random_point(&mut rng);
        let k = t.anchor().random_unitary(&mut rng);
        let kx = t.act(&k, &x).unwrap();
        let mu = t.moment_element(&x).unwrap();
        moment = moment.max((t.moment_element(&kx).unwrap().mat() - mu.adjoint(&k).mat()).norm());
        let s = common::generator(&t, &mut rng, 1.0);
        match (t.maximal_weight(&x, &s).unwrap(), t.maximal_weight(&kx, &s.adjoint(&k)).unwrap()) {
            (ExtendedWeight::Infinite, ExtendedWeight::Infinite) => {}
            (ExtendedWeight::Finite { value: a, .. }, ExtendedWeight::Finite { value: b, .. }) => weight = weight.max(rel(a, b)),
            _ => weight = f64::INFINITY,
        }
    }
    let mut gauge = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = common::rng(11_000 + seed);
        let lat = TorusLattice::new(16, 4.0).unwrap();
        let d = (seed % 3) as i64;
        let mut s = vortexlat::smooth_state(&lat, d);
        for v in s.conn.ax.iter_mut().chain(s.conn.ay.iter_mut()) {
            *v += rng.gen_range(-0.5..0.5);
        }
        let alpha: Vec<f64> = (0..lat.sites()).map(|_| rng.gen_range(-PI..PI)).collect();
        let (conn, phi) = vortexlat::gauge_transform(&lat, &s.conn, &s.section, &alpha);
        let a = vortexlat::ymh(&lat, &s.conn, &s.section, 1.0).unwrap().total;
        let b = vortexlat::ymh(&lat, &conn, &phi, 1.0).unwrap().total;
        gauge = gauge.max((a - b).abs());
    }
    verdict(
        moment <= 1e-10 && weight <= 1e-10 && gauge <= 1e-10,
        format!("moment {moment:.1e}, maximal weight {weight:.1e}, ymh gauge {gauge:.1e} (limit 1e-10)"),
    )
}

fn main() {
    let grid = filtstab::instance_grid(4, 3, 2, &acceptance_taus());
    let rows = OnceCell::new();
    let criteria: Vec<Criterion> = vec![
        ("gradient identity", Box::new(gradient_identity)),
        ("monotonicity and convexity", Box::new(monotone_convex)),
        ("psi algebra", Box::new(psi_algebra)),
        ("maximal weight oracle", Box::new(maximal_weight_oracle)),
        ("Kempf-Ness solve and uniqueness", Box::new(kempf_ness_solve)),
        ("verdict consistency", Box::new(verdict_consistency)),
        ("filtration equivalence", Box::new(|| filtration_equivalence(&grid, &rows))),
        ("Bogomolov", Box::new(|| bogomolov(&grid, &rows))),
        ("vortex decomposition", Box::new(vortex_decomposition)),
        ("equivariance", Box::new(equivariance)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} [{}] {name}: {} ({:.1} s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria pass", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

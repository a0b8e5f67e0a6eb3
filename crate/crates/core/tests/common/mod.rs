#![allow(dead_code)]

use momentmap::liecore::{AlgebraElement, AnchorRep};
use momentmap::targets::{Target, TargetKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One target of each kind under the full unitary group, indexed `0..4`.
pub fn target(kind: usize, rng: &mut ChaCha8Rng) -> Target {
    match kind % 4 {
        0 => Target::linear(AnchorRep::standard(3).unwrap()),
        1 => Target::projective(AnchorRep::standard(3).unwrap()),
        2 => Target::grassmann(AnchorRep::standard(4).unwrap(), 2, rng.gen_range(0.5..2.0)).unwrap(),
        _ => Target::flag(
            AnchorRep::standard(4).unwrap(),
            vec![1, 3],
            vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)],
        )
        .unwrap(),
    }
}

pub fn kind_name(t: &Target) -> &'static str {
    match t.kind() {
        TargetKind::Linear => "linear",
        TargetKind::Projective { .. } => "projective",
        TargetKind::Grassmann { .. } => "grassmann",
        TargetKind::Flag { .. } => "flag",
    }
}

pub fn generator(t: &Target, rng: &mut ChaCha8Rng, scale: f64) -> AlgebraElement {
    AlgebraElement::from_weight_operator(&t.anchor().random_hermitian(rng, scale)).unwrap()
}

pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        failure_persistence: None,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed),
        ..Default::default()
    }
}

/// Grassmann or flag targets under the traceless maximal torus, where
/// generic points are stable for `c = 0`.
pub fn torus_target(kind: usize, rng: &mut ChaCha8Rng) -> Target {
    let anchor = AnchorRep::traceless_torus(4).unwrap();
    match kind % 3 {
        0 => Target::grassmann(anchor, 2, rng.gen_range(0.5..2.0)).unwrap(),
        1 => Target::flag(anchor, vec![1, 3], vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]).unwrap(),
        _ => Target::flag(anchor, vec![1, 2], vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]).unwrap(),
    }
}

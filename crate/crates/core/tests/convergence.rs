mod common;

use common::{newton_iterates, rel_diff, Plain};
use flens::data::{partition, synth_logistic};
use flens::fedsim::{AlgorithmConfig, StepRule, StepSize};
use flens::{
    Algorithm, Objective, ObjectiveKind, PartitionKind, PartitionScheme, Simulator, SketchKind,
};
use proptest::prelude::*;

fn desk(
    objective: Objective,
) -> (
    flens::Dataset,
    Vec<flens::ClientDataset>,
    flens::OracleSolution,
) {
    let data = synth_logistic(2000, 64, 1, 0.05).unwrap();
    let clients = partition(
        &data,
        10,
        PartitionScheme {
            kind: PartitionKind::UniformRandom,
            seed: 1,
        },
    )
    .unwrap();
    let oracle = objective.newton_oracle(&data, 1e-10, 100).unwrap();
    (data, clients, oracle)
}

#[test]
fn fednewton_reaches_tight_gap_within_ten_rounds() {
    let obj = Objective::logistic(1e-3).unwrap();
    let (_, clients, oracle) = desk(obj);
    let sim = Simulator::new(obj, &clients, 0).unwrap();
    let m = sim
        .trajectory(
            &AlgorithmConfig::new(Algorithm::FedNewton, 64).with_rounds(10),
            &oracle,
        )
        .unwrap()
        .metrics;
    let first = m.iter().position(|r| r.gap <= 1e-10);
    assert!(first.is_some_and(|r| r <= 10), "{first:?}");
}

#[test]
fn fedns_with_k32_reaches_1e6_within_forty_rounds() {
    let obj = Objective::logistic(1e-3).unwrap();
    let (_, clients, oracle) = desk(obj);
    let sim = Simulator::new(obj, &clients, 4).unwrap();
    let cfg = AlgorithmConfig::new(Algorithm::FedNs, 64)
        .with_sketch(SketchKind::Srht, 32)
        .with_rounds(40);
    let m = sim.trajectory(&cfg, &oracle).unwrap().metrics;
    assert!(
        m.iter().any(|r| r.gap <= 1e-6),
        "final gap {:e}",
        m.last().unwrap().gap
    );
}

#[test]
fn fedgd_contracts_at_the_quadratic_rate() {
    let obj = Objective::ridge(1e-2).unwrap();
    let (_, clients, oracle) = desk(obj);
    let sim = Simulator::new(obj, &clients, 0).unwrap();
    let c = sim.constants();
    let bound = 1.0 - c.gamma / c.l1;
    let m = sim
        .trajectory(
            &AlgorithmConfig::new(Algorithm::FedGd, 64).with_rounds(25),
            &oracle,
        )
        .unwrap()
        .metrics;
    for w in m.windows(2) {
        if w[0].gap > 1e-12 {
            assert!(
                w[1].gap <= bound * w[0].gap * (1.0 + 1e-9),
                "round {}: {} > {bound} x {}",
                w[1].round,
                w[1].gap,
                w[0].gap
            );
        }
    }
}

#[test]
fn armijo_flens_is_monotone_on_the_desk_instance() {
    let obj = Objective::logistic(1e-3).unwrap();
    let (_, clients, oracle) = desk(obj);
    let sim = Simulator::new(obj, &clients, 1).unwrap();
    let mut cfg = AlgorithmConfig::new(Algorithm::Flens, 64)
        .with_sketch(SketchKind::Srht, 16)
        .with_rounds(30);
    cfg.step_rule = StepRule::Armijo;
    let m = sim.trajectory(&cfg, &oracle).unwrap().metrics;
    assert!(m.windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(m.last().unwrap().gap < m[0].gap);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fednewton_is_centralized_newton_for_any_partition(m in 1usize..12, seed in any::<u64>(), ridge in any::<bool>()) {
        let data = synth_logistic(120, 6, 8, 0.1).unwrap();
        let (obj, kind) = if ridge {
            (Objective::ridge(1e-2).unwrap(), ObjectiveKind::RidgeLs)
        } else {
            (Objective::logistic(1e-2).unwrap(), ObjectiveKind::Logistic)
        };
        let reference = newton_iterates(&Plain::from(&data), kind, obj.reg(), 6, 6);
        let oracle = obj.newton_oracle(&data, 1e-10, 100).unwrap();
        let clients = partition(&data, m, PartitionScheme { kind: PartitionKind::UniformRandom, seed }).unwrap();
        let sim = Simulator::new(obj, &clients, seed).unwrap();
        let cfg = AlgorithmConfig::new(Algorithm::FedNewton, 6).with_step(StepSize::Fixed(1.0), StepRule::Fixed).with_rounds(6);
        let t = sim.trajectory(&cfg, &oracle).unwrap();
        for (w, r) in t.iterates.iter().zip(&reference) {
            prop_assert!(rel_diff(w.as_slice(), r) <= 1e-12);
        }
    }
}

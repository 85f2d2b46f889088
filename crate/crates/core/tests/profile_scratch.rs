use std::time::Instant;

use cdhmm_core::synthgen::{generate_dataset, standard_scenario};
use cdhmm_core::tracking::{DeliveryType, SquadCountMode};
use cdhmm_core::training::{em_fit, EmConfig, TrainingSet};

#[test]
fn profile_em_phases() {
    let spec =
        standard_scenario("SYN", DeliveryType::Inswing, 10, 75, 100, 42, 0.75, 0.25).unwrap();
    let t0 = Instant::now();
    let gen = generate_dataset(&spec).unwrap();
    println!("synthgen: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let set =
        TrainingSet::from_dataset(&gen.dataset, "SYN", DeliveryType::Inswing, SquadCountMode::Permissive)
            .unwrap();
    println!("training set: {:?}", t0.elapsed());

    let base = EmConfig::default();

    let cfg0 = EmConfig { iterations: 0, ..base.clone() };
    let t0 = Instant::now();
    em_fit(&set, &cfg0, 0).unwrap();
    println!("iterations=0 (init + trace eval): {:?}", t0.elapsed());

    let cfg1 = EmConfig { iterations: 2, ..base.clone() };
    let t0 = Instant::now();
    em_fit(&set, &cfg1, 0).unwrap();
    println!("iterations=2, opt=100: {:?}", t0.elapsed());

    let cfg2 = EmConfig { iterations: 2, optimizer_max_iters: 1, ..base.clone() };
    let t0 = Instant::now();
    em_fit(&set, &cfg2, 0).unwrap();
    println!("iterations=2, opt=1: {:?}", t0.elapsed());
}

mod random_mdp {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/random_mdp.rs"));
}

mod offline_dataset {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/offline_dataset.rs"));
}

mod divergences {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/divergences.rs"));
}

mod optidice {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/optidice.rs"));
}

mod semidice_violation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/semidice_violation.rs"));
}

mod semi_gradient_family {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/semi_gradient_family.rs"));
}

mod state_extraction {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/state_extraction.rs"));
}

mod off_policy_evaluation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/off_policy_evaluation.rs"));
}

mod constrained_rl {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/constrained_rl.rs"));
}

mod benchmark_sweep {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/benchmark_sweep.rs"));
}

#[test]
fn random_mdp_example_runs() {
    random_mdp::run_example().expect("random_mdp example");
}

#[test]
fn offline_dataset_example_runs() {
    offline_dataset::run_example().expect("offline_dataset example");
}

#[test]
fn divergences_example_runs() {
    divergences::run_example().expect("divergences example");
}

#[test]
fn optidice_example_runs() {
    optidice::run_example().expect("optidice example");
}

#[test]
fn semidice_violation_example_runs() {
    semidice_violation::run_example().expect("semidice_violation example");
}

#[test]
fn semi_gradient_family_example_runs() {
    semi_gradient_family::run_example().expect("semi_gradient_family example");
}

#[test]
fn state_extraction_example_runs() {
    state_extraction::run_example().expect("state_extraction example");
}

#[test]
fn off_policy_evaluation_example_runs() {
    off_policy_evaluation::run_example().expect("off_policy_evaluation example");
}

#[test]
fn constrained_rl_example_runs() {
    constrained_rl::run_example().expect("constrained_rl example");
}

#[test]
fn benchmark_sweep_example_runs() {
    benchmark_sweep::run_example().expect("benchmark_sweep example");
}

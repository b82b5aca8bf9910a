// Each example is compiled in here as a module and run at a small size.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }
    };
}

example!(gradient_check);
example!(mixture_sampling);
example!(label_store);
example!(energy_distance);
example!(optimal_discriminator);
example!(reminding);
example!(two_task_run);
example!(compare_methods);
example!(message_trace);
example!(scenario_file);

#[test]
fn gradient_check_is_tight() {
    assert!(gradient_check::run_example().unwrap() < 1e-6);
}

#[test]
fn small_examples_run() {
    mixture_sampling::run_example().unwrap();
    label_store::run_example().unwrap();
    energy_distance::run_example(10).unwrap();
    scenario_file::run_example().unwrap();
    message_trace::run_example().unwrap();
}

#[test]
fn short_training_moves_toward_target() {
    assert!(optimal_discriminator::run_example(1000).unwrap() < 0.05);
    assert!(reminding::run_example(500).unwrap() < 0.1);
}

#[test]
fn scenario_examples_run() {
    two_task_run::run_example(0.01).unwrap();
    let mut out = Vec::new();
    let n = compare_methods::run_example(0.005, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), n + 1);
}

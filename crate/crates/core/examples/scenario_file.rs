// Writing a scenario in the text format and reading it back.
//
// `cargo run --release --example scenario_file`

use tdgan::cli::{parse_scenario, serialize_scenario};

const TEXT: &str = "\
[scenario]
name = toy
vocab_size = 2
data_dim = 1
seed = 5
lambda = 2.0

[label 0]
component = 1.0; mu = -1.0; var = 0.5

[label 1]
component = 0.5; mu = 1.0; var = 0.2
component = 0.5; mu = 2.0; var = 0.2

[task 1]
iterations = 500
center = ward_a; n = 300; labels = 0:300

[task 2]
iterations = 500
lambda = 5.0
center = ward_b; n = 200; labels = 0:50,1:150
";

pub fn run_example() -> tdgan::Result<()> {
    let s = parse_scenario(TEXT)?;
    for (t, task) in s.tasks.iter().enumerate() {
        let centers: Vec<String> = task.centers.iter().map(|c| format!("{} ({} samples)", c.id(), c.size())).collect();
        println!("task {}: {} iterations, {}", t + 1, task.iterations, centers.join(", "));
    }
    let round_trip = parse_scenario(&serialize_scenario(&s))?;
    println!("round trip preserves the scenario: {}", serialize_scenario(&round_trip) == serialize_scenario(&s));

    match parse_scenario(&TEXT.replace("component = 1.0", "component = 0.9")) {
        Err(e) => println!("bad weights rejected: {e}"),
        Ok(_) => println!("bad weights accepted?"),
    }
    Ok(())
}

fn main() -> tdgan::Result<()> {
    run_example()
}

// What crosses the wire. The generator only ever receives label batches and
// feedback gradients; fakes only travel outward.
//
// `cargo run --release --example message_trace`

use std::collections::BTreeMap;
use std::path::Path;

use tdgan::cli::load_scenario;
use tdgan::federation::{run_scenario, transport_gap, Direction, RunKeys, RunOptions};

pub fn run_example() -> tdgan::Result<()> {
    let s = load_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_task_multicenter.scn"))?;
    // A handful of iterations is enough to see the pattern.
    let scale = 3.0 / s.tasks[0].iterations as f64;
    let run = run_scenario(&s, RunOptions::new(1).with_iters_scale(scale).with_trace())?;
    for report in &run.reports {
        let mut tally: BTreeMap<(String, String), usize> = BTreeMap::new();
        for e in &report.trace {
            let dir = match e.direction {
                Direction::ToCenter => format!("generator -> {}", e.center_id),
                Direction::ToGenerator => format!("{} -> generator", e.center_id),
            };
            *tally.entry((dir, format!("{:?}", e.kind))).or_default() += 1;
        }
        println!("task {} (alpha {:.2}):", report.task, report.alpha);
        for ((dir, kind), n) in tally {
            println!("  {dir:<24} {kind:<10} x{n}");
        }
    }
    let gap = transport_gap(&s, RunKeys::new(1), 20)?;
    println!("feedback-assembled vs direct generator gradient: max gap {gap:.1e}");
    Ok(())
}

fn main() -> tdgan::Result<()> {
    run_example()
}

// Two hospitals, two tasks, disjoint labels: the distilled generator keeps
// task-1 labels while plain fine-tuning forgets them.
//
// `cargo run --release --example two_task_run [iters_scale]`

use std::collections::BTreeSet;
use std::path::Path;

use tdgan::cli::load_scenario;
use tdgan::data::LabelId;
use tdgan::eval::{forgetting, null_threshold, run_method, Method, N_EVAL};

pub fn run_example(iters_scale: f64) -> tdgan::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_task_disjoint.scn");
    let s = load_scenario(&path)?;
    let old: BTreeSet<LabelId> = s.tasks[0].label_counts().keys().copied().collect();
    let eps = null_threshold(&s.truth, &old, N_EVAL, 50, 0)?;
    let shown: Vec<String> = old.iter().map(ToString::to_string).collect();
    println!("null level for task-1 labels {{{}}}: {eps:.2e}", shown.join(","));

    for method in [Method::Tdgan, Method::Finetune] {
        let rows = run_method(&s, method, 1, iters_scale)?;
        for (y, d) in forgetting(&rows, 1, 2).into_iter().filter(|(y, _)| old.contains(y)) {
            let after = rows.iter().find(|r| r.task == 2 && r.label == y).map_or(f64::NAN, |r| r.value);
            println!("{method:>8} label {y}: distance after task 2 {after:.2e} ({:.1}x null), change {d:+.2e}", after / eps);
        }
    }
    Ok(())
}

fn main() -> tdgan::Result<()> {
    let scale = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    run_example(scale)
}

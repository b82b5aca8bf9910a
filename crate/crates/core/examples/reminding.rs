// Training only on the reminding loss copies a frozen generator.
//
// `cargo run --release --example reminding [steps]`

use tdgan::eval::{generator_pair, verify_reminding_convergence, RemindingConfig};

pub fn run_example(steps: usize) -> tdgan::Result<f64> {
    let (frozen, fresh) = generator_pair(0, 2, 3, 1, &[8])?;
    let cfg = RemindingConfig { steps, ..Default::default() };
    let report = verify_reminding_convergence(&frozen, fresh, &cfg)?;
    let blocks = report.held_out_window_means(steps.div_ceil(10).max(1));
    let shown: Vec<String> = blocks.iter().map(|v| format!("{v:.1e}")).collect();
    println!("held-out loss {:.2e} -> {:.2e}", report.initial_loss, report.final_loss);
    println!("block means: {}", shown.join(" "));
    Ok(report.final_loss)
}

fn main() -> tdgan::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    run_example(steps).map(|_| ())
}

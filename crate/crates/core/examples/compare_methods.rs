// All four methods on the multi-center scenario, written as CSV to stdout.
//
// `cargo run --release --example compare_methods [iters_scale] > rows.csv`

use std::io::Write;
use std::path::Path;

use tdgan::cli::{collect_rows, load_scenario, to_csv};
use tdgan::eval::Method;

pub fn run_example(iters_scale: f64, out: &mut dyn Write) -> tdgan::Result<usize> {
    let s = load_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_task_multicenter.scn"))?;
    let rows = collect_rows(&s, &Method::ALL, &[1, 2], iters_scale, None)?;
    out.write_all(&to_csv(&rows)?)?;
    Ok(rows.len())
}

fn main() -> tdgan::Result<()> {
    let scale = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let n = run_example(scale, &mut std::io::stdout().lock())?;
    eprintln!("{n} rows");
    Ok(())
}
